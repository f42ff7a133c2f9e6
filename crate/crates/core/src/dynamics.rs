//! Closed-loop swing dynamics under DAI control and their fixed-step integration.
//!
//! The load buses carry an algebraic constraint with positive diagonal damping,
//! so their frequencies are eliminated in closed form and the integrated state
//! is `(δ, ω_G, ξ)` only.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dos::DosSchedule;
use crate::error::{Error, Result};
use crate::linalg::project_mean_zero;
use crate::network::{ControllerSetup, PowerNetwork};

/// Default integration step, seconds.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Projected angles, `𝟙ᵀδ = 0`.
    pub delta: DVector<f64>,
    pub omega_g: DVector<f64>,
    pub xi: DVector<f64>,
    pub t: f64,
}

impl SystemState {
    pub fn new(delta: DVector<f64>, omega_g: DVector<f64>, xi: DVector<f64>, t: f64) -> Self {
        Self { delta, omega_g, xi, t }
    }

    /// `δ = 0, ω = 0, ξ = 0`: the synchronous steady state of the unloaded network.
    pub fn rest(net: &PowerNetwork) -> Self {
        Self::new(DVector::zeros(net.n()), DVector::zeros(net.n_g()), DVector::zeros(net.n()), 0.0)
    }

    fn to_flat(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.delta.len() * 2 + self.omega_g.len());
        let (n, ng) = (self.delta.len(), self.omega_g.len());
        x.rows_mut(0, n).copy_from(&self.delta);
        x.rows_mut(n, ng).copy_from(&self.omega_g);
        x.rows_mut(n + ng, n).copy_from(&self.xi);
        x
    }

    fn from_flat(x: &DVector<f64>, n: usize, ng: usize, t: f64) -> Self {
        Self::new(x.rows(0, n).into_owned(), x.rows(n, ng).into_owned(), x.rows(n + ng, n).into_owned(), t)
    }
}

/// Time derivatives of the integrated state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub delta: DVector<f64>,
    pub omega_g: DVector<f64>,
    pub xi: DVector<f64>,
}

/// `U(δ) = −𝟙ᵀΓcos(Bᵀδ)`.
pub fn potential(net: &PowerNetwork, delta: &DVector<f64>) -> f64 {
    let eta = net.edge_angles(delta);
    -net.gamma.iter().zip(eta.iter()).map(|(g, e)| g * e.cos()).sum::<f64>()
}

/// `∇U(δ) = BΓsin(Bᵀδ)`.
pub fn potential_gradient(net: &PowerNetwork, delta: &DVector<f64>) -> DVector<f64> {
    let eta = net.edge_angles(delta);
    let flows = eta.zip_map(&net.gamma, |e, g| g * e.sin());
    &net.incidence * flows
}

/// `∇²U(δ) = BΓ[cos(Bᵀδ)]Bᵀ`.
pub fn potential_hessian(net: &PowerNetwork, delta: &DVector<f64>) -> DMatrix<f64> {
    let eta = net.edge_angles(delta);
    hessian_from_cosines(net, &eta.map(f64::cos))
}

/// `BΓ[c]Bᵀ` for an arbitrary vector of edge cosines `c`.
pub fn hessian_from_cosines(net: &PowerNetwork, cosines: &DVector<f64>) -> DMatrix<f64> {
    let w = cosines.component_mul(&net.gamma);
    crate::network::weighted_laplacian(&net.incidence, &w).expect("dimensions consistent")
}

/// `ω_L = D_L⁻¹(−∇U(δ)_L + ξ_L − P_L)`.
pub fn load_frequency(net: &PowerNetwork, delta: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let grad = potential_gradient(net, delta);
    load_frequency_from_gradient(net, &grad, xi)
}

fn load_frequency_from_gradient(net: &PowerNetwork, grad: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let (ng, nl) = (net.n_g(), net.n_l());
    DVector::from_fn(nl, |k, _| {
        let i = ng + k;
        (-grad[i] + xi[i] - net.load[i]) / net.damping[i]
    })
}

/// Full frequency vector `(ω_G, ω_L)`.
pub fn full_frequency(net: &PowerNetwork, state: &SystemState) -> DVector<f64> {
    let omega_l = load_frequency(net, &state.delta, &state.xi);
    stack(&state.omega_g, &omega_l)
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Closed-loop vector field. With `comm_on = false` the consensus term
/// `L_ξQξ` is dropped.
pub fn vector_field(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    state: &SystemState,
    comm_on: bool,
) -> StateDerivative {
    let dx = flat_field(net, ctrl, &state.to_flat(), comm_on);
    let s = SystemState::from_flat(&dx, net.n(), net.n_g(), state.t);
    StateDerivative { delta: s.delta, omega_g: s.omega_g, xi: s.xi }
}

fn flat_field(net: &PowerNetwork, ctrl: &ControllerSetup, x: &DVector<f64>, comm_on: bool) -> DVector<f64> {
    let (n, ng) = (net.n(), net.n_g());
    let delta = x.rows(0, n).into_owned();
    let omega_g = x.rows(n, ng);
    let xi = x.rows(n + ng, n).into_owned();

    let grad = potential_gradient(net, &delta);
    let omega_l = load_frequency_from_gradient(net, &grad, &xi);

    let mut dx = DVector::zeros(x.len());
    let mut omega = DVector::zeros(n);
    omega.rows_mut(0, ng).copy_from(&omega_g);
    omega.rows_mut(ng, n - ng).copy_from(&omega_l);

    dx.rows_mut(0, n).copy_from(&project_mean_zero(&omega));
    for i in 0..ng {
        dx[n + i] = (-net.damping[i] * omega[i] - grad[i] + xi[i] - net.load[i]) / net.inertia[i];
    }
    let mut dxi = -omega.component_div(&ctrl.cost);
    if comm_on {
        dxi -= &ctrl.comm_laplacian * xi.component_mul(&ctrl.cost);
    }
    dx.rows_mut(n + ng, n).copy_from(&dxi);
    dx
}

/// Per-sample Lyapunov value and full-state error norm, recorded by
/// [`simulate`] when supplied.
pub trait SampleObserver {
    /// Returns `(W, ‖z‖)` for a state and its load-bus frequencies.
    fn observe(&self, state: &SystemState, omega_l: &DVector<f64>) -> (f64, f64);
}

/// Uniformly sampled trajectory, stored column-flat per signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    n_g: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    delta: Vec<f64>,
    omega: Vec<f64>,
    xi: Vec<f64>,
    /// Lyapunov value per sample when an observer was attached.
    pub w: Option<Vec<f64>>,
    pub z_norm: Option<Vec<f64>>,
    /// Mode of the step leaving each sample (true = communication down).
    pub dos_active: Vec<bool>,
}

impl Trajectory {
    fn with_capacity(n: usize, n_g: usize, dt: f64, cap: usize, observed: bool) -> Self {
        Self {
            n,
            n_g,
            dt,
            t: Vec::with_capacity(cap),
            delta: Vec::with_capacity(cap * n),
            omega: Vec::with_capacity(cap * n),
            xi: Vec::with_capacity(cap * n),
            w: observed.then(|| Vec::with_capacity(cap)),
            z_norm: observed.then(|| Vec::with_capacity(cap)),
            dos_active: Vec::with_capacity(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self, k: usize) -> &[f64] {
        &self.delta[k * self.n..(k + 1) * self.n]
    }

    /// Full frequency vector `(ω_G, ω_L)` at sample `k`.
    pub fn omega(&self, k: usize) -> &[f64] {
        &self.omega[k * self.n..(k + 1) * self.n]
    }

    pub fn xi(&self, k: usize) -> &[f64] {
        &self.xi[k * self.n..(k + 1) * self.n]
    }

    pub fn state(&self, k: usize) -> SystemState {
        SystemState::new(
            DVector::from_column_slice(self.delta(k)),
            DVector::from_column_slice(&self.omega(k)[..self.n_g]),
            DVector::from_column_slice(self.xi(k)),
            self.t[k],
        )
    }

    pub fn last_state(&self) -> SystemState {
        self.state(self.len() - 1)
    }

    fn push(&mut self, state: &SystemState, omega_l: &DVector<f64>, observer: Option<&dyn SampleObserver>) {
        self.t.push(state.t);
        self.delta.extend(state.delta.iter());
        self.omega.extend(state.omega_g.iter().chain(omega_l.iter()));
        self.xi.extend(state.xi.iter());
        if let Some(obs) = observer {
            let (w, z) = obs.observe(state, omega_l);
            self.w.as_mut().expect("observed").push(w);
            self.z_norm.as_mut().expect("observed").push(z);
        }
    }

    /// Writes the CSV time series, emitting every `stride`-th sample (and the last).
    pub fn write_csv<W: Write>(&self, mut out: W, stride: usize) -> Result<()> {
        let n = self.n;
        let mut header = vec!["t".to_string()];
        for name in ["delta", "omega", "xi"] {
            header.extend((1..=n).map(|i| format!("{name}_{i}")));
        }
        header.extend(["W", "z_norm", "dos_active"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let stride = stride.max(1);
        let last = self.len().saturating_sub(1);
        for k in (0..self.len()).filter(|&k| k % stride == 0 || k == last) {
            let mut line = fmt12(self.t[k]);
            for v in self.delta(k).iter().chain(self.omega(k)).chain(self.xi(k)) {
                line.push(',');
                line.push_str(&fmt12(*v));
            }
            for sig in [&self.w, &self.z_norm] {
                line.push(',');
                line.push_str(&sig.as_ref().map_or("nan".into(), |s| fmt12(s[k])));
            }
            line.push_str(if self.dos_active[k] { ",1" } else { ",0" });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Twelve significant digits.
pub fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Classical RK4 over `[x0.t, x0.t + t_end]` with step `dt`.
///
/// The communication mode is fixed per step from the schedule evaluated at the
/// step midpoint, so outage boundaries snap to the nearest step edge. `δ` is
/// re-projected onto `𝟙⊥` after every step. The run stops with
/// [`Error::SecurityExit`] if any edge angle leaves `(−π/2, π/2)`.
pub fn simulate(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    x0: &SystemState,
    schedule: &DosSchedule,
    dt: f64,
    t_end: f64,
    observer: Option<&dyn SampleObserver>,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_end >= 0 (got {dt}, {t_end})")));
    }
    if x0.delta.len() != net.n() || x0.xi.len() != net.n() || x0.omega_g.len() != net.n_g() {
        return Err(Error::Dimension("initial state does not match network".into()));
    }
    let (n, ng) = (net.n(), net.n_g());
    let steps = (t_end / dt).round() as usize;
    let mut traj = Trajectory::with_capacity(n, ng, dt, steps + 1, observer.is_some());

    let t0 = x0.t;
    let mut x = x0.to_flat();
    let mut delta0 = x.rows(0, n).into_owned();
    delta0 = project_mean_zero(&delta0);
    x.rows_mut(0, n).copy_from(&delta0);

    let mode = |k: usize| schedule.is_active(t0 + (k as f64 + 0.5) * dt);
    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        let state = SystemState::from_flat(&x, n, ng, t);
        let omega_l = load_frequency(net, &state.delta, &state.xi);
        traj.push(&state, &omega_l, observer);
        let dos = mode(k);
        traj.dos_active.push(dos);
        if k == steps {
            break;
        }
        let comm_on = !dos;
        let k1 = flat_field(net, ctrl, &x, comm_on);
        let k2 = flat_field(net, ctrl, &(&x + &k1 * (0.5 * dt)), comm_on);
        let k3 = flat_field(net, ctrl, &(&x + &k2 * (0.5 * dt)), comm_on);
        let k4 = flat_field(net, ctrl, &(&x + &k3 * dt), comm_on);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let delta = project_mean_zero(&x.rows(0, n).into_owned());
        x.rows_mut(0, n).copy_from(&delta);

        let eta = net.edge_angles(&delta);
        if let Some((edge, &angle)) = eta.iter().enumerate().find(|(_, a)| a.abs() >= FRAC_PI_2) {
            return Err(Error::SecurityExit { t: t + dt, edge, angle });
        }
    }
    Ok(traj)
}
