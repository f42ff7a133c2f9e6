//! Strict Lyapunov function for the DAI closed loop and the certificate built
//! on it.
//!
//! The function is
//!
//! ```text
//! W = U(δ) − U(δ̄) − ∇U(δ̄)ᵀ(δ − δ̄) + ½ωᵀMω + ½(ξ − ξ̄)ᵀQ(ξ − ξ̄)
//!     + ε₁(∇U(δ) − ∇U(δ̄))ᵀQMω − (ε₂/μ)(ξ − ξ̄)ᵀ𝟙𝟙ᵀMω
//! ```
//!
//! with `M = blkdiag(M_G, 0)` and `μ = 𝟙ᵀQ⁻¹𝟙`. The `1/μ` on the second cross
//! term makes `W` coincide with its form in the transformed controller
//! coordinates `(ξ̃₁, ξ̃₂)`, where the derivative along solutions is
//! `Ẇ = −yᵀK(δ)y` (see [`k_matrix`]).

mod bounds;
mod certificate;
mod kmatrix;

pub use bounds::{gamma_ratio, sample_delta_in_region, sector_bounds, w_bound_terms, w_bounds, SectorBounds};
pub use certificate::{
    build_certificate, build_certificate_with, epsilon_grid, select_epsilons, Certificate, DosBudget,
    DosEnvelope, PaperConstants, PAPER_TABLE_2B,
};
pub use kmatrix::{
    cross_term_bound, k_lower_bound, k_matrix, k_matrix_from_cosines, min_eigenvalue_over_box, ThetaMinimum,
    LHS_SAMPLES, MAX_EXACT_EDGES,
};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{load_frequency, potential_gradient, SampleObserver, SystemState};
use crate::equilibrium::Equilibrium;
use crate::network::{ControllerSetup, PowerNetwork};

/// `(1 − cos h)` without cancellation.
fn one_minus_cos(h: f64) -> f64 {
    let s = (0.5 * h).sin();
    2.0 * s * s
}

/// `h − sin h` without cancellation for small `h`.
fn h_minus_sin(h: f64) -> f64 {
    if h.abs() < 1e-2 {
        let h2 = h * h;
        h * h2 / 6.0 * (1.0 - h2 / 20.0 * (1.0 - h2 / 42.0))
    } else {
        h - h.sin()
    }
}

/// Bregman distance of the potential, evaluated edge by edge as
/// `γ_k[cos η̄_k (1 − cos h_k) − sin η̄_k (h_k − sin h_k)]` with `h = Bᵀ(δ − δ̄)`.
pub fn bregman_distance(net: &PowerNetwork, delta: &DVector<f64>, delta_bar: &DVector<f64>) -> f64 {
    let eta_bar = net.edge_angles(delta_bar);
    let h = net.edge_angles(&(delta - delta_bar));
    (0..net.m())
        .map(|k| {
            net.gamma[k] * (eta_bar[k].cos() * one_minus_cos(h[k]) - eta_bar[k].sin() * h_minus_sin(h[k]))
        })
        .sum()
}

/// `∇U(δ) − ∇U(δ̄)`, computed from `sin a − sin b = 2cos((a+b)/2)sin((a−b)/2)`.
pub fn gradient_difference(
    net: &PowerNetwork,
    delta: &DVector<f64>,
    delta_bar: &DVector<f64>,
) -> DVector<f64> {
    let eta = net.edge_angles(delta);
    let eta_bar = net.edge_angles(delta_bar);
    let h = net.edge_angles(&(delta - delta_bar));
    let flows = DVector::from_fn(net.m(), |k, _| {
        net.gamma[k] * 2.0 * (0.5 * (eta[k] + eta_bar[k])).cos() * (0.5 * h[k]).sin()
    });
    &net.incidence * flows
}

/// Controller coordinates `ξ = T[ξ̃₁; ξ̃₂]`, `T = Q^(−1/2)[V̄ | Q^(−1/2)𝟙/√μ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerTransform {
    /// n×(n−1), orthonormal columns orthogonal to `Q^(−1/2)𝟙`.
    pub v_bar: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub mu: f64,
}

impl ControllerTransform {
    /// `(ξ̃₁, ξ̃₂)` stacked as an n-vector.
    pub fn forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.t_inv * xi
    }

    pub fn inverse(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.t * coords
    }
}

/// Builds `V̄` by Gram–Schmidt on `[w, e₁, …, eₙ]` with `w = Q^(−1/2)𝟙/√μ`;
/// each column's first nonzero entry is made positive.
pub fn controller_transform(ctrl: &ControllerSetup) -> ControllerTransform {
    let n = ctrl.n();
    let mu = ctrl.mu();
    let w = ctrl.cost.map(|q| 1.0 / (q.sqrt() * mu.sqrt()));
    let mut basis: Vec<DVector<f64>> = vec![w.clone()];
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12).copied() {
                if first < 0.0 {
                    v = -v;
                }
            }
            basis.push(v);
        }
    }
    let v_bar = DMatrix::from_columns(&basis[1..]);
    let q_inv_sqrt = DMatrix::from_diagonal(&ctrl.cost.map(|q| 1.0 / q.sqrt()));
    let q_sqrt = DMatrix::from_diagonal(&ctrl.cost.map(f64::sqrt));
    let mut full = DMatrix::zeros(n, n);
    full.columns_mut(0, n - 1).copy_from(&v_bar);
    full.column_mut(n - 1).copy_from(&w);
    let t = &q_inv_sqrt * &full;
    let t_inv = full.transpose() * q_sqrt;
    ControllerTransform { v_bar, t, t_inv, mu }
}

/// Cross-term weights of the Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilons {
    pub eps1: f64,
    pub eps2: f64,
}

impl Epsilons {
    pub fn new(eps1: f64, eps2: f64) -> Self {
        Self { eps1, eps2 }
    }
}

/// `W` in the original coordinates.
pub fn lyapunov_value(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    eps: Epsilons,
    state: &SystemState,
) -> f64 {
    let ng = net.n_g();
    let g = gradient_difference(net, &state.delta, &eq.delta_bar);
    let e = &state.xi - &eq.u_star;
    let m_omega = state.omega_g.component_mul(&net.inertia);

    let bregman = bregman_distance(net, &state.delta, &eq.delta_bar);
    let kinetic = 0.5 * state.omega_g.dot(&m_omega);
    let control = 0.5 * e.dot(&e.component_mul(&ctrl.cost));
    let cross1: f64 = (0..ng).map(|i| g[i] * ctrl.cost[i] * m_omega[i]).sum();
    let cross2 = e.sum() * m_omega.sum() / eq.mu;
    bregman + kinetic + control + eps.eps1 * cross1 - eps.eps2 * cross2
}

/// `W` in the transformed controller coordinates.
pub fn lyapunov_value_transformed(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    transform: &ControllerTransform,
    eps: Epsilons,
    state: &SystemState,
) -> f64 {
    let n = net.n();
    let ng = net.n_g();
    let g = gradient_difference(net, &state.delta, &eq.delta_bar);
    let coords = transform.forward(&state.xi) - transform.forward(&eq.u_star);
    let m_omega = state.omega_g.component_mul(&net.inertia);

    let bregman = bregman_distance(net, &state.delta, &eq.delta_bar);
    let kinetic = 0.5 * state.omega_g.dot(&m_omega);
    let xi1 = coords.rows(0, n - 1);
    let xi2 = coords[n - 1];
    let cross1: f64 = (0..ng).map(|i| m_omega[i] * ctrl.cost[i] * g[i]).sum();
    bregman + kinetic + 0.5 * xi1.norm_squared() + 0.5 * xi2 * xi2 + eps.eps1 * cross1
        - eps.eps2 / transform.mu.sqrt() * m_omega.sum() * xi2
}

/// `y = (∇U(δ) − ∇U(δ̄), ω, ξ̃₁ − ξ̄̃₁, ξ̃₂ − ξ̄̃₂)` with the full frequency vector.
pub fn lyapunov_vector(
    net: &PowerNetwork,
    eq: &Equilibrium,
    transform: &ControllerTransform,
    state: &SystemState,
    omega_l: &DVector<f64>,
) -> DVector<f64> {
    let n = net.n();
    let ng = net.n_g();
    let mut y = DVector::zeros(3 * n);
    y.rows_mut(0, n).copy_from(&gradient_difference(net, &state.delta, &eq.delta_bar));
    y.rows_mut(n, ng).copy_from(&state.omega_g);
    y.rows_mut(n + ng, n - ng).copy_from(omega_l);
    y.rows_mut(2 * n, n).copy_from(&transform.forward(&(&state.xi - &eq.u_star)));
    y
}

/// `‖z‖` with `z = (δ − δ̄, ω, ξ − ξ̄)`.
pub fn state_error_norm(eq: &Equilibrium, state: &SystemState, omega_l: &DVector<f64>) -> f64 {
    ((&state.delta - &eq.delta_bar).norm_squared()
        + state.omega_g.norm_squared()
        + omega_l.norm_squared()
        + (&state.xi - &eq.u_star).norm_squared())
    .sqrt()
}

/// `‖z_G‖` with `z_G = (δ − δ̄, ω_G, ξ − ξ̄)`.
pub fn generator_state_error_norm(eq: &Equilibrium, state: &SystemState) -> f64 {
    ((&state.delta - &eq.delta_bar).norm_squared()
        + state.omega_g.norm_squared()
        + (&state.xi - &eq.u_star).norm_squared())
    .sqrt()
}

/// Records `W` and `‖z‖` along a simulation.
pub struct LyapunovMonitor<'a> {
    pub net: &'a PowerNetwork,
    pub ctrl: &'a ControllerSetup,
    pub eq: &'a Equilibrium,
    pub eps: Epsilons,
}

impl SampleObserver for LyapunovMonitor<'_> {
    fn observe(&self, state: &SystemState, omega_l: &DVector<f64>) -> (f64, f64) {
        (
            lyapunov_value(self.net, self.ctrl, self.eq, self.eps, state),
            state_error_norm(self.eq, state, omega_l),
        )
    }
}

/// Convenience: `ω_L` for a state.
pub fn omega_l(net: &PowerNetwork, state: &SystemState) -> DVector<f64> {
    load_frequency(net, &state.delta, &state.xi)
}

/// `∇U(δ̄)`; equals `u* − P` at a solved equilibrium.
pub fn gradient_at_equilibrium(net: &PowerNetwork, eq: &Equilibrium) -> DVector<f64> {
    potential_gradient(net, &eq.delta_bar)
}
