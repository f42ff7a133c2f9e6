//! Optimal dispatch and the synchronous equilibrium it induces.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use serde::Serialize;

use crate::dynamics::{potential_gradient, potential_hessian};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, project_mean_zero, solve_laplacian};
use crate::network::{ControllerSetup, PowerNetwork};

/// Residual target for the Newton solve.
pub const RESIDUAL_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 60;
const HOMOTOPY_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub delta_bar: DVector<f64>,
    pub u_star: DVector<f64>,
    /// Security margin: `Bᵀδ̄` lies strictly inside `[ρ − π/2, π/2 − ρ]^m`.
    pub rho: f64,
    /// `𝟙ᵀQ⁻¹𝟙`.
    pub mu: f64,
    /// `‖−BΓsin(Bᵀδ̄) + u* − P‖`.
    pub residual: f64,
}

/// JSON export of an [`Equilibrium`].
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub delta_bar: Vec<f64>,
    pub u_star: Vec<f64>,
    pub rho: f64,
    pub mu: f64,
    pub residual: f64,
    pub edge_angles: Vec<f64>,
}

impl Equilibrium {
    pub fn report(&self, net: &PowerNetwork) -> EquilibriumReport {
        EquilibriumReport {
            delta_bar: self.delta_bar.iter().copied().collect(),
            u_star: self.u_star.iter().copied().collect(),
            rho: self.rho,
            mu: self.mu,
            residual: self.residual,
            edge_angles: net.edge_angles(&self.delta_bar).iter().copied().collect(),
        }
    }
}

/// `u* = Q⁻¹𝟙(𝟙ᵀP)/(𝟙ᵀQ⁻¹𝟙)`: each unit produces in inverse proportion to its
/// marginal cost.
pub fn optimal_dispatch(ctrl: &ControllerSetup, load: &DVector<f64>) -> DVector<f64> {
    let total = load.sum();
    let mu = ctrl.mu();
    ctrl.cost.map(|q| total / (q * mu))
}

/// Security margin: half the smallest distance of an edge angle from ±π/2.
pub fn security_margin(net: &PowerNetwork, delta_bar: &DVector<f64>) -> Result<f64> {
    let eta = net.edge_angles(delta_bar);
    let mut worst = f64::INFINITY;
    for (edge, &a) in eta.iter().enumerate() {
        if a.abs() >= FRAC_PI_2 {
            return Err(Error::OnBoundary { edge, angle: a.abs() });
        }
        worst = worst.min(FRAC_PI_2 - a.abs());
    }
    if eta.is_empty() {
        worst = FRAC_PI_2;
    }
    Ok(worst / 2.0)
}

fn residual(net: &PowerNetwork, target: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
    target - potential_gradient(net, delta)
}

/// Damped Newton iteration on `r(δ) = −∇U(δ) + target` over `𝟙⊥`, keeping
/// every iterate inside `|Bᵀδ| < π/2`.
fn newton(net: &PowerNetwork, target: &DVector<f64>, start: &DVector<f64>) -> Option<DVector<f64>> {
    let inside = |d: &DVector<f64>| max_abs(&net.edge_angles(d)) < FRAC_PI_2;
    let mut delta = project_mean_zero(start);
    if !inside(&delta) {
        return None;
    }
    let mut r = residual(net, target, &delta);
    for _ in 0..MAX_NEWTON_ITERS {
        let rn = r.norm();
        if rn <= RESIDUAL_TOL {
            return Some(delta);
        }
        let step = solve_laplacian(&potential_hessian(net, &delta), &r)?;
        let mut scale = 1.0;
        loop {
            let trial = project_mean_zero(&(&delta + &step * scale));
            if inside(&trial) {
                let rt = residual(net, target, &trial);
                if rt.norm() < rn || scale < 1e-6 {
                    delta = trial;
                    r = rt;
                    break;
                }
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return None;
            }
        }
    }
    (r.norm() <= RESIDUAL_TOL).then_some(delta)
}

/// Newton solve from a given initial angle vector.
pub fn solve_equilibrium_from(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    start: &DVector<f64>,
) -> Result<Equilibrium> {
    let u_star = optimal_dispatch(ctrl, &net.load);
    let target = &u_star - &net.load;
    let delta = newton(net, &target, start)
        .ok_or_else(|| Error::Infeasible("Newton iteration did not converge".into()))?;
    finish(net, ctrl, delta, u_star, &target)
}

/// Solves for `δ̄` with `∇U(δ̄) = u* − P`, starting from `δ = 0` and falling
/// back to a load-ramp homotopy.
pub fn solve_equilibrium(net: &PowerNetwork, ctrl: &ControllerSetup) -> Result<Equilibrium> {
    if net.n() != ctrl.n() {
        return Err(Error::Dimension("network and controller sizes differ".into()));
    }
    let u_star = optimal_dispatch(ctrl, &net.load);
    let target = &u_star - &net.load;
    let zero = DVector::zeros(net.n());
    let delta = match newton(net, &target, &zero) {
        Some(d) => d,
        None => {
            let mut d = zero;
            for k in 1..=HOMOTOPY_STEPS {
                let s = k as f64 / HOMOTOPY_STEPS as f64;
                d = newton(net, &(&target * s), &d)
                    .ok_or_else(|| Error::Infeasible(format!("homotopy failed at load scale {s:.1}")))?;
            }
            d
        }
    };
    finish(net, ctrl, delta, u_star, &target)
}

fn finish(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    delta_bar: DVector<f64>,
    u_star: DVector<f64>,
    target: &DVector<f64>,
) -> Result<Equilibrium> {
    let rho = security_margin(net, &delta_bar).map_err(|e| Error::Infeasible(e.to_string()))?;
    let residual = residual(net, target, &delta_bar).norm();
    Ok(Equilibrium { delta_bar, u_star, rho, mu: ctrl.mu(), residual })
}
