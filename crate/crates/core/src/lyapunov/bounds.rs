//! Sector bounds on the potential over the security region and the
//! resulting sandwich constants of `W`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use super::Epsilons;
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, project_mean_zero, second_eigenvalue, solve_laplacian};
use crate::network::{weighted_laplacian, ControllerSetup, PowerNetwork};

/// Bounds valid for `δ − δ̄ ⊥ 𝟙` with both edge-angle vectors in `Θ(ρ)`:
///
/// * `α₁‖δ−δ̄‖² ≤ ‖∇U(δ) − ∇U(δ̄)‖² ≤ α₂‖δ−δ̄‖²`
/// * `β₁‖δ−δ̄‖² ≤ U(δ) − U(δ̄) − ∇U(δ̄)ᵀ(δ−δ̄) ≤ β₂‖δ−δ̄‖²`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorBounds {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Any Hessian along a segment in `Θ(ρ)` is a Laplacian with weights between
/// `γ sin ρ` and `γ`, and Laplacian eigenvalues are monotone in the weights.
pub fn sector_bounds(net: &PowerNetwork, rho: f64) -> Result<SectorBounds> {
    if !(rho > 0.0 && rho < FRAC_PI_2) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, pi/2), got {rho}")));
    }
    let l_min = weighted_laplacian(&net.incidence, &(&net.gamma * rho.sin()))?;
    let l_max = weighted_laplacian(&net.incidence, &net.gamma)?;
    let lo = second_eigenvalue(&l_min);
    let hi = max_eigenvalue(&l_max);
    Ok(SectorBounds { alpha1: lo * lo, alpha2: hi * hi, beta1: 0.5 * lo, beta2: 0.5 * hi })
}

/// `γ` with `‖z‖² ≤ γ‖z_G‖²`, from `ω_L = D_L⁻¹(−(∇U(δ)−∇U(δ̄))_L + (ξ−ξ̄)_L)`.
pub fn gamma_ratio(net: &PowerNetwork, alpha2: f64) -> f64 {
    if net.n_l() == 0 {
        return 1.0;
    }
    let d_min = net.damping_l().min();
    let k = (alpha2.sqrt() + 1.0) / d_min;
    1.0 + k * k
}

/// Log-spaced Young weights tried when splitting the cross terms.
fn young_weights() -> impl Iterator<Item = f64> + Clone {
    (-48..=48).map(|k| 10f64.powf(k as f64 / 8.0))
}

/// `(c₁, c₂)` with `c₁‖z_G‖² ≤ W ≤ c₂‖z_G‖²`; `c₁` may come out nonpositive.
///
/// The cross terms are split with Young's inequality,
/// `|gᵀQMω| ≤ ½(s·α₂‖δ−δ̄‖² + (max qᵢMᵢ)²‖ω_G‖²/s)` and
/// `|𝟙ᵀe·𝟙ᵀMω|/μ ≤ (½/μ)(r·n‖e‖² + n_G·max Mᵢ²‖ω_G‖²/r)`,
/// and the weights `s`, `r` are picked from a fixed log grid, separately for
/// each constant.
pub fn w_bound_terms(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eps: Epsilons,
    sector: &SectorBounds,
    mu: f64,
) -> (f64, f64) {
    let n = net.n() as f64;
    let ng = net.n_g() as f64;
    let m_min = net.inertia.min();
    let m_max = net.inertia.max();
    let qm_max = (0..net.n_g()).map(|i| ctrl.cost[i] * net.inertia[i]).fold(0.0_f64, f64::max);
    let (q_min, q_max) = (ctrl.q_min(), ctrl.q_max());
    let Epsilons { eps1, eps2 } = eps;
    let k2 = eps2 / mu;

    let terms = |s: f64, r: f64| {
        let angle = 0.5 * eps1 * s * sector.alpha2;
        let omega = 0.5 * (eps1 * qm_max * qm_max / s + k2 * ng * m_max * m_max / r);
        let ctrl_term = 0.5 * k2 * r * n;
        let lower = (sector.beta1 - angle).min(0.5 * m_min - omega).min(0.5 * q_min - ctrl_term);
        let upper = (sector.beta2 + angle).max(0.5 * m_max + omega).max(0.5 * q_max + ctrl_term);
        (lower, upper)
    };

    let mut c1 = f64::NEG_INFINITY;
    let mut c2 = f64::INFINITY;
    for s in young_weights() {
        for r in young_weights() {
            let (lo, hi) = terms(s, r);
            c1 = c1.max(lo);
            c2 = c2.min(hi);
        }
    }
    (c1, c2)
}

/// As [`w_bound_terms`], failing when `c₁ ≤ 0`.
pub fn w_bounds(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eps: Epsilons,
    sector: &SectorBounds,
    mu: f64,
) -> Result<(f64, f64)> {
    let (c1, c2) = w_bound_terms(net, ctrl, eps, sector, mu);
    if c1 <= 0.0 {
        return Err(Error::C1Nonpositive(c1));
    }
    Ok((c1, c2))
}

/// Draws a mean-zero `δ` with every edge angle in `[ρ − π/2, π/2 − ρ]`.
///
/// Edge angles are drawn uniformly in the box and mapped back to node angles
/// by least squares; draws whose realised angles leave the box are rejected
/// (never happens on trees).
pub fn sample_delta_in_region<R: Rng + ?Sized>(net: &PowerNetwork, rho: f64, rng: &mut R) -> DVector<f64> {
    let bound = FRAC_PI_2 - rho;
    let lap = &net.incidence * net.incidence.transpose();
    loop {
        let eta = DVector::from_fn(net.m(), |_, _| rng.gen_range(-bound..=bound));
        let Some(delta) = solve_laplacian(&lap, &(&net.incidence * &eta)) else {
            continue;
        };
        let delta = project_mean_zero(&delta);
        if net.edge_angles(&delta).iter().all(|a| a.abs() <= bound) {
            return delta;
        }
    }
}
