//! Choice of the cross-term weights and assembly of the nominal and DoS
//! certificates.

use serde::Serialize;

use super::bounds::{gamma_ratio, sector_bounds, w_bound_terms};
use super::kmatrix::{k_lower_bound, min_eigenvalue_over_box};
use super::Epsilons;
use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::network::{ControllerSetup, PowerNetwork};

/// Candidate weights: `10^k` for `k = −4, −3.875, …, −0.5`.
pub fn epsilon_grid() -> impl Iterator<Item = f64> {
    (0..=28).map(|i| 10f64.powf(-4.0 + i as f64 / 8.0))
}

/// Communication budget `|Ξ(t)| ≤ κ + t/τ` the DoS envelope is built for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DosBudget {
    pub kappa: f64,
    pub tau: f64,
}

/// Envelope constants under a DoS budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DosEnvelope {
    pub kappa: f64,
    pub tau: f64,
    /// May overflow to infinity; serialised as `null` in that case.
    pub alpha_dos: f64,
    pub ln_alpha_dos: f64,
    pub beta_dos: f64,
    /// `τ > 1 + d/c`.
    pub dos_stable: bool,
}

/// Every constant of the exponential-stability certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub eps1: f64,
    pub eps2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma_ratio: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c: f64,
    pub c_dos: f64,
    pub d: f64,
    pub alpha_nom: f64,
    pub beta_nom: f64,
    pub rho: f64,
    pub mu: f64,
    /// Whether the minima over the security region were computed exactly
    /// (vertex enumeration) rather than sampled.
    pub theta_min_exact: bool,
    pub theta_min_evaluated: usize,
    #[serde(flatten)]
    pub dos: Option<DosEnvelope>,
}

impl Certificate {
    /// Envelope constants for `(κ, τ)`; `β_DoS` is returned even when ≤ 0.
    pub fn dos_envelope(&self, budget: DosBudget) -> DosEnvelope {
        let DosBudget { kappa, tau } = budget;
        let (c, d) = (self.c, self.d);
        let ln_alpha = 0.5 * (self.gamma_ratio.ln() + kappa * (c + d) + self.c2.ln() - self.c1.ln());
        DosEnvelope {
            kappa,
            tau,
            alpha_dos: ln_alpha.exp(),
            ln_alpha_dos: ln_alpha,
            beta_dos: 0.5 * (c - (c + d) / tau),
            dos_stable: tau > 1.0 + d / c,
        }
    }
}

/// Table 2b of the reference case study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaperConstants {
    pub eps1: f64,
    pub eps2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub tau: f64,
}

pub const PAPER_TABLE_2B: PaperConstants = PaperConstants {
    eps1: 0.025,
    eps2: 0.030,
    c1: 0.010,
    c2: 6.073,
    c3: 0.012,
    c: 4.120e-4,
    alpha: 173.5,
    beta: 1.291e-4,
    kappa: 10.0,
    tau: 1.5,
};

/// Nominal decay rate for a pair, or `None` if `c₁ ≤ 0` or `c₃ ≤ 0`.
fn nominal_rate(net: &PowerNetwork, ctrl: &ControllerSetup, eq: &Equilibrium, eps: Epsilons) -> Option<f64> {
    let sector = sector_bounds(net, eq.rho).ok()?;
    let (c1, c2) = w_bound_terms(net, ctrl, eps, &sector, eq.mu);
    if c1 <= 0.0 {
        return None;
    }
    let c3 = min_eigenvalue_over_box(net, ctrl, eps, eq.rho, true).value;
    (c3 > 0.0).then(|| c3 * sector.alpha1.min(1.0).min(ctrl.q_min()) / c2)
}

/// Grid search for the pair maximising the nominal rate `c`; ties go to the
/// smaller `ε₂`, then the smaller `ε₁`.
pub fn select_epsilons(net: &PowerNetwork, ctrl: &ControllerSetup, eq: &Equilibrium) -> Result<Epsilons> {
    let mut best: Option<(f64, Epsilons)> = None;
    for eps2 in epsilon_grid() {
        for eps1 in epsilon_grid() {
            let eps = Epsilons::new(eps1, eps2);
            if let Some(c) = nominal_rate(net, ctrl, eq, eps) {
                if best.is_none_or(|(b, _)| c > b) {
                    best = Some((c, eps));
                }
            }
        }
    }
    best.map(|(_, e)| e).ok_or(Error::NoFeasibleEpsilons)
}

/// Selects the weights with [`select_epsilons`] and builds the certificate.
pub fn build_certificate(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    dos: Option<DosBudget>,
) -> Result<Certificate> {
    let eps = select_epsilons(net, ctrl, eq)?;
    build_certificate_with(net, ctrl, eq, eps, dos)
}

/// Builds the certificate for fixed weights.
///
/// With `y = (∇U(δ)−∇U(δ̄), ω, ξ̃ − ξ̄̃)`, `‖ξ̃ − ξ̄̃‖² = (ξ−ξ̄)ᵀQ(ξ−ξ̄)`, so
/// `min(α₁, 1, q_min)‖z_G‖² ≤ ‖y‖² ≤ max(α₂, 1, q_max)‖z‖²`, giving
/// `c = c₃·min(α₁, 1, q_min)/c₂` and `d = c_DoS·max(α₂, 1, q_max)·γ/c₁`.
pub fn build_certificate_with(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eq: &Equilibrium,
    eps: Epsilons,
    dos: Option<DosBudget>,
) -> Result<Certificate> {
    if let Some(b) = dos {
        if !(b.kappa >= 0.0 && b.tau > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "DoS budget needs kappa >= 0 and tau > 1, got kappa={}, tau={}",
                b.kappa, b.tau
            )));
        }
    }
    let sector = sector_bounds(net, eq.rho)?;
    let gamma = gamma_ratio(net, sector.alpha2);
    let (c1, c2) = super::bounds::w_bounds(net, ctrl, eps, &sector, eq.mu)?;
    let nominal = k_lower_bound(net, ctrl, eps, eq.rho, true)?;
    let deficit = k_lower_bound(net, ctrl, eps, eq.rho, false)?;
    let c3 = nominal.value;
    let c_dos = deficit.value;
    let c = c3 * sector.alpha1.min(1.0).min(ctrl.q_min()) / c2;
    let d = c_dos * sector.alpha2.max(1.0).max(ctrl.q_max()) * gamma / c1;
    let mut cert = Certificate {
        eps1: eps.eps1,
        eps2: eps.eps2,
        alpha1: sector.alpha1,
        alpha2: sector.alpha2,
        beta1: sector.beta1,
        beta2: sector.beta2,
        gamma_ratio: gamma,
        c1,
        c2,
        c3,
        c,
        c_dos,
        d,
        alpha_nom: (gamma * c2 / c1).sqrt(),
        beta_nom: 0.5 * c,
        rho: eq.rho,
        mu: eq.mu,
        theta_min_exact: nominal.exact && deficit.exact,
        theta_min_evaluated: nominal.evaluated,
        dos: None,
    };
    cert.dos = dos.map(|b| cert.dos_envelope(b));
    Ok(cert)
}
