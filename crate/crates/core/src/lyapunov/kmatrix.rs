//! The dissipation matrix `K(δ)` with `Ẇ = −yᵀK(δ)y`, and its uniform
//! lower bound over the security region.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{controller_transform, ControllerTransform, Epsilons};
use crate::dynamics::{hessian_from_cosines, potential_hessian};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symm};
use crate::network::{ControllerSetup, PowerNetwork};

/// Edge count up to which the cosine box is enumerated vertex by vertex.
pub const MAX_EXACT_EDGES: usize = 20;
/// Latin-hypercube sample count beyond [`MAX_EXACT_EDGES`].
pub const LHS_SAMPLES: usize = 10_000;
const LHS_SEED: u64 = 0x5eed;

/// `K(δ)` for the given δ. Block order: `∇U`-difference (n), ω (n), ξ̃₁ (n−1), ξ̃₂ (1).
pub fn k_matrix(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eps: Epsilons,
    delta: &DVector<f64>,
    comm_on: bool,
) -> DMatrix<f64> {
    let tr = controller_transform(ctrl);
    assemble(net, ctrl, &tr, eps, &potential_hessian(net, delta), comm_on)
}

/// `K` with `∇²U` replaced by `BΓ[c]Bᵀ` for an arbitrary cosine vector `c`.
pub fn k_matrix_from_cosines(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    transform: &ControllerTransform,
    eps: Epsilons,
    cosines: &DVector<f64>,
    comm_on: bool,
) -> DMatrix<f64> {
    assemble(net, ctrl, transform, eps, &hessian_from_cosines(net, cosines), comm_on)
}

fn assemble(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    tr: &ControllerTransform,
    eps: Epsilons,
    hessian: &DMatrix<f64>,
    comm_on: bool,
) -> DMatrix<f64> {
    let n = net.n();
    let ng = net.n_g();
    let Epsilons { eps1, eps2 } = eps;
    let mu = tr.mu;
    let q = DMatrix::from_diagonal(&ctrl.cost);
    let q_sqrt = DMatrix::from_diagonal(&ctrl.cost.map(f64::sqrt));
    let q_inv_sqrt_one = ctrl.cost.map(|v| 1.0 / v.sqrt());
    let q_inv_one = ctrl.cost.map(|v| 1.0 / v);
    let d = DMatrix::from_diagonal(&net.damping);
    let mut m_diag = DVector::zeros(n);
    m_diag.rows_mut(0, ng).copy_from(&net.inertia);
    let m = DMatrix::from_diagonal(&m_diag);

    let (g0, w0, x1, x2) = (0, n, 2 * n, 3 * n - 1);
    let mut k = DMatrix::zeros(3 * n, 3 * n);

    k.view_mut((g0, g0), (n, n)).copy_from(&(&q * eps1));
    k.view_mut((g0, w0), (n, n)).copy_from(&(&q * &d * eps1));
    k.view_mut((g0, x1), (n, n - 1)).copy_from(&(&q_sqrt * &tr.v_bar * -eps1));

    // 𝟙𝟙ᵀQ⁻¹ scaled by M on the left: entry (i, j) = M_i / q_j
    let m_ones_qinv = &m_diag * q_inv_one.transpose();
    let ww = &d - &m * &q * hessian * eps1 - m_ones_qinv * (eps2 / mu);
    k.view_mut((w0, w0), (n, n)).copy_from(&ww);
    k.view_mut((w0, x2), (n, 1)).copy_from(&(&net.damping * (-eps2 / mu.sqrt())));

    if comm_on {
        let comm = tr.v_bar.transpose() * &q_sqrt * &ctrl.comm_laplacian * &q_sqrt * &tr.v_bar;
        k.view_mut((x1, x1), (n - 1, n - 1)).copy_from(&comm);
    }
    k.view_mut((x1, x2), (n - 1, 1))
        .copy_from(&(tr.v_bar.transpose() * &q_inv_sqrt_one * (eps2 / mu.sqrt())));
    k[(x2, x2)] = eps2;
    symm(&k)
}

/// Lemma-B style cross-term removal: for `M = [[a, bᵀc], [cᵀb, d]]` returns
/// `M' = blkdiag(a − bᵀb, d − cᵀc)`, which satisfies `M ⪰ M'`.
pub fn cross_term_bound(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (p, q) = (a.nrows(), d.nrows());
    if !a.is_square() || !d.is_square() || b.ncols() != p || c.ncols() != q || b.nrows() != c.nrows() {
        return Err(Error::Dimension(format!(
            "cross_term_bound: a {}x{}, b {}x{}, c {}x{}, d {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(&(a - b.transpose() * b));
    out.view_mut((p, p), (q, q)).copy_from(&(d - c.transpose() * c));
    Ok(out)
}

/// Minimum of `λ_min(K)` over the security region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaMinimum {
    pub value: f64,
    /// True when every vertex of the cosine box was evaluated.
    pub exact: bool,
    pub evaluated: usize,
}

/// Minimises `λ_min(K)` over the cosine box `[sin ρ, 1]^m`.
///
/// `K` is affine in the edge cosines and `λ_min` is concave, so the minimum is
/// attained at a vertex. Up to [`MAX_EXACT_EDGES`] edges all `2^m` vertices are
/// enumerated (in parallel); beyond that a seeded Latin-hypercube sample over
/// the box is used and the result is flagged as not exact.
pub fn min_eigenvalue_over_box(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eps: Epsilons,
    rho: f64,
    comm_on: bool,
) -> ThetaMinimum {
    let tr = controller_transform(ctrl);
    let m = net.m();
    let lo = rho.sin();
    let eval = |c: &DVector<f64>| min_eigenvalue(&k_matrix_from_cosines(net, ctrl, &tr, eps, c, comm_on));
    if m <= MAX_EXACT_EDGES {
        let count = 1usize << m;
        let value = (0..count)
            .into_par_iter()
            .map(|mask| {
                let c = DVector::from_fn(m, |k, _| if mask >> k & 1 == 1 { 1.0 } else { lo });
                eval(&c)
            })
            .reduce(|| f64::INFINITY, f64::min);
        ThetaMinimum { value, exact: true, evaluated: count }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(LHS_SEED);
        let strata: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let mut p: Vec<usize> = (0..LHS_SAMPLES).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let points: Vec<DVector<f64>> = (0..LHS_SAMPLES)
            .map(|s| {
                DVector::from_fn(m, |k, _| {
                    let u = (strata[k][s] as f64 + rng.gen::<f64>()) / LHS_SAMPLES as f64;
                    lo + (1.0 - lo) * u
                })
            })
            .collect();
        let value = points.par_iter().map(eval).reduce(|| f64::INFINITY, f64::min);
        ThetaMinimum { value, exact: false, evaluated: LHS_SAMPLES }
    }
}

/// `c₃` (comm on) or `c_DoS` (comm off, reported as `−min λ_min`).
pub fn k_lower_bound(
    net: &PowerNetwork,
    ctrl: &ControllerSetup,
    eps: Epsilons,
    rho: f64,
    comm_on: bool,
) -> Result<ThetaMinimum> {
    let mut min = min_eigenvalue_over_box(net, ctrl, eps, rho, comm_on);
    if comm_on {
        if min.value <= 0.0 {
            return Err(Error::NotPositiveDefinite(min.value));
        }
    } else {
        min.value = -min.value;
    }
    Ok(min)
}
