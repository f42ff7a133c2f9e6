//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Second-smallest eigenvalue (algebraic connectivity for a Laplacian).
pub fn second_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).get(1).copied().unwrap_or(0.0)
}

/// Symmetric part ½(A + Aᵀ).
pub fn symm(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Solves `L x = r` for a connected-graph Laplacian with `r ⊥ 𝟙`, returning
/// the solution in `𝟙⊥`.
pub fn solve_laplacian(l: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let n = l.nrows();
    let shifted = l + DMatrix::from_element(n, n, 1.0 / n as f64);
    shifted.lu().solve(r)
}

/// Projection onto `𝟙⊥`: `x - mean(x)·𝟙`.
pub fn project_mean_zero(x: &DVector<f64>) -> DVector<f64> {
    let mean = x.mean();
    x.map(|v| v - mean)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
