//! Non-negative least squares by the Lawson–Hanson active-set method,
//! run on the normal equations so that many sub-windows of one large
//! system can share a single Gram matrix.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Real;

/// Solution of a non-negative least-squares problem.
#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    /// Outer (variable addition) iterations used.
    pub iterations: usize,
}

/// Relative pivot threshold below which a column is treated as dependent
/// on the current passive set.
const PIVOT_REL_TOL: f64 = 1e-12;

/// `argmin_{x >= 0} ||A x - d||_2`.
pub fn nnls_solve<T: Real>(a: &Matrix<T>, d: &[T]) -> Result<Vec<T>> {
    if a.nrows() != d.len() {
        return Err(Error::invalid(format!(
            "matrix has {} rows but data has {} entries",
            a.nrows(),
            d.len()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::invalid("nnls needs at least as many rows as columns"));
    }
    if !a.is_finite() || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("nnls inputs must be finite"));
    }
    let g = a.gram();
    let atb = a.tr_mul_vec(d);
    nnls_gram(a.ncols(), |i, j| g[(i, j)], &atb, None).map(|s| s.x)
}

/// NNLS on the normal equations `G = AᵀA`, `b = Aᵀd`.
///
/// `gram(i, j)` must be symmetric. `init`, when given, warm-starts the
/// passive set with its positive entries.
pub fn nnls_gram<T: Real>(
    n: usize,
    gram: impl Fn(usize, usize) -> T,
    atb: &[T],
    init: Option<&[T]>,
) -> Result<NnlsSolution<T>> {
    assert_eq!(atb.len(), n);
    if n == 0 {
        return Ok(NnlsSolution { x: Vec::new(), iterations: 0 });
    }
    let scale = (0..n)
        .map(|i| gram(i, i).abs().max(atb[i].abs()))
        .fold(T::one(), T::max);
    let tol = T::epsilon() * T::lit(1e3) * scale;
    let pivot_tol = T::lit(PIVOT_REL_TOL);
    let max_outer = 3 * n + 10;

    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    if let Some(init) = init {
        assert_eq!(init.len(), n);
        for i in 0..n {
            if init[i] > T::zero() && init[i].is_finite() {
                x[i] = init[i];
                passive[i] = true;
            }
        }
        if passive.iter().any(|&p| p) {
            settle_passive(&gram, atb, &mut x, &mut passive, None, pivot_tol);
        }
    }

    let mut rejected = vec![false; n];
    let mut w = vec![T::zero(); n];
    for iteration in 0..max_outer {
        for i in 0..n {
            let gx: T = (0..n).filter(|&k| x[k] != T::zero()).map(|k| gram(i, k) * x[k]).sum();
            w[i] = atb[i] - gx;
        }
        let next = (0..n)
            .filter(|&i| !passive[i] && !rejected[i] && w[i] > tol)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(j) = next else {
            return Ok(NnlsSolution { x, iterations: iteration });
        };
        passive[j] = true;
        if settle_passive(&gram, atb, &mut x, &mut passive, Some(j), pivot_tol) {
            rejected.iter_mut().for_each(|r| *r = false);
        } else {
            passive[j] = false;
            rejected[j] = true;
        }
    }
    Err(Error::Convergence {
        iterations: max_outer,
        best: x.iter().map(|v| v.f64()).collect(),
    })
}

/// Inner Lawson–Hanson loop: solve the unconstrained problem on the passive
/// set, stepping back toward feasibility and dropping variables that hit
/// zero until the passive solution is strictly positive.
///
/// Returns `false` (leaving `x` untouched) when the freshly added variable
/// `added` is numerically dependent or would enter with a non-positive
/// value.
fn settle_passive<T: Real>(
    gram: &impl Fn(usize, usize) -> T,
    atb: &[T],
    x: &mut [T],
    passive: &mut [bool],
    added: Option<usize>,
    pivot_tol: T,
) -> bool {
    let n = x.len();
    let mut first = true;
    for _ in 0..=n {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        if idx.is_empty() {
            return true;
        }
        let Some(chol) = Cholesky::factor(idx.len(), |a, b| gram(idx[a], idx[b]), pivot_tol) else {
            if first && added.is_some() {
                return false;
            }
            // Dependent set after removals: drop the smallest passive entry.
            let k = *idx
                .iter()
                .min_by(|&&a, &&b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal))
                .expect("non-empty");
            passive[k] = false;
            x[k] = T::zero();
            continue;
        };
        let rhs: Vec<T> = idx.iter().map(|&i| atb[i]).collect();
        let z = chol.solve(&rhs);
        if first {
            if let Some(j) = added {
                let pos = idx.iter().position(|&i| i == j).expect("added is passive");
                if !(z[pos] > T::zero()) {
                    return false;
                }
            }
        }
        first = false;
        if z.iter().all(|&v| v > T::zero()) {
            for (&i, &v) in idx.iter().zip(&z) {
                x[i] = v;
            }
            return true;
        }
        let mut alpha = T::one();
        for (&i, &v) in idx.iter().zip(&z) {
            if v <= T::zero() {
                let denom = x[i] - v;
                let a = if denom > T::zero() { x[i] / denom } else { T::zero() };
                alpha = alpha.min(a);
            }
        }
        for (&i, &v) in idx.iter().zip(&z) {
            x[i] = x[i] + alpha * (v - x[i]);
            if x[i] <= T::zero() || (v <= T::zero() && x[i] <= T::epsilon() * T::lit(16.0)) {
                x[i] = T::zero();
                passive[i] = false;
            }
        }
    }
    true
}

/// Squared residual `||A x - d||²` from normal-equation quantities.
pub fn gram_residual_sq<T: Real>(
    gram: impl Fn(usize, usize) -> T,
    atb: &[T],
    dtd: T,
    x: &[T],
) -> T {
    let n = x.len();
    let mut quad = T::zero();
    let mut lin = T::zero();
    for i in 0..n {
        if x[i] == T::zero() {
            continue;
        }
        lin = lin + x[i] * atb[i];
        for j in 0..n {
            if x[j] != T::zero() {
                quad = quad + x[i] * gram(i, j) * x[j];
            }
        }
    }
    (dtd - T::lit(2.0) * lin + quad).max(T::zero())
}
