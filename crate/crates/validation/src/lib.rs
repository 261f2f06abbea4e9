//! Independent oracles and reporting for the acceptance suite.

use std::collections::HashSet;

use nalgebra::DMatrix;

/// Result of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: usize,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(id: usize, passed: bool, detail: impl Into<String>) -> Self {
        Self { id, passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("criterion {}: {verdict} {}", self.id, self.detail)
    }
}

/// True when every cyclic window of `order` bits occurs exactly once.
pub fn cyclic_windows_unique(bits: &[u8], order: usize) -> bool {
    let n = bits.len();
    if n != 1 << order {
        return false;
    }
    let seen: HashSet<Vec<u8>> = (0..n).map(|i| (0..order).map(|k| bits[(i + k) % n]).collect()).collect();
    seen.len() == n
}

/// Sliding-window coding matrix: row `m`, column `j` is the transmission of
/// bit `p + m + j`.
pub fn sliding_window_matrix(bits: &[u8], p: usize, rows: usize, cols: usize, t_one: f64, t_zero: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|m| (0..cols).map(|j| if bits[p + m + j] == 1 { t_one } else { t_zero }).collect())
        .collect()
}

/// Ratio of the largest to the smallest eigenvalue of `AᵀA`.
pub fn gram_condition(a: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len(), a[0].len());
    let mat = DMatrix::from_fn(m, n, |i, j| a[i][j]);
    let eig = (mat.transpose() * &mat).symmetric_eigenvalues();
    eig.max() / eig.min()
}

fn residual_sq(a: &[Vec<f64>], d: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(d)
        .map(|(row, &di)| {
            let r = di - row.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
            r * r
        })
        .sum()
}

/// Brute-force minimizer of `||A x - d||²` over the grid `{0, h, 2h, ...,
/// count·h}^N`.
///
/// The leading `N - 1` coordinates are enumerated; for each, the last
/// coordinate is a convex 1-D quadratic whose best grid value is one of the
/// two grid points around its clamped continuous minimizer.
pub fn grid_nnls(a: &[Vec<f64>], d: &[f64], h: f64, count: usize) -> Vec<f64> {
    let n = a[0].len();
    let last: Vec<f64> = a.iter().map(|row| row[n - 1]).collect();
    let last_sq: f64 = last.iter().map(|v| v * v).sum();
    let mut idx = vec![0usize; n - 1];
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut x = vec![0.0; n];
    loop {
        for (xi, &k) in x.iter_mut().zip(&idx) {
            *xi = k as f64 * h;
        }
        // Residual without the last coordinate.
        let r: Vec<f64> = a
            .iter()
            .zip(d)
            .map(|(row, &di)| di - row[..n - 1].iter().zip(&x).map(|(u, v)| u * v).sum::<f64>())
            .collect();
        let t = if last_sq > 0.0 { last.iter().zip(&r).map(|(u, v)| u * v).sum::<f64>() / last_sq } else { 0.0 };
        let k = (t / h).clamp(0.0, count as f64);
        for kk in [k.floor(), k.ceil()] {
            x[n - 1] = kk * h;
            let v = residual_sq(a, d, &x);
            if v < best.0 {
                best = (v, x.clone());
            }
        }
        // Odometer over the leading coordinates.
        let mut i = 0;
        loop {
            if i == n - 1 {
                return best.1;
            }
            idx[i] += 1;
            if idx[i] <= count {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Halving budget for an interval of width `range` and tolerance `tol`.
pub fn halving_budget(range: f64, tol: f64) -> usize {
    (range / tol).log2().ceil() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_window_is_detected() {
        assert!(cyclic_windows_unique(&[0, 0, 1, 1], 2));
        assert!(!cyclic_windows_unique(&[0, 1, 0, 1], 2));
        assert!(!cyclic_windows_unique(&[0, 0, 1], 2));
    }

    #[test]
    fn sliding_window_rows_shift_by_one_bit() {
        let a = sliding_window_matrix(&[1, 0, 0, 1, 1], 1, 3, 2, 0.0, 1.0);
        assert_eq!(a, vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn grid_oracle_finds_interior_and_clamped_minima() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let x = grid_nnls(&a, &[0.3, -1.0], 0.01, 100);
        assert!((x[0] - 0.3).abs() < 1e-12 && x[1] == 0.0);
        let x = grid_nnls(&[vec![2.0]], &[1.0], 0.1, 10);
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_gram_is_perfectly_conditioned() {
        assert!((gram_condition(&[vec![1.0, 0.0], vec![0.0, 1.0]]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_counts_one_spare_halving() {
        assert_eq!(halving_budget(8.0, 1.0), 4);
        assert_eq!(halving_budget(10.0, 1.0), 5);
    }
}
