//! Active-set least squares with nonnegativity on a subset of the unknowns.
//!
//! Solves `min ||A x - b||` subject to `x_j >= 0` for every `j` flagged in
//! `nonneg`; the remaining unknowns are free in sign. This is the
//! Lawson–Hanson iteration with the free unknowns held permanently in the
//! passive set. Subproblems are solved with an SVD pseudo-inverse so
//! rank-deficient passive sets (self-stress states) are handled; each
//! subproblem step is the minimum-norm correction from the current iterate.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Relative singular-value cutoff used for rank decisions.
pub(crate) fn rank_tolerance(a: &DMatrix<f64>, sigma_max: f64) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON * sigma_max
}

/// Minimum-norm least-squares solution of `a δ = r`.
fn min_norm_solve(a: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    let tol = rank_tolerance(a, smax);
    svd.solve(r, tol)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

fn gather_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])])
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, nonneg: &[bool]) -> NnlsSolution {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "rhs length must match rows");
    assert_eq!(nonneg.len(), n, "constraint mask length must match columns");

    let mut x = DVector::zeros(n);
    let mut passive: Vec<bool> = nonneg.iter().map(|c| !c).collect();
    let scale = a.norm() * b.norm();
    let w_tol = 10.0 * (m.max(n) as f64) * f64::EPSILON * scale;
    let max_iter = 3 * n + 30;
    let mut iterations = 0;

    // Stage one: fit the free unknowns alone.
    let free: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
    if !free.is_empty() {
        let d = min_norm_solve(&gather_columns(a, &free), b);
        for (k, &j) in free.iter().enumerate() {
            x[j] = d[k];
        }
    }

    let mut blocked = vec![false; n];
    while iterations < max_iter {
        iterations += 1;
        let r = b - a * &x;
        let w = a.transpose() * &r;
        let candidate = (0..n)
            .filter(|&j| nonneg[j] && !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        if w[t] <= w_tol {
            break;
        }
        passive[t] = true;

        // Inner loop: keep the constrained passive unknowns strictly positive.
        let mut inner = 0;
        loop {
            inner += 1;
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let r = b - a * &x;
            let d = min_norm_solve(&gather_columns(a, &cols), &r);
            let mut z = x.clone();
            for (k, &j) in cols.iter().enumerate() {
                z[j] += d[k];
            }
            let bad: Vec<usize> = cols
                .iter()
                .copied()
                .filter(|&j| nonneg[j] && z[j] <= 0.0)
                .collect();
            if bad.is_empty() {
                x = z;
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            if bad == [t] && x[t] == 0.0 && inner == 1 {
                // Entering column made no positive progress (round-off); skip it.
                passive[t] = false;
                blocked[t] = true;
                break;
            }
            let alpha = bad
                .iter()
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            x += (z - &x) * alpha;
            let zero = 16.0 * f64::EPSILON * x.amax();
            for &j in &cols {
                if nonneg[j] && x[j] <= zero {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if inner > n + 5 {
                break;
            }
        }
    }

    for j in 0..n {
        if nonneg[j] && x[j] < 0.0 {
            x[j] = 0.0;
        }
    }
    let residual_norm = (b - a * &x).norm();
    NnlsSolution {
        x,
        residual_norm,
        iterations,
    }
}
