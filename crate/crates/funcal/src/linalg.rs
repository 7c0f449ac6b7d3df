//! Dense symmetric eigendecomposition and truncated least-squares solves.
//!
//! The calibration systems in this crate are symmetric positive semidefinite
//! and small (a few hundred rows), so a cyclic Jacobi iteration is accurate
//! and fast enough. For a symmetric matrix the singular values are the
//! absolute eigenvalues, which makes the eigendecomposition double as an SVD
//! for minimum-norm least-squares solves.

use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix, sorted by descending `|value|`.
///
/// Column `k` of `vectors` is the unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub(crate) struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The caller is responsible for symmetry; only the upper triangle drives the
/// rotations but both triangles are kept in sync.
pub(crate) fn sym_eigen(a: &Array2<f64>) -> SymEigen {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen requires a square matrix");
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);

    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro > 0.0 {
        // Quadratic convergence: the off-diagonal mass reaches round-off in a
        // handful of sweeps.
        let target = f64::EPSILON * fro;
        for _sweep in 0..60 {
            let mut off2 = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off2 += 2.0 * m[[p, q]] * m[[p, q]];
                }
            }
            if off2.sqrt() <= target {
                break;
            }
            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let apq = m[[p, q]];
                    let scale = m[[p, p]].abs().max(m[[q, q]].abs());
                    if apq.abs() <= 0.5 * f64::EPSILON * scale + f64::MIN_POSITIVE {
                        m[[p, q]] = 0.0;
                        m[[q, p]] = 0.0;
                        continue;
                    }
                    let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;
                    m[[p, p]] -= h;
                    m[[q, q]] += h;
                    m[[p, q]] = 0.0;
                    m[[q, p]] = 0.0;
                    for r in 0..n {
                        if r != p && r != q {
                            let arp = m[[r, p]];
                            let arq = m[[r, q]];
                            m[[r, p]] = arp - s * (arq + tau * arp);
                            m[[p, r]] = m[[r, p]];
                            m[[r, q]] = arq + s * (arp - tau * arq);
                            m[[q, r]] = m[[r, q]];
                        }
                    }
                    for r in 0..n {
                        let vrp = v[[r, p]];
                        let vrq = v[[r, q]];
                        v[[r, p]] = vrp - s * (vrq + tau * vrp);
                        v[[r, q]] = vrq + s * (vrp - tau * vrq);
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    order.sort_by(|&i, &j| diag[j].abs().partial_cmp(&diag[i].abs()).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    SymEigen { values, vectors }
}

/// Result of a truncated minimum-norm least-squares solve.
#[derive(Debug, Clone)]
pub(crate) struct MinNormSolve {
    pub x: Array1<f64>,
    /// Euclidean norm of `A x - b`.
    pub residual_norm: f64,
    /// Number of singular values above the truncation cutoff.
    pub effective_rank: usize,
}

/// Minimum-norm least-squares solution of `A x = b` for symmetric `A`.
///
/// Singular values at or below `rcond * sigma_max` are truncated. A zero
/// matrix yields `x = 0` with effective rank 0 rather than an error.
pub(crate) fn solve_sym_min_norm(a: &Array2<f64>, b: &Array1<f64>, rcond: f64) -> MinNormSolve {
    let n = a.nrows();
    assert_eq!(b.len(), n, "right-hand side length must match the matrix");
    let eig = sym_eigen(a);
    let sigma_max = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut x = Array1::zeros(n);
    let mut effective_rank = 0;
    if sigma_max > 0.0 {
        let cutoff = rcond * sigma_max;
        for k in 0..n {
            let lam = eig.values[k];
            if lam.abs() > cutoff {
                let vk = eig.vectors.column(k);
                let coef = vk.dot(b) / lam;
                x.scaled_add(coef, &vk);
                effective_rank += 1;
            }
        }
    }
    let resid = a.dot(&x) - b;
    let residual_norm = resid.dot(&resid).sqrt();
    MinNormSolve {
        x,
        residual_norm,
        effective_rank,
    }
}

/// Reciprocal condition number `|lambda|_min / |lambda|_max` of a symmetric
/// matrix, with 0 for a zero matrix.
pub(crate) fn rcond_sym(eig: &SymEigen) -> f64 {
    let max = eig.values.first().map(|v| v.abs()).unwrap_or(0.0);
    let min = eig.values.last().map(|v| v.abs()).unwrap_or(0.0);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}
