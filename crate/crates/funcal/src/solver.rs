//! Derivative-free spectral residual solver for smooth nonlinear systems.
//!
//! This is the DF-SANE scheme of La Cruz, Martinez, and Raydan: the step
//! direction is the residual itself scaled by a Barzilai-Borwein spectral
//! coefficient, accepted through a nonmonotone Grippo-type line search with a
//! summable forcing term. When the iteration stagnates, one damped
//! Gauss-Newton step built from a forward-difference Jacobian restores
//! progress. The systems solved here are gradients of smooth convex duals,
//! which is the setting where spectral residual methods behave best.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::linalg::solve_sym_min_norm;

#[derive(Debug, Clone)]
pub(crate) struct SpectralOptions {
    /// Convergence threshold on the residual infinity norm.
    pub tolerance: f64,
    /// Cap on outer iterations (spectral steps and fallback steps combined).
    pub max_iterations: usize,
    /// Nonmonotone window: merit may rise up to the max of this many
    /// previous values.
    pub memory: usize,
    /// Spectral coefficient magnitude is clamped to this range.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Sufficient-decrease constant of the line search.
    pub decrease: f64,
    /// Fallback triggers after this many iterations without the best
    /// residual improving.
    pub stagnation_window: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 500,
            memory: 10,
            sigma_min: 1e-10,
            sigma_max: 1e10,
            decrease: 1e-4,
            stagnation_window: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SpectralOutcome {
    /// Best iterate seen, by residual infinity norm.
    pub x: Array1<f64>,
    pub residual_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Solves `residual(x) = 0` starting from `x0`.
///
/// The residual closure may fail on out-of-range trial points; failures
/// during the line search reject the trial step, while a failure at the
/// starting point is propagated.
pub(crate) fn solve_spectral<F>(
    mut residual: F,
    x0: Array1<f64>,
    opts: &SpectralOptions,
) -> Result<SpectralOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let mut x = x0;
    let mut f = residual(&x)?;
    let mut merit = f.dot(&f);
    let merit0 = merit;

    let mut best_x = x.clone();
    let mut best_inf = inf_norm(&f);
    let mut last_marked_inf = best_inf;
    let mut since_improvement = 0usize;

    let mut history: Vec<f64> = vec![merit];
    let mut sigma = 1.0f64;
    let mut iterations = 0usize;

    while iterations < opts.max_iterations {
        if best_inf <= opts.tolerance {
            return Ok(SpectralOutcome {
                x: best_x,
                residual_inf_norm: best_inf,
                iterations,
                converged: true,
            });
        }
        iterations += 1;

        // Forcing term eta_k: summable, so occasional merit increases stay
        // bounded over the whole run.
        let k = iterations as f64;
        let eta = merit0 / ((1.0 + k) * (1.0 + k));
        let merit_bar = history.iter().cloned().fold(f64::MIN, f64::max);

        let mut accepted: Option<(Array1<f64>, Array1<f64>, f64)> = None;
        let mut alpha_plus = 1.0f64;
        let mut alpha_minus = 1.0f64;
        for _ in 0..40 {
            // Try the scaled residual direction with both signs, as DF-SANE
            // does; the merit bound allows controlled nonmonotone steps.
            let trial_plus = &x - &(sigma * alpha_plus * &f);
            if let Ok(ft) = residual(&trial_plus) {
                let mt = ft.dot(&ft);
                if mt.is_finite() && mt <= merit_bar + eta - opts.decrease * alpha_plus * alpha_plus * merit {
                    accepted = Some((trial_plus, ft, mt));
                    break;
                }
                alpha_plus = shrink(alpha_plus, merit, mt);
            } else {
                alpha_plus *= 0.25;
            }

            let trial_minus = &x + &(sigma * alpha_minus * &f);
            if let Ok(ft) = residual(&trial_minus) {
                let mt = ft.dot(&ft);
                if mt.is_finite() && mt <= merit_bar + eta - opts.decrease * alpha_minus * alpha_minus * merit {
                    accepted = Some((trial_minus, ft, mt));
                    break;
                }
                alpha_minus = shrink(alpha_minus, merit, mt);
            } else {
                alpha_minus *= 0.25;
            }

            if alpha_plus < 1e-14 && alpha_minus < 1e-14 {
                break;
            }
        }

        let stalled_line_search = accepted.is_none();
        if let Some((x_new, f_new, merit_new)) = accepted {
            let s = &x_new - &x;
            let yv = &f_new - &f;
            let sty = s.dot(&yv);
            sigma = if sty.abs() > f64::MIN_POSITIVE {
                let raw = s.dot(&s) / sty;
                raw.signum() * raw.abs().clamp(opts.sigma_min, opts.sigma_max)
            } else {
                1.0
            };
            x = x_new;
            f = f_new;
            merit = merit_new;
            history.push(merit);
            if history.len() > opts.memory {
                history.remove(0);
            }
        }

        let current_inf = inf_norm(&f);
        if current_inf < best_inf {
            best_inf = current_inf;
            best_x = x.clone();
        }
        // Only a meaningful drop resets the stagnation clock; drifting at
        // machine-noise rates must not keep the loop alive.
        if current_inf < last_marked_inf * (1.0 - 1e-6) {
            last_marked_inf = current_inf;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }

        if stalled_line_search || since_improvement > opts.stagnation_window {
            match gauss_newton_step(&mut residual, &x, &f, merit) {
                Some((x_new, f_new, merit_new)) => {
                    let significant = merit_new < merit * (1.0 - 1e-4);
                    x = x_new;
                    f = f_new;
                    merit = merit_new;
                    history.push(merit);
                    if history.len() > opts.memory {
                        history.remove(0);
                    }
                    sigma = 1.0;
                    since_improvement = 0;
                    let current_inf = inf_norm(&f);
                    if current_inf < best_inf {
                        best_inf = current_inf;
                        best_x = x.clone();
                    }
                    last_marked_inf = current_inf.min(last_marked_inf);
                    // Spectral steps stagnant and the rescue gains under
                    // 1e-4 relative: at that rate the whole remaining
                    // iteration budget moves the merit by a few percent,
                    // which never turns a miss into convergence. Stop at
                    // the floor.
                    if !significant {
                        break;
                    }
                }
                // No descent in the Gauss-Newton direction either: the best
                // iterate is as good as this path gets.
                None => break,
            }
        }
    }

    let converged = best_inf <= opts.tolerance;
    Ok(SpectralOutcome {
        x: best_x,
        residual_inf_norm: best_inf,
        iterations,
        converged,
    })
}

/// Safeguarded quadratic backtracking: the new step length stays within
/// `[0.1 a, 0.5 a]`.
fn shrink(alpha: f64, merit: f64, merit_trial: f64) -> f64 {
    let denom = merit_trial + (2.0 * alpha - 1.0) * merit;
    let candidate = if denom > 0.0 {
        alpha * alpha * merit / denom
    } else {
        0.5 * alpha
    };
    candidate.clamp(0.1 * alpha, 0.5 * alpha)
}

/// One damped Gauss-Newton step from a forward-difference Jacobian; the
/// normal equations are ridge-damped so rank-deficient Jacobians, which are
/// expected here, stay harmless.
fn gauss_newton_step<F>(
    residual: &mut F,
    x: &Array1<f64>,
    f: &Array1<f64>,
    merit: f64,
) -> Option<(Array1<f64>, Array1<f64>, f64)>
where
    F: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let dim = x.len();
    let m = f.len();
    let mut jac = Array2::zeros((m, dim));
    for col in 0..dim {
        let h = 1e-7 * x[col].abs().max(1.0);
        let mut xp = x.clone();
        xp[col] += h;
        let fp = residual(&xp).ok()?;
        for row in 0..m {
            jac[[row, col]] = (fp[row] - f[row]) / h;
        }
    }
    let jtj = jac.t().dot(&jac);
    let trace: f64 = (0..dim).map(|i| jtj[[i, i]]).sum();
    let ridge = 1e-12 * (trace / dim as f64).max(1e-30);
    let mut damped = jtj;
    for i in 0..dim {
        damped[[i, i]] += ridge;
    }
    let rhs = -jac.t().dot(f);
    let step = solve_sym_min_norm(&damped, &rhs, 1e-14).x;

    let mut alpha = 1.0f64;
    for _ in 0..30 {
        let trial = x + &(alpha * &step);
        if let Ok(ft) = residual(&trial) {
            let mt = ft.dot(&ft);
            if mt.is_finite() && mt < merit {
                return Some((trial, ft, mt));
            }
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_system_is_solved() {
        // F(x) = A x - b with A symmetric positive definite.
        let a = array![[3.0, 1.0], [1.0, 2.0]];
        let b = array![5.0, 5.0];
        let opts = SpectralOptions {
            tolerance: 1e-12,
            max_iterations: 200,
            ..Default::default()
        };
        let out = solve_spectral(|x| Ok(a.dot(x) - &b), Array1::zeros(2), &opts).unwrap();
        assert!(out.converged);
        // solution of [[3,1],[1,2]] x = (5,5) is (1,2)
        assert!((out.x[0] - 1.0).abs() < 1e-9);
        assert!((out.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_nonlinear_root() {
        let opts = SpectralOptions {
            tolerance: 1e-12,
            max_iterations: 200,
            ..Default::default()
        };
        let out = solve_spectral(
            |x| Ok(array![x[0].sinh() - 1.0]),
            array![0.0],
            &opts,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0f64.asinh()).abs() < 1e-10);
    }

    #[test]
    fn zero_residual_at_start_converges_immediately() {
        let opts = SpectralOptions::default();
        let out = solve_spectral(|x| Ok(x.clone()), Array1::zeros(3), &opts).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.residual_inf_norm, 0.0);
    }

    #[test]
    fn inconsistent_system_returns_best_iterate() {
        // F(x) = (x, 1): no root exists; the solver must stop gracefully
        // with converged = false and the least-norm point it found.
        let opts = SpectralOptions {
            tolerance: 1e-10,
            max_iterations: 50,
            ..Default::default()
        };
        let out = solve_spectral(
            |x| Ok(array![x[0], 1.0]),
            array![2.0],
            &opts,
        )
        .unwrap();
        assert!(!out.converged);
        assert!(out.residual_inf_norm >= 1.0);
        assert!(out.residual_inf_norm < 1.5);
    }

    #[test]
    fn rank_deficient_consistent_system_converges() {
        // Two unknowns, effectively one equation duplicated.
        let opts = SpectralOptions {
            tolerance: 1e-10,
            max_iterations: 300,
            ..Default::default()
        };
        let out = solve_spectral(
            |x| {
                let s = x[0] + x[1] - 2.0;
                Ok(array![s, s])
            },
            array![5.0, -1.0],
            &opts,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] + out.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn failing_trial_points_are_rejected_not_fatal() {
        // Residual errors out away from the root's neighborhood; the line
        // search has to back off instead of aborting.
        let opts = SpectralOptions {
            tolerance: 1e-10,
            max_iterations: 300,
            ..Default::default()
        };
        let out = solve_spectral(
            |x| {
                if x[0].abs() > 4.0 {
                    Err(crate::error::Error::OutOfRange("trial point".into()))
                } else {
                    Ok(array![x[0].exp() - 2.0])
                }
            },
            array![0.0],
            &opts,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.0f64.ln()).abs() < 1e-9);
    }
}
