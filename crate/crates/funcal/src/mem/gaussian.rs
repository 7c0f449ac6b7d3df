//! Maximum-entropy calibration under a Gaussian prior.
//!
//! With a Gaussian prior on the weight process the dual objective is an
//! explicit quadratic, so the optimal dual field solves one linear system.
//! The system matrix is a sum of `J` rank-one terms and is therefore
//! singular whenever `L q > J`; the solver returns the minimum-norm
//! least-squares solution through a truncated eigendecomposition, which for
//! a symmetric positive semidefinite matrix coincides with the truncated
//! SVD pseudo-inverse.

use ndarray::{Array1, Array2};

use crate::chisq::{FunctionalWeights, MeanTarget};
use crate::error::{Error, Result};
use crate::grid::{Grids, KernelMatrix};
use crate::linalg::solve_sym_min_norm;
use crate::mem::{coupling_field, sample_aux_sum, weights_from_adjustment, AdjustmentDensity, AuxSum, LambdaField};
use crate::sampling::{FunctionalSample, SamplingDesign};

/// The linear system `M lambda = r` whose solution is the Gaussian-prior
/// dual field.
///
/// `M` is symmetric positive semidefinite with rank at most `J`. `M` and `r`
/// are scaled so that `M lambda = r` holds exactly when the weights built
/// from `lambda` satisfy the calibration constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSystem {
    m: Array2<f64>,
    r: Array1<f64>,
    num_t: usize,
    num_aux: usize,
}

impl GaussianSystem {
    /// Wraps an explicit system. `m` must be symmetric of side `num_t *
    /// num_aux`; symmetry is the caller's responsibility.
    pub fn from_parts(m: Array2<f64>, r: Array1<f64>, num_t: usize, num_aux: usize) -> Result<Self> {
        let dim = num_t * num_aux;
        if m.dim() != (dim, dim) || r.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "system for {num_t} x {num_aux} dual field needs a {dim} x {dim} matrix, got {:?} and length {}",
                m.dim(),
                r.len()
            )));
        }
        Ok(Self { m, r, num_t, num_aux })
    }

    /// System matrix, shape `(L q) x (L q)` with block index `l * q + k`.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    /// Right-hand side, length `L q`.
    pub fn rhs(&self) -> &Array1<f64> {
        &self.r
    }

    /// Number of time points `L`.
    pub fn num_t(&self) -> usize {
        self.num_t
    }

    /// Number of auxiliary coordinates `q`.
    pub fn num_aux(&self) -> usize {
        self.num_aux
    }
}

/// Solution of the Gaussian dual system with solve diagnostics.
#[derive(Debug, Clone)]
pub struct GaussianSolution {
    /// Minimum-norm least-squares dual field, shape `L x q`.
    pub lam: LambdaField,
    /// Euclidean norm of `M lambda - r`.
    pub ls_residual_norm: f64,
    /// Number of retained singular values.
    pub effective_rank: usize,
    /// Largest absolute calibration violation, `max |M lambda - r|`.
    pub constraint_max_abs: f64,
}

/// Assembles the Gaussian dual system from a sample and target:
///
/// ```text
/// M[(l,a),(l',b)] = (1/(J L)) sum_j K(s_j,t_l) K(s_j,t_l') xbar(t_l)_a xbar(t_l')_b
/// r[(l,a)]        = N mu_x(t_l)_a - sum_i d_i x_i(t_l)_a
/// ```
pub fn assemble_system(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<GaussianSystem> {
    let (n, l_points, q) = sample.x().dim();
    if q == 0 {
        return Err(Error::InvalidArgument(
            "calibration needs at least one auxiliary coordinate".into(),
        ));
    }
    if n != design.sample_size() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {n} units, design has {}",
            design.sample_size()
        )));
    }
    if target.mu_x().dim() != (l_points, q) {
        return Err(Error::DimensionMismatch(format!(
            "target means are {:?}, sample needs {l_points} x {q}",
            target.mu_x().dim()
        )));
    }
    if target.population_size() != design.population_size() {
        return Err(Error::DimensionMismatch(format!(
            "target population size {} differs from design population size {}",
            target.population_size(),
            design.population_size()
        )));
    }
    let j_points = grids.num_s();
    if km.values().dim() != (j_points, l_points) || grids.num_t() != l_points {
        return Err(Error::DimensionMismatch(format!(
            "kernel matrix is {:?}, grids are {} x {}, sample has {l_points} time points",
            km.values().dim(),
            j_points,
            grids.num_t()
        )));
    }

    let xbar = sample_aux_sum(sample);
    let dim = l_points * q;
    let mut m = Array2::zeros((dim, dim));
    let scale = 1.0 / (j_points as f64 * l_points as f64);
    // M is a sum of J rank-one terms v_j v_j^T with v_j[(l,a)] = K_jl xbar_la.
    let mut v = vec![0.0; dim];
    for j in 0..j_points {
        for l in 0..l_points {
            let kjl = km.values()[[j, l]];
            for a in 0..q {
                v[l * q + a] = kjl * xbar[[l, a]];
            }
        }
        for row in 0..dim {
            let vr = v[row] * scale;
            for col in row..dim {
                m[[row, col]] += vr * v[col];
            }
        }
    }
    for row in 0..dim {
        for col in 0..row {
            m[[row, col]] = m[[col, row]];
        }
    }

    let n_pop = target.population_size() as f64;
    let mut r = Array1::zeros(dim);
    for l in 0..l_points {
        for a in 0..q {
            let mut base = 0.0;
            for (i, &d) in design.weights().iter().enumerate() {
                base += d * sample.x()[[i, l, a]];
            }
            r[l * q + a] = n_pop * target.mu_x()[[l, a]] - base;
        }
    }

    GaussianSystem::from_parts(m, r, l_points, q)
}

/// Minimum-norm least-squares solution of the dual system.
///
/// Singular values at or below `rcond` times the largest one are truncated.
/// An all-zero system matrix is not an error: the solution is zero and the
/// diagnostics carry the full right-hand side as residual.
pub fn solve_lambda(system: &GaussianSystem, rcond: f64) -> Result<GaussianSolution> {
    if !(rcond.is_finite() && (0.0..1.0).contains(&rcond)) {
        return Err(Error::InvalidArgument(format!(
            "rcond must lie in [0, 1), got {rcond}"
        )));
    }
    let solve = solve_sym_min_norm(system.matrix(), system.rhs(), rcond);
    let resid = system.matrix().dot(&solve.x) - system.rhs();
    let constraint_max_abs = resid.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let lam = Array2::from_shape_vec((system.num_t(), system.num_aux()), solve.x.to_vec())
        .expect("solution length matches system dimensions");
    Ok(GaussianSolution {
        lam,
        ls_residual_norm: solve.residual_norm,
        effective_rank: solve.effective_rank,
        constraint_max_abs,
    })
}

/// Adjustment density of the Gaussian prior. It equals the coupling field of
/// the dual variable, `varpi(s_j) = c_j(lambda)`.
pub fn gaussian_adjustment(
    lam: &LambdaField,
    xbar: &AuxSum,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<AdjustmentDensity> {
    coupling_field(lam, xbar, km, grids)
}

/// Gaussian dual objective `H(lambda) = 1/2 lambda^T M lambda - r^T lambda`
/// (lambda flattened in block order). Its gradient is `M lambda - r`.
pub fn dual_objective(lam: &LambdaField, system: &GaussianSystem) -> Result<f64> {
    if lam.dim() != (system.num_t(), system.num_aux()) {
        return Err(Error::DimensionMismatch(format!(
            "dual field is {:?}, system expects {} x {}",
            lam.dim(),
            system.num_t(),
            system.num_aux()
        )));
    }
    let x = Array1::from_iter(lam.iter().cloned());
    Ok(0.5 * x.dot(&system.matrix().dot(&x)) - system.rhs().dot(&x))
}

/// Full Gaussian calibration pipeline: assemble, solve, and build weights.
pub fn calibrate(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
    rcond: f64,
) -> Result<(FunctionalWeights, GaussianSolution)> {
    let system = assemble_system(sample, design, target, km, grids)?;
    let solution = solve_lambda(&system, rcond)?;
    let xbar = sample_aux_sum(sample);
    let varpi = gaussian_adjustment(&solution.lam, &xbar, km, grids)?;
    let weights = weights_from_adjustment(&varpi, km, design, "mem-gauss")?;
    Ok((weights, solution))
}
