//! Maximum-entropy calibration under a centered compound-Poisson prior.
//!
//! The prior places intensity `gamma` on jumps with law `u` (uniform on
//! `[jump_min, jump_max]` here). Its dual objective is smooth and convex but
//! no longer quadratic: the optimal adjustment density is
//! `varpi(s_j) = gamma m(c_j)` where `c` is the coupling field of the dual
//! variable and `m(c) = integral xi exp(c xi) u(dxi)` is the exponentially
//! tilted jump mean. The dual stationarity condition is solved iteratively.

use ndarray::{Array1, Array2};

use crate::chisq::{FunctionalWeights, MeanTarget};
use crate::error::{Error, Result};
use crate::grid::{Grids, KernelMatrix};
use crate::mem::{coupling_field, sample_aux_sum, weights_from_adjustment, AdjustmentDensity, AuxSum, LambdaField};
use crate::quadrature::gauss_legendre;
use crate::sampling::{FunctionalSample, SamplingDesign};
use crate::solver::{solve_spectral, SpectralOptions};

/// Exponent magnitude beyond which `exp` overflows a double.
const EXP_LIMIT: f64 = 700.0;

/// Compound-Poisson prior on the weight process.
///
/// Jumps arrive with intensity `gamma` and carry a uniform law on
/// `[jump_min, jump_max]`, an interval that must straddle zero so the
/// adjustment density can move in both directions. The tilted jump moments
/// are evaluated with a Gauss-Legendre rule whose nodes are cached at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPrior {
    gamma: f64,
    jump_min: f64,
    jump_max: f64,
    quadrature_order: usize,
    /// Quadrature nodes mapped to the jump interval.
    nodes: Vec<f64>,
    /// Matching weights, scaled so that sums approximate integrals against
    /// the uniform probability law.
    weights: Vec<f64>,
}

impl PoissonPrior {
    /// Prior with uniform jump law on `[jump_min, jump_max]`.
    pub fn uniform(
        gamma: f64,
        jump_min: f64,
        jump_max: f64,
        quadrature_order: usize,
    ) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "jump intensity gamma must be positive and finite, got {gamma}"
            )));
        }
        if !(jump_min.is_finite() && jump_max.is_finite() && jump_min < 0.0 && 0.0 < jump_max) {
            return Err(Error::InvalidArgument(format!(
                "jump interval must be finite and straddle zero, got [{jump_min}, {jump_max}]"
            )));
        }
        if quadrature_order == 0 {
            return Err(Error::InvalidArgument(
                "quadrature order must be positive".into(),
            ));
        }
        let (x, w) = gauss_legendre(quadrature_order);
        // Map [-1,1] to the jump interval; the interval length cancels
        // against the uniform density, leaving weights w_k / 2.
        let nodes = x
            .iter()
            .map(|&xi| jump_min + (jump_max - jump_min) * (xi + 1.0) / 2.0)
            .collect();
        let weights = w.iter().map(|&wi| 0.5 * wi).collect();
        Ok(Self {
            gamma,
            jump_min,
            jump_max,
            quadrature_order,
            nodes,
            weights,
        })
    }

    /// Jump intensity `gamma`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Lower end of the jump interval.
    pub fn jump_min(&self) -> f64 {
        self.jump_min
    }

    /// Upper end of the jump interval.
    pub fn jump_max(&self) -> f64 {
        self.jump_max
    }

    /// Number of quadrature nodes.
    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    fn check_tilt(&self, c: f64) -> Result<()> {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("tilt argument {c}")));
        }
        let reach = self.jump_min.abs().max(self.jump_max.abs());
        if c.abs() * reach > EXP_LIMIT {
            return Err(Error::OutOfRange(format!(
                "tilt c = {c} overflows exp on jump interval [{}, {}]",
                self.jump_min, self.jump_max
            )));
        }
        Ok(())
    }

    /// Exponentially tilted jump mean `m(c) = integral xi exp(c xi) u(dxi)`.
    ///
    /// Strictly increasing in `c`; for the uniform law on `[-1, 1]` it has
    /// the closed form `(c cosh c - sinh c) / c^2`.
    pub fn xi_moment(&self, c: f64) -> Result<f64> {
        self.check_tilt(c)?;
        Ok(self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xi, &wt)| wt * xi * (c * xi).exp())
            .sum())
    }

    /// Cumulant integrand `integral (exp(c xi) - 1) u(dxi)`, the per-unit
    /// contribution of the prior to the dual objective.
    pub fn cumulant(&self, c: f64) -> Result<f64> {
        self.check_tilt(c)?;
        Ok(self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xi, &wt)| wt * ((c * xi).exp() - 1.0))
            .sum())
    }
}

/// Solver controls for the Poisson dual system.
#[derive(Debug, Clone)]
pub struct PoissonSolveOptions {
    /// Convergence threshold on the residual infinity norm.
    pub residual_tolerance: f64,
    /// Iteration cap.
    pub max_iterations: usize,
    /// Starting dual field; zero when absent.
    pub initial: Option<LambdaField>,
}

impl Default for PoissonSolveOptions {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-6,
            max_iterations: 500,
            initial: None,
        }
    }
}

/// Outcome of the Poisson dual solve.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// Best dual field found, shape `L x q`.
    pub lam: LambdaField,
    /// Infinity norm of the calibration residual at `lam`.
    pub residual_inf_norm: f64,
    /// Iterations spent.
    pub iterations: usize,
    /// Whether the tolerance was met. A false value is not an error: the
    /// caller receives the best iterate and decides.
    pub converged: bool,
}

/// Adjustment density of the Poisson prior, `varpi(s_j) = gamma m(c_j)`.
pub fn poisson_adjustment(
    lam: &LambdaField,
    prior: &PoissonPrior,
    xbar: &AuxSum,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<AdjustmentDensity> {
    let c = coupling_field(lam, xbar, km, grids)?;
    let mut varpi = Array1::zeros(c.len());
    for (j, &cj) in c.iter().enumerate() {
        varpi[j] = prior.gamma() * prior.xi_moment(cj)?;
    }
    Ok(varpi)
}

/// Shared precomputation for residual and objective evaluations.
struct PoissonContext {
    xbar: AuxSum,
    /// `N mu_x(t_l) - sum_i d_i x_i(t_l)`, shape `L x q`.
    gap: Array2<f64>,
}

impl PoissonContext {
    fn new(
        sample: &FunctionalSample,
        design: &SamplingDesign,
        target: &MeanTarget,
        km: &KernelMatrix,
        grids: &Grids,
    ) -> Result<Self> {
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
        if km.values().dim() != (grids.num_s(), grids.num_t()) || grids.num_t() != l_points {
            return Err(Error::DimensionMismatch(format!(
                "kernel matrix is {:?}, grids are {} x {}, sample has {l_points} time points",
                km.values().dim(),
                grids.num_s(),
                grids.num_t()
            )));
        }
        let xbar = sample_aux_sum(sample);
        let n_pop = target.population_size() as f64;
        let mut gap = Array2::zeros((l_points, q));
        for l in 0..l_points {
            for k in 0..q {
                let mut base = 0.0;
                for (i, &d) in design.weights().iter().enumerate() {
                    base += d * sample.x()[[i, l, k]];
                }
                gap[[l, k]] = n_pop * target.mu_x()[[l, k]] - base;
            }
        }
        Ok(Self { xbar, gap })
    }

    /// Calibration residual `R[[l,k]]` for the weights induced by `lam`:
    /// the kernel-smoothed adjustment times `xbar` minus the target gap.
    fn residual(
        &self,
        lam: &LambdaField,
        prior: &PoissonPrior,
        km: &KernelMatrix,
        grids: &Grids,
    ) -> Result<Array2<f64>> {
        let (l_points, q) = lam.dim();
        let varpi = poisson_adjustment(lam, prior, &self.xbar, km, grids)?;
        let inv_j = 1.0 / grids.num_s() as f64;
        let mut r = Array2::zeros((l_points, q));
        for l in 0..l_points {
            let smoothed: f64 = (0..grids.num_s())
                .map(|j| km.values()[[j, l]] * varpi[j])
                .sum::<f64>()
                * inv_j;
            for k in 0..q {
                r[[l, k]] = smoothed * self.xbar[[l, k]] - self.gap[[l, k]];
            }
        }
        Ok(r)
    }
}

/// Calibration-constraint violation of the weights induced by `lam`.
pub fn poisson_residual(
    lam: &LambdaField,
    prior: &PoissonPrior,
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<Array2<f64>> {
    let ctx = PoissonContext::new(sample, design, target, km, grids)?;
    if lam.dim() != ctx.gap.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dual field is {:?}, problem needs {:?}",
            lam.dim(),
            ctx.gap.dim()
        )));
    }
    ctx.residual(lam, prior, km, grids)
}

/// Poisson dual objective
/// `H(lambda) = (gamma/J) sum_j integral (exp(c_j xi) - 1) u(dxi)
///  - (1/L) sum_l gap(t_l)^T lambda(t_l)`.
///
/// Convex in `lambda`; its gradient equals the calibration residual divided
/// by `L`.
pub fn dual_objective(
    lam: &LambdaField,
    prior: &PoissonPrior,
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<f64> {
    let ctx = PoissonContext::new(sample, design, target, km, grids)?;
    if lam.dim() != ctx.gap.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dual field is {:?}, problem needs {:?}",
            lam.dim(),
            ctx.gap.dim()
        )));
    }
    let c = coupling_field(lam, &ctx.xbar, km, grids)?;
    let mut prior_term = 0.0;
    for &cj in c.iter() {
        prior_term += prior.cumulant(cj)?;
    }
    prior_term *= prior.gamma() / grids.num_s() as f64;
    let linear: f64 = ctx
        .gap
        .iter()
        .zip(lam.iter())
        .map(|(&g, &l)| g * l)
        .sum::<f64>()
        / grids.num_t() as f64;
    Ok(prior_term - linear)
}

/// Solves the Poisson dual stationarity system `R(lambda) = 0`.
///
/// Runs the spectral residual iteration from the starting point in
/// `options` (zero by default). When the target is not exactly reachable by
/// a common smoothed adjustment the residual cannot vanish; the solution
/// then carries the best iterate with `converged = false`.
pub fn solve_lambda_poisson(
    prior: &PoissonPrior,
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
    options: &PoissonSolveOptions,
) -> Result<PoissonSolution> {
    if !(options.residual_tolerance.is_finite() && options.residual_tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "residual tolerance must be positive, got {}",
            options.residual_tolerance
        )));
    }
    let ctx = PoissonContext::new(sample, design, target, km, grids)?;
    let (l_points, q) = ctx.gap.dim();
    let x0 = match &options.initial {
        Some(lam) => {
            if lam.dim() != (l_points, q) {
                return Err(Error::DimensionMismatch(format!(
                    "initial dual field is {:?}, problem needs {l_points} x {q}",
                    lam.dim()
                )));
            }
            Array1::from_iter(lam.iter().cloned())
        }
        None => Array1::zeros(l_points * q),
    };

    let spectral = SpectralOptions {
        tolerance: options.residual_tolerance,
        max_iterations: options.max_iterations,
        ..Default::default()
    };
    let outcome = solve_spectral(
        |flat| {
            let lam = Array2::from_shape_vec((l_points, q), flat.to_vec())
                .expect("flat dual field has L*q entries");
            let r = ctx.residual(&lam, prior, km, grids)?;
            Ok(Array1::from_iter(r.iter().cloned()))
        },
        x0,
        &spectral,
    )?;

    let lam = Array2::from_shape_vec((l_points, q), outcome.x.to_vec())
        .expect("solution length matches problem dimensions");
    Ok(PoissonSolution {
        lam,
        residual_inf_norm: outcome.residual_inf_norm,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Full Poisson calibration pipeline: solve the dual, then build weights
/// from the optimal adjustment density.
pub fn calibrate(
    prior: &PoissonPrior,
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    km: &KernelMatrix,
    grids: &Grids,
    options: &PoissonSolveOptions,
) -> Result<(FunctionalWeights, PoissonSolution)> {
    let solution = solve_lambda_poisson(prior, sample, design, target, km, grids, options)?;
    let xbar = sample_aux_sum(sample);
    let varpi = poisson_adjustment(&solution.lam, prior, &xbar, km, grids)?;
    let weights = weights_from_adjustment(&varpi, km, design, "mem-poisson")?;
    Ok((weights, solution))
}
