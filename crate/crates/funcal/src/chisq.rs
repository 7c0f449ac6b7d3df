//! Chi-square distance calibration of design weights.
//!
//! At every time point the design weights `d_i` are adjusted as little as
//! possible, in the weighted chi-square sense, subject to reproducing known
//! auxiliary population means. The adjusted estimator coincides with the
//! functional generalized regression estimator, which the tests exploit.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{rcond_sym, sym_eigen, SymEigen};
use crate::sampling::{Curve, FunctionalSample, SamplingDesign};

/// Pointwise design matrices below this reciprocal condition number are
/// treated as singular.
const RCOND_CUTOFF: f64 = 1e-12;

/// Per-unit, per-time positive tuning weights `q_i(t_l)`.
///
/// The constant choice `q = 1` recovers ordinary chi-square calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct QWeights {
    values: Array2<f64>,
}

impl QWeights {
    /// Wraps a matrix of strictly positive finite tuning weights.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "tuning weights must be positive and finite, got {v}"
            )));
        }
        Ok(Self { values })
    }

    /// The all-ones tuning weights for `n` units on `l` points.
    pub fn ones(n: usize, l: usize) -> Self {
        Self {
            values: Array2::ones((n, l)),
        }
    }

    /// Tuning weight matrix, shape `n x L`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Known auxiliary population means used as the calibration target.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTarget {
    mu_x: Array2<f64>,
    population_size: usize,
}

impl MeanTarget {
    /// Wraps target means of shape `L x q` for a population of `N` units.
    pub fn new(mu_x: Array2<f64>, population_size: usize) -> Result<Self> {
        if population_size == 0 {
            return Err(Error::InvalidArgument(
                "population size must be positive".into(),
            ));
        }
        if let Some(v) = mu_x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target mean value {v}")));
        }
        Ok(Self {
            mu_x,
            population_size,
        })
    }

    /// Target means, shape `L x q`.
    pub fn mu_x(&self) -> &Array2<f64> {
        &self.mu_x
    }

    /// Population size `N`.
    pub fn population_size(&self) -> usize {
        self.population_size
    }
}

/// Calibrated weights `w_i(t_l)` together with the producing method's label.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalWeights {
    values: Array2<f64>,
    source: &'static str,
}

impl FunctionalWeights {
    /// Wraps a weight matrix; every entry must be finite.
    pub fn new(values: Array2<f64>, source: &'static str) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("weight value {v}")));
        }
        Ok(Self { values, source })
    }

    /// Weight matrix, shape `n x L`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Label of the method that produced the weights.
    pub fn source(&self) -> &'static str {
        self.source
    }

    /// Number of negative entries. Chi-square calibration does not constrain
    /// the sign of the adjusted weights, so callers may want to inspect this.
    pub fn negative_count(&self) -> usize {
        self.values.iter().filter(|&&v| v < 0.0).count()
    }
}

fn check_calibration_inputs(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    q_weights: &QWeights,
) -> Result<()> {
    if sample.num_units() != design.sample_size() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} units, design has {}",
            sample.num_units(),
            design.sample_size()
        )));
    }
    if sample.num_aux() == 0 {
        return Err(Error::InvalidArgument(
            "calibration needs at least one auxiliary coordinate".into(),
        ));
    }
    if q_weights.values().dim() != (sample.num_units(), sample.num_points()) {
        return Err(Error::DimensionMismatch(format!(
            "tuning weights are {:?}, sample is {} x {}",
            q_weights.values().dim(),
            sample.num_units(),
            sample.num_points()
        )));
    }
    Ok(())
}

/// Weighted auxiliary scatter `S(t_l) = sum_i d_i q_i(t_l) x_i(t_l) x_i(t_l)^T`,
/// eigendecomposed, with the singularity check applied.
fn pointwise_scatter(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    q_weights: &QWeights,
    l: usize,
) -> Result<SymEigen> {
    let q = sample.num_aux();
    let mut s = Array2::zeros((q, q));
    for (i, &d) in design.weights().iter().enumerate() {
        let dq = d * q_weights.values()[[i, l]];
        for a in 0..q {
            let xa = sample.x()[[i, l, a]];
            for b in a..q {
                s[[a, b]] += dq * xa * sample.x()[[i, l, b]];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            s[[a, b]] = s[[b, a]];
        }
    }
    let eig = sym_eigen(&s);
    let rc = rcond_sym(&eig);
    if rc < RCOND_CUTOFF {
        return Err(Error::SingularMatrix { t_index: l, rcond: rc });
    }
    Ok(eig)
}

fn eigen_solve(eig: &SymEigen, rhs: &Array1<f64>) -> Array1<f64> {
    let q = rhs.len();
    let mut out = Array1::zeros(q);
    for k in 0..q {
        let vk = eig.vectors.column(k);
        out.scaled_add(vk.dot(rhs) / eig.values[k], &vk);
    }
    out
}

/// Pointwise regression coefficients of `y` on the auxiliary curves:
/// `beta_hat(t_l)` solves `S(t_l) beta = sum_i d_i q_i(t_l) x_i(t_l) y_i(t_l)`.
///
/// Returns an `L x q` matrix. Fails with [`Error::SingularMatrix`] at the
/// first time point whose scatter matrix has a reciprocal condition number
/// below `1e-12`.
pub fn pointwise_beta_hat(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    q_weights: &QWeights,
) -> Result<Array2<f64>> {
    check_calibration_inputs(sample, design, q_weights)?;
    let (l_points, q) = (sample.num_points(), sample.num_aux());
    let mut beta = Array2::zeros((l_points, q));
    for l in 0..l_points {
        let eig = pointwise_scatter(sample, design, q_weights, l)?;
        let mut rhs = Array1::zeros(q);
        for (i, &d) in design.weights().iter().enumerate() {
            let dqy = d * q_weights.values()[[i, l]] * sample.y()[[i, l]];
            for a in 0..q {
                rhs[a] += dqy * sample.x()[[i, l, a]];
            }
        }
        beta.row_mut(l).assign(&eigen_solve(&eig, &rhs));
    }
    Ok(beta)
}

/// Chi-square calibrated weights
/// `w_i(t_l) = d_i [1 + q_i(t_l) N (mu_x - mu_hat_x)^T S^{-1} x_i(t_l)]`,
/// with `mu_hat_x` the design-weighted estimate of the auxiliary mean. The
/// factor `N` converts the mean-scale gap to the total scale of `S`.
///
/// The weights reproduce the target means exactly at every time point where
/// the scatter matrix is well conditioned. When the target coincides with
/// the Horvitz-Thompson estimate the weights equal the design weights.
pub fn chisq_weights(
    sample: &FunctionalSample,
    design: &SamplingDesign,
    target: &MeanTarget,
    q_weights: &QWeights,
) -> Result<FunctionalWeights> {
    check_calibration_inputs(sample, design, q_weights)?;
    let (l_points, q) = (sample.num_points(), sample.num_aux());
    if target.mu_x().dim() != (l_points, q) {
        return Err(Error::DimensionMismatch(format!(
            "target means are {:?}, sample needs {} x {}",
            target.mu_x().dim(),
            l_points,
            q
        )));
    }
    if target.population_size() != design.population_size() {
        return Err(Error::DimensionMismatch(format!(
            "target population size {} differs from design population size {}",
            target.population_size(),
            design.population_size()
        )));
    }
    let n_pop = design.population_size() as f64;
    let n_inv = 1.0 / n_pop;
    let n = sample.num_units();
    let mut w = Array2::zeros((n, l_points));
    for l in 0..l_points {
        let eig = pointwise_scatter(sample, design, q_weights, l)?;
        // mean-scale gap, so a target equal to the design-weighted estimate
        // gives exactly zero; the scatter matrix lives on the total scale,
        // hence the factor N on the correction below
        let mut gap = Array1::zeros(q);
        for a in 0..q {
            let ht: f64 = design
                .weights()
                .iter()
                .enumerate()
                .map(|(i, &d)| d * sample.x()[[i, l, a]])
                .sum::<f64>()
                * n_inv;
            gap[a] = target.mu_x()[[l, a]] - ht;
        }
        let z = eigen_solve(&eig, &gap);
        for (i, &d) in design.weights().iter().enumerate() {
            let mut corr = 0.0;
            for a in 0..q {
                corr += z[a] * sample.x()[[i, l, a]];
            }
            w[[i, l]] = d * (1.0 + q_weights.values()[[i, l]] * n_pop * corr);
        }
    }
    FunctionalWeights::new(w, "chisq")
}

/// Weighted mean curve `N^{-1} sum_i w_i(t_l) y_i(t_l)`.
pub fn weighted_mean(
    weights: &FunctionalWeights,
    sample: &FunctionalSample,
    population_size: usize,
) -> Result<Curve> {
    if weights.values().dim() != (sample.num_units(), sample.num_points()) {
        return Err(Error::DimensionMismatch(format!(
            "weights are {:?}, sample is {} x {}",
            weights.values().dim(),
            sample.num_units(),
            sample.num_points()
        )));
    }
    if population_size == 0 {
        return Err(Error::InvalidArgument(
            "population size must be positive".into(),
        ));
    }
    let n_inv = 1.0 / population_size as f64;
    let values = (0..sample.num_points())
        .map(|l| {
            (0..sample.num_units())
                .map(|i| weights.values()[[i, l]] * sample.y()[[i, l]])
                .sum::<f64>()
                * n_inv
        })
        .collect();
    Curve::new(values)
}
