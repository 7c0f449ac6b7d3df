//! Survey designs, sample containers, and the Horvitz-Thompson estimator.
//!
//! A population of `N` units carries one study curve and `q` auxiliary curves
//! per unit, all observed on the same grid of `L` time points. A sample is
//! the restriction of those curves to `n` drawn units together with the
//! design weights `d_i = 1 / pi_i`.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single curve observed on the `L`-point grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    values: Vec<f64>,
}

impl Curve {
    /// Wraps a vector of finite values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "curve value at position {pos} is {}",
                values[pos]
            )));
        }
        Ok(Self { values })
    }

    /// The observed values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the curve has no points.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Consumes the curve, returning the raw values.
    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Curves observed for the sampled units.
///
/// `y` has shape `n x L`; the auxiliary block `x` has shape `n x L x q` and
/// may have `q = 0` when no auxiliary information is available.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    ids: Vec<u64>,
    y: Array2<f64>,
    x: Array3<f64>,
}

impl FunctionalSample {
    /// Builds a sample from unit labels, study curves, and auxiliary curves.
    pub fn new(ids: Vec<u64>, y: Array2<f64>, x: Array3<f64>) -> Result<Self> {
        let (n, l) = y.dim();
        if ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} unit labels for {} study curves",
                ids.len(),
                n
            )));
        }
        let (xn, xl, _q) = x.dim();
        if xn != n || xl != l {
            return Err(Error::DimensionMismatch(format!(
                "auxiliary block is {:?}, study block is {n} x {l}",
                x.dim()
            )));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("study curve value {v}")));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("auxiliary curve value {v}")));
        }
        Ok(Self { ids, y, x })
    }

    /// Builds a sample that has no auxiliary curves (`q = 0`).
    pub fn without_aux(ids: Vec<u64>, y: Array2<f64>) -> Result<Self> {
        let (n, l) = y.dim();
        Self::new(ids, y, Array3::zeros((n, l, 0)))
    }

    /// Unit labels, one per sampled unit.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Study curves, shape `n x L`.
    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    /// Auxiliary curves, shape `n x L x q`.
    pub fn x(&self) -> &Array3<f64> {
        &self.x
    }

    /// Number of sampled units.
    pub fn num_units(&self) -> usize {
        self.y.nrows()
    }

    /// Number of time points.
    pub fn num_points(&self) -> usize {
        self.y.ncols()
    }

    /// Number of auxiliary coordinates.
    pub fn num_aux(&self) -> usize {
        self.x.dim().2
    }
}

/// First-order inclusion probabilities and design weights for a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDesign {
    population_size: usize,
    pi: Vec<f64>,
    d: Vec<f64>,
}

impl SamplingDesign {
    /// Builds a design from per-unit inclusion probabilities.
    pub fn new(population_size: usize, pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidArgument(
                "a design needs at least one sampled unit".into(),
            ));
        }
        if pi.len() > population_size {
            return Err(Error::InvalidArgument(format!(
                "sample size {} exceeds population size {population_size}",
                pi.len()
            )));
        }
        if let Some(p) = pi.iter().find(|p| !(p.is_finite() && **p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "inclusion probabilities must lie in (0, 1], got {p}"
            )));
        }
        // d_i = 1 / pi_i by construction.
        let d = pi.iter().map(|p| 1.0 / p).collect();
        Ok(Self {
            population_size,
            pi,
            d,
        })
    }

    /// Design for simple random sampling without replacement: every unit has
    /// `pi_i = n / N`.
    ///
    /// ```
    /// let design = funcal::sampling::SamplingDesign::srswor(1000, 120).unwrap();
    /// assert_eq!(design.pi()[0], 0.12);
    /// assert!((design.weights()[0] - 1.0 / 0.12).abs() == 0.0);
    /// ```
    pub fn srswor(population_size: usize, sample_size: usize) -> Result<Self> {
        if sample_size == 0 || sample_size > population_size {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n <= N, got n = {sample_size}, N = {population_size}"
            )));
        }
        let p = sample_size as f64 / population_size as f64;
        Self::new(population_size, vec![p; sample_size])
    }

    /// Population size `N`.
    pub fn population_size(&self) -> usize {
        self.population_size
    }

    /// Sample size `n`.
    pub fn sample_size(&self) -> usize {
        self.pi.len()
    }

    /// Inclusion probabilities, one per sampled unit.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Design weights `d_i = 1 / pi_i`.
    pub fn weights(&self) -> &[f64] {
        &self.d
    }
}

/// The outcome of one sample draw: sorted zero-based unit indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndices {
    indices: Vec<usize>,
    seed: u64,
}

impl SampleIndices {
    /// Zero-based indices into the population, strictly increasing.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Seed that produced the draw.
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws a simple random sample without replacement.
///
/// Uses a partial Fisher-Yates shuffle over `0..N` driven by a counter-based
/// stream cipher generator, so equal seeds give bitwise-equal draws on every
/// platform. Each of the `C(N, n)` subsets is equally likely.
pub fn srswor_sample(population_size: usize, sample_size: usize, seed: u64) -> Result<SampleIndices> {
    if sample_size == 0 || sample_size > population_size {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n <= N, got n = {sample_size}, N = {population_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..population_size).collect();
    for k in 0..sample_size {
        let j = rng.random_range(k..population_size);
        pool.swap(k, j);
    }
    let mut indices = pool[..sample_size].to_vec();
    indices.sort_unstable();
    Ok(SampleIndices { indices, seed })
}

/// Horvitz-Thompson estimator of the population mean curve:
/// `mu_hat(t_l) = N^{-1} sum_i d_i y_i(t_l)`.
pub fn ht_functional_mean(sample: &FunctionalSample, design: &SamplingDesign) -> Result<Curve> {
    if sample.num_units() != design.sample_size() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} units, design has {}",
            sample.num_units(),
            design.sample_size()
        )));
    }
    let n_inv = 1.0 / design.population_size() as f64;
    let l = sample.num_points();
    let mut values = vec![0.0; l];
    for (i, &d) in design.weights().iter().enumerate() {
        for (lidx, v) in values.iter_mut().enumerate() {
            *v += d * sample.y()[[i, lidx]];
        }
    }
    for v in values.iter_mut() {
        *v *= n_inv;
    }
    Curve::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use itertools::Itertools;
    use ndarray::array;
    use std::collections::HashMap;

    #[test]
    fn curve_rejects_non_finite() {
        assert!(Curve::new(vec![1.0, f64::NAN]).is_err());
        assert!(Curve::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(Curve::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn srswor_design_known_values() {
        let d = SamplingDesign::srswor(1000, 120).unwrap();
        assert_eq!(d.population_size(), 1000);
        assert_eq!(d.sample_size(), 120);
        assert!(d.pi().iter().all(|&p| p == 0.12));
        assert_relative_eq!(d.weights()[0], 25.0 / 3.0, max_relative = 1e-15);

        let census = SamplingDesign::srswor(5, 5).unwrap();
        assert!(census.pi().iter().all(|&p| p == 1.0));
        assert!(census.weights().iter().all(|&w| w == 1.0));

        let half = SamplingDesign::srswor(6, 3).unwrap();
        assert!(half.pi().iter().all(|&p| p == 0.5));
        assert!(half.weights().iter().all(|&w| w == 2.0));
    }

    #[test]
    fn design_weights_are_exact_reciprocals() {
        for (n_pop, n) in [(1000usize, 120usize), (7, 3), (97, 13)] {
            let d = SamplingDesign::srswor(n_pop, n).unwrap();
            for (p, w) in d.pi().iter().zip(d.weights()) {
                assert_eq!(*w, 1.0 / p);
            }
        }
    }

    #[test]
    fn design_rejects_bad_sizes() {
        assert!(SamplingDesign::srswor(10, 0).is_err());
        assert!(SamplingDesign::srswor(10, 11).is_err());
        assert!(SamplingDesign::new(10, vec![0.0]).is_err());
        assert!(SamplingDesign::new(10, vec![1.5]).is_err());
    }

    #[test]
    fn sample_draw_is_valid_and_deterministic() {
        let a = srswor_sample(30, 7, 99).unwrap();
        assert_eq!(a.indices().len(), 7);
        assert!(a.indices().windows(2).all(|w| w[0] < w[1]));
        assert!(a.indices().iter().all(|&i| i < 30));
        let b = srswor_sample(30, 7, 99).unwrap();
        assert_eq!(a, b);
        let c = srswor_sample(30, 7, 100).unwrap();
        assert_ne!(a.indices(), c.indices());
    }

    #[test]
    fn sample_draw_rejects_bad_sizes() {
        assert!(srswor_sample(5, 0, 1).is_err());
        assert!(srswor_sample(5, 6, 1).is_err());
    }

    #[test]
    fn unit_inclusion_frequencies_match_design() {
        // Each unit of 0..10 should appear with frequency n/N = 0.2.
        let reps = 10_000;
        let mut counts = vec![0usize; 10];
        for seed in 0..reps {
            let s = srswor_sample(10, 2, seed as u64).unwrap();
            for &i in s.indices() {
                counts[i] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / reps as f64;
            assert!((freq - 0.2).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn subset_frequencies_pass_chi_square_gof() {
        // All C(6,3) = 20 subsets should be equally likely. With 1e5 draws we
        // test goodness of fit at the 0.001 level: chi2(19) cutoff 43.82.
        let draws = 100_000usize;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for seed in 0..draws {
            let s = srswor_sample(6, 3, seed as u64).unwrap();
            *counts.entry(s.indices().to_vec()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 20, "all subsets must occur");
        let expected = draws as f64 / 20.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let diff = c as f64 - expected;
                diff * diff / expected
            })
            .sum();
        assert!(chi2 < 43.82, "chi-square statistic {chi2}");
    }

    fn tiny_sample(y: Array2<f64>) -> FunctionalSample {
        let ids = (1..=y.nrows() as u64).collect();
        FunctionalSample::without_aux(ids, y).unwrap()
    }

    #[test]
    fn census_reproduces_population_mean() {
        let y = array![[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]];
        let sample = tiny_sample(y);
        let design = SamplingDesign::srswor(3, 3).unwrap();
        let est = ht_functional_mean(&sample, &design).unwrap();
        assert_eq!(est.values(), &[3.0, 5.0]);
    }

    #[test]
    fn hand_computed_single_point_estimate() {
        // N = 4, n = 2, d = 2; units with y = 1 and 3 at one time point:
        // (2*1 + 2*3)/4 = 2.
        let sample = tiny_sample(array![[1.0], [3.0]]);
        let design = SamplingDesign::srswor(4, 2).unwrap();
        let est = ht_functional_mean(&sample, &design).unwrap();
        assert_eq!(est.values(), &[2.0]);
    }

    #[test]
    fn estimator_is_linear_in_y() {
        let y = array![[1.0, -2.0, 0.5], [0.25, 4.0, -1.0]];
        let z = array![[2.0, 1.0, 3.0], [-1.0, 0.5, 2.0]];
        let design = SamplingDesign::srswor(9, 2).unwrap();
        let combo = tiny_sample(3.0 * &y + 2.0 * &z);
        let est_combo = ht_functional_mean(&combo, &design).unwrap();
        let est_y = ht_functional_mean(&tiny_sample(y), &design).unwrap();
        let est_z = ht_functional_mean(&tiny_sample(z), &design).unwrap();
        for l in 0..3 {
            let expected = 3.0 * est_y.values()[l] + 2.0 * est_z.values()[l];
            assert_relative_eq!(est_combo.values()[l], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn exhaustive_average_over_samples_is_unbiased() {
        // Design-unbiasedness, checked by enumerating every subset.
        let y = array![
            [0.7, -1.3],
            [2.0, 0.4],
            [-0.5, 2.5],
            [1.1, 0.9],
            [3.2, -2.2],
            [0.3, 1.8]
        ];
        let n_pop = 6;
        let n = 3;
        let l = 2;
        let design = SamplingDesign::srswor(n_pop, n).unwrap();
        let mut avg = vec![0.0; l];
        let subsets: Vec<Vec<usize>> = (0..n_pop).combinations(n).collect();
        for subset in &subsets {
            let rows = Array2::from_shape_fn((n, l), |(i, j)| y[[subset[i], j]]);
            let sample = tiny_sample(rows);
            let est = ht_functional_mean(&sample, &design).unwrap();
            for j in 0..l {
                avg[j] += est.values()[j];
            }
        }
        let mu: Vec<f64> = (0..l)
            .map(|j| (0..n_pop).map(|i| y[[i, j]]).sum::<f64>() / n_pop as f64)
            .collect();
        for j in 0..l {
            let mean_est = avg[j] / subsets.len() as f64;
            assert!((mean_est - mu[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_design_is_rejected() {
        let sample = tiny_sample(array![[1.0], [3.0]]);
        let design = SamplingDesign::srswor(4, 3).unwrap();
        assert!(ht_functional_mean(&sample, &design).is_err());
    }
}
