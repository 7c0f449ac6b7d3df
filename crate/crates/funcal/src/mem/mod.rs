//! Maximum-entropy calibrated weighting.
//!
//! Instead of adjusting every sampled unit separately, these estimators write
//! the calibrated weight as a design weight plus a kernel-smoothed common
//! adjustment,
//!
//! ```text
//! w_i(t_l) = (1/J) sum_j K(s_j, t_l) varpi(s_j) + d_i,
//! ```
//!
//! and choose the adjustment density `varpi` as the posterior mode of a prior
//! on weight processes given the auxiliary calibration constraint
//! `sum_i w_i(t_l) x_i(t_l) = N mu_x(t_l)`. The prior enters through its dual
//! objective: a Gaussian prior gives a linear system ([`gaussian`]), a
//! centered compound-Poisson prior gives a smooth nonlinear system
//! ([`poisson`]). Both duals share the coupling field computed here.

pub mod gaussian;
pub mod poisson;

use ndarray::{Array1, Array2};

use crate::chisq::{FunctionalWeights, MeanTarget};
use crate::error::{Error, Result};
use crate::grid::{Grids, KernelMatrix};
use crate::sampling::{FunctionalSample, SamplingDesign};

/// Dual variable of the calibration constraint, shape `L x q`.
pub type LambdaField = Array2<f64>;

/// Adjustment density evaluated on the source grid, length `J`.
pub type AdjustmentDensity = Array1<f64>;

/// Auxiliary curves summed over sampled units, shape `L x q`.
pub type AuxSum = Array2<f64>;

/// Sums the auxiliary curves over units: `xbar[[l, k]] = sum_i x_i(t_l)_k`.
pub fn sample_aux_sum(sample: &FunctionalSample) -> AuxSum {
    let (_, l, q) = sample.x().dim();
    let mut out = Array2::zeros((l, q));
    for i in 0..sample.num_units() {
        for lidx in 0..l {
            for k in 0..q {
                out[[lidx, k]] += sample.x()[[i, lidx, k]];
            }
        }
    }
    out
}

/// Coupling field pairing the dual variable with the summed auxiliaries:
/// `c_j = (1/L) sum_l K(s_j, t_l) lambda(t_l)^T xbar(t_l)`.
///
/// Linear in `lambda`; both dual objectives depend on `lambda` only through
/// this field.
pub fn coupling_field(
    lam: &LambdaField,
    xbar: &AuxSum,
    km: &KernelMatrix,
    grids: &Grids,
) -> Result<Array1<f64>> {
    let (l_points, q) = lam.dim();
    if xbar.dim() != (l_points, q) {
        return Err(Error::DimensionMismatch(format!(
            "dual field is {:?}, auxiliary sums are {:?}",
            lam.dim(),
            xbar.dim()
        )));
    }
    if km.values().dim() != (grids.num_s(), grids.num_t()) || grids.num_t() != l_points {
        return Err(Error::DimensionMismatch(format!(
            "kernel matrix is {:?}, grids are {} x {}, dual field has {} time points",
            km.values().dim(),
            grids.num_s(),
            grids.num_t(),
            l_points
        )));
    }
    let inv_l = 1.0 / l_points as f64;
    let inner: Vec<f64> = (0..l_points)
        .map(|l| (0..q).map(|k| lam[[l, k]] * xbar[[l, k]]).sum())
        .collect();
    let c = (0..grids.num_s())
        .map(|j| {
            inv_l
                * inner
                    .iter()
                    .enumerate()
                    .map(|(l, v)| km.values()[[j, l]] * v)
                    .sum::<f64>()
        })
        .collect();
    Ok(Array1::from_vec(c))
}

/// Builds calibrated weights from an adjustment density:
/// `w_i(t_l) = (1/J) sum_j K(s_j, t_l) varpi(s_j) + d_i`.
///
/// The smoothed adjustment is shared by all units; only the design weight
/// varies across them.
pub fn weights_from_adjustment(
    varpi: &AdjustmentDensity,
    km: &KernelMatrix,
    design: &SamplingDesign,
    source: &'static str,
) -> Result<FunctionalWeights> {
    let (j_points, l_points) = km.values().dim();
    if varpi.len() != j_points {
        return Err(Error::DimensionMismatch(format!(
            "adjustment density has {} points, kernel matrix has {} source rows",
            varpi.len(),
            j_points
        )));
    }
    let inv_j = 1.0 / j_points as f64;
    let smoothed: Vec<f64> = (0..l_points)
        .map(|l| {
            inv_j
                * (0..j_points)
                    .map(|j| km.values()[[j, l]] * varpi[j])
                    .sum::<f64>()
        })
        .collect();
    let n = design.sample_size();
    let mut w = Array2::zeros((n, l_points));
    for (i, &d) in design.weights().iter().enumerate() {
        for (l, &a) in smoothed.iter().enumerate() {
            w[[i, l]] = a + d;
        }
    }
    FunctionalWeights::new(w, source)
}

/// Calibration-constraint violation
/// `R[[l, k]] = sum_i w_i(t_l) x_i(t_l)_k - N mu_x(t_l)_k`.
pub fn constraint_residual(
    weights: &FunctionalWeights,
    sample: &FunctionalSample,
    target: &MeanTarget,
) -> Result<Array2<f64>> {
    let (n, l_points, q) = sample.x().dim();
    if weights.values().dim() != (n, l_points) {
        return Err(Error::DimensionMismatch(format!(
            "weights are {:?}, sample is {} x {}",
            weights.values().dim(),
            n,
            l_points
        )));
    }
    if target.mu_x().dim() != (l_points, q) {
        return Err(Error::DimensionMismatch(format!(
            "target means are {:?}, sample needs {} x {}",
            target.mu_x().dim(),
            l_points,
            q
        )));
    }
    let n_pop = target.population_size() as f64;
    let mut r = Array2::zeros((l_points, q));
    for l in 0..l_points {
        for k in 0..q {
            let mut acc = 0.0;
            for i in 0..n {
                acc += weights.values()[[i, l]] * sample.x()[[i, l, k]];
            }
            r[[l, k]] = acc - n_pop * target.mu_x()[[l, k]];
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chisq::{chisq_weights, QWeights};
    use crate::grid::Kernel;
    use approx::assert_relative_eq;
    use ndarray::{array, Array3};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_from(y: Array2<f64>, x: Array3<f64>) -> FunctionalSample {
        let ids = (1..=y.nrows() as u64).collect();
        FunctionalSample::new(ids, y, x).unwrap()
    }

    fn unit_setup() -> (Grids, KernelMatrix) {
        let grids = Grids::new(1, 1).unwrap();
        let km = KernelMatrix::new(&Kernel::gaussian(0.5).unwrap(), &grids);
        (grids, km)
    }

    #[test]
    fn aux_sum_adds_over_units() {
        let x = Array3::from_shape_fn((2, 2, 1), |(i, l, _)| (i + 1) as f64 * (l + 1) as f64);
        let sample = sample_from(Array2::zeros((2, 2)), x);
        let xbar = sample_aux_sum(&sample);
        assert_eq!(xbar, array![[3.0], [6.0]]);
    }

    #[test]
    fn aux_sum_single_unit_is_identity() {
        let x = Array3::from_shape_fn((1, 3, 2), |(_, l, k)| (l * 2 + k) as f64);
        let sample = sample_from(Array2::zeros((1, 3)), x.clone());
        let xbar = sample_aux_sum(&sample);
        for l in 0..3 {
            for k in 0..2 {
                assert_eq!(xbar[[l, k]], x[[0, l, k]]);
            }
        }
    }

    #[test]
    fn coupling_field_vanishes_at_zero_and_is_linear() {
        let grids = Grids::new(4, 6).unwrap();
        let km = KernelMatrix::new(&Kernel::gaussian(0.5).unwrap(), &grids);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xbar = Array2::from_shape_fn((6, 2), |_| rng.random_range(-3.0..3.0));
        let lam = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));

        let zero = coupling_field(&Array2::zeros((6, 2)), &xbar, &km, &grids).unwrap();
        assert!(zero.iter().all(|&c| c == 0.0));

        let c1 = coupling_field(&lam, &xbar, &km, &grids).unwrap();
        let c2 = coupling_field(&(2.0 * &lam), &xbar, &km, &grids).unwrap();
        for j in 0..4 {
            assert_relative_eq!(c2[j], 2.0 * c1[j], max_relative = 1e-14);
        }
    }

    #[test]
    fn coupling_field_single_point_hand_value() {
        // J = L = q = 1, K = 1, lambda = 0.5, xbar = 2: c = 0.5 * 2 = 1.
        let (grids, km) = unit_setup();
        let c = coupling_field(&array![[0.5]], &array![[2.0]], &km, &grids).unwrap();
        assert_eq!(c[0], 1.0);
    }

    #[test]
    fn zero_adjustment_returns_design_weights() {
        let grids = Grids::new(3, 4).unwrap();
        let km = KernelMatrix::new(&Kernel::gaussian(0.5).unwrap(), &grids);
        let design = SamplingDesign::srswor(10, 2).unwrap();
        let w = weights_from_adjustment(&Array1::zeros(3), &km, &design, "mem-gauss").unwrap();
        for i in 0..2 {
            for l in 0..4 {
                assert_eq!(w.values()[[i, l]], design.weights()[i]);
            }
        }
        assert_eq!(w.source(), "mem-gauss");
    }

    #[test]
    fn single_point_weights_hand_value() {
        // varpi = 1, K = 1, d = 2: w = 1/1 * 1 + 2 = 3.
        let (_, km) = unit_setup();
        let design = SamplingDesign::new(1, vec![0.5]).unwrap();
        let w = weights_from_adjustment(&array![1.0], &km, &design, "mem-gauss").unwrap();
        assert_eq!(w.values()[[0, 0]], 3.0);
    }

    #[test]
    fn adjustment_is_additive_in_varpi() {
        let grids = Grids::new(5, 3).unwrap();
        let km = KernelMatrix::new(&Kernel::gaussian(0.4).unwrap(), &grids);
        let design = SamplingDesign::srswor(20, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let wa = weights_from_adjustment(&a, &km, &design, "mem-gauss").unwrap();
        let wb = weights_from_adjustment(&b, &km, &design, "mem-gauss").unwrap();
        let wab = weights_from_adjustment(&(&a + &b), &km, &design, "mem-gauss").unwrap();
        for i in 0..4 {
            for l in 0..3 {
                let direct = wab.values()[[i, l]];
                let sum = wa.values()[[i, l]] + wb.values()[[i, l]] - design.weights()[i];
                assert_relative_eq!(direct, sum, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn design_weights_with_ht_target_have_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 5;
        let (l, q) = (4, 2);
        let y = Array2::from_shape_fn((n, l), |_| rng.random_range(-1.0..1.0));
        let x = Array3::from_shape_fn((n, l, q), |_| rng.random_range(0.5..2.0));
        let sample = sample_from(y, x);
        let design = SamplingDesign::srswor(15, n).unwrap();
        let n_pop = design.population_size() as f64;
        let mu = Array2::from_shape_fn((l, q), |(lidx, k)| {
            design
                .weights()
                .iter()
                .enumerate()
                .map(|(i, &d)| d * sample.x()[[i, lidx, k]])
                .sum::<f64>()
                / n_pop
        });
        let target = MeanTarget::new(mu, design.population_size()).unwrap();
        let d_matrix = Array2::from_shape_fn((n, l), |(i, _)| design.weights()[i]);
        let w = FunctionalWeights::new(d_matrix, "design").unwrap();
        let r = constraint_residual(&w, &sample, &target).unwrap();
        for v in r.iter() {
            assert!(v.abs() < 1e-9, "residual {v}");
        }
    }

    #[test]
    fn chisq_weights_have_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 8;
        let (l, q) = (5, 2);
        let y = Array2::from_shape_fn((n, l), |_| rng.random_range(-1.0..1.0));
        let x = Array3::from_shape_fn((n, l, q), |(_, _, k)| rng.random_range(0.5..2.0) + k as f64);
        let sample = sample_from(y, x);
        let design = SamplingDesign::srswor(32, n).unwrap();
        let n_pop = design.population_size() as f64;
        let mu = Array2::from_shape_fn((l, q), |(lidx, k)| {
            design
                .weights()
                .iter()
                .enumerate()
                .map(|(i, &d)| d * sample.x()[[i, lidx, k]])
                .sum::<f64>()
                / n_pop
                + rng.random_range(-0.05..0.05)
        });
        let target = MeanTarget::new(mu, design.population_size()).unwrap();
        let w = chisq_weights(&sample, &design, &target, &QWeights::ones(n, l)).unwrap();
        let r = constraint_residual(&w, &sample, &target).unwrap();
        for v in r.iter() {
            assert!(v.abs() < 1e-6 * n_pop, "residual {v}");
        }
    }

    #[test]
    fn residual_matches_definition_on_arbitrary_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 3;
        let (l, q) = (2, 2);
        let x = Array3::from_shape_fn((n, l, q), |_| rng.random_range(-1.0..1.0));
        let sample = sample_from(Array2::zeros((n, l)), x);
        let wvals = Array2::from_shape_fn((n, l), |_| rng.random_range(0.0..3.0));
        let w = FunctionalWeights::new(wvals.clone(), "design").unwrap();
        let mu = Array2::from_shape_fn((l, q), |_| rng.random_range(-1.0..1.0));
        let target = MeanTarget::new(mu.clone(), 7).unwrap();
        let r = constraint_residual(&w, &sample, &target).unwrap();
        for lidx in 0..l {
            for k in 0..q {
                let mut expected = -7.0 * mu[[lidx, k]];
                for i in 0..n {
                    expected += wvals[[i, lidx]] * sample.x()[[i, lidx, k]];
                }
                assert_relative_eq!(r[[lidx, k]], expected, max_relative = 1e-14);
            }
        }
    }
}
