//! Maximum-entropy calibration under the centered Gaussian prior.
//!
//! Walks through the single-point instance whose solution is known in
//! closed form, then calibrates a larger synthetic sample and reports the
//! solve diagnostics: the dual system is generically rank deficient, so the
//! solution is the minimum-norm least-squares one and the reported residual
//! measures how much of the constraint is attainable.

use funcal::chisq::MeanTarget;
use funcal::grid::{Grids, Kernel, KernelMatrix};
use funcal::mem::gaussian;
use funcal::sampling::{FunctionalSample, SamplingDesign};
use ndarray::{array, Array2, Array3};

fn main() -> Result<(), funcal::Error> {
    // one unit, one time point: X = 2, d = 2, target N mu_X = 6
    let sample = FunctionalSample::new(vec![1], array![[1.0]], array![[[2.0]]])?;
    let design = SamplingDesign::new(4, vec![0.5])?;
    let target = MeanTarget::new(array![[1.5]], 4)?;
    let grids = Grids::new(1, 1)?;
    let km = KernelMatrix::new(&Kernel::gaussian(0.5)?, &grids);

    let system = gaussian::assemble_system(&sample, &design, &target, &km, &grids)?;
    println!(
        "single-point system: M = {:.1}, r = {:.1}",
        system.matrix()[[0, 0]],
        system.rhs()[0]
    );
    let solution = gaussian::solve_lambda(&system, 1e-10)?;
    println!("lambda* = {:.4}", solution.lam[[0, 0]]);

    let (weights, _) = gaussian::calibrate(&sample, &design, &target, &km, &grids, 1e-10)?;
    let w = weights.values()[[0, 0]];
    println!("weight = {w:.4}, w X = {:.4} (target 6)", w * 2.0);

    // a larger sample: n = 12 units, L = 8 points, one auxiliary
    let n = 12;
    let l = 8;
    let x = Array3::from_shape_fn((n, l, 1), |(i, t, _)| {
        1.0 + 0.3 * ((i as f64 * 0.7).sin()) + 0.1 * (t as f64 / l as f64)
    });
    let y = Array2::from_shape_fn((n, l), |(i, t)| 2.0 * x[[i, t, 0]] + 0.05 * i as f64);
    let sample = FunctionalSample::new((1..=n as u64).collect(), y, x)?;
    let n_pop = 60;
    let design = SamplingDesign::srswor(n_pop, n)?;
    // a target slightly away from the sample's own design-weighted mean
    let mu_x = Array2::from_shape_fn((l, 1), |(t, _)| 1.02 + 0.1 * (t as f64 / l as f64));
    let target = MeanTarget::new(mu_x.clone(), n_pop)?;
    let grids = Grids::new(6, l)?;
    let km = KernelMatrix::new(&Kernel::gaussian(0.5)?, &grids);

    let (weights, solution) = gaussian::calibrate(&sample, &design, &target, &km, &grids, 1e-10)?;
    println!(
        "\nlarger instance: effective rank {}, least-squares residual {:.3e}",
        solution.effective_rank, solution.ls_residual_norm
    );
    println!("max constraint violation {:.3e}", solution.constraint_max_abs);

    let mut max_gap_before = 0.0f64;
    let mut max_gap_after = 0.0f64;
    for t in 0..l {
        let d_mean: f64 = (0..n)
            .map(|i| design.weights()[i] * sample.x()[[i, t, 0]])
            .sum::<f64>()
            / n_pop as f64;
        let w_mean: f64 = (0..n)
            .map(|i| weights.values()[[i, t]] * sample.x()[[i, t, 0]])
            .sum::<f64>()
            / n_pop as f64;
        max_gap_before = max_gap_before.max((d_mean - mu_x[[t, 0]]).abs());
        max_gap_after = max_gap_after.max((w_mean - mu_x[[t, 0]]).abs());
    }
    println!("aux gap: design weights {max_gap_before:.3e}, calibrated {max_gap_after:.3e}");
    Ok(())
}
