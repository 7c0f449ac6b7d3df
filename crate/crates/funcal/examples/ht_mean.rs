//! Horvitz-Thompson estimation of a population mean curve.
//!
//! Draws one simple random sample without replacement from a small synthetic
//! population, estimates the mean curve, then averages the estimator over
//! every possible sample of a tiny population to show design unbiasedness.

use funcal::sampling::{
    ht_functional_mean, srswor_sample, FunctionalSample, SamplingDesign,
};
use ndarray::Array2;

fn main() -> Result<(), funcal::Error> {
    // population of 30 units observed at 5 time points
    let n_pop = 30;
    let l = 5;
    let pop = Array2::from_shape_fn((n_pop, l), |(i, t)| {
        (i as f64 / 10.0) + (t as f64 + 1.0).sin() * (1.0 + 0.02 * i as f64)
    });
    let mu: Vec<f64> = (0..l)
        .map(|t| (0..n_pop).map(|i| pop[[i, t]]).sum::<f64>() / n_pop as f64)
        .collect();

    let n = 10;
    let indices = srswor_sample(n_pop, n, 42)?;
    let ids: Vec<u64> = indices.indices().iter().map(|&i| i as u64 + 1).collect();
    let y = Array2::from_shape_fn((n, l), |(row, t)| pop[[indices.indices()[row], t]]);
    let sample = FunctionalSample::without_aux(ids, y)?;
    let design = SamplingDesign::srswor(n_pop, n)?;

    let estimate = ht_functional_mean(&sample, &design)?;
    println!("t point   population mean   HT estimate");
    for t in 0..l {
        println!("{t:>7}   {:>15.6}   {:>11.6}", mu[t], estimate.values()[t]);
    }

    // exhaustive check on N = 5, n = 2: the average over all 10 samples
    // recovers the population mean exactly
    let small = Array2::from_shape_fn((5, 2), |(i, t)| (i as f64 + 1.0) * (t as f64 + 0.5));
    let small_mu: Vec<f64> = (0..2)
        .map(|t| (0..5).map(|i| small[[i, t]]).sum::<f64>() / 5.0)
        .collect();
    let design = SamplingDesign::srswor(5, 2)?;
    let mut averaged = vec![0.0; 2];
    let mut count = 0.0;
    for a in 0..5 {
        for b in (a + 1)..5 {
            let y = Array2::from_shape_fn((2, 2), |(row, t)| {
                small[[if row == 0 { a } else { b }, t]]
            });
            let sample = FunctionalSample::without_aux(vec![a as u64 + 1, b as u64 + 1], y)?;
            let estimate = ht_functional_mean(&sample, &design)?;
            for (acc, &v) in averaged.iter_mut().zip(estimate.values()) {
                *acc += v;
            }
            count += 1.0;
        }
    }
    println!("\nall {count} samples of 2 from 5 units, averaged estimate vs mean:");
    for t in 0..2 {
        println!(
            "  t {t}: {:.12} vs {:.12}  (difference {:.1e})",
            averaged[t] / count,
            small_mu[t],
            (averaged[t] / count - small_mu[t]).abs()
        );
    }
    Ok(())
}
