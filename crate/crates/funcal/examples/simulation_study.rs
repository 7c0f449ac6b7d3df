//! Full Monte Carlo study with the default configuration.
//!
//! Generates the synthetic population, draws repeated samples, runs the
//! design-weighted and calibrated estimators, and prints the bias-variance
//! decomposition of the mean squared error.

use std::time::Instant;

use funcal::simulation::{monte_carlo, SimConfig};

fn main() -> Result<(), funcal::Error> {
    let config = SimConfig::default();
    println!(
        "population N = {}, sample n = {}, J = {}, L = {}, R = {}, seed = {}",
        config.population_size,
        config.sample_size(),
        config.num_s,
        config.num_t,
        config.reps,
        config.seed
    );

    let start = Instant::now();
    let out = monte_carlo(&config)?;
    let elapsed = start.elapsed();

    println!("\n{:<12} {:>12} {:>12} {:>12}", "estimator", "mse", "bias2", "variance");
    for row in &out.rows {
        println!(
            "{:<12} {:>12.6} {:>12.6} {:>12.6}",
            row.estimator.label(),
            row.mse,
            row.bias2,
            row.variance
        );
    }

    let failures = out.poisson_failures();
    println!(
        "\nPoisson solves missing tolerance: {failures} of {} replications",
        config.reps
    );
    if let Some(diag) = out.diagnostics.first().and_then(|d| d.poisson) {
        println!(
            "first replication: residual {:.3e} after {} iterations",
            diag.residual_inf_norm, diag.iterations
        );
    }
    println!("elapsed: {:.1?}", elapsed);
    Ok(())
}
