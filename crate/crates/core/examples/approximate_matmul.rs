//! Approximates A'B by sampling rows with optimal and with uniform
//! probabilities, and compares the Monte Carlo error with the exact variance
//! and with the ||A||_F^2 ||B||_F^2 / m bound.
//!
//! Run with `cargo run --release --example approximate_matmul`.

use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::amm::{
    amm, amm_exact_variance, amm_required_m, amm_variance_bound, optimal_probabilities, SamplingDistribution,
};
use sketchreg::rng::stream;
use sketchreg::DenseMatrix;

fn main() -> sketchreg::Result<()> {
    let n = 2_000;
    let mut rng = stream(11);
    let a = DenseMatrix::from_fn(n, 3, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        if i % 100 == 0 { 20.0 * z } else { z }
    })?;
    let b = DenseMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal))?;
    let exact = a.t_matmul(&b)?;

    let (epsilon, delta) = (0.5, 0.2);
    let m = amm_required_m(epsilon, delta)?;
    println!("m for epsilon = {epsilon}, delta = {delta}: {m}");

    let optimal = optimal_probabilities(&a, &b)?;
    let uniform = SamplingDistribution::uniform(n)?;
    let draws = 2_000;
    for (name, p) in [("optimal", &optimal), ("uniform", &uniform)] {
        let mut mse = 0.0;
        for s in 0..draws {
            mse += amm(&a, &b, m, p, s)?.sub(&exact)?.frobenius_norm().powi(2);
        }
        mse /= draws as f64;
        println!(
            "{name:<8} monte carlo E||error||^2 = {mse:10.1}   exact = {:10.1}",
            amm_exact_variance(&a, &b, m, p)?
        );
    }
    println!("bound ||A||^2 ||B||^2 / m = {:10.1}", amm_variance_bound(&a, &b, m));
    Ok(())
}
