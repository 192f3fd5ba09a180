//! Fits a regression on the full sample and on sketches of several sizes,
//! reports the standard errors, checks the SSR and coefficient bounds for
//! each sketch, and runs an F test on the sketched fit.
//!
//! Run with `cargo run --release --example sketched_regression`.

use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::regression::{f_test, lemma3_check, ols, sketched_ols};
use sketchreg::rng::stream;
use sketchreg::{build_sketch, DenseMatrix, SchemeId, VarianceMode};

fn main() -> sketchreg::Result<()> {
    let (n, k) = (50_000, 4);
    let beta = [1.0, 0.5, -0.25, 0.0];
    let mut rng = stream(21);
    let x = DenseMatrix::from_fn(n, k, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) })?;
    let y: Vec<f64> = (0..n)
        .map(|i| sketchreg::linalg::dot(x.row(i), &beta) + rng.sample::<f64, _>(StandardNormal))
        .collect();

    let full = ols(&y, &x, VarianceMode::Homoskedastic)?;
    println!("full sample: beta = {:.4?}", full.beta);
    println!("             se   = {:.5?}\n", full.std_errors);

    for scheme in [SchemeId::Rs1, SchemeId::Rp3, SchemeId::Cs] {
        for &m in &[500, 5_000] {
            let op = build_sketch(scheme, n, m, 8, Some(&x))?;
            let fit = sketched_ols(&y, &x, &op, VarianceMode::Sandwich)?;
            let check = lemma3_check(&full, &fit, &y, &x, &op)?;
            let ratio = (fit.std_errors[1] / full.std_errors[1]).powi(2);
            println!(
                "{:<4} m={:<5} beta1={:.4} se1={:.5} var ratio={:6.1} (n/m = {:5.1}) ssr bound {} beta bound {}",
                scheme.label(),
                m,
                fit.beta[1],
                fit.std_errors[1],
                ratio,
                n as f64 / m as f64,
                check.ssr_holds,
                check.beta_holds
            );
        }
    }

    let op = build_sketch(SchemeId::Rs1, n, 2_000, 2, None)?;
    let fit = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic)?;
    let restriction = DenseMatrix::from_rows(&[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]])?;
    let test = f_test(&fit, &restriction, &[0.0, 0.0], Some(&beta))?;
    println!("\nF test of beta2 = beta3 = 0 on a 2000-row sketch: {test:?}");
    Ok(())
}
