//! Splits the data into J disjoint sketches, pools their estimates and
//! tests a coefficient with the normal-based T1 and the t-based T2.
//!
//! Run with `cargo run --release --example pooled_inference`.

use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::pooling::{pooled_fit_with, t1_statistic, t2_critical, t2_statistic, PoolConfig};
use sketchreg::regression::ols;
use sketchreg::rng::stream;
use sketchreg::size::inv_norm_cdf;
use sketchreg::{ContrastVector, DenseMatrix, SchemeId, VarianceMode};

fn main() -> sketchreg::Result<()> {
    let (n, k) = (100_000, 3);
    let mut rng = stream(31);
    let x = DenseMatrix::from_fn(n, k, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) })?;
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + x.get(i, 1) + 0.05 * x.get(i, 2) + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let full = ols(&y, &x, VarianceMode::Homoskedastic)?;
    println!("full sample beta2 = {:.4} (se {:.4})\n", full.beta[2], full.std_errors[2]);

    let contrast = ContrastVector::unit(k, 2)?;
    let z = inv_norm_cdf(0.975)?;
    for scheme in [SchemeId::Rs1, SchemeId::Cs] {
        for &j in &[1, 5, 10] {
            let cfg = PoolConfig {
                m: 2_000,
                j,
                scheme,
                mode: VarianceMode::Homoskedastic,
                seed: 4,
            };
            let pf = pooled_fit_with(&y, &x, &cfg, &contrast, 0.0)?;
            let t1 = t1_statistic(&pf);
            print!(
                "{:<3} J={:<2} beta_bar2={:.4} se={:.4} T1={:6.2} reject={:<5}",
                scheme.label(),
                j,
                pf.beta_bar[2],
                pf.se_beta_bar[2],
                t1,
                t1.abs() > z
            );
            if j >= 2 {
                let t2 = t2_statistic(&pf)?;
                let crit = t2_critical(pf.j, 0.05)?;
                print!("  T2={:6.2} critical={:.3} reject={}", t2, crit, t2.abs() > crit);
            }
            println!();
        }
    }
    Ok(())
}
