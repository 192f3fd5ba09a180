//! Measures how well each scheme preserves pairwise distances and the
//! singular values of a tall design as the sketch size grows.
//!
//! Run with `cargo run --release --example embedding_diagnostics`.

use rand::Rng;
use rand_distr::Exp;
use sketchreg::embedding::embedding_report;
use sketchreg::linalg::leverage_scores;
use sketchreg::rng::stream;
use sketchreg::{build_sketch, DenseMatrix, SchemeId};

fn main() -> sketchreg::Result<()> {
    let (n, d) = (4_096, 5);
    let mut rng = stream(5);
    let exp = Exp::new(0.2).unwrap();
    let a = DenseMatrix::from_fn(n, d, |_, _| rng.sample(exp))?;
    let lev = leverage_scores(&a)?;
    println!("coherence max_i h_ii = {:.5} (K / n = {:.5})\n", lev.coherence, d as f64 / n as f64);

    let schemes = [SchemeId::Rs1, SchemeId::Rs4, SchemeId::Rp2, SchemeId::Rp3, SchemeId::Cs];
    println!("{:<6} {:>5} {:>9} {:>11} {:>9}", "scheme", "m", "success", "eps_hat", "embeds");
    for &m in &[64, 256, 1024] {
        for scheme in schemes {
            let op = build_sketch(scheme, n, m, 9, Some(&a))?;
            let r = embedding_report(&a, &op, 0.1, 0.1)?;
            println!(
                "{:<6} {:>5} {:>9.3} {:>11.4} {:>9}",
                scheme.label(),
                m,
                r.pairwise_success_rate,
                r.epsilon_hat,
                r.is_embedding()
            );
        }
    }
    Ok(())
}
