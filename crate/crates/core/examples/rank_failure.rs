//! A design with a rare dummy: uniform sampling often misses every row where
//! the dummy is one and the sketched design loses rank, while countsketch
//! mixes all rows into every bucket.
//!
//! Run with `cargo run --release --example rank_failure`.

use sketchreg::dgp::rare_dummy_design;
use sketchreg::linalg::numeric_rank;
use sketchreg::rng::stream;
use sketchreg::{apply_sketch, build_sketch, SchemeId};

fn main() -> sketchreg::Result<()> {
    let n = 100_000;
    let x = rare_dummy_design(n, &mut stream(17))?;
    let ones = (0..n).filter(|&i| x.get(i, 3) != 0.0).count();
    println!("n = {n}, dummy equals one in {ones} rows\n");

    let draws = 200;
    for scheme in [SchemeId::Rs1, SchemeId::Rs2, SchemeId::Cs] {
        for &m in &[500, 1_000, 2_000] {
            let mut singular = 0;
            for d in 0..draws {
                let op = build_sketch(scheme, n, m, d, None)?;
                if numeric_rank(&apply_sketch(&op, &x)?, 1e-10)? < x.cols() {
                    singular += 1;
                }
            }
            println!(
                "{:<4} m = {:<5} singular fraction = {:.3}",
                scheme.label(),
                m,
                singular as f64 / draws as f64
            );
        }
    }
    Ok(())
}
