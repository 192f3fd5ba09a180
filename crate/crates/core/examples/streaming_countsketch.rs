//! Streams rows into countsketch accumulators in arbitrary order, splits the
//! stream across two workers and merges them, then checks the result against
//! the batch sketch.
//!
//! Run with `cargo run --release --example streaming_countsketch`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::rng::stream;
use sketchreg::sketch::CsAccumulator;
use sketchreg::{apply_sketch, build_sketch, DenseMatrix, SchemeId};

fn main() -> sketchreg::Result<()> {
    let (n, k, m, seed) = (10_000, 5, 200, 42);
    let mut rng = stream(3);
    let a = DenseMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (first, second) = order.split_at(n / 3);

    let mut left = CsAccumulator::new(m, k, seed)?;
    for &i in first {
        left.update(i, a.row(i))?;
    }
    let mut right = CsAccumulator::new(m, k, seed)?;
    for &i in second {
        right.update(i, a.row(i))?;
    }
    let merged = left.merge(right)?;
    println!("rows seen after merge: {}", merged.rows_seen());
    let streamed = merged.finalize();

    let batch = apply_sketch(&build_sketch(SchemeId::Cs, n, m, seed, None)?, &a)?;
    println!("max |streamed - batch| = {:.3e}", streamed.max_abs_diff(&batch));

    let mut again = CsAccumulator::new(m, k, seed)?;
    again.update(0, a.row(0))?;
    match again.update(0, a.row(0)) {
        Err(e) => println!("streaming a row twice is refused: {e}"),
        Ok(()) => unreachable!(),
    }
    Ok(())
}
