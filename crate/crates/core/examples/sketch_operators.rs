//! Builds every sketch scheme on one design and prints the size of the
//! sketched data, the structural properties of the operator and a record that
//! rebuilds it.
//!
//! Run with `cargo run --release --example sketch_operators`.

use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::rng::stream;
use sketchreg::sketch::{check_pi_properties, materialize};
use sketchreg::{apply_sketch, build_sketch, DenseMatrix, SchemeId, SketchOperator};

fn main() -> sketchreg::Result<()> {
    let (n, k, m) = (256, 4, 32);
    let mut rng = stream(1);
    let a = DenseMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))?;
    let gram = a.gram();

    println!("{:<5} {:>6} {:>8} {:>8} {:>12}", "name", "rows", "prop1", "prop2", "gram_error");
    for scheme in SchemeId::ALL {
        let op = build_sketch(scheme, n, m, 7, Some(&a))?;
        let sa = apply_sketch(&op, &a)?;
        let props = check_pi_properties(&op)?;
        let err = sa.gram().sub(&gram)?.frobenius_norm() / gram.frobenius_norm();
        println!(
            "{:<5} {:>6} {:>8} {:>8} {:>12.4}",
            scheme.label(),
            sa.rows(),
            props.prop1_holds,
            props.prop2_holds,
            err
        );
    }

    let op = build_sketch(SchemeId::Cs, n, m, 7, None)?;
    let record = op.to_record()?;
    let rebuilt = SketchOperator::from_record(&record, None)?;
    assert_eq!(materialize(&op)?, materialize(&rebuilt)?);
    println!("\ncountsketch record: {} bytes, rebuilt operator is identical", record.len());
    Ok(())
}
