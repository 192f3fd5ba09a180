//! Sketch-size calculators: the data-oblivious m1 rule, the
//! inference-conscious m2 and m3 rules, the coherence rule for uniform
//! sampling and the countsketch rule.
//!
//! Run with `cargo run --release --example sketch_size`.

use sketchreg::size::{coherence_rule, countsketch_m, m1_rule, m2_rule, m3_rule, s_value, Tail};

fn main() -> sketchreg::Result<()> {
    let (n, k) = (10_000_000, 10);
    println!("m1 for n = {n}, K = {k}");
    for r in [6.0, 8.0, 10.0, 15.0] {
        println!("  r = {r:<4} m = {}", m1_rule(n, k, Tail::Moments(r))?.m);
    }
    println!("  thin tail m = {}\n", m1_rule(n, k, Tail::ThinTail)?.m);

    println!("S(alpha, gamma) = Phi^-1(1 - alpha) + Phi^-1(gamma)");
    for alpha in [0.01, 0.05, 0.1] {
        let row: Vec<String> = [0.5, 0.8, 0.9]
            .iter()
            .map(|&g| format!("{:.3}", s_value(alpha, g).unwrap()))
            .collect();
        println!("  alpha = {alpha:<5} {}", row.join("  "));
    }

    let m2 = m2_rule(1_000, 0.00025, 0.025, 0.05, 0.8)?;
    println!("\nm2 from a 1000-row pilot with var 2.5e-4 and effect 0.025: m = {} (raw {:.2})", m2.m, m2.raw);
    let m3 = m3_rule(562_170, 5.0, 0.05, 0.8)?;
    println!("m3 for n = 562170 and tau^2 = 5: m = {} feasible = {}", m3.m, m3.feasible);
    let coh = coherence_rule(1_000_000, 1e-4, 0.5, 0.1, 5, 10)?;
    println!("uniform sampling with coherence 1e-4, J = 5: m = {} feasible = {}", coh.m, coh.feasible);
    println!("countsketch for K = 10, eps = .5, delta = .1: m = {}", countsketch_m(10, 0.5, 0.1)?.m);
    Ok(())
}
