use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::rng::stream;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_data(path: &Path, n: usize) {
    let mut rng = stream(2024);
    let mut s = String::from("x1,x2,y\n");
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        s.push_str(&format!("{x1},{x2},{}\n", 1.0 + 2.0 * x1 - x2 + 0.5 * e));
    }
    fs::write(path, s).unwrap();
}

fn coefficient(text: &str, name: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            let mut f = l.split(',');
            (f.next() == Some(name)).then(|| f.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no row {name} in\n{text}"))
}

#[test]
fn sketch_emits_m_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 200);
    let o = bin(&["sketch", "--input", data.to_str().unwrap(), "--scheme", "cs", "--m", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,y");
    assert_eq!(lines.len(), 6);
}

#[test]
fn full_and_sketched_regressions_recover_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 2000);
    let path = data.to_str().unwrap();
    let full = bin(&["regress", "--input", path, "--target", "y", "--intercept"]);
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let text = stdout(&full);
    assert!((coefficient(&text, "x1") - 2.0).abs() < 0.1);
    assert!((coefficient(&text, "x2") + 1.0).abs() < 0.1);

    let sk = bin(&[
        "regress", "--input", path, "--target", "y", "--intercept", "--scheme", "rs1", "--m", "400", "--seed", "3",
    ]);
    assert!(sk.status.success(), "{}", String::from_utf8_lossy(&sk.stderr));
    let text = stdout(&sk);
    assert!((coefficient(&text, "x1") - 2.0).abs() < 0.2);
    assert!((coefficient(&text, "x2") + 1.0).abs() < 0.2);
}

#[test]
fn pooled_tests_report_both_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 2000);
    let o = bin(&[
        "pool", "--input", data.to_str().unwrap(), "--target", "y", "--intercept", "--m", "200", "--J", "4",
        "--coef", "x1", "--null", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!((coefficient(&text, "x1") - 2.0).abs() < 0.15);
    assert!(text.lines().any(|l| l.starts_with("T1,")));
    assert!(text.lines().any(|l| l.starts_with("T2,")));
}

#[test]
fn size_rules_print_tables() {
    let o = bin(&["size", "m2", "--var", "0.000625", "--effect", "0.5", "--gamma", "0.8", "--m0", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1).unwrap(), "0.8,1");

    let o = bin(&["size", "s-table", "--alpha", "0.05", "--gamma", "0.5,0.8"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().nth(1).unwrap(), "0.05,1.645,2.486");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_data(&data, 50);
    let o = bin(&["sketch", "--input", data.to_str().unwrap(), "--scheme", "rs1", "--m", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["sketch", "--input", data.to_str().unwrap(), "--scheme", "nope", "--m", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["regress", "--input", data.to_str().unwrap(), "--target", "missing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let o = bin(&["regress", "--input", missing.to_str().unwrap(), "--target", "y"]);
    assert_eq!(o.status.code(), Some(3));
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "x,y\n1,2\n3\n").unwrap();
    let o = bin(&["regress", "--input", ragged.to_str().unwrap(), "--target", "y"]);
    assert_eq!(o.status.code(), Some(3));
}
