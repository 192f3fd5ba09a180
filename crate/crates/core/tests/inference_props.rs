use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sketchreg::amm::{amm, amm_exact_variance, amm_variance_bound, optimal_probabilities, SamplingDistribution};
use sketchreg::linalg::DenseMatrix;
use sketchreg::pooling::{equal_partition, pooled_fit, t1_statistic, t2_critical, t2_statistic, uniform_partition};
use sketchreg::regression::{ols, sketched_ols};
use sketchreg::rng::stream;
use sketchreg::size::{m2_rule, m3_rule, s_value, t_critical};
use sketchreg::{ContrastVector, SketchOperator, VarianceMode};

fn regression_data(n: usize, k: usize, seed: u64) -> (Vec<f64>, DenseMatrix) {
    let mut rng = stream(seed);
    let x = DenseMatrix::from_fn(n, k, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) }).unwrap();
    let y = (0..n)
        .map(|i| x.row(i).iter().sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (y, x)
}

fn reference_ols(y: &[f64], x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = x.shape();
    let xm = DMatrix::from_row_slice(n, k, x.as_slice());
    let yv = DVector::from_column_slice(y);
    let xtx_inv = (xm.transpose() * &xm).try_inverse().unwrap();
    let beta = &xtx_inv * xm.transpose() * &yv;
    let resid = &yv - &xm * &beta;
    let s2 = resid.dot(&resid) / (n - k) as f64;
    let se = (0..k).map(|i| (s2 * xtx_inv[(i, i)]).sqrt()).collect();
    (beta.iter().copied().collect(), se)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ols_matches_normal_equations(n in 12usize..120, k in 1usize..5, seed in any::<u64>()) {
        let (y, x) = regression_data(n, k, seed);
        let fit = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let (beta, se) = reference_ols(&y, &x);
        for i in 0..k {
            prop_assert!((fit.beta[i] - beta[i]).abs() <= 1e-8 * (1.0 + beta[i].abs()));
            prop_assert!((fit.std_errors[i] - se[i]).abs() <= 1e-8 * (1.0 + se[i]));
        }
    }

    #[test]
    fn sketched_fit_equals_ols_on_the_selected_rows(n in 40usize..200, seed in any::<u64>()) {
        let (y, x) = regression_data(n, 3, seed);
        let m = n / 2;
        let op = sketchreg::build_sketch(sketchreg::SchemeId::Rs1, n, m, seed ^ 9, None).unwrap();
        let rows = op.selected_rows().unwrap().to_vec();
        let sk = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).unwrap();
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let (beta, se) = reference_ols(&ys, &x.select_rows(&rows));
        for i in 0..3 {
            prop_assert!((sk.beta[i] - beta[i]).abs() <= 1e-8 * (1.0 + beta[i].abs()));
            prop_assert!((sk.std_errors[i] - se[i]).abs() <= 1e-8 * (1.0 + se[i]));
        }
    }

    #[test]
    fn partitions_are_disjoint(n in 10usize..500, j in 1usize..6, seed in any::<u64>()) {
        let m = n / j;
        prop_assume!(m >= 1);
        let blocks = uniform_partition(n, m, j, seed).unwrap();
        prop_assert_eq!(blocks.len(), j);
        let mut seen = vec![false; n];
        for b in &blocks {
            prop_assert_eq!(b.len(), m);
            for &i in b {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        let labels = equal_partition(n, j, seed).unwrap();
        let mut sizes = vec![0usize; j];
        for &l in &labels {
            sizes[l] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn m2_scales_with_inverse_squared_effect(
        m0 in 100u64..10_000,
        var in 1e-6f64..1e-2,
        effect in 0.001f64..0.1,
        gamma in 0.5f64..0.95,
    ) {
        let a = m2_rule(m0, var, effect, 0.05, gamma).unwrap();
        let b = m2_rule(m0, var, 2.0 * effect, 0.05, gamma).unwrap();
        prop_assert!((a.raw / b.raw - 4.0).abs() <= 1e-12 * 4.0);
        prop_assert!(a.m as f64 >= a.raw && (a.m as f64) < a.raw + 1.0 + 1e-9);
        let hi = m2_rule(m0, var, effect, 0.05, 0.95).unwrap();
        prop_assert!(hi.raw >= a.raw);
    }

    #[test]
    fn amm_probabilities_form_a_distribution(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = stream(seed);
        let a = DenseMatrix::from_fn(n, 3, |_, _| rng.sample(StandardNormal)).unwrap();
        let b = DenseMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal)).unwrap();
        let p = optimal_probabilities(&a, &b).unwrap();
        prop_assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.probabilities().iter().all(|&q| q > 0.0));
        let exact = amm_exact_variance(&a, &b, 10, &p).unwrap();
        prop_assert!(exact <= amm_variance_bound(&a, &b, 10) * (1.0 + 1e-12));
        let uniform = SamplingDistribution::uniform(n).unwrap();
        prop_assert!(exact <= amm_exact_variance(&a, &b, 10, &uniform).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn full_sketch_reproduces_ols() {
    let (y, x) = regression_data(50, 3, 4);
    let op = SketchOperator::sampled_rows(50, (0..50).collect(), vec![1.0; 50]).unwrap();
    let full = ols(&y, &x, VarianceMode::Sandwich).unwrap();
    let sk = sketched_ols(&y, &x, &op, VarianceMode::Sandwich).unwrap();
    for i in 0..3 {
        assert_relative_eq!(full.beta[i], sk.beta[i], epsilon = 1e-12);
        assert_relative_eq!(full.std_errors[i], sk.std_errors[i], epsilon = 1e-12);
    }
}

#[test]
fn pooled_single_block_is_the_single_fit() {
    let (y, x) = regression_data(400, 3, 8);
    let c = ContrastVector::unit(3, 2).unwrap();
    let pf = pooled_fit(&y, &x, 100, 1, 5, &c, 1.0).unwrap();
    let one = &pf.per_sketch[0];
    assert_eq!(pf.beta_bar, one.beta);
    assert_eq!(pf.se_beta_bar, one.std_errors);
    assert_relative_eq!(t1_statistic(&pf), (one.beta[2] - 1.0) / one.std_errors[2], epsilon = 1e-12);
}

#[test]
fn pooled_aggregates_follow_their_definitions() {
    let (y, x) = regression_data(2000, 3, 12);
    let c = ContrastVector::unit(3, 1).unwrap();
    let pf = pooled_fit(&y, &x, 200, 5, 3, &c, 0.0).unwrap();
    let j = pf.per_sketch.len() as f64;
    assert_eq!(j, 5.0);
    let mean = pf.per_sketch.iter().map(|f| f.beta[1]).sum::<f64>() / j;
    assert_relative_eq!(pf.beta_bar[1], mean, epsilon = 1e-14);
    let se = (pf.per_sketch.iter().map(|f| f.std_errors[1].powi(2)).sum::<f64>() / (j * (j - 1.0))).sqrt();
    assert_relative_eq!(pf.se_beta_bar[1], se, epsilon = 1e-14);
    let ts: Vec<f64> = pf.per_sketch.iter().map(|f| f.beta[1] / f.std_errors[1]).collect();
    let tbar = ts.iter().sum::<f64>() / j;
    let sd = (ts.iter().map(|t| (t - tbar).powi(2)).sum::<f64>() / (j - 1.0)).sqrt();
    assert_relative_eq!(t2_statistic(&pf).unwrap(), j.sqrt() * tbar / sd, epsilon = 1e-12);
    assert_relative_eq!(t2_critical(5, 0.05).unwrap(), 2.7764451051977987, epsilon = 1e-9);
}

#[test]
fn quantiles_against_closed_forms() {
    // Student t with 1 and 2 degrees of freedom have closed-form quantiles.
    for &p in &[0.6, 0.9, 0.975, 0.995] {
        let cauchy = (std::f64::consts::PI * (p - 0.5)).tan();
        assert_relative_eq!(t_critical(1.0, p).unwrap(), cauchy, max_relative = 1e-10);
        let a = 4.0 * p * (1.0 - p);
        let two = (2.0 * p - 1.0) * (2.0 / a).sqrt();
        assert_relative_eq!(t_critical(2.0, p).unwrap(), two, max_relative = 1e-10);
    }
    assert_relative_eq!(s_value(0.05, 0.5).unwrap(), 1.6448536269514722, epsilon = 1e-12);
}

#[test]
fn m3_grows_with_power_and_with_n() {
    let base = m3_rule(562_170, 5.0, 0.05, 0.8).unwrap();
    assert!(m3_rule(562_170, 5.0, 0.05, 0.9).unwrap().m > base.m);
    assert!(m3_rule(1_000_000, 5.0, 0.05, 0.8).unwrap().m > base.m);
    assert!(base.feasible);
}

#[test]
fn amm_is_unbiased_over_many_draws() {
    let mut rng = stream(77);
    let a = DenseMatrix::from_fn(30, 2, |_, _| rng.sample(StandardNormal)).unwrap();
    let b = DenseMatrix::from_fn(30, 2, |_, _| rng.sample(StandardNormal)).unwrap();
    let truth = a.t_matmul(&b).unwrap();
    let p = optimal_probabilities(&a, &b).unwrap();
    let draws = 4000;
    let samples: Vec<DenseMatrix> = (0..draws).map(|s| amm(&a, &b, 5, &p, s).unwrap()).collect();
    let mut sq_err = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let v: Vec<f64> = samples.iter().map(|s| s.get(i, j)).collect();
            let mean = v.iter().sum::<f64>() / draws as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
            assert!((mean - truth.get(i, j)).abs() <= 4.0 * sd / (draws as f64).sqrt());
        }
    }
    for s in &samples {
        sq_err += s.sub(&truth).unwrap().frobenius_norm().powi(2);
    }
    let mc = sq_err / draws as f64;
    let exact = amm_exact_variance(&a, &b, 5, &p).unwrap();
    assert!((mc - exact).abs() <= 0.1 * exact, "mc {mc} exact {exact}");
}
