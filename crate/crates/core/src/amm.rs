//! Monte Carlo approximate matrix multiplication: sample rows of `A` and `B`
//! with replacement and average the rescaled outer products.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{stream, SketchRng};

const SUM_TOL: f64 = 1e-12;

/// Vose alias table for O(1) draws from a finite distribution.
#[derive(Clone, Debug)]
pub struct AliasTable {
    p: Vec<f64>,
    accept: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// `p` must be non-negative with a positive sum; it is normalized here.
    pub fn new(p: &[f64]) -> Result<Self> {
        let n = p.len();
        if n == 0 {
            return Err(Error::EmptyInput("sampling distribution".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateInput("all probabilities are zero".into()));
        }
        let p: Vec<f64> = p.iter().map(|v| v / total).collect();
        let mut scaled: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
        let mut accept = vec![0.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            accept[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            // leftovers are 1 up to rounding; zero-probability entries never get here
            accept[i] = if p[i] > 0.0 { 1.0 } else { 0.0 };
        }
        Ok(Self { p, accept, alias })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.p[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    #[inline]
    pub fn sample(&self, rng: &mut SketchRng) -> usize {
        let i = rng.random_range(0..self.p.len());
        if rng.random::<f64>() < self.accept[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// A distribution over rows used as Horvitz-Thompson sampling probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    probabilities: Vec<f64>,
}

impl SamplingDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::EmptyInput("sampling distribution".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let s: f64 = probabilities.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("sampling distribution".into()));
        }
        Ok(Self {
            probabilities: vec![1.0 / n as f64; n],
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

fn check_pair(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::DimMismatch(format!(
            "A has {} rows, B has {}",
            a.rows(),
            b.rows()
        )));
    }
    Ok(())
}

/// `p_k` proportional to `||A_(k)|| ||B_(k)||`.
pub fn optimal_probabilities(a: &DenseMatrix, b: &DenseMatrix) -> Result<SamplingDistribution> {
    check_pair(a, b)?;
    let prod: Vec<f64> = a
        .row_norms()
        .iter()
        .zip(b.row_norms())
        .map(|(x, y)| x * y)
        .collect();
    let total: f64 = prod.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "every row-norm product is zero".into(),
        ));
    }
    Ok(SamplingDistribution {
        probabilities: prod.iter().map(|v| v / total).collect(),
    })
}

fn check_support(a: &DenseMatrix, b: &DenseMatrix, p: &SamplingDistribution) -> Result<()> {
    check_pair(a, b)?;
    if p.len() != a.rows() {
        return Err(Error::DimMismatch(format!(
            "{} probabilities for {} rows",
            p.len(),
            a.rows()
        )));
    }
    for (k, &pk) in p.probabilities().iter().enumerate() {
        if pk == 0.0 && (a.row(k).iter().any(|v| *v != 0.0) && b.row(k).iter().any(|v| *v != 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "row {k} contributes to A'B but has probability zero"
            )));
        }
    }
    Ok(())
}

/// `(1/m) sum_s A_(k_s)' B_(k_s) / p_{k_s}` for the given draws.
pub fn amm_with_indices(
    a: &DenseMatrix,
    b: &DenseMatrix,
    p: &SamplingDistribution,
    draws: &[usize],
) -> Result<DenseMatrix> {
    check_support(a, b, p)?;
    if draws.is_empty() {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let (da, db) = (a.cols(), b.cols());
    let mut out = vec![0.0; da * db];
    for &k in draws {
        let w = 1.0 / p.probabilities()[k];
        let br = b.row(k);
        for (i, &av) in a.row(k).iter().enumerate() {
            let s = av * w;
            for (o, &bv) in out[i * db..(i + 1) * db].iter_mut().zip(br) {
                *o += s * bv;
            }
        }
    }
    let inv_m = 1.0 / draws.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv_m);
    Ok(DenseMatrix::from_raw(da, db, out))
}

/// Approximates `A'B` from `m` rows drawn independently with replacement from `p`.
pub fn amm(
    a: &DenseMatrix,
    b: &DenseMatrix,
    m: usize,
    p: &SamplingDistribution,
    seed: u64,
) -> Result<DenseMatrix> {
    check_support(a, b, p)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let table = AliasTable::new(p.probabilities())?;
    let mut rng = stream(seed);
    let draws: Vec<usize> = (0..m).map(|_| table.sample(&mut rng)).collect();
    amm_with_indices(a, b, p, &draws)
}

/// `(1/m) ||A||_F^2 ||B||_F^2`.
pub fn amm_variance_bound(a: &DenseMatrix, b: &DenseMatrix, m: usize) -> f64 {
    let fa = a.frobenius_norm();
    let fb = b.frobenius_norm();
    fa * fa * fb * fb / m as f64
}

/// `E ||C~ - A'B||_F^2 = (1/m) [ sum_k ||A_(k)||^2 ||B_(k)||^2 / p_k - ||A'B||_F^2 ]`.
pub fn amm_exact_variance(
    a: &DenseMatrix,
    b: &DenseMatrix,
    m: usize,
    p: &SamplingDistribution,
) -> Result<f64> {
    check_support(a, b, p)?;
    let mut s = 0.0;
    for (k, (na, nb)) in a.row_norms().iter().zip(b.row_norms()).enumerate() {
        let pk = p.probabilities()[k];
        if pk > 0.0 {
            s += na * na * nb * nb / pk;
        }
    }
    let c = a.t_matmul(b)?.frobenius_norm();
    Ok((s - c * c) / m as f64)
}

/// `ceil(1 / (delta epsilon^2))`.
pub fn amm_required_m(epsilon: f64, delta: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0 && delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon and delta must lie in (0, 1], got {epsilon}, {delta}"
        )));
    }
    // guard against 1/(0.1 * 0.01) landing a hair above an integer
    let x = 1.0 / (delta * epsilon * epsilon);
    let r = x.round();
    Ok(if (x - r).abs() < 1e-9 * r { r } else { x.ceil() } as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn motivating_a() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-0.25, 0.5],
            vec![0.25, -0.5],
            vec![0.0, 0.0],
        ])
        .unwrap()
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal)).unwrap()
    }

    #[test]
    fn optimal_p_for_motivating_matrix() {
        let a = motivating_a();
        let p = optimal_probabilities(&a, &a).unwrap();
        let raw = [1.0, 1.0, 0.3125, 0.3125, 0.0];
        let total: f64 = raw.iter().sum();
        for (pk, r) in p.probabilities().iter().zip(raw) {
            assert!((pk - r / total).abs() < 1e-15);
        }
        assert_eq!(p.probabilities()[4], 0.0);
    }

    #[test]
    fn optimal_p_for_identity_is_uniform() {
        let i = DenseMatrix::identity(6);
        let p = optimal_probabilities(&i, &i).unwrap();
        assert!(p.probabilities().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn optimal_p_rejects_all_zero() {
        let z = DenseMatrix::zeros(3, 2);
        assert!(matches!(
            optimal_probabilities(&z, &z),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn constant_column_is_exact() {
        let ones = DenseMatrix::from_fn(20, 1, |_, _| 1.0).unwrap();
        let p = SamplingDistribution::uniform(20).unwrap();
        for seed in 0..10 {
            let c = amm(&ones, &ones, 3, &p, seed).unwrap();
            assert!((c.get(0, 0) - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_draw_is_exact() {
        let a = random_matrix(8, 3, 1);
        let b = random_matrix(8, 2, 2);
        let p = SamplingDistribution::uniform(8).unwrap();
        let draws = [3, 1, 7, 0, 5, 2, 6, 4];
        let c = amm_with_indices(&a, &b, &p, &draws).unwrap();
        assert!(c.max_abs_diff(&a.t_matmul(&b).unwrap()) < 1e-12);
    }

    #[test]
    fn bound_arithmetic() {
        let a = DenseMatrix::from_rows(&[vec![0.6], vec![0.8]]).unwrap();
        assert!((amm_variance_bound(&a, &a, 10) - 0.1).abs() < 1e-15);
        let m = motivating_a();
        let sq: f64 = m.row_norms().iter().map(|v| v * v).sum();
        assert!((amm_variance_bound(&m, &m, 2) - sq * sq / 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_dominates_exact_variance_under_optimal_p() {
        for seed in 0..5 {
            let a = random_matrix(30, 3, seed);
            let b = random_matrix(30, 2, seed + 100);
            let p = optimal_probabilities(&a, &b).unwrap();
            let exact = amm_exact_variance(&a, &b, 7, &p).unwrap();
            assert!(exact >= 0.0);
            assert!(exact <= amm_variance_bound(&a, &b, 7) + 1e-12);
        }
    }

    #[test]
    fn required_m_values() {
        assert_eq!(amm_required_m(0.1, 0.1).unwrap(), 1000);
        assert_eq!(amm_required_m(0.05, 0.01).unwrap(), 40000);
        assert_eq!(amm_required_m(1.0, 1.0).unwrap(), 1);
        assert!(amm_required_m(0.0, 0.5).is_err());
    }

    #[test]
    fn zero_probability_on_informative_row_is_rejected() {
        let a = motivating_a();
        let p = SamplingDistribution::new(vec![0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!(amm(&a, &a, 4, &p, 0).is_err());
        // zero probability on the empty row is fine
        let p = SamplingDistribution::new(vec![0.25, 0.25, 0.25, 0.25, 0.0]).unwrap();
        assert!(amm(&a, &a, 4, &p, 0).is_ok());
    }

    #[test]
    fn alias_table_frequencies() {
        let probs = [0.5, 0.0, 0.2, 0.3];
        let t = AliasTable::new(&probs).unwrap();
        let mut rng = stream(4);
        let reps = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            counts[t.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        for (c, p) in counts.iter().zip(probs) {
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((*c as f64 / reps as f64 - p).abs() <= 4.0 * se + 1e-12);
        }
    }
}
