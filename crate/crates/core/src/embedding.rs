//! How well a realized sketch embeds a matrix: pairwise column distances,
//! distortion of the singular values of the orthonormal basis, and the relative
//! change of the singular values of the data itself.

use crate::error::{Error, Result};
use crate::linalg::{singular_values, svd, DenseMatrix, DEFAULT_RANK_TOL};
use crate::sketch::{apply_sketch, SketchOperator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingReport {
    pub pairwise_success_rate: f64,
    /// `max_k |1 - sigma_k^2(Pi U)|`.
    pub epsilon_hat: f64,
    /// `|| sigma(Pi A) / sigma(A) - 1 ||_2`.
    pub singular_ratio_norm: f64,
    pub epsilon_target: f64,
    pub delta_target: f64,
}

impl EmbeddingReport {
    /// Whether the realized distortion is within the target.
    pub fn is_embedding(&self) -> bool {
        self.epsilon_hat <= self.epsilon_target
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// Fraction of distinct column pairs `i < j` whose squared distance after
/// sketching lies strictly within `(1 +- epsilon)` of the original. Pairs of
/// identical columns are left out of both numerator and denominator.
pub fn jl_pairwise_success(a: &DenseMatrix, op: &SketchOperator, epsilon: f64) -> Result<f64> {
    let sa = apply_sketch(op, a)?;
    pairwise_success_sketched(a, &sa, epsilon)
}

/// [`jl_pairwise_success`] given `A` and an already computed `Pi A`.
pub fn pairwise_success_sketched(a: &DenseMatrix, sa: &DenseMatrix, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let d = a.cols();
    if d < 2 {
        return Err(Error::InvalidDims("need at least two columns".into()));
    }
    if sa.cols() != d {
        return Err(Error::DimMismatch(format!(
            "sketch has {} columns, data has {d}",
            sa.cols()
        )));
    }
    let orig = pairwise_sq_distances(a);
    let sk = pairwise_sq_distances(sa);
    let mut hits = 0usize;
    let mut pairs = 0usize;
    for (o, s) in orig.iter().zip(&sk) {
        if *o == 0.0 {
            continue;
        }
        pairs += 1;
        if *s > (1.0 - epsilon) * o && *s < (1.0 + epsilon) * o {
            hits += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateInput("all columns coincide".into()));
    }
    Ok(hits as f64 / pairs as f64)
}

/// Squared distances between columns, pairs in lexicographic `(i, j)`, `i < j` order.
fn pairwise_sq_distances(a: &DenseMatrix) -> Vec<f64> {
    let d = a.cols();
    let mut out = vec![0.0; d * (d - 1) / 2];
    for r in 0..a.rows() {
        let row = a.row(r);
        let mut k = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                let diff = row[i] - row[j];
                out[k] += diff * diff;
                k += 1;
            }
        }
    }
    out
}

/// `max_k |1 - sigma_k^2(Pi U)|` with `U` the left singular vectors of `A`.
/// When the sketch has fewer rows than columns the missing singular values count as zero.
pub fn singular_distortion(a: &DenseMatrix, op: &SketchOperator) -> Result<f64> {
    let f = svd(a)?;
    f.check_rank(DEFAULT_RANK_TOL)?;
    let su = apply_sketch(op, &f.u)?;
    distortion_of_sketched_basis(&su)
}

/// `max_k |1 - sigma_k^2|` for a sketched orthonormal basis `Pi U`.
pub fn distortion_of_sketched_basis(su: &DenseMatrix) -> Result<f64> {
    let k = su.cols();
    let mut s = singular_values(su)?;
    s.resize(k, 0.0);
    Ok(s.iter().map(|v| (1.0 - v * v).abs()).fold(0.0, f64::max))
}

/// `|| (Pi U)'(Pi U) - I ||_2`.
pub fn gram_deviation_norm(su: &DenseMatrix) -> Result<f64> {
    let k = su.cols();
    let dev = su.gram().sub(&DenseMatrix::identity(k))?;
    dev.spectral_norm()
}

/// `|| sigma(Pi A) / sigma(A) - 1 ||_2`.
pub fn singular_ratio_norm(a: &DenseMatrix, op: &SketchOperator) -> Result<f64> {
    let sa = apply_sketch(op, a)?;
    let base = singular_values(a)?;
    singular_ratio_norm_sketched(&base, &sa)
}

/// [`singular_ratio_norm`] from the singular values of `A` and the sketch `Pi A`.
pub fn singular_ratio_norm_sketched(base: &[f64], sa: &DenseMatrix) -> Result<f64> {
    let largest = base.first().copied().unwrap_or(0.0);
    if let Some((index, &value)) = base
        .iter()
        .enumerate()
        .find(|(_, v)| largest == 0.0 || **v < DEFAULT_RANK_TOL * largest)
    {
        return Err(Error::RankDeficient {
            index,
            value,
            largest,
        });
    }
    let mut s = singular_values(sa)?;
    s.resize(base.len(), 0.0);
    Ok(s
        .iter()
        .zip(base)
        .map(|(x, b)| (x / b - 1.0).powi(2))
        .sum::<f64>()
        .sqrt())
}

pub fn embedding_report(
    a: &DenseMatrix,
    op: &SketchOperator,
    epsilon: f64,
    delta: f64,
) -> Result<EmbeddingReport> {
    Ok(EmbeddingReport {
        pairwise_success_rate: jl_pairwise_success(a, op, epsilon)?,
        epsilon_hat: singular_distortion(a, op)?,
        singular_ratio_norm: singular_ratio_norm(a, op)?,
        epsilon_target: epsilon,
        delta_target: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sketch::{build_sketch, SchemeId};
    use rand::Rng;
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

    fn rotation(n: usize, seed: u64) -> SketchOperator {
        let q = svd(&random_matrix(n, n, seed)).unwrap().u;
        SketchOperator::from_dense(q)
    }

    #[test]
    fn isometry_preserves_everything() {
        let a = random_matrix(12, 4, 1);
        let op = rotation(12, 2);
        assert_eq!(jl_pairwise_success(&a, &op, 0.1).unwrap(), 1.0);
        assert!(singular_distortion(&a, &op).unwrap() < 1e-12);
        assert!(singular_ratio_norm(&a, &op).unwrap() < 1e-12);
    }

    #[test]
    fn rank_collapse_gives_unit_distortion() {
        let a = motivating_a();
        let op = SketchOperator::sampled_rows(5, vec![0, 4], vec![1.0, 1.0]).unwrap();
        let e = singular_distortion(&a, &op).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_are_skipped() {
        let a = DenseMatrix::from_fn(10, 3, |i, j| if j < 2 { i as f64 } else { 1.0 }).unwrap();
        let op = SketchOperator::sampled_rows(10, vec![0, 1], vec![5f64.sqrt(); 2]).unwrap();
        let s = jl_pairwise_success(&a, &op, 0.5).unwrap();
        // two informative pairs remain
        assert!(s == 0.0 || s == 0.5 || s == 1.0);
    }

    #[test]
    fn distortion_equivalence_at_extremal_singular_value() {
        let a = random_matrix(200, 4, 5);
        let u = svd(&a).unwrap().u;
        for seed in 0..5 {
            let op = build_sketch(SchemeId::Rs1, 200, 40, seed, None).unwrap();
            let su = apply_sketch(&op, &u).unwrap();
            let e = distortion_of_sketched_basis(&su).unwrap();
            let g = gram_deviation_norm(&su).unwrap();
            assert!((e - g).abs() < 1e-10, "{e} vs {g}");
        }
    }

    #[test]
    fn uniform_distortion_concentrates() {
        let a = random_matrix(20_000, 5, 7);
        let mut ok = 0;
        let reps = 40;
        for seed in 0..reps {
            let op = build_sketch(SchemeId::Rs1, 20_000, 1000, seed, None).unwrap();
            if singular_distortion(&a, &op).unwrap() < 0.15 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.9 * reps as f64, "{ok}/{reps}");
    }

    #[test]
    fn report_fields() {
        let a = random_matrix(500, 3, 9);
        let op = build_sketch(SchemeId::Cs, 500, 200, 3, None).unwrap();
        let r = embedding_report(&a, &op, 0.3, 0.1).unwrap();
        assert!(r.epsilon_hat >= 0.0);
        assert!((0.0..=1.0).contains(&r.pairwise_success_rate));
        assert_eq!(r.is_embedding(), r.epsilon_hat <= 0.3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = random_matrix(10, 1, 1);
        let op = build_sketch(SchemeId::Rs1, 10, 5, 1, None).unwrap();
        assert!(jl_pairwise_success(&a, &op, 0.1).is_err());
        let a = random_matrix(10, 2, 1);
        assert!(jl_pairwise_success(&a, &op, 1.5).is_err());
    }
}
