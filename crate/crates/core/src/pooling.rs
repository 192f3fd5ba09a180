//! Divide and pool: fit on `J` sketches of disjoint row sets, then combine the
//! estimates and their t statistics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::regression::{sketched_fit_from_stacked, ContrastVector, RegressionFit, VarianceMode};
use crate::rng::{derive, permutation, sample_without_replacement, stream};
use crate::sketch::{CsAccumulator, SchemeId};
use crate::size::t_critical;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolConfig {
    pub m: usize,
    pub j: usize,
    pub scheme: SchemeId,
    pub mode: VarianceMode,
    pub seed: u64,
}

impl PoolConfig {
    /// Uniform sampling without replacement and homoskedastic errors.
    pub fn uniform(m: usize, j: usize, seed: u64) -> Self {
        Self {
            m,
            j,
            scheme: SchemeId::Rs1,
            mode: VarianceMode::Homoskedastic,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PooledFit {
    /// Fits of the sketches that were not singular, in block order.
    pub per_sketch: Vec<RegressionFit>,
    pub beta_bar: Vec<f64>,
    /// `sqrt(sum_j se_j^2 / (J (J - 1)))`, or the single-sketch standard error when `J = 1`.
    pub se_beta_bar: Vec<f64>,
    /// `c' beta_bar`.
    pub contrast_bar: f64,
    pub se_contrast_bar: f64,
    /// Mean of the per-sketch t statistics of the contrast.
    pub t_bar2: f64,
    /// Sample standard deviation of the per-sketch t statistics.
    pub se_t_bar2: f64,
    /// Number of sketches that entered the aggregates.
    pub j: usize,
    pub m: usize,
    /// Sketches dropped because the sketched design lost rank.
    pub failures: usize,
    /// Hypothesized value of `c' beta`.
    pub null_value: f64,
}

/// `J` disjoint blocks of `m` row indices from one partial shuffle of `0..n`.
pub fn uniform_partition(n: usize, m: usize, j: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    check_partition(n, m, j)?;
    let mut rng = stream(seed);
    let drawn = sample_without_replacement(&mut rng, n, m * j);
    Ok(drawn.chunks(m).map(|c| c.to_vec()).collect())
}

/// Block label of every row under a uniformly random split of `0..n` into
/// `J` blocks whose sizes differ by at most one.
pub fn equal_partition(n: usize, j: usize, seed: u64) -> Result<Vec<usize>> {
    if j == 0 || j > n {
        return Err(Error::PartitionImpossible { n, m: 0, j });
    }
    let mut rng = stream(seed);
    let perm = permutation(&mut rng, n);
    let mut label = vec![0usize; n];
    for (pos, &row) in perm.iter().enumerate() {
        label[row] = pos * j / n;
    }
    Ok(label)
}

fn check_partition(n: usize, m: usize, j: usize) -> Result<()> {
    if j == 0 || m == 0 || m.checked_mul(j).is_none_or(|mj| mj > n) {
        return Err(Error::PartitionImpossible { n, m, j });
    }
    Ok(())
}

/// Sketches of `J` disjoint row sets of `stacked`, each with `m` rows, plus the
/// number of source rows behind each.
///
/// Uniform sampling draws `mJ` distinct rows and rescales by `sqrt(n/m)`. The
/// countsketch splits all rows into `J` equal blocks, streams them in row
/// order, and hashes each block into its own `m` buckets.
pub fn pooled_sketches(
    stacked: &DenseMatrix,
    scheme: SchemeId,
    m: usize,
    j: usize,
    seed: u64,
) -> Result<Vec<(DenseMatrix, usize)>> {
    let n = stacked.rows();
    check_partition(n, m, j)?;
    match scheme {
        SchemeId::Rs1 => {
            let w = (n as f64 / m as f64).sqrt();
            let blocks = uniform_partition(n, m, j, seed)?;
            Ok(blocks
                .par_iter()
                .map(|rows| (stacked.select_rows(rows).scaled(w), n))
                .collect())
        }
        SchemeId::Cs => {
            let label = equal_partition(n, j, seed)?;
            let mut accs = (0..j)
                .map(|b| CsAccumulator::new(m, stacked.cols(), derive(seed, &[b as u64 + 1])))
                .collect::<Result<Vec<_>>>()?;
            for (i, &b) in label.iter().enumerate() {
                accs[b].update(i, stacked.row(i))?;
            }
            Ok(accs
                .into_iter()
                .map(|a| {
                    let rows = a.rows_seen();
                    (a.finalize(), rows)
                })
                .collect())
        }
        other => Err(Error::InvalidArgument(format!(
            "pooling supports rs1 and cs, not {other}"
        ))),
    }
}

/// Pooled estimates from per-sketch fits. Sketches listed in `failures` have
/// already been dropped.
pub fn pooled_from_fits(
    fits: Vec<RegressionFit>,
    failures: usize,
    m: usize,
    contrast: &ContrastVector,
    null_value: f64,
) -> Result<PooledFit> {
    let j = fits.len();
    let total = j + failures;
    if j == 0 || (total >= 2 && j < 2) {
        return Err(Error::AllSketchesSingular(total));
    }
    let k = fits[0].k();
    if contrast.len() != k || fits.iter().any(|f| f.k() != k) {
        return Err(Error::DimMismatch("fits and contrast disagree on K".into()));
    }
    let jf = j as f64;
    let beta_bar: Vec<f64> = (0..k)
        .map(|c| fits.iter().map(|f| f.beta[c]).sum::<f64>() / jf)
        .collect();
    let denom = if j >= 2 { jf * (jf - 1.0) } else { 1.0 };
    let se_beta_bar = (0..k)
        .map(|c| (fits.iter().map(|f| f.std_errors[c].powi(2)).sum::<f64>() / denom).sqrt())
        .collect();
    let contrast_bar = fits.iter().map(|f| f.contrast_estimate(contrast)).sum::<f64>() / jf;
    let se_contrast_bar =
        (fits.iter().map(|f| f.contrast_variance(contrast)).sum::<f64>() / denom).sqrt();
    let ts: Vec<f64> = fits.iter().map(|f| f.t_statistic(contrast, null_value)).collect();
    let t_bar2 = ts.iter().sum::<f64>() / jf;
    let se_t_bar2 = if j >= 2 {
        (ts.iter().map(|t| (t - t_bar2).powi(2)).sum::<f64>() / (jf - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(PooledFit {
        per_sketch: fits,
        beta_bar,
        se_beta_bar,
        contrast_bar,
        se_contrast_bar,
        t_bar2,
        se_t_bar2,
        j,
        m,
        failures,
        null_value,
    })
}

/// Fits every sketched `[y | X]` block and pools the results.
pub fn pooled_from_sketches(
    sketches: &[(DenseMatrix, usize)],
    m: usize,
    mode: VarianceMode,
    contrast: &ContrastVector,
    null_value: f64,
) -> Result<PooledFit> {
    let results: Vec<Result<RegressionFit>> = sketches
        .par_iter()
        .map(|(s, rows)| sketched_fit_from_stacked(s, *rows, m, mode))
        .collect();
    let mut fits = Vec::with_capacity(results.len());
    let mut failures = 0;
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(Error::SingularSketch { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    pooled_from_fits(fits, failures, m, contrast, null_value)
}

/// Pooled fit of `y` on `X` over `J` disjoint sketches of `m` rows each.
pub fn pooled_fit_with(
    y: &[f64],
    x: &DenseMatrix,
    cfg: &PoolConfig,
    contrast: &ContrastVector,
    null_value: f64,
) -> Result<PooledFit> {
    if y.len() != x.rows() {
        return Err(Error::DimMismatch(format!(
            "y has {} entries, X has {} rows",
            y.len(),
            x.rows()
        )));
    }
    if cfg.m <= x.cols() {
        return Err(Error::InvalidArgument(format!(
            "sketch size {} must exceed K = {}",
            cfg.m,
            x.cols()
        )));
    }
    let stacked = DenseMatrix::column_vector(y)?.hstack(x)?;
    let sketches = pooled_sketches(&stacked, cfg.scheme, cfg.m, cfg.j, cfg.seed)?;
    pooled_from_sketches(&sketches, cfg.m, cfg.mode, contrast, null_value)
}

/// [`pooled_fit_with`] for uniform sampling and homoskedastic errors.
pub fn pooled_fit(
    y: &[f64],
    x: &DenseMatrix,
    m: usize,
    j: usize,
    seed: u64,
    contrast: &ContrastVector,
    null_value: f64,
) -> Result<PooledFit> {
    pooled_fit_with(y, x, &PoolConfig::uniform(m, j, seed), contrast, null_value)
}

/// `(c' beta_bar - c' beta0) / se(c' beta_bar)`, compared with normal critical values.
pub fn t1_statistic(pf: &PooledFit) -> f64 {
    (pf.contrast_bar - pf.null_value) / pf.se_contrast_bar
}

/// `sqrt(J) t_bar2 / se(t_bar2)`, compared with Student t critical values on `J - 1` degrees.
pub fn t2_statistic(pf: &PooledFit) -> Result<f64> {
    if pf.j < 2 {
        return Err(Error::InvalidArgument(
            "the averaged t statistic needs at least two sketches".into(),
        ));
    }
    if !(pf.se_t_bar2 > 0.0) {
        return Err(Error::DegenerateSpread);
    }
    Ok((pf.j as f64).sqrt() * pf.t_bar2 / pf.se_t_bar2)
}

/// Two-sided critical value for [`t2_statistic`] at level `alpha`.
pub fn t2_critical(j: usize, alpha: f64) -> Result<f64> {
    if j < 2 {
        return Err(Error::InvalidArgument("need J >= 2".into()));
    }
    t_critical((j - 1) as f64, 1.0 - alpha / 2.0)
}

/// `n / (mJ) / (1 - eps)`.
pub fn pooled_variance_bound(n: usize, m: usize, j: usize, epsilon: f64) -> Result<f64> {
    check_partition(n, m, j)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1)")));
    }
    Ok(n as f64 / (m * j) as f64 / (1.0 - epsilon))
}
