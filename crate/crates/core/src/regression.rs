//! Full-sample and sketched least squares, the deterministic bound checks that
//! relate them, countsketch variance centering, and F tests.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::embedding::distortion_of_sketched_basis;
use crate::error::{Error, Result};
use crate::linalg::{
    dot, inverse_gram_from_svd, numeric_rank, quad_form, solve_spd, svd, DenseMatrix,
    DEFAULT_RANK_TOL,
};
use crate::sketch::{apply_sketch, apply_sketch_transpose, SketchOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarianceMode {
    Homoskedastic,
    /// Heteroskedasticity-robust `(X'X)^{-1} X' diag(e^2) X (X'X)^{-1}`.
    Sandwich,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::Homoskedastic => "homo",
            VarianceMode::Sandwich => "sandwich",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "homo" | "homoskedastic" => Ok(VarianceMode::Homoskedastic),
            "sandwich" | "hc0" | "robust" => Ok(VarianceMode::Sandwich),
            other => Err(Error::InvalidArgument(format!("unknown variance mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegressionFit {
    pub beta: Vec<f64>,
    pub covariance: DenseMatrix,
    pub std_errors: Vec<f64>,
    /// Sum of squared residuals on the data the fit was computed from.
    pub ssr: f64,
    pub n_source: usize,
    /// Rows used in the fit; equals `n_source` for a full-sample fit.
    pub m_used: usize,
    pub variance_mode: VarianceMode,
    /// Error-variance estimate on the scale of the original data.
    pub sigma2_hat: f64,
    /// `n / m` for a sketched fit, 1 for the full sample.
    pub scale: f64,
    /// `(X'X)^{-1}` of the design the fit was computed from.
    pub inverse_gram: DenseMatrix,
}

impl RegressionFit {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    /// Residual degrees of freedom.
    pub fn dof(&self) -> usize {
        self.m_used - self.k()
    }

    pub fn contrast_estimate(&self, c: &ContrastVector) -> f64 {
        dot(c.as_slice(), &self.beta)
    }

    pub fn contrast_variance(&self, c: &ContrastVector) -> f64 {
        quad_form(&self.covariance, c.as_slice())
    }

    /// `(c'beta - value) / se(c'beta)`.
    pub fn t_statistic(&self, c: &ContrastVector, value: f64) -> f64 {
        (self.contrast_estimate(c) - value) / self.contrast_variance(c).sqrt()
    }
}

/// A non-zero linear combination of the coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastVector(Vec<f64>);

impl ContrastVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) || c.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(
                "contrast must be finite and not identically zero".into(),
            ));
        }
        Ok(Self(c))
    }

    /// The `k`-th unit vector of length `len`.
    pub fn unit(len: usize, k: usize) -> Result<Self> {
        if k >= len {
            return Err(Error::InvalidDims(format!("coefficient {k} of {len}")));
        }
        let mut c = vec![0.0; len];
        c[k] = 1.0;
        Ok(Self(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_xy(y: &[f64], x: &DenseMatrix) -> Result<()> {
    if y.len() != x.rows() {
        return Err(Error::DimMismatch(format!(
            "y has {} entries, X has {} rows",
            y.len(),
            x.rows()
        )));
    }
    if let Some(p) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: p, col: 0 });
    }
    Ok(())
}

struct CoreFit {
    beta: Vec<f64>,
    residuals: Vec<f64>,
    ssr: f64,
    inverse_gram: DenseMatrix,
}

fn core_fit(y: &[f64], x: &DenseMatrix) -> Result<CoreFit> {
    let f = svd(x)?;
    f.check_rank(DEFAULT_RANK_TOL)?;
    let uty = f.u.t_mat_vec(y)?;
    let k = x.cols();
    let mut beta = vec![0.0; k];
    for (l, (&c, s)) in uty.iter().zip(&f.singular_values).enumerate() {
        let w = c / s;
        for (i, b) in beta.iter_mut().enumerate() {
            *b += f.v.get(i, l) * w;
        }
    }
    let fitted = x.mat_vec(&beta)?;
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let ssr = dot(&residuals, &residuals);
    Ok(CoreFit {
        beta,
        residuals,
        ssr,
        inverse_gram: inverse_gram_from_svd(&f),
    })
}

fn sandwich(x: &DenseMatrix, residuals: &[f64], inverse_gram: &DenseMatrix) -> DenseMatrix {
    let k = x.cols();
    let mut meat = DenseMatrix::zeros(k, k);
    for (i, &e) in residuals.iter().enumerate() {
        let w = e * e;
        if w == 0.0 {
            continue;
        }
        let r = x.row(i);
        let dst = meat.as_mut_slice();
        for a in 0..k {
            for b in 0..k {
                dst[a * k + b] += w * r[a] * r[b];
            }
        }
    }
    let left = inverse_gram.matmul(&meat).expect("square");
    symmetrize(left.matmul(inverse_gram).expect("square"))
}

fn symmetrize(mut m: DenseMatrix) -> DenseMatrix {
    let k = m.rows();
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

fn finish(
    core: CoreFit,
    x: &DenseMatrix,
    mode: VarianceMode,
    n_source: usize,
    scale: f64,
) -> RegressionFit {
    let m_used = x.rows();
    let k = x.cols();
    // On sketched data the residual mean square estimates scale * sigma^2.
    let sigma2_hat = core.ssr / (m_used - k) as f64 / scale;
    let covariance = match mode {
        VarianceMode::Homoskedastic => core.inverse_gram.scaled(sigma2_hat * scale),
        VarianceMode::Sandwich => sandwich(x, &core.residuals, &core.inverse_gram),
    };
    let std_errors = (0..k).map(|i| covariance.get(i, i).max(0.0).sqrt()).collect();
    RegressionFit {
        beta: core.beta,
        covariance,
        std_errors,
        ssr: core.ssr,
        n_source,
        m_used,
        variance_mode: mode,
        sigma2_hat,
        scale,
        inverse_gram: core.inverse_gram,
    }
}

/// Ordinary least squares through the thin SVD of `X`.
pub fn ols(y: &[f64], x: &DenseMatrix, mode: VarianceMode) -> Result<RegressionFit> {
    check_xy(y, x)?;
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InvalidDims(format!("need n > K, got n={n}, K={k}")));
    }
    let core = core_fit(y, x)?;
    Ok(finish(core, x, mode, n, 1.0))
}

/// Least squares on `(Pi y, Pi X)`.
///
/// The homoskedastic covariance is `sigma2_hat * (n/m) * (X~'X~)^{-1}` where
/// `sigma2_hat = (m/n) * SSR~ / (m_used - K)`.
pub fn sketched_ols(
    y: &[f64],
    x: &DenseMatrix,
    op: &SketchOperator,
    mode: VarianceMode,
) -> Result<RegressionFit> {
    check_xy(y, x)?;
    let yx = DenseMatrix::column_vector(y)?.hstack(x)?;
    let s = apply_sketch(op, &yx)?;
    sketched_fit_from_stacked(&s, op.n, op.m, mode)
}

/// Fit on an already sketched `[y~ | X~]`, with `n` source rows and nominal sketch size `m`.
pub fn sketched_fit_from_stacked(
    stacked: &DenseMatrix,
    n: usize,
    m: usize,
    mode: VarianceMode,
) -> Result<RegressionFit> {
    let k = stacked.cols().saturating_sub(1);
    if k == 0 {
        return Err(Error::InvalidDims("need at least one regressor".into()));
    }
    let ys = stacked.column(0);
    let xs = stacked.select_columns(&(1..=k).collect::<Vec<_>>());
    let rows = xs.rows();
    let rank = if rows == 0 {
        0
    } else {
        numeric_rank(&xs, DEFAULT_RANK_TOL)?
    };
    if rank < k || rows <= k {
        return Err(Error::SingularSketch { rank, cols: k });
    }
    let core = core_fit(&ys, &xs).map_err(|e| match e {
        Error::RankDeficient { .. } => Error::SingularSketch { rank, cols: k },
        other => other,
    })?;
    Ok(finish(core, &xs, mode, n, n as f64 / m as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma3Report {
    /// `SSR~ / SSR^`.
    pub ssr_ratio: f64,
    /// `|| beta~ - beta^ ||_2`.
    pub beta_dist: f64,
    /// `epsilon * sqrt(SSR^) / sigma_min(X)`.
    pub bound: f64,
    /// Singular-value distortion of the sketch on the column space of `[X, y]`.
    pub epsilon_used: f64,
    pub ssr_holds: bool,
    pub beta_holds: bool,
}

/// Compares a sketched fit with the full-sample fit.
///
/// The distortion is measured on the span of `[X, y]`, which contains both
/// the fitted values and the full-sample residual.
pub fn lemma3_check(
    fit_full: &RegressionFit,
    fit_sketch: &RegressionFit,
    y: &[f64],
    x: &DenseMatrix,
    op: &SketchOperator,
) -> Result<Lemma3Report> {
    check_xy(y, x)?;
    let xy = x.hstack(&DenseMatrix::column_vector(y)?)?;
    let basis = svd(&xy)?;
    let r = numeric_rank(&xy, DEFAULT_RANK_TOL)?;
    let u = basis.u.select_columns(&(0..r).collect::<Vec<_>>());
    let epsilon = distortion_of_sketched_basis(&apply_sketch(op, &u)?)?;
    let sigma_min = svd(x)?.smallest();
    let ssr_ratio = if fit_full.ssr > 0.0 {
        fit_sketch.ssr / fit_full.ssr
    } else if fit_sketch.ssr == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let beta_dist = fit_sketch
        .beta
        .iter()
        .zip(&fit_full.beta)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let bound = epsilon * fit_full.ssr.sqrt() / sigma_min;
    let tiny = 1e-12 * (1.0 + fit_full.ssr);
    Ok(Lemma3Report {
        ssr_ratio,
        beta_dist,
        bound,
        epsilon_used: epsilon,
        ssr_holds: fit_sketch.ssr <= (1.0 + epsilon) * fit_full.ssr + tiny,
        beta_holds: beta_dist <= bound + 1e-12,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGramReport {
    pub relative_error: f64,
    pub bound: f64,
    pub epsilon: f64,
    pub holds: bool,
}

/// `|c'[(X'X)^{-1} - (X~'X~)^{-1}]c| / c'(X'X)^{-1}c` against `eps / (1 - eps)`.
pub fn inverse_gram_distortion(
    x: &DenseMatrix,
    op: &SketchOperator,
    c: &ContrastVector,
) -> Result<InverseGramReport> {
    if c.len() != x.cols() {
        return Err(Error::DimMismatch(format!(
            "contrast of length {} for {} columns",
            c.len(),
            x.cols()
        )));
    }
    let f = svd(x)?;
    f.check_rank(DEFAULT_RANK_TOL)?;
    let k = x.cols();
    let su = apply_sketch(op, &f.u)?;
    let epsilon = distortion_of_sketched_basis(&su)?;
    let xs = apply_sketch(op, x)?;
    let rank = numeric_rank(&xs, DEFAULT_RANK_TOL)?;
    if rank < k {
        return Err(Error::SingularSketch { rank, cols: k });
    }
    let full = inverse_gram_from_svd(&f);
    let sk = inverse_gram_from_svd(&svd(&xs).map_err(|_| Error::SingularSketch { rank, cols: k })?);
    let c = c.as_slice();
    let base = quad_form(&full, c);
    let relative_error = (base - quad_form(&sk, c)).abs() / base;
    let bound = if epsilon < 1.0 {
        epsilon / (1.0 - epsilon)
    } else {
        f64::INFINITY
    };
    Ok(InverseGramReport {
        relative_error,
        bound,
        epsilon,
        holds: relative_error <= bound * (1.0 + 1e-10) + 1e-12,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseBounds {
    pub lower: f64,
    pub upper: f64,
}

impl MseBounds {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower * (1.0 - 1e-10) && x <= self.upper * (1.0 + 1e-10)
    }
}

/// `[(n/m)/(1+eps), (n/m)/(1-eps)]`, the range of the variance ratio of sketched
/// to full-sample estimates of a linear contrast.
pub fn mse_ratio_bounds(n: usize, m: usize, epsilon: f64) -> Result<MseBounds> {
    if !(0.0..1.0).contains(&epsilon) || m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= eps < 1 and 1 <= m <= n, got eps={epsilon}, n={n}, m={m}"
        )));
    }
    let r = n as f64 / m as f64;
    Ok(MseBounds {
        lower: r / (1.0 + epsilon),
        upper: r / (1.0 - epsilon),
    })
}

/// `(max Omega / min Omega) (n/m) (1+eps) / (1-eps)^2`.
pub fn hetero_mse_bound(omega_diag: &[f64], n: usize, m: usize, epsilon: f64) -> Result<f64> {
    if omega_diag.is_empty() || omega_diag.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument(
            "error variances must be positive and finite".into(),
        ));
    }
    if !(0.0..1.0).contains(&epsilon) || m == 0 {
        return Err(Error::InvalidArgument(format!("bad epsilon {epsilon} or m {m}")));
    }
    let hi = omega_diag.iter().copied().fold(f64::MIN, f64::max);
    let lo = omega_diag.iter().copied().fold(f64::MAX, f64::min);
    Ok(hi / lo * (n as f64 / m as f64) * (1.0 + epsilon) / (1.0 - epsilon).powi(2))
}

/// Exact conditional covariance of the sketched estimator given `Pi`:
/// `(X~'X~)^{-1} X' Pi'Pi Omega Pi'Pi X (X~'X~)^{-1}` for diagonal `Omega`.
pub fn conditional_covariance(
    x: &DenseMatrix,
    op: &SketchOperator,
    omega_diag: &[f64],
) -> Result<DenseMatrix> {
    if omega_diag.len() != x.rows() {
        return Err(Error::DimMismatch(format!(
            "{} variances for {} rows",
            omega_diag.len(),
            x.rows()
        )));
    }
    let xs = apply_sketch(op, x)?;
    let k = x.cols();
    let rank = numeric_rank(&xs, DEFAULT_RANK_TOL)?;
    if rank < k {
        return Err(Error::SingularSketch { rank, cols: k });
    }
    let inv = inverse_gram_from_svd(&svd(&xs)?);
    let back = apply_sketch_transpose(op, &xs)?;
    let mut meat = DenseMatrix::zeros(k, k);
    for (i, &w) in omega_diag.iter().enumerate() {
        let r = back.row(i);
        if r.iter().all(|v| *v == 0.0) {
            continue;
        }
        let dst = meat.as_mut_slice();
        for a in 0..k {
            for b in 0..k {
                dst[a * k + b] += w * r[a] * r[b];
            }
        }
    }
    Ok(symmetrize(inv.matmul(&meat)?.matmul(&inv)?))
}

/// Covariance of the full-sample estimator, `(X'X)^{-1} X'Omega X (X'X)^{-1}`.
pub fn full_sample_covariance(x: &DenseMatrix, omega_diag: &[f64]) -> Result<DenseMatrix> {
    if omega_diag.len() != x.rows() {
        return Err(Error::DimMismatch(format!(
            "{} variances for {} rows",
            omega_diag.len(),
            x.rows()
        )));
    }
    let f = svd(x)?;
    f.check_rank(DEFAULT_RANK_TOL)?;
    let inv = inverse_gram_from_svd(&f);
    let res: Vec<f64> = omega_diag.iter().map(|w| w.sqrt()).collect();
    Ok(sandwich(x, &res, &inv))
}

/// `A(Omega, m, n) = Omega + (tr(Omega) I - Omega) / m`, the diagonal matrix that
/// centers `Pi'Pi Omega Pi'Pi` for a countsketch `Pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteringMatrix {
    pub omega_diag: Vec<f64>,
    pub m: usize,
}

impl CenteringMatrix {
    /// `tr(Omega) / m`, the part that does not depend on the row.
    pub fn trace_term(&self) -> f64 {
        self.omega_diag.iter().sum::<f64>() / self.m as f64
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let t = self.trace_term();
        let inv_m = 1.0 / self.m as f64;
        self.omega_diag.iter().map(|w| w * (1.0 - inv_m) + t).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::diagonal(&self.diagonal()).expect("finite diagonal")
    }
}

pub fn countsketch_centering(omega_diag: &[f64], m: usize, n: usize) -> Result<CenteringMatrix> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if omega_diag.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} variances for n = {n}",
            omega_diag.len()
        )));
    }
    if omega_diag.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("variances must be finite".into()));
    }
    Ok(CenteringMatrix {
        omega_diag: omega_diag.to_vec(),
        m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FTestResult {
    /// `(R b - r)'[R V R']^{-1}(R b - r) / q`.
    pub statistic: f64,
    pub q: usize,
    pub dof2: usize,
    pub noncentrality: f64,
    /// `dof2 (q + phi) / (q (dof2 - 2))`, or NaN for `dof2 <= 2`.
    pub expected_f: f64,
    /// Upper tail probability of the statistic under the central `F(q, dof2)`.
    pub p_value: f64,
}

fn restriction_parts(
    restriction: &DenseMatrix,
    r: &[f64],
    beta: &[f64],
    cov: &DenseMatrix,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let (q, k) = restriction.shape();
    if k != beta.len() || r.len() != q || q == 0 || q > k {
        return Err(Error::DimMismatch(format!(
            "restriction {q}x{k} with {} targets for {} coefficients",
            r.len(),
            beta.len()
        )));
    }
    let diff: Vec<f64> = restriction
        .mat_vec(beta)?
        .iter()
        .zip(r)
        .map(|(a, b)| a - b)
        .collect();
    let rvr = restriction.matmul(cov)?.matmul(&restriction.transpose())?;
    Ok((diff, rvr))
}

/// `(R b0 - r)'[R V R']^{-1}(R b0 - r)` at the supplied truth `b0`.
pub fn noncentrality(
    restriction: &DenseMatrix,
    r: &[f64],
    beta0: &[f64],
    cov: &DenseMatrix,
) -> Result<f64> {
    let (diff, rvr) = restriction_parts(restriction, r, beta0, cov)?;
    let sol = solve_spd(&rvr, &diff).ok_or(Error::SingularRestriction)?;
    Ok(dot(&diff, &sol))
}

pub fn expected_f(q: usize, dof2: usize, phi: f64) -> f64 {
    if dof2 <= 2 {
        return f64::NAN;
    }
    dof2 as f64 * (q as f64 + phi) / (q as f64 * (dof2 as f64 - 2.0))
}

/// F test of `R beta = r`; `truth`, when given, sets the non-centrality.
pub fn f_test(
    fit: &RegressionFit,
    restriction: &DenseMatrix,
    r: &[f64],
    truth: Option<&[f64]>,
) -> Result<FTestResult> {
    let (diff, rvr) = restriction_parts(restriction, r, &fit.beta, &fit.covariance)?;
    let q = restriction.rows();
    if fit.m_used <= fit.k() {
        return Err(Error::InvalidDims("no residual degrees of freedom".into()));
    }
    let dof2 = fit.dof();
    let sol = solve_spd(&rvr, &diff).ok_or(Error::SingularRestriction)?;
    let statistic = (dot(&diff, &sol) / q as f64).max(0.0);
    let phi = match truth {
        Some(b0) => noncentrality(restriction, r, b0, &fit.covariance)?,
        None => 0.0,
    };
    let dist = FisherSnedecor::new(q as f64, dof2 as f64)
        .map_err(|e| Error::DomainError(e.to_string()))?;
    Ok(FTestResult {
        statistic,
        q,
        dof2,
        noncentrality: phi,
        expected_f: expected_f(q, dof2, phi),
        p_value: dist.sf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sketch::{build_sketch, SchemeId};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn design(n: usize, k: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream(seed);
        DenseMatrix::from_fn(n, k, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        })
        .unwrap()
    }

    fn response(x: &DenseMatrix, beta: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed);
        x.mat_vec(beta)
            .unwrap()
            .into_iter()
            .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Solves the normal equations by Gaussian elimination with partial pivoting.
    fn normal_equations(y: &[f64], x: &DenseMatrix) -> Vec<f64> {
        let k = x.cols();
        let g = x.gram();
        let b = x.t_mat_vec(y).unwrap();
        let mut aug: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut r = g.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            for r in 0..k {
                if r != col {
                    let f = aug[r][col] / aug[col][col];
                    for c in col..=k {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        (0..k).map(|i| aug[i][k] / aug[i][i]).collect()
    }

    #[test]
    fn exact_fit_has_zero_ssr() {
        let x = design(30, 3, 1);
        let y = x.mat_vec(&[1.0, 1.0, 1.0]).unwrap();
        let f = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        for b in &f.beta {
            assert!((b - 1.0).abs() < 1e-12);
        }
        assert!(f.ssr < 1e-20);
    }

    #[test]
    fn matches_normal_equations() {
        let x = design(50, 2, 2);
        let y = response(&x, &[0.5, -2.0], 1.0, 3);
        let f = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let oracle = normal_equations(&y, &x);
        for (a, b) in f.beta.iter().zip(oracle) {
            assert!((a - b).abs() <= 1e-10);
        }
        // residuals are orthogonal to the design
        let e: Vec<f64> = y
            .iter()
            .zip(x.mat_vec(&f.beta).unwrap())
            .map(|(a, b)| a - b)
            .collect();
        let xte = x.t_mat_vec(&e).unwrap();
        let scale = x.frobenius_norm() * crate::linalg::norm2(&y);
        assert!(xte.iter().all(|v| v.abs() <= 1e-8 * scale));
    }

    #[test]
    fn sandwich_matches_explicit_formula() {
        let x = design(40, 2, 4);
        let y = response(&x, &[1.0, 2.0], 0.5, 5);
        let f = ols(&y, &x, VarianceMode::Sandwich).unwrap();
        let inv = f.inverse_gram.clone();
        let e: Vec<f64> = y
            .iter()
            .zip(x.mat_vec(&f.beta).unwrap())
            .map(|(a, b)| a - b)
            .collect();
        let xw = DenseMatrix::from_fn(40, 2, |i, j| x.get(i, j) * e[i]).unwrap();
        let expected = inv.matmul(&xw.gram()).unwrap().matmul(&inv).unwrap();
        assert!(f.covariance.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identity_sketch_equals_full_fit() {
        let x = design(25, 3, 6);
        let y = response(&x, &[1.0, 0.0, -1.0], 1.0, 7);
        let op = SketchOperator::sampled_rows(25, (0..25).collect(), vec![1.0; 25]).unwrap();
        let a = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let b = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).unwrap();
        for (p, q) in a.beta.iter().zip(&b.beta) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(a.covariance.max_abs_diff(&b.covariance) < 1e-12);
    }

    #[test]
    fn sketched_covariance_carries_size_factor() {
        let x = design(1000, 3, 8);
        let y = response(&x, &[1.0, 1.0, 1.0], 1.0, 9);
        let op = build_sketch(SchemeId::Rs1, 1000, 100, 3, None).unwrap();
        let f = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).unwrap();
        let expected = f.inverse_gram.scaled(f.sigma2_hat * 10.0);
        assert!(f.covariance.max_abs_diff(&expected) < 1e-14);
        assert_eq!(f.scale, 10.0);
        assert_eq!(f.m_used, 100);
        assert!((f.sigma2_hat - 1.0).abs() < 0.35);
    }

    #[test]
    fn collapsed_sketch_is_reported() {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-0.25, 0.5],
            vec![0.25, -0.5],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let y = vec![1.0, 2.0, 0.5, -0.5, 0.0];
        let op = SketchOperator::sampled_rows(5, vec![0, 4, 4], vec![1.0; 3]).unwrap();
        assert!(matches!(
            sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic),
            Err(Error::SingularSketch { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DenseMatrix::from_fn(10, 2, |i, _| i as f64).unwrap();
        let y = vec![0.0; 10];
        assert!(matches!(
            ols(&y, &x, VarianceMode::Homoskedastic),
            Err(Error::RankDeficient { index: 1, .. })
        ));
    }

    #[test]
    fn isometry_gives_trivial_bound_reports() {
        let x = design(12, 2, 10);
        let y = response(&x, &[1.0, 2.0], 1.0, 11);
        let q = svd(&DenseMatrix::from_fn(12, 12, |i, j| ((i * 7 + j * 3) % 11) as f64 + (i == j) as u8 as f64).unwrap())
            .unwrap()
            .u;
        let op = SketchOperator::from_dense(q.transpose());
        let full = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let sk = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).unwrap();
        let l3 = lemma3_check(&full, &sk, &y, &x, &op).unwrap();
        assert!((l3.ssr_ratio - 1.0).abs() < 1e-10);
        assert!(l3.beta_dist < 1e-10);
        let c = ContrastVector::new(vec![1.0, -1.0]).unwrap();
        let ig = inverse_gram_distortion(&x, &op, &c).unwrap();
        assert!(ig.relative_error < 1e-10);
    }

    #[test]
    fn orthonormal_design_reduces_inverse_gram_error() {
        let u = svd(&design(200, 3, 12)).unwrap().u;
        let op = build_sketch(SchemeId::Rs1, 200, 60, 2, None).unwrap();
        let c = ContrastVector::new(vec![0.3, -1.0, 2.0]).unwrap();
        let r = inverse_gram_distortion(&u, &op, &c).unwrap();
        let su = apply_sketch(&op, &u).unwrap();
        let inv = inverse_gram_from_svd(&svd(&su).unwrap());
        let cc = c.as_slice();
        let expected = (quad_form(&inv, cc) - dot(cc, cc)).abs() / dot(cc, cc);
        assert!((r.relative_error - expected).abs() < 1e-10);
        assert!(r.holds);
    }

    #[test]
    fn bound_arithmetic() {
        let b = mse_ratio_bounds(1_000_000, 10_000, 0.1).unwrap();
        assert!((b.lower - 90.909_090_909).abs() < 1e-6);
        assert!((b.upper - 111.111_111_111).abs() < 1e-6);
        let b = mse_ratio_bounds(10, 10, 0.0).unwrap();
        assert_eq!((b.lower, b.upper), (1.0, 1.0));
        let omega: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 4.0 }).collect();
        let h = hetero_mse_bound(&omega, 1000, 10, 0.1).unwrap();
        assert!((h - 4.0 * 100.0 * 1.1 / 0.81).abs() < 1e-9);
        assert!((h - 543.2).abs() < 0.01);
        let flat = hetero_mse_bound(&[2.0; 5], 1000, 10, 0.1).unwrap();
        assert!((flat - 100.0 * 1.1 / 0.81).abs() < 1e-9);
    }

    #[test]
    fn centering_closed_forms() {
        let sigma2 = 2.5;
        let (n, m) = (64, 8);
        let a = countsketch_centering(&vec![sigma2; n], m, n).unwrap();
        for v in a.diagonal() {
            assert!((v - sigma2 * (n + m - 1) as f64 / m as f64).abs() < 1e-12);
        }
        let dev = a
            .to_dense()
            .scaled(m as f64 / n as f64)
            .sub(&DenseMatrix::identity(n).scaled(sigma2))
            .unwrap()
            .spectral_norm()
            .unwrap();
        assert!((dev - sigma2 * (m - 1) as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn f_test_basics() {
        let x = design(200, 3, 13);
        let y = response(&x, &[1.0, 0.5, -0.5], 1.0, 14);
        let fit = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let r = DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        // testing the estimate itself gives a zero statistic
        let t = f_test(&fit, &r, &[fit.beta[1]], None).unwrap();
        assert!(t.statistic.abs() < 1e-20);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        // one restriction: F equals the squared t statistic
        let t = f_test(&fit, &r, &[0.0], Some(&[1.0, 0.5, -0.5])).unwrap();
        let c = ContrastVector::unit(3, 1).unwrap();
        assert!((t.statistic - fit.t_statistic(&c, 0.0).powi(2)).abs() < 1e-9);
        let phi = 0.25 / fit.covariance.get(1, 1);
        assert!((t.noncentrality - phi).abs() < 1e-9 * phi);
        assert!((expected_f(1, 100, 0.0) - 100.0 / 98.0).abs() < 1e-15);
        let singular = DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
        assert!(matches!(
            f_test(&fit, &singular, &[0.0, 0.0], None),
            Err(Error::SingularRestriction)
        ));
    }

    #[test]
    fn relative_noncentrality_is_variance_ratio() {
        let x = design(2000, 3, 15);
        let y = response(&x, &[1.0, 1.0, 1.0], 1.0, 16);
        let full = ols(&y, &x, VarianceMode::Homoskedastic).unwrap();
        let op = build_sketch(SchemeId::Rs1, 2000, 200, 1, None).unwrap();
        let sk = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).unwrap();
        let r = DenseMatrix::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let b0 = [1.0, 1.0, 1.1];
        let phi_n = noncentrality(&r, &[1.0], &b0, &full.covariance).unwrap();
        let phi_m = noncentrality(&r, &[1.0], &b0, &sk.covariance).unwrap();
        let ratio = sk.covariance.get(2, 2) / full.covariance.get(2, 2);
        assert!((phi_n / phi_m - ratio).abs() < 1e-10 * ratio);
    }

    #[test]
    fn conditional_covariance_for_uniform_sampling() {
        let x = design(300, 2, 17);
        let op = build_sketch(SchemeId::Rs1, 300, 50, 4, None).unwrap();
        let v = conditional_covariance(&x, &op, &vec![1.0; 300]).unwrap();
        let xs = apply_sketch(&op, &x).unwrap();
        let expected = inverse_gram_from_svd(&svd(&xs).unwrap()).scaled(6.0);
        assert!(v.max_abs_diff(&expected) < 1e-12);
    }
}
