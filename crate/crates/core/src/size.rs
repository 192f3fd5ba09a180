//! Sketch-size calculators: the coherence rule for uniform sampling, the
//! moment rule `m1`, the inference-conscious rules `m2` and `m3`, and the
//! normal and Student t quantiles behind them.

use std::fmt;

use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Standard normal quantile `Phi^{-1}(p)`.
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("probability {p} outside (0, 1)")));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf == 0.0 {
            break;
        }
        let step = (cdf - p) / pdf;
        x -= step;
        if step.abs() < 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Quantile of Student's t with `dof` degrees of freedom at probability `p`.
pub fn t_critical(dof: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("probability {p} outside (0, 1)")));
    }
    if !(dof >= 1.0 && dof.is_finite()) {
        return Err(Error::DomainError(format!("degrees of freedom {dof} below 1")));
    }
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::DomainError(e.to_string()))?;
    let mut x = dist.inverse_cdf(p);
    for _ in 0..4 {
        let pdf = dist.pdf(x);
        if pdf == 0.0 || !x.is_finite() {
            break;
        }
        let step = (dist.cdf(x) - p) / pdf;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(x)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// `S(alpha, gamma) = Phi^{-1}(gamma) + Phi^{-1}(1 - alpha)`.
pub fn s_value(alpha: f64, gamma: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    check_unit("gamma", gamma)?;
    Ok(inv_norm_cdf(gamma)? + inv_norm_cdf(1.0 - alpha)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeRule {
    Coherence,
    M1Moment,
    M1ThinTail,
    M2,
    M3,
    CountSketch,
}

impl fmt::Display for SizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeRule::Coherence => "coherence",
            SizeRule::M1Moment => "m1_moment",
            SizeRule::M1ThinTail => "m1_thin_tail",
            SizeRule::M2 => "m2",
            SizeRule::M3 => "m3",
            SizeRule::CountSketch => "countsketch",
        })
    }
}

/// Inputs that produced a size, with unused entries left as `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SizeInputs {
    pub n: Option<u64>,
    pub k: Option<u64>,
    pub r: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub j: Option<u64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub tau2: Option<f64>,
    pub effect: Option<f64>,
    pub var_estimate: Option<f64>,
    pub m0: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeRuleResult {
    pub rule: SizeRule,
    /// Integer sketch size, never clamped to `n`.
    pub m: u64,
    /// Value of the formula before rounding.
    pub raw: f64,
    /// `false` when the rule asks for more rows than the data has.
    pub feasible: bool,
    pub inputs: SizeInputs,
}

fn to_count(v: f64) -> Result<u64> {
    if !v.is_finite() || v < 0.0 || v > u64::MAX as f64 {
        return Err(Error::DomainError(format!("size {v} is not representable")));
    }
    Ok((v as u64).max(1))
}

fn ceil_count(raw: f64) -> Result<u64> {
    // Values a hair above an integer from floating-point noise round down to it.
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        return to_count(nearest);
    }
    to_count(raw.ceil())
}

fn result(rule: SizeRule, raw: f64, m: u64, n: Option<u64>, inputs: SizeInputs) -> SizeRuleResult {
    SizeRuleResult {
        rule,
        m,
        raw,
        feasible: n.is_none_or(|n| m <= n),
        inputs,
    }
}

/// `ceil(6 eps^-2 n l_max log(2 J K / delta))`, rows needed for uniform sampling
/// to be a subspace embedding of every one of `J` sketches.
pub fn uniform_embedding_m(
    n: u64,
    coherence: f64,
    epsilon: f64,
    delta: f64,
    j: u64,
    k: u64,
) -> Result<u64> {
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    if n == 0 || k == 0 || j == 0 {
        return Err(Error::InvalidArgument("n, K and J must be positive".into()));
    }
    let lower = k as f64 / n as f64;
    if !(coherence >= lower * (1.0 - 1e-12) && coherence <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coherence {coherence} outside [K/n, 1] = [{lower}, 1]"
        )));
    }
    let raw = 6.0 / (epsilon * epsilon)
        * n as f64
        * coherence
        * (2.0 * j as f64 * k as f64 / delta).ln();
    ceil_count(raw)
}

/// [`uniform_embedding_m`] wrapped as a [`SizeRuleResult`].
pub fn coherence_rule(
    n: u64,
    coherence: f64,
    epsilon: f64,
    delta: f64,
    j: u64,
    k: u64,
) -> Result<SizeRuleResult> {
    let m = uniform_embedding_m(n, coherence, epsilon, delta, j, k)?;
    let raw = 6.0 / (epsilon * epsilon)
        * n as f64
        * coherence
        * (2.0 * j as f64 * k as f64 / delta).ln();
    Ok(result(
        SizeRule::Coherence,
        raw,
        m,
        Some(n),
        SizeInputs {
            n: Some(n),
            k: Some(k),
            epsilon: Some(epsilon),
            delta: Some(delta),
            j: Some(j),
            ..Default::default()
        },
    ))
}

/// Tail assumption on the regressors for the moment rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    /// `r > 2` finite moments.
    Moments(f64),
    /// Thin (sub-exponential) tails.
    ThinTail,
}

/// `m1` with unit constant; see [`m1_rule_scaled`].
pub fn m1_rule(n: u64, k: u64, tail: Tail) -> Result<SizeRuleResult> {
    m1_rule_scaled(n, k, tail, 1.0)
}

/// `constant * (nK)^{1+2/r} log K / n` under `r` moments and
/// `constant * K log(nK)` under thin tails, truncated to an integer.
pub fn m1_rule_scaled(n: u64, k: u64, tail: Tail, constant: f64) -> Result<SizeRuleResult> {
    if n == 0 || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and K >= 2, got n={n}, K={k}"
        )));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::InvalidArgument(format!("constant {constant} must be positive")));
    }
    let nk = n as f64 * k as f64;
    let mut inputs = SizeInputs {
        n: Some(n),
        k: Some(k),
        ..Default::default()
    };
    let (rule, raw) = match tail {
        Tail::Moments(r) => {
            if !(r > 2.0) {
                return Err(Error::InvalidArgument(format!("need r > 2, got {r}")));
            }
            inputs.r = Some(r);
            let log_raw = (1.0 + 2.0 / r) * nk.ln() + (k as f64).ln().ln() - (n as f64).ln();
            (SizeRule::M1Moment, constant * log_raw.exp())
        }
        Tail::ThinTail => (SizeRule::M1ThinTail, constant * k as f64 * nk.ln()),
    };
    let m = to_count(raw.floor())?;
    Ok(result(rule, raw, m, Some(n), inputs))
}

/// The number of moments `r` at which the moment rule gives `m / K = m_over_k`:
/// `r = 2 log(nK) / (log(m/K) - log log K)`.
pub fn implied_moments(n: u64, k: u64, m_over_k: f64) -> Result<f64> {
    if n == 0 || k < 2 || !(m_over_k > 0.0) {
        return Err(Error::DomainError(format!(
            "need n >= 1, K >= 2, m/K > 0; got n={n}, K={k}, m/K={m_over_k}"
        )));
    }
    let kf = k as f64;
    // (nK)^{1+2/r} log K / n = m  <=>  (2/r) log(nK) = log(m/K) - log log K.
    let denom = m_over_k.ln() - kf.ln().ln();
    if !(denom > 0.0) {
        return Err(Error::DomainError(format!(
            "m/K = {m_over_k} does not exceed log K = {}",
            kf.ln()
        )));
    }
    let numerator = 2.0 * (n as f64 * kf).ln();
    Ok(numerator / denom)
}

/// `m2 = ceil(S^2(alpha, gamma) m0 var / effect^2)` where `var` is the variance
/// of the contrast estimated from a preliminary sketch of `m0` rows.
pub fn m2_rule(m0: u64, var_contrast: f64, effect: f64, alpha: f64, gamma: f64) -> Result<SizeRuleResult> {
    if !(var_contrast > 0.0 && var_contrast.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "contrast variance {var_contrast} must be positive"
        )));
    }
    if effect == 0.0 || !effect.is_finite() || m0 == 0 {
        return Err(Error::InvalidArgument("effect must be non-zero and m0 positive".into()));
    }
    let s = s_value(alpha, gamma)?;
    let raw = s * s * m0 as f64 * var_contrast / (effect * effect);
    let m = ceil_count(raw)?;
    Ok(result(
        SizeRule::M2,
        raw,
        m,
        None,
        SizeInputs {
            alpha: Some(alpha),
            gamma: Some(gamma),
            effect: Some(effect),
            var_estimate: Some(var_contrast),
            m0: Some(m0),
            tau2: Some(effect / (var_contrast).sqrt()),
            ..Default::default()
        },
    ))
}

/// `m3 = ceil(n S^2(alpha, gamma) / tau2^2)` with `tau2` the signal-to-noise
/// ratio of the full-sample test.
pub fn m3_rule(n: u64, tau2_inf: f64, alpha: f64, gamma: f64) -> Result<SizeRuleResult> {
    if tau2_inf == 0.0 || !tau2_inf.is_finite() {
        return Err(Error::InvalidArgument("tau2 must be non-zero".into()));
    }
    let s = s_value(alpha, gamma)?;
    m3_from_s(n, tau2_inf, s, alpha, gamma)
}

fn m3_from_s(n: u64, tau2: f64, s: f64, alpha: f64, gamma: f64) -> Result<SizeRuleResult> {
    let raw = n as f64 * s * s / (tau2 * tau2);
    let m = ceil_count(raw)?;
    Ok(result(
        SizeRule::M3,
        raw,
        m,
        Some(n),
        SizeInputs {
            n: Some(n),
            alpha: Some(alpha),
            gamma: Some(gamma),
            tau2: Some(tau2),
            ..Default::default()
        },
    ))
}

/// `m3` for a given value of `S` instead of `(alpha, gamma)`.
pub fn m3_rule_with_s(n: u64, tau2_inf: f64, s: f64) -> Result<SizeRuleResult> {
    if tau2_inf == 0.0 || !tau2_inf.is_finite() || !(s > 0.0) {
        return Err(Error::InvalidArgument("tau2 must be non-zero and S positive".into()));
    }
    let mut r = m3_from_s(n, tau2_inf, s, f64::NAN, f64::NAN)?;
    r.inputs.alpha = None;
    r.inputs.gamma = None;
    Ok(r)
}

/// `ceil(eps^-2 K (K + 1) / delta)`, rows for a countsketch subspace embedding.
pub fn countsketch_m(k: u64, epsilon: f64, delta: f64) -> Result<SizeRuleResult> {
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    let raw = k as f64 * (k as f64 + 1.0) / (epsilon * epsilon * delta);
    Ok(result(
        SizeRule::CountSketch,
        raw,
        ceil_count(raw)?,
        None,
        SizeInputs {
            k: Some(k),
            epsilon: Some(epsilon),
            delta: Some(delta),
            ..Default::default()
        },
    ))
}
