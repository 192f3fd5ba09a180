//! Synthetic designs used by the Monte Carlo experiments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{derive, stream, SketchRng};

/// Distribution of the regressors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dgp {
    NormalX,
    /// Independent exponential entries with the given mean, optionally with
    /// every column shifted to have sample mean zero.
    ExponentialX { mean: f64, centered: bool },
    /// Pearson entries with the given mean, standard deviation, skewness and kurtosis.
    PearsonX {
        mean: f64,
        sd: f64,
        skew: f64,
        kurtosis: f64,
    },
    /// Intercept, two standard normals, and the indicator that a third
    /// standard normal lies more than three units from zero.
    RareDummy,
}

impl Dgp {
    pub const DEFAULT_EXPONENTIAL: Dgp = Dgp::ExponentialX {
        mean: 5.0,
        centered: false,
    };
    pub const CENTERED_EXPONENTIAL: Dgp = Dgp::ExponentialX {
        mean: 5.0,
        centered: true,
    };
    pub const DEFAULT_PEARSON: Dgp = Dgp::PearsonX {
        mean: 0.0,
        sd: 1.0,
        skew: 1.0,
        kurtosis: 5.0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::NormalX => "normal",
            Dgp::ExponentialX { centered: false, .. } => "exponential",
            Dgp::ExponentialX { centered: true, .. } => "exponential_centered",
            Dgp::PearsonX { .. } => "pearson",
            Dgp::RareDummy => "rare_dummy",
        }
    }

    /// Draws an `n x k` design. `RareDummy` always has four columns.
    pub fn design(&self, n: usize, k: usize, rng: &mut SketchRng) -> Result<DenseMatrix> {
        match *self {
            Dgp::NormalX => DenseMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal)),
            Dgp::ExponentialX { mean, centered } => {
                if !(mean > 0.0 && mean.is_finite()) {
                    return Err(Error::InvalidArgument(format!("exponential mean {mean}")));
                }
                let exp = Exp::new(1.0 / mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let x = DenseMatrix::from_fn(n, k, |_, _| rng.sample(exp))?;
                if !centered {
                    return Ok(x);
                }
                let means: Vec<f64> = (0..k)
                    .map(|c| (0..n).map(|i| x.get(i, c)).sum::<f64>() / n as f64)
                    .collect();
                DenseMatrix::from_fn(n, k, |i, c| x.get(i, c) - means[c])
            }
            Dgp::PearsonX {
                mean,
                sd,
                skew,
                kurtosis,
            } => {
                let p = PearsonIv::new(mean, sd, skew, kurtosis)?;
                DenseMatrix::from_fn(n, k, |_, _| p.sample(rng))
            }
            Dgp::RareDummy => {
                if k != 4 {
                    return Err(Error::InvalidDims(format!("rare-dummy design has K=4, got {k}")));
                }
                rare_dummy_design(n, rng)
            }
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "normalx" => Ok(Dgp::NormalX),
            "exponential" | "exponentialx" | "exp" => Ok(Dgp::DEFAULT_EXPONENTIAL),
            "exponential_centered" => Ok(Dgp::CENTERED_EXPONENTIAL),
            "pearson" | "pearsonx" => Ok(Dgp::DEFAULT_PEARSON),
            "rare_dummy" | "raredummy" | "rare" => Ok(Dgp::RareDummy),
            other => Err(Error::Config(format!("unknown dgp {other:?}"))),
        }
    }
}

/// Rows `[1, z1, z2, 1{|z3| > 3}]`.
pub fn rare_dummy_design(n: usize, rng: &mut SketchRng) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(n * 4);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        data.extend_from_slice(&[1.0, z1, z2, if z3.abs() > 3.0 { 1.0 } else { 0.0 }]);
    }
    DenseMatrix::new(n, 4, data)
}

/// Pearson type IV distribution with prescribed first four moments, sampled
/// by inverting a tabulated distribution function.
///
/// With centered moments the density solves
/// `p'(x)/p(x) = -(x + c1) / (c0 + c1 x + c2 x^2)`, with
/// `c0 = s^2 (4b2 - 3b1) / D`, `c1 = s sqrt(b1) (b2 + 3) / D`,
/// `c2 = (2b2 - 3b1 - 6) / D`, `D = 10b2 - 12b1 - 18`, `b1 = skew^2`,
/// `b2 = kurtosis`. The family is type IV when `c1^2 < 4 c0 c2`. The density
/// is integrated in closed form and the table is restandardized so samples
/// have exactly the requested mean and standard deviation on the grid.
#[derive(Clone, Debug)]
pub struct PearsonIv {
    mean: f64,
    sd: f64,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    table_mean: f64,
    table_sd: f64,
}

const PEARSON_GRID: usize = 400_001;

impl PearsonIv {
    pub fn new(mean: f64, sd: f64, skew: f64, kurtosis: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidArgument(format!("standard deviation {sd}")));
        }
        let b1 = skew * skew;
        let b2 = kurtosis;
        let d = 10.0 * b2 - 12.0 * b1 - 18.0;
        if d <= 0.0 {
            return Err(Error::DomainError(format!(
                "moments (skew {skew}, kurtosis {kurtosis}) outside the Pearson family"
            )));
        }
        // Work on the unit-variance scale.
        let c0 = (4.0 * b2 - 3.0 * b1) / d;
        let c1 = skew * (b2 + 3.0) / d;
        let c2 = (2.0 * b2 - 3.0 * b1 - 6.0) / d;
        let disc = 4.0 * c0 * c2 - c1 * c1;
        if !(disc > 0.0 && c2 > 0.0) {
            return Err(Error::DomainError(format!(
                "moments (skew {skew}, kurtosis {kurtosis}) do not give a type IV member"
            )));
        }
        let root = disc.sqrt();
        let log_density = |x: f64| {
            let q = c2 * x * x + c1 * x + c0;
            -(q.ln() / (2.0 * c2)
                + (c1 - c1 / (2.0 * c2)) * 2.0 / root * ((2.0 * c2 * x + c1) / root).atan())
        };
        // Tails decay like |x|^{-1/c2}; the window holds all but a negligible mass.
        let exponent = 1.0 / c2;
        let reach = (1e16f64).powf(1.0 / (exponent - 1.0)).clamp(20.0, 200.0);
        let (lo, hi) = (-reach, reach);
        let step = (hi - lo) / (PEARSON_GRID - 1) as f64;
        let grid: Vec<f64> = (0..PEARSON_GRID).map(|i| lo + step * i as f64).collect();
        let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
        let peak = logs.iter().copied().fold(f64::MIN, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        let mut cdf = vec![0.0; PEARSON_GRID];
        for i in 1..PEARSON_GRID {
            cdf[i] = cdf[i - 1] + 0.5 * step * (dens[i] + dens[i - 1]);
        }
        let total = cdf[PEARSON_GRID - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        // Moments of the piecewise-linear-cdf distribution actually sampled.
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 1..PEARSON_GRID {
            let w = cdf[i] - cdf[i - 1];
            let (a, b) = (grid[i - 1], grid[i]);
            m1 += w * 0.5 * (a + b);
            m2 += w * (a * a + a * b + b * b) / 3.0;
        }
        let table_sd = (m2 - m1 * m1).sqrt();
        Ok(Self {
            mean,
            sd,
            grid,
            cdf,
            table_mean: m1,
            table_sd,
        })
    }

    /// Quantile at `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let x = self.grid[i - 1] + t * (self.grid[i] - self.grid[i - 1]);
        self.mean + self.sd * (x - self.table_mean) / self.table_sd
    }

    pub fn sample(&self, rng: &mut SketchRng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Standard normal design whose row `i` is a pure function of `(seed, i)`, so
/// rows of a very tall design can be generated on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VirtualNormalDesign {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Whether column 0 is an intercept.
    pub intercept: bool,
}

impl VirtualNormalDesign {
    /// Row `i` of `X` followed by the standard normal error for that row.
    pub fn row_with_error(&self, i: usize) -> (Vec<f64>, f64) {
        let mut rng = stream(derive(self.seed, &[i as u64]));
        let row = (0..self.k)
            .map(|j| {
                if j == 0 && self.intercept {
                    1.0
                } else {
                    rng.sample(StandardNormal)
                }
            })
            .collect();
        (row, rng.sample(StandardNormal))
    }

    /// `[y | X]` restricted to `rows`, with `y = X beta + sigma e`.
    pub fn stacked_rows(&self, rows: &[usize], beta: &[f64], sigma: f64) -> Result<DenseMatrix> {
        if beta.len() != self.k {
            return Err(Error::DimMismatch(format!(
                "beta has {} entries for K={}",
                beta.len(),
                self.k
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * (self.k + 1));
        for &i in rows {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("row {i} beyond n={}", self.n)));
            }
            let (x, e) = self.row_with_error(i);
            let y = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + sigma * e;
            data.push(y);
            data.extend_from_slice(&x);
        }
        DenseMatrix::new(rows.len(), self.k + 1, data)
    }
}
