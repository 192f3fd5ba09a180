//! Monte Carlo experiments and report emission.
//!
//! Every random quantity is a pure function of the master seed and the
//! coordinates of the draw (experiment, panel, replication, scheme, m, J), so a
//! report does not depend on how many worker threads ran it. Replications are
//! computed independently and reduced in replication order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::amm::{amm, amm_required_m, optimal_probabilities};
use crate::dgp::{Dgp, VirtualNormalDesign};
use crate::embedding::{
    distortion_of_sketched_basis, pairwise_success_sketched, singular_distortion,
    singular_ratio_norm_sketched,
};
use crate::error::{Error, Result};
use crate::linalg::{inverse_gram_from_svd, numeric_rank, quad_form, singular_values, svd, DenseMatrix, DEFAULT_RANK_TOL};
use crate::pooling::{
    pooled_from_sketches, pooled_sketches, pooled_variance_bound, t1_statistic, t2_critical,
    t2_statistic, uniform_partition,
};
use crate::regression::{
    conditional_covariance, countsketch_centering, full_sample_covariance, hetero_mse_bound,
    inverse_gram_distortion, lemma3_check, mse_ratio_bounds, ols, sketched_fit_from_stacked,
    sketched_ols, ContrastVector, VarianceMode,
};
use crate::rng::{derive, replication_seed, stream, SketchRng};
use crate::size::{inv_norm_cdf, m2_rule};
use crate::sketch::{apply_sketch, apply_sketch_transpose, build_sketch, SchemeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    /// Pairwise distance preservation and singular-value distortion across schemes.
    Table1,
    /// Size, power and spread of pooled sketched estimators.
    Table3,
    /// Inference-conscious sketch sizes from one preliminary sketch.
    Table4,
    /// Coverage rates of the deterministic and probabilistic bounds.
    BoundSuite,
    /// How often a sketch of a design with a rare dummy loses rank.
    RankFailure,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Table3 => "table3",
            ExperimentKind::Table4 => "table4",
            ExperimentKind::BoundSuite => "bounds",
            ExperimentKind::RankFailure => "rank_failure",
        }
    }

    fn code(self) -> u64 {
        match self {
            ExperimentKind::Table1 => 1,
            ExperimentKind::Table3 => 3,
            ExperimentKind::Table4 => 4,
            ExperimentKind::BoundSuite => 5,
            ExperimentKind::RankFailure => 6,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1" | "jl" => Ok(ExperimentKind::Table1),
            "table3" | "pool" | "pooling" => Ok(ExperimentKind::Table3),
            "table4" | "size" => Ok(ExperimentKind::Table4),
            "bounds" | "boundsuite" | "bound_suite" | "verify" => Ok(ExperimentKind::BoundSuite),
            "rank_failure" | "rank" | "rankfailure" => Ok(ExperimentKind::RankFailure),
            other => Err(Error::Config(format!("unknown experiment {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    /// Number of regressors (columns); one panel per entry.
    pub k_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub j_grid: Vec<usize>,
    pub schemes: Vec<SchemeId>,
    pub replications: usize,
    pub master_seed: u64,
    /// Regressor distributions; one panel per entry.
    pub dgps: Vec<Dgp>,
    pub sigma_e: f64,
    /// Coefficients; all ones when `None`.
    pub beta_true: Option<Vec<f64>>,
    /// Value of the last coefficient under the alternative.
    pub beta_alt: f64,
    pub alpha: f64,
    pub gamma_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub effect_grid: Vec<f64>,
    pub epsilon: f64,
    /// Size of the preliminary sketch feeding the variance estimate.
    pub m0: usize,
    pub input_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

pub const DESK_REPLICATIONS: usize = 200;
pub const FULL_REPLICATIONS: usize = 1000;

impl ExperimentConfig {
    /// `n = 20000`, `d = 5`, `eps = 0.1`, normal and column-centered exponential data, all nine schemes.
    pub fn table1() -> Self {
        Self {
            experiment: ExperimentKind::Table1,
            n: 20_000,
            k_grid: vec![5],
            m_grid: vec![161, 322, 644, 966, 1288, 2576],
            j_grid: vec![1],
            schemes: SchemeId::ALL.to_vec(),
            replications: DESK_REPLICATIONS,
            master_seed: 20_240_601,
            dgps: vec![Dgp::NormalX, Dgp::CENTERED_EXPONENTIAL],
            sigma_e: 1.0,
            beta_true: None,
            beta_alt: 0.98,
            alpha: 0.05,
            gamma_grid: vec![0.5, 0.8, 0.9],
            sigma_grid: vec![0.5, 1.0, 3.0],
            effect_grid: vec![0.005, 0.01, 0.015, 0.02, 0.025],
            epsilon: 0.1,
            m0: 1000,
            input_path: None,
            output_dir: None,
        }
    }

    /// `n = 1e6`, Pearson regressors, `K` in {3, 9}, uniform sampling and countsketch.
    pub fn table3() -> Self {
        Self {
            experiment: ExperimentKind::Table3,
            n: 1_000_000,
            k_grid: vec![3, 9],
            m_grid: vec![500, 1000, 2000, 5000],
            j_grid: vec![1, 5, 10],
            schemes: vec![SchemeId::Rs1, SchemeId::Cs],
            replications: 500,
            dgps: vec![Dgp::DEFAULT_PEARSON],
            ..Self::table1()
        }
    }

    /// `n = 1e7`, `K = 10`, `m0 = 1000`, `alpha = 0.05`.
    pub fn table4() -> Self {
        Self {
            experiment: ExperimentKind::Table4,
            n: 10_000_000,
            k_grid: vec![10],
            m_grid: vec![1000],
            schemes: vec![SchemeId::Rs1],
            replications: 1,
            dgps: vec![Dgp::NormalX],
            ..Self::table1()
        }
    }

    pub fn bound_suite() -> Self {
        Self {
            experiment: ExperimentKind::BoundSuite,
            n: 100_000,
            k_grid: vec![3],
            m_grid: vec![2000],
            schemes: vec![SchemeId::Rs1],
            dgps: vec![Dgp::NormalX],
            ..Self::table1()
        }
    }

    /// Intercept, two normals and a three-sigma indicator, `n = 1e5`.
    pub fn rank_failure() -> Self {
        Self {
            experiment: ExperimentKind::RankFailure,
            n: 100_000,
            k_grid: vec![4],
            m_grid: vec![100, 200, 500, 1000, 2000],
            schemes: vec![SchemeId::Rs1, SchemeId::Cs],
            replications: 1000,
            dgps: vec![Dgp::RareDummy],
            ..Self::table1()
        }
    }

    pub fn for_kind(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Table1 => Self::table1(),
            ExperimentKind::Table3 => Self::table3(),
            ExperimentKind::Table4 => Self::table4(),
            ExperimentKind::BoundSuite => Self::bound_suite(),
            ExperimentKind::RankFailure => Self::rank_failure(),
        }
    }

    /// Sets one field from its textual form. Lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        let value = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "experiment" => {
                let kind: ExperimentKind = value.parse()?;
                if kind != self.experiment {
                    *self = Self::for_kind(kind);
                }
            }
            "n" => self.n = value.parse().map_err(|_| bad("n"))?,
            "k" | "k_grid" => self.k_grid = parse_list(value).map_err(|_| bad("k"))?,
            "m" | "m_grid" => self.m_grid = parse_list(value).map_err(|_| bad("m"))?,
            "j" | "j_grid" => self.j_grid = parse_list(value).map_err(|_| bad("j"))?,
            "scheme" | "schemes" => {
                self.schemes = value
                    .split(',')
                    .map(|s| s.trim().parse::<SchemeId>().map_err(|_| bad("schemes")))
                    .collect::<Result<_>>()?
            }
            "replications" | "reps" => {
                self.replications = value.parse().map_err(|_| bad("replications"))?
            }
            "seed" | "master_seed" => self.master_seed = value.parse().map_err(|_| bad("seed"))?,
            "dgp" | "dgps" => {
                self.dgps = value
                    .split(',')
                    .map(|s| s.parse::<Dgp>())
                    .collect::<Result<_>>()?
            }
            "sigma_e" => self.sigma_e = value.parse().map_err(|_| bad("sigma_e"))?,
            "beta" | "beta_true" => {
                self.beta_true = Some(parse_list(value).map_err(|_| bad("beta"))?)
            }
            "beta_alt" => self.beta_alt = value.parse().map_err(|_| bad("beta_alt"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("alpha"))?,
            "gamma" | "gammas" | "gamma_grid" => {
                self.gamma_grid = parse_list(value).map_err(|_| bad("gamma"))?
            }
            "sigma" | "sigmas" | "sigma_grid" => {
                self.sigma_grid = parse_list(value).map_err(|_| bad("sigma"))?
            }
            "effect" | "effects" | "effect_grid" => {
                self.effect_grid = parse_list(value).map_err(|_| bad("effect"))?
            }
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
            "m0" => self.m0 = value.parse().map_err(|_| bad("m0"))?,
            "input" | "input_path" => self.input_path = Some(PathBuf::from(value)),
            "out" | "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut entries: Vec<(&str, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            entries.push((k.trim(), v.trim()));
        }
        // The experiment key resets defaults, so it goes first.
        entries.sort_by_key(|(k, _)| !k.eq_ignore_ascii_case("experiment"));
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.replications == 0 {
            return fail("replications must be at least 1");
        }
        if self.k_grid.is_empty() || self.m_grid.is_empty() || self.j_grid.is_empty() {
            return fail("grids must be non-empty");
        }
        if self.schemes.is_empty() || self.dgps.is_empty() {
            return fail("scheme and dgp lists must be non-empty");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail("alpha and epsilon must lie in (0, 1)");
        }
        if !(self.sigma_e > 0.0) {
            return fail("sigma_e must be positive");
        }
        if self.m_grid.iter().any(|&m| m == 0 || m > self.n) {
            return fail("every m must lie in 1..=n");
        }
        match self.experiment {
            ExperimentKind::Table3 => {
                if self.schemes.iter().any(|s| !matches!(s, SchemeId::Rs1 | SchemeId::Cs)) {
                    return fail("pooling runs support rs1 and cs only");
                }
                if let Some(b) = &self.beta_true {
                    if self.k_grid.iter().any(|&k| k != b.len()) {
                        return fail("beta length must match every K");
                    }
                }
            }
            ExperimentKind::Table4 => {
                if self.gamma_grid.is_empty() || self.sigma_grid.is_empty() || self.effect_grid.is_empty() {
                    return fail("gamma, sigma and effect grids must be non-empty");
                }
                if self.m0 <= self.k_grid[0] || self.m0 > self.n {
                    return fail("m0 must exceed K and not exceed n");
                }
            }
            ExperimentKind::RankFailure => {
                if self.k_grid != [4] {
                    return fail("the rare-dummy design has K = 4");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse())
        .collect()
}

/// One aggregated number of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    /// Sub-table the row belongs to, such as the data distribution or `K`.
    pub panel: String,
    pub scheme: String,
    pub m: usize,
    pub j: usize,
    pub metric: String,
    pub value: f64,
    pub mc_stderr: f64,
    pub replications: usize,
    pub seed: u64,
}

pub const REPORT_HEADER: [&str; 10] = [
    "experiment",
    "panel",
    "scheme",
    "m",
    "J",
    "metric",
    "value",
    "mc_stderr",
    "replications",
    "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

struct RowBuilder<'a> {
    cfg: &'a ExperimentConfig,
    rows: Vec<ReportRow>,
}

impl<'a> RowBuilder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, rows: Vec::new() }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        panel: &str,
        scheme: &str,
        m: usize,
        j: usize,
        metric: &str,
        value: f64,
        mc_stderr: f64,
        replications: usize,
    ) {
        self.rows.push(ReportRow {
            experiment: self.cfg.experiment.name().to_string(),
            panel: panel.to_string(),
            scheme: scheme.to_string(),
            m,
            j,
            metric: metric.to_string(),
            value,
            mc_stderr,
            replications,
            seed: self.cfg.master_seed,
        });
    }

    /// Mean with its standard error.
    fn mean(&mut self, panel: &str, scheme: &str, m: usize, j: usize, metric: &str, v: &[f64]) {
        let (mean, se) = mean_se(v);
        self.push(panel, scheme, m, j, metric, mean, se, v.len());
    }

    /// Fraction of `true` with its binomial standard error.
    fn rate(&mut self, panel: &str, scheme: &str, m: usize, j: usize, metric: &str, v: &[bool]) {
        let r = v.len();
        let p = if r == 0 {
            f64::NAN
        } else {
            v.iter().filter(|b| **b).count() as f64 / r as f64
        };
        self.push(panel, scheme, m, j, metric, p, (p * (1.0 - p) / r as f64).sqrt(), r);
    }

    /// Sample standard deviation with its approximate standard error.
    fn spread(&mut self, panel: &str, scheme: &str, m: usize, j: usize, metric: &str, v: &[f64]) {
        let r = v.len();
        let sd = sample_sd(v);
        let se = if r > 1 { sd / (2.0 * (r as f64 - 1.0)).sqrt() } else { f64::NAN };
        self.push(panel, scheme, m, j, metric, sd, se, r);
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let r = v.len();
    if r == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / r as f64;
    let se = if r > 1 { sample_sd(v) / (r as f64).sqrt() } else { f64::NAN };
    (mean, se)
}

fn sample_sd(v: &[f64]) -> f64 {
    let r = v.len();
    if r < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / r as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0)).sqrt()
}

/// Runs an experiment on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Table1 => run_table1(cfg),
        ExperimentKind::Table3 => run_table3(cfg),
        ExperimentKind::Table4 => run_table4(cfg),
        ExperimentKind::BoundSuite => run_bound_suite(cfg),
        ExperimentKind::RankFailure => run_rank_failure(cfg),
    }
}

/// Runs an experiment on a dedicated pool of `workers` threads (0 picks the default).
pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<ReportRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

fn panel_master(cfg: &ExperimentConfig, panel: u64) -> u64 {
    derive(cfg.master_seed, &[cfg.experiment.code(), panel])
}

fn dgp_code(d: &Dgp) -> u64 {
    match d {
        Dgp::NormalX => 1,
        Dgp::ExponentialX { .. } => 2,
        Dgp::PearsonX { .. } => 3,
        Dgp::RareDummy => 4,
    }
}

// ---------------------------------------------------------------------------
// Pairwise distances and singular values

fn run_table1(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut out = RowBuilder::new(cfg);
    let n = cfg.n;
    for dgp in &cfg.dgps {
        for &d in &cfg.k_grid {
            let master = panel_master(cfg, dgp_code(dgp) * 1000 + d as u64);
            let reps: Vec<Vec<Option<(f64, f64)>>> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| table1_replication(cfg, dgp, d, master, rep as u64))
                .collect::<Result<_>>()?;
            let panel = format!("{}_d{}", dgp.name(), d);
            let mut cell = 0;
            for scheme in &cfg.schemes {
                for &m in &cfg.m_grid {
                    let ok: Vec<(f64, f64)> = reps.iter().filter_map(|r| r[cell]).collect();
                    let succ: Vec<f64> = ok.iter().map(|p| p.0).collect();
                    let dist: Vec<f64> = ok.iter().map(|p| p.1).collect();
                    out.mean(&panel, scheme.label(), m, 1, "success", &succ);
                    out.mean(&panel, scheme.label(), m, 1, "distortion", &dist);
                    let failed = cfg.replications - ok.len();
                    out.push(&panel, scheme.label(), m, 1, "failures", failed as f64, 0.0, cfg.replications);
                    cell += 1;
                }
            }
            let _ = n;
        }
    }
    Ok(out.rows)
}

fn table1_replication(
    cfg: &ExperimentConfig,
    dgp: &Dgp,
    d: usize,
    master: u64,
    rep: u64,
) -> Result<Vec<Option<(f64, f64)>>> {
    let mut rng = stream(derive(master, &[rep]));
    let a = dgp.design(cfg.n, d, &mut rng)?;
    let base = singular_values(&a)?;
    let mut res = Vec::with_capacity(cfg.schemes.len() * cfg.m_grid.len());
    for scheme in &cfg.schemes {
        for &m in &cfg.m_grid {
            let seed = replication_seed(master, rep, scheme.code(), m as u64, 1);
            let cell = (|| -> Result<(f64, f64)> {
                let op = build_sketch(*scheme, cfg.n, m, seed, Some(&a))?;
                let sa = apply_sketch(&op, &a)?;
                Ok((
                    pairwise_success_sketched(&a, &sa, cfg.epsilon)?,
                    singular_ratio_norm_sketched(&base, &sa)?,
                ))
            })();
            res.push(cell.ok());
        }
    }
    Ok(res)
}

// ---------------------------------------------------------------------------
// Pooled estimators

#[derive(Clone, Copy, Debug)]
struct PoolOutcome {
    beta: f64,
    se: f64,
    reject_null: bool,
    reject_alt: bool,
    t2_null: Option<bool>,
    t2_alt: Option<bool>,
    failures: usize,
}

fn run_table3(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut out = RowBuilder::new(cfg);
    let z = inv_norm_cdf(1.0 - cfg.alpha / 2.0)?;
    let dgp = cfg.dgps[0];
    for &k in &cfg.k_grid {
        let master = panel_master(cfg, k as u64);
        let mut rng = stream(derive(master, &[u64::MAX]));
        let x = dgp.design(cfg.n, k, &mut rng)?;
        let beta = cfg.beta_true.clone().unwrap_or_else(|| vec![1.0; k]);
        let xb = x.mat_vec(&beta)?;
        let cells: Vec<(SchemeId, usize, usize)> = cfg
            .schemes
            .iter()
            .flat_map(|&s| {
                cfg.m_grid
                    .iter()
                    .flat_map(move |&m| cfg.j_grid.iter().map(move |&j| (s, m, j)))
            })
            .filter(|&(_, m, j)| m * j <= cfg.n && m > k)
            .collect();
        let reps: Vec<Vec<Option<PoolOutcome>>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| table3_replication(cfg, &x, &xb, &beta, &cells, master, rep as u64, z))
            .collect::<Result<_>>()?;
        let panel = format!("{}_K{}", dgp.name(), k);
        for (c, &(scheme, m, j)) in cells.iter().enumerate() {
            let ok: Vec<PoolOutcome> = reps.iter().filter_map(|r| r[c]).collect();
            let label = scheme.label();
            let betas: Vec<f64> = ok.iter().map(|o| o.beta).collect();
            out.mean(&panel, label, m, j, "mean_beta", &betas);
            out.spread(&panel, label, m, j, "se", &betas);
            let ses: Vec<f64> = ok.iter().map(|o| o.se).collect();
            out.mean(&panel, label, m, j, "mean_reported_se", &ses);
            let size: Vec<bool> = ok.iter().map(|o| o.reject_null).collect();
            out.rate(&panel, label, m, j, "size", &size);
            let power: Vec<bool> = ok.iter().map(|o| o.reject_alt).collect();
            out.rate(&panel, label, m, j, "power", &power);
            if j >= 2 {
                let s2: Vec<bool> = ok.iter().filter_map(|o| o.t2_null).collect();
                out.rate(&panel, label, m, j, "size_t2", &s2);
                let p2: Vec<bool> = ok.iter().filter_map(|o| o.t2_alt).collect();
                out.rate(&panel, label, m, j, "power_t2", &p2);
            }
            let fails: usize = ok.iter().map(|o| o.failures).sum::<usize>()
                + (cfg.replications - ok.len()) * j;
            out.push(&panel, label, m, j, "failures", fails as f64, 0.0, cfg.replications);
        }
    }
    Ok(out.rows)
}

#[allow(clippy::too_many_arguments)]
fn table3_replication(
    cfg: &ExperimentConfig,
    x: &DenseMatrix,
    xb: &[f64],
    beta: &[f64],
    cells: &[(SchemeId, usize, usize)],
    master: u64,
    rep: u64,
    z: f64,
) -> Result<Vec<Option<PoolOutcome>>> {
    let (n, k) = x.shape();
    let mut rng = stream(derive(master, &[rep]));
    let shift = cfg.beta_alt - beta[k - 1];
    let mut data = Vec::with_capacity(n * (k + 2));
    for (i, &mean) in xb.iter().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        let y0 = mean + cfg.sigma_e * e;
        let row = x.row(i);
        data.push(y0);
        data.push(y0 + shift * row[k - 1]);
        data.extend_from_slice(row);
    }
    let stacked = DenseMatrix::new(n, k + 2, data)?;
    let c = ContrastVector::unit(k, k - 1)?;
    let null = beta[k - 1];
    let null_cols: Vec<usize> = std::iter::once(0).chain(2..k + 2).collect();
    let alt_cols: Vec<usize> = std::iter::once(1).chain(2..k + 2).collect();
    let mut res = Vec::with_capacity(cells.len());
    for &(scheme, m, j) in cells {
        let seed = replication_seed(master, rep, scheme.code(), m as u64, j as u64);
        let cell = (|| -> Result<PoolOutcome> {
            let sketches = pooled_sketches(&stacked, scheme, m, j, seed)?;
            let pick = |cols: &[usize]| -> Vec<(DenseMatrix, usize)> {
                sketches.iter().map(|(s, r)| (s.select_columns(cols), *r)).collect()
            };
            let p0 = pooled_from_sketches(&pick(&null_cols), m, VarianceMode::Homoskedastic, &c, null)?;
            let p1 = pooled_from_sketches(&pick(&alt_cols), m, VarianceMode::Homoskedastic, &c, null)?;
            let t2 = |p: &crate::pooling::PooledFit| -> Option<bool> {
                if p.j < 2 {
                    return None;
                }
                let crit = t2_critical(p.j, cfg.alpha).ok()?;
                t2_statistic(p).ok().map(|t| t.abs() > crit)
            };
            Ok(PoolOutcome {
                beta: p0.contrast_bar,
                se: p0.se_contrast_bar,
                reject_null: t1_statistic(&p0).abs() > z,
                reject_alt: t1_statistic(&p1).abs() > z,
                t2_null: t2(&p0),
                t2_alt: t2(&p1),
                failures: p0.failures,
            })
        })();
        res.push(cell.ok());
    }
    Ok(res)
}

// ---------------------------------------------------------------------------
// Inference-conscious sizes

fn run_table4(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut out = RowBuilder::new(cfg);
    let k = cfg.k_grid[0];
    let c = ContrastVector::unit(k, k - 1)?;
    let beta = cfg.beta_true.clone().unwrap_or_else(|| vec![1.0; k]);
    for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
        let master = panel_master(cfg, si as u64);
        let design = VirtualNormalDesign {
            n: cfg.n,
            k,
            seed: derive(master, &[0]),
            intercept: true,
        };
        let rows = uniform_partition(cfg.n, cfg.m0, 1, derive(master, &[1]))?.remove(0);
        let w = (cfg.n as f64 / cfg.m0 as f64).sqrt();
        let stacked = design.stacked_rows(&rows, &beta, sigma)?.scaled(w);
        let fit = sketched_fit_from_stacked(&stacked, cfg.n, cfg.m0, VarianceMode::Homoskedastic)?;
        let var = fit.contrast_variance(&c);
        let panel_base = format!("sigma{sigma}");
        out.push(&panel_base, "rs1", cfg.m0, 1, "var_contrast", var, f64::NAN, 1);
        for &gamma in &cfg.gamma_grid {
            let panel = format!("gamma{gamma}_sigma{sigma}");
            for &effect in &cfg.effect_grid {
                let r = m2_rule(cfg.m0 as u64, var, effect, cfg.alpha, gamma)?;
                out.push(&panel, &format!("effect{effect}"), cfg.m0, 1, "m2", r.m as f64, f64::NAN, 1);
                out.push(&panel, &format!("effect{effect}"), cfg.m0, 1, "m2_raw", r.raw, f64::NAN, 1);
            }
        }
    }
    Ok(out.rows)
}

// ---------------------------------------------------------------------------
// Bound coverage

fn normal_design(n: usize, k: usize, intercept: bool, rng: &mut SketchRng) -> Result<DenseMatrix> {
    DenseMatrix::from_fn(n, k, |_, j| {
        if intercept && j == 0 {
            1.0
        } else {
            rng.sample(StandardNormal)
        }
    })
}

fn noisy_response(x: &DenseMatrix, beta: &[f64], scale: &[f64], rng: &mut SketchRng) -> Result<Vec<f64>> {
    Ok(x
        .mat_vec(beta)?
        .into_iter()
        .zip(scale)
        .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Coverage of every bound over `replications` seeds.
fn run_bound_suite(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut out = RowBuilder::new(cfg);
    let reps = cfg.replications;
    let scheme = cfg.schemes[0];
    let label = scheme.label();

    // Residual sum of squares and coefficient distance.
    let (n, k, m) = (cfg.n, cfg.k_grid[0], cfg.m_grid[0]);
    let master = panel_master(cfg, 1);
    let l3: Vec<Option<(bool, bool, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive(master, &[rep as u64]));
            let x = normal_design(n, k, true, &mut rng).ok()?;
            let y = noisy_response(&x, &vec![1.0; k], &vec![1.0; n], &mut rng).ok()?;
            let op = build_sketch(scheme, n, m, derive(master, &[rep as u64, 1]), Some(&x)).ok()?;
            let full = ols(&y, &x, VarianceMode::Homoskedastic).ok()?;
            let sk = sketched_ols(&y, &x, &op, VarianceMode::Homoskedastic).ok()?;
            let r = lemma3_check(&full, &sk, &y, &x, &op).ok()?;
            Some((r.ssr_holds, r.beta_holds, r.epsilon_used))
        })
        .collect();
    let ok: Vec<_> = l3.iter().flatten().collect();
    out.rate("error_bounds", label, m, 1, "ssr_bound_rate", &ok.iter().map(|r| r.0).collect::<Vec<_>>());
    out.rate("error_bounds", label, m, 1, "beta_bound_rate", &ok.iter().map(|r| r.1).collect::<Vec<_>>());
    out.mean("error_bounds", label, m, 1, "epsilon_hat", &ok.iter().map(|r| r.2).collect::<Vec<_>>());

    // Inverse Gram distortion, deterministic given the realized epsilon.
    let (n4, k4) = (10_000, 5);
    let master = panel_master(cfg, 2);
    let l4: Vec<Option<bool>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive(master, &[rep as u64]));
            let x = normal_design(n4, k4, false, &mut rng).ok()?;
            let op = build_sketch(scheme, n4, m, derive(master, &[rep as u64, 1]), Some(&x)).ok()?;
            let c = ContrastVector::new((0..k4).map(|i| 1.0 + i as f64).collect()).ok()?;
            inverse_gram_distortion(&x, &op, &c).ok().map(|r| r.holds)
        })
        .collect();
    let ok: Vec<bool> = l4.iter().flatten().copied().collect();
    out.rate("inverse_gram", label, m, 1, "bound_rate", &ok);
    out.push("inverse_gram", label, m, 1, "singular_draws", (reps - ok.len()) as f64, 0.0, reps);

    // Variance ratio of a contrast, homoskedastic and heteroskedastic errors.
    let (n2, k2, m2) = (10_000, 3, 1000);
    let master = panel_master(cfg, 3);
    let t2: Vec<Option<(bool, bool)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive(master, &[rep as u64]));
            let x = normal_design(n2, k2, true, &mut rng).ok()?;
            let omega: Vec<f64> = (0..n2).map(|_| if rng.random::<bool>() { 4.0 } else { 1.0 }).collect();
            let op = build_sketch(scheme, n2, m2, derive(master, &[rep as u64, 1]), Some(&x)).ok()?;
            let eps = singular_distortion(&x, &op).ok()?;
            if eps >= 1.0 {
                return Some((false, false));
            }
            let c = ContrastVector::unit(k2, k2 - 1).ok()?;
            let ones = vec![1.0; n2];
            let homo = quad_form(&conditional_covariance(&x, &op, &ones).ok()?, c.as_slice())
                / quad_form(&full_sample_covariance(&x, &ones).ok()?, c.as_slice());
            let het = quad_form(&conditional_covariance(&x, &op, &omega).ok()?, c.as_slice())
                / quad_form(&full_sample_covariance(&x, &omega).ok()?, c.as_slice());
            let inside = mse_ratio_bounds(n2, m2, eps).ok()?.contains(homo);
            let below = het <= hetero_mse_bound(&omega, n2, m2, eps).ok()?;
            Some((inside, below))
        })
        .collect();
    let ok: Vec<_> = t2.iter().flatten().collect();
    out.rate("variance_ratio", label, m2, 1, "homoskedastic_rate", &ok.iter().map(|r| r.0).collect::<Vec<_>>());
    out.rate("variance_ratio", label, m2, 1, "heteroskedastic_rate", &ok.iter().map(|r| r.1).collect::<Vec<_>>());

    // Pooled estimator against the full sample.
    let (np, kp, mp, jp) = (10_000, 3, 1000, 5);
    let master = panel_master(cfg, 4);
    let t3: Vec<Option<bool>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(derive(master, &[rep as u64]));
            let x = normal_design(np, kp, true, &mut rng).ok()?;
            let blocks = uniform_partition(np, mp, jp, derive(master, &[rep as u64, 1])).ok()?;
            let u = svd(&x).ok()?.u;
            let w = (np as f64 / mp as f64).sqrt();
            let c = ContrastVector::unit(kp, kp - 1).ok()?;
            let base = quad_form(&inverse_gram_from_svd(&svd(&x).ok()?), c.as_slice());
            let mut eps: f64 = 0.0;
            let mut sum = 0.0;
            for b in &blocks {
                eps = eps.max(distortion_of_sketched_basis(&u.select_rows(b).scaled(w)).ok()?);
                let xs = x.select_rows(b).scaled(w);
                if numeric_rank(&xs, DEFAULT_RANK_TOL).ok()? < kp {
                    return None;
                }
                sum += quad_form(&inverse_gram_from_svd(&svd(&xs).ok()?), c.as_slice());
            }
            if eps >= 1.0 {
                return Some(false);
            }
            let ratio = np as f64 / (mp * jp * jp) as f64 * sum / base;
            Some(ratio <= pooled_variance_bound(np, mp, jp, eps).ok()? * (1.0 + 1e-10))
        })
        .collect();
    let ok: Vec<bool> = t3.iter().flatten().copied().collect();
    out.rate("pooled_ratio", label, mp, jp, "bound_rate", &ok);

    // Approximate matrix multiplication: unbiasedness and Markov coverage.
    let (na, eps_a, delta_a) = (100, 0.5, 0.2);
    let master = panel_master(cfg, 5);
    let mut rng = stream(derive(master, &[u64::MAX]));
    let a = DenseMatrix::from_fn(na, 3, |i, _| {
        let s: f64 = rng.sample(StandardNormal);
        s * (1.0 + (i % 10) as f64)
    })?;
    let b = DenseMatrix::from_fn(na, 2, |_, _| rng.sample(StandardNormal))?;
    let exact = a.t_matmul(&b)?;
    let p = optimal_probabilities(&a, &b)?;
    let ma = amm_required_m(eps_a, delta_a)?;
    let amm_reps = reps.max(2000);
    let draws: Vec<DenseMatrix> = (0..amm_reps)
        .into_par_iter()
        .map(|rep| amm(&a, &b, ma, &p, derive(master, &[rep as u64])))
        .collect::<Result<_>>()?;
    let mut unbiased = Vec::new();
    for i in 0..exact.rows() {
        for j in 0..exact.cols() {
            let v: Vec<f64> = draws.iter().map(|d| d.get(i, j)).collect();
            let (mean, se) = mean_se(&v);
            unbiased.push((mean - exact.get(i, j)).abs() <= 4.0 * se);
        }
    }
    out.rate("amm", "optimal", ma, 1, "unbiased_entry_rate", &unbiased);
    let scale = a.frobenius_norm().powi(2) * b.frobenius_norm().powi(2) * eps_a * eps_a;
    let exceed: Vec<bool> = draws
        .iter()
        .map(|d| d.sub(&exact).map(|e| e.frobenius_norm().powi(2) > scale).unwrap_or(true))
        .collect();
    out.rate("amm", "optimal", ma, 1, "exceedance_rate", &exceed);
    out.push("amm", "optimal", ma, 1, "markov_bound", 1.0 / (ma as f64 * eps_a * eps_a), 0.0, amm_reps);

    // Countsketch centering at n = 64, m = 8, d = 3.
    for (tag, row) in centering_rows(cfg.master_seed, 5000)? {
        out.rows.push(ReportRow {
            experiment: cfg.experiment.name().to_string(),
            panel: format!("centering_{tag}"),
            ..row
        });
    }
    Ok(out.rows)
}

/// Result of comparing a Monte Carlo mean of `U' Pi'Pi Psi Pi'Pi U` with `U' A U`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteringCheck {
    pub mc_mean: DenseMatrix,
    pub mc_stderr: DenseMatrix,
    pub target: DenseMatrix,
    /// Largest `|mean - target| / stderr` over entries.
    pub max_z: f64,
}

/// Monte Carlo check of the countsketch centering matrix for diagonal `psi`.
pub fn centering_check(u: &DenseMatrix, psi: &[f64], m: usize, draws: usize, seed: u64) -> Result<CenteringCheck> {
    let (n, d) = u.shape();
    let a = countsketch_centering(psi, m, n)?;
    let ad = a.diagonal();
    let target = DenseMatrix::from_fn(d, d, |i, j| (0..n).map(|r| u.get(r, i) * ad[r] * u.get(r, j)).sum())?;
    let samples: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let op = build_sketch(SchemeId::Cs, n, m, derive(seed, &[s as u64]), None)?;
            let w = apply_sketch_transpose(&op, &apply_sketch(&op, u)?)?;
            let mut v = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    v[i * d + j] = (0..n).map(|r| w.get(r, i) * psi[r] * w.get(r, j)).sum();
                }
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut mean = DenseMatrix::zeros(d, d);
    let mut se = DenseMatrix::zeros(d, d);
    let mut max_z: f64 = 0.0;
    for e in 0..d * d {
        let v: Vec<f64> = samples.iter().map(|s| s[e]).collect();
        let (mu, sd) = mean_se(&v);
        let (i, j) = (e / d, e % d);
        mean.set(i, j, mu);
        se.set(i, j, sd);
        let diff = (mu - target.get(i, j)).abs();
        let z = if sd > 0.0 {
            diff / sd
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    Ok(CenteringCheck {
        mc_mean: mean,
        mc_stderr: se,
        target,
        max_z,
    })
}

fn centering_rows(master: u64, draws: usize) -> Result<Vec<(&'static str, ReportRow)>> {
    let (n, m, d) = (64, 8, 3);
    let base = derive(master, &[ExperimentKind::BoundSuite.code(), 6]);
    let mut rng = stream(base);
    let u = svd(&normal_design(n, d, false, &mut rng)?)?.u;
    let random_psi: Vec<f64> = (0..n).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
    let mut rows = Vec::new();
    for (tag, psi) in [("identity", vec![1.0; n]), ("random_diag", random_psi)] {
        let c = centering_check(&u, &psi, m, draws, derive(base, &[rows.len() as u64]))?;
        rows.push((
            tag,
            ReportRow {
                experiment: String::new(),
                panel: String::new(),
                scheme: "cs".into(),
                m,
                j: 1,
                metric: "max_abs_z".into(),
                value: c.max_z,
                mc_stderr: 0.0,
                replications: draws,
                seed: master,
            },
        ));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Rank failures

fn run_rank_failure(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut out = RowBuilder::new(cfg);
    let master = panel_master(cfg, 0);
    let dgp = cfg.dgps[0];
    let k = cfg.k_grid[0];
    let reps: Vec<Vec<bool>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<bool>> {
            let mut rng = stream(derive(master, &[rep as u64]));
            let x = dgp.design(cfg.n, k, &mut rng)?;
            let mut res = Vec::new();
            for scheme in &cfg.schemes {
                for &m in &cfg.m_grid {
                    let seed = replication_seed(master, rep as u64, scheme.code(), m as u64, 1);
                    let op = build_sketch(*scheme, cfg.n, m, seed, Some(&x))?;
                    let xs = apply_sketch(&op, &x)?;
                    res.push(xs.rows() == 0 || numeric_rank(&xs, DEFAULT_RANK_TOL)? < k);
                }
            }
            Ok(res)
        })
        .collect::<Result<_>>()?;
    let mut cell = 0;
    let panel = format!("{}_K{}", dgp.name(), k);
    for scheme in &cfg.schemes {
        for &m in &cfg.m_grid {
            let v: Vec<bool> = reps.iter().map(|r| r[cell]).collect();
            out.rate(&panel, scheme.label(), m, 1, "singular_fraction", &v);
            cell += 1;
        }
    }
    Ok(out.rows)
}

// ---------------------------------------------------------------------------
// Reports

fn csv_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

/// The report in the requested format.
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no report rows".into()));
    }
    Ok(match format {
        ReportFormat::Csv => render_csv(rows)?,
        ReportFormat::Markdown => render_markdown(rows),
    })
}

fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.panel.clone(),
            r.scheme.clone(),
            r.m.to_string(),
            r.j.to_string(),
            r.metric.clone(),
            csv_number(r.value),
            csv_number(r.mc_stderr),
            r.replications.to_string(),
            r.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Markdown grid per (experiment, panel, metric): schemes as columns, `(m, J)` as rows.
fn render_markdown(rows: &[ReportRow]) -> String {
    let mut groups: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        let key = (r.experiment.clone(), r.panel.clone(), r.metric.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut s = String::new();
    for (exp, panel, metric) in groups {
        let members: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| r.experiment == exp && r.panel == panel && r.metric == metric)
            .collect();
        let mut schemes: Vec<&str> = Vec::new();
        for r in &members {
            if !schemes.contains(&r.scheme.as_str()) {
                schemes.push(&r.scheme);
            }
        }
        let mut grid: BTreeMap<(usize, usize), BTreeMap<&str, f64>> = BTreeMap::new();
        for r in &members {
            grid.entry((r.m, r.j)).or_default().insert(&r.scheme, r.value);
        }
        s.push_str(&format!("### {exp} / {panel} / {metric}\n\n| m | J |"));
        for sc in &schemes {
            s.push_str(&format!(" {sc} |"));
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---|".repeat(schemes.len()));
        s.push('\n');
        for ((m, j), cells) in &grid {
            s.push_str(&format!("| {m} | {j} |"));
            for sc in &schemes {
                match cells.get(sc) {
                    Some(v) => s.push_str(&format!(" {} |", format_cell(*v))),
                    None => s.push_str(" |"),
                }
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

/// Writes the report to `path`.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(rows, format)?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a CSV report written by [`emit_report`].
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::NonNumeric {
                row: i + 1,
                col: c,
                value: field(c).to_string(),
            })
        };
        let int = |c: usize| -> Result<usize> {
            field(c).parse::<usize>().map_err(|_| Error::NonNumeric {
                row: i + 1,
                col: c,
                value: field(c).to_string(),
            })
        };
        rows.push(ReportRow {
            experiment: field(0).to_string(),
            panel: field(1).to_string(),
            scheme: field(2).to_string(),
            m: int(3)?,
            j: int(4)?,
            metric: field(5).to_string(),
            value: num(6)?,
            mc_stderr: num(7)?,
            replications: int(8)?,
            seed: field(9).parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                col: 9,
                value: field(9).to_string(),
            })?,
        });
    }
    Ok(rows)
}
