//! Command-line front end: `sketch`, `regress`, `pool`, `size`, `mc` and `verify`.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for data
//! errors, 4 when every replication or sketch failed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{
    emit_report, render_report, run_experiment_with_workers, ExperimentConfig, ExperimentKind,
    ReportFormat, FULL_REPLICATIONS,
};
use crate::io::{coefficient_names, ingest_csv, read_table, write_fit_to, write_table, write_table_to, FitMetadata};
use crate::pooling::{pooled_fit_with, t1_statistic, t2_critical, t2_statistic, PoolConfig};
use crate::regression::{ols, sketched_ols, ContrastVector, VarianceMode};
use crate::size::{
    coherence_rule, inv_norm_cdf, m1_rule, m2_rule, m3_rule, s_value, SizeRuleResult, Tail,
};
use crate::sketch::{apply_sketch, build_sketch, SchemeId};

#[derive(Parser, Debug)]
#[command(name = "sketchreg", version, about = "Sketched least squares and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply a sketch to every column of a CSV file.
    Sketch(SketchArgs),
    /// Full-sample or sketched least squares.
    Regress(RegressArgs),
    /// Pooled fit over J disjoint sketches.
    Pool(PoolArgs),
    /// Sketch-size rules.
    Size(SizeArgs),
    /// Run a Monte Carlo experiment.
    Mc(McArgs),
    /// Coverage of the bounds relating sketched and full-sample estimates.
    Verify(McArgs),
}

#[derive(Args, Debug)]
pub struct SketchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "rs1")]
    pub scheme: SchemeId,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long)]
    pub target: String,
    /// Comma-separated regressor columns; every other column when absent.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Add a leading column of ones.
    #[arg(long)]
    pub intercept: bool,
}

#[derive(Args, Debug)]
pub struct RegressArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Sketching scheme; the full sample is used when absent.
    #[arg(long)]
    pub scheme: Option<SchemeId>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "homo")]
    pub variance: VarianceMode,
    /// Fit CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "rs1")]
    pub scheme: SchemeId,
    #[arg(long)]
    pub m: usize,
    #[arg(long = "J", alias = "j")]
    pub j: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "homo")]
    pub variance: VarianceMode,
    /// Name of the tested coefficient; the last one when absent.
    #[arg(long)]
    pub coef: Option<String>,
    /// Hypothesized value of the tested coefficient.
    #[arg(long, default_value_t = 0.0)]
    pub null: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Args, Debug)]
pub struct SizeArgs {
    #[command(subcommand)]
    pub rule: SizeCommand,
}

#[derive(Subcommand, Debug)]
pub enum SizeCommand {
    /// Moment rule for a list of moment counts, plus the thin-tail rule.
    M1 {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long, value_delimiter = ',', default_value = "6,8,10,15")]
        r: Vec<f64>,
    },
    /// Inference-conscious size from a preliminary variance estimate.
    M2 {
        #[arg(long, default_value_t = 1000)]
        m0: u64,
        /// Estimated variance of the contrast from the preliminary sketch.
        #[arg(long)]
        var: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.005,0.01,0.015,0.02,0.025")]
        effect: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9")]
        gamma: Vec<f64>,
    },
    /// Size from the anticipated full-sample t statistic.
    M3 {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        tau2: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9")]
        gamma: Vec<f64>,
    },
    /// Rows for uniform sampling to embed a design of given coherence.
    Coherence {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        coherence: f64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long = "J", alias = "j", default_value_t = 1)]
        j: u64,
    },
    /// Table of S(alpha, gamma).
    STable {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9")]
        gamma: Vec<f64>,
    },
    /// Simulated preliminary sketch followed by the m2 grid.
    Table4(McArgs),
}

#[derive(Args, Debug, Default)]
pub struct McArgs {
    /// table1, table3, table4, bounds or rank_failure.
    #[arg(long)]
    pub experiment: Option<ExperimentKind>,
    /// Flat key=value file applied after the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Use 1000 replications.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, value_delimiter = ',')]
    pub scheme: Option<Vec<SchemeId>>,
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    #[arg(long = "J", alias = "j", value_delimiter = ',')]
    pub j: Option<Vec<usize>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Directory for the report files; the report goes to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: String,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DomainError(_) | Error::PartitionImpossible { .. } => 2,
        Error::AllSketchesSingular(_) => 4,
        _ => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command, returning the exit code on success.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Sketch(a) => cmd_sketch(a, out),
        Command::Regress(a) => cmd_regress(a, out),
        Command::Pool(a) => cmd_pool(a, out),
        Command::Size(a) => cmd_size(a, out),
        Command::Mc(a) => cmd_mc(a, ExperimentKind::Table1, out),
        Command::Verify(a) => cmd_mc(a, ExperimentKind::BoundSuite, out),
    }
}

fn cmd_sketch(a: SketchArgs, out: &mut dyn Write) -> Result<i32> {
    let table = read_table(&a.input)?;
    let n = table.data.rows();
    check_m(a.m, n)?;
    let op = build_sketch(a.scheme, n, a.m, a.seed, Some(&table.data))?;
    let sketched = apply_sketch(&op, &table.data)?;
    match &a.out {
        Some(p) => {
            write_table(p, &table.header, &sketched)?;
            writeln!(out, "{}", op.to_record()?)?;
        }
        None => write_table_to(out, &table.header, &sketched)?,
    }
    Ok(0)
}

fn check_m(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("--m must lie in 1..={n}, got {m}")));
    }
    Ok(())
}

fn load(data: &DataArgs) -> Result<(Vec<f64>, crate::linalg::DenseMatrix, Vec<String>)> {
    let (y, x) = ingest_csv(&data.input, &data.target, data.features.as_deref(), data.intercept)?;
    let header = read_table(&data.input)?.header;
    let names = coefficient_names(&header, &data.target, data.features.as_deref(), data.intercept);
    Ok((y, x, names))
}

fn cmd_regress(a: RegressArgs, out: &mut dyn Write) -> Result<i32> {
    let (y, x, names) = load(&a.data)?;
    let (fit, meta) = match a.scheme {
        None => (ols(&y, &x, a.variance)?, FitMetadata::default()),
        Some(scheme) => {
            let m = a
                .m
                .ok_or_else(|| Error::Config("a sketched fit needs --m".into()))?;
            check_m(m, y.len())?;
            let op = build_sketch(scheme, y.len(), m, a.seed, Some(&x))?;
            (
                sketched_ols(&y, &x, &op, a.variance)?,
                FitMetadata {
                    scheme: Some(scheme.label().to_string()),
                    seed: Some(a.seed),
                    sketch_size: Some(m),
                },
            )
        }
    };
    match &a.out {
        Some(p) => crate::io::write_fit(p, &fit, &names, &meta)?,
        None => write_fit_to(out, &fit, &names, &meta)?,
    }
    Ok(0)
}

fn cmd_pool(a: PoolArgs, out: &mut dyn Write) -> Result<i32> {
    let (y, x, names) = load(&a.data)?;
    let k = x.cols();
    let idx = match &a.coef {
        Some(c) => names
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| Error::Config(format!("no coefficient named {c:?}")))?,
        None => k - 1,
    };
    let contrast = ContrastVector::unit(k, idx)?;
    let cfg = PoolConfig {
        m: a.m,
        j: a.j,
        scheme: a.scheme,
        mode: a.variance,
        seed: a.seed,
    };
    let pf = pooled_fit_with(&y, &x, &cfg, &contrast, a.null)?;
    writeln!(out, "# scheme={} m={} J={} seed={} failures={}", a.scheme, a.m, a.j, a.seed, pf.failures)?;
    writeln!(out, "coef,beta_bar,se_beta_bar")?;
    for (i, name) in names.iter().enumerate() {
        writeln!(out, "{name},{},{}", pf.beta_bar[i], pf.se_beta_bar[i])?;
    }
    let z = inv_norm_cdf(1.0 - a.alpha / 2.0)?;
    let t1 = t1_statistic(&pf);
    writeln!(out, "# test {}={}", names[idx], a.null)?;
    writeln!(out, "T1,{t1},critical,{z},reject,{}", t1.abs() > z)?;
    if pf.j >= 2 {
        match t2_statistic(&pf) {
            Ok(t2) => {
                let crit = t2_critical(pf.j, a.alpha)?;
                writeln!(out, "T2,{t2},critical,{crit},reject,{}", t2.abs() > crit)?;
            }
            Err(e) => writeln!(out, "T2,NaN,error,{e}")?,
        }
    }
    Ok(0)
}

fn size_line(out: &mut dyn Write, label: &str, r: &SizeRuleResult) -> Result<()> {
    writeln!(
        out,
        "{},{label},{},{},{}",
        r.rule,
        r.m,
        r.raw,
        if r.feasible { "feasible" } else { "infeasible" }
    )?;
    Ok(())
}

fn cmd_size(a: SizeArgs, out: &mut dyn Write) -> Result<i32> {
    match a.rule {
        SizeCommand::M1 { n, k, r } => {
            writeln!(out, "rule,setting,m,raw,status")?;
            for rv in r {
                size_line(out, &format!("r={rv}"), &m1_rule(n, k, Tail::Moments(rv))?)?;
            }
            size_line(out, "thin_tail", &m1_rule(n, k, Tail::ThinTail)?)?;
        }
        SizeCommand::M2 {
            m0,
            var,
            effect,
            alpha,
            gamma,
        } => {
            write!(out, "gamma")?;
            for e in &effect {
                write!(out, ",{e}")?;
            }
            writeln!(out)?;
            for g in gamma {
                write!(out, "{g}")?;
                for e in &effect {
                    write!(out, ",{}", m2_rule(m0, var, *e, alpha, g)?.m)?;
                }
                writeln!(out)?;
            }
        }
        SizeCommand::M3 {
            n,
            tau2,
            alpha,
            gamma,
        } => {
            writeln!(out, "rule,setting,m,raw,status")?;
            for g in gamma {
                size_line(out, &format!("gamma={g}"), &m3_rule(n, tau2, alpha, g)?)?;
            }
        }
        SizeCommand::Coherence {
            n,
            k,
            coherence,
            epsilon,
            delta,
            j,
        } => {
            writeln!(out, "rule,setting,m,raw,status")?;
            size_line(out, &format!("J={j}"), &coherence_rule(n, coherence, epsilon, delta, j, k)?)?;
        }
        SizeCommand::STable { alpha, gamma } => {
            write!(out, "alpha")?;
            for g in &gamma {
                write!(out, ",{g}")?;
            }
            writeln!(out)?;
            for al in alpha {
                write!(out, "{al}")?;
                for g in &gamma {
                    write!(out, ",{:.3}", s_value(al, *g)?)?;
                }
                writeln!(out)?;
            }
        }
        SizeCommand::Table4(mut args) => {
            args.experiment = Some(ExperimentKind::Table4);
            return cmd_mc(args, ExperimentKind::Table4, out);
        }
    }
    Ok(0)
}

/// Builds the configuration: defaults for the experiment, then flags, then the config file.
pub fn build_config(a: &McArgs, default: ExperimentKind) -> Result<ExperimentConfig> {
    let kind = a.experiment.unwrap_or(default);
    let mut cfg = ExperimentConfig::for_kind(kind);
    if a.paper_scale && !matches!(kind, ExperimentKind::Table4) {
        cfg.replications = FULL_REPLICATIONS;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(s) = &a.scheme {
        cfg.schemes = s.clone();
    }
    if let Some(m) = &a.m {
        cfg.m_grid = m.clone();
    }
    if let Some(j) = &a.j {
        cfg.j_grid = j.clone();
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(g) = &a.gamma {
        cfg.gamma_grid = g.clone();
    }
    if let Some(p) = &a.out {
        cfg.output_dir = Some(p.clone());
    }
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_mc(a: McArgs, default: ExperimentKind, out: &mut dyn Write) -> Result<i32> {
    let format: ReportFormat = a.format.parse()?;
    let cfg = build_config(&a, default)?;
    let rows = run_experiment_with_workers(&cfg, a.workers)?;
    let all_failed = rows.iter().all(|r| r.value.is_nan());
    match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let ext = match format {
                ReportFormat::Csv => "csv",
                ReportFormat::Markdown => "md",
            };
            let path = report_path(dir, cfg.experiment, ext);
            emit_report(&rows, format, &path)?;
            writeln!(out, "{}", path.display())?;
        }
        None => out.write_all(render_report(&rows, format)?.as_bytes())?,
    }
    Ok(if all_failed { 4 } else { 0 })
}

fn report_path(dir: &Path, kind: ExperimentKind, ext: &str) -> PathBuf {
    dir.join(format!("{}.{ext}", kind.name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli(
            std::iter::once("sketchreg").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn s_table_output() {
        let (code, out, _) = run(&["size", "s-table"]);
        assert_eq!(code, 0);
        assert!(out.contains("0.05,1.645,1.898,2.169,2.486,2.926"), "{out}");
    }

    #[test]
    fn m1_output() {
        let (code, out, _) = run(&["size", "m1", "--n", "562170", "--k", "423", "--r", "8,15"]);
        assert_eq!(code, 0);
        assert!(out.contains("m1_moment,r=8,317657"));
        assert!(out.contains("m1_thin_tail,thin_tail,8158"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(&["mc", "--replications", "0"]).0, 2);
        assert_eq!(run(&["bogus"]).0, 2);
        let (code, _, err) = run(&["regress", "--input", "/nonexistent.csv", "--target", "y"]);
        assert_eq!(code, 3, "{err}");
    }
}
