//! The `randgame` command line.
//!
//! Exit codes: 0 success, 1 failed convergence or failed verification,
//! 2 usage error, 3 internal error (a violated analytic bound, I/O).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density2::{bounds_e2d, e2d, DensityContext};
use crate::error::Error;
use crate::exec::with_threads;
use crate::kostlan::{e_n2_closed, e_nd};
use crate::oracle::{mc_e2d_with, mc_en2_with, McConfig, McReport};
use crate::quad::QuadConfig;
use crate::report::{EstimateReport, Method};
use crate::verify::{self, ASource, Level, VerifyOptions};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_160_601;

/// Largest `d` accepted by `mc --n 2`.
pub const MC_MAX_D: usize = 30;
/// Largest `n` accepted by `mc --d 2`.
pub const MC_MAX_N: usize = 6;

#[derive(Debug, Parser)]
#[command(
    name = "randgame",
    version,
    about = "Expected number of internal equilibria in random evolutionary games"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// E(n,d) for one game size.
    Expected(ExpectedArgs),
    /// E(n,d) over a grid of strategy and player counts.
    Table(TableArgs),
    /// Analytic lower and upper bounds around E(2,d).
    Bounds(BoundsArgs),
    /// The two-strategy root density f(t) on a grid.
    Density(DensityArgs),
    /// Monte Carlo estimate by direct root counting.
    Mc(McArgs),
    /// Run the internal consistency checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct QuadArgs {
    /// Relative tolerance of the 1D adaptive quadrature.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Cubature nodes per dimension.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Cubature nodes per dimension for the error estimate.
    #[arg(long)]
    pub verify_nodes: Option<usize>,
}

impl QuadArgs {
    pub fn config(&self) -> Result<QuadConfig, CliError> {
        let mut cfg = QuadConfig::default();
        if let Some(t) = self.rel_tol {
            cfg.rel_tol = t;
        }
        if let Some(n) = self.nodes {
            cfg.nodes_per_dim = n;
            if self.verify_nodes.is_none() {
                cfg.verify_nodes_per_dim = (3 * n / 4).max(1);
            }
        }
        if let Some(v) = self.verify_nodes {
            cfg.verify_nodes_per_dim = v;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ExpectedArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    /// Comma-separated strategy counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub d_min: usize,
    #[arg(long)]
    pub d_max: usize,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 2)]
    pub d_min: usize,
    #[arg(long)]
    pub d_max: usize,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub d: usize,
    /// Number of grid points.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value_t = 5.0)]
    pub t_max: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Standard deviation of the payoff differences.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[command(flatten)]
    pub quad: QuadArgs,
    /// Output file (default: stdout). Always JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(value_enum, default_value = "quick")]
    pub level: LevelArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Replace the a_k formula with a sign-flipped one; the run must fail.
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Quick,
    Full,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Compute(Error),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::UnsupportedDimension { .. } => CliError::Usage(e.to_string()),
            other => CliError::Compute(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(Error::FailedConvergence { .. }) | CliError::VerifyFailed(_) => 1,
            CliError::Compute(_) => 3,
            CliError::Internal(_) | CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => 3,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "randgame: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    // The closure needs `Send`; buffer the output and copy it afterwards.
    let (result, buf) = with_threads(cli.threads, || {
        let mut buf = Vec::new();
        let r = dispatch(&cli.command, &mut buf);
        (r, buf)
    });
    out.write_all(&buf)?;
    result
}

fn dispatch(command: &Command, out: &mut Vec<u8>) -> Result<(), CliError> {
    match command {
        Command::Expected(a) => {
            let report = cmd_expected(a.n, a.d, &a.quad.config()?)?;
            emit_reports(&[report], a.output.format, a.output.out.as_deref(), out, true)
        }
        Command::Table(a) => cmd_table(a, out),
        Command::Bounds(a) => cmd_bounds(a, out),
        Command::Density(a) => cmd_density(a, out),
        Command::Mc(a) => cmd_mc(a, out),
        Command::Verify(a) => cmd_verify(a, out),
    }
}

/// `E(n, d)`: closed form at `d = 2`, adaptive quadrature of the density at
/// `n = 2`, tensor cubature otherwise.
pub fn cmd_expected(n: usize, d: usize, quad: &QuadConfig) -> Result<EstimateReport, CliError> {
    if n < 2 || d < 2 {
        return Err(CliError::Usage(format!("need n >= 2 and d >= 2, got n = {n}, d = {d}")));
    }
    if d == 2 {
        return Ok(EstimateReport::closed_form(n, 2, e_n2_closed(n)));
    }
    if n == 2 {
        return Ok(e2d(d, quad)?);
    }
    Ok(e_nd(n, d, quad)?)
}

/// One row of the full-precision table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub d: usize,
    pub value: f64,
    pub method: Method,
    pub err_estimate: f64,
    pub evaluations: u64,
    pub nodes: Option<usize>,
    pub verify_nodes: Option<usize>,
    pub seed: Option<u64>,
}

impl From<&EstimateReport> for ReportRow {
    fn from(r: &EstimateReport) -> Self {
        ReportRow {
            n: r.n,
            d: r.d,
            value: r.value,
            method: r.method,
            err_estimate: r.err_estimate,
            evaluations: r.evaluations,
            nodes: r.nodes.map(|x| x.0),
            verify_nodes: r.nodes.map(|x| x.1),
            seed: r.seed,
        }
    }
}

pub fn write_report_csv<W: Write>(w: W, reports: &[EstimateReport]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in reports {
        wtr.serialize(ReportRow::from(r))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_report_csv<R: io::Read>(r: R) -> Result<Vec<ReportRow>, CliError> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

fn open_out(path: &Path) -> Result<File, CliError> {
    Ok(File::create(path)?)
}

fn emit_reports(
    reports: &[EstimateReport],
    format: Option<Format>,
    path: Option<&Path>,
    out: &mut Vec<u8>,
    human_default: bool,
) -> Result<(), CliError> {
    let mut sink: Box<dyn Write + '_> = match path {
        Some(p) => Box::new(open_out(p)?),
        None => Box::new(&mut *out),
    };
    match format {
        Some(Format::Csv) => write_report_csv(&mut sink, reports)?,
        Some(Format::Json) => {
            if reports.len() == 1 {
                serde_json::to_writer_pretty(&mut sink, &reports[0])?;
            } else {
                serde_json::to_writer_pretty(&mut sink, reports)?;
            }
            writeln!(sink)?;
        }
        None if human_default => {
            for r in reports {
                writeln!(sink, "{r}")?;
            }
        }
        None => write_report_csv(&mut sink, reports)?,
    }
    sink.flush()?;
    Ok(())
}

fn check_d_range(d_min: usize, d_max: usize) -> Result<(), CliError> {
    if d_min < 2 || d_max < d_min {
        return Err(CliError::Usage(format!(
            "need 2 <= d-min <= d-max, got {d_min}..{d_max}"
        )));
    }
    Ok(())
}

/// Sidecar path for the full-precision table: `table.csv` -> `table.full.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.full.{ext}"))
}

/// Computes every cell of the table, row by row.
pub fn table_reports(
    ns: &[usize],
    d_min: usize,
    d_max: usize,
    quad: &QuadConfig,
) -> Result<Vec<EstimateReport>, CliError> {
    check_d_range(d_min, d_max)?;
    if ns.is_empty() {
        return Err(CliError::Usage("--n needs at least one value".into()));
    }
    let mut reports = Vec::new();
    for &n in ns {
        for d in d_min..=d_max {
            reports.push(cmd_expected(n, d, quad)?);
        }
    }
    Ok(reports)
}

/// Writes the two-decimal layout: one row per `n`, one column per `d`.
pub fn write_table_layout<W: Write>(
    w: W,
    reports: &[EstimateReport],
    ns: &[usize],
    d_min: usize,
    d_max: usize,
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["n".to_string()];
    header.extend((d_min..=d_max).map(|d| format!("d={d}")));
    wtr.write_record(&header)?;
    for &n in ns {
        let mut row = vec![n.to_string()];
        for d in d_min..=d_max {
            let r = reports
                .iter()
                .find(|r| r.n == n && r.d == d)
                .ok_or_else(|| CliError::Internal(format!("missing cell ({n},{d})")))?;
            row.push(format!("{:.2}", r.value));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_table(a: &TableArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let quad = a.quad.config()?;
    let reports = table_reports(&a.n, a.d_min, a.d_max, &quad)?;
    if a.output.format == Some(Format::Json) {
        return emit_reports(&reports, Some(Format::Json), a.output.out.as_deref(), out, false);
    }
    match &a.output.out {
        Some(path) => {
            write_table_layout(open_out(path)?, &reports, &a.n, a.d_min, a.d_max)?;
            let side = sidecar_path(path);
            write_report_csv(open_out(&side)?, &reports)?;
            writeln!(out, "wrote {} and {}", path.display(), side.display())?;
        }
        None => {
            write_table_layout(&mut *out, &reports, &a.n, a.d_min, a.d_max)?;
            writeln!(out)?;
            write_report_csv(&mut *out, &reports)?;
        }
    }
    Ok(())
}

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub d: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub method: Method,
    pub err_estimate: f64,
}

pub fn bounds_rows(d_min: usize, d_max: usize, quad: &QuadConfig) -> Result<Vec<BoundsRow>, CliError> {
    check_d_range(d_min, d_max)?;
    let mut rows = Vec::new();
    for d in d_min..=d_max {
        let e = e2d(d, quad)?;
        let (lower, upper) = bounds_e2d(d);
        if !(lower <= e.value && e.value <= upper) {
            return Err(CliError::Internal(format!(
                "bounds violated at d = {d}: {lower} <= {} <= {upper} does not hold",
                e.value
            )));
        }
        rows.push(BoundsRow {
            d,
            lower,
            value: e.value,
            upper,
            method: e.method,
            err_estimate: e.err_estimate,
        });
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(
    rows: &[T],
    format: Option<Format>,
    path: Option<&Path>,
    out: &mut Vec<u8>,
) -> Result<(), CliError> {
    let mut sink: Box<dyn Write + '_> = match path {
        Some(p) => Box::new(open_out(p)?),
        None => Box::new(&mut *out),
    };
    if format == Some(Format::Json) {
        serde_json::to_writer_pretty(&mut sink, rows)?;
        writeln!(sink)?;
    } else {
        let mut wtr = csv::Writer::from_writer(&mut sink);
        for r in rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
    }
    sink.flush()?;
    Ok(())
}

fn cmd_bounds(a: &BoundsArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let rows = bounds_rows(a.d_min, a.d_max, &a.quad.config()?)?;
    write_rows(&rows, a.output.format, a.output.out.as_deref(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub t: f64,
    pub f: f64,
}

pub fn density_rows(d: usize, grid: usize, t_max: f64) -> Result<Vec<DensityRow>, CliError> {
    if grid < 2 {
        return Err(CliError::Usage("--grid needs at least 2 points".into()));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(CliError::Usage(format!("--t-max must be positive, got {t_max}")));
    }
    let ctx = DensityContext::new(d)?;
    Ok((0..grid)
        .map(|i| {
            let t = t_max * i as f64 / (grid - 1) as f64;
            DensityRow { t, f: ctx.density_f(t) }
        })
        .collect())
}

fn cmd_density(a: &DensityArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let rows = density_rows(a.d, a.grid, a.t_max)?;
    write_rows(&rows, a.output.format, a.output.out.as_deref(), out)
}

/// Analytic or quadrature value a Monte Carlo run is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub reference: EstimateReport,
    pub difference: f64,
    /// `|difference|` in units of the Monte Carlo standard error.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutput {
    pub method: Method,
    pub report: McReport,
    pub comparison: Option<McComparison>,
}

pub fn mc_output(n: usize, d: usize, cfg: &McConfig, quad: &QuadConfig) -> Result<McOutput, CliError> {
    let supported = (n == 2 && (2..=MC_MAX_D).contains(&d)) || (d == 2 && (2..=MC_MAX_N).contains(&n));
    if !supported {
        return Err(CliError::Usage(format!(
            "monte carlo supports n = 2 with 2 <= d <= {MC_MAX_D}, or d = 2 with 2 <= n <= {MC_MAX_N}; got n = {n}, d = {d}"
        )));
    }
    if !(cfg.sigma > 0.0 && cfg.sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be positive, got {}", cfg.sigma)));
    }
    let report = if n == 2 {
        mc_e2d_with(d, cfg)?
    } else {
        mc_en2_with(n, cfg)?
    };
    let reference = cmd_expected(n, d, quad)?;
    let difference = report.mean_count - reference.value;
    let z_score = if report.std_err > 0.0 {
        difference.abs() / report.std_err
    } else if difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(McOutput {
        method: Method::MonteCarlo,
        report,
        comparison: Some(McComparison {
            reference,
            difference,
            z_score,
        }),
    })
}

fn cmd_mc(a: &McArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let mut cfg = McConfig::new(a.samples, a.seed);
    cfg.sigma = a.sigma;
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let result = mc_output(a.n, a.d, &cfg, &a.quad.config()?)?;
    let mut sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(open_out(p)?),
        None => Box::new(&mut *out),
    };
    serde_json::to_writer_pretty(&mut sink, &result)?;
    writeln!(sink)?;
    sink.flush()?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &mut Vec<u8>) -> Result<(), CliError> {
    let level = match a.level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let mut opts = VerifyOptions::new(level, a.seed);
    if a.inject_sign_flip {
        opts.a_source = ASource::SignFlipped;
    }
    let summary = verify::run(&opts);
    if a.format == Some(Format::Json) {
        serde_json::to_writer_pretty(&mut *out, &summary)?;
        writeln!(out)?;
    } else {
        for c in &summary.checks {
            writeln!(out, "{c}")?;
        }
        let failed = summary.failures().count();
        writeln!(
            out,
            "{} checks, {} failed (seed {})",
            summary.checks.len(),
            failed,
            summary.seed
        )?;
    }
    if summary.all_passed() {
        Ok(())
    } else {
        let names: Vec<_> = summary.failures().map(|c| c.name).collect();
        Err(CliError::VerifyFailed(names.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("randgame").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn expected_closed_form_is_exact() {
        for n in 2..=6 {
            let r = cmd_expected(n, 2, &QuadConfig::default()).unwrap();
            assert_eq!(r.value, 2f64.powi(1 - n as i32));
            assert_eq!(r.method, Method::ClosedForm);
        }
    }

    #[test]
    fn expected_prints_method_and_error() {
        let (code, out, _) = run_args(&["expected", "--n", "3", "--d", "2"]);
        assert_eq!(code, 0);
        assert!(out.contains("E(3,2) = 0.25"), "{out}");
        assert!(out.contains("method=closed-form"));
        assert!(out.contains("err_estimate="));
    }

    #[test]
    fn expected_n2_uses_quadrature() {
        let (code, out, _) = run_args(&["expected", "--n", "2", "--d", "10", "--format", "json"]);
        assert_eq!(code, 0);
        let r: EstimateReport = serde_json::from_str(&out).unwrap();
        assert_eq!(r.method, Method::Quadrature);
        assert!((r.value - 1.84).abs() < 5e-3);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["expected", "--n", "5", "--d", "3"]).0, 2);
        assert_eq!(run_args(&["expected", "--n", "1", "--d", "3"]).0, 2);
        assert_eq!(run_args(&["expected", "--n", "2"]).0, 2);
        assert_eq!(run_args(&["mc", "--n", "3", "--d", "3"]).0, 2);
        assert_eq!(run_args(&["mc", "--n", "2", "--d", "31"]).0, 2);
        assert_eq!(run_args(&["bogus"]).0, 2);
        assert_eq!(run_args(&["--threads", "0", "expected", "--n", "2", "--d", "2"]).0, 2);
    }

    #[test]
    fn failed_convergence_exits_1() {
        // too few nodes for the cubature tolerance
        let (code, _, err) = run_args(&[
            "expected",
            "--n",
            "3",
            "--d",
            "8",
            "--nodes",
            "6",
            "--verify-nodes",
            "4",
        ]);
        assert_eq!(code, 1, "{err}");
        assert!(err.contains("failed to converge"));
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/t1.csv")),
            PathBuf::from("/tmp/t1.full.csv")
        );
        assert_eq!(sidecar_path(Path::new("out")), PathBuf::from("out.full.csv"));
    }

    #[test]
    fn table_single_cell() {
        let (code, out, _) = run_args(&["table", "--n", "2", "--d-max", "2"]);
        assert_eq!(code, 0);
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("n,d=2"));
        assert_eq!(lines.next(), Some("2,0.50"));
    }

    #[test]
    fn report_csv_round_trips() {
        let reports = vec![
            EstimateReport::closed_form(3, 2, 0.25),
            e2d(7, &QuadConfig::default()).unwrap(),
            EstimateReport {
                n: 3,
                d: 3,
                value: 0.123_456_789_012_345_67,
                method: Method::Quadrature,
                err_estimate: 3.3e-7,
                evaluations: 12_800,
                nodes: Some((80, 60)),
                seed: None,
            },
        ];
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &reports).unwrap();
        let rows = read_report_csv(buf.as_slice()).unwrap();
        let expected: Vec<ReportRow> = reports.iter().map(ReportRow::from).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn density_csv_round_trips() {
        let rows = density_rows(6, 57, 4.0).unwrap();
        let mut buf = Vec::new();
        {
            let mut wtr = csv::Writer::from_writer(&mut buf);
            for r in &rows {
                wtr.serialize(r).unwrap();
            }
        }
        let back: Vec<DensityRow> = csv::Reader::from_reader(buf.as_slice())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, rows);
        assert!(String::from_utf8(buf).unwrap().starts_with("t,f\n"));
    }

    #[test]
    fn bounds_rows_hold_sandwich() {
        let rows = bounds_rows(2, 20, &QuadConfig::default()).unwrap();
        assert!((rows[0].lower - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        assert!((rows[0].value - 0.5).abs() < 1e-9);
        assert!(rows.windows(2).all(|w| w[1].value > w[0].value));
    }

    #[test]
    fn mc_reports_reference() {
        let cfg = McConfig::new(4096, 5);
        let o = mc_output(2, 4, &cfg, &QuadConfig::default()).unwrap();
        let c = o.comparison.unwrap();
        assert_eq!(c.reference.method, Method::Quadrature);
        assert_eq!(o.report.seed, 5);
        assert_eq!(o.method, Method::MonteCarlo);
    }

    #[test]
    fn verify_injected_bug_exits_1() {
        let (code, out, _) = run_args(&["verify", "quick", "--inject-sign-flip"]);
        assert_eq!(code, 1);
        assert!(out.contains("FAIL a_k identities"), "{out}");
    }
}
