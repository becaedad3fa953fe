//! Command-line front end for the `cachebc` binary.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid arguments, 3 a checked
//! assertion failed (decode failure, duration mismatch, gap ≥ 4).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    dcsit_count_closed_form, dcsit_load, dcsit_scalar_count_exact, dof_log_approx,
    performance_point, zf_load, FastEvaluator, PerformancePoint, SystemParams,
};
use crate::delivery::run_simulation;
use crate::error::{Error, Result};
use crate::rational::{as_u64, format_rational, int, parse_rational, to_f64, Rational};
use crate::scheme::folded_manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

pub const CSV_HEADER: &str = "K,N,M,gamma,alpha,eta,T_simple,T_best,T_lower,dof,gap";

#[derive(Debug, Parser)]
#[command(
    name = "cachebc",
    version,
    about = "Cache-aided broadcast with imperfect and delayed CSIT"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Delivery time, DoF, lower bound and gap for one configuration.
    Analyze(AnalyzeArgs),
    /// Evaluate a grid of configurations and write CSV.
    Sweep(SweepArgs),
    /// Run placement, folding and delivery end to end and verify decoding.
    Simulate(SimulateArgs),
    /// Maximum gap to the lower bound over K ≤ kmax, all Γ and an α grid.
    GapScan(GapScanArgs),
    /// Delayed-CSIT feedback load of the retrospective scheme.
    CsitLoad(CsitLoadArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    #[arg(long)]
    pub k: u32,
    #[arg(long)]
    pub n: u64,
    /// Per-user cache size in files, e.g. `2` or `3/2`.
    #[arg(long)]
    pub m: String,
    /// Current-CSIT quality exponent in [0, 1], e.g. `3/4` or `0.25`.
    #[arg(long, default_value = "0")]
    pub alpha: String,
}

impl SystemArgs {
    fn params(&self) -> Result<SystemParams> {
        SystemParams::new(
            self.k,
            self.n,
            parse_rational(&self.m)?,
            parse_rational(&self.alpha)?,
        )
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also simulate with this seed and report the transcript digest.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Alpha,
    Gamma,
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    /// Full performance rows.
    Performance,
    /// Large-K DoF approximation per γ.
    LogApprox,
    /// Delayed-CSIT load per K.
    Dcsit,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long, value_enum, default_value = "performance")]
    pub mode: SweepMode,
    /// Comma-separated grid, e.g. `0,1/4,1/2`. Overrides --from/--to/--step.
    #[arg(long)]
    pub points: Option<String>,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long, default_value = "0")]
    pub alpha: String,
    /// Coherence time in slots, for the D-CSIT mode.
    #[arg(long, default_value_t = 100.0)]
    pub tc: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated 1-based file indices, one per user.
    #[arg(long)]
    pub requests: Option<String>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the transcript JSON here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Write cache and folded-message manifests here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GapScanArgs {
    #[arg(long, default_value_t = 50)]
    pub kmax: u32,
    /// Comma-separated α grid. Defaults to 0, 0.05, …, 1.
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long, default_value = "1/20")]
    pub alpha_step: String,
    /// Per-row CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CsitLoadArgs {
    #[arg(long)]
    pub k: u64,
    /// Normalised cache size γ; `Kγ` must be an integer.
    #[arg(long)]
    pub gamma: String,
    /// Coherence time in slots.
    #[arg(long, default_value_t = 100.0)]
    pub tc: f64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

/// Rational printed both exactly and as a decimal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactValue {
    pub exact: String,
    pub decimal: f64,
}

impl From<&Rational> for ExactValue {
    fn from(r: &Rational) -> Self {
        ExactValue {
            exact: format!("{}/{}", r.numer(), r.denom()),
            decimal: to_f64(r),
        }
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputRow {
    pub k: u32,
    pub n: u64,
    pub m: ExactValue,
    pub gamma: ExactValue,
    pub alpha: ExactValue,
    pub eta: u32,
    pub t_simple: ExactValue,
    pub t_best: ExactValue,
    pub t_lower: ExactValue,
    pub dof: ExactValue,
    pub gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript_digest: Option<String>,
}

impl OutputRow {
    pub fn new(params: &SystemParams, point: &PerformancePoint) -> Self {
        OutputRow {
            k: params.k(),
            n: params.n(),
            m: params.m().into(),
            gamma: (&params.gamma()).into(),
            alpha: params.alpha().into(),
            eta: point.eta,
            t_simple: (&point.t_simple).into(),
            t_best: (&point.t_best).into(),
            t_lower: (&point.t_lower).into(),
            dof: (&point.dof).into(),
            gap: point.gap,
            transcript_digest: None,
        }
    }

    pub fn csv(params: &SystemParams, point: &PerformancePoint) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.6}",
            params.k(),
            params.n(),
            format_rational(params.m()),
            format_rational(&params.gamma()),
            format_rational(params.alpha()),
            point.eta,
            format_rational(&point.t_simple),
            format_rational(&point.t_best),
            format_rational(&point.t_lower),
            format_rational(&point.dof),
            point.gap
        )
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::DecodeFailure(_) | Error::CorruptedCache(_) => EXIT_ASSERTION,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match dispatch(&cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::GapScan(a) => cmd_gap_scan(a, out),
        Command::CsitLoad(a) => cmd_csit_load(a, out),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn print_table(out: &mut dyn Write, rows: &[(&str, String)]) -> Result<()> {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (key, value) in rows {
        writeln!(out, "{key:<width$}  {value}")?;
    }
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    let params = args.system.params()?;
    let point = match performance_point(&params) {
        Err(Error::NoDeliveryNeeded) => {
            writeln!(
                out,
                "no delivery needed: the caches jointly hold every file"
            )?;
            return Ok(EXIT_OK);
        }
        other => other?,
    };
    let mut row = OutputRow::new(&params, &point);
    if let Some(seed) = args.seed {
        row.transcript_digest = Some(
            run_simulation(&params, None, seed)?
                .report
                .transcript_digest,
        );
    }
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&row)?)?,
        Format::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            writeln!(out, "{}", OutputRow::csv(&params, &point))?;
        }
        Format::Table => {
            let mut rows = vec![
                ("K", params.k().to_string()),
                ("N", params.n().to_string()),
                ("M", format_rational(params.m())),
                ("gamma", format_rational(&params.gamma())),
                ("alpha", format_rational(params.alpha())),
                ("eta", point.eta.to_string()),
                ("T_simple", format_rational(&point.t_simple)),
                ("T_best", format_rational(&point.t_best)),
                ("T_lower", format_rational(&point.t_lower)),
                ("dof", format_rational(&point.dof)),
                ("gap", format!("{:.6}", point.gap)),
            ];
            if let Some(d) = &row.transcript_digest {
                rows.push(("transcript_digest", d.clone()));
            }
            print_table(out, &rows)?;
        }
    }
    Ok(EXIT_OK)
}

/// Grid points from `--points` or from `--from/--to/--step` (inclusive).
pub fn parse_grid(
    points: Option<&str>,
    from: Option<&str>,
    to: Option<&str>,
    step: Option<&str>,
) -> Result<Vec<Rational>> {
    let grid = if let Some(list) = points {
        list.split(',')
            .map(parse_rational)
            .collect::<Result<Vec<_>>>()?
    } else {
        let (Some(from), Some(to), Some(step)) = (from, to, step) else {
            return Err(Error::invalid(
                "give --points or all of --from, --to, --step",
            ));
        };
        let (from, to, step) = (
            parse_rational(from)?,
            parse_rational(to)?,
            parse_rational(step)?,
        );
        if !step.is_positive() {
            return Err(Error::invalid("--step must be positive"));
        }
        let mut grid = Vec::new();
        let mut x = from;
        while x <= to {
            grid.push(x.clone());
            x += &step;
            if grid.len() > 1_000_000 {
                return Err(Error::invalid("grid larger than 10^6 points"));
            }
        }
        grid
    };
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    Ok(grid)
}

fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::invalid(format!("{flag} is required for this sweep")))
}

fn grid_u64(grid: &[Rational]) -> Result<Vec<u64>> {
    grid.iter()
        .map(|g| {
            as_u64(g).ok_or_else(|| Error::invalid(format!("K = {g} is not a positive integer")))
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let grid = parse_grid(
        args.points.as_deref(),
        args.from.as_deref(),
        args.to.as_deref(),
        args.step.as_deref(),
    )?;
    let alpha = parse_rational(&args.alpha)?;
    let lines = match (args.mode, args.axis) {
        (SweepMode::Performance, axis) => performance_sweep(args, axis, &grid, &alpha)?,
        (SweepMode::LogApprox, Axis::Gamma) => {
            let a = to_f64(&alpha);
            let mut lines = vec!["gamma,alpha,dof_log_approx,inverse".to_string()];
            for g in &grid {
                let d = dof_log_approx(to_f64(g), a)?;
                lines.push(format!(
                    "{},{},{d:.6},{:.6}",
                    format_rational(g),
                    format_rational(&alpha),
                    1.0 / d
                ));
            }
            lines
        }
        (SweepMode::Dcsit, Axis::K) => {
            let gamma = parse_rational(&require(&args.gamma, "--gamma")?)?;
            let ks = grid_u64(&grid)?;
            let rows = ks
                .par_iter()
                .map(|&k| {
                    let r = csit_report(k, &gamma, args.tc)?;
                    Ok(format!(
                        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                        r.k,
                        r.cumulative,
                        r.scalars,
                        r.scalars_full,
                        r.load,
                        r.load_full,
                        r.load_zf,
                        r.ratio_full,
                        r.ratio_zf
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            std::iter::once("K,Gamma,L,L0,Q,Q0,Q_ZF,Q_over_Q0,Q_over_QZF".to_string())
                .chain(rows)
                .collect()
        }
        (mode, axis) => {
            return Err(Error::invalid(format!(
                "mode {mode:?} does not support axis {axis:?}"
            )));
        }
    };
    let text = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => write_file(path, &text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn performance_sweep(
    args: &SweepArgs,
    axis: Axis,
    grid: &[Rational],
    alpha: &Rational,
) -> Result<Vec<String>> {
    let configs: Vec<SystemParams> = match axis {
        Axis::Alpha => {
            let (k, n, m) = (
                require(&args.k, "--k")?,
                require(&args.n, "--n")?,
                require(&args.m, "--m")?,
            );
            let m = parse_rational(&m)?;
            grid.iter()
                .map(|a| SystemParams::new(k, n, m.clone(), a.clone()))
                .collect::<Result<_>>()?
        }
        Axis::Gamma => {
            let k = require(&args.k, "--k")?;
            let n = args.n.unwrap_or(k as u64);
            grid.iter()
                .map(|g| SystemParams::new(k, n, g * int(n as i64), alpha.clone()))
                .collect::<Result<_>>()?
        }
        Axis::K => {
            let gamma = parse_rational(&require(&args.gamma, "--gamma")?)?;
            grid_u64(grid)?
                .into_iter()
                .map(|k| {
                    let k32 = u32::try_from(k)
                        .map_err(|_| Error::invalid(format!("K = {k} too large")))?;
                    let n = args.n.unwrap_or(k);
                    SystemParams::new(k32, n, &gamma * int(n as i64), alpha.clone())
                })
                .collect::<Result<_>>()?
        }
    };
    let rows = configs
        .par_iter()
        .map(|p| performance_point(p).map(|point| OutputRow::csv(p, &point)))
        .collect::<Result<Vec<_>>>()?;
    Ok(std::iter::once(CSV_HEADER.to_string())
        .chain(rows)
        .collect())
}

fn parse_requests(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("bad request index {s:?}")))
        })
        .collect()
}

#[derive(Serialize)]
struct ManifestExport<'a> {
    caches: crate::scheme::CacheManifest,
    folded: Vec<crate::scheme::FoldedRecord>,
    file_symbols: u64,
    requests: &'a [u32],
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let params = args.system.params()?;
    let requests = args.requests.as_deref().map(parse_requests).transpose()?;
    let run = run_simulation(&params, requests.as_deref(), args.seed)?;
    let report = &run.report;
    let json = serde_json::to_string_pretty(report)?;
    match &args.out {
        Some(path) => write_file(path, &(json + "\n"))?,
        None => writeln!(out, "{json}")?,
    }
    if let Some(path) = &args.transcript {
        write_file(
            path,
            &serde_json::to_string_pretty(&run.transcript.export())?,
        )?;
    }
    if let Some(path) = &args.manifest {
        let manifest = ManifestExport {
            caches: run.caches.manifest(),
            folded: folded_manifest(&run.folded),
            file_symbols: run.packetization.file_symbols,
            requests: &report.requests,
        };
        write_file(path, &serde_json::to_string_pretty(&manifest)?)?;
    }
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        writeln!(
            err,
            "simulation check failed: decode_ok={} duration_ok={} residual_ok={} causality_ok={} singular_solves={}",
            report.decode_ok, report.duration_ok, report.residual_ok, report.causality_ok, report.singular_solves
        )?;
        Ok(EXIT_ASSERTION)
    }
}

/// Gap at one grid point of the scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub k: u32,
    pub cumulative: u32,
    pub alpha: String,
    pub gap: f64,
    /// Lower bound attained at `s = 1`.
    pub single_user_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapScanSummary {
    pub kmax: u32,
    pub rows: usize,
    pub max_gap: f64,
    /// Gap of the worst row recomputed in exact arithmetic.
    pub exact_max_gap: Option<f64>,
    pub argmax: Option<GapRow>,
    pub rows_at_or_above_four: usize,
    /// `α = 1` rows whose bound peaks at `s = 1`, and how many have gap 1.
    pub alpha_one_single_user_rows: usize,
    pub alpha_one_single_user_unit_gap: usize,
}

/// Evaluates the gap in floating point for `N = K`, `M = Γ`, every
/// `Γ ∈ 1..K` and every `α`, rows ordered by `(K, Γ, α)`.
pub fn gap_scan(kmax: u32, alphas: &[Rational]) -> Result<Vec<GapRow>> {
    if kmax < 2 {
        return Err(Error::invalid("kmax must be at least 2"));
    }
    let fast = FastEvaluator::new(kmax);
    let alphas: Vec<(String, f64)> = alphas.iter().map(|a| (a.to_string(), to_f64(a))).collect();
    let configs: Vec<(u32, u32)> = (2..=kmax)
        .flat_map(|k| (1..k).map(move |g| (k, g)))
        .collect();
    let rows = configs
        .par_iter()
        .map(|&(k, g)| {
            alphas
                .iter()
                .map(|(label, a)| {
                    let point = fast.point(k, k as u64, g, *a)?;
                    Ok(GapRow {
                        k,
                        cumulative: g,
                        alpha: label.clone(),
                        gap: point.gap,
                        single_user_bound: point.lower_argmax == 1,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn summarize_gaps(kmax: u32, rows: &[GapRow]) -> Result<GapScanSummary> {
    let argmax = rows.iter().max_by(|a, b| a.gap.total_cmp(&b.gap)).cloned();
    let exact_max_gap = argmax
        .as_ref()
        .map(|r| {
            let params = SystemParams::with_cumulative_cache(
                r.k,
                r.k as u64,
                r.cumulative,
                parse_rational(&r.alpha)?,
            )?;
            crate::analysis::gap(&params)
        })
        .transpose()?;
    let alpha_one: Vec<&GapRow> = rows
        .iter()
        .filter(|r| r.alpha == "1" && r.single_user_bound)
        .collect();
    Ok(GapScanSummary {
        kmax,
        rows: rows.len(),
        max_gap: argmax.as_ref().map_or(0.0, |r| r.gap),
        exact_max_gap,
        argmax,
        rows_at_or_above_four: rows.iter().filter(|r| r.gap >= 4.0).count(),
        alpha_one_single_user_rows: alpha_one.len(),
        alpha_one_single_user_unit_gap: alpha_one
            .iter()
            .filter(|r| (r.gap - 1.0).abs() < 1e-12)
            .count(),
    })
}

pub fn cmd_gap_scan(args: &GapScanArgs, out: &mut dyn Write) -> Result<i32> {
    let alphas = match &args.alphas {
        Some(list) => parse_grid(Some(list), None, None, None)?,
        None => parse_grid(None, Some("0"), Some("1"), Some(&args.alpha_step))?,
    };
    if alphas
        .iter()
        .any(|a| a.is_negative() || *a > Rational::one())
    {
        return Err(Error::invalid("α grid must lie in [0, 1]"));
    }
    let rows = gap_scan(args.kmax, &alphas)?;
    if let Some(path) = &args.out {
        let mut text = String::from("K,Gamma,alpha,gap\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.k, r.cumulative, r.alpha, r.gap
            ));
        }
        write_file(path, &text)?;
    }
    let summary = summarize_gaps(args.kmax, &rows)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?,
        Format::Csv => {
            writeln!(out, "kmax,rows,max_gap,K,Gamma,alpha,rows_ge_4")?;
            let (k, g, a) = summary.argmax.as_ref().map_or((0, 0, String::new()), |r| {
                (r.k, r.cumulative, r.alpha.clone())
            });
            writeln!(
                out,
                "{},{},{:.6},{k},{g},{a},{}",
                summary.kmax, summary.rows, summary.max_gap, summary.rows_at_or_above_four
            )?;
        }
        Format::Table => {
            let at = summary.argmax.as_ref().map_or(String::new(), |r| {
                format!("K={}, Γ={}, α={}", r.k, r.cumulative, r.alpha)
            });
            print_table(
                out,
                &[
                    ("kmax", summary.kmax.to_string()),
                    ("rows", summary.rows.to_string()),
                    ("max_gap", format!("{:.6}", summary.max_gap)),
                    (
                        "max_gap_exact",
                        summary
                            .exact_max_gap
                            .map_or(String::new(), |g| format!("{g:.6}")),
                    ),
                    ("argmax", at),
                    ("rows_gap_ge_4", summary.rows_at_or_above_four.to_string()),
                    (
                        "alpha=1, s=1 rows with gap 1",
                        format!(
                            "{}/{}",
                            summary.alpha_one_single_user_unit_gap,
                            summary.alpha_one_single_user_rows
                        ),
                    ),
                ],
            )?;
        }
    }
    Ok(if summary.rows_at_or_above_four == 0 {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    })
}

/// Delayed-CSIT load at `Γ` against the uncached and zero-forcing baselines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsitReport {
    pub k: u64,
    pub cumulative: u64,
    pub coherence: f64,
    pub scalars: f64,
    pub scalars_full: f64,
    pub load: f64,
    pub load_full: f64,
    pub load_zf: f64,
    pub ratio_full: f64,
    pub ratio_zf: f64,
    /// Exact `L(Γ)` when `K` is small enough to sum in rationals.
    pub scalars_exact: Option<String>,
    pub closed_form: f64,
    pub closed_form_discrepancy: f64,
}

const EXACT_SUM_LIMIT: u64 = 2000;

pub fn csit_report(k: u64, gamma: &Rational, coherence: f64) -> Result<CsitReport> {
    if gamma.is_negative() || *gamma > Rational::one() {
        return Err(Error::invalid(format!("γ = {gamma} must lie in [0, 1]")));
    }
    let cumulative = as_u64(&(gamma * int(k as i64))).ok_or_else(|| {
        Error::invalid(format!("Kγ = {} is not an integer", gamma * int(k as i64)))
    })?;
    let at = dcsit_load(k, cumulative, coherence)?;
    let full = dcsit_load(k, 0, coherence)?;
    let load_zf = zf_load(k, coherence)?;
    let closed_form = dcsit_count_closed_form(k, cumulative);
    let scalars_exact = if k <= EXACT_SUM_LIMIT {
        Some(format_rational(&dcsit_scalar_count_exact(k, cumulative)?))
    } else {
        None
    };
    Ok(CsitReport {
        k,
        cumulative,
        coherence,
        scalars: at.scalars,
        scalars_full: full.scalars,
        load: at.load,
        load_full: full.load,
        load_zf,
        ratio_full: if full.load.is_zero() {
            0.0
        } else {
            at.load / full.load
        },
        ratio_zf: at.load / load_zf,
        scalars_exact,
        closed_form,
        closed_form_discrepancy: closed_form - at.scalars,
    })
}

pub fn cmd_csit_load(args: &CsitLoadArgs, out: &mut dyn Write) -> Result<i32> {
    let report = csit_report(args.k, &parse_rational(&args.gamma)?, args.tc)?;
    match args.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        Format::Csv => {
            writeln!(
                out,
                "K,Gamma,L,L0,Q,Q0,Q_ZF,Q_over_Q0,Q_over_QZF,closed_form"
            )?;
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                report.k,
                report.cumulative,
                report.scalars,
                report.scalars_full,
                report.load,
                report.load_full,
                report.load_zf,
                report.ratio_full,
                report.ratio_zf,
                report.closed_form
            )?;
        }
        Format::Table => {
            let mut rows = vec![
                ("K", report.k.to_string()),
                ("Gamma", report.cumulative.to_string()),
                ("T_c", report.coherence.to_string()),
                ("L(Gamma)", report.scalars.to_string()),
                ("L(0)", report.scalars_full.to_string()),
                ("Q(Gamma)", format!("{:.6}", report.load)),
                ("Q(0)", format!("{:.6}", report.load_full)),
                ("Q_ZF", format!("{:.6}", report.load_zf)),
                ("Q(Gamma)/Q(0)", format!("{:.6}", report.ratio_full)),
                ("Q(Gamma)/Q_ZF", format!("{:.6}", report.ratio_zf)),
            ];
            if let Some(exact) = &report.scalars_exact {
                rows.push(("L(Gamma) exact", exact.clone()));
            }
            rows.push(("printed closed form", report.closed_form.to_string()));
            rows.push((
                "closed form - series",
                report.closed_form_discrepancy.to_string(),
            ));
            print_table(out, &rows)?;
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("cachebc").chain(args.iter().copied()),
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
    fn analyze_k3() {
        let (code, out, _) = run_args(&[
            "analyze", "--k", "3", "--n", "3", "--m", "1", "--alpha", "0", "--format", "json",
        ]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["t_best"]["exact"], "5/6");
        assert!((v["gap"].as_f64().unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn analyze_perfect_csit() {
        let (code, out, _) = run_args(&[
            "analyze", "--k", "2", "--n", "2", "--m", "1", "--alpha", "1",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("T_best") && out.contains("1/2 (0.500000)"));
    }

    #[test]
    fn analyze_full_cache() {
        let (code, out, _) = run_args(&["analyze", "--k", "4", "--n", "4", "--m", "4"]);
        assert_eq!(code, 0);
        assert!(out.contains("no delivery needed"));
    }

    #[test]
    fn analyze_invalid_params() {
        let (code, _, err) = run_args(&[
            "analyze", "--k", "3", "--n", "3", "--m", "1", "--alpha", "2",
        ]);
        assert_eq!(code, EXIT_INVALID);
        assert!(err.contains("error"));
        let (code, _, _) = run_args(&["analyze", "--k", "3"]);
        assert_eq!(code, EXIT_INVALID);
    }

    #[test]
    fn analyze_csv_has_fixed_header() {
        let (_, out, _) = run_args(&[
            "analyze", "--k", "3", "--n", "3", "--m", "1", "--format", "csv",
        ]);
        assert_eq!(out.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(out.lines().nth(1).unwrap().split(',').count(), 11);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid(None, Some("0"), Some("1"), Some("0.1"))
                .unwrap()
                .len(),
            11
        );
        assert_eq!(
            parse_grid(Some("1/50,0.001,1e-5"), None, None, None)
                .unwrap()
                .len(),
            3
        );
        assert!(parse_grid(None, Some("0"), Some("1"), None).is_err());
        assert!(parse_grid(None, Some("0"), Some("1"), Some("0")).is_err());
        assert!(parse_grid(None, Some("1"), Some("0"), Some("1")).is_err());
    }

    #[test]
    fn simulate_exit_status() {
        let (code, out, _) = run_args(&[
            "simulate", "--k", "3", "--n", "3", "--m", "1", "--alpha", "0", "--seed", "7",
        ]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["decode_ok"], true);
        assert_eq!(v["duration"]["num"], "5");
        let (code, _, _) = run_args(&["simulate", "--k", "3", "--n", "3", "--m", "3"]);
        assert_eq!(code, EXIT_INVALID);
        let (code, _, _) = run_args(&[
            "simulate",
            "--k",
            "3",
            "--n",
            "3",
            "--m",
            "1",
            "--requests",
            "1,2",
        ]);
        assert_eq!(code, EXIT_INVALID);
    }

    #[test]
    fn csit_load_table() {
        let r = csit_report(3, &int(0), 10.0).unwrap();
        assert_eq!(r.scalars, 7.0);
        assert_eq!(r.scalars_exact.as_deref(), Some("7/1 (7.000000)"));
        let r = csit_report(3, &int(1), 10.0).unwrap();
        assert_eq!(r.scalars, 0.0);
        assert!(csit_report(3, &crate::rational::ratio(1, 2), 10.0).is_err());
    }

    #[test]
    fn gap_scan_small() {
        let alphas = parse_grid(None, Some("0"), Some("1"), Some("1/10")).unwrap();
        let rows = gap_scan(12, &alphas).unwrap();
        assert_eq!(rows.len(), (2..=12).map(|k| k - 1).sum::<usize>() * 11);
        let s = summarize_gaps(12, &rows).unwrap();
        assert!((s.exact_max_gap.unwrap() - s.max_gap).abs() < 1e-12);
        assert!(s.max_gap < 4.0);
        assert_eq!(
            s.alpha_one_single_user_rows,
            s.alpha_one_single_user_unit_gap
        );
        assert!(gap_scan(1, &alphas).is_err());
    }
}
