//! `pfcsim`: run scenarios, compare controllers and sweep parameters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pfc_core::diagnostics::monitor;
use pfc_core::io::{resolve_scenario, scenario_to_string, write_json, write_metrics, write_trajectory, LoadedScenario};
use pfc_core::metrics::{compare, evaluate, ComparisonReport, RunMetrics, METRICS_SCHEMA_VERSION};
use pfc_core::scenario::{run, ControllerKind, PlantKind, BUILTIN_NAMES};
use pfc_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_ASSERTION: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "pfcsim", version, about = "Potential field controller simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write trajectory, metrics and Lyapunov report.
    Run(RunArgs),
    /// Run several controllers on the same scenario and compare them.
    Compare(CompareArgs),
    /// Run a grid of parameter overrides.
    Sweep(SweepArgs),
    /// List built-in scenarios.
    List,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Built-in scenario name or path to a scenario file.
    pub scenario: String,
    #[arg(long, value_parser = parse_plant)]
    pub plant: Option<PlantKind>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a scenario value, e.g. `--set gains.lambda1=0.8`.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_controller)]
    pub controller: Option<ControllerKind>,
    /// Exit with status 5 if the drone touched an obstacle.
    #[arg(long)]
    pub fail_on_collision: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Controllers to compare, first one is the baseline.
    #[arg(value_parser = parse_controller, num_args = 0..)]
    pub controllers: Vec<ControllerKind>,
    /// Exit with status 5 unless ePFC beats PFC on overshoot and settling.
    #[arg(long)]
    pub assert_trends: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_controller)]
    pub controller: Option<ControllerKind>,
    /// Grid axis `key=v1,v2,...`; several axes form a cartesian product.
    #[arg(long, value_name = "K=V1,V2")]
    pub grid: Vec<String>,
    /// Worker threads; 1 runs serially.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_plant(s: &str) -> Result<PlantKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure carrying the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow!(msg.into()),
        }
    }

    fn assertion(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_ASSERTION,
            error: anyhow!(msg.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::NumericAbort { .. } | Error::GimbalLock { .. }) => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult<T> = Result<T, Failure>;

fn overrides(common: &Common, controller: Option<ControllerKind>) -> Vec<String> {
    let mut o = common.set.clone();
    if let Some(c) = controller {
        o.push(format!("controller=\"{}\"", c.name()));
    }
    if let Some(p) = common.plant {
        let name = match p {
            PlantKind::Kinematic => "kinematic",
            PlantKind::Lag => "lag",
            PlantKind::Full => "full",
        };
        o.push(format!("plant.kind=\"{name}\""));
    }
    if let Some(seed) = common.seed {
        o.push(format!("sim.seed={seed}"));
    }
    o
}

fn load(common: &Common, controller: Option<ControllerKind>) -> CmdResult<LoadedScenario> {
    Ok(resolve_scenario(&common.scenario, &overrides(common, controller))?)
}

/// Simulated scenario with its evaluation.
pub struct RunOutcome {
    pub loaded: LoadedScenario,
    pub metrics: RunMetrics,
}

fn simulate(loaded: LoadedScenario, out: Option<&Path>) -> CmdResult<RunOutcome> {
    let log = run(&loaded.scenario)?;
    let mut metrics = evaluate(&loaded.scenario, &log)?;
    metrics.provenance = loaded.provenance.clone();
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_trajectory(&log, &dir.join("trajectory.csv"))?;
        write_metrics(&metrics, &dir.join("metrics.json"))?;
        write_json(&monitor(&log, &loaded.scenario.gains)?, &dir.join("lyapunov.json"))?;
        let text = scenario_to_string(&loaded.scenario)?;
        fs::write(dir.join("scenario.toml"), text).with_context(|| format!("writing {}", dir.display()))?;
    }
    Ok(RunOutcome { loaded, metrics })
}

fn opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}{unit}"))
}

pub fn summary_line(m: &RunMetrics) -> String {
    let settling = if m.all_legs_settled {
        opt(m.worst_settling_time, " s")
    } else {
        "unsettled".to_string()
    };
    format!(
        "{} {}: lap {}, overshoot {}, settling {}, clearance {}, collisions {}, lyapunov {:?}",
        m.scenario,
        m.controller.name(),
        opt(m.lap_time, " s"),
        opt(m.worst_overshoot_pct, " %"),
        settling,
        m.min_clearance
            .map_or_else(|| "n/a".to_string(), |c| format!("{c:.3} m")),
        m.collisions,
        m.lyapunov.verdict,
    )
}

fn default_out(name: &str, suffix: &str) -> PathBuf {
    PathBuf::from("pfcsim-out").join(format!("{name}-{suffix}"))
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> CmdResult<RunOutcome> {
    let loaded = load(&args.common, args.controller)?;
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out(&loaded.scenario.name, loaded.scenario.controller.name()));
    let outcome = simulate(loaded, Some(&dir))?;
    let _ = writeln!(stdout, "{}", summary_line(&outcome.metrics));
    if args.fail_on_collision && outcome.metrics.collisions > 0 {
        return Err(Failure::assertion(format!(
            "{} collision(s)",
            outcome.metrics.collisions
        )));
    }
    Ok(outcome)
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> CmdResult<Vec<ComparisonReport>> {
    if args.controllers.len() < 2 {
        return Err(Failure::usage(
            "compare needs at least two controllers, e.g. `pfc epfc`",
        ));
    }
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out(&args.common.scenario, "compare"));
    let mut runs = Vec::new();
    for (i, c) in args.controllers.iter().enumerate() {
        let loaded = load(&args.common, Some(*c))?;
        let sub = dir.join(format!("{}-{}", i, c.name()));
        let outcome = simulate(loaded, Some(&sub))?;
        let _ = writeln!(stdout, "{}", summary_line(&outcome.metrics));
        runs.push(outcome.metrics);
    }
    let mut reports = Vec::new();
    for other in &runs[1..] {
        let report = compare(&runs[0], other)?;
        let _ = write!(stdout, "{}", report.to_table());
        reports.push(report);
    }
    write_json(&reports, &dir.join("comparison.json"))?;

    if args.assert_trends {
        let mut failed = Vec::new();
        let mut checked = false;
        for r in &reports {
            if let Some(t) = &r.trends {
                checked = true;
                failed.extend(t.failures());
            }
        }
        if !checked {
            return Err(Failure::assertion("--assert-trends needs both pfc and epfc"));
        }
        if !failed.is_empty() {
            return Err(Failure::assertion(format!("trend failed: {}", failed.join("; "))));
        }
        let _ = writeln!(stdout, "trends: PASS");
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub overrides: Vec<String>,
    pub status: String,
    pub worst_overshoot_pct: Option<f64>,
    pub worst_settling_time: Option<f64>,
    pub all_legs_settled: Option<bool>,
    pub lap_time: Option<f64>,
    pub min_clearance: Option<f64>,
    pub collisions: Option<usize>,
    pub lyapunov: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub rows: Vec<SweepRow>,
}

/// Cartesian product of `key=v1,v2` axes as override lists, first axis slowest.
pub fn expand_grid(axes: &[String]) -> CmdResult<Vec<Vec<String>>> {
    let mut points: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("grid axis `{axis}` is not key=v1,v2")))?;
        let values = split_values(values);
        if values.is_empty() {
            return Err(Failure::usage(format!("grid axis `{axis}` has no values")));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(format!("{}={}", key.trim(), v));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Splits on commas that are not inside brackets or quotes.
fn split_values(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '"' => quoted = !quoted,
            '[' if !quoted => depth += 1,
            ']' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn sweep_row(
    point: usize,
    extra: Vec<String>,
    base: &Common,
    controller: Option<ControllerKind>,
    dir: &Path,
) -> SweepRow {
    let mut common = base.clone();
    common.set.extend(extra.iter().cloned());
    let result = load(&common, controller).and_then(|l| {
        let o = simulate(l, None)?;
        let sub = dir.join(format!("point-{point:03}"));
        fs::create_dir_all(&sub).with_context(|| format!("creating {}", sub.display()))?;
        write_metrics(&o.metrics, &sub.join("metrics.json"))?;
        Ok(o)
    });
    match result {
        Ok(o) => {
            let m = o.metrics;
            SweepRow {
                point,
                overrides: extra,
                status: "ok".to_string(),
                worst_overshoot_pct: m.worst_overshoot_pct,
                worst_settling_time: m.worst_settling_time,
                all_legs_settled: Some(m.all_legs_settled),
                lap_time: m.lap_time,
                min_clearance: m.min_clearance,
                collisions: Some(m.collisions),
                lyapunov: Some(format!("{:?}", m.lyapunov.verdict).to_uppercase()),
            }
        }
        Err(f) => SweepRow {
            point,
            overrides: extra,
            status: format!("error({}): {:#}", f.code, f.error),
            worst_overshoot_pct: None,
            worst_settling_time: None,
            all_legs_settled: None,
            lap_time: None,
            min_clearance: None,
            collisions: None,
            lyapunov: None,
        },
    }
}

pub fn sweep_table(summary: &SweepSummary) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    let mut out = format!(
        "{:>5} {:<40} {:>10} {:>10} {:>9} {:>10} {:>4} {:>5}  status\n",
        "point", "overrides", "overshoot", "settling", "lap", "clearance", "hits", "lyap"
    );
    for r in &summary.rows {
        out.push_str(&format!(
            "{:>5} {:<40} {:>10} {:>10} {:>9} {:>10} {:>4} {:>5}  {}\n",
            r.point,
            r.overrides.join(" "),
            cell(r.worst_overshoot_pct),
            cell(r.worst_settling_time),
            cell(r.lap_time),
            cell(r.min_clearance),
            r.collisions.map_or_else(|| "-".to_string(), |c| c.to_string()),
            r.lyapunov.as_deref().unwrap_or("-"),
            r.status
        ));
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> CmdResult<SweepSummary> {
    if args.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let points = expand_grid(&args.grid)?;
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out(&args.common.scenario, "sweep"));
    let work = |(i, extra): (usize, Vec<String>)| sweep_row(i, extra, &args.common, args.controller, &dir);
    let rows: Vec<SweepRow> = if args.jobs == 1 {
        points.into_iter().enumerate().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .context("building thread pool")?;
        pool.install(|| points.into_par_iter().enumerate().map(work).collect())
    };
    let summary = SweepSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: args.common.scenario.clone(),
        rows,
    };
    let table = sweep_table(&summary);
    let _ = write!(stdout, "{table}");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&summary, &dir.join("sweep.json"))?;
    fs::write(dir.join("sweep.txt"), table).with_context(|| format!("writing {}", dir.display()))?;
    Ok(summary)
}

/// Parses `args` (program name first) and runs the command. Returns the exit status.
pub fn run_cli_with(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, stdout).map(|_| ()),
        Command::Compare(a) => cmd_compare(a, stdout).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a, stdout).map(|_| ()),
        Command::List => {
            for name in BUILTIN_NAMES {
                let _ = writeln!(stdout, "{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {:#}", f.error);
            f.code
        }
    }
}

pub fn run_cli(args: &[String]) -> i32 {
    run_cli_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
