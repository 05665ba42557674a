//! `platoon` command-line driver: run, certify and sweep scenario files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use platoon_core::analysis::{certify, scalability_study_from_base, CertificationReport};
use platoon_core::config::{echo_scenario, load_scenario};
use platoon_core::controller::ControlVariant;
use platoon_core::output::{
    write_comparison_csv, write_json, write_paired_profile_csv, write_trajectory_csv, RunSummary,
};
use platoon_core::{run, PlatoonError, Scenario, TerminationStatus, TrajectoryLog};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_COLLISION: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_CERTIFICATION: u8 = 5;

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "PLATOON_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "platoon", version, about = "Simulate and certify vehicle platoons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its trajectory and summary.
    Run(RunArgs),
    /// Simulate, then check the trajectory against the stability guarantees.
    Certify(RunArgs),
    /// Run the scenario for several platoon sizes and compare positions.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory. Defaults to `$PLATOON_OUT_DIR/<scenario name>`,
    /// or `out/<scenario name>` when the variable is unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the controller variant.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<ControlVariant>,
    /// Record every k-th step.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Platoon sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    /// Run both variants and write their profiles side by side.
    #[arg(long)]
    pub paired: bool,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

fn parse_variant(s: &str) -> Result<ControlVariant, String> {
    s.parse().map_err(|e: PlatoonError| e.to_string())
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<PlatoonError> for Failure {
    fn from(e: PlatoonError) -> Self {
        let code = match e {
            PlatoonError::Config(_) | PlatoonError::InvalidInput(_) | PlatoonError::Domain(_) => EXIT_CONFIG,
            PlatoonError::Collision { .. } => EXIT_COLLISION,
            PlatoonError::Divergence { .. } | PlatoonError::Stiffness { .. } => EXIT_DIVERGED,
            PlatoonError::Io(_) => EXIT_IO,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_IO, message: e.to_string() }
    }
}

type CliResult = Result<u8, Failure>;

fn out_dir(common: &CommonArgs) -> PathBuf {
    if let Some(dir) = &common.out {
        return dir.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    let stem = common.scenario.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
    root.join(stem)
}

/// Loads the scenario and applies command-line overrides.
fn prepare(common: &CommonArgs) -> Result<Scenario, Failure> {
    let mut sc = load_scenario(&common.scenario)?;
    if let Some(v) = common.variant {
        sc = sc.with_variant(v);
    }
    if let Some(s) = common.stride {
        sc.sim.stride = s;
    }
    sc.validate()?;
    Ok(sc)
}

fn status_code(status: &TerminationStatus) -> u8 {
    match status {
        TerminationStatus::Completed => EXIT_OK,
        TerminationStatus::Collision { .. } => EXIT_COLLISION,
        TerminationStatus::Diverged { .. } => EXIT_DIVERGED,
    }
}

fn describe(status: &TerminationStatus) -> Option<String> {
    match status {
        TerminationStatus::Completed => None,
        TerminationStatus::Collision { predecessor, follower, t, gap } => Some(format!(
            "collision between agents {predecessor} and {follower} at t = {t} (gap {gap})"
        )),
        TerminationStatus::Diverged { agent, t, reason } => {
            Some(format!("run diverged at agent {agent}, t = {t}: {reason}"))
        }
    }
}

fn write_run(dir: &Path, log: &TrajectoryLog, wall: f64) -> Result<(), Failure> {
    let file = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
    write_trajectory_csv(log, file)?;
    write_json(&RunSummary::from_log(log, wall), &dir.join("summary.json"))?;
    Ok(())
}

fn simulate(sc: &Scenario, dir: &Path) -> Result<TrajectoryLog, Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scenario.toml"), echo_scenario(sc)?)?;
    let start = Instant::now();
    let log = run(sc)?;
    write_run(dir, &log, start.elapsed().as_secs_f64())?;
    if let Some(msg) = describe(&log.status) {
        eprintln!("{msg}");
    }
    Ok(log)
}

pub fn cmd_run(args: &RunArgs) -> CliResult {
    let sc = prepare(&args.common)?;
    let log = simulate(&sc, &out_dir(&args.common))?;
    Ok(status_code(&log.status))
}

fn report_failures(report: &CertificationReport) -> Vec<String> {
    report
        .checks
        .iter()
        .filter(|c| c.verdict == platoon_core::analysis::Verdict::Fail)
        .map(|c| format!("{} (worst {:?}, threshold {:?}, at {:?})", c.name, c.worst_residual, c.threshold, c.location))
        .collect()
}

pub fn cmd_certify(args: &RunArgs) -> CliResult {
    let sc = prepare(&args.common)?;
    let dir = out_dir(&args.common);
    let log = simulate(&sc, &dir)?;
    let report = certify(&log, &sc)?;
    write_json(&report, &dir.join("report.json"))?;
    let code = status_code(&log.status);
    if code != EXIT_OK {
        return Ok(code);
    }
    let failures = report_failures(&report);
    for f in &failures {
        eprintln!("check failed: {f}");
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_CERTIFICATION })
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let base = prepare(&args.common)?;
    if args.n_list.is_empty() || args.n_list.contains(&0) {
        return Err(PlatoonError::Config("--n-list needs positive platoon sizes".into()).into());
    }
    let variants = if args.paired {
        vec![ControlVariant::Feedforward, ControlVariant::LocalOnly]
    } else {
        vec![base.variant()]
    };
    for v in &variants {
        for &n in &args.n_list {
            let sc = base.with_agents(n)?.with_variant(*v);
            sc.validate()?;
        }
    }
    let dir = out_dir(&args.common);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("scenario.toml"), echo_scenario(&base)?)?;

    let start = Instant::now();
    let study = scalability_study_from_base(&base, &args.n_list, &variants, args.workers)?;
    let wall = start.elapsed().as_secs_f64();

    let mut code = EXIT_OK;
    let mut runs = Vec::new();
    for r in &study.runs {
        let run_dir = dir.join(format!("{}_n{}", r.variant, r.n));
        fs::create_dir_all(&run_dir)?;
        write_run(&run_dir, &r.log, wall)?;
        let report = certify(&r.log, &r.scenario)?;
        write_json(&report, &run_dir.join("report.json"))?;
        let failures = report_failures(&report);
        if let Some(msg) = describe(&r.log.status) {
            eprintln!("{} n = {}: {msg}", r.variant, r.n);
        }
        for f in &failures {
            eprintln!("{} n = {}: check failed: {f}", r.variant, r.n);
        }
        if !r.invariance_holds && r.variant == ControlVariant::Feedforward {
            eprintln!("{} n = {}: Lyapunov bound exceeded", r.variant, r.n);
        }
        let run_code = match status_code(&r.log.status) {
            EXIT_OK if !failures.is_empty() => EXIT_CERTIFICATION,
            EXIT_OK if !r.invariance_holds && r.variant == ControlVariant::Feedforward => EXIT_CERTIFICATION,
            c => c,
        };
        if code == EXIT_OK {
            code = run_code;
        }
        runs.push(json!({
            "variant": r.variant.to_string(),
            "n": r.n,
            "termination": r.log.status,
            "invariance_holds": r.invariance_holds,
            "report_passed": failures.is_empty(),
        }));
    }
    for p in study.prefix.iter().filter(|p| !p.passed) {
        eprintln!(
            "{}: agents 0..{} differ between n = {} and n = {} by {}",
            p.variant, p.agents_compared, p.reference_n, p.compared_n, p.max_abs_diff
        );
    }
    if code == EXIT_OK && !study.passed() {
        code = EXIT_CERTIFICATION;
    }

    write_comparison_csv(&study.rows, BufWriter::new(File::create(dir.join("comparison.csv"))?))?;
    if args.paired {
        write_paired_profile_csv(&study, BufWriter::new(File::create(dir.join("profile.csv"))?))?;
    }
    write_json(
        &json!({ "runs": runs, "prefix": study.prefix, "passed": code == EXIT_OK, "wall_time_s": wall }),
        &dir.join("sweep.json"),
    )?;
    Ok(code)
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
