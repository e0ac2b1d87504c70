use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use uwb_relloc::config::{load_calibration, ExperimentConfig};
use uwb_relloc::harness::{EstimatorKind, Harness, RunConfig, RunRecord};
use uwb_relloc::report::{
    compare_report, read_records, render_text, to_json, write_boxplots, write_records,
    write_trajectory,
};
use uwb_relloc::scenario::ScenarioCatalog;
use uwb_relloc::uwb::Calibration;
use uwb_relloc::Error;

const OUT_DIR_ENV: &str = "UWB_RELLOC_OUT";

#[derive(Parser)]
#[command(
    name = "uwb-relloc",
    version,
    about = "UWB relative localization simulator and estimator comparison"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario variant and write its trajectory and records.
    Run(RunArgs),
    /// Run the full scenario protocol and write records and reports.
    Batch(BatchArgs),
    /// Rebuild the comparison report from an existing records CSV.
    Report(ReportArgs),
    /// List the scenario catalog.
    Scenarios(ScenariosArgs),
    /// Dump or validate a calibration file.
    Calibration(CalibrationArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Estimators to run, comma separated (baseline, ekf_case1, ekf_case2).
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
    estimators: Option<Vec<EstimatorKind>>,
    /// Disable all measurement noise.
    #[arg(long)]
    noiseless: bool,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario id (see `scenarios`).
    #[arg(long)]
    scenario: String,
    /// Index into the scenario's sweep values.
    #[arg(long, default_value_t = 0)]
    sweep: usize,
    /// Robot-B data-rate divisor (1..=10).
    #[arg(long, default_value_t = 1)]
    divisor: u32,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    /// Robot-B data-rate divisors, comma separated; overrides the config.
    #[arg(long, value_delimiter = ',')]
    divisors: Option<Vec<u32>>,
    /// Worker threads (default: all cores).
    #[arg(long, short)]
    jobs: Option<usize>,
    /// Also write one trajectory CSV per run.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Records CSV written by `batch`.
    #[arg(long)]
    records: PathBuf,
    /// Output directory.
    #[arg(long, short, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ScenariosArgs {
    /// Experiment config file whose scenario settings apply.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Print the full catalog as TOML instead of a summary.
    #[arg(long)]
    toml: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CalibrationMode {
    /// Write the active calibration as TOML to FILE, or stdout if omitted.
    #[arg(long, value_name = "FILE", num_args = 0..=1, default_missing_value = "-")]
    dump: Option<PathBuf>,
    /// Validate a calibration file.
    #[arg(long, value_name = "FILE")]
    check: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrationArgs {
    #[command(flatten)]
    mode: CalibrationMode,
    /// Experiment config file whose sensor settings apply.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overwrite an existing dump file.
    #[arg(long)]
    force: bool,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    EstimatorKind::parse(s)
        .ok_or_else(|| format!("unknown estimator `{s}` (baseline, ekf_case1, ekf_case2)"))
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Report(a) => cmd_report(a),
        Command::Scenarios(a) => cmd_scenarios(a),
        Command::Calibration(a) => cmd_calibration(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<(ExperimentConfig, PathBuf), Failure> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok((ExperimentConfig::default(), PathBuf::from("."))),
    }
}

fn build(common: &Common) -> Result<(ExperimentConfig, Harness), Failure> {
    let (mut cfg, base) = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = &common.estimators {
        cfg.estimators = e.clone();
    }
    if common.noiseless {
        cfg.sensor.noise_enabled = false;
    }
    if cfg.estimators.is_empty() {
        return Err(usage("no estimators selected"));
    }
    let h = cfg.harness(&base)?;
    Ok((cfg, h))
}

/// Creates the output directory and refuses to clobber existing files.
fn prepare_outputs(dir: &Path, files: &[&str], force: bool) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    if !force {
        for f in files {
            let p = dir.join(f);
            if p.exists() {
                return Err(usage(format!(
                    "{} exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let f =
        File::create(path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let (cfg, h) = build(&a.common)?;
    let run = RunConfig {
        scenario: a.scenario.clone(),
        sweep_index: a.sweep,
        data_rate_divisor: a.divisor,
        estimators: cfg.estimator_set(),
        master_seed: cfg.seed,
    };
    let mut out = h.run_one(&run, true)?;
    let dir = &a.common.out;
    prepare_outputs(dir, &["trajectory.csv", "records.csv"], a.common.force)?;
    for r in &mut out.records {
        r.trajectory_path = Some("trajectory.csv".into());
    }
    write_trajectory(create(&dir.join("trajectory.csv"))?, &out.trajectory)?;
    write_records(create(&dir.join("records.csv"))?, &out.records)?;
    for r in &out.records {
        info!(
            "{} {}: angle RMSE {:.4} deg, distance RMSE {:.4} m",
            r.estimator.name(),
            r.divisor.map(|d| format!("d{d}")).unwrap_or_default(),
            r.rmse_angle_deg,
            r.rmse_distance_m
        );
    }
    info!("wrote {}", dir.display());
    Ok(())
}

const BATCH_FILES: [&str; 4] = ["records.csv", "report.json", "report.txt", "boxplots.csv"];

fn cmd_batch(a: BatchArgs) -> Result<(), Failure> {
    let (mut cfg, h) = build(&a.common)?;
    if let Some(d) = &a.divisors {
        cfg.divisors = d.clone();
    }
    let dir = &a.common.out;
    prepare_outputs(dir, &BATCH_FILES, a.common.force)?;
    let runs: usize = h.scenarios.iter().map(|s| s.variants.len()).sum();
    info!(
        "running {runs} runs x {} divisors with seed {}",
        cfg.divisors.len(),
        cfg.seed
    );
    let mut batch = h.run_batch(
        &cfg.divisors,
        cfg.estimator_set(),
        cfg.seed,
        a.jobs,
        a.trajectories,
    )?;

    if a.trajectories {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir)?;
        for (id, sweep, rows) in &batch.trajectories {
            let name = format!("{id}_{sweep:02}.csv");
            write_trajectory(create(&tdir.join(&name))?, rows)?;
            let rel = format!("trajectories/{name}");
            for r in batch
                .records
                .iter_mut()
                .filter(|r| &r.scenario == id && r.sweep_index == *sweep)
            {
                r.trajectory_path = Some(rel.clone());
            }
        }
    }
    write_records(create(&dir.join("records.csv"))?, &batch.records)?;
    write_report(dir, &batch.records)?;

    if !batch.failures.is_empty() {
        for f in &batch.failures {
            eprintln!(
                "run failed: {} sweep {}: {}",
                f.scenario, f.sweep_index, f.message
            );
        }
        return Err(Failure {
            code: 1,
            message: format!("{} of {runs} runs failed", batch.failures.len()),
        });
    }
    info!("wrote {} records to {}", batch.records.len(), dir.display());
    Ok(())
}

fn write_report(dir: &Path, records: &[RunRecord]) -> Result<(), Failure> {
    if records.is_empty() {
        warn!("no records; skipping report");
        return Ok(());
    }
    let report = compare_report(records)?;
    let mut w = create(&dir.join("report.json"))?;
    writeln!(w, "{}", to_json(&report))?;
    let text = render_text(&report);
    fs::write(dir.join("report.txt"), &text)?;
    write_boxplots(create(&dir.join("boxplots.csv"))?, &report)?;
    if log::log_enabled!(log::Level::Info) {
        eprint!("{text}");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let f = File::open(&a.records)
        .map_err(|e| usage(format!("cannot read {}: {e}", a.records.display())))?;
    let records = read_records(f).map_err(|e| usage(format!("{}: {e}", a.records.display())))?;
    prepare_outputs(&a.out, &BATCH_FILES[1..], a.force)?;
    let report = compare_report(&records)?;
    let mut w = create(&a.out.join("report.json"))?;
    writeln!(w, "{}", to_json(&report))?;
    let text = render_text(&report);
    fs::write(a.out.join("report.txt"), &text)?;
    write_boxplots(create(&a.out.join("boxplots.csv"))?, &report)?;
    print!("{text}");
    Ok(())
}

fn cmd_scenarios(a: ScenariosArgs) -> Result<(), Failure> {
    let (cfg, base) = load_config(a.config.as_deref())?;
    let h = cfg.harness(&base)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    if a.toml {
        write!(w, "{}", ScenarioCatalog::new(h.scenarios).to_toml())?;
        return Ok(());
    }
    for s in &h.scenarios {
        let values: Vec<String> = s
            .variants
            .iter()
            .map(|v| format!("{}", round4(v.sweep_value)))
            .collect();
        writeln!(
            w,
            "{:<20} {:>5.1} s  {:<20} [{}]  {}",
            s.id,
            s.duration_s,
            s.sweep_parameter,
            values.join(", "),
            s.description
        )?;
    }
    Ok(())
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn cmd_calibration(a: CalibrationArgs) -> Result<(), Failure> {
    if let Some(path) = &a.mode.check {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        return match Calibration::from_toml(&text) {
            Ok(_) => {
                println!("{}: ok", path.display());
                Ok(())
            }
            Err(e) => {
                let at = bin_line(&text, &e.to_string())
                    .map(|l| format!("{}:{l}: ", path.display()))
                    .unwrap_or_else(|| format!("{}: ", path.display()));
                Err(usage(format!("{at}{e}")))
            }
        };
    }
    let (cfg, base) = load_config(a.config.as_deref())?;
    let cal = match &cfg.sensor.calibration_file {
        Some(p) => load_calibration(&base.join(p))?,
        None => cfg.harness(&base)?.sensor.calibration,
    };
    let text = cal.to_toml();
    match a.mode.dump.as_deref() {
        Some(p) if p != Path::new("-") => {
            if p.exists() && !a.force {
                return Err(usage(format!(
                    "{} exists; pass --force to overwrite",
                    p.display()
                )));
            }
            fs::write(p, text)?;
        }
        _ => print!("{text}"),
    }
    Ok(())
}

/// Line number (1-based) of the dispersion bin named in a validation
/// message such as "dispersion.pair2 bin 17 (center ...)".
fn bin_line(text: &str, message: &str) -> Option<usize> {
    let rest = message.split("dispersion.pair").nth(1)?;
    let pair: usize = rest.split_whitespace().next()?.parse().ok()?;
    let bin: usize = rest
        .split("bin ")
        .nth(1)?
        .split_whitespace()
        .next()?
        .parse()
        .ok()?;
    let header = format!("[[dispersion.pair{pair}]]");
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .nth(bin)
        .map(|(i, _)| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_line_finds_the_header() {
        let text = "x = 1\n[[dispersion.pair2]]\na = 1\n[[dispersion.pair2]]\na = 2\n";
        assert_eq!(
            bin_line(
                text,
                "invalid calibration: dispersion.pair2 bin 1 (center 3.66°): bad"
            ),
            Some(4)
        );
        assert_eq!(bin_line(text, "something else"), None);
    }

    #[test]
    fn estimator_names_parse() {
        assert_eq!(parse_estimator("ekf_case1"), Ok(EstimatorKind::Case1));
        assert!(parse_estimator("kalman").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
