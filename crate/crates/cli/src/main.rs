use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::info;
use stap_core::harness::{self, ExperimentSpec, RunManifest};
use stap_core::{selftest, StapError};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Sparse STAP with joint gain/phase estimation: experiments and self-checks.
#[derive(Debug, Parser)]
#[command(name = "sparse-stap", disable_version_flag = true)]
struct Cli {
    /// Print name and version as JSON and exit.
    #[arg(long, global = true)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct the cell-under-test profile for every error case and algorithm.
    Profile(RunArgs),
    /// Detection probability against SNR, with thresholds calibrated under H0.
    PdCurve(RunArgs),
    /// ROC curves for every target speed class.
    Roc(RunArgs),
    /// Per-iteration cost of the joint solver against the plain solver.
    Timing(RunArgs),
    /// Calibrate CFAR thresholds for the configured false-alarm rate.
    CalibrateThreshold(RunArgs),
    /// Run the oracle-equivalence and invariant checks.
    Selftest(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Spec JSON file, or a preset name (desk, fig3, pd-curve, roc, paper).
    /// Defaults to the preset matching the subcommand.
    #[arg(long, value_name = "PATH|PRESET")]
    spec: Option<String>,

    /// Override one spec field by dotted path, e.g. `solver.beta=0.1` or
    /// `targets.0.doppler=0.2`. Values are JSON; bare words are strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides the spec's `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Base seed for every random draw (overrides the spec's `base_seed`).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; defaults to the available hardware parallelism.
    #[arg(long, value_name = "K", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    /// Permit PD estimates from fewer than 50 trials.
    #[arg(long)]
    allow_few_trials: bool,

    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Root for relative output directories.
    #[arg(long, env = "STAP_OUTPUT_ROOT", value_name = "DIR")]
    output_root: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile(_) => "profile",
            Command::PdCurve(_) => "pd-curve",
            Command::Roc(_) => "roc",
            Command::Timing(_) => "timing",
            Command::CalibrateThreshold(_) => "calibrate-threshold",
            Command::Selftest(_) => "selftest",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Profile(a)
            | Command::PdCurve(a)
            | Command::Roc(a)
            | Command::Timing(a)
            | Command::CalibrateThreshold(a)
            | Command::Selftest(a) => a,
        }
    }

    fn default_preset(&self) -> &'static str {
        match self {
            Command::Profile(_) => "fig3",
            Command::PdCurve(_) => "pd-curve",
            Command::Roc(_) => "roc",
            _ => "desk",
        }
    }
}

fn version_json() -> String {
    serde_json::json!({
        "name": "sparse-stap",
        "version": env!("CARGO_PKG_VERSION"),
    })
    .to_string()
}

/// A preset name unless the argument names an existing file or looks like a path.
fn load_base_spec(arg: &str) -> Result<ExperimentSpec, StapError> {
    let path = Path::new(arg);
    if path.exists() || arg.contains('/') || arg.ends_with(".json") {
        harness::load_spec(path)
    } else {
        ExperimentSpec::preset(arg)
    }
}

fn resolve_spec(cmd: &Command) -> Result<ExperimentSpec, StapError> {
    let args = cmd.args();
    let base = match &args.spec {
        Some(s) => load_base_spec(s)?,
        None => ExperimentSpec::preset(cmd.default_preset())?,
    };
    let mut spec = harness::apply_overrides(&base, &args.overrides)?;
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    if args.allow_few_trials {
        spec.allow_few_trials = true;
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    if let Some(root) = &args.output_root {
        if spec.output_dir.is_relative() {
            spec.output_dir = root.join(&spec.output_dir);
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cmd: &Command, spec: &ExperimentSpec) -> Result<Vec<PathBuf>, StapError> {
    let dir = &spec.output_dir;
    match cmd {
        Command::Profile(_) => harness::run_profile_experiment(spec),
        Command::PdCurve(_) => {
            let (curve, files) = harness::run_pd_vs_snr(spec, &spec.snr_grid)?;
            for p in &curve.points {
                println!(
                    "snr {:>6.1} dB  case {}  {:<8} pd {:.3} [{:.3}, {:.3}]  n={}",
                    p.snr_db,
                    p.error_case + 1,
                    p.algorithm.name(),
                    p.pd,
                    p.ci_lo,
                    p.ci_hi,
                    p.trials
                );
            }
            Ok(files)
        }
        Command::Roc(_) => harness::run_roc(spec, &spec.pfa_grid).map(|(_, files)| files),
        Command::Timing(_) => {
            let (points, files) = harness::run_timing(spec)?;
            for p in &points {
                println!(
                    "columns {:>5}  {:<8} {:>9.3} ± {:.3} ms ({} iterations)",
                    p.columns,
                    p.algorithm.name(),
                    p.mean_ms,
                    p.std_ms,
                    p.iterations
                );
            }
            Ok(files)
        }
        Command::CalibrateThreshold(_) => {
            let (set, files) = harness::run_calibration(spec)?;
            for t in &set.thresholds {
                println!(
                    "case {}  {:<8} f_d {:+.3}  xi {} dB (forced alarms {:.4})",
                    t.error_case + 1,
                    t.algorithm.name(),
                    t.doppler,
                    t.calibration.xi,
                    t.forced_alarm_fraction
                );
            }
            Ok(files)
        }
        Command::Selftest(_) => {
            let outcomes = selftest::run_all(spec.base_seed);
            let mut failed = Vec::new();
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                if !o.passed {
                    failed.push(o.name);
                }
            }
            let path = dir.join("selftest.json");
            let text = serde_json::to_string_pretty(&outcomes)?;
            std::fs::write(&path, text).map_err(|e| StapError::io(&path, e))?;
            if failed.is_empty() {
                Ok(vec![path])
            } else {
                Err(StapError::ChecksFailed(failed.join(", ")))
            }
        }
    }
}

fn execute(cmd: &Command) -> ExitCode {
    let spec = match resolve_spec(cmd) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let dir = spec.output_dir.clone();
    let mut manifest = RunManifest::new(cmd.name(), &spec);
    if let Err(e) = manifest.write(&dir) {
        eprintln!("error: cannot write run manifest: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    info!("{} → {}", cmd.name(), dir.display());

    let outcome = run(cmd, &spec);
    let code = match &outcome {
        Ok(files) => {
            manifest.finish(&dir, files);
            ExitCode::SUCCESS
        }
        Err(e) => {
            manifest.fail(e);
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    };
    if let Err(e) = manifest.write(&dir) {
        eprintln!("error: cannot update run manifest: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    if outcome.is_ok() {
        println!("wrote {}", RunManifest::path(&dir).display());
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", <Cli as clap::CommandFactory>::command().render_usage());
            }
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    if cli.version {
        println!("{}", version_json());
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("{}", <Cli as clap::CommandFactory>::command().render_usage());
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(EXIT_VALIDATION);
    };

    let args = cmd.args();
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    if let Some(k) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k as usize).build_global() {
            eprintln!("error: cannot start {k} workers: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    execute(&cmd)
}
