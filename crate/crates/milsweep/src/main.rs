use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use milsweep::config::{load_config, ConfigError, LoadedConfig};
use milsweep::core::space::enumerate_grid;
use milsweep::core::speedup::estimate_speedup;
use milsweep::core::trial::StudyMode;
use milsweep::engine::{resume_study, start_study, Fault, RunOptions, StudyOutcome, StudyPlan};
use milsweep::evaluator::Evaluator;
use milsweep::export::{export_csv, result_set};
use milsweep::journal::{journal_exists, load_snapshot, JOURNAL_FILE};
use milsweep::Error;
use serde_json::{json, Value};

/// Config copy kept in every study directory so `resume` needs only the path.
const CONFIG_COPY: &str = "config.yaml";
/// Crash-injection hook for recovery tests, e.g. `after-trial:3`.
const FAULT_ENV: &str = "MILSWEEP_FAULT";

#[derive(Parser, Debug)]
#[command(name = "milsweep", version, about = "Benchmark and optimize MIL pipeline configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every grid configuration `repeats` times.
    Benchmark {
        config: PathBuf,
        #[arg(long)]
        validate_only: bool,
    },
    /// Budgeted search with the configured sampler and pruner.
    Optimize {
        config: PathBuf,
        #[arg(long)]
        validate_only: bool,
    },
    /// Continue an interrupted study.
    Resume { study_dir: PathBuf },
    /// Write the study's result rows as CSV.
    Export {
        study_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the read-only HTTP API over a directory of studies.
    Serve {
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory with built explorer assets, served under `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Expected speedup N / (T * f) of guided search over exhaustive evaluation.
    Speedup {
        #[arg(long = "n")]
        n: u64,
        #[arg(long = "t")]
        t: u64,
        #[arg(long = "f")]
        f: f64,
    },
}

struct Failure {
    exit: u8,
    body: Value,
}

impl Failure {
    fn usage(code: &str, message: impl Into<String>) -> Self {
        Failure {
            exit: 2,
            body: json!({ "error": code, "message": message.into() }),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let mut body = json!({ "error": e.code(), "message": e.to_string() });
        match &e {
            ConfigError::UnknownKey { key, nearest, .. } => {
                body["key"] = json!(key);
                body["nearest"] = json!(nearest);
            }
            ConfigError::InvalidSpace(v) => {
                body["violations"] = json!(v
                    .iter()
                    .map(|v| json!({ "param": v.param, "rule": v.rule }))
                    .collect::<Vec<_>>());
            }
            ConfigError::Invalid { field, .. } => body["field"] = json!(field),
            _ => {}
        }
        Failure { exit: 2, body }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => c.into(),
            other => Failure {
                exit: 1,
                body: json!({ "error": other.code(), "message": other.to_string() }),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            return report(Failure::usage("usage", first));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("{}", f.body);
    ExitCode::from(f.exit)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Benchmark { config, validate_only } => new_study(&config, StudyMode::Benchmark, validate_only),
        Command::Optimize { config, validate_only } => new_study(&config, StudyMode::Optimize, validate_only),
        Command::Resume { study_dir } => resume(&study_dir),
        Command::Export { study_dir, out } => {
            let (state, _) = load_snapshot(&study_dir.join(JOURNAL_FILE))?;
            let set = result_set(&state)?;
            export_csv(&set, &out)?;
            println!("{}", json!({ "rows": set.rows.len(), "out": out }));
            Ok(())
        }
        Command::Serve { root, bind, ui } => {
            if !root.is_dir() {
                return Err(Failure::usage("io", format!("{} is not a directory", root.display())));
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage("io", e.to_string()))?;
            eprintln!("serving {} on http://{bind}", root.display());
            rt.block_on(milsweep::service::serve(root, &bind, ui))
                .map_err(|e| Failure::usage("io", e.to_string()))
        }
        Command::Speedup { n, t, f } => {
            let est = estimate_speedup(n, t, f).map_err(|e| Failure::usage("domain", e.to_string()))?;
            if est.outside_empirical_range {
                eprintln!("warning: f = {f} lies outside the empirical range [0.05, 0.3]");
            }
            println!("{}", est.speedup);
            Ok(())
        }
    }
}

fn fault_from_env() -> Result<Option<Fault>, Failure> {
    match std::env::var(FAULT_ENV) {
        Ok(v) => Fault::parse(&v)
            .map(Some)
            .ok_or_else(|| Failure::usage("usage", format!("{FAULT_ENV}: cannot parse `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run_options(loaded: &LoadedConfig, dir: &Path, evaluator: &dyn Evaluator) -> Result<RunOptions, Failure> {
    let mut opts = RunOptions::for_dir(dir);
    if let Some(shared) = &loaded.config.cache_dir {
        // Shared roots are namespaced by evaluator settings, which shape the artifacts.
        opts.cache_root = Some(shared.join(&evaluator.fingerprint()[..16]));
    }
    if !loaded.config.persist_artifacts {
        opts.trial_artifacts = None;
    }
    opts.fault = fault_from_env()?;
    Ok(opts)
}

fn new_study(path: &Path, mode: StudyMode, validate_only: bool) -> Result<(), Failure> {
    let loaded = load_config(path)?;
    if loaded.config.mode != mode {
        return Err(ConfigError::Invalid {
            field: "mode".into(),
            message: format!("config declares {:?} mode", loaded.config.mode).to_lowercase(),
        }
        .into());
    }
    let plan = StudyPlan::from_config(&loaded);
    if validate_only {
        let grid = match mode {
            StudyMode::Benchmark => Some(
                enumerate_grid(&plan.space, plan.grid_points, plan.grid_cap)
                    .map_err(Error::from)?
                    .len(),
            ),
            StudyMode::Optimize => None,
        };
        println!(
            "{}",
            json!({ "status": "valid", "study": loaded.study_id, "fingerprint": loaded.fingerprint, "grid_size": grid })
        );
        return Ok(());
    }
    let dir = loaded.config.output_dir.clone();
    if journal_exists(&dir) {
        return Err(Error::StudyExists(dir).into());
    }
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    fs::copy(path, dir.join(CONFIG_COPY)).map_err(|e| Error::Io {
        path: dir.join(CONFIG_COPY),
        source: e,
    })?;
    let evaluator = loaded.config.evaluator.clone();
    let opts = run_options(&loaded, &dir, &evaluator)?;
    let outcome = start_study(&plan, &evaluator, &dir, &opts)?;
    print_outcome(&loaded, &dir, &outcome);
    Ok(())
}

fn resume(dir: &Path) -> Result<(), Failure> {
    let loaded = load_config(&dir.join(CONFIG_COPY))?;
    let plan = StudyPlan::from_config(&loaded);
    let evaluator = loaded.config.evaluator.clone();
    let opts = run_options(&loaded, dir, &evaluator)?;
    let outcome = resume_study(&plan, &evaluator, dir, &opts)?;
    print_outcome(&loaded, dir, &outcome);
    Ok(())
}

fn print_outcome(loaded: &LoadedConfig, dir: &Path, outcome: &StudyOutcome) {
    let counts: serde_json::Map<String, Value> = ["complete", "pruned", "failed"]
        .iter()
        .map(|s| {
            let state = milsweep::core::trial::TrialState::parse(s).expect("known state");
            (s.to_string(), json!(outcome.state.count(state)))
        })
        .collect();
    let mut body = json!({
        "study": loaded.study_id,
        "dir": dir,
        "best": {
            "trial_id": outcome.best.trial_id,
            "value": outcome.best.value,
            "config": outcome.best.config.entries,
        },
        "degraded": outcome.degraded,
        "trials": counts,
    });
    if let Some(best) = outcome.best_config(loaded.config.direction) {
        body["best_mean"] = json!({ "config": best.config.entries, "mean": best.mean, "std": best.std });
    }
    println!("{body}");
}
