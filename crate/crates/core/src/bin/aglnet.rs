use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use aglnet::datagen::Dataset;
use aglnet::dynamics::{integrate, OdeConfig};
use aglnet::harness::{self, ExperimentConfig, Method, ModelFile, ENV_OUTPUT_DIR, ENV_WORKERS};
use aglnet::metrics::{relative_test_error, selection_metrics};
use aglnet::selection::write_path_csv;
use aglnet::{par, Error, Result};

#[derive(Parser)]
#[command(name = "aglnet", version, about = "Adaptive group-Lasso networks on Lorenz-96 data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate Lorenz-96 and write the trajectory as CSV.
    Simulate {
        #[arg(long, default_value_t = 40)]
        dim: usize,
        #[arg(long, default_value_t = 8.0)]
        forcing: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 100.0)]
        t_final: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a TOML config (or a named preset).
    Run {
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        output_dir: Option<PathBuf>,
        #[arg(long, env = ENV_WORKERS)]
        workers: Option<usize>,
    },
    /// Fit one method on one replicate and write its λ path, model and data.
    Sweep {
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long, default_value = "adaptive_gl")]
        method: String,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        output_dir: Option<PathBuf>,
        #[arg(long, env = ENV_WORKERS)]
        workers: Option<usize>,
    },
    /// Score a saved model on a saved dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV (`x1..xd,y`).
        #[arg(long)]
        data: PathBuf,
        /// JSON sidecar of the dataset; defaults to the CSV path with a `.json` extension.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Print a preset config as TOML.
    Preset { name: String },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn fail(kind: &str, message: String) -> ExitCode {
    let report = ErrorReport { error: kind, message };
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string()),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}

fn load_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => ExperimentConfig::load(&path)?,
        (None, Some(name)) => ExperimentConfig::preset(&name)?,
        (None, None) => return Err(Error::InvalidConfig("give a config file or --preset".into())),
    };
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    par::init_workers(if cfg.workers == 0 { num_threads() } else { cfg.workers });
    Ok(cfg)
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { dim, forcing, dt, t_final, out } => {
            let mut ode = OdeConfig::lorenz96_standard(t_final);
            ode.forcing = forcing;
            ode.dt = dt;
            ode.x0 = vec![1.0; dim];
            if dim >= 20 {
                ode.x0[19] = 1.008;
            }
            let traj = integrate(&ode)?;
            match out {
                Some(path) => traj.write_csv(io::BufWriter::new(fs::File::create(path)?)),
                None => traj.write_csv(io::BufWriter::new(io::stdout().lock())),
            }
        }
        Command::Run { config, preset, output_dir, workers } => {
            let cfg = load_config(config, preset, output_dir, workers)?;
            let outcome = harness::run_experiment(&cfg)?;
            harness::emit_tables(&outcome, &cfg.output_dir)?;
            fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
            let mut out = io::stdout().lock();
            for row in &outcome.summary {
                writeln!(out, "{}", serde_json::to_string(row)?)?;
            }
            Ok(())
        }
        Command::Sweep { config, preset, method, replicate, output_dir, workers } => {
            let cfg = load_config(config, preset, output_dir, workers)?;
            let method: Method = method.parse()?;
            sweep(&cfg, method, replicate)
        }
        Command::Eval { model, data, sidecar } => eval(&model, &data, sidecar.as_deref()),
        Command::Preset { name } => {
            print!("{}", ExperimentConfig::preset(&name)?.to_toml());
            Ok(())
        }
    }
}

fn sweep(cfg: &ExperimentConfig, method: Method, replicate: usize) -> Result<()> {
    let exec = cfg.execution();
    let target = aglnet::datagen::TargetFunction::new(cfg.target, cfg.system.dim, cfg.combo_seed)?;
    let traj = integrate(&cfg.ode(None))?;
    let level = cfg.noise[0];
    let data = harness::replicate_data(cfg, &traj, &target, level, replicate)?;
    let initial = match method {
        Method::Dictionary => None,
        _ => Some(harness::initial_estimator(cfg, &data, replicate, exec)?),
    };
    let fit = harness::fit_method(cfg, &data, initial.as_ref(), method, replicate, exec)?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    write_path_csv(&fit.path, io::BufWriter::new(fs::File::create(dir.join("path.csv"))?))?;
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&fit.model)?)?;
    data.train.save(&dir.join("train.csv"), &dir.join("train.json"), &cfg.target)?;
    data.test.save(&dir.join("test.csv"), &dir.join("test.json"), &cfg.target)?;
    println!(
        "{}",
        serde_json::json!({
            "method": method,
            "lambda": fit.lambda,
            "support": fit.support,
            "train_mse": fit.train_mse,
        })
    );
    Ok(())
}

fn eval(model: &Path, data: &Path, sidecar: Option<&Path>) -> Result<()> {
    let model: ModelFile = serde_json::from_str(&fs::read_to_string(model)?)?;
    let sidecar = sidecar.map(Path::to_path_buf).unwrap_or_else(|| data.with_extension("json"));
    let (ds, meta) = Dataset::load(data, &sidecar, None)?;
    let f_hat = model.predict_raw(&ds.raw_x)?;
    let relative_error = relative_test_error(ds.raw_y.view(), f_hat.view())?;
    let support = model.input_support();
    let (sensitivity, specificity) = match selection_metrics(&support, &meta.true_support, ds.dim()) {
        Ok(r) => (Some(r.sensitivity), Some(r.specificity)),
        Err(Error::UndefinedMetric(_)) => (None, None),
        Err(e) => return Err(e),
    };
    println!(
        "{}",
        serde_json::json!({
            "relative_error": relative_error,
            "sensitivity": sensitivity,
            "specificity": specificity,
            "support": support,
            "rows": ds.len(),
        })
    );
    Ok(())
}
