use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use nmca::harness::io::{self, ModelFile};
use nmca::harness::{evaluate_model, run_trials, ExperimentConfig};
use nmca::metrics::composition_probe;
use nmca::nmca::{run_nmca, TrainConfig};
use nmca::synth::{generate_views, SynthConfig};
use nmca::NmcaError;

/// Nonlinear multiview component analysis: data generation, training,
/// evaluation and multi-trial experiments.
#[derive(Debug, Parser)]
#[command(name = "nmca", version)]
struct Cli {
    /// Overrides every seed in the loaded configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic data set with its ground truth.
    Generate {
        /// Synthetic-data configuration (or an experiment configuration).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a data directory or a list of view CSV files.
    Train {
        /// Training configuration (or an experiment configuration).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on a data set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory with S.csv, A*.csv, C*.csv and distortions.json.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every method over seeded trials and sweep points.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "NMCA_JOBS", default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate a learned channel map composed with the true distortion.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// View number, starting at 1.
        #[arg(long)]
        view: usize,
        /// Channel number within the view, starting at 1.
        #[arg(long)]
        channel: usize,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    /// Unreadable or invalid configuration.
    Config(String),
    Runtime(NmcaError),
}

impl From<NmcaError> for Failure {
    fn from(e: NmcaError) -> Self {
        Failure::Runtime(e)
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Failure::Config(format!("{}: at `{field}`: {}", path.display(), e.inner()))
    })
}

fn is_experiment(path: &Path) -> Result<bool, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(value.get("synth").is_some())
}

fn invalid(e: NmcaError) -> Failure {
    match e {
        NmcaError::InvalidConfig(msg) => Failure::Config(msg),
        other => Failure::Runtime(other),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Generate { config, out } => {
            let mut synth: SynthConfig = if is_experiment(&config)? {
                read_config::<ExperimentConfig>(&config)?.synth
            } else {
                read_config(&config)?
            };
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            synth.validate().map_err(invalid)?;
            let data = generate_views(&synth)?;
            io::save_views_csv(&data, &out)?;
            if let Some(truth) = &data.truth {
                io::save_truth_csv(truth, &out)?;
            }
            eprintln!("wrote {} views of {} samples to {}", data.num_views(), data.samples(), out.display());
        }
        Command::Train { config, data, out } => {
            let mut cfg: TrainConfig =
                if is_experiment(&config)? { read_config::<ExperimentConfig>(&config)?.train } else { read_config(&config)? };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dataset = match data.as_slice() {
                [dir] if dir.is_dir() => {
                    let truth = dir.join("S.csv").is_file().then_some(dir.as_path());
                    io::load_dataset_dir(dir, truth)?
                }
                files => io::load_views_csv(files)?,
            };
            cfg.validate(dataset.samples()).map_err(invalid)?;
            let start = Instant::now();
            let (model, trace) = run_nmca(&dataset, &cfg)?;
            if let Some(last) = trace.last() {
                eprintln!(
                    "trained {} epochs in {:.1}s, final loss {:.6e}",
                    last.epoch,
                    start.elapsed().as_secs_f64(),
                    last.loss.total
                );
            }
            io::write_json(&out, &ModelFile { config: cfg, model, trace })?;
        }
        Command::Evaluate { model, data, truth, out } => {
            let file = ModelFile::load(&model)?;
            let dataset = io::load_dataset_dir(&data, truth.as_deref())?;
            let metrics = evaluate_model(&file.model, &dataset, 200)?;
            io::write_json(&out, &metrics)?;
        }
        Command::Experiment { config, out, jobs } => {
            let mut cfg: ExperimentConfig = read_config(&config)?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            cfg.validate().map_err(invalid)?;
            let record = run_trials(&cfg, jobs)?;
            io::write_json(&out, &record)?;
            for point in &record.points {
                let label = match (&point.param, &point.value) {
                    (Some(p), Some(v)) => format!("{p}={v} "),
                    _ => String::new(),
                };
                for m in &point.methods {
                    eprintln!(
                        "{label}{:?}: dist {:.4} ({:.2e}) over {} trials, {} failed",
                        m.method,
                        m.mean_dist,
                        m.std_dist,
                        m.trials.len(),
                        m.failures.len()
                    );
                }
            }
            if record.failed_trials() > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Probe { model, truth, view, channel, grid, out } => {
            if view == 0 || channel == 0 {
                return Err(Failure::Config("--view and --channel count from 1".into()));
            }
            let file = ModelFile::load(&model)?;
            let truth = io::load_truth_dir(&truth)?;
            let probe = composition_probe(&file.model, Some(&truth), view - 1, channel - 1, grid)?;
            io::write_probe_csv(&out, &probe)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
