use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use bedtwin_core::domain::{FeatureVector, Scenario};
use bedtwin_core::gbm;
use bedtwin_core::TrainParams;
use clap::{Args, Parser, Subcommand};

use crate::config::{AppConfig, ScenarioDefaults};
use crate::ingest::{ingest_csv, read_feature_table, write_sweep_csv};
use crate::ops::{self, ShapMethod, SweepGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bedtwin",
    version,
    about = "Discharge-to-bed-ready simulation, surrogate and validation tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and print its result as JSON.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of scenarios (a list, or a Latin-hypercube design) into a CSV table.
    Sweep {
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the surrogate on a daily dataset or sweep table.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: TrainArgs,
    },
    /// Print the per-facility report for a dataset and model.
    Validate {
        data: PathBuf,
        model: PathBuf,
        /// Also simulate every record.
        #[arg(long)]
        sim: bool,
        /// Replications per simulated record.
        #[arg(long)]
        reps: Option<u32>,
        /// Print the full JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Shapley attributions and global importance for a model over feature rows.
    Shap {
        model: PathBuf,
        rows: PathBuf,
        #[arg(long, conflicts_with = "sampled")]
        exact: bool,
        /// Sampled estimator with N permutations.
        #[arg(long, value_name = "N")]
        sampled: Option<usize>,
        #[arg(long, default_value_t = bedtwin_core::shap::DEFAULT_BACKGROUND_SIZE)]
        background: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn params(&self) -> TrainParams {
        let d = TrainParams::default();
        TrainParams {
            n_trees: self.trees.unwrap_or(d.n_trees),
            max_depth: self.depth.unwrap_or(d.max_depth),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            min_samples_leaf: self.min_leaf.unwrap_or(d.min_samples_leaf),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<gbm::GbmModel, String> {
    ops::load_model(&read(path)?).map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_DATA
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), String> {
    let emit = |out: &mut dyn Write, text: &str| writeln!(out, "{text}").map_err(|e| e.to_string());
    match command {
        Command::Simulate {
            scenario,
            reps,
            seed,
        } => {
            let mut s: Scenario = serde_json::from_slice(&read(&scenario)?)
                .map_err(|e| format!("invalid scenario {}: {e}", scenario.display()))?;
            if let Some(r) = reps {
                s.replications = r;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            emit(out, &ops::simulate(&s).map_err(|e| e.to_string())?)
        }
        Command::Sweep { grid, out: path } => {
            let parsed: SweepGrid = serde_json::from_slice(&read(&grid)?).map_err(|e| {
                format!(
                    "invalid grid {}: expected a list of scenarios or a design: {e}",
                    grid.display()
                )
            })?;
            let scenarios = parsed
                .expand(&ScenarioDefaults::default())
                .map_err(|e| e.to_string())?;
            let rows = ops::run_sweep(&scenarios).map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf).map_err(|e| e.to_string())?;
            write_file(&path, &buf)?;
            emit(
                out,
                &format!("wrote {} rows to {}", rows.len(), path.display()),
            )
        }
        Command::Train {
            data,
            out: path,
            params,
        } => {
            let params = params.params();
            params.validate().map_err(|e| e.to_string())?;
            let table = read_feature_table(&data).map_err(|e| e.to_string())?;
            let (x, y) = table.labelled();
            let (model, report) = ops::train_on_rows(&x, &y, &params, &data.display().to_string())
                .map_err(|e| e.to_string())?;
            write_file(&path, &gbm::save(&model))?;
            emit(out, &ops::to_json(&report))
        }
        Command::Validate {
            data,
            model,
            sim,
            reps,
            json,
        } => {
            let records = ingest_csv(&data).map_err(|e| e.to_string())?;
            let model = load_model(&model)?;
            let mut defaults = ScenarioDefaults::default();
            if let Some(r) = reps {
                defaults.replications = r;
            }
            let threshold = AppConfig::default().outlier_threshold;
            let report = ops::validate(&records, &model, sim.then_some(&defaults), threshold)
                .map_err(|e| e.to_string())?;
            if json {
                emit(out, &ops::to_json(&report))
            } else {
                write!(out, "{}", report.table).map_err(|e| e.to_string())
            }
        }
        Command::Shap {
            model,
            rows,
            exact: _,
            sampled,
            background,
            seed,
        } => {
            let model = load_model(&model)?;
            let table = read_feature_table(&rows).map_err(|e| e.to_string())?;
            let method = match sampled {
                Some(n) => ShapMethod::Sampled { n_permutations: n },
                None => ShapMethod::Exact,
            };
            let features: Vec<FeatureVector> = table.features;
            let result = ops::sensitivity(&model, &features, method, background, seed)
                .map_err(|e| e.to_string())?;
            emit(out, &ops::to_json(&result))
        }
        Command::Serve { config } => {
            let config = AppConfig::resolve(config.as_deref()).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(crate::api::serve(config))
                .map_err(|e| e.to_string())
        }
    }
}
