//! The `gpf` command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 I/O error.
//! Failures print a single `error: ...` line on stderr.

mod files;

pub use files::{load_graph, load_run_config, load_spec, EditFile, RunConfig, SpecFile};

use crate::gnn::{load_checkpoint, save_checkpoint, GnnError};
use crate::graph::{generate_synthetic_dataset, load_dataset, save_dataset, ClassRule, DatasetError, GraphError};
use crate::harness::{compare_strategies, pretrain_edge_prediction, train, HarnessError, Strategy, TrainConfig};
use crate::prompt::{fit_prompt, solve_prompt, verify_equivalence, FitConfig, PromptError, PromptVector};
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GnnError> for CliError {
    fn from(e: GnnError) -> Self {
        match e {
            GnnError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Io { .. } => CliError::Io(e.to_string()),
            PromptError::ZeroDenominator(_) | PromptError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            PromptError::Gnn(g) => g.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } => CliError::Io(e.to_string()),
            HarnessError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            HarnessError::Gnn(g) => g.into(),
            HarnessError::Prompt(p) => p.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpf", version, about = "Graph prompt feature tuning and closed-form prompt solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic graph-classification dataset (JSONL).
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        /// triangle-motif or community-pair
        #[arg(long)]
        rule: ClassRule,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a backbone from the config and pre-train it on edge prediction.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Train one strategy on top of a checkpoint.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the config's strategy.
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out_curve: PathBuf,
        #[arg(long)]
        out_prompt: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
    },
    /// Closed-form prompt for a single-layer linear GIN checkpoint.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_prompt: PathBuf,
    },
    /// Compare prompted and transformed embeddings; prints a JSON report.
    Verify {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Fit a prompt by gradient descent (any checkpoint).
    Fit {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 1e-14)]
        target_residual: f64,
        /// Plain fixed-step descent instead of backtracking.
        #[arg(long)]
        no_backtracking: bool,
        #[arg(long)]
        out_prompt: PathBuf,
    },
    /// Parameter accounting for a strategy.
    Params {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        strategy: Strategy,
    },
    /// Train several strategies over several seeds and tabulate test AUC.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated; overrides the config.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        /// Overrides the config.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out_csv: PathBuf,
        /// Defaults to `<out-csv stem>_curves` next to the CSV.
        #[arg(long)]
        curves_dir: Option<PathBuf>,
    },
}

fn train_config(cfg: &RunConfig, which: &str) -> Result<TrainConfig, CliError> {
    let c = match which {
        "pretrain" => cfg.pretrain.clone(),
        _ => cfg.train.clone(),
    };
    c.ok_or_else(|| CliError::Validation(format!("config has no \"{which}\" section")))
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    Ok(s.parse::<Strategy>()?)
}

fn finite_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("--{name} must be a positive number")))
    }
}

fn default_curves_dir(out_csv: &Path) -> PathBuf {
    let stem = out_csv.file_stem().map_or_else(|| "compare".into(), |s| s.to_string_lossy().into_owned());
    out_csv.with_file_name(format!("{stem}_curves"))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { seed, n, rule, dim, out } => {
            if n < 4 || dim == 0 {
                return Err(CliError::Validation("need --n >= 4 and --dim >= 1".into()));
            }
            let ds = generate_synthetic_dataset(seed, n, rule, dim);
            save_dataset(&ds, &out)?;
            println!("wrote {} graphs to {}", ds.len(), out.display());
        }
        Command::Pretrain {
            config,
            data,
            out_checkpoint,
        } => {
            let cfg = load_run_config(&config)?;
            let model_cfg = cfg
                .model
                .clone()
                .ok_or_else(|| CliError::Validation("config has no \"model\" section".into()))?;
            let tc = train_config(&cfg, "pretrain")?;
            let ds = load_dataset(&data)?;
            let model = model_cfg.build(ds.feature_dim(), tc.seed)?;
            let trained = pretrain_edge_prediction(&model, &ds, &tc)?;
            save_checkpoint(&trained, &out_checkpoint)?;
            println!("wrote {}", out_checkpoint.display());
        }
        Command::Tune {
            config,
            checkpoint,
            data,
            strategy,
            out_curve,
            out_prompt,
            out_checkpoint,
        } => {
            let cfg = load_run_config(&config)?;
            let tc = train_config(&cfg, "train")?;
            let strategy = match (strategy, &cfg.strategy) {
                (Some(s), _) => s,
                (None, Some(s)) => parse_strategy(s)?,
                (None, None) => return Err(CliError::Validation("no strategy given".into())),
            };
            if out_prompt.is_some() && !strategy.uses_prompt() {
                return Err(CliError::Validation(format!("--out-prompt needs a prompt strategy, got {strategy}")));
            }
            let backbone = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let model = strategy.prepare(&backbone, tc.seed)?;
            let out = train(&model, strategy, &ds, &tc)?;
            out.curve.write_csv(&out_curve)?;
            if let (Some(path), Some(p)) = (&out_prompt, &out.prompt) {
                p.save(path)?;
            }
            if let Some(path) = &out_checkpoint {
                save_checkpoint(&out.model, path)?;
            }
            let last = out.curve.last().expect("curve has the initial record");
            println!(
                "{strategy}: train loss {:.6}, train metric {:.4}, test metric {:.4}",
                last.train_loss, last.train_metric, last.test_metric
            );
        }
        Command::Solve {
            graph,
            spec,
            checkpoint,
            out_prompt,
        } => {
            let g = load_graph(&graph)?;
            let spec = load_spec(&spec)?;
            let model = load_checkpoint(&checkpoint)?;
            let p = match solve_prompt(&g, &spec, &model) {
                Err(e @ PromptError::MeanReadoutNodeCountChange { .. }) => {
                    log::warn!("{e}; falling back to fit_prompt");
                    let fit = fit_prompt(&model, &g, &spec, &FitConfig::default())?;
                    log::warn!("fitted prompt residual {:.3e}", fit.residual);
                    fit.prompt
                }
                other => other?,
            };
            p.save(&out_prompt)?;
            println!("{}", p.to_json());
        }
        Command::Verify {
            graph,
            spec,
            checkpoint,
            prompt,
            tol,
        } => {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(CliError::Validation("--tol must be a non-negative number".into()));
            }
            let g = load_graph(&graph)?;
            let spec = load_spec(&spec)?;
            let model = load_checkpoint(&checkpoint)?;
            let p = PromptVector::load(&prompt)?;
            let r = verify_equivalence(&model, &g, &spec, &p, tol)?;
            let report = serde_json::json!({
                "prompt_embedding": r.prompt_embedding,
                "target_embedding": r.target_embedding,
                "abs_error": r.abs_error,
                "rel_error": r.rel_error,
                "passed": r.passed,
            });
            println!("{report}");
            if !r.passed {
                return Err(CliError::Numeric(format!(
                    "equivalence check failed: rel_error {:.3e} > tol {tol:.3e}",
                    r.rel_error
                )));
            }
        }
        Command::Fit {
            graph,
            spec,
            checkpoint,
            steps,
            lr,
            target_residual,
            no_backtracking,
            out_prompt,
        } => {
            finite_positive("lr", lr)?;
            let g = load_graph(&graph)?;
            let spec = load_spec(&spec)?;
            let model = load_checkpoint(&checkpoint)?;
            let cfg = FitConfig {
                steps,
                learning_rate: lr,
                target_residual,
                backtracking: !no_backtracking,
            };
            let fit = fit_prompt(&model, &g, &spec, &cfg)?;
            fit.prompt.save(&out_prompt)?;
            println!(
                "residual {:e} (initial {:e}) after {} steps",
                fit.residual,
                fit.initial_residual,
                fit.history.len() - 1
            );
        }
        Command::Params { checkpoint, strategy } => {
            let backbone = load_checkpoint(&checkpoint)?;
            let model = strategy.prepare(&backbone, 0)?;
            let trainable = strategy.trainable_param_count(&model)?;
            let total = strategy.total_param_count(&model);
            println!("strategy: {strategy}");
            for g in model.groups() {
                let state = if model.is_frozen(g) { "frozen" } else { "trainable" };
                println!("  {g}: {} ({state})", model.group_param_count(g));
            }
            if strategy.uses_prompt() {
                println!("  prompt: {} (trainable)", model.input_dim());
            }
            println!("trainable: {trainable}");
            println!("total: {total}");
            println!("ratio: {:.6}", trainable as f64 / total as f64);
        }
        Command::Compare {
            config,
            checkpoint,
            data,
            strategies,
            seeds,
            out_csv,
            curves_dir,
        } => {
            let cfg = load_run_config(&config)?;
            let tc = train_config(&cfg, "train")?;
            let strategies = match (strategies, &cfg.strategies) {
                (Some(s), _) => s,
                (None, Some(s)) => s.iter().map(|s| parse_strategy(s)).collect::<Result<_, _>>()?,
                (None, None) => return Err(CliError::Validation("no strategies given".into())),
            };
            let seeds = seeds.or(cfg.seeds).unwrap_or(1);
            if seeds == 0 {
                return Err(CliError::Validation("--seeds must be positive".into()));
            }
            let backbone = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let table = compare_strategies(&backbone, &ds, &strategies, &tc, seeds)?;
            table.write_csv(&out_csv)?;
            table.write_curves(&curves_dir.unwrap_or_else(|| default_curves_dir(&out_csv)))?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run_from(std::env::args_os())
}
