//! Experiment runner for deep analytic networks: `train`, `eval` and
//! `theory` subcommands over IDX or delimited datasets.

pub mod config;
pub mod run;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ExperimentConfig, FtKind, ModelKind, ModelSpec, PRESET_NAMES};

#[derive(Debug, Parser)]
#[command(name = "dan", version, about = "Train and analyse deep analytic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model over one or more seeded trials and write the model,
    /// per-layer reports and a JSON summary.
    Train(RunArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Fit a model and trace intra/interclass distance dynamics.
    Theory(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Experiment configuration file (TOML). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data files: a table, a train/test pair, or IDX image/label pairs.
    #[arg(long, num_args = 1..=4)]
    pub dataset: Vec<PathBuf>,
    /// Label column of delimited data: first, last or a zero-based index.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Field delimiter of delimited data (one character or `whitespace`).
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Named hyperparameter preset.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda_ft: Option<f64>,
    #[arg(long)]
    pub beta_ft: Option<f64>,
    #[arg(long)]
    pub no_relu: bool,
    #[arg(long)]
    pub no_ft: bool,
    #[arg(long, value_enum)]
    pub ft_classifier: Option<FtKind>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub standardize: Option<Switch>,
    /// Training rows per trial.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Cap on training rows, subsampled per trial.
    #[arg(long)]
    pub max_train: Option<usize>,
    /// Stratify fraction-based splits by class.
    #[arg(long)]
    pub stratified: bool,
    /// Monte-Carlo pairs per distance estimate.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Saved model container.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Include a confusion matrix per part.
    #[arg(long)]
    pub confusion: bool,
}

fn base_config(data: &DataArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &data.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !data.dataset.is_empty() {
        cfg.dataset.paths = data.dataset.clone();
    }
    if let Some(v) = &data.label_column {
        cfg.dataset.label_column = v.clone();
    }
    if let Some(v) = &data.delimiter {
        cfg.dataset.delimiter = v.clone();
    }
    if data.out.is_some() {
        cfg.out = data.out.clone();
    }
    Ok(cfg)
}

impl RunArgs {
    /// The configuration file (if any) with these flags applied on top.
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = base_config(&self.data)?;
        if self.preset.is_some() {
            cfg.preset = self.preset.clone();
        }
        let flags = ModelSpec {
            kind: self.model,
            depth: self.depth,
            lambda: self.lambda,
            gamma: self.gamma,
            lambda_ft: self.lambda_ft,
            beta_ft: self.beta_ft,
            relu: self.no_relu.then_some(false),
            ft: self.no_ft.then_some(false),
            ft_classifier: self.ft_classifier,
        };
        cfg.model = flags.over(cfg.model);
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.standardize {
            cfg.standardize = Some(v == Switch::On);
        }
        if self.train_size.is_some() {
            cfg.dataset.train_size = self.train_size;
        }
        if self.max_train.is_some() {
            cfg.dataset.max_train = self.max_train;
        }
        if self.stratified {
            cfg.dataset.stratified = true;
        }
        if let Some(v) = self.pairs {
            cfg.pairs = v;
        }
        Ok(cfg)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Runs a parsed command, printing a short report to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let s = run::run_train(&args.to_config()?)?;
            for t in &s.trials {
                println!(
                    "trial {} seed {}: train {} test {} best layer {} ({:.2}s)",
                    t.trial,
                    t.seed,
                    pct(t.train_accuracy),
                    t.test_accuracy.map_or_else(|| "-".into(), pct),
                    t.best_layer.map_or_else(|| "-".into(), |l| l.to_string()),
                    t.seconds
                );
            }
            if let (Some(m), Some(sd)) = (s.mean_test_accuracy, s.std_test_accuracy) {
                println!("mean test accuracy {} (std {})", pct(m), pct(sd));
            }
            println!("wrote {} and {}", s.model_path.display(), s.report_path.display());
        }
        Command::Eval(args) => {
            let cfg = base_config(&args.data)?;
            for e in run::run_eval(&args.model, &cfg, args.confusion)? {
                let layers: Vec<String> = e.layer_accuracy.iter().map(|&a| pct(a)).collect();
                println!("{} ({} rows): layers [{}] final {}", e.part, e.rows, layers.join(", "), pct(e.final_accuracy));
                if let Some(m) = &e.confusion {
                    for row in m {
                        println!("  {}", row.iter().map(usize::to_string).collect::<Vec<_>>().join("\t"));
                    }
                }
            }
        }
        Command::Theory(args) => {
            let s = run::run_theory(&args.to_config()?)?;
            print!("{}", s.train_dynamics.to_tsv());
            println!(
                "gap non-decreasing: {}; max theory deviation {:.2}%; bounds hold: {}; span-gain consistent: {}",
                s.train.gap_non_decreasing,
                100.0 * s.train.max_relative_deviation,
                s.train.bounds_hold,
                s.theorem_consistent
            );
        }
    }
    Ok(())
}
