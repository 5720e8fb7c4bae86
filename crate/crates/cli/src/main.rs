mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Post-backbone fake news classification pipeline
#[derive(Parser)]
#[command(name = "fusionet", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw JSONL records and extract attributes
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "tweet")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into train/validation/test JSONL files
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic labeled corpus
    Synth {
        /// TOML spec; the benchmark corpus is used when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_items: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train or apply the bag-of-words stand-in backbone
    Backbone {
        #[command(subcommand)]
        action: BackboneAction,
    },
    /// Soft and hard voting over prediction files
    Ensemble {
        /// Prediction files; repeat to stack models
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long, default_value = "soft")]
        mode: String,
        #[arg(long, default_value = "real")]
        tie: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit attribute conditional probabilities on training items
    Stats {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "username,domain")]
        kinds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build fusion feature vectors
    Features(FeaturesArgs),
    /// Oversample the minority class of a feature file
    Oversample(OversampleArgs),
    /// Train the fusion network or predict with MC dropout
    Sffn {
        #[command(subcommand)]
        action: SffnAction,
    },
    /// Apply the attribute heuristic to model predictions
    Postprocess(PostprocessArgs),
    /// Attribute priority and threshold ablation over a finished run
    Ablate {
        #[arg(long)]
        run_dir: PathBuf,
        /// Attribute orderings, e.g. `username,domain`; repeatable
        #[arg(long = "ordering", required = true)]
        orderings: Vec<String>,
        #[arg(long, default_value = "with,without")]
        modes: String,
        /// Defaults to the threshold chosen by the run
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value = "weighted")]
        avg: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted labels against gold labels
    Evaluate(EvaluateArgs),
    /// McNemar test between two prediction files
    Mcnemar {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "exact")]
        mode: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run the whole pipeline from a config file
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config file and list violations
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneKind {
    Bow,
}

#[derive(Subcommand)]
enum BackboneAction {
    Train {
        #[arg(long, value_enum, default_value = "bow")]
        model: BackboneKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "bow")]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        bootstrap: bool,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
        #[arg(long, default_value_t = 2)]
        min_token_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Predict {
        #[arg(long, value_enum, default_value = "bow")]
        model: BackboneKind,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Ensemble file; its soft probabilities open each vector
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    ensemble: Option<PathBuf>,
    /// Raw prediction file; every model's pair opens each vector
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, default_value = "username,domain")]
    kinds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OversampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "kmeans-smote")]
    method: String,
    #[arg(long, default_value_t = 1.0)]
    target_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    imbalance_threshold: f64,
    #[arg(long)]
    density_exponent: Option<f64>,
}

#[derive(Subcommand)]
enum SffnAction {
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "32,16")]
        hidden: String,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 20)]
        patience: usize,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 50)]
        mc_passes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Model predictions with item_id, p_real, p_fake columns
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "username,domain")]
    priority: String,
    /// Fixed threshold; when omitted it is chosen by the elbow rule against
    /// the labels in `--items`
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long, default_value = "weighted")]
    avg: String,
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value = "eval")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
