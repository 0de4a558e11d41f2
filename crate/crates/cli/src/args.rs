use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use spaneit::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "spaneit",
    version,
    about = "Entity-level sentiment classification with span graphs and coreference memory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-class and per-entity-type counts.
    Stats(DataArgs),
    /// Write a synthetic annotated corpus as CSV.
    Synth(SynthArgs),
    /// Dump tokens, extracted spans and graph edges for every example.
    Preprocess(PreprocessArgs),
    /// Train one model per seed and report aggregated test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train every ablation variant and print one table row per variant.
    Ablate(AblateArgs),
    /// Write attention and memory matrices for one example.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "synth"]))]
pub struct DataArgs {
    /// Annotated CSV (cleaned_tweets,Entity,Entity_Type,Coref_ID,label).
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Generate N synthetic examples instead of reading a file.
    #[arg(long, value_name = "N")]
    pub synth: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long, value_name = "S", default_value_t = 42)]
    pub synth_seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of examples.
    #[arg(long, value_name = "N")]
    pub synth: usize,
    /// Seed of the synthetic generator.
    #[arg(long, value_name = "S", default_value_t = 42)]
    pub synth_seed: u64,
    /// Output CSV path.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Context window around each sentiment cue (odd).
    #[arg(long, value_name = "W")]
    pub window: Option<usize>,
    /// Maximum sentiment spans per example.
    #[arg(long, value_name = "K")]
    pub num_spans: Option<usize>,
    /// Output text file (stdout when absent).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Hyperparameters shared by `train` and `ablate`. Values given here
/// override `--config`, which overrides the built-in defaults.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Training seeds, comma separated.
    #[arg(long, value_name = "S[,S...]")]
    pub seed: Option<String>,
    /// Number of bootstrap resamples for confidence intervals (0 disables).
    #[arg(long, value_name = "B")]
    pub bootstrap: Option<usize>,
    #[arg(long, value_name = "LR", help = "AdamW learning rate")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "N", help = "Examples per optimizer step")]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "N", help = "Maximum framed input length")]
    pub max_len: Option<usize>,
    #[arg(long, value_name = "D", help = "Model width")]
    pub hidden_dim: Option<usize>,
    #[arg(long, value_name = "H", help = "Attention heads in the encoder and interaction blocks")]
    pub heads: Option<usize>,
    #[arg(long, value_name = "H", help = "Graph attention heads")]
    pub gat_heads: Option<usize>,
    #[arg(long, value_name = "L", help = "Graph attention layers")]
    pub gat_layers: Option<usize>,
    #[arg(long, value_name = "N", help = "Coreference memory capacity")]
    pub memory_size: Option<usize>,
    #[arg(long, value_name = "K", help = "Maximum sentiment spans per example")]
    pub num_spans: Option<usize>,
    #[arg(long, value_name = "W", help = "Context window around each sentiment cue (odd)")]
    pub window: Option<usize>,
    #[arg(long, value_name = "P", help = "Dropout probability")]
    pub dropout: Option<f64>,
    #[arg(long, value_name = "N", help = "Early-stopping patience in epochs")]
    pub patience: Option<usize>,
    #[arg(long, value_name = "N", help = "Maximum training epochs")]
    pub epochs: Option<usize>,
    /// Replace graph attention by the identity.
    #[arg(long)]
    pub no_gat: bool,
    /// Replace the memory vector by zeros.
    #[arg(long)]
    pub no_memory: bool,
    /// Collapse sentiment spans to the fallback span and drop the span loss.
    #[arg(long)]
    pub no_span: bool,
    /// Use the [CLS] vector instead of the entity span.
    #[arg(long)]
    pub no_entities: bool,
    /// Classify from the [CLS] vector alone.
    #[arg(long)]
    pub only_text: bool,
}

/// Argument ids that mirror configuration keys.
pub const CONFIG_FLAGS: [(&str, &str); 15] = [
    ("seed", "seeds"),
    ("bootstrap", "bootstrap"),
    ("lr", "lr"),
    ("batch_size", "batch_size"),
    ("max_len", "max_len"),
    ("hidden_dim", "hidden_dim"),
    ("heads", "heads"),
    ("gat_heads", "gat_heads"),
    ("gat_layers", "gat_layers"),
    ("memory_size", "memory_size"),
    ("num_spans", "num_spans"),
    ("window", "window"),
    ("dropout", "dropout"),
    ("patience", "patience"),
    ("epochs", "epochs"),
];

impl ModelArgs {
    /// `(key, value)` pairs for every flag given on the command line.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("seeds", self.seed.clone());
        push("bootstrap", self.bootstrap.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("max_len", self.max_len.map(|v| v.to_string()));
        push("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        push("heads", self.heads.map(|v| v.to_string()));
        push("gat_heads", self.gat_heads.map(|v| v.to_string()));
        push("gat_layers", self.gat_layers.map(|v| v.to_string()));
        push("memory_size", self.memory_size.map(|v| v.to_string()));
        push("num_spans", self.num_spans.map(|v| v.to_string()));
        push("window", self.window.map(|v| v.to_string()));
        push("dropout", self.dropout.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        let off = |flag: bool| flag.then(|| "false".to_string());
        push("use_gat", off(self.no_gat));
        push("use_memory", off(self.no_memory));
        push("use_span", off(self.no_span));
        push("use_entities", off(self.no_entities));
        push("only_text", self.only_text.then(|| "true".to_string()));
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for checkpoints, metrics and the run manifest.
    #[arg(long, value_name = "DIR", default_value = "spaneit-run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of bootstrap resamples for confidence intervals (0 disables).
    #[arg(long, value_name = "B", default_value_t = 1000)]
    pub bootstrap: usize,
    /// Seed of the bootstrap resampler.
    #[arg(long, value_name = "S", default_value_t = 42)]
    pub seed: u64,
    /// Also write the report to this file.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated variant names to run (all seven when absent).
    #[arg(long, value_name = "NAMES")]
    pub grid: Option<String>,
    /// Also write the table to this file.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Example index; examples before it are replayed to fill the memory.
    #[arg(long, value_name = "I", default_value_t = 0)]
    pub index: usize,
    /// Output directory for the CSV matrices.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Build the command with each configuration default appended to the
/// matching flag's help text.
pub fn command() -> clap::Command {
    let defaults = ExperimentConfig::default();
    let mut cmd = Cli::command();
    for sub in ["train", "ablate"] {
        cmd = cmd.mut_subcommand(sub, |mut s| {
            for (id, key) in CONFIG_FLAGS {
                let value = defaults.get(key).expect("known key");
                s = s.mut_arg(id, |a| {
                    let help = a.get_help().map(ToString::to_string).unwrap_or_default();
                    a.help(format!("{help} [default: {value}]"))
                });
            }
            s
        });
    }
    cmd
}

pub fn parse_from<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}
