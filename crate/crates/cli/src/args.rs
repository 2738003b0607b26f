use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

const FORMATS: &str = "\
File formats:
  features (.pxy)      binary: b\"PXY1\", u32 LE rows, u32 LE cols, rows*cols f32 LE row-major
  labels (.txt)        one style name per line, aligned with feature rows
  vocabulary (.txt)    one token per line
  embeddings (.txt)    `token v1 v2 ... vd` per line, whitespace separated
  G (.csv)             header `element,<style1>,...`; one row per element
  ground truth (.csv)  header `painting_id,style,<element1>,...`; values in {-1,0,1}
  predictions (.csv)   header `id,<element1>,...`; one row per item
  model (.pxym)        binary checkpoint written by `train`
Every output is accompanied by `<output>.manifest.json` (inputs' SHA-256, options, seed).";

#[derive(Debug, Parser)]
#[command(
    name = "proxylearn",
    version,
    about = "Learn semantic attributes of items from class labels and a class-attribute matrix G",
    after_help = FORMATS
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate G from word embeddings or from a ground-truth survey.
    #[command(after_help = FORMATS)]
    EstimateG(EstimateGArgs),
    /// Train an attribute model and write a checkpoint.
    #[command(after_help = FORMATS)]
    Train(TrainArgs),
    /// Apply a checkpoint to features and write attribute predictions.
    #[command(after_help = FORMATS)]
    Predict(PredictArgs),
    /// Score predictions against a ground truth: per-element AUC, AP, random baseline, AUC@K curve.
    #[command(after_help = FORMATS)]
    Eval(EvalArgs),
    /// List the top and bottom items for one element.
    #[command(after_help = FORMATS)]
    Rank(RankArgs),
    /// Random-ordering AUC baseline for every element of a ground truth.
    #[command(after_help = FORMATS)]
    Baseline(BaselineArgs),
    /// Generate a synthetic world with a known G and latent attributes.
    #[command(after_help = FORMATS)]
    Synth(SynthArgs),
    /// Add seeded Gaussian noise to G at a relative Frobenius magnitude.
    #[command(after_help = FORMATS)]
    PerturbG(PerturbGArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["embeddings", "ground_truth"])))]
pub struct EstimateGArgs {
    /// Word-embedding table; G solves `W_A·a = w_s` per style.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Ground-truth CSV; each G column averages `--per-style` sampled rows of that style.
    #[arg(long, value_name = "PATH")]
    pub ground_truth: Option<PathBuf>,
    /// Element vocabulary (required with --embeddings).
    #[arg(long, value_name = "PATH")]
    pub elements: Option<PathBuf>,
    /// Style vocabulary (required with --embeddings; fixes column order with --ground-truth).
    #[arg(long, value_name = "PATH")]
    pub styles: Option<PathBuf>,
    /// Annotated rows sampled per style for the ground-truth source.
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub per_style: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output G CSV.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct OptimizerArgs {
    /// SGD steps.
    #[arg(long, value_name = "N", default_value_t = 200_000)]
    pub steps: usize,
    #[arg(long, value_name = "N", default_value_t = 32)]
    pub batch: usize,
    /// Initial learning rate.
    #[arg(long, value_name = "F", default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_name = "F", default_value_t = 0.9)]
    pub momentum: f64,
    /// Learning-rate decay factor applied every --decay-epochs epochs.
    #[arg(long, value_name = "F", default_value_t = 0.94)]
    pub decay: f64,
    #[arg(long, value_name = "N", default_value_t = 2)]
    pub decay_epochs: usize,
    /// Hidden layer widths below the attribute layer, comma separated.
    #[arg(long, value_name = "N,N,...", value_delimiter = ',', default_values_t = [2048, 2048, 1024])]
    pub hidden: Vec<usize>,
    /// Constant added to G before the learned offset is subtracted (offset variant).
    #[arg(long, value_name = "F", default_value_t = 1.0)]
    pub pre_shift: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// sparse | logistic | pca | eszsl | deep-proxy-plain | deep-proxy-svd | deep-proxy-offset | deep-proxy
    #[arg(long, value_name = "NAME")]
    pub method: String,
    /// G* variant for `--method deep-proxy`: plain | svd | offset.
    #[arg(long, value_name = "NAME")]
    pub variant: Option<String>,
    /// Training features (.pxy).
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,
    /// Training labels; style names must match the G header.
    #[arg(long, value_name = "PATH")]
    pub labels: PathBuf,
    /// Category-attribute matrix.
    #[arg(long, value_name = "PATH")]
    pub g: PathBuf,
    /// Activation L1 weight for deep-proxy. Repeat to search a grid.
    #[arg(long, value_name = "F")]
    pub lambda: Vec<f64>,
    /// Last-layer weight L1 for logistic. Repeat to search a grid.
    #[arg(long, value_name = "F")]
    pub lambda_l: Vec<f64>,
    /// Sparse-coding L1 weight. Repeat to search a grid.
    #[arg(long, value_name = "F")]
    pub lambda_s: Vec<f64>,
    /// ESZSL feature-side regularizer. Repeat to search a grid.
    #[arg(long, value_name = "F")]
    pub lambda1: Vec<f64>,
    /// ESZSL attribute-side regularizer. Repeat to search a grid.
    #[arg(long, value_name = "F")]
    pub lambda2: Vec<f64>,
    /// Fraction of feature variance kept by the PCA proxy.
    #[arg(long, value_name = "F", default_value_t = 0.95)]
    pub variance_target: f64,
    /// Validation features; required when any grid has more than one value.
    #[arg(long, value_name = "PATH", requires = "val_ground_truth")]
    pub val_features: Option<PathBuf>,
    /// Validation ground truth; candidates are ranked by mean AUC on it.
    #[arg(long, value_name = "PATH", requires = "val_features")]
    pub val_ground_truth: Option<PathBuf>,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output checkpoint (.pxym).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,
    /// G; required for sparse models, otherwise only names the output columns.
    #[arg(long, value_name = "PATH")]
    pub g: Option<PathBuf>,
    /// Overrides the sparse-coding weight stored in the checkpoint.
    #[arg(long, value_name = "F")]
    pub lambda_s: Option<f64>,
    /// Ground-truth CSV whose painting ids label the output rows.
    #[arg(long, value_name = "PATH")]
    pub ground_truth: Option<PathBuf>,
    /// Output predictions CSV.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Binary view is used: somewhat counts as relevant.
    #[arg(long, value_name = "PATH")]
    pub ground_truth: PathBuf,
    /// Group size of the AUC@K curve.
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub k_group: usize,
    /// Random orderings per element for the baseline; 0 disables it.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Method label recorded in the manifest.
    #[arg(long, value_name = "NAME", default_value = "")]
    pub method: String,
    /// Output report CSV; the curve goes to `<out stem>.curve.csv`.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Element column to rank by.
    #[arg(long, value_name = "NAME")]
    pub element: String,
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub top: usize,
    /// Output CSV `position,top,bottom`.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long, value_name = "PATH")]
    pub ground_truth: PathBuf,
    #[arg(long, value_name = "N", default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output CSV `element,positives,negatives,random_mean,random_std`.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Elements.
    #[arg(long, value_name = "N")]
    pub m: usize,
    /// Styles.
    #[arg(long, value_name = "N")]
    pub n: usize,
    /// Samples.
    #[arg(long, value_name = "N")]
    pub k: usize,
    /// Feature dimension.
    #[arg(long, value_name = "N")]
    pub d: usize,
    /// Feature noise standard deviation.
    #[arg(long, value_name = "F", default_value_t = 0.1)]
    pub noise: f64,
    /// Element whose G row is zeroed. Repeatable.
    #[arg(long, value_name = "INDEX")]
    pub zero_row: Vec<usize>,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output directory: features.pxy, labels.txt, styles.txt, elements.txt, g.csv, ground_truth.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbGArgs {
    #[arg(long, value_name = "PATH")]
    pub g: PathBuf,
    /// Noise Frobenius norm relative to ‖G‖_F.
    #[arg(long, value_name = "F")]
    pub magnitude: f64,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}
