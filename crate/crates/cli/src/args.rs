use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "vsalens", version, about = "Probe GPT-2 weights for bundled and bound concept vectors")]
pub struct Cli {
    /// Worker threads; defaults to VSALENS_THREADS, then all cores.
    #[arg(long, global = true, env = "VSALENS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// GPT-2 checkpoint in safetensors format.
    #[arg(long, env = "VSALENS_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,

    /// GPT-2 `encoder.json`, used to decode token labels.
    #[arg(long, env = "VSALENS_VOCAB")]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Gram-matrix, bias and mean diagnostics.
    Diagnose(DiagnoseArgs),
    /// Greedy bundled explanations of MLP input weights.
    Explain(ExplainArgs),
    /// Assemble explanations into a circuit graph.
    Circuits(CircuitsArgs),
    /// Zero one MLP neuron and measure a target logit.
    Ablate(AblateArgs),
    /// Synthetic bundling, binding and gate demonstrations.
    VsaDemo(VsaDemoArgs),
    /// Checkpoint-free oracle suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// embeddings | attn:L.H.{Q|K|V|O} | attn:all | mlp_out:L | mlp_out:all | biases | means
    #[arg(long)]
    pub target: String,

    #[arg(long)]
    pub out: PathBuf,

    /// Embedding rows included in the embeddings Gram.
    #[arg(long, default_value_t = 4096)]
    pub max_rows: usize,

    /// Off-diagonal |cos| counted as large above this.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,

    /// Raw inner products instead of cosines.
    #[arg(long)]
    pub raw: bool,

    /// Write PGM + CSV heatmaps for single-matrix targets.
    #[arg(long)]
    pub heatmap: bool,

    /// Keep only the top-left K×K block of heatmaps.
    #[arg(long)]
    pub cutout: Option<usize>,

    /// Prompt-id file for residual-stream means (target `means`).
    #[arg(long)]
    pub prompt_ids: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Greedy,
    Pursuit,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub layer: usize,

    /// Explain only this neuron (the output keeps its full trace).
    #[arg(long)]
    pub neuron: Option<usize>,

    /// Comma-separated atom kinds: token, attn, mlp.
    #[arg(long)]
    pub atoms: Option<String>,

    /// Explainer configuration as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Force signed membership on.
    #[arg(long, conflicts_with = "unsigned")]
    pub signed: bool,

    /// Force signed membership off.
    #[arg(long)]
    pub unsigned: bool,

    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,

    /// Keep the accept/reject trace of every neuron in layer runs.
    #[arg(long)]
    pub trace: bool,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionArg {
    Upstream,
    Downstream,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CircuitsArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Directory holding `explanations_*.json` files.
    #[arg(long)]
    pub explanations: PathBuf,

    /// Link MLP outputs to token unembedding directions (needs the checkpoint).
    #[arg(long)]
    pub unembed: bool,

    /// Unembedding link threshold; defaults to the explainer's min_atom_cos.
    #[arg(long)]
    pub min_cos: Option<f64>,

    #[arg(long, default_value_t = 10)]
    pub unembed_top_k: usize,

    /// Export only the neighborhood of this node, e.g. `mlp:7.1321`.
    #[arg(long)]
    pub trace_node: Option<String>,

    #[arg(long, default_value_t = 2)]
    pub depth: usize,

    #[arg(long, value_enum, default_value_t = DirectionArg::Upstream)]
    pub direction: DirectionArg,

    /// DOT output path; the JSON dump goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long)]
    pub layer: usize,

    #[arg(long)]
    pub neuron: usize,

    #[arg(long)]
    pub prompt_ids: PathBuf,

    #[arg(long)]
    pub target_id: u32,

    /// Ablate only these positions (comma-separated); default all.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,

    /// Output directory; without it the JSON goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VsaDemoArgs {
    #[arg(long, default_value_t = 768)]
    pub dim: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 100_000)]
    pub ann_atoms: usize,

    #[arg(long, default_value_t = 32)]
    pub ann_dim: usize,

    #[arg(long, default_value_t = 1000)]
    pub ann_queries: usize,

    #[arg(long)]
    pub out: Option<PathBuf>,
}
