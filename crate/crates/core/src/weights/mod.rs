//! GPT-2 weights: loading, LayerNorm/bias folding, candidate atoms.
//!
//! Every linear map is held in `(in, out)` orientation (`y = x · W`), which is
//! also how GPT-2's 1-D-convolution checkpoints store them. Under this layout
//! the rows of `w_o` and `w_out` are the vectors written to the residual
//! stream and the columns of `w_in` are neuron input weights.

mod atoms;
mod checkpoint;
mod fold;
mod synthetic;
mod vocab;

pub use atoms::{atom_table, AtomKind, AtomLabel, AtomTable, CandidateAtom};
pub use checkpoint::{load_checkpoint, tensor_names};
pub use fold::fold_layernorm;
pub use synthetic::synthetic_raw;
pub use vocab::{load_vocab_decode, Vocab};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Shape hyperparameters; GPT-2 small is `ModelConfig::gpt2_small(50257)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_ctx: usize,
    pub vocab: usize,
}

/// LayerNorm epsilon used by GPT-2.
pub const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn gpt2_small(vocab: usize) -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_mlp: 3072,
            n_ctx: 1024,
            vocab,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One transformer block exactly as stored in the checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub w_q: Matrix,
    pub b_q: Vec<f64>,
    pub w_k: Matrix,
    pub b_k: Vec<f64>,
    pub w_v: Matrix,
    pub b_v: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    /// `d_model × d_mlp`
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    /// `d_mlp × d_model`
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawWeights {
    pub config: ModelConfig,
    /// `vocab × d_model`
    pub w_e: Matrix,
    /// `n_ctx × d_model`
    pub w_pos: Matrix,
    pub layers: Vec<LayerWeights>,
    pub ln_f_g: Vec<f64>,
    pub ln_f_b: Vec<f64>,
    /// Set when the file was written by [`FoldedModel::save`].
    pub folded: bool,
}

/// A block after folding: LayerNorm scale/bias live in `w_*`/`b_*`, and the
/// value bias has been pushed into `b_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedLayer {
    pub w_q: Matrix,
    pub b_q: Vec<f64>,
    pub w_k: Matrix,
    pub b_k: Vec<f64>,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl FoldedLayer {
    /// Input weights of MLP neuron `n` (column `n` of `w_in`).
    pub fn neuron_input(&self, n: usize) -> Vec<f64> {
        self.w_in.column(n)
    }

    /// `d_mlp × d_model` matrix whose rows are the neuron input weights.
    pub fn neuron_inputs(&self) -> Matrix {
        self.w_in.transpose()
    }
}

/// Immutable analysis substrate. Runtime LayerNorm only centers and rescales.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedModel {
    pub config: ModelConfig,
    pub w_e: Matrix,
    pub w_pos: Matrix,
    pub layers: Vec<FoldedLayer>,
    /// `vocab × d_model`; row `v` is `ln_f.g ⊙ W_E[v]`.
    pub unembed: Matrix,
    /// `ln_f.b · W_E[v]` per token.
    pub unembed_bias: Vec<f64>,
}

impl FoldedModel {
    /// Write in the same container format, tagged `folded=true`.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
        checkpoint::save_folded(self, path.as_ref())
    }

    /// Reload a file written by [`FoldedModel::save`].
    pub fn load(path: impl AsRef<std::path::Path>) -> crate::Result<Self> {
        checkpoint::load_folded(path.as_ref())
    }
}

/// Load any supported checkpoint as a folded model, folding if needed.
pub fn load_model(path: impl AsRef<std::path::Path>) -> crate::Result<FoldedModel> {
    let path = path.as_ref();
    let raw = load_checkpoint(path)?;
    if raw.folded {
        FoldedModel::load(path)
    } else {
        fold_layernorm(&raw)
    }
}
