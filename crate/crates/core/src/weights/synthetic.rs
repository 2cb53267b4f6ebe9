use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{LayerWeights, ModelConfig, RawWeights};
use crate::linalg::Matrix;

struct Sampler(ChaCha8Rng);

impl Sampler {
    // values are rounded through f32 so a saved fixture reloads bit-exactly
    fn vec(&mut self, len: usize, mean: f64, std: f64) -> Vec<f64> {
        let dist = Normal::new(mean, std).expect("valid normal");
        (0..len)
            .map(|_| f64::from(dist.sample(&mut self.0) as f32))
            .collect()
    }

    fn mat(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        Matrix::from_vec(rows, cols, self.vec(rows * cols, 0.0, std))
    }
}

/// Random GPT-2-shaped weights with non-trivial LayerNorm scales and biases.
pub fn synthetic_raw(config: ModelConfig, seed: u64) -> RawWeights {
    let mut s = Sampler(ChaCha8Rng::seed_from_u64(seed));
    let d = config.d_model;
    let m = config.d_mlp;
    let wd = 1.0 / (d as f64).sqrt();
    let wm = 1.0 / (m as f64).sqrt();
    let w_e = s.mat(config.vocab, d, 0.5);
    let w_pos = s.mat(config.n_ctx, d, 0.1);
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            ln1_g: s.vec(d, 1.0, 0.2),
            ln1_b: s.vec(d, 0.0, 0.2),
            w_q: s.mat(d, d, wd),
            b_q: s.vec(d, 0.0, 0.1),
            w_k: s.mat(d, d, wd),
            b_k: s.vec(d, 0.0, 0.1),
            w_v: s.mat(d, d, wd),
            b_v: s.vec(d, 0.0, 0.1),
            w_o: s.mat(d, d, 0.5 * wd),
            b_o: s.vec(d, 0.0, 0.05),
            ln2_g: s.vec(d, 1.0, 0.2),
            ln2_b: s.vec(d, 0.0, 0.2),
            w_in: s.mat(d, m, wd),
            b_in: s.vec(m, 0.0, 0.1),
            w_out: s.mat(m, d, wm),
            b_out: s.vec(d, 0.0, 0.05),
        })
        .collect();
    RawWeights {
        config,
        w_e,
        w_pos,
        layers,
        ln_f_g: s.vec(d, 1.0, 0.2),
        ln_f_b: s.vec(d, 0.0, 0.2),
        folded: false,
    }
}
