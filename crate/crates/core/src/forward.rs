//! Pre-LN GPT-2 inference over a [`FoldedModel`], with residual recording and
//! neuron ablation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::weights::{FoldedModel, RawWeights, LN_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationMode {
    ZeroActivation,
}

/// Force one MLP neuron's post-GELU activation to a fixed value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub layer: usize,
    pub neuron: usize,
    pub mode: AblationMode,
    /// `None` ablates every position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<usize>>,
}

impl AblationSpec {
    pub fn zero(layer: usize, neuron: usize) -> Self {
        Self {
            layer,
            neuron,
            mode: AblationMode::ZeroActivation,
            positions: None,
        }
    }

    fn applies_at(&self, pos: usize) -> bool {
        self.positions.as_ref().map_or(true, |p| p.contains(&pos))
    }

    fn validate(&self, model: &FoldedModel) -> Result<()> {
        let c = model.config;
        if self.layer >= c.n_layers || self.neuron >= c.d_mlp {
            return Err(Error::InvalidArgument(format!(
                "ablation ({}, {}) out of range for {} layers × {} neurons",
                self.layer, self.neuron, c.n_layers, c.d_mlp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Logits {
    #[default]
    All,
    LastPosition,
    Skip,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub record_residuals: bool,
    pub record_attention: bool,
    pub logits: Logits,
    pub ablations: Vec<AblationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[boundary][position][d_model]`; boundary 0 is embed + pos, boundary
    /// `ℓ + 1` is the stream after block `ℓ`. Empty unless recorded.
    pub residuals: Vec<Vec<Vec<f64>>>,
    /// `[layer][head][query][key]`, zero above the diagonal. Empty unless recorded.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[position][vocab]`; with [`Logits::LastPosition`] only the final row.
    pub logits: Vec<Vec<f64>>,
    pub ablations: Vec<AblationSpec>,
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Mean subtraction and variance normalization only.
fn normalize(x: &[f64]) -> Vec<f64> {
    let m = linalg::mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let s = (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - m) / s).collect()
}

fn add_bias(mut v: Vec<f64>, b: &[f64]) -> Vec<f64> {
    v.iter_mut().zip(b).for_each(|(x, b)| *x += b);
    v
}

fn check_input(model: &FoldedModel, ids: &[u32]) -> Result<()> {
    let c = model.config;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if ids.len() > c.n_ctx {
        return Err(Error::ContextTooLong {
            len: ids.len(),
            n_ctx: c.n_ctx,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= c.vocab) {
        return Err(Error::TokenOutOfRange { id, vocab: c.vocab });
    }
    Ok(())
}

/// Single forward pass.
pub fn forward(model: &FoldedModel, ids: &[u32], opts: &ForwardOptions) -> Result<ForwardTrace> {
    check_input(model, ids)?;
    for a in &opts.ablations {
        a.validate(model)?;
    }
    let c = model.config;
    let d_head = c.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();
    let n = ids.len();

    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            let mut v = model.w_e.row(id as usize).to_vec();
            linalg::axpy(1.0, model.w_pos.row(p), &mut v);
            v
        })
        .collect();

    let mut residuals = Vec::new();
    let mut attention = Vec::new();
    if opts.record_residuals {
        residuals.push(x.clone());
    }

    for (li, layer) in model.layers.iter().enumerate() {
        let xn: Vec<Vec<f64>> = x.iter().map(|r| normalize(r)).collect();
        let q: Vec<Vec<f64>> = xn.iter().map(|r| add_bias(layer.w_q.vec_mul(r), &layer.b_q)).collect();
        let k: Vec<Vec<f64>> = xn.iter().map(|r| add_bias(layer.w_k.vec_mul(r), &layer.b_k)).collect();
        let v: Vec<Vec<f64>> = xn.iter().map(|r| layer.w_v.vec_mul(r)).collect();

        let mut z = vec![vec![0.0; c.d_model]; n];
        let mut layer_pattern = Vec::new();
        for h in 0..c.n_heads {
            let span = h * d_head..(h + 1) * d_head;
            let mut pattern = vec![vec![0.0; n]; n];
            for i in 0..n {
                let qi = &q[i][span.clone()];
                let scores: Vec<f64> = (0..=i)
                    .map(|j| linalg::dot(qi, &k[j][span.clone()]) * scale)
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let a = e / total;
                    pattern[i][j] = a;
                    linalg::axpy(a, &v[j][span.clone()], &mut z[i][span.clone()]);
                }
            }
            if opts.record_attention {
                layer_pattern.push(pattern);
            }
        }
        if opts.record_attention {
            attention.push(layer_pattern);
        }
        for (xi, zi) in x.iter_mut().zip(&z) {
            let out = add_bias(layer.w_o.vec_mul(zi), &layer.b_o);
            linalg::axpy(1.0, &out, xi);
        }

        let ablations: Vec<&AblationSpec> = opts.ablations.iter().filter(|a| a.layer == li).collect();
        for (p, xi) in x.iter_mut().enumerate() {
            let xn = normalize(xi);
            let mut act: Vec<f64> = add_bias(layer.w_in.vec_mul(&xn), &layer.b_in)
                .into_iter()
                .map(gelu)
                .collect();
            for a in &ablations {
                if a.applies_at(p) {
                    act[a.neuron] = 0.0;
                }
            }
            let out = add_bias(layer.w_out.vec_mul(&act), &layer.b_out);
            linalg::axpy(1.0, &out, xi);
        }
        if opts.record_residuals {
            residuals.push(x.clone());
        }
    }

    let positions: Vec<usize> = match opts.logits {
        Logits::All => (0..n).collect(),
        Logits::LastPosition => vec![n - 1],
        Logits::Skip => Vec::new(),
    };
    let logits = positions
        .into_iter()
        .map(|p| {
            let xf = normalize(&x[p]);
            model
                .unembed
                .mul_vec(&xf)
                .into_iter()
                .zip(&model.unembed_bias)
                .map(|(l, b)| l + b)
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite logits".into()));
    }
    Ok(ForwardTrace {
        residuals,
        attention,
        logits,
        ablations: opts.ablations.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitDelta {
    pub clean_logit: f64,
    pub ablated_logit: f64,
    pub delta: f64,
}

/// `logit(target | ablated) − logit(target | clean)` at the final position.
pub fn logit_delta(
    model: &FoldedModel,
    ids: &[u32],
    target: u32,
    ablation: &AblationSpec,
) -> Result<LogitDelta> {
    if target as usize >= model.config.vocab {
        return Err(Error::TokenOutOfRange {
            id: target,
            vocab: model.config.vocab,
        });
    }
    let clean_opts = ForwardOptions {
        logits: Logits::LastPosition,
        ..Default::default()
    };
    let ablated_opts = ForwardOptions {
        ablations: vec![ablation.clone()],
        ..clean_opts.clone()
    };
    let clean = forward(model, ids, &clean_opts)?.logits[0][target as usize];
    let ablated = forward(model, ids, &ablated_opts)?.logits[0][target as usize];
    Ok(LogitDelta {
        clean_logit: clean,
        ablated_logit: ablated,
        delta: ablated - clean,
    })
}

/// Per layer boundary, the mean over all prompts and positions of the
/// absolute coordinate mean of the residual vector.
pub fn residual_mean_stats(model: &FoldedModel, prompts: &[Vec<u32>]) -> Result<Vec<f64>> {
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("empty prompt set".into()));
    }
    let opts = ForwardOptions {
        record_residuals: true,
        logits: Logits::Skip,
        ..Default::default()
    };
    let boundaries = model.config.n_layers + 1;
    let mut sums = vec![0.0; boundaries];
    let mut count = 0usize;
    for ids in prompts {
        let trace = forward(model, ids, &opts)?;
        for (b, rows) in trace.residuals.iter().enumerate() {
            sums[b] += rows.iter().map(|r| linalg::mean(r).abs()).sum::<f64>();
        }
        count += ids.len();
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// Parse a prompt-id file: one whitespace-separated id sequence per line,
/// blank lines ignored.
pub fn parse_prompt_ids(text: &str) -> Result<Vec<Vec<u32>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::InvalidArgument(format!("line {}: bad token id `{t}`", n + 1)))
                })
                .collect()
        })
        .collect()
}

pub fn load_prompt_ids(path: impl AsRef<std::path::Path>) -> Result<Vec<Vec<u32>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_ids(&text)
}

/// Straight-line forward pass over unfolded weights: explicit LayerNorm
/// scale/bias and value bias, written with plain index loops. Serves as the
/// independent oracle for folding and for the engine above.
pub fn reference_logits(raw: &RawWeights, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
    let c = raw.config;
    if ids.len() > c.n_ctx {
        return Err(Error::ContextTooLong {
            len: ids.len(),
            n_ctx: c.n_ctx,
        });
    }
    let d = c.d_model;
    let dh = c.d_head();
    let n = ids.len();

    let layer_norm = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mut mu = 0.0;
        for v in x {
            mu += v;
        }
        mu /= d as f64;
        let mut var = 0.0;
        for v in x {
            var += (v - mu) * (v - mu);
        }
        var /= d as f64;
        (0..d).map(|i| (x[i] - mu) / (var + LN_EPS).sqrt() * g[i] + b[i]).collect()
    };
    let affine = |x: &[f64], w: &crate::linalg::Matrix, b: &[f64]| -> Vec<f64> {
        let mut out = b.to_vec();
        for j in 0..w.cols() {
            for i in 0..w.rows() {
                out[j] += x[i] * w.get(i, j);
            }
        }
        out
    };

    let mut x: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (p, &id) in ids.iter().enumerate() {
        if id as usize >= c.vocab {
            return Err(Error::TokenOutOfRange { id, vocab: c.vocab });
        }
        x.push((0..d).map(|i| raw.w_e.get(id as usize, i) + raw.w_pos.get(p, i)).collect());
    }
    for l in &raw.layers {
        let h: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &l.ln1_g, &l.ln1_b)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &l.w_q, &l.b_q)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &l.w_k, &l.b_k)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| affine(r, &l.w_v, &l.b_v)).collect();
        let mut z = vec![vec![0.0; d]; n];
        for head in 0..c.n_heads {
            let off = head * dh;
            for i in 0..n {
                let mut s = vec![0.0; i + 1];
                for (j, sj) in s.iter_mut().enumerate() {
                    for t in 0..dh {
                        *sj += q[i][off + t] * k[j][off + t];
                    }
                    *sj /= (dh as f64).sqrt();
                }
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let tot: f64 = e.iter().sum();
                for j in 0..=i {
                    for t in 0..dh {
                        z[i][off + t] += e[j] / tot * v[j][off + t];
                    }
                }
            }
        }
        for i in 0..n {
            let o = affine(&z[i], &l.w_o, &l.b_o);
            for t in 0..d {
                x[i][t] += o[t];
            }
            let h2 = layer_norm(&x[i], &l.ln2_g, &l.ln2_b);
            let a: Vec<f64> = affine(&h2, &l.w_in, &l.b_in).into_iter().map(gelu).collect();
            let o2 = affine(&a, &l.w_out, &l.b_out);
            for t in 0..d {
                x[i][t] += o2[t];
            }
        }
    }
    Ok(x
        .iter()
        .map(|r| {
            let f = layer_norm(r, &raw.ln_f_g, &raw.ln_f_b);
            (0..c.vocab)
                .map(|v| (0..d).map(|t| f[t] * raw.w_e.get(v, t)).sum())
                .collect()
        })
        .collect())
}

/// Largest elementwise `|a − b| / (|b| + 1)`.
pub fn max_relative_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / (y.abs() + 1.0))
        .fold(0.0, f64::max)
}
