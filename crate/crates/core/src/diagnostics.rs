//! Near-orthogonality diagnostics over model weights: row-cosine Gram
//! matrices, bias/embedding alignment, embedding means, heatmap export.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::weights::FoldedModel;

/// Default cutoff for counting an off-diagonal entry as "not small".
pub const DEFAULT_OFFDIAG_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    /// Row cosines; the diagonal is 1 for every non-zero row.
    #[default]
    Cosine,
    /// Raw inner products.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub values: Matrix,
    pub mode: GramMode,
    /// Rows with zero norm; their cosines are defined as 0.
    pub zero_rows: Vec<usize>,
}

/// Pairwise row Gram. Only the upper triangle is computed; the lower one is
/// mirrored so the result is exactly symmetric.
pub fn gram(rows: &Matrix, mode: GramMode) -> Result<Gram> {
    let n = rows.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("gram needs at least 2 rows, got {n}")));
    }
    let norms: Vec<f64> = rows.iter_rows().map(linalg::norm).collect();
    let zero_rows: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    let prepared: Vec<Vec<f64>> = match mode {
        GramMode::Cosine => rows.iter_rows().map(linalg::normalized).collect(),
        GramMode::Raw => rows.iter_rows().map(<[f64]>::to_vec).collect(),
    };
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    let v = linalg::dot(&prepared[i], &prepared[j]);
                    match mode {
                        GramMode::Cosine if i == j && norms[i] != 0.0 => 1.0,
                        GramMode::Cosine => v.clamp(-1.0, 1.0),
                        GramMode::Raw => v,
                    }
                })
                .collect()
        })
        .collect();
    let mut values = Matrix::zeros(n, n);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values.set(i, j, v);
            values.set(j, i, v);
        }
    }
    Ok(Gram {
        values,
        mode,
        zero_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub target: String,
    pub n: usize,
    pub diag_mean: f64,
    pub diag_min: f64,
    pub offdiag_abs_mean: f64,
    pub offdiag_abs_median: f64,
    pub offdiag_abs_max: f64,
    pub threshold: f64,
    pub fraction_above_threshold: f64,
    pub zero_rows: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if values.len() % 2 == 1 {
        return hi;
    }
    let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo + hi) / 2.0
}

/// Summary statistics of a square symmetric Gram. Off-diagonal statistics
/// use `|g_ij|` over the strict upper triangle.
pub fn diagonal_dominance(target: &str, gram: &Matrix, threshold: f64) -> Result<GramReport> {
    let n = gram.rows();
    if n != gram.cols() || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "gram must be square and non-empty, got {:?}",
            gram.shape()
        )));
    }
    let diag: Vec<f64> = (0..n).map(|i| gram.get(i, i)).collect();
    let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            off.push(gram.get(i, j).abs());
        }
    }
    let count = off.len().max(1) as f64;
    let above = off.iter().filter(|&&x| x > threshold).count();
    let sum: f64 = off.iter().sum();
    let max = off.iter().copied().fold(0.0, f64::max);
    Ok(GramReport {
        target: target.to_string(),
        n,
        diag_mean: diag.iter().sum::<f64>() / n as f64,
        diag_min: diag.iter().copied().fold(f64::INFINITY, f64::min),
        offdiag_abs_mean: sum / count,
        offdiag_abs_median: median(&mut off),
        offdiag_abs_max: max,
        threshold,
        fraction_above_threshold: above as f64 / count,
        zero_rows: Vec::new(),
    })
}

/// Gram plus its report in one step.
pub fn gram_report(target: &str, rows: &Matrix, mode: GramMode, threshold: f64) -> Result<(Gram, GramReport)> {
    let g = gram(rows, mode)?;
    let mut report = diagonal_dominance(target, &g.values, threshold)?;
    report.zero_rows = g.zero_rows.clone();
    Ok((g, report))
}

/// Which weight block a Gram is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramTarget {
    /// First `max_rows` token embeddings.
    Embeddings { max_rows: usize },
    AttnHead { layer: usize, head: usize, which: Projection },
    MlpOut { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Q,
    K,
    V,
    O,
}

impl fmt::Display for GramTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GramTarget::Embeddings { .. } => write!(f, "embeddings"),
            GramTarget::AttnHead { layer, head, which } => write!(f, "attn:{layer}.{head}.{which:?}"),
            GramTarget::MlpOut { layer } => write!(f, "mlp_out:{layer}"),
        }
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Q" | "q" => Ok(Projection::Q),
            "K" | "k" => Ok(Projection::K),
            "V" | "v" => Ok(Projection::V),
            "O" | "o" => Ok(Projection::O),
            _ => Err(Error::InvalidArgument(format!("unknown projection `{s}`"))),
        }
    }
}

/// Vectors whose Gram is reported for `target`.
///
/// Q/K/V heads contribute their 64 read directions (columns of the head's
/// slice); O heads and MLP outputs contribute their write directions (rows).
pub fn target_rows(model: &FoldedModel, target: GramTarget) -> Result<Matrix> {
    let c = model.config;
    let layer_of = |l: usize| {
        model
            .layers
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {l} out of range 0..{}", c.n_layers)))
    };
    match target {
        GramTarget::Embeddings { max_rows } => Ok(model.w_e.row_slice(0, max_rows.min(c.vocab))),
        GramTarget::MlpOut { layer } => Ok(layer_of(layer)?.w_out.clone()),
        GramTarget::AttnHead { layer, head, which } => {
            if head >= c.n_heads {
                return Err(Error::InvalidArgument(format!("head {head} out of range 0..{}", c.n_heads)));
            }
            let lw = layer_of(layer)?;
            let (a, b) = (head * c.d_head(), (head + 1) * c.d_head());
            Ok(match which {
                Projection::Q => lw.w_q.column_slice(a, b).transpose(),
                Projection::K => lw.w_k.column_slice(a, b).transpose(),
                Projection::V => lw.w_v.column_slice(a, b).transpose(),
                Projection::O => lw.w_o.row_slice(a, b),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineSummary {
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Token id with the largest `|cos|`.
    pub argmax_token: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBias {
    pub layer: usize,
    pub b_o_norm: f64,
    pub b_out_norm: f64,
    pub b_o_vs_embeddings: CosineSummary,
    pub b_out_vs_embeddings: CosineSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub layers: Vec<LayerBias>,
    /// Layer whose attention output bias has the largest norm.
    pub max_b_o_norm_layer: usize,
}

fn cosine_summary(bias: &[f64], w_e: &Matrix) -> CosineSummary {
    let cos: Vec<f64> = w_e.iter_rows().map(|r| linalg::cosine(bias, r).abs()).collect();
    let mut argmax = 0;
    for (i, &c) in cos.iter().enumerate() {
        if c > cos[argmax] {
            argmax = i;
        }
    }
    CosineSummary {
        mean_abs: cos.iter().sum::<f64>() / cos.len().max(1) as f64,
        max_abs: cos.get(argmax).copied().unwrap_or(0.0),
        argmax_token: argmax as u32,
    }
}

/// Norms of the folded output biases and their cosines with every raw token
/// embedding row.
pub fn bias_orthogonality(model: &FoldedModel) -> BiasReport {
    let layers: Vec<LayerBias> = model
        .layers
        .par_iter()
        .enumerate()
        .map(|(l, lw)| LayerBias {
            layer: l,
            b_o_norm: linalg::norm(&lw.b_o),
            b_out_norm: linalg::norm(&lw.b_out),
            b_o_vs_embeddings: cosine_summary(&lw.b_o, &model.w_e),
            b_out_vs_embeddings: cosine_summary(&lw.b_out, &model.w_e),
        })
        .collect();
    let mut max_layer = 0;
    for lb in &layers {
        if lb.b_o_norm > layers[max_layer].b_o_norm {
            max_layer = lb.layer;
        }
    }
    BiasReport {
        layers,
        max_b_o_norm_layer: max_layer,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStats {
    /// Mean over rows of `|mean of the row's coordinates|`.
    pub mean_abs_coord_mean: f64,
    pub max_abs_coord_mean: f64,
}

pub fn embedding_mean_stats(model: &FoldedModel) -> MeanStats {
    let means: Vec<f64> = model.w_e.iter_rows().map(|r| linalg::mean(r).abs()).collect();
    MeanStats {
        mean_abs_coord_mean: means.iter().sum::<f64>() / means.len().max(1) as f64,
        max_abs_coord_mean: means.iter().copied().fold(0.0, f64::max),
    }
}

/// Write `{stem}.pgm` (8-bit, `|g|` mapped linearly to 0..255) and
/// `{stem}.csv` (the same values at full precision). `cutout` keeps only the
/// top-left `k×k` block.
pub fn heatmap_export(gram: &Matrix, dir: &Path, stem: &str, cutout: Option<usize>) -> Result<()> {
    let n = cutout.map_or(gram.rows(), |k| k.min(gram.rows()));
    let m = cutout.map_or(gram.cols(), |k| k.min(gram.cols()));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let pgm_path = dir.join(format!("{stem}.pgm"));
    let mut pgm = format!("P5\n{m} {n}\n255\n").into_bytes();
    pgm.reserve(n * m);
    for i in 0..n {
        for j in 0..m {
            pgm.push(quantize(gram.get(i, j)));
        }
    }
    std::fs::write(&pgm_path, pgm).map_err(|e| Error::io(&pgm_path, e))?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..n {
        let line: Vec<String> = (0..m).map(|j| gram.get(i, j).to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

fn quantize(x: f64) -> u8 {
    (x.abs().min(1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsa::sample_concept_vectors;
    use crate::weights::{fold_layernorm, synthetic_raw, ModelConfig};

    fn mini() -> FoldedModel {
        let cfg = ModelConfig {
            n_layers: 3,
            n_heads: 2,
            d_model: 16,
            d_mlp: 32,
            n_ctx: 8,
            vocab: 40,
        };
        fold_layernorm(&synthetic_raw(cfg, 9)).unwrap()
    }

    #[test]
    fn identity_gram_is_identity() {
        let g = gram(&Matrix::identity(5), GramMode::Cosine).unwrap();
        assert_eq!(g.values, Matrix::identity(5));
        let r = diagonal_dominance("id", &g.values, 0.1).unwrap();
        assert_eq!(r.offdiag_abs_mean, 0.0);
        assert_eq!(r.fraction_above_threshold, 0.0);
        assert_eq!(r.diag_min, 1.0);
    }

    #[test]
    fn all_ones_report() {
        let ones = Matrix::from_vec(4, 4, vec![1.0; 16]);
        let r = diagonal_dominance("ones", &ones, 0.1).unwrap();
        assert_eq!(r.offdiag_abs_mean, 1.0);
        assert_eq!(r.fraction_above_threshold, 1.0);
        assert_eq!(r.offdiag_abs_median, 1.0);
    }

    #[test]
    fn zero_row_flagged() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]);
        let g = gram(&m, GramMode::Cosine).unwrap();
        assert_eq!(g.zero_rows, vec![1]);
        assert_eq!(g.values.get(1, 1), 0.0);
        assert_eq!(g.values.get(1, 2), 0.0);
        assert!(gram(&Matrix::zeros(1, 3), GramMode::Cosine).is_err());
    }

    #[test]
    fn random_rows_are_near_orthogonal() {
        let rows: Vec<Vec<f64>> = sample_concept_vectors(256, 768, 3)
            .unwrap()
            .into_iter()
            .map(|v| v.into_inner())
            .collect();
        let (g, r) = gram_report("random", &Matrix::from_rows(&rows), GramMode::Cosine, 0.1).unwrap();
        assert!(r.offdiag_abs_median < 0.1);
        for i in 0..256 {
            assert!((g.values.get(i, i) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn median_handles_even_counts() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn head_targets_have_head_width() {
        let m = mini();
        for which in [Projection::Q, Projection::K, Projection::V, Projection::O] {
            let rows = target_rows(&m, GramTarget::AttnHead { layer: 1, head: 1, which }).unwrap();
            assert_eq!(rows.shape(), [8, 16]);
        }
        assert_eq!(target_rows(&m, GramTarget::MlpOut { layer: 0 }).unwrap().shape(), [32, 16]);
        assert_eq!(target_rows(&m, GramTarget::Embeddings { max_rows: 10 }).unwrap().shape(), [10, 16]);
        assert!(target_rows(&m, GramTarget::MlpOut { layer: 3 }).is_err());
    }

    #[test]
    fn bias_aligned_with_token_five() {
        let mut m = mini();
        for lw in &mut m.layers {
            lw.b_o = vec![0.0; 16];
            lw.b_out = vec![0.0; 16];
        }
        let zero = bias_orthogonality(&m);
        assert!(zero.layers.iter().all(|l| l.b_o_norm == 0.0 && l.b_o_vs_embeddings.max_abs == 0.0));

        m.layers[2].b_o = m.w_e.row(5).iter().map(|x| 3.0 * x).collect();
        let r = bias_orthogonality(&m);
        assert_eq!(r.max_b_o_norm_layer, 2);
        assert_eq!(r.layers[2].b_o_vs_embeddings.argmax_token, 5);
        assert!((r.layers[2].b_o_vs_embeddings.max_abs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_means() {
        let mut m = mini();
        m.w_e = Matrix::from_vec(40, 16, vec![-0.3; 640]);
        let s = embedding_mean_stats(&m);
        assert!((s.mean_abs_coord_mean - 0.3).abs() < 1e-12);
        for i in 0..40 {
            for (j, x) in m.w_e.row_mut(i).iter_mut().enumerate() {
                let mag = 0.1 * (i + j / 2) as f64;
                *x = if j % 2 == 0 { mag } else { -mag };
            }
        }
        assert_eq!(embedding_mean_stats(&m).mean_abs_coord_mean, 0.0);
    }

    #[test]
    fn heatmap_identity_and_cutout() {
        let dir = tempfile::tempdir().unwrap();
        heatmap_export(&Matrix::identity(4), dir.path(), "id", None).unwrap();
        let pgm = std::fs::read(dir.path().join("id.pgm")).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(px[i * 4 + j], if i == j { 255 } else { 0 });
            }
        }
        heatmap_export(&Matrix::identity(300), dir.path(), "cut", Some(100)).unwrap();
        let pgm = std::fs::read(dir.path().join("cut.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n100 100\n255\n"));
        assert_eq!(pgm.len(), b"P5\n100 100\n255\n".len() + 100 * 100);
    }
}
