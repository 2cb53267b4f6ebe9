use super::{FoldedLayer, FoldedModel, RawWeights};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Absorb a LayerNorm's scale `g` and bias `b` into the linear map `(w, c)`
/// it feeds: `w' = diag(g)·w`, `c' = b·w + c`.
fn fold_ln_into(g: &[f64], b: &[f64], w: &Matrix, c: &[f64]) -> (Matrix, Vec<f64>) {
    let mut folded = w.clone();
    for (i, gi) in g.iter().enumerate() {
        folded.row_mut(i).iter_mut().for_each(|x| *x *= gi);
    }
    let shift = w.vec_mul(b);
    let bias = shift.iter().zip(c).map(|(s, c)| s + c).collect();
    (folded, bias)
}

/// Fold every LayerNorm scale/bias into the following weights, push the
/// value bias into the attention output bias, and fold `ln_f` into the
/// unembedding. Refuses weights that were already folded.
pub fn fold_layernorm(raw: &RawWeights) -> Result<FoldedModel> {
    if raw.folded {
        return Err(Error::AlreadyFolded);
    }
    let layers = raw
        .layers
        .iter()
        .map(|l| {
            let (w_q, b_q) = fold_ln_into(&l.ln1_g, &l.ln1_b, &l.w_q, &l.b_q);
            let (w_k, b_k) = fold_ln_into(&l.ln1_g, &l.ln1_b, &l.w_k, &l.b_k);
            let (w_v, b_v) = fold_ln_into(&l.ln1_g, &l.ln1_b, &l.w_v, &l.b_v);
            // attention weights sum to one, so b_v passes through unchanged
            let b_o = w_o_bias(&l.w_o, &b_v, &l.b_o);
            let (w_in, b_in) = fold_ln_into(&l.ln2_g, &l.ln2_b, &l.w_in, &l.b_in);
            FoldedLayer {
                w_q,
                b_q,
                w_k,
                b_k,
                w_v,
                w_o: l.w_o.clone(),
                b_o,
                w_in,
                b_in,
                w_out: l.w_out.clone(),
                b_out: l.b_out.clone(),
            }
        })
        .collect();

    let mut unembed = raw.w_e.clone();
    for v in 0..unembed.rows() {
        unembed
            .row_mut(v)
            .iter_mut()
            .zip(&raw.ln_f_g)
            .for_each(|(x, g)| *x *= g);
    }
    let unembed_bias = raw.w_e.mul_vec(&raw.ln_f_b);

    Ok(FoldedModel {
        config: raw.config,
        w_e: raw.w_e.clone(),
        w_pos: raw.w_pos.clone(),
        layers,
        unembed,
        unembed_bias,
    })
}

fn w_o_bias(w_o: &Matrix, b_v: &[f64], b_o: &[f64]) -> Vec<f64> {
    w_o.vec_mul(b_v).iter().zip(b_o).map(|(a, b)| a + b).collect()
}
