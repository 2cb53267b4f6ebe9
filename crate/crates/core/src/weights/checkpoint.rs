//! safetensors container I/O with the reference GPT-2 tensor names.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::{FoldedLayer, FoldedModel, LayerWeights, ModelConfig, RawWeights};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const META_FOLDED: &str = "folded";
const META_N_HEAD: &str = "n_head";
const DEFAULT_D_HEAD: usize = 64;

/// Every tensor name a checkpoint with `n_layers` blocks must contain.
pub fn tensor_names(n_layers: usize) -> Vec<String> {
    let mut names = vec!["wte.weight".to_string(), "wpe.weight".to_string()];
    for i in 0..n_layers {
        for suffix in [
            "ln_1.weight",
            "ln_1.bias",
            "attn.c_attn.weight",
            "attn.c_attn.bias",
            "attn.c_proj.weight",
            "attn.c_proj.bias",
            "ln_2.weight",
            "ln_2.bias",
            "mlp.c_fc.weight",
            "mlp.c_fc.bias",
            "mlp.c_proj.weight",
            "mlp.c_proj.bias",
        ] {
            names.push(format!("h.{i}.{suffix}"));
        }
    }
    names.push("ln_f.weight".into());
    names.push("ln_f.bias".into());
    names
}

struct TensorFile<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
    metadata: HashMap<String, String>,
}

impl<'a> TensorFile<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(bytes)
            .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;
        let metadata = meta.metadata().clone().unwrap_or_default();
        let st = SafeTensors::deserialize(bytes)
            .map_err(|e| Error::CorruptCheckpoint(format!("unreadable container: {e}")))?;
        let prefix = if st.names().iter().any(|n| n.as_str() == "transformer.wte.weight") {
            "transformer."
        } else {
            ""
        };
        Ok(Self { st, prefix, metadata })
    }

    fn shape(&self, name: &str) -> Result<Vec<usize>> {
        let full = format!("{}{name}", self.prefix);
        self.st
            .tensor(&full)
            .map(|t| t.shape().to_vec())
            .map_err(|_| Error::MissingTensor(name.to_string()))
    }

    fn has(&self, name: &str) -> bool {
        let full = format!("{}{name}", self.prefix);
        self.st.tensor(&full).is_ok()
    }

    fn read(&self, name: &str, expected: &[usize]) -> Result<Vec<f64>> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .st
            .tensor(&full)
            .map_err(|_| Error::MissingTensor(name.to_string()))?;
        if view.shape() != expected {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: view.shape().to_vec(),
            });
        }
        let data = view.data();
        let values: Vec<f64> = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect(),
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            other => {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` has unsupported dtype {other:?}"
                )))
            }
        };
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor `{name}` contains non-finite values"
            )));
        }
        Ok(values)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.read(name, &[rows, cols])?))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        self.read(name, &[len])
    }

    fn infer_config(&self) -> Result<ModelConfig> {
        let wte = self.shape("wte.weight")?;
        let wpe = self.shape("wpe.weight")?;
        if wte.len() != 2 || wpe.len() != 2 {
            return Err(Error::CorruptCheckpoint("embeddings must be 2-D".into()));
        }
        let (vocab, d_model) = (wte[0], wte[1]);
        let n_ctx = wpe[0];
        let mut n_layers = 0;
        for name in self.st.names() {
            let name = name.strip_prefix(self.prefix).unwrap_or(name);
            if let Some(rest) = name.strip_prefix("h.") {
                if let Some(idx) = rest.split('.').next().and_then(|s| s.parse::<usize>().ok()) {
                    n_layers = n_layers.max(idx + 1);
                }
            }
        }
        if n_layers == 0 {
            return Err(Error::MissingTensor("h.0.ln_1.weight".into()));
        }
        let fc = self.shape("h.0.mlp.c_fc.weight")?;
        if fc.len() != 2 {
            return Err(Error::CorruptCheckpoint("h.0.mlp.c_fc.weight must be 2-D".into()));
        }
        let d_mlp = fc[1];
        let n_heads = match self.metadata.get(META_N_HEAD) {
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad n_head metadata `{s}`")))?,
            None => (d_model / DEFAULT_D_HEAD).max(1),
        };
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::CorruptCheckpoint(format!(
                "d_model {d_model} is not divisible by n_head {n_heads}"
            )));
        }
        Ok(ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_mlp,
            n_ctx,
            vocab,
        })
    }

    fn check_all_present(&self, n_layers: usize) -> Result<()> {
        for name in tensor_names(n_layers) {
            if !self.has(&name) {
                return Err(Error::MissingTensor(name));
            }
        }
        Ok(())
    }

    fn folded_flag(&self) -> bool {
        self.metadata.get(META_FOLDED).map(String::as_str) == Some("true")
    }

    fn raw_weights(&self) -> Result<RawWeights> {
        let config = self.infer_config()?;
        self.check_all_present(config.n_layers)?;
        let ModelConfig {
            d_model: d,
            d_mlp,
            vocab,
            n_ctx,
            ..
        } = config;
        let w_e = self.matrix("wte.weight", vocab, d)?;
        let w_pos = self.matrix("wpe.weight", n_ctx, d)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = |s: &str| format!("h.{i}.{s}");
            let qkv = self.matrix(&p("attn.c_attn.weight"), d, 3 * d)?;
            let qkv_b = self.vector(&p("attn.c_attn.bias"), 3 * d)?;
            layers.push(LayerWeights {
                ln1_g: self.vector(&p("ln_1.weight"), d)?,
                ln1_b: self.vector(&p("ln_1.bias"), d)?,
                w_q: qkv.column_slice(0, d),
                b_q: qkv_b[..d].to_vec(),
                w_k: qkv.column_slice(d, 2 * d),
                b_k: qkv_b[d..2 * d].to_vec(),
                w_v: qkv.column_slice(2 * d, 3 * d),
                b_v: qkv_b[2 * d..].to_vec(),
                w_o: self.matrix(&p("attn.c_proj.weight"), d, d)?,
                b_o: self.vector(&p("attn.c_proj.bias"), d)?,
                ln2_g: self.vector(&p("ln_2.weight"), d)?,
                ln2_b: self.vector(&p("ln_2.bias"), d)?,
                w_in: self.matrix(&p("mlp.c_fc.weight"), d, d_mlp)?,
                b_in: self.vector(&p("mlp.c_fc.bias"), d_mlp)?,
                w_out: self.matrix(&p("mlp.c_proj.weight"), d_mlp, d)?,
                b_out: self.vector(&p("mlp.c_proj.bias"), d)?,
            });
        }
        Ok(RawWeights {
            config,
            w_e,
            w_pos,
            layers,
            ln_f_g: self.vector("ln_f.weight", d)?,
            ln_f_b: self.vector("ln_f.bias", d)?,
            folded: self.folded_flag(),
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load and validate a GPT-2 checkpoint in safetensors layout.
///
/// The number of blocks comes from the `h.{i}.*` names and the head count
/// from an optional `n_head` metadata key (default `d_model / 64`).
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<RawWeights> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    TensorFile::parse(&bytes)?.raw_weights()
}

/// Owned tensor payload awaiting serialization.
struct OwnedTensor {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl OwnedTensor {
    fn f32(shape: Vec<usize>, values: &[f64]) -> Self {
        let bytes = values.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
        Self {
            dtype: Dtype::F32,
            shape,
            bytes,
        }
    }

    fn f64(shape: Vec<usize>, values: &[f64]) -> Self {
        let bytes = values.iter().flat_map(|&x| x.to_le_bytes()).collect();
        Self {
            dtype: Dtype::F64,
            shape,
            bytes,
        }
    }
}

fn write_tensors(
    path: &Path,
    tensors: &BTreeMap<String, OwnedTensor>,
    metadata: HashMap<String, String>,
) -> Result<()> {
    let views = tensors
        .iter()
        .map(|(name, t)| {
            TensorView::new(t.dtype, t.shape.clone(), &t.bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::CorruptCheckpoint(format!("cannot serialize `{name}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, &Some(metadata))
        .map_err(|e| Error::CorruptCheckpoint(format!("serialization failed: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn concat_columns(parts: &[&Matrix]) -> Matrix {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let mut off = 0;
        for m in parts {
            out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            off += m.cols();
        }
    }
    out
}

fn layer_tensors(
    out: &mut BTreeMap<String, OwnedTensor>,
    i: usize,
    l: &LayerWeights,
    enc: fn(Vec<usize>, &[f64]) -> OwnedTensor,
) {
    let d = l.w_o.rows();
    let qkv = concat_columns(&[&l.w_q, &l.w_k, &l.w_v]);
    let qkv_b: Vec<f64> = [&l.b_q[..], &l.b_k[..], &l.b_v[..]].concat();
    let mut put = |name: &str, shape: Vec<usize>, v: &[f64]| {
        out.insert(format!("h.{i}.{name}"), enc(shape, v));
    };
    put("ln_1.weight", vec![d], &l.ln1_g);
    put("ln_1.bias", vec![d], &l.ln1_b);
    put("attn.c_attn.weight", qkv.shape().to_vec(), qkv.data());
    put("attn.c_attn.bias", vec![3 * d], &qkv_b);
    put("attn.c_proj.weight", l.w_o.shape().to_vec(), l.w_o.data());
    put("attn.c_proj.bias", vec![d], &l.b_o);
    put("ln_2.weight", vec![d], &l.ln2_g);
    put("ln_2.bias", vec![d], &l.ln2_b);
    put("mlp.c_fc.weight", l.w_in.shape().to_vec(), l.w_in.data());
    put("mlp.c_fc.bias", vec![l.b_in.len()], &l.b_in);
    put("mlp.c_proj.weight", l.w_out.shape().to_vec(), l.w_out.data());
    put("mlp.c_proj.bias", vec![d], &l.b_out);
}

impl RawWeights {
    /// Serialize as 32-bit floats under the reference tensor names.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut t = BTreeMap::new();
        t.insert("wte.weight".into(), OwnedTensor::f32(self.w_e.shape().to_vec(), self.w_e.data()));
        t.insert("wpe.weight".into(), OwnedTensor::f32(self.w_pos.shape().to_vec(), self.w_pos.data()));
        for (i, l) in self.layers.iter().enumerate() {
            layer_tensors(&mut t, i, l, OwnedTensor::f32);
        }
        let d = self.config.d_model;
        t.insert("ln_f.weight".into(), OwnedTensor::f32(vec![d], &self.ln_f_g));
        t.insert("ln_f.bias".into(), OwnedTensor::f32(vec![d], &self.ln_f_b));
        let mut meta = HashMap::new();
        meta.insert(META_N_HEAD.to_string(), self.config.n_heads.to_string());
        meta.insert("format".to_string(), "pt".to_string());
        if self.folded {
            meta.insert(META_FOLDED.to_string(), "true".to_string());
        }
        write_tensors(path.as_ref(), &t, meta)
    }
}

pub(super) fn save_folded(model: &FoldedModel, path: &Path) -> Result<()> {
    let d = model.config.d_model;
    let ones = vec![1.0; d];
    let zeros = vec![0.0; d];
    let mut t = BTreeMap::new();
    t.insert("wte.weight".into(), OwnedTensor::f64(model.w_e.shape().to_vec(), model.w_e.data()));
    t.insert("wpe.weight".into(), OwnedTensor::f64(model.w_pos.shape().to_vec(), model.w_pos.data()));
    for (i, l) in model.layers.iter().enumerate() {
        let as_raw = LayerWeights {
            ln1_g: ones.clone(),
            ln1_b: zeros.clone(),
            w_q: l.w_q.clone(),
            b_q: l.b_q.clone(),
            w_k: l.w_k.clone(),
            b_k: l.b_k.clone(),
            w_v: l.w_v.clone(),
            b_v: zeros.clone(),
            w_o: l.w_o.clone(),
            b_o: l.b_o.clone(),
            ln2_g: ones.clone(),
            ln2_b: zeros.clone(),
            w_in: l.w_in.clone(),
            b_in: l.b_in.clone(),
            w_out: l.w_out.clone(),
            b_out: l.b_out.clone(),
        };
        layer_tensors(&mut t, i, &as_raw, OwnedTensor::f64);
    }
    t.insert("ln_f.weight".into(), OwnedTensor::f64(vec![d], &ones));
    t.insert("ln_f.bias".into(), OwnedTensor::f64(vec![d], &zeros));
    t.insert(
        "lm_head.weight".into(),
        OwnedTensor::f64(model.unembed.shape().to_vec(), model.unembed.data()),
    );
    t.insert(
        "lm_head.bias".into(),
        OwnedTensor::f64(vec![model.unembed_bias.len()], &model.unembed_bias),
    );
    let mut meta = HashMap::new();
    meta.insert(META_N_HEAD.to_string(), model.config.n_heads.to_string());
    meta.insert(META_FOLDED.to_string(), "true".to_string());
    write_tensors(path, &t, meta)
}

pub(super) fn load_folded(path: &Path) -> Result<FoldedModel> {
    let bytes = read_file(path)?;
    let file = TensorFile::parse(&bytes)?;
    if !file.folded_flag() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} is not a folded checkpoint",
            path.display()
        )));
    }
    let raw = file.raw_weights()?;
    let c = raw.config;
    let unembed = file.matrix("lm_head.weight", c.vocab, c.d_model)?;
    let unembed_bias = file.vector("lm_head.bias", c.vocab)?;
    let layers = raw
        .layers
        .into_iter()
        .map(|l| FoldedLayer {
            w_q: l.w_q,
            b_q: l.b_q,
            w_k: l.w_k,
            b_k: l.b_k,
            w_v: l.w_v,
            w_o: l.w_o,
            b_o: l.b_o,
            w_in: l.w_in,
            b_in: l.b_in,
            w_out: l.w_out,
            b_out: l.b_out,
        })
        .collect();
    Ok(FoldedModel {
        config: c,
        w_e: raw.w_e,
        w_pos: raw.w_pos,
        layers,
        unembed,
        unembed_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{fold_layernorm, synthetic_raw};

    fn mini() -> RawWeights {
        synthetic_raw(
            ModelConfig {
                n_layers: 2,
                n_heads: 2,
                d_model: 16,
                d_mlp: 64,
                n_ctx: 32,
                vocab: 50,
            },
            3,
        )
    }

    #[test]
    fn mini_checkpoint_round_trips_bitwise() {
        let raw = mini();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mini.safetensors");
        raw.save(&p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn missing_tensor_is_named() {
        let raw = synthetic_raw(
            ModelConfig {
                n_layers: 4,
                n_heads: 2,
                d_model: 16,
                d_mlp: 64,
                n_ctx: 8,
                vocab: 20,
            },
            1,
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("full.safetensors");
        raw.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let kept: Vec<(String, TensorView)> = st
            .tensors()
            .into_iter()
            .filter(|(n, _)| n != "h.3.mlp.c_proj.weight")
            .collect();
        let out = safetensors::serialize(kept, &Some(HashMap::from([("n_head".to_string(), "2".to_string())])))
            .unwrap();
        let q = dir.path().join("broken.safetensors");
        std::fs::write(&q, out).unwrap();
        match load_checkpoint(&q) {
            Err(Error::MissingTensor(name)) => assert_eq!(name, "h.3.mlp.c_proj.weight"),
            other => panic!("expected missing tensor, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut raw = mini();
        raw.layers[1].b_in[3] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.safetensors");
        raw.save(&p).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn shape_mismatch_lists_both_shapes() {
        let raw = mini();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mini.safetensors");
        raw.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let bad = vec![0u8; 4 * 17];
        let mut kept: Vec<(String, TensorView)> = st
            .tensors()
            .into_iter()
            .filter(|(n, _)| n != "h.1.ln_2.bias")
            .collect();
        kept.push(("h.1.ln_2.bias".into(), TensorView::new(Dtype::F32, vec![17], &bad).unwrap()));
        let out = safetensors::serialize(kept, &Some(HashMap::from([("n_head".to_string(), "2".to_string())])))
            .unwrap();
        std::fs::write(&p, out).unwrap();
        match load_checkpoint(&p) {
            Err(Error::ShapeMismatch { name, expected, found }) => {
                assert_eq!(name, "h.1.ln_2.bias");
                assert_eq!(expected, vec![16]);
                assert_eq!(found, vec![17]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn folded_file_round_trips_and_refuses_refolding() {
        let folded = fold_layernorm(&mini()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("folded.safetensors");
        folded.save(&p).unwrap();
        assert_eq!(FoldedModel::load(&p).unwrap(), folded);
        let as_raw = load_checkpoint(&p).unwrap();
        assert!(as_raw.folded);
        assert!(matches!(fold_layernorm(&as_raw), Err(Error::AlreadyFolded)));
    }
}
