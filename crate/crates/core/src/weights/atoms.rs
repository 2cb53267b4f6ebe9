use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::FoldedModel;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    Token,
    AttnOut,
    MlpOut,
}

impl AtomKind {
    pub fn name(self) -> &'static str {
        match self {
            AtomKind::Token => "token",
            AtomKind::AttnOut => "attn",
            AtomKind::MlpOut => "mlp",
        }
    }
}

impl FromStr for AtomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "token" | "tok" => Ok(AtomKind::Token),
            "attn" | "attn_out" => Ok(AtomKind::AttnOut),
            "mlp" | "mlp_out" => Ok(AtomKind::MlpOut),
            other => Err(Error::InvalidArgument(format!("unknown atom kind `{other}`"))),
        }
    }
}

/// Provenance of an atom. Ordering is `(kind, label)`, used for tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomLabel {
    Token { id: u32 },
    AttnOut { layer: u16, head: u16, dim: u16 },
    MlpOut { layer: u16, neuron: u16 },
}

impl AtomLabel {
    pub fn kind(&self) -> AtomKind {
        match self {
            AtomLabel::Token { .. } => AtomKind::Token,
            AtomLabel::AttnOut { .. } => AtomKind::AttnOut,
            AtomLabel::MlpOut { .. } => AtomKind::MlpOut,
        }
    }

    /// Producing layer; −1 for token embeddings.
    pub fn source_layer(&self) -> i32 {
        match *self {
            AtomLabel::Token { .. } => -1,
            AtomLabel::AttnOut { layer, .. } | AtomLabel::MlpOut { layer, .. } => i32::from(layer),
        }
    }
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomLabel::Token { id } => write!(f, "tok:{id}"),
            AtomLabel::AttnOut { layer, head, dim } => write!(f, "attn:{layer}.{head}.{dim}"),
            AtomLabel::MlpOut { layer, neuron } => write!(f, "mlp:{layer}.{neuron}"),
        }
    }
}

impl FromStr for AtomLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed atom label `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums = rest
            .split('.')
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let small = |x: u32| u16::try_from(x).map_err(|_| bad());
        match (kind, nums.as_slice()) {
            ("tok", [id]) => Ok(AtomLabel::Token { id: *id }),
            ("attn", [l, h, d]) => Ok(AtomLabel::AttnOut {
                layer: small(*l)?,
                head: small(*h)?,
                dim: small(*d)?,
            }),
            ("mlp", [l, n]) => Ok(AtomLabel::MlpOut {
                layer: small(*l)?,
                neuron: small(*n)?,
            }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for AtomLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AtomLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A centered candidate direction with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAtom {
    pub label: AtomLabel,
    /// Coordinate-mean-free copy of the source row.
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl CandidateAtom {
    pub fn new(label: AtomLabel, source_row: &[f64]) -> Self {
        let vector = linalg::centered(source_row);
        let norm = linalg::norm(&vector);
        Self { label, vector, norm }
    }

    pub fn kind(&self) -> AtomKind {
        self.label.kind()
    }

    pub fn source_layer(&self) -> i32 {
        self.label.source_layer()
    }

    /// Unit-norm copy (zero stays zero).
    pub fn unit(&self) -> Vec<f64> {
        if self.norm == 0.0 {
            return self.vector.clone();
        }
        self.vector.iter().map(|x| x / self.norm).collect()
    }
}

/// All candidate atoms of a model, ordered by `(kind, label)`.
#[derive(Debug, Clone, Default)]
pub struct AtomTable {
    atoms: Vec<CandidateAtom>,
    by_label: HashMap<AtomLabel, usize>,
}

impl AtomTable {
    /// Build from arbitrary atoms; they are sorted by label.
    pub fn from_atoms(mut atoms: Vec<CandidateAtom>) -> Result<Self> {
        atoms.sort_by(|a, b| a.label.cmp(&b.label));
        let mut by_label = HashMap::with_capacity(atoms.len());
        for (i, a) in atoms.iter().enumerate() {
            if by_label.insert(a.label, i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate atom label {}", a.label)));
            }
        }
        if let Some(first) = atoms.first() {
            let dim = first.vector.len();
            if let Some(bad) = atoms.iter().find(|a| a.vector.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bad.vector.len(),
                });
            }
        }
        Ok(Self { atoms, by_label })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.vector.len())
    }

    pub fn atoms(&self) -> &[CandidateAtom] {
        &self.atoms
    }

    pub fn get(&self, i: usize) -> &CandidateAtom {
        &self.atoms[i]
    }

    pub fn index_of(&self, label: &AtomLabel) -> Option<usize> {
        self.by_label.get(label).copied()
    }

    pub fn count(&self, kind: AtomKind) -> usize {
        self.atoms.iter().filter(|a| a.kind() == kind).count()
    }

    /// SHA-256 over labels and vector bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.atoms {
            h.update(a.label.to_string().as_bytes());
            for x in &a.vector {
                h.update(x.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

/// One TOKEN atom per vocabulary row of `W_E`, one ATTN_OUT atom per
/// `(layer, head, dim)` row of `W_O`, one MLP_OUT atom per `(layer, neuron)`
/// row of `W_out`; all centered.
pub fn atom_table(model: &FoldedModel) -> AtomTable {
    let c = model.config;
    let d_head = c.d_head();
    let mut atoms = Vec::with_capacity(c.vocab + c.n_layers * (c.d_model + c.d_mlp));
    for v in 0..c.vocab {
        atoms.push(CandidateAtom::new(AtomLabel::Token { id: v as u32 }, model.w_e.row(v)));
    }
    for (l, layer) in model.layers.iter().enumerate() {
        for h in 0..c.n_heads {
            for k in 0..d_head {
                let label = AtomLabel::AttnOut {
                    layer: l as u16,
                    head: h as u16,
                    dim: k as u16,
                };
                atoms.push(CandidateAtom::new(label, layer.w_o.row(h * d_head + k)));
            }
        }
    }
    for (l, layer) in model.layers.iter().enumerate() {
        for n in 0..c.d_mlp {
            let label = AtomLabel::MlpOut {
                layer: l as u16,
                neuron: n as u16,
            };
            atoms.push(CandidateAtom::new(label, layer.w_out.row(n)));
        }
    }
    AtomTable::from_atoms(atoms).expect("labels generated unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{fold_layernorm, synthetic_raw, ModelConfig};

    #[test]
    fn labels_parse_back() {
        for l in [
            AtomLabel::Token { id: 531 },
            AtomLabel::AttnOut { layer: 1, head: 4, dim: 11 },
            AtomLabel::MlpOut { layer: 0, neuron: 2977 },
        ] {
            assert_eq!(l.to_string().parse::<AtomLabel>().unwrap(), l);
        }
        assert!("mlp:1".parse::<AtomLabel>().is_err());
    }

    #[test]
    fn kind_ordering_matches_block_order() {
        assert!(AtomKind::Token < AtomKind::AttnOut);
        assert!(AtomLabel::Token { id: 9999 } < AtomLabel::AttnOut { layer: 0, head: 0, dim: 0 });
    }

    #[test]
    fn mini_model_atom_counts_and_centering() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_mlp: 64,
            n_ctx: 8,
            vocab: 30,
        };
        let model = fold_layernorm(&synthetic_raw(cfg, 4)).unwrap();
        let table = atom_table(&model);
        assert_eq!(table.count(AtomKind::Token), 30);
        assert_eq!(table.count(AtomKind::AttnOut), 2 * 16);
        assert_eq!(table.count(AtomKind::MlpOut), 2 * 64);
        for a in table.atoms() {
            assert!(linalg::mean(&a.vector).abs() < 1e-6);
        }
        assert_eq!(table.content_hash(), atom_table(&model).content_hash());
    }
}
