//! Greedy bundled explanations of MLP input weights.
//!
//! A neuron's (centered) input weight vector is explained as a signed sum of
//! candidate atoms. Candidates come from an ANN shortlist and are scanned once
//! in order of descending `|cos(atom, weight)|`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ann::{AtomIndex, IndexParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::vsa::Sign;
use crate::weights::{AtomKind, AtomLabel, AtomTable, CandidateAtom, FoldedModel, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Single pass over the static ranking.
    #[default]
    Greedy,
    /// Repeatedly take the admissible candidate with the largest gain.
    MatchingPursuit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerConfig {
    pub min_atom_cos: f64,
    pub weak_atom_cos: f64,
    pub min_gain: f64,
    pub shortlist_k: usize,
    pub max_bundle: usize,
    pub atom_kinds: Vec<AtomKind>,
    pub signed: bool,
    #[serde(default)]
    pub strategy: Strategy,
    /// Sum unit-normalized atoms instead of raw ones.
    pub unit_atoms: bool,
    pub index: IndexParams,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self::for_kinds(&[AtomKind::Token, AtomKind::AttnOut, AtomKind::MlpOut])
    }
}

impl ExplainerConfig {
    /// Defaults for a given atom set. Signs are enabled whenever output
    /// atoms take part, so a neuron can be explained by an absent concept.
    pub fn for_kinds(kinds: &[AtomKind]) -> Self {
        let atom_kinds: Vec<AtomKind> = kinds.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let signed = atom_kinds.iter().any(|k| *k != AtomKind::Token);
        Self {
            min_atom_cos: 0.05,
            weak_atom_cos: 0.1,
            min_gain: 0.04,
            shortlist_k: 512,
            max_bundle: 64,
            atom_kinds,
            signed,
            strategy: Strategy::Greedy,
            unit_atoms: true,
            index: IndexParams::default(),
        }
    }

    pub fn token_only() -> Self {
        Self::for_kinds(&[AtomKind::Token])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.min_atom_cos > 0.0 && self.min_atom_cos <= self.weak_atom_cos && self.weak_atom_cos < 1.0) {
            return bad(format!(
                "need 0 < min_atom_cos ({}) <= weak_atom_cos ({}) < 1",
                self.min_atom_cos, self.weak_atom_cos
            ));
        }
        if !(self.min_gain > 0.0) {
            return bad(format!("min_gain must be positive, got {}", self.min_gain));
        }
        if self.shortlist_k == 0 || self.max_bundle == 0 {
            return bad("shortlist_k and max_bundle must be at least 1".into());
        }
        if self.atom_kinds.is_empty() {
            return bad("atom_kinds is empty".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}

/// An MLP neuron `(layer, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub label: AtomLabel,
    pub sign: Sign,
    /// Cosine between the atom and the neuron weight.
    pub cos: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    BelowMinCos,
    NoGain,
    WeakGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: AtomLabel,
    pub sign: Sign,
    pub atom_cos: f64,
    /// Bundle cosine with this atom tentatively added.
    pub bundle_cos: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exhausted,
    BelowMinCos,
    MaxBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub neuron: NeuronId,
    pub members: Vec<Member>,
    pub bundle_cos: f64,
    pub stop: StopReason,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
    pub config_hash: String,
}

/// The vector an atom contributes to a bundle.
fn contribution(atom: &CandidateAtom, unit_atoms: bool) -> Vec<f64> {
    if unit_atoms {
        atom.unit()
    } else {
        atom.vector.clone()
    }
}

/// Cosine between the signed sum of `members` and `weight`.
pub fn recompute_bundle_cos(members: &[Member], table: &AtomTable, weight: &[f64], unit_atoms: bool) -> Result<f64> {
    let mut b = vec![0.0; weight.len()];
    for m in members {
        let i = table
            .index_of(&m.label)
            .ok_or_else(|| Error::UnknownNode(m.label.to_string()))?;
        linalg::axpy(m.sign.value(), &contribution(table.get(i), unit_atoms), &mut b);
    }
    Ok(linalg::cosine(&b, weight))
}

/// Running bundle with cached `<b, w>` and `|b|²`.
struct Running {
    b: Vec<f64>,
    bw: f64,
    bb: f64,
}

impl Running {
    fn cos(&self) -> f64 {
        if self.bb <= 0.0 {
            0.0
        } else {
            self.bw / self.bb.sqrt()
        }
    }

    /// Cosine after adding `s·u`, where `uw = <u, w_unit>`.
    fn tentative(&self, s: f64, u: &[f64], uw: f64) -> f64 {
        let bw = self.bw + s * uw;
        let bb = self.bb + 2.0 * s * linalg::dot(&self.b, u) + linalg::dot(u, u);
        if bb <= 0.0 {
            0.0
        } else {
            bw / bb.sqrt()
        }
    }

    fn add(&mut self, s: f64, u: &[f64], uw: f64) {
        self.bb += 2.0 * s * linalg::dot(&self.b, u) + linalg::dot(u, u);
        self.bw += s * uw;
        linalg::axpy(s, u, &mut self.b);
    }
}

/// Per-candidate quantities shared by both strategies.
struct Prepared<'a> {
    atom: &'a CandidateAtom,
    u: Vec<f64>,
    /// `<u, w_unit>`
    uw: f64,
    atom_cos: f64,
    sign: Sign,
}

fn prepare<'a>(atom: &'a CandidateAtom, w_unit: &[f64], config: &ExplainerConfig) -> Prepared<'a> {
    let atom_cos = linalg::dot(&linalg::normalized(&atom.vector), w_unit);
    let u = contribution(atom, config.unit_atoms);
    let uw = linalg::dot(&u, w_unit);
    let sign = if config.signed { Sign::of(atom_cos) } else { Sign::Plus };
    Prepared {
        atom,
        u,
        uw,
        atom_cos,
        sign,
    }
}

fn judge(p: &Prepared<'_>, before: f64, after: f64, config: &ExplainerConfig) -> Verdict {
    let strength = p.atom_cos.abs();
    if strength < config.min_atom_cos {
        Verdict::BelowMinCos
    } else if after <= before {
        Verdict::NoGain
    } else if strength < config.weak_atom_cos && after - before <= config.min_gain {
        Verdict::WeakGain
    } else {
        Verdict::Accepted
    }
}

/// Explain `weight` (centered like the atoms) from `candidates`, which must be
/// ranked by descending `|cos(atom, weight)|`.
pub fn greedy_bundle(
    neuron: NeuronId,
    weight: &[f64],
    candidates: &[&CandidateAtom],
    config: &ExplainerConfig,
) -> Result<Explanation> {
    config.validate()?;
    if linalg::norm(weight) == 0.0 || !weight.iter().all(|x| x.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "neuron {}.{} has a zero or non-finite weight vector",
            neuron.layer, neuron.index
        )));
    }
    if let Some(a) = candidates.iter().find(|a| a.vector.len() != weight.len()) {
        return Err(Error::DimensionMismatch {
            expected: weight.len(),
            got: a.vector.len(),
        });
    }
    let w_unit = linalg::normalized(weight);
    let mut run = Running {
        b: vec![0.0; weight.len()],
        bw: 0.0,
        bb: 0.0,
    };
    let mut members = Vec::new();
    let mut trace = Vec::new();
    let stop = match config.strategy {
        Strategy::Greedy => scan(&w_unit, candidates, config, &mut run, &mut members, &mut trace),
        Strategy::MatchingPursuit => pursue(&w_unit, candidates, config, &mut run, &mut members, &mut trace),
    };
    Ok(Explanation {
        neuron,
        members,
        bundle_cos: linalg::cosine(&run.b, weight),
        stop,
        trace,
        config_hash: config.hash(),
    })
}

fn accept(p: &Prepared<'_>, run: &mut Running, members: &mut Vec<Member>) {
    run.add(p.sign.value(), &p.u, p.uw);
    members.push(Member {
        label: p.atom.label,
        sign: p.sign,
        cos: p.atom_cos,
        text: None,
    });
}

fn scan(
    w_unit: &[f64],
    candidates: &[&CandidateAtom],
    config: &ExplainerConfig,
    run: &mut Running,
    members: &mut Vec<Member>,
    trace: &mut Vec<TraceStep>,
) -> StopReason {
    for atom in candidates {
        if members.len() >= config.max_bundle {
            return StopReason::MaxBundle;
        }
        let p = prepare(atom, w_unit, config);
        let before = run.cos();
        let after = run.tentative(p.sign.value(), &p.u, p.uw);
        let verdict = judge(&p, before, after, config);
        trace.push(TraceStep {
            label: atom.label,
            sign: p.sign,
            atom_cos: p.atom_cos,
            bundle_cos: after,
            verdict,
        });
        match verdict {
            Verdict::Accepted => accept(&p, run, members),
            // the ranking is by |cos|, so nothing later can pass
            Verdict::BelowMinCos => return StopReason::BelowMinCos,
            Verdict::NoGain | Verdict::WeakGain => {}
        }
    }
    if members.len() >= config.max_bundle {
        StopReason::MaxBundle
    } else {
        StopReason::Exhausted
    }
}

fn pursue(
    w_unit: &[f64],
    candidates: &[&CandidateAtom],
    config: &ExplainerConfig,
    run: &mut Running,
    members: &mut Vec<Member>,
    trace: &mut Vec<TraceStep>,
) -> StopReason {
    let mut pool: Vec<Prepared<'_>> = candidates
        .iter()
        .map(|a| prepare(a, w_unit, config))
        .filter(|p| p.atom_cos.abs() >= config.min_atom_cos)
        .collect();
    loop {
        if members.len() >= config.max_bundle {
            return StopReason::MaxBundle;
        }
        let before = run.cos();
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pool.iter().enumerate() {
            let after = run.tentative(p.sign.value(), &p.u, p.uw);
            if judge(p, before, after, config) == Verdict::Accepted && best.is_none_or(|(_, b)| after > b) {
                best = Some((i, after));
            }
        }
        let Some((i, after)) = best else {
            return StopReason::Exhausted;
        };
        let p = pool.remove(i);
        trace.push(TraceStep {
            label: p.atom.label,
            sign: p.sign,
            atom_cos: p.atom_cos,
            bundle_cos: after,
            verdict: Verdict::Accepted,
        });
        accept(&p, run, members);
    }
}

/// Whether an atom may explain a neuron in `layer`: token embeddings always,
/// attention outputs from the same or earlier layers, MLP outputs from
/// strictly earlier layers.
pub fn admissible(label: &AtomLabel, layer: usize) -> bool {
    match *label {
        AtomLabel::Token { .. } => true,
        AtomLabel::AttnOut { layer: l, .. } => usize::from(l) <= layer,
        AtomLabel::MlpOut { layer: l, .. } => usize::from(l) < layer,
    }
}

/// Indices into `table` of the atoms usable for neurons in `layer`.
pub fn admissible_atoms(table: &AtomTable, layer: usize, config: &ExplainerConfig) -> Vec<usize> {
    table
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| config.atom_kinds.contains(&a.kind()) && admissible(&a.label, layer))
        .map(|(i, _)| i)
        .collect()
}

/// A shortlisted atom for one neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Index into the atom table.
    pub atom: usize,
    pub cos: f64,
}

const QUERY_CHUNK: usize = 2048;

/// Query every atom in `atoms` against an index of neuron weights (labels are
/// neuron indices) and invert the hits into per-neuron candidate lists ranked
/// by descending `|cos|`, ties by table order. In signed mode the negated atom
/// is queried too. Hits below `min_atom_cos` are dropped, since the scan
/// would stop on them anyway.
pub fn candidate_shortlist(
    neurons: &AtomIndex<u32>,
    table: &AtomTable,
    atoms: &[usize],
    config: &ExplainerConfig,
) -> Result<Vec<Vec<Candidate>>> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument("no candidate atoms".into()));
    }
    let k = config.shortlist_k.min(neurons.len());
    let beam = neurons.params().query_beam.max(k);
    let mut lists: Vec<Vec<Candidate>> = vec![Vec::new(); neurons.len()];
    for chunk in atoms.chunks(QUERY_CHUNK) {
        let hits: Vec<Vec<(u32, f64)>> = chunk
            .par_iter()
            .map(|&ai| {
                let v = &table.get(ai).vector;
                let mut out = Vec::new();
                let mut push = |q: &[f64]| -> Result<()> {
                    for h in neurons.top_k_with_beam(q, k, beam)? {
                        if h.cosine.abs() >= config.min_atom_cos {
                            out.push((h.label, h.cosine));
                        }
                    }
                    Ok(())
                };
                push(v)?;
                if config.signed {
                    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                    push(&neg)?;
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (&ai, per_atom) in chunk.iter().zip(hits) {
            for (n, cos) in per_atom {
                lists[n as usize].push(Candidate { atom: ai, cos: cos.abs() });
            }
        }
    }
    for list in &mut lists {
        list.sort_by(|a, b| b.cos.total_cmp(&a.cos).then(a.atom.cmp(&b.atom)));
        // a neuron can be reached by both the atom and its negation only if
        // the cosine is zero; keep one entry per atom
        list.dedup_by_key(|c| c.atom);
    }
    Ok(lists)
}

/// Centered input weight of every neuron in `layer`.
pub fn neuron_weights(model: &FoldedModel, layer: usize) -> Result<Vec<Vec<f64>>> {
    let lw = model.layers.get(layer).ok_or_else(|| {
        Error::InvalidArgument(format!("layer {layer} out of range 0..{}", model.config.n_layers))
    })?;
    Ok(lw.neuron_inputs().iter_rows().map(linalg::centered).collect())
}

fn neuron_index(weights: &[Vec<f64>], params: IndexParams) -> Result<AtomIndex<u32>> {
    let items = weights.iter().enumerate().map(|(i, w)| (i as u32, w.clone())).collect();
    AtomIndex::build(items, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub layer: usize,
    pub n_neurons: usize,
    #[serde(rename = "fraction_ge_0.3")]
    pub fraction_ge_0_3: f64,
    #[serde(rename = "fraction_ge_0.5")]
    pub fraction_ge_0_5: f64,
    pub mean_bundle_cos: f64,
    /// `size_histogram[s]` = neurons whose bundle has `s` members.
    pub size_histogram: Vec<usize>,
}

impl CoverageStats {
    pub fn from_explanations(layer: usize, explanations: &[Explanation], max_bundle: usize) -> Self {
        let n = explanations.len().max(1) as f64;
        let mut hist = vec![0; max_bundle + 1];
        for e in explanations {
            hist[e.members.len().min(max_bundle)] += 1;
        }
        let frac = |t: f64| explanations.iter().filter(|e| e.bundle_cos >= t).count() as f64 / n;
        Self {
            layer,
            n_neurons: explanations.len(),
            fraction_ge_0_3: frac(0.3),
            fraction_ge_0_5: frac(0.5),
            mean_bundle_cos: explanations.iter().map(|e| e.bundle_cos).sum::<f64>() / n,
            size_histogram: hist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExplanation {
    pub layer: usize,
    pub config_hash: String,
    pub explanations: Vec<Explanation>,
    pub coverage: CoverageStats,
}

/// On-disk container for explanations produced under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub schema_version: u32,
    pub n_layers: usize,
    pub config_hash: String,
    pub config: ExplainerConfig,
    pub explanations: Vec<Explanation>,
}

impl ExplanationSet {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(n_layers: usize, config: &ExplainerConfig, explanations: Vec<Explanation>) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            n_layers,
            config_hash: config.hash(),
            config: config.clone(),
            explanations,
        }
    }
}

fn shortlist_for_layer(
    model: &FoldedModel,
    table: &AtomTable,
    layer: usize,
    config: &ExplainerConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Candidate>>)> {
    config.validate()?;
    let weights = neuron_weights(model, layer)?;
    let atoms = admissible_atoms(table, layer, config);
    let index = neuron_index(&weights, config.index)?;
    let lists = candidate_shortlist(&index, table, &atoms, config)?;
    Ok((weights, lists))
}

fn explain_one(
    table: &AtomTable,
    neuron: NeuronId,
    weight: &[f64],
    list: &[Candidate],
    config: &ExplainerConfig,
) -> Result<Explanation> {
    let cands: Vec<&CandidateAtom> = list.iter().map(|c| table.get(c.atom)).collect();
    greedy_bundle(neuron, weight, &cands, config)
}

/// Explain every neuron of `layer`. Results are in neuron order whatever the
/// thread schedule. Traces are dropped unless `keep_traces`.
pub fn explain_layer(
    model: &FoldedModel,
    table: &AtomTable,
    layer: usize,
    config: &ExplainerConfig,
    keep_traces: bool,
) -> Result<LayerExplanation> {
    let (weights, lists) = shortlist_for_layer(model, table, layer, config)?;
    let explanations: Vec<Explanation> = weights
        .par_iter()
        .zip(lists.par_iter())
        .enumerate()
        .map(|(n, (w, list))| {
            let mut e = explain_one(table, NeuronId { layer, index: n }, w, list, config)?;
            if !keep_traces {
                e.trace = Vec::new();
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let coverage = CoverageStats::from_explanations(layer, &explanations, config.max_bundle);
    Ok(LayerExplanation {
        layer,
        config_hash: config.hash(),
        explanations,
        coverage,
    })
}

/// Explain one neuron, with token members decoded through `vocab`.
pub fn explain_single(
    model: &FoldedModel,
    table: &AtomTable,
    vocab: Option<&Vocab>,
    neuron: NeuronId,
    config: &ExplainerConfig,
) -> Result<Explanation> {
    if neuron.index >= model.config.d_mlp {
        return Err(Error::InvalidArgument(format!(
            "neuron {} out of range 0..{}",
            neuron.index, model.config.d_mlp
        )));
    }
    let (weights, lists) = shortlist_for_layer(model, table, neuron.layer, config)?;
    let mut e = explain_one(table, neuron, &weights[neuron.index], &lists[neuron.index], config)?;
    if let Some(vocab) = vocab {
        for m in &mut e.members {
            if let AtomLabel::Token { id } = m.label {
                m.text = Some(vocab.decode(id)?.to_string());
            }
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsa::sample_concept_vectors;

    fn pool(n: usize, dim: usize, seed: u64) -> Vec<CandidateAtom> {
        sample_concept_vectors(n, dim, seed)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, v)| CandidateAtom::new(AtomLabel::Token { id: i as u32 }, v.as_slice()))
            .collect()
    }

    fn ranked<'a>(atoms: &'a [CandidateAtom], w: &[f64]) -> Vec<&'a CandidateAtom> {
        let mut r: Vec<&CandidateAtom> = atoms.iter().collect();
        r.sort_by(|a, b| {
            linalg::cosine(&b.vector, w)
                .abs()
                .total_cmp(&linalg::cosine(&a.vector, w).abs())
                .then(a.label.cmp(&b.label))
        });
        r
    }

    const N: NeuronId = NeuronId { layer: 0, index: 0 };

    #[test]
    fn single_token_weight() {
        let atoms = pool(50, 64, 1);
        let w = atoms[7].vector.clone();
        let e = greedy_bundle(N, &w, &ranked(&atoms, &w), &ExplainerConfig::token_only()).unwrap();
        assert_eq!(e.members.len(), 1);
        assert_eq!(e.members[0].label, AtomLabel::Token { id: 7 });
        assert!((e.bundle_cos - 1.0).abs() < 1e-6);
    }

    #[test]
    fn planted_five_recovered() {
        let atoms = pool(1000, 768, 2);
        let planted = [3usize, 141, 592, 653, 998];
        let mut w = vec![0.0; 768];
        for &i in &planted {
            linalg::axpy(1.0, &atoms[i].unit(), &mut w);
        }
        let e = greedy_bundle(N, &w, &ranked(&atoms, &w), &ExplainerConfig::token_only()).unwrap();
        let mut got: Vec<u32> = e
            .members
            .iter()
            .map(|m| match m.label {
                AtomLabel::Token { id } => id,
                _ => unreachable!(),
            })
            .collect();
        got.sort();
        assert_eq!(got, planted.map(|i| i as u32));
        assert!(e.bundle_cos > 0.99);
    }

    #[test]
    fn signed_mode_picks_negative_atoms() {
        let atoms = pool(200, 128, 3);
        let mut w = vec![0.0; 128];
        linalg::axpy(-1.0, &atoms[10].unit(), &mut w);
        linalg::axpy(-1.0, &atoms[20].unit(), &mut w);
        let cfg = ExplainerConfig {
            signed: true,
            ..ExplainerConfig::token_only()
        };
        let e = greedy_bundle(N, &w, &ranked(&atoms, &w), &cfg).unwrap();
        assert_eq!(e.members.len(), 2);
        assert!(e.members.iter().all(|m| m.sign == Sign::Minus));
        let unsigned = greedy_bundle(N, &w, &ranked(&atoms, &w), &ExplainerConfig::token_only()).unwrap();
        assert!(unsigned.members.iter().all(|m| m.cos > 0.0));
    }

    #[test]
    fn zero_weight_is_degenerate() {
        let atoms = pool(5, 8, 4);
        let r = greedy_bundle(N, &[0.0; 8], &ranked(&atoms, &[1.0; 8]), &ExplainerConfig::default());
        assert!(matches!(r, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = ExplainerConfig::default();
        assert!(c.validate().is_ok());
        c.weak_atom_cos = 0.01;
        assert!(c.validate().is_err());
        let c = ExplainerConfig {
            min_gain: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert_ne!(ExplainerConfig::token_only().hash(), ExplainerConfig::default().hash());
        assert!(!ExplainerConfig::token_only().signed);
        assert!(ExplainerConfig::default().signed);
    }

    #[test]
    fn layer_causality() {
        let mlp0 = AtomLabel::MlpOut { layer: 0, neuron: 1 };
        let attn0 = AtomLabel::AttnOut { layer: 0, head: 0, dim: 0 };
        assert!(!admissible(&mlp0, 0));
        assert!(admissible(&mlp0, 1));
        assert!(admissible(&attn0, 0));
        assert!(!admissible(&AtomLabel::AttnOut { layer: 2, head: 0, dim: 0 }, 1));
    }

    #[test]
    fn shortlist_single_atom() {
        let weights = vec![vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 1.0, -1.0, 0.0], vec![1.0, 1.0, -1.0, -1.0]];
        let index = neuron_index(&weights, IndexParams::default()).unwrap();
        let table = AtomTable::from_atoms(vec![CandidateAtom::new(AtomLabel::Token { id: 0 }, &weights[1])]).unwrap();
        let lists = candidate_shortlist(&index, &table, &[0], &ExplainerConfig::token_only()).unwrap();
        assert_eq!(lists[1].len(), 1);
        assert!((lists[1][0].cos - 1.0).abs() < 1e-12);
        assert!(lists[0].is_empty());
        assert!(candidate_shortlist(&index, &table, &[], &ExplainerConfig::token_only()).is_err());
    }

    #[test]
    fn matching_pursuit_also_recovers_plant() {
        let atoms = pool(300, 256, 5);
        let mut w = vec![0.0; 256];
        for i in [1, 2, 3] {
            linalg::axpy(1.0, &atoms[i].unit(), &mut w);
        }
        let cfg = ExplainerConfig {
            strategy: Strategy::MatchingPursuit,
            ..ExplainerConfig::token_only()
        };
        let e = greedy_bundle(N, &w, &ranked(&atoms, &w), &cfg).unwrap();
        assert_eq!(e.members.len(), 3);
        assert!(e.bundle_cos > 0.999);
    }
}
