//! Checkpoint-free oracle suite. Every check builds its own synthetic data
//! from a fixed seed, so the JSON report is byte-for-byte reproducible.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{brute_force_top_k, AtomIndex, IndexParams};
use crate::error::Result;
use crate::explain::{greedy_bundle, ExplainerConfig, NeuronId};
use crate::forward::{forward, max_relative_gap, reference_logits, AblationSpec, ForwardOptions, Logits};
use crate::linalg;
use crate::vsa::{
    bind, boolean_neuron_eval, or_set_superposition_demo, presence_input, random_binding_matrix,
    sample_concept_vectors, unbind, BooleanNeuron,
};
use crate::weights::{fold_layernorm, synthetic_raw, AtomLabel, CandidateAtom, FoldedModel, ModelConfig, RawWeights};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelftestOptions {
    pub seed: u64,
    pub ann_atoms: usize,
    pub ann_dim: usize,
    pub ann_queries: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            ann_atoms: 100_000,
            ann_dim: 32,
            ann_queries: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    /// Pass condition in words, e.g. `>= 0.95`.
    pub requirement: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub schema_version: u32,
    pub options: SelftestOptions,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SelftestReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, passed: bool, value: f64, requirement: &str, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        value,
        requirement: requirement.to_string(),
        detail,
    }
}

pub fn run(opts: &SelftestOptions) -> Result<SelftestReport> {
    let checks = vec![
        planted_recovery(opts.seed)?,
        binding_preservation(opts.seed)?,
        gate_truth_tables(opts.seed)?,
        superposition_demo(opts.seed)?,
        ann_recall(opts)?,
        fold_equivalence(opts.seed)?,
        causality(opts.seed)?,
        ablation_locality(opts.seed)?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(SelftestReport {
        schema_version: SCHEMA_VERSION,
        options: *opts,
        checks,
        passed,
    })
}

/// Weights built as sums of k ≤ 10 pool atoms must be explained by exactly
/// those atoms.
fn planted_recovery(seed: u64) -> Result<Check> {
    const TRIALS: u64 = 100;
    const POOL: usize = 1000;
    const DIM: usize = 768;
    let config = ExplainerConfig::token_only();
    let mut exact = 0;
    let mut failures = Vec::new();
    for t in 0..TRIALS {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(t);
        let atoms: Vec<CandidateAtom> = sample_concept_vectors(POOL, DIM, s)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| CandidateAtom::new(AtomLabel::Token { id: i as u32 }, v.as_slice()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x9e37_79b9);
        let k = 1 + (t as usize % 10);
        let mut planted: Vec<usize> = sample(&mut rng, POOL, k).into_vec();
        planted.sort_unstable();
        let mut w = vec![0.0; DIM];
        for &i in &planted {
            linalg::axpy(1.0, &atoms[i].unit(), &mut w);
        }
        let hits = brute_force_top_k(atoms.iter().map(|a| (&a.label, a.vector.as_slice())), &w, POOL);
        // brute force ranks by signed cosine; the scan wants |cos|
        let mut ranked: Vec<(f64, usize)> = hits
            .iter()
            .map(|h| match h.label {
                AtomLabel::Token { id } => (h.cosine.abs(), id as usize),
                _ => unreachable!(),
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let cands: Vec<&CandidateAtom> = ranked.iter().map(|&(_, i)| &atoms[i]).collect();
        let e = greedy_bundle(NeuronId { layer: 0, index: t as usize }, &w, &cands, &config)?;
        let mut got: Vec<usize> = e
            .members
            .iter()
            .map(|m| match m.label {
                AtomLabel::Token { id } => id as usize,
                _ => unreachable!(),
            })
            .collect();
        got.sort_unstable();
        if got == planted && e.bundle_cos > 0.99 {
            exact += 1;
        } else {
            failures.push(t);
        }
    }
    Ok(check(
        "planted_recovery",
        exact >= 99,
        exact as f64,
        ">= 99 of 100",
        format!("pool {POOL}, dim {DIM}, k = 1..=10; failed trials {failures:?}"),
    ))
}

/// Binding by a near-orthonormal matrix keeps pairwise cosines and is undone
/// by the transpose.
fn binding_preservation(seed: u64) -> Result<Check> {
    const DIM: usize = 768;
    const PAIRS: usize = 100;
    let m = random_binding_matrix(DIM, seed.wrapping_add(1))?;
    let v = sample_concept_vectors(2 * PAIRS, DIM, seed.wrapping_add(2))?;
    let mut worst: f64 = 0.0;
    let mut min_unbind: f64 = 1.0;
    for p in 0..PAIRS {
        let (x, y) = (&v[2 * p], &v[2 * p + 1]);
        let (bx, by) = (bind(&m, x)?, bind(&m, y)?);
        worst = worst.max((bx.cosine(&by)? - x.cosine(y)?).abs());
        min_unbind = min_unbind.min(unbind(&m, &bx)?.cosine(x)?);
    }
    Ok(check(
        "binding_preservation",
        worst <= 0.05 && min_unbind >= 0.9,
        worst,
        "max |Δcos| <= 0.05 and unbind cos >= 0.9",
        format!("{PAIRS} pairs at dim {DIM}; min unbind cosine {min_unbind:.4}"),
    ))
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << n)).map(move |mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
}

/// AND, OR and negation-augmented AND neurons against their truth tables for
/// every member subset and every presence pattern, up to 4 concepts.
fn gate_truth_tables(seed: u64) -> Result<Check> {
    let mut cases = 0usize;
    let mut wrong = 0usize;
    for n in 1..=4usize {
        let concepts = sample_concept_vectors(n, 768, seed.wrapping_add(10 + n as u64))?;
        let mut neurons = Vec::new();
        for members in subsets(n) {
            neurons.push(BooleanNeuron::and_gate(&concepts, &members)?);
            neurons.push(BooleanNeuron::or_gate(&concepts, &members)?);
            let rest: Vec<usize> = (0..n).filter(|i| !members.contains(i)).collect();
            for negated in std::iter::once(Vec::new()).chain(subsets(rest.len())) {
                let negated: Vec<usize> = negated.iter().map(|&j| rest[j]).collect();
                if !negated.is_empty() {
                    neurons.push(BooleanNeuron::not_augmented(&concepts, &members, &negated)?);
                }
            }
        }
        for neuron in &neurons {
            for mask in 0u32..(1 << n) {
                let present: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
                let x = presence_input(&concepts, &present);
                let fired = boolean_neuron_eval(neuron, &x)? > 0.0;
                cases += 1;
                if fired != neuron.expected(&present) {
                    wrong += 1;
                }
            }
        }
    }
    Ok(check(
        "gate_truth_tables",
        wrong == 0,
        wrong as f64,
        "== 0 mismatches",
        format!("{cases} gate/input cases over 1..=4 concepts"),
    ))
}

/// 3×3 grid of concepts with one OR-neuron per row and per column; every
/// single concept (and the empty input) must be recovered exactly.
fn superposition_demo(seed: u64) -> Result<Check> {
    let concepts = sample_concept_vectors(9, 768, seed.wrapping_add(20))?;
    let mut sets: Vec<Vec<usize>> = (0..3).map(|r| (0..3).map(|c| 3 * r + c).collect()).collect();
    sets.extend((0..3).map(|c| (0..3).map(|r| 3 * r + c).collect()));
    let mut inputs = vec![vec![false; 9]];
    for c in 0..9 {
        let mut row = vec![false; 9];
        row[c] = true;
        inputs.push(row);
    }
    let table = or_set_superposition_demo(&concepts, &sets, &inputs, seed.wrapping_add(21))?;
    let exact = table.rows.iter().filter(|r| r.exact).count();
    Ok(check(
        "or_superposition_demo",
        table.all_exact(),
        exact as f64,
        "all inputs exact",
        format!("{exact}/{} inputs exact over 6 OR-neurons", table.rows.len()),
    ))
}

fn ann_recall(opts: &SelftestOptions) -> Result<Check> {
    let atoms: Vec<(u32, Vec<f64>)> = sample_concept_vectors(opts.ann_atoms, opts.ann_dim, opts.seed.wrapping_add(30))?
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i as u32, v.into_inner()))
        .collect();
    let index = AtomIndex::build(atoms.clone(), IndexParams::default())?;
    let queries = sample_concept_vectors(opts.ann_queries, opts.ann_dim, opts.seed.wrapping_add(31))?;
    let mut hits = 0usize;
    for q in &queries {
        let truth: Vec<u32> = brute_force_top_k(atoms.iter().map(|(l, v)| (l, v.as_slice())), q.as_slice(), 10)
            .into_iter()
            .map(|h| h.label)
            .collect();
        let found = index.top_k(q.as_slice(), 10)?;
        hits += found.iter().filter(|h| truth.contains(&h.label)).count();
    }
    let recall = hits as f64 / (10 * queries.len()) as f64;
    Ok(check(
        "ann_recall_at_10",
        recall >= 0.95,
        recall,
        ">= 0.95",
        format!(
            "{} random unit atoms at dim {}, {} queries, default parameters",
            opts.ann_atoms, opts.ann_dim, opts.ann_queries
        ),
    ))
}

fn mini_config() -> ModelConfig {
    ModelConfig {
        n_layers: 3,
        n_heads: 4,
        d_model: 32,
        d_mlp: 128,
        n_ctx: 24,
        vocab: 97,
    }
}

fn mini(seed: u64) -> Result<(RawWeights, FoldedModel)> {
    let raw = synthetic_raw(mini_config(), seed);
    let folded = fold_layernorm(&raw)?;
    Ok((raw, folded))
}

fn random_ids(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

/// Folded engine against the unfolded straight-line oracle.
fn fold_equivalence(seed: u64) -> Result<Check> {
    let (raw, folded) = mini(seed.wrapping_add(40))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(41));
    let mut worst: f64 = 0.0;
    for s in 0..20 {
        let ids = random_ids(&mut rng, 1 + s % raw.config.n_ctx, raw.config.vocab);
        let fast = forward(&folded, &ids, &ForwardOptions::default())?.logits;
        worst = worst.max(max_relative_gap(&fast, &reference_logits(&raw, &ids)?));
    }
    Ok(check(
        "fold_equivalence",
        worst <= 1e-4,
        worst,
        "max relative gap <= 1e-4",
        "20 random sequences on a 3-layer mini model".into(),
    ))
}

/// Changing a later token never changes logits at earlier positions.
fn causality(seed: u64) -> Result<Check> {
    let (_, model) = mini(seed.wrapping_add(50))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(51));
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let ids = random_ids(&mut rng, 12, model.config.vocab);
        let p = rng.random_range(1..ids.len());
        let mut changed = ids.clone();
        changed[p] = (changed[p] + 1) % model.config.vocab as u32;
        let a = forward(&model, &ids, &ForwardOptions::default())?.logits;
        let b = forward(&model, &changed, &ForwardOptions::default())?.logits;
        for pos in 0..p {
            for (x, y) in a[pos].iter().zip(&b[pos]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(check(
        "forward_causality",
        worst == 0.0,
        worst,
        "earlier logits unchanged",
        "10 sequences with one later token replaced".into(),
    ))
}

/// Ablating neuron (l, n) leaves the residual stream before block l's MLP
/// untouched, leaves earlier positions untouched when restricted to one
/// position, and does nothing when the neuron writes nothing.
fn ablation_locality(seed: u64) -> Result<Check> {
    let (_, mut model) = mini(seed.wrapping_add(60))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(61));
    let ids = random_ids(&mut rng, 10, model.config.vocab);
    let rec = ForwardOptions {
        record_residuals: true,
        ..Default::default()
    };
    let clean = forward(&model, &ids, &rec)?;
    let mut violations = 0usize;
    let mut changed_after = 0usize;
    for layer in 0..model.config.n_layers {
        let ablated = forward(
            &model,
            &ids,
            &ForwardOptions {
                ablations: vec![AblationSpec::zero(layer, 7)],
                ..rec.clone()
            },
        )?;
        for b in 0..=layer {
            if ablated.residuals[b] != clean.residuals[b] {
                violations += 1;
            }
        }
        if ablated.residuals[layer + 1] != clean.residuals[layer + 1] {
            changed_after += 1;
        }
    }
    let pos = 6;
    let mut spec = AblationSpec::zero(1, 3);
    spec.positions = Some(vec![pos]);
    let partial = forward(
        &model,
        &ids,
        &ForwardOptions {
            ablations: vec![spec],
            ..rec.clone()
        },
    )?;
    for (p, (a, b)) in partial.logits.iter().zip(&clean.logits).enumerate() {
        if p < pos && a != b {
            violations += 1;
        }
    }
    model.layers[2].w_out.row_mut(5).fill(0.0);
    let baseline = forward(&model, &ids, &ForwardOptions::default())?;
    let inert = forward(
        &model,
        &ids,
        &ForwardOptions {
            ablations: vec![AblationSpec::zero(2, 5)],
            logits: Logits::All,
            ..Default::default()
        },
    )?;
    if inert.logits != baseline.logits {
        violations += 1;
    }
    Ok(check(
        "ablation_locality",
        violations == 0 && changed_after == model.config.n_layers,
        violations as f64,
        "== 0 violations",
        format!("ablation changed its own block output in {changed_after}/{} layers", model.config.n_layers),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let opts = SelftestOptions {
            ann_atoms: 3000,
            ann_dim: 16,
            ann_queries: 100,
            ..Default::default()
        };
        let report = run(&opts).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(report.passed);
    }
}
