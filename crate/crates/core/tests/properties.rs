use proptest::prelude::*;

use vsalens::ann::{brute_force_top_k, AtomIndex, IndexParams};
use vsalens::diagnostics::{diagonal_dominance, gram, GramMode};
use vsalens::explain::{greedy_bundle, recompute_bundle_cos, ExplainerConfig, NeuronId, Strategy as Search, Verdict};
use vsalens::forward::{forward, ForwardOptions};
use vsalens::linalg::{self, Matrix};
use vsalens::vsa::{bind, bundle, contains, sample_concept_vectors, unbind, BindingMatrix, MembershipThreshold, Sign};
use vsalens::weights::{fold_layernorm, synthetic_raw, AtomLabel, AtomTable, CandidateAtom, ModelConfig};

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

/// Planted signed combination plus isotropic noise.
fn weight(atoms: &[CandidateAtom], picks: &[(usize, bool)], noise: f64, seed: u64) -> Vec<f64> {
    let dim = atoms[0].vector.len();
    let mut w: Vec<f64> = sample_concept_vectors(1, dim, seed).unwrap()[0]
        .as_slice()
        .iter()
        .map(|x| x * noise)
        .collect();
    for &(i, neg) in picks {
        linalg::axpy(if neg { -1.0 } else { 1.0 }, &atoms[i % atoms.len()].unit(), &mut w);
    }
    linalg::centered(&w)
}

fn explain_case() -> impl Strategy<Value = (usize, usize, u64, Vec<(usize, bool)>, f64, bool, bool)> {
    (
        20usize..200,
        16usize..96,
        any::<u64>(),
        prop::collection::vec((0usize..200, any::<bool>()), 1..8),
        0.0f64..1.5,
        any::<bool>(),
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn explanation_invariants((n, dim, seed, picks, noise, signed, pursuit) in explain_case()) {
        let atoms = pool(n, dim, seed);
        let w = weight(&atoms, &picks, noise, seed ^ 1);
        prop_assume!(linalg::norm(&w) > 1e-9);
        let config = ExplainerConfig {
            signed,
            max_bundle: 6,
            strategy: if pursuit { Search::MatchingPursuit } else { Search::Greedy },
            ..ExplainerConfig::token_only()
        };
        let e = greedy_bundle(NeuronId { layer: 0, index: 0 }, &w, &ranked(&atoms, &w), &config).unwrap();

        prop_assert!(e.members.len() <= config.max_bundle);
        prop_assert!((-1.0..=1.0).contains(&e.bundle_cos));
        for m in &e.members {
            prop_assert!(m.cos.abs() >= config.min_atom_cos);
            if signed {
                prop_assert_eq!(m.sign, Sign::of(m.cos));
            } else {
                prop_assert_eq!(m.sign, Sign::Plus);
            }
        }

        let table = AtomTable::from_atoms(atoms.clone()).unwrap();
        let again = recompute_bundle_cos(&e.members, &table, &w, config.unit_atoms).unwrap();
        prop_assert!((again - e.bundle_cos).abs() < 1e-9);

        let accepted: Vec<f64> = e
            .trace
            .iter()
            .filter(|s| s.verdict == Verdict::Accepted)
            .map(|s| s.bundle_cos)
            .collect();
        prop_assert_eq!(accepted.len(), e.members.len());
        for pair in accepted.windows(2) {
            prop_assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn explanation_scale_invariance(
        (n, dim, seed, picks, noise, signed, _p) in explain_case(),
        scale in 1e-3f64..1e3,
    ) {
        let atoms = pool(n, dim, seed);
        let w = weight(&atoms, &picks, noise, seed ^ 1);
        prop_assume!(linalg::norm(&w) > 1e-9);
        let config = ExplainerConfig { signed, ..ExplainerConfig::token_only() };
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = greedy_bundle(NeuronId { layer: 0, index: 0 }, &w, &ranked(&atoms, &w), &config).unwrap();
        let b = greedy_bundle(NeuronId { layer: 0, index: 0 }, &scaled, &ranked(&atoms, &scaled), &config).unwrap();
        let key = |e: &vsalens::explain::Explanation| e.members.iter().map(|m| (m.label, m.sign)).collect::<Vec<_>>();
        prop_assert_eq!(key(&a), key(&b));
        prop_assert!((a.bundle_cos - b.bundle_cos).abs() < 1e-9);
    }

    #[test]
    fn small_index_matches_oracle(n in 1usize..300, dim in 2usize..40, seed in any::<u64>(), k in 1usize..400) {
        let items: Vec<(u32, Vec<f64>)> = sample_concept_vectors(n, dim, seed)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as u32, v.into_inner()))
            .collect();
        let index = AtomIndex::build(items.clone(), IndexParams::default()).unwrap();
        let q = sample_concept_vectors(1, dim, seed ^ 7).unwrap().remove(0);
        let got = index.top_k(q.as_slice(), k).unwrap();
        let want = brute_force_top_k(items.iter().map(|(l, v)| (l, v.as_slice())), q.as_slice(), k);
        prop_assert_eq!(got.len(), k.min(n));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn graph_results_are_sorted_and_exact(seed in any::<u64>(), k in 1usize..30) {
        let items: Vec<(u32, Vec<f64>)> = sample_concept_vectors(600, 12, seed)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as u32, v.into_inner()))
            .collect();
        let params = IndexParams { exhaustive_below: 10, ..Default::default() };
        let index = AtomIndex::build(items.clone(), params).unwrap();
        prop_assert!(index.uses_graph());
        let q = sample_concept_vectors(1, 12, seed ^ 3).unwrap().remove(0);
        let hits = index.top_k(q.as_slice(), k).unwrap();
        let all = brute_force_top_k(items.iter().map(|(l, v)| (l, v.as_slice())), q.as_slice(), 600);
        for pair in hits.windows(2) {
            prop_assert!(pair[0].cosine > pair[1].cosine
                || (pair[0].cosine == pair[1].cosine && pair[0].label < pair[1].label));
        }
        for h in &hits {
            let exact = all.iter().find(|o| o.label == h.label).unwrap();
            prop_assert_eq!(h.cosine, exact.cosine);
        }
    }

    #[test]
    fn gram_symmetry_and_invariances(
        n in 2usize..24,
        dim in 2usize..32,
        seed in any::<u64>(),
        scales in prop::collection::vec(0.01f64..100.0, 24),
        rotate in 0usize..24,
    ) {
        let rows: Vec<Vec<f64>> = sample_concept_vectors(n, dim, seed)
            .unwrap()
            .into_iter()
            .map(|v| v.into_inner())
            .collect();
        let g = gram(&Matrix::from_rows(&rows), GramMode::Cosine).unwrap().values;
        for i in 0..n {
            prop_assert!((g.get(i, i) - 1.0).abs() < 1e-9);
            for j in 0..n {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let base = diagonal_dominance("x", &g, 0.1).unwrap();

        let scaled: Vec<Vec<f64>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
        let gs = gram(&Matrix::from_rows(&scaled), GramMode::Cosine).unwrap().values;
        let rs = diagonal_dominance("x", &gs, 0.1).unwrap();

        let mut permuted = rows.clone();
        permuted.rotate_left(rotate % n);
        let gp = gram(&Matrix::from_rows(&permuted), GramMode::Cosine).unwrap().values;
        let rp = diagonal_dominance("x", &gp, 0.1).unwrap();

        for r in [&rs, &rp] {
            prop_assert!((r.offdiag_abs_mean - base.offdiag_abs_mean).abs() < 1e-9);
            prop_assert!((r.offdiag_abs_median - base.offdiag_abs_median).abs() < 1e-9);
            prop_assert!((r.offdiag_abs_max - base.offdiag_abs_max).abs() < 1e-9);
            prop_assert!((r.diag_mean - base.diag_mean).abs() < 1e-9);
        }
        prop_assert_eq!(rp.fraction_above_threshold, base.fraction_above_threshold);
    }

    #[test]
    fn bundle_membership(k in 1usize..10, seed in any::<u64>()) {
        let v = sample_concept_vectors(k + 20, 768, seed).unwrap();
        let (members, others) = v.split_at(k);
        let b = bundle(members, &vec![Sign::Plus; k]).unwrap();
        let t = MembershipThreshold::new(0.5).unwrap();
        for m in members {
            prop_assert!(contains(&b, m, t).unwrap());
        }
        for o in others {
            prop_assert!(!contains(&b, o, t).unwrap());
        }
    }

    #[test]
    fn identity_binding_round_trips(dim in 2usize..64, seed in any::<u64>()) {
        let m = BindingMatrix::identity(dim);
        let v = sample_concept_vectors(1, dim, seed).unwrap().remove(0);
        let back = unbind(&m, &bind(&m, &v).unwrap()).unwrap();
        prop_assert_eq!(back, v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_causal(seed in any::<u64>(), ids in prop::collection::vec(0u32..50, 2..12), p in 1usize..12) {
        let cfg = ModelConfig { n_layers: 2, n_heads: 2, d_model: 16, d_mlp: 32, n_ctx: 16, vocab: 50 };
        let model = fold_layernorm(&synthetic_raw(cfg, seed)).unwrap();
        let p = p % ids.len();
        prop_assume!(p > 0);
        let mut changed = ids.clone();
        changed[p] = (changed[p] + 1) % 50;
        let a = forward(&model, &ids, &ForwardOptions::default()).unwrap().logits;
        let b = forward(&model, &changed, &ForwardOptions::default()).unwrap().logits;
        for pos in 0..p {
            prop_assert_eq!(&a[pos], &b[pos]);
        }
    }
}
