//! Bundling, binding and boolean-gate neurons over nearly orthogonal vectors.
//!
//! This is a synthetic testbed: nothing here touches a checkpoint. Random
//! concept vectors are i.i.d. Gaussian samples normalized to unit length,
//! drawn from a seeded ChaCha stream so every table is reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Dense real vector in the model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptVector(Vec<f64>);

impl ConceptVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "concept vector has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }

    pub fn dot(&self, other: &ConceptVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(linalg::dot(&self.0, &other.0))
    }

    pub fn cosine(&self, other: &ConceptVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(linalg::cosine(&self.0, &other.0))
    }

    pub fn add(&self, other: &ConceptVector) -> Result<ConceptVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn scaled(&self, factor: f64) -> ConceptVector {
        Self(self.0.iter().map(|x| x * factor).collect())
    }
}

impl AsRef<[f64]> for ConceptVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Coefficient of an atom inside a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` isotropic unit vectors of dimension `dim`, deterministic per seed.
pub fn sample_concept_vectors(count: usize, dim: usize, seed: u64) -> Result<Vec<ConceptVector>> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| ConceptVector(gaussian_unit(&mut rng, dim)))
        .collect())
}

/// Signed sum `Σ signᵢ·atomᵢ`.
pub fn bundle(atoms: &[ConceptVector], signs: &[Sign]) -> Result<ConceptVector> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument("cannot bundle an empty atom list".into()));
    }
    if atoms.len() != signs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} atoms but {} signs",
            atoms.len(),
            signs.len()
        )));
    }
    let dim = atoms[0].dim();
    let mut out = vec![0.0; dim];
    for (atom, sign) in atoms.iter().zip(signs) {
        check_dim(dim, atom.dim())?;
        linalg::axpy(sign.value(), &atom.0, &mut out);
    }
    Ok(ConceptVector(out))
}

/// Dot-product threshold λ for membership tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipThreshold(f64);

impl MembershipThreshold {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "membership threshold must be positive, got {lambda}"
            )));
        }
        Ok(Self(lambda))
    }

    pub fn lambda(self) -> f64 {
        self.0
    }
}

/// `⟨bundle, probe⟩ ≥ λ`.
pub fn contains(
    bundle: &ConceptVector,
    probe: &ConceptVector,
    threshold: MembershipThreshold,
) -> Result<bool> {
    Ok(bundle.dot(probe)? >= threshold.0)
}

/// Default row jitter for [`random_binding_matrix`], per-entry std `0.2/√dim`.
pub const DEFAULT_BINDING_JITTER: f64 = 0.2;

/// Default near-orthogonality bound on the off-diagonal of the row Gram.
pub const DEFAULT_ORTHO_BOUND: f64 = 0.2;

/// Square matrix with unit, nearly orthogonal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingMatrix {
    rows: Matrix,
    seed: u64,
}

impl BindingMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            rows: Matrix::identity(dim),
            seed: 0,
        }
    }

    /// Wrap explicit rows; each row is normalized to unit length.
    pub fn from_rows(rows: Matrix, seed: u64) -> Result<Self> {
        if rows.rows() != rows.cols() {
            return Err(Error::InvalidArgument(format!(
                "binding matrix must be square, got {:?}",
                rows.shape()
            )));
        }
        let mut rows = rows;
        for i in 0..rows.rows() {
            let n = linalg::norm(rows.row(i));
            if n == 0.0 || !n.is_finite() {
                return Err(Error::InvalidArgument(format!("row {i} has zero or non-finite norm")));
            }
            rows.row_mut(i).iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self { rows, seed })
    }

    pub fn dim(&self) -> usize {
        self.rows.rows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// `M·Mᵀ`, the Gram matrix of the (unit) rows.
    pub fn row_gram(&self) -> Matrix {
        self.rows.matmul(&self.rows.transpose())
    }

    /// Largest off-diagonal |entry| of the row Gram.
    pub fn max_offdiag(&self) -> f64 {
        let g = self.row_gram();
        let n = g.rows();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(g.get(i, j).abs());
                }
            }
        }
        m
    }

    /// Check unit rows (1e-6) and off-diagonal row Gram below `bound`.
    pub fn validate(&self, bound: f64) -> Result<()> {
        for (i, r) in self.rows.iter_rows().enumerate() {
            let n = linalg::norm(r);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("row {i} has norm {n}")));
            }
        }
        let off = self.max_offdiag();
        if off >= bound {
            return Err(Error::InvalidArgument(format!(
                "max off-diagonal {off:.4} exceeds near-orthogonality bound {bound}"
            )));
        }
        Ok(())
    }
}

/// Nearly orthonormal binding matrix: a random orthonormal basis with Gaussian
/// jitter of per-entry std `DEFAULT_BINDING_JITTER/√dim`, rows renormalized.
pub fn random_binding_matrix(dim: usize, seed: u64) -> Result<BindingMatrix> {
    binding_matrix_with_jitter(dim, seed, DEFAULT_BINDING_JITTER)
}

pub fn binding_matrix_with_jitter(dim: usize, seed: u64, jitter: f64) -> Result<BindingMatrix> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal_rows(&mut rng, dim);
    let scale = jitter / (dim as f64).sqrt();
    let mut rows = basis;
    for x in rows.data_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *x += scale * g;
    }
    BindingMatrix::from_rows(rows, seed)
}

/// Rows sampled independently and uniformly on the sphere. Pairwise nearly
/// orthogonal, but the matrix as a whole is far from orthonormal: its singular
/// values spread over `[0, 2]`, so `Mᵀ` is a poor inverse.
pub fn independent_rows(dim: usize, seed: u64) -> Result<BindingMatrix> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..dim).map(|_| gaussian_unit(&mut rng, dim)).collect();
    BindingMatrix::from_rows(Matrix::from_rows(&rows), seed)
}

fn orthonormal_rows(rng: &mut ChaCha8Rng, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(dim, dim);
    let mut i = 0;
    while i < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for j in 0..i {
                let p = linalg::dot(&v, m.row(j));
                linalg::axpy(-p, m.row(j), &mut v);
            }
        }
        let n = linalg::norm(&v);
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        m.row_mut(i).copy_from_slice(&v);
        i += 1;
    }
    m
}

/// `M·v`.
pub fn bind(m: &BindingMatrix, v: &ConceptVector) -> Result<ConceptVector> {
    check_dim(m.dim(), v.dim())?;
    Ok(ConceptVector(m.rows.mul_vec(&v.0)))
}

/// `Mᵀ·v`, the approximate inverse of [`bind`] for nearly orthonormal `M`.
pub fn unbind(m: &BindingMatrix, v: &ConceptVector) -> Result<ConceptVector> {
    check_dim(m.dim(), v.dim())?;
    Ok(ConceptVector(m.rows.vec_mul(&v.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    And,
    Or,
    /// AND over the positive atoms with every negated atom required absent.
    NotAugmented,
}

/// A ReLU neuron whose weights are a signed sum of registered concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanNeuron {
    pub weights: ConceptVector,
    pub bias: f64,
    pub gate: Gate,
    /// Indices (into the caller's concept registry) of positive atoms.
    pub positive: Vec<usize>,
    /// Indices of subtracted atoms.
    pub negative: Vec<usize>,
}

impl BooleanNeuron {
    /// AND over `members`: bias `-(k - 0.5)`.
    pub fn and_gate(concepts: &[ConceptVector], members: &[usize]) -> Result<Self> {
        Self::build(concepts, members, &[], Gate::And)
    }

    /// OR over `members`: bias `-0.5`.
    pub fn or_gate(concepts: &[ConceptVector], members: &[usize]) -> Result<Self> {
        Self::build(concepts, members, &[], Gate::Or)
    }

    /// AND over `positive`, NOT over each of `negative`.
    pub fn not_augmented(
        concepts: &[ConceptVector],
        positive: &[usize],
        negative: &[usize],
    ) -> Result<Self> {
        Self::build(concepts, positive, negative, Gate::NotAugmented)
    }

    fn build(
        concepts: &[ConceptVector],
        positive: &[usize],
        negative: &[usize],
        gate: Gate,
    ) -> Result<Self> {
        if positive.is_empty() {
            return Err(Error::InvalidArgument("gate needs at least one positive atom".into()));
        }
        let lookup = |i: usize| {
            concepts
                .get(i)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("concept index {i} out of range")))
        };
        let mut atoms = Vec::new();
        let mut signs = Vec::new();
        for &i in positive {
            atoms.push(lookup(i)?);
            signs.push(Sign::Plus);
        }
        for &i in negative {
            atoms.push(lookup(i)?);
            signs.push(Sign::Minus);
        }
        let weights = bundle(&atoms, &signs)?;
        let k = positive.len() as f64;
        let bias = match gate {
            Gate::Or => -0.5,
            Gate::And | Gate::NotAugmented => -(k - 0.5),
        };
        Ok(Self {
            weights,
            bias,
            gate,
            positive: positive.to_vec(),
            negative: negative.to_vec(),
        })
    }

    /// The abstract gate value for a presence bitmap over the registry.
    pub fn expected(&self, present: &[bool]) -> bool {
        let pos = self.positive.iter().map(|&i| present[i]);
        let neg_absent = self.negative.iter().all(|&i| !present[i]);
        match self.gate {
            Gate::And => pos.into_iter().all(|p| p) && neg_absent,
            Gate::Or => pos.into_iter().any(|p| p) && neg_absent,
            Gate::NotAugmented => pos.into_iter().all(|p| p) && neg_absent,
        }
    }
}

/// `max(0, ⟨weights, input⟩ + bias)`.
pub fn boolean_neuron_eval(neuron: &BooleanNeuron, input: &ConceptVector) -> Result<f64> {
    Ok((neuron.weights.dot(input)? + neuron.bias).max(0.0))
}

/// Residual-stream input for a presence bitmap: the sum of present concepts.
pub fn presence_input(concepts: &[ConceptVector], present: &[bool]) -> ConceptVector {
    let dim = concepts.first().map_or(0, ConceptVector::dim);
    let mut out = vec![0.0; dim];
    for (c, &p) in concepts.iter().zip(present) {
        if p {
            linalg::axpy(1.0, &c.0, &mut out);
        }
    }
    ConceptVector(out)
}

/// One input row of the OR-set superposition demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionRow {
    pub present: Vec<usize>,
    /// Firing flag per OR-neuron.
    pub fired: Vec<bool>,
    pub expected_fired: Vec<bool>,
    /// Concepts whose every containing OR-neuron fired (downstream AND-check).
    pub recovered: Vec<usize>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionTable {
    pub or_sets: Vec<Vec<usize>>,
    pub rows: Vec<SuperpositionRow>,
}

impl SuperpositionTable {
    /// Every OR-neuron matched its abstract OR value on every input.
    pub fn firing_exact(&self) -> bool {
        self.rows.iter().all(|r| r.fired == r.expected_fired)
    }

    /// Firing exact and every input's concepts were recovered exactly.
    pub fn all_exact(&self) -> bool {
        self.rows.iter().all(|r| r.exact)
    }
}

/// OR-neurons over sets of rarely co-occurring concepts, followed by a
/// downstream AND-check that reads the OR-neurons' written output directions
/// back from the stream.
///
/// `or_sets` must cover every concept; a concept may appear in several sets
/// (overlapping layouts give each concept a unique firing signature). Two
/// concepts sharing a set must never be present in the same input.
pub fn or_set_superposition_demo(
    concepts: &[ConceptVector],
    or_sets: &[Vec<usize>],
    inputs: &[Vec<bool>],
    seed: u64,
) -> Result<SuperpositionTable> {
    let n = concepts.len();
    if n == 0 || or_sets.is_empty() {
        return Err(Error::InvalidArgument("demo needs concepts and OR-sets".into()));
    }
    let mut covered = vec![false; n];
    for set in or_sets {
        for &c in set {
            if c >= n {
                return Err(Error::InvalidArgument(format!("concept index {c} out of range")));
            }
            covered[c] = true;
        }
    }
    if let Some(c) = covered.iter().position(|x| !x) {
        return Err(Error::InvalidArgument(format!("concept {c} is in no OR-set")));
    }
    for (row, present) in inputs.iter().enumerate() {
        if present.len() != n {
            return Err(Error::InvalidArgument(format!(
                "input {row} has {} flags for {n} concepts",
                present.len()
            )));
        }
        for (s, set) in or_sets.iter().enumerate() {
            let hits: Vec<usize> = set.iter().copied().filter(|&c| present[c]).collect();
            if hits.len() > 1 {
                return Err(Error::DemoAssumptionViolated(format!(
                    "input {row} has concepts {hits:?} co-occurring inside OR-set {s}"
                )));
            }
        }
    }

    let dim = concepts[0].dim();
    let or_neurons = or_sets
        .iter()
        .map(|set| BooleanNeuron::or_gate(concepts, set))
        .collect::<Result<Vec<_>>>()?;
    // each OR-neuron writes a fresh nearly orthogonal direction
    let outputs = sample_concept_vectors(or_sets.len(), dim, seed)?;
    let and_checks = (0..n)
        .map(|c| {
            let owners: Vec<usize> = (0..or_sets.len()).filter(|&s| or_sets[s].contains(&c)).collect();
            BooleanNeuron::and_gate(&outputs, &owners)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(inputs.len());
    for present in inputs {
        let x = presence_input(concepts, present);
        let mut fired = Vec::with_capacity(or_neurons.len());
        let mut expected_fired = Vec::with_capacity(or_neurons.len());
        let mut written = ConceptVector::zeros(dim);
        for (s, neuron) in or_neurons.iter().enumerate() {
            let act = boolean_neuron_eval(neuron, &x)?;
            fired.push(act > 0.0);
            expected_fired.push(neuron.expected(present));
            if act > 0.0 {
                written = written.add(&outputs[s])?;
            }
        }
        let mut recovered = Vec::new();
        for (c, check) in and_checks.iter().enumerate() {
            if boolean_neuron_eval(check, &written)? > 0.0 {
                recovered.push(c);
            }
        }
        let present_idx: Vec<usize> = (0..n).filter(|&c| present[c]).collect();
        let exact = fired == expected_fired && recovered == present_idx;
        rows.push(SuperpositionRow {
            present: present_idx,
            fired,
            expected_fired,
            recovered,
            exact,
        });
    }
    Ok(SuperpositionTable {
        or_sets: or_sets.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<ConceptVector> {
        sample_concept_vectors(8, 768, 11).unwrap()
    }

    #[test]
    fn single_sample_is_unit() {
        let v = sample_concept_vectors(1, 768, 0).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn low_dim_sampling_still_succeeds() {
        let v = sample_concept_vectors(2, 2, 3).unwrap();
        assert_eq!(v.len(), 2);
        assert!(matches!(sample_concept_vectors(1, 1, 0), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn bundle_edge_cases() {
        let c = pool();
        assert_eq!(bundle(&c[..1], &[Sign::Plus]).unwrap(), c[0]);
        let z = bundle(&[c[0].clone(), c[0].clone()], &[Sign::Plus, Sign::Minus]).unwrap();
        assert!(z.as_slice().iter().all(|&x| x == 0.0));
        assert!(matches!(bundle(&c[..2], &[Sign::Plus]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bundle_of_two_is_similar_to_both() {
        let c = pool();
        let b = bundle(&c[..2], &[Sign::Plus, Sign::Plus]).unwrap();
        // exact value is (1 + ⟨c1,c2⟩)/√(2 + 2⟨c1,c2⟩)
        let d = c[0].dot(&c[1]).unwrap();
        let expected = (1.0 + d) / (2.0 + 2.0 * d).sqrt();
        for v in &c[..2] {
            let cs = b.cosine(v).unwrap();
            assert!((cs - expected).abs() < 1e-12);
            assert!(cs > 0.6);
        }
    }

    #[test]
    fn membership_examples() {
        let c = pool();
        let b = c[0].add(&c[1]).unwrap();
        let lam = MembershipThreshold::new(0.5).unwrap();
        assert!(contains(&b, &c[0], lam).unwrap());
        assert!(!contains(&b, &c[2], lam).unwrap());
        let zero = ConceptVector::zeros(768);
        assert!(!contains(&zero, &c[0], MembershipThreshold::new(0.1).unwrap()).unwrap());
        assert!(MembershipThreshold::new(0.0).is_err());
        let short = ConceptVector::zeros(3);
        assert!(matches!(contains(&b, &short, lam), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn binding_identity_and_determinism() {
        let c = pool();
        let id = BindingMatrix::identity(768);
        assert_eq!(bind(&id, &c[0]).unwrap(), c[0]);
        let a = random_binding_matrix(128, 1).unwrap();
        let b = random_binding_matrix(128, 1).unwrap();
        assert_eq!(a, b);
        assert!(bind(&a, &c[0]).is_err());
    }

    #[test]
    fn gates_match_enumeration() {
        let c = pool();
        let and = BooleanNeuron::and_gate(&c, &[0, 1]).unwrap();
        let or = BooleanNeuron::or_gate(&c, &[0, 1]).unwrap();
        for mask in 0..4u32 {
            let present = vec![mask & 1 != 0, mask & 2 != 0, false, false, false, false, false, false];
            let x = presence_input(&c, &present);
            assert_eq!(boolean_neuron_eval(&and, &x).unwrap() > 0.0, and.expected(&present));
            assert_eq!(boolean_neuron_eval(&or, &x).unwrap() > 0.0, or.expected(&present));
        }
        let not = BooleanNeuron::not_augmented(&c, &[0], &[2]).unwrap();
        assert_eq!(boolean_neuron_eval(&not, &c[2]).unwrap(), 0.0);
        assert!(boolean_neuron_eval(&not, &c[0]).unwrap() > 0.0);
    }

    #[test]
    fn or_set_demo_partition() {
        let c = sample_concept_vectors(6, 768, 5).unwrap();
        let sets = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let mut inputs = vec![vec![false; 6]];
        let mut single = vec![false; 6];
        single[0] = true;
        inputs.push(single);
        inputs.push(vec![true, false, false, true, true, false]);
        let t = or_set_superposition_demo(&c, &sets, &inputs, 99).unwrap();
        assert!(t.firing_exact());
        assert_eq!(t.rows[0].fired, vec![false, false, false]);
        assert_eq!(t.rows[1].fired, vec![true, false, false]);
        assert_eq!(t.rows[2].fired, vec![true, true, true]);

        let bad = vec![vec![true, true, false, false, false, false]];
        assert!(matches!(
            or_set_superposition_demo(&c, &sets, &bad, 99),
            Err(Error::DemoAssumptionViolated(_))
        ));
    }
}
