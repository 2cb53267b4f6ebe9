//! Cosine nearest-neighbor index (HNSW graph) with an exact scan oracle.
//!
//! Vectors and queries are normalized on entry, so inner product equals
//! cosine. Results are ordered by descending cosine, ties by ascending label.
//! Small indexes (`n < exhaustive_below`) answer every query by exact scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const MAGIC: &[u8; 5] = b"VLIX1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Max links per node on every level.
    pub degree: usize,
    pub construction_beam: usize,
    pub query_beam: usize,
    pub exhaustive_below: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            degree: 32,
            construction_beam: 200,
            query_beam: 128,
            exhaustive_below: 1024,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit<L> {
    pub label: L,
    pub cosine: f64,
}

fn rank<L: Ord>(a: &Hit<L>, b: &Hit<L>) -> Ordering {
    b.cosine.total_cmp(&a.cosine).then_with(|| a.label.cmp(&b.label))
}

/// Keep the best `k` under [`rank`], sorted.
fn select_top<L: Ord>(mut hits: Vec<Hit<L>>, k: usize) -> Vec<Hit<L>> {
    if k < hits.len() {
        hits.select_nth_unstable_by(k, rank);
        hits.truncate(k);
    }
    hits.sort_by(rank);
    hits
}

/// Exact top-`k` by cosine over `(label, vector)` pairs.
pub fn brute_force_top_k<'a, L, I>(items: I, query: &[f64], k: usize) -> Vec<Hit<L>>
where
    L: Ord + Clone + 'a,
    I: IntoIterator<Item = (&'a L, &'a [f64])>,
{
    let q = linalg::normalized(query);
    let mut unit = Vec::new();
    let hits: Vec<Hit<L>> = items
        .into_iter()
        .map(|(label, v)| {
            // same arithmetic as `linalg::normalized`, without the allocation
            let n = linalg::norm(v);
            unit.clear();
            if n == 0.0 {
                unit.extend_from_slice(v);
            } else {
                unit.extend(v.iter().map(|x| x / n));
            }
            Hit {
                label: label.clone(),
                cosine: linalg::dot(&unit, &q),
            }
        })
        .collect();
    select_top(hits, k)
}

fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    node: u32,
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    // higher similarity first; lower node id wins ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Min-ordered wrapper so a max-heap pops the worst element.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Worst(std::cmp::Reverse<Scored>);

struct Visited {
    stamp: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            generation: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
    }

    /// Returns true the first time `node` is seen in this generation.
    fn insert(&mut self, node: u32) -> bool {
        let s = &mut self.stamp[node as usize];
        if *s == self.generation {
            false
        } else {
            *s = self.generation;
            true
        }
    }
}

/// Immutable after [`AtomIndex::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct AtomIndex<L> {
    params: IndexParams,
    dim: usize,
    labels: Vec<L>,
    vectors: Vec<f64>,
    /// f32 copy used while walking the graph; hits are rescored in f64.
    coarse: Vec<f32>,
    /// `links[node][level]`
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

impl<L: Ord + Clone> AtomIndex<L> {
    pub fn build(items: Vec<(L, Vec<f64>)>, params: IndexParams) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty atom set".into()));
        }
        if params.degree < 2 || params.construction_beam == 0 || params.query_beam == 0 {
            return Err(Error::InvalidArgument(format!("bad index parameters {params:?}")));
        }
        let dim = items[0].1.len();
        let mut labels = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len() * dim);
        for (label, v) in items {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            labels.push(label);
            vectors.extend(linalg::normalized(&v));
        }
        let n = labels.len();
        let mut index = Self {
            params,
            dim,
            labels,
            coarse: Vec::new(),
            vectors,
            links: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };
        if n >= params.exhaustive_below {
            index.coarse = index.vectors.iter().map(|&x| x as f32).collect();
            index.build_graph();
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn labels(&self) -> &[L] {
        &self.labels
    }

    /// Whether queries go through the graph rather than an exact scan.
    pub fn uses_graph(&self) -> bool {
        !self.links.is_empty()
    }

    fn vector(&self, node: u32) -> &[f64] {
        let i = node as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn sim(&self, a: u32, q: &[f64]) -> f64 {
        linalg::dot(self.vector(a), q)
    }

    fn coarse_vector(&self, node: u32) -> &[f32] {
        let i = node as usize * self.dim;
        &self.coarse[i..i + self.dim]
    }

    fn csim(&self, a: u32, q: &[f32]) -> f64 {
        f64::from(dot32(self.coarse_vector(a), q))
    }

    fn max_links(&self, _level: usize) -> usize {
        self.params.degree
    }

    fn build_graph(&mut self) {
        let n = self.labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let level_mult = 1.0 / (self.params.degree as f64).ln();
        let mut visited = Visited::new(n);
        for node in 0..n as u32 {
            let u: f64 = rng.random::<f64>();
            let level = ((-(1.0 - u).ln()) * level_mult).floor() as usize;
            self.links.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                self.entry = 0;
                self.max_level = level;
                continue;
            }
            let q = self.coarse_vector(node).to_vec();
            let mut ep = Scored {
                sim: self.csim(self.entry, &q),
                node: self.entry,
            };
            for lc in (level + 1..=self.max_level).rev() {
                ep = self.greedy(&q, ep, lc);
            }
            let mut entry_points = vec![ep];
            for lc in (0..=level.min(self.max_level)).rev() {
                let found = self.search_layer(
                    &q,
                    &entry_points,
                    self.params.construction_beam,
                    lc,
                    &mut visited,
                );
                let chosen = self.select_neighbors(&found, self.max_links(lc));
                self.links[node as usize][lc] = chosen.iter().map(|s| s.node).collect();
                for s in &chosen {
                    self.connect(s.node, node, s.sim, lc);
                }
                entry_points = found;
            }
            if level > self.max_level {
                self.max_level = level;
                self.entry = node;
            }
        }
    }

    /// Add `new` to `target`'s links; on overflow keep the closest.
    fn connect(&mut self, target: u32, new: u32, sim: f64, level: usize) {
        let cap = self.max_links(level);
        let list = &self.links[target as usize][level];
        if list.len() < cap {
            self.links[target as usize][level].push(new);
            return;
        }
        let base = self.coarse_vector(target);
        let mut scored: Vec<Scored> = list
            .iter()
            .map(|&m| Scored {
                sim: self.csim(m, base),
                node: m,
            })
            .collect();
        scored.push(Scored { sim, node: new });
        scored.sort_by(|a, b| b.cmp(a));
        scored.truncate(cap);
        self.links[target as usize][level] = scored.into_iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept; fill the rest with the pruned ones.
    fn select_neighbors(&self, candidates: &[Scored], cap: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(cap);
        let mut pruned = Vec::new();
        for &c in candidates {
            if kept.len() >= cap {
                break;
            }
            let cv = self.coarse_vector(c.node);
            let diverse = kept.iter().all(|k| self.csim(k.node, cv) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= cap {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut ep: Scored, level: usize) -> Scored {
        loop {
            let mut moved = false;
            for &m in &self.links[ep.node as usize][level] {
                let s = Scored {
                    sim: self.csim(m, q),
                    node: m,
                };
                if s > ep {
                    ep = s;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Beam search on one level; returns up to `beam` nodes, best first.
    fn search_layer(
        &self,
        q: &[f32],
        entry: &[Scored],
        beam: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset(self.labels.len());
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut best: BinaryHeap<Worst> = BinaryHeap::new();
        for &e in entry {
            if visited.insert(e.node) {
                frontier.push(e);
                best.push(Worst(std::cmp::Reverse(e)));
            }
        }
        while best.len() > beam {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().expect("non-empty").0 .0;
            if c < worst && best.len() >= beam {
                break;
            }
            for &m in &self.links[c.node as usize][level] {
                if !visited.insert(m) {
                    continue;
                }
                let s = Scored {
                    sim: self.csim(m, q),
                    node: m,
                };
                let worst = best.peek().expect("non-empty").0 .0;
                if best.len() < beam || s > worst {
                    frontier.push(s);
                    best.push(Worst(std::cmp::Reverse(s)));
                    if best.len() > beam {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|w| w.0 .0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Top-`k` with the index's default query beam.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit<L>>> {
        self.top_k_with_beam(query, k, self.params.query_beam)
    }

    /// Top-`k` with an explicit query beam (at least `k` is used).
    pub fn top_k_with_beam(&self, query: &[f64], k: usize, beam: usize) -> Result<Vec<Hit<L>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = linalg::normalized(query);
        let zero_query = q.iter().all(|&x| x == 0.0);
        if !self.uses_graph() || zero_query {
            let hits: Vec<Hit<L>> = (0..self.labels.len() as u32)
                .map(|i| Hit {
                    label: self.labels[i as usize].clone(),
                    cosine: self.sim(i, &q),
                })
                .collect();
            return Ok(select_top(hits, k));
        }
        let qc: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let mut ep = Scored {
            sim: self.csim(self.entry, &qc),
            node: self.entry,
        };
        for lc in (1..=self.max_level).rev() {
            ep = self.greedy(&qc, ep, lc);
        }
        let mut visited = Visited::new(self.labels.len());
        let found = self.search_layer(&qc, &[ep], beam.max(k), 0, &mut visited);
        let hits: Vec<Hit<L>> = found
            .into_iter()
            .map(|s| Hit {
                label: self.labels[s.node as usize].clone(),
                cosine: self.sim(s.node, &q),
            })
            .collect();
        Ok(select_top(hits, k))
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl<L: Ord + Clone + Serialize + DeserializeOwned> AtomIndex<L> {
    /// Write the built index, keyed by the atom-table hash it was built from.
    pub fn save(&self, path: impl AsRef<Path>, atom_hash: &str) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        let header = serde_json::to_vec(&(atom_hash, &self.params, self.dim, self.entry, self.max_level))?;
        write_u64(&mut w, header.len() as u64).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        let labels = serde_json::to_vec(&self.labels)?;
        write_u64(&mut w, labels.len() as u64).map_err(io)?;
        w.write_all(&labels).map_err(io)?;
        write_u64(&mut w, self.vectors.len() as u64).map_err(io)?;
        for x in &self.vectors {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        write_u64(&mut w, self.links.len() as u64).map_err(io)?;
        for node in &self.links {
            write_u64(&mut w, node.len() as u64).map_err(io)?;
            for level in node {
                write_u64(&mut w, level.len() as u64).map_err(io)?;
                for &m in level {
                    w.write_all(&m.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    /// Load a cached index; stale if the stored atom hash differs.
    pub fn load(path: impl AsRef<Path>, expected_hash: &str) -> Result<Self> {
        let path = path.as_ref();
        let stale = |m: String| Error::StaleIndexCache(m);
        let io = |e: std::io::Error| Error::StaleIndexCache(format!("{}: {e}", path.display()));
        let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(stale("bad magic bytes".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver).map_err(io)?;
        if u32::from_le_bytes(ver) != FORMAT_VERSION {
            return Err(stale("unsupported format version".into()));
        }
        let header = read_bytes(&mut r).map_err(io)?;
        let (hash, params, dim, entry, max_level): (String, IndexParams, usize, u32, usize) =
            serde_json::from_slice(&header)?;
        if hash != expected_hash {
            return Err(stale(format!("atom hash {hash} does not match {expected_hash}")));
        }
        let labels: Vec<L> = serde_json::from_slice(&read_bytes(&mut r).map_err(io)?)?;
        let nv = read_u64(&mut r).map_err(io)? as usize;
        let mut vectors = Vec::with_capacity(nv);
        let mut b = [0u8; 8];
        for _ in 0..nv {
            r.read_exact(&mut b).map_err(io)?;
            vectors.push(f64::from_le_bytes(b));
        }
        let nn = read_u64(&mut r).map_err(io)? as usize;
        let mut links = Vec::with_capacity(nn);
        let mut b4 = [0u8; 4];
        for _ in 0..nn {
            let levels = read_u64(&mut r).map_err(io)? as usize;
            let mut node = Vec::with_capacity(levels);
            for _ in 0..levels {
                let len = read_u64(&mut r).map_err(io)? as usize;
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    r.read_exact(&mut b4).map_err(io)?;
                    list.push(u32::from_le_bytes(b4));
                }
                node.push(list);
            }
            links.push(node);
        }
        if vectors.len() != labels.len() * dim {
            return Err(stale("vector payload size mismatch".into()));
        }
        let coarse = if links.is_empty() {
            Vec::new()
        } else {
            vectors.iter().map(|&x| x as f32).collect()
        };
        Ok(Self {
            params,
            dim,
            labels,
            vectors,
            coarse,
            links,
            entry,
            max_level,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsa::sample_concept_vectors;

    fn items(n: usize, dim: usize, seed: u64) -> Vec<(u32, Vec<f64>)> {
        sample_concept_vectors(n, dim, seed)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as u32, v.into_inner()))
            .collect()
    }

    #[test]
    fn tiny_index_is_exact() {
        let it = items(10, 32, 1);
        let idx = AtomIndex::build(it.clone(), IndexParams::default()).unwrap();
        let q = &it[3].1;
        let hits = idx.top_k(q, 20).unwrap();
        assert_eq!(hits.len(), 10);
        assert_eq!(hits[0].label, 3);
        assert!((hits[0].cosine - 1.0).abs() < 1e-6);
        let oracle = brute_force_top_k(it.iter().map(|(l, v)| (l, v.as_slice())), q, 20);
        assert_eq!(hits, oracle);
    }

    #[test]
    fn zero_query_orders_by_label() {
        let it = items(5, 16, 2);
        let oracle = brute_force_top_k(it.iter().map(|(l, v)| (l, v.as_slice())), &[0.0; 16], 5);
        assert!(oracle.iter().all(|h| h.cosine == 0.0));
        assert_eq!(oracle.iter().map(|h| h.label).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        let idx = AtomIndex::build(it, IndexParams::default()).unwrap();
        assert_eq!(idx.top_k(&[0.0; 16], 5).unwrap(), oracle);
    }

    #[test]
    fn argument_errors() {
        assert!(AtomIndex::<u32>::build(Vec::new(), IndexParams::default()).is_err());
        let bad = vec![(0u32, vec![1.0, 0.0]), (1, vec![1.0])];
        assert!(matches!(
            AtomIndex::build(bad, IndexParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let idx = AtomIndex::build(items(3, 8, 0), IndexParams::default()).unwrap();
        assert!(idx.top_k(&[1.0; 8], 0).is_err());
    }

    #[test]
    fn graph_index_is_deterministic_and_cacheable() {
        let params = IndexParams {
            exhaustive_below: 100,
            ..Default::default()
        };
        let it = items(2000, 24, 3);
        let a = AtomIndex::build(it.clone(), params).unwrap();
        let b = AtomIndex::build(it.clone(), params).unwrap();
        assert!(a.uses_graph());
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.vlix");
        a.save(&p, "abc").unwrap();
        assert_eq!(AtomIndex::<u32>::load(&p, "abc").unwrap(), a);
        assert!(matches!(AtomIndex::<u32>::load(&p, "def"), Err(Error::StaleIndexCache(_))));
    }
}
