//! Circuit graphs assembled from explanations: atoms feed the neurons they
//! explain, and MLP outputs optionally link to token unembedding directions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::explain::Explanation;
use crate::forward::{logit_delta, AblationSpec, LogitDelta};
use crate::linalg;
use crate::vsa::Sign;
use crate::weights::{AtomLabel, AtomTable, FoldedModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Token { id: u32 },
    AttnOut { layer: u16, head: u16, dim: u16 },
    Mlp { layer: u16, neuron: u16 },
    Unembed { id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Token,
    AttnOut,
    Mlp,
    Unembed,
}

impl Node {
    /// The node that produces an atom's direction.
    pub fn from_atom(label: AtomLabel) -> Self {
        match label {
            AtomLabel::Token { id } => Node::Token { id },
            AtomLabel::AttnOut { layer, head, dim } => Node::AttnOut { layer, head, dim },
            AtomLabel::MlpOut { layer, neuron } => Node::Mlp { layer, neuron },
        }
    }

    pub fn mlp(layer: usize, neuron: usize) -> Self {
        Node::Mlp {
            layer: layer as u16,
            neuron: neuron as u16,
        }
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            Node::Token { .. } => NodeKind::Token,
            Node::AttnOut { .. } => NodeKind::AttnOut,
            Node::Mlp { .. } => NodeKind::Mlp,
            Node::Unembed { .. } => NodeKind::Unembed,
        }
    }

    /// Slot in the block order: embedding 0, attention of layer `l` at
    /// `2l+1`, MLP of layer `l` at `2l+2`, unembedding last.
    pub fn position(&self, n_layers: usize) -> usize {
        match *self {
            Node::Token { .. } => 0,
            Node::AttnOut { layer, .. } => 2 * usize::from(layer) + 1,
            Node::Mlp { layer, .. } => 2 * usize::from(layer) + 2,
            Node::Unembed { .. } => 2 * n_layers + 1,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Token { id } => write!(f, "tok:{id}"),
            Node::AttnOut { layer, head, dim } => write!(f, "attn:{layer}.{head}.{dim}"),
            Node::Mlp { layer, neuron } => write!(f, "mlp:{layer}.{neuron}"),
            Node::Unembed { id } => write!(f, "unembed:{id}"),
        }
    }
}

impl FromStr for Node {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix("unembed:") {
            return id
                .parse()
                .map(|id| Node::Unembed { id })
                .map_err(|_| Error::UnknownNode(s.to_string()));
        }
        let label: AtomLabel = s.parse().map_err(|_| Error::UnknownNode(s.to_string()))?;
        Ok(Node::from_atom(label))
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: Node,
    pub target: Node,
    pub sign: Sign,
    pub cos: f64,
}

/// Settings for links from MLP outputs to unembedding directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnembedLinks {
    pub min_cos: f64,
    /// Keep at most this many tokens per neuron, by `|cos|`.
    pub top_k: usize,
}

/// Immutable once built. Nodes and edges are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGraph {
    n_layers: usize,
    config_hash: Option<String>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: Node,
    kind: NodeKind,
    position: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphDump {
    schema_version: u32,
    config_hash: Option<String>,
    n_layers: usize,
    nodes: Vec<NodeRecord>,
    edges: Vec<Edge>,
}

impl CircuitGraph {
    pub fn empty(n_layers: usize) -> Self {
        Self {
            n_layers,
            config_hash: None,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    fn assemble(n_layers: usize, config_hash: Option<String>, mut edges: Vec<Edge>, extra: &[Node]) -> Self {
        edges.sort_by(|a, b| (a.source, a.target).cmp(&(b.source, b.target)));
        let mut nodes: BTreeSet<Node> = extra.iter().copied().collect();
        for e in &edges {
            nodes.insert(e.source);
            nodes.insert(e.target);
        }
        Self {
            n_layers,
            config_hash,
            nodes: nodes.into_iter().collect(),
            edges,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, node: &Node) -> bool {
        self.nodes.binary_search(node).is_ok()
    }

    pub fn to_json(&self) -> Result<String> {
        let dump = GraphDump {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            n_layers: self.n_layers,
            nodes: self
                .nodes
                .iter()
                .map(|&n| NodeRecord {
                    id: n,
                    kind: n.kind(),
                    position: n.position(self.n_layers),
                })
                .collect(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: GraphDump = serde_json::from_str(s)?;
        if dump.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported graph schema version {}",
                dump.schema_version
            )));
        }
        let nodes: Vec<Node> = dump.nodes.iter().map(|r| r.id).collect();
        Ok(Self::assemble(dump.n_layers, dump.config_hash, dump.edges, &nodes))
    }
}

/// One edge per explanation member, from the atom's producing node to the
/// explained neuron; optionally MLP-output-to-unembedding links.
pub fn build_graph(
    explanations: &[Explanation],
    n_layers: usize,
    unembed: Option<(UnembedLinks, &AtomTable)>,
) -> Result<CircuitGraph> {
    let Some(first) = explanations.first() else {
        return Ok(CircuitGraph::empty(n_layers));
    };
    let hash = first.config_hash.clone();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    let mut explained = Vec::new();
    for e in explanations {
        if e.config_hash != hash {
            return Err(Error::ConfigMismatch(hash, e.config_hash.clone()));
        }
        if e.neuron.layer >= n_layers {
            return Err(Error::InvalidArgument(format!(
                "neuron {}.{} outside a {n_layers}-layer model",
                e.neuron.layer, e.neuron.index
            )));
        }
        if !seen.insert(e.neuron) {
            return Err(Error::InvalidArgument(format!(
                "neuron {}.{} explained twice",
                e.neuron.layer, e.neuron.index
            )));
        }
        let target = Node::mlp(e.neuron.layer, e.neuron.index);
        explained.push(target);
        for m in &e.members {
            let source = Node::from_atom(m.label);
            if source.position(n_layers) >= target.position(n_layers) {
                return Err(Error::InvalidArgument(format!("edge {source} -> {target} violates layer order")));
            }
            edges.push(Edge {
                source,
                target,
                sign: m.sign,
                cos: m.cos,
            });
        }
    }
    let mut graph = CircuitGraph::assemble(n_layers, Some(hash.clone()), edges, &explained);
    if let Some((links, table)) = unembed {
        let extra = unembed_edges(&graph, links, table)?;
        let mut edges = graph.edges;
        edges.extend(extra);
        graph = CircuitGraph::assemble(n_layers, Some(hash), edges, &graph.nodes);
    }
    Ok(graph)
}

fn unembed_edges(graph: &CircuitGraph, links: UnembedLinks, table: &AtomTable) -> Result<Vec<Edge>> {
    let tokens: Vec<(u32, Vec<f64>)> = table
        .atoms()
        .iter()
        .filter_map(|a| match a.label {
            AtomLabel::Token { id } => Some((id, a.unit())),
            _ => None,
        })
        .collect();
    let mlps: Vec<Node> = graph.nodes.iter().copied().filter(|n| n.kind() == NodeKind::Mlp).collect();
    let per_node: Vec<Vec<Edge>> = mlps
        .par_iter()
        .map(|&node| {
            let Node::Mlp { layer, neuron } = node else { unreachable!() };
            let label = AtomLabel::MlpOut { layer, neuron };
            let i = table.index_of(&label).ok_or_else(|| Error::UnknownNode(label.to_string()))?;
            let out = table.get(i).unit();
            let mut hits: Vec<(u32, f64)> = tokens
                .iter()
                .map(|(id, t)| (*id, linalg::dot(&out, t)))
                .filter(|(_, c)| c.abs() >= links.min_cos)
                .collect();
            hits.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            hits.truncate(links.top_k);
            Ok(hits
                .into_iter()
                .map(|(id, cos)| Edge {
                    source: node,
                    target: Node::Unembed { id },
                    sign: Sign::of(cos),
                    cos,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_node.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upstream,
    Downstream,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upstream" | "up" => Ok(Direction::Upstream),
            "downstream" | "down" => Ok(Direction::Downstream),
            _ => Err(Error::InvalidArgument(format!("unknown direction `{s}`"))),
        }
    }
}

/// Subgraph reachable from `start` within `depth` hops along `direction`.
pub fn trace(graph: &CircuitGraph, start: Node, depth: usize, direction: Direction) -> Result<CircuitGraph> {
    if !graph.contains(&start) {
        return Err(Error::UnknownNode(start.to_string()));
    }
    let mut adjacency: BTreeMap<Node, Vec<usize>> = BTreeMap::new();
    for (i, e) in graph.edges.iter().enumerate() {
        let key = match direction {
            Direction::Upstream => e.target,
            Direction::Downstream => e.source,
        };
        adjacency.entry(key).or_default().push(i);
    }
    let mut dist = BTreeMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    let mut kept = BTreeSet::new();
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        if d == depth {
            continue;
        }
        for &i in adjacency.get(&n).map(Vec::as_slice).unwrap_or_default() {
            let e = &graph.edges[i];
            let next = match direction {
                Direction::Upstream => e.source,
                Direction::Downstream => e.target,
            };
            kept.insert(i);
            if !dist.contains_key(&next) {
                dist.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    let edges = kept.into_iter().map(|i| graph.edges[i].clone()).collect();
    Ok(CircuitGraph::assemble(graph.n_layers, graph.config_hash.clone(), edges, &[start]))
}

fn node_shape(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Token => "box",
        NodeKind::AttnOut => "diamond",
        NodeKind::Mlp => "ellipse",
        NodeKind::Unembed => "doubleoctagon",
    }
}

/// Graphviz text. Negative edges are dashed; labels are cosines to 2 places.
pub fn to_dot(graph: &CircuitGraph) -> String {
    if graph.nodes.is_empty() {
        return "digraph {}\n".to_string();
    }
    let mut s = String::from("digraph {\n  rankdir=LR;\n");
    for n in &graph.nodes {
        let _ = writeln!(s, "  \"{n}\" [shape={}];", node_shape(n.kind()));
    }
    for e in &graph.edges {
        let style = if e.sign == Sign::Minus { ", style=dashed" } else { "" };
        let _ = writeln!(s, "  \"{}\" -> \"{}\" [label=\"{:.2}\"{style}];", e.source, e.target, e.cos);
    }
    s.push_str("}\n");
    s
}

pub fn export_dot(graph: &CircuitGraph, path: &Path) -> Result<()> {
    std::fs::write(path, to_dot(graph)).map_err(|e| Error::io(path, e))
}

/// Recompute an edge's cosine from the atom table: atom against the target
/// neuron's centered input weight, or MLP output against a token direction.
pub fn recompute_edge_cos(model: &FoldedModel, table: &AtomTable, edge: &Edge) -> Result<f64> {
    let atom_of = |n: Node| -> Result<Vec<f64>> {
        let label = match n {
            Node::Token { id } | Node::Unembed { id } => AtomLabel::Token { id },
            Node::AttnOut { layer, head, dim } => AtomLabel::AttnOut { layer, head, dim },
            Node::Mlp { layer, neuron } => AtomLabel::MlpOut { layer, neuron },
        };
        let i = table.index_of(&label).ok_or_else(|| Error::UnknownNode(n.to_string()))?;
        Ok(table.get(i).vector.clone())
    };
    let source = atom_of(edge.source)?;
    let target = match edge.target {
        Node::Mlp { layer, neuron } => {
            let lw = model
                .layers
                .get(usize::from(layer))
                .ok_or_else(|| Error::UnknownNode(edge.target.to_string()))?;
            linalg::centered(&lw.neuron_input(usize::from(neuron)))
        }
        Node::Unembed { .. } => atom_of(edge.target)?,
        other => return Err(Error::InvalidArgument(format!("{other} cannot be an edge target"))),
    };
    Ok(linalg::cosine(&source, &target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeVerification {
    pub neuron: Node,
    pub target_token: u32,
    pub deltas: Vec<LogitDelta>,
    pub negative: usize,
    pub non_negative: usize,
}

/// Zero the neuron's activation and report the target-logit change per prompt.
pub fn verify_edge(model: &FoldedModel, neuron: Node, target_token: u32, prompts: &[Vec<u32>]) -> Result<EdgeVerification> {
    let Node::Mlp { layer, neuron: index } = neuron else {
        return Err(Error::InvalidArgument(format!("{neuron} is not an MLP neuron")));
    };
    let spec = AblationSpec::zero(usize::from(layer), usize::from(index));
    let deltas = prompts
        .iter()
        .map(|p| logit_delta(model, p, target_token, &spec))
        .collect::<Result<Vec<_>>>()?;
    let negative = deltas.iter().filter(|d| d.delta < 0.0).count();
    Ok(EdgeVerification {
        neuron,
        target_token,
        non_negative: deltas.len() - negative,
        deltas,
        negative,
    })
}
