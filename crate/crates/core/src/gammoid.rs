//! Influence graphs and gammoids.
//!
//! A gammoid `(L, g, Z)` declares a subset `S` of the ground set `L` independent
//! when `S` can be linked into the output set `Z` by mutually node-disjoint
//! directed paths. Linkedness is decided with a unit-capacity max-flow on the
//! node-split graph, which also yields the witnessing path family.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GammoidError {
    #[error("graph must contain at least one node")]
    EmptyGraph,
    #[error("node id {node} out of range for a graph with {node_count} nodes")]
    InvalidNode { node: NodeId, node_count: usize },
    #[error("duplicate edge {source_node} -> {target}")]
    DuplicateEdge { source_node: NodeId, target: NodeId },
    #[error("non-finite weight on edge {source_node} -> {target}")]
    NonFiniteWeight { source_node: NodeId, target: NodeId },
    #[error("node {node} listed twice in the {set} set")]
    DuplicateMember { node: NodeId, set: &'static str },
    #[error("node {node} is not in the ground set")]
    NotInGroundSet { node: NodeId },
    #[error("missing edge {source_node} -> {target}")]
    MissingEdge { source_node: NodeId, target: NodeId },
    #[error("cannot concatenate: output set has {outputs} nodes but the second ground set has {inputs}")]
    CardinalityMismatch { outputs: usize, inputs: usize },
    #[error("spark enumeration budget {budget} exhausted; every subset of size <= {budget} is independent, so spark >= {lower_bound}")]
    BudgetExceeded { budget: usize, lower_bound: usize },
}

pub type Result<T> = std::result::Result<T, GammoidError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub weight: f64,
}

/// Weighted digraph of state interactions. The edge `j -> i` carries the
/// Jacobian entry `df_i/dx_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceGraph {
    node_count: usize,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    // summed weight per (source, target); sums only differ from the single
    // weight in multigraphs
    index: HashMap<(NodeId, NodeId), f64>,
    parallel: bool,
}

impl InfluenceGraph {
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::build(node_count, edges, false)
    }

    /// Multigraph variant: parallel edges are kept and `weight` returns their sum.
    /// Concatenated gammoids need this when a fused node carries edges from both sides.
    pub fn with_parallel_edges(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::build(node_count, edges, true)
    }

    fn build(node_count: usize, edges: Vec<Edge>, parallel: bool) -> Result<Self> {
        if node_count == 0 {
            return Err(GammoidError::EmptyGraph);
        }
        let mut out_edges = vec![Vec::new(); node_count];
        let mut index = HashMap::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            for node in [e.source, e.target] {
                if node >= node_count {
                    return Err(GammoidError::InvalidNode { node, node_count });
                }
            }
            if !e.weight.is_finite() {
                return Err(GammoidError::NonFiniteWeight {
                    source_node: e.source,
                    target: e.target,
                });
            }
            match index.entry((e.source, e.target)) {
                std::collections::hash_map::Entry::Occupied(mut slot) if parallel => {
                    *slot.get_mut() += e.weight;
                }
                std::collections::hash_map::Entry::Occupied(_) => {
                    return Err(GammoidError::DuplicateEdge {
                        source_node: e.source,
                        target: e.target,
                    });
                }
                std::collections::hash_map::Entry::Vacant(slot) => {
                    slot.insert(e.weight);
                }
            }
            out_edges[e.source].push(k);
        }
        Ok(Self {
            node_count,
            edges,
            out_edges,
            index,
            parallel,
        })
    }

    /// Builds the graph of a square state matrix: edge `j -> i` iff `a[(i, j)] != 0`.
    pub fn from_state_matrix(a: &nalgebra::DMatrix<f64>) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols(), "state matrix must be square");
        let n = a.nrows();
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let w = a[(i, j)];
                if w != 0.0 {
                    edges.push(Edge {
                        source: j,
                        target: i,
                        weight: w,
                    });
                }
            }
        }
        Self::new(n, edges)
    }

    /// Dense matrix with `m[(i, j)]` equal to the weight of `j -> i`.
    pub fn state_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.node_count, self.node_count);
        for e in &self.edges {
            m[(e.target, e.source)] = e.weight;
        }
        m
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weight(&self, source: NodeId, target: NodeId) -> Option<f64> {
        self.index.get(&(source, target)).copied()
    }

    pub fn successors(&self, node: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.out_edges[node].iter().map(move |&k| {
            let e = &self.edges[k];
            (e.target, e.weight)
        })
    }

    /// Flips every edge, keeping its weight.
    pub fn transposed(&self) -> Self {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                source: e.target,
                target: e.source,
                weight: e.weight,
            })
            .collect();
        Self::build(self.node_count, edges, self.parallel).expect("transpose of a valid graph is valid")
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node >= self.node_count {
            Err(GammoidError::InvalidNode {
                node,
                node_count: self.node_count,
            })
        } else {
            Ok(())
        }
    }
}

/// Product of the edge weights along `path`; a single-node path weighs 1.
pub fn path_weight(graph: &InfluenceGraph, path: &[NodeId]) -> Result<f64> {
    for &v in path {
        graph.check_node(v)?;
    }
    path.windows(2).try_fold(1.0, |acc, pair| {
        graph
            .weight(pair[0], pair[1])
            .map(|w| acc * w)
            .ok_or(GammoidError::MissingEdge {
                source_node: pair[0],
                target: pair[1],
            })
    })
}

/// Sum of the individual path weights of a path set.
pub fn path_set_weight<P: AsRef<[NodeId]>>(graph: &InfluenceGraph, paths: &[P]) -> Result<f64> {
    paths
        .iter()
        .map(|p| path_weight(graph, p.as_ref()))
        .sum()
}

/// Mutually node-disjoint directed paths, one per linked start node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathFamily {
    pub paths: Vec<Vec<NodeId>>,
}

impl PathFamily {
    /// Checks disjointness, edge existence and endpoints against `starts` / `ends`.
    pub fn verify(&self, graph: &InfluenceGraph, starts: &[NodeId], ends: &[NodeId]) -> bool {
        let mut seen = BTreeSet::new();
        let mut start_nodes = BTreeSet::new();
        for p in &self.paths {
            let (Some(&first), Some(&last)) = (p.first(), p.last()) else {
                return false;
            };
            if !starts.contains(&first) || !ends.contains(&last) {
                return false;
            }
            if !start_nodes.insert(first) {
                return false;
            }
            for &v in p {
                if !seen.insert(v) {
                    return false;
                }
            }
            if path_weight(graph, p).is_err() {
                return false;
            }
        }
        true
    }
}

/// Result of a spark computation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spark {
    /// Smallest dependent subset found; `size` is the spark.
    Circuit { size: usize, witness: Vec<NodeId> },
    /// Every subset of the ground set is independent; spark is `card(L) + 1`.
    ExceedsGroundSet { ground_set_size: usize },
}

impl Spark {
    pub fn value(&self) -> usize {
        match self {
            Spark::Circuit { size, .. } => *size,
            Spark::ExceedsGroundSet { ground_set_size } => ground_set_size + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gammoid {
    graph: InfluenceGraph,
    ground_set: Vec<NodeId>,
    output_set: Vec<NodeId>,
}

impl Gammoid {
    pub fn new(graph: InfluenceGraph, ground_set: Vec<NodeId>, output_set: Vec<NodeId>) -> Result<Self> {
        check_set(&graph, &ground_set, "ground")?;
        check_set(&graph, &output_set, "output")?;
        Ok(Self {
            graph,
            ground_set,
            output_set,
        })
    }

    pub fn graph(&self) -> &InfluenceGraph {
        &self.graph
    }

    pub fn ground_set(&self) -> &[NodeId] {
        &self.ground_set
    }

    pub fn output_set(&self) -> &[NodeId] {
        &self.output_set
    }

    fn check_subset(&self, s: &[NodeId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &v in s {
            self.graph().check_node(v)?;
            if !self.ground_set.contains(&v) {
                return Err(GammoidError::NotInGroundSet { node: v });
            }
            if !seen.insert(v) {
                return Err(GammoidError::DuplicateMember { node: v, set: "query" });
            }
        }
        Ok(())
    }

    /// Returns a witness family when `s` is linked into the output set.
    pub fn linking(&self, s: &[NodeId]) -> Result<Option<PathFamily>> {
        self.check_subset(s)?;
        let mut net = SplitNetwork::build(self.graph(), s, &self.output_set);
        let flow = net.max_flow();
        if flow < s.len() {
            return Ok(None);
        }
        Ok(Some(net.decode_paths(s)))
    }

    pub fn is_linked(&self, s: &[NodeId]) -> Result<bool> {
        self.check_subset(s)?;
        Ok(self.flow_value(s) == s.len())
    }

    /// Matroid rank: the maximum number of node-disjoint paths from `s` into the outputs.
    pub fn rank(&self, s: &[NodeId]) -> Result<usize> {
        self.check_subset(s)?;
        Ok(self.flow_value(s))
    }

    pub fn nullity(&self, s: &[NodeId]) -> Result<usize> {
        Ok(s.len() - self.rank(s)?)
    }

    fn flow_value(&self, s: &[NodeId]) -> usize {
        if s.is_empty() {
            return 0;
        }
        SplitNetwork::build(self.graph(), s, &self.output_set).max_flow()
    }

    /// Exact spark by ascending subset enumeration.
    ///
    /// `budget` caps the largest subset size that is enumerated; the default is
    /// `card(Z) + 1`, beyond which every subset is dependent anyway.
    pub fn spark(&self, budget: Option<usize>) -> Result<Spark> {
        let l = self.ground_set.len();
        let z = self.output_set.len();
        let budget = budget.unwrap_or(z + 1);
        for r in 1..=l {
            if r > z {
                // more start nodes than outputs: no linking possible
                return Ok(Spark::Circuit {
                    size: r,
                    witness: self.ground_set[..r].to_vec(),
                });
            }
            if r > budget {
                return Err(GammoidError::BudgetExceeded {
                    budget,
                    lower_bound: budget + 1,
                });
            }
            if let Some(witness) = self.first_dependent_of_size(r) {
                return Ok(Spark::Circuit { size: r, witness });
            }
        }
        Ok(Spark::ExceedsGroundSet { ground_set_size: l })
    }

    /// First dependent subset of size `r` in colexicographic order of ground-set positions.
    fn first_dependent_of_size(&self, r: usize) -> Option<Vec<NodeId>> {
        const BLOCK: usize = 2048;
        let mut subsets = Colex::new(self.ground_set.len(), r);
        loop {
            let block: Vec<Vec<usize>> = subsets.by_ref().take(BLOCK).collect();
            if block.is_empty() {
                return None;
            }
            let hit = block.par_iter().position_first(|idx| {
                let s: Vec<NodeId> = idx.iter().map(|&k| self.ground_set[k]).collect();
                self.flow_value(&s) < r
            });
            if let Some(pos) = hit {
                return Some(block[pos].iter().map(|&k| self.ground_set[k]).collect());
            }
        }
    }

    /// Flipped graph with ground set `Z` and output set `L`.
    pub fn transpose(&self) -> Gammoid {
        Gammoid::new(
            self.graph().transposed(),
            self.output_set.clone(),
            self.ground_set.clone(),
        )
        .expect("transpose of a valid gammoid is valid")
    }

    /// Fuses the i-th output of `self` with the i-th ground node of `other`.
    pub fn concatenate(&self, other: &Gammoid) -> Result<Concatenation> {
        let p = self.output_set.len();
        if p != other.ground_set.len() {
            return Err(GammoidError::CardinalityMismatch {
                outputs: p,
                inputs: other.ground_set.len(),
            });
        }
        let n1 = self.graph().node_count();
        let n2 = other.graph().node_count();
        let mut second_node_map = vec![usize::MAX; n2];
        for (i, &l) in other.ground_set.iter().enumerate() {
            second_node_map[l] = self.output_set[i];
        }
        let mut next = n1;
        for slot in second_node_map.iter_mut() {
            if *slot == usize::MAX {
                *slot = next;
                next += 1;
            }
        }
        let mut edges = self.graph().edges().to_vec();
        let first_edge_count = edges.len();
        edges.extend(other.graph().edges().iter().map(|e| Edge {
            source: second_node_map[e.source],
            target: second_node_map[e.target],
            weight: e.weight,
        }));
        let graph = InfluenceGraph::with_parallel_edges(next, edges)?;
        let output_set = other
            .output_set
            .iter()
            .map(|&v| second_node_map[v])
            .collect();
        let gammoid = Gammoid::new(graph, self.ground_set.clone(), output_set)?;
        Ok(Concatenation {
            gammoid,
            second_node_map,
            first_edge_count,
            fused: self.output_set.clone(),
        })
    }
}

/// The gammoid `Γ∘Γ'` plus bookkeeping on where its pieces came from.
#[derive(Debug, Clone)]
pub struct Concatenation {
    pub gammoid: Gammoid,
    /// Node id in the fused graph of every node of the second gammoid.
    pub second_node_map: Vec<NodeId>,
    /// Edges `[0, first_edge_count)` come from the first gammoid, the rest from the second.
    pub first_edge_count: usize,
    /// Fused nodes (outputs of the first gammoid).
    pub fused: Vec<NodeId>,
}

fn check_set(graph: &InfluenceGraph, set: &[NodeId], name: &'static str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &v in set {
        graph.check_node(v)?;
        if !seen.insert(v) {
            return Err(GammoidError::DuplicateMember { node: v, set: name });
        }
    }
    Ok(())
}

/// Colexicographic enumeration of `r`-subsets of `0..n`.
struct Colex {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Colex {
    fn new(n: usize, r: usize) -> Self {
        let current = (r <= n).then(|| (0..r).collect());
        Self { n, current }
    }
}

impl Iterator for Colex {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let c = self.current.as_mut().unwrap();
        let r = c.len();
        // smallest i whose entry can grow without colliding with its successor
        let mut i = 0;
        while i < r {
            let limit = if i + 1 < r { c[i + 1] } else { self.n };
            if c[i] + 1 < limit {
                break;
            }
            i += 1;
        }
        if i == r {
            self.current = None;
        } else {
            c[i] += 1;
            for (j, slot) in c.iter_mut().enumerate().take(i) {
                *slot = j;
            }
        }
        Some(out)
    }
}

/// Unit-capacity flow network on the node-split graph.
///
/// Node `v` becomes `2v` (in) and `2v + 1` (out) joined by a capacity-1 arc;
/// the super source and sink are the last two vertices.
struct SplitNetwork {
    head: Vec<usize>,
    cap: Vec<u8>,
    adj: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl SplitNetwork {
    fn build(graph: &InfluenceGraph, starts: &[NodeId], ends: &[NodeId]) -> Self {
        let n = graph.node_count();
        let vertices = 2 * n + 2;
        let mut net = Self {
            head: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); vertices],
            source: 2 * n,
            sink: 2 * n + 1,
        };
        for v in 0..n {
            net.add_arc(2 * v, 2 * v + 1);
        }
        for e in graph.edges() {
            if e.source != e.target {
                net.add_arc(2 * e.source + 1, 2 * e.target);
            }
        }
        for &s in starts {
            net.add_arc(net.source, 2 * s);
        }
        for &z in ends {
            net.add_arc(2 * z + 1, net.sink);
        }
        net
    }

    fn add_arc(&mut self, from: usize, to: usize) {
        self.adj[from].push(self.head.len());
        self.head.push(to);
        self.cap.push(1);
        self.adj[to].push(self.head.len());
        self.head.push(from);
        self.cap.push(0);
    }

    /// Edmonds-Karp with BFS augmenting paths; every augmentation adds one unit.
    fn max_flow(&mut self) -> usize {
        let mut flow = 0;
        let nv = self.adj.len();
        let mut parent_arc = vec![usize::MAX; nv];
        loop {
            parent_arc.iter_mut().for_each(|p| *p = usize::MAX);
            let mut queue = VecDeque::from([self.source]);
            let mut reached = false;
            while let Some(u) = queue.pop_front() {
                for &a in &self.adj[u] {
                    let v = self.head[a];
                    if self.cap[a] > 0 && v != self.source && parent_arc[v] == usize::MAX {
                        parent_arc[v] = a;
                        if v == self.sink {
                            reached = true;
                            break;
                        }
                        queue.push_back(v);
                    }
                }
                if reached {
                    break;
                }
            }
            if !reached {
                return flow;
            }
            let mut v = self.sink;
            while v != self.source {
                let a = parent_arc[v];
                self.cap[a] -= 1;
                self.cap[a ^ 1] += 1;
                v = self.head[a ^ 1];
            }
            flow += 1;
        }
    }

    /// Follows saturated forward arcs from each start node to the sink.
    fn decode_paths(&self, starts: &[NodeId]) -> PathFamily {
        let carries = |a: usize| a % 2 == 0 && self.cap[a] == 0;
        let mut paths = Vec::with_capacity(starts.len());
        for &s in starts {
            let mut path = vec![s];
            let mut v = s;
            loop {
                let out = 2 * v + 1;
                let next = self.adj[out]
                    .iter()
                    .copied()
                    .find(|&a| carries(a))
                    .map(|a| self.head[a])
                    .expect("flow conservation on a unit node");
                if next == self.sink {
                    break;
                }
                v = next / 2;
                path.push(v);
            }
            paths.push(path);
        }
        PathFamily { paths }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> InfluenceGraph {
        InfluenceGraph::new(
            n,
            edges
                .iter()
                .map(|&(source, target, weight)| Edge {
                    source,
                    target,
                    weight,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn chain_is_linked_with_witness() {
        let g = Gammoid::new(graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]), vec![0], vec![2]).unwrap();
        let fam = g.linking(&[0]).unwrap().unwrap();
        assert_eq!(fam.paths, vec![vec![0, 1, 2]]);
        assert!(fam.verify(g.graph(), &[0], &[2]));
    }

    #[test]
    fn fan_in_is_dependent() {
        let g = Gammoid::new(graph(3, &[(0, 2, 1.0), (1, 2, 1.0)]), vec![0, 1], vec![2]).unwrap();
        assert!(!g.is_linked(&[0, 1]).unwrap());
        assert_eq!(g.rank(&[0, 1]).unwrap(), 1);
        assert_eq!(g.nullity(&[0, 1]).unwrap(), 1);
        assert_eq!(g.rank(&[]).unwrap(), 0);
        assert_eq!(g.spark(None).unwrap().value(), 2);
    }

    #[test]
    fn empty_set_is_vacuously_linked() {
        let g = Gammoid::new(graph(2, &[(0, 1, 1.0)]), vec![0], vec![1]).unwrap();
        assert_eq!(g.linking(&[]).unwrap().unwrap().paths.len(), 0);
    }

    #[test]
    fn parallel_edges_exceed_ground_set() {
        let g = Gammoid::new(graph(4, &[(0, 2, 1.0), (1, 3, 1.0)]), vec![0, 1], vec![2, 3]).unwrap();
        assert_eq!(
            g.spark(None).unwrap(),
            Spark::ExceedsGroundSet { ground_set_size: 2 }
        );
        assert_eq!(g.spark(None).unwrap().value(), 3);
    }

    #[test]
    fn sensor_in_ground_set_is_zero_length_path() {
        let g = Gammoid::new(graph(2, &[(0, 1, 1.0)]), vec![0, 1], vec![1]).unwrap();
        assert_eq!(g.linking(&[1]).unwrap().unwrap().paths, vec![vec![1]]);
        // node 1 is used by its own trivial path, so 0 cannot pass through it
        assert!(!g.is_linked(&[0, 1]).unwrap());
    }

    #[test]
    fn invalid_queries_are_rejected() {
        let g = Gammoid::new(graph(3, &[(0, 1, 1.0)]), vec![0, 1], vec![2]).unwrap();
        assert_eq!(
            g.rank(&[7]),
            Err(GammoidError::InvalidNode {
                node: 7,
                node_count: 3
            })
        );
        assert_eq!(g.rank(&[2]), Err(GammoidError::NotInGroundSet { node: 2 }));
        assert!(InfluenceGraph::new(2, vec![
            Edge { source: 0, target: 1, weight: 1.0 },
            Edge { source: 0, target: 1, weight: 2.0 },
        ])
        .is_err());
        assert!(Gammoid::new(graph(2, &[]), vec![0, 0], vec![1]).is_err());
    }

    #[test]
    fn spark_budget_reports_lower_bound() {
        // three inputs each with a private sensor: spark is the sentinel 4
        let g = Gammoid::new(
            graph(6, &[(0, 3, 1.0), (1, 4, 1.0), (2, 5, 1.0)]),
            vec![0, 1, 2],
            vec![3, 4, 5],
        )
        .unwrap();
        assert_eq!(
            g.spark(Some(2)),
            Err(GammoidError::BudgetExceeded {
                budget: 2,
                lower_bound: 3
            })
        );
        assert_eq!(g.spark(None).unwrap().value(), 4);
    }

    #[test]
    fn spark_ceiling_when_ground_set_exceeds_outputs() {
        let g = Gammoid::new(
            graph(4, &[(0, 3, 1.0), (1, 2, 1.0)]),
            vec![0, 1, 2],
            vec![2, 3],
        )
        .unwrap();
        // {1, 2} share node 2; colex order checks {0,1} then {0,2} then {1,2}
        match g.spark(None).unwrap() {
            Spark::Circuit { size, witness } => {
                assert_eq!(size, 2);
                assert_eq!(witness, vec![1, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn colex_order() {
        let all: Vec<_> = Colex::new(4, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 3],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(Colex::new(3, 0).count(), 1);
        assert_eq!(Colex::new(2, 3).count(), 0);
    }

    #[test]
    fn transpose_flips_chain() {
        let g = Gammoid::new(graph(3, &[(0, 1, 2.0), (1, 2, -3.0)]), vec![0], vec![2]).unwrap();
        let t = g.transpose();
        assert_eq!(t.ground_set(), &[2]);
        assert_eq!(t.output_set(), &[0]);
        assert_eq!(t.graph().weight(2, 1), Some(-3.0));
        assert_eq!(t.graph().weight(1, 0), Some(2.0));
        assert_eq!(t.transpose(), g);
    }

    #[test]
    fn concatenation_of_chain_with_its_transpose() {
        let g = Gammoid::new(graph(3, &[(0, 1, 2.0), (1, 2, -3.0)]), vec![0], vec![2]).unwrap();
        let cat = g.concatenate(&g.transpose()).unwrap();
        let gg = &cat.gammoid;
        assert_eq!(gg.graph().node_count(), 3 + 3 - 1);
        assert_eq!(gg.graph().edges().len(), 4);
        let one_prime = cat.second_node_map[0];
        let two_prime = cat.second_node_map[1];
        assert_eq!(gg.output_set(), &[one_prime]);
        let path = [0, 1, 2, two_prime, one_prime];
        assert_eq!(path_weight(gg.graph(), &path).unwrap(), 36.0);
        assert!(gg.is_linked(&[0]).unwrap());
        let mismatch = Gammoid::new(graph(2, &[]), vec![0, 1], vec![1]).unwrap();
        assert!(matches!(
            g.concatenate(&mismatch),
            Err(GammoidError::CardinalityMismatch { .. })
        ));
    }

    #[test]
    fn path_weights() {
        let g = graph(3, &[(0, 1, 2.0), (1, 2, -3.0)]);
        assert_eq!(path_weight(&g, &[1]).unwrap(), 1.0);
        assert_eq!(path_weight(&g, &[0, 1, 2]).unwrap(), -6.0);
        assert_eq!(path_set_weight(&g, &[vec![0, 1, 2], vec![0, 1]]).unwrap(), -4.0);
        assert!(matches!(
            path_weight(&g, &[2, 0]),
            Err(GammoidError::MissingEdge { .. })
        ));
    }

    #[test]
    fn state_matrix_round_trip() {
        let g = graph(3, &[(0, 1, 2.0), (1, 2, -3.0), (2, 2, -1.0)]);
        let a = g.state_matrix();
        assert_eq!(a[(1, 0)], 2.0);
        let back = InfluenceGraph::from_state_matrix(&a).unwrap();
        assert_eq!(back.state_matrix(), a);
    }
}
