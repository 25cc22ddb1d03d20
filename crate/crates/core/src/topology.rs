//! Communication graphs: the clique-chain family and its validation oracles.
//!
//! The main constructor is [`build_gnk`]: `n/k` cliques of size `k`, joined
//! by a perfect matching between consecutive cliques. With the identity
//! matching, the layer-`l` nodes of all cliques form an end-to-end path.
//! A connectivity oracle (unit-vertex-capacity max-flow) and an all-pairs
//! BFS diameter are provided for validation; both are test oracles, not
//! scalable routines.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

/// Hard cap for the connectivity oracle.
pub const CONNECTIVITY_ORACLE_BOUND: usize = 512;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} does not divide n = {n}")]
    KDoesNotDivideN { n: usize, k: usize },
    #[error("n must be positive")]
    EmptyGraph,
    #[error("graph has {0} nodes, above the connectivity oracle bound of {1}")]
    OracleBound(usize, usize),
    #[error("diameter requires a connected graph")]
    Disconnected,
    #[error("matching permutations: expected {expected} permutations of 0..{k}, got invalid entry")]
    BadMatching { expected: usize, k: usize },
    #[error("edge list parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Clique/layer labels for a clique-chain graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnkLabels {
    pub k: usize,
    /// Clique index per node, 0-based (clique `i` holds ids `i*k..(i+1)*k`).
    pub clique_of: Vec<u32>,
    /// Layer index per node, 0-based. Layer-`l` nodes form a path through
    /// the matchings.
    pub layer_of: Vec<u32>,
}

impl GnkLabels {
    pub fn clique_count(&self) -> usize {
        self.clique_of.len() / self.k
    }
}

/// An immutable undirected graph with optional clique-chain labels.
#[derive(Clone, Debug)]
pub struct Topology {
    node_count: usize,
    adjacency: Vec<Vec<u32>>,
    labels: Option<GnkLabels>,
}

impl Topology {
    /// Build from an edge list. Edges are deduplicated, self-loops rejected
    /// by debug assertion upstream; neighbor lists come out sorted.
    pub fn from_edges(n: usize, edges: &[(u32, u32)], labels: Option<GnkLabels>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            debug_assert_ne!(u, v, "self-loop");
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Topology {
            node_count: n,
            adjacency,
            labels,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn neighbors(&self, u: u32) -> &[u32] {
        &self.adjacency[u as usize]
    }

    pub fn degree(&self, u: u32) -> usize {
        self.adjacency[u as usize].len()
    }

    pub fn labels(&self) -> Option<&GnkLabels> {
        self.labels.as_ref()
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.adjacency[u as usize].binary_search(&v).is_ok()
    }

    /// BFS distances from `src`; `u32::MAX` marks unreachable nodes.
    pub fn bfs_distances(&self, src: u32) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.node_count];
        dist[src as usize] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            for &v in self.neighbors(u) {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return false;
        }
        self.bfs_distances(0).iter().all(|&d| d != u32::MAX)
    }

    /// Serialize to the plain edge-list text format: first line `n k`
    /// (k = 0 when unlabeled), then one `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let k = self.labels.as_ref().map_or(0, |l| l.k);
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.node_count, k);
        for u in 0..self.node_count as u32 {
            for &v in self.neighbors(u) {
                if u < v {
                    let _ = writeln!(out, "{} {}", u, v);
                }
            }
        }
        out
    }

    /// Parse the edge-list format. A nonzero `k` on the header line asserts
    /// the clique-block id layout and re-derives layers by path tracing.
    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            reason: "empty input".into(),
        })?;
        let mut it = header.split_whitespace();
        let parse_usize = |s: Option<&str>, line: usize| -> Result<usize, TopologyError> {
            s.and_then(|t| t.parse().ok()).ok_or(TopologyError::Parse {
                line,
                reason: "expected integer".into(),
            })
        };
        let n = parse_usize(it.next(), 1)?;
        let k = parse_usize(it.next(), 1)?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let u = parse_usize(it.next(), idx + 1)? as u32;
            let v = parse_usize(it.next(), idx + 1)? as u32;
            if u as usize >= n || v as usize >= n {
                return Err(TopologyError::Parse {
                    line: idx + 1,
                    reason: format!("node id out of range 0..{}", n),
                });
            }
            edges.push((u, v));
        }
        let mut topo = Topology::from_edges(n, &edges, None);
        if k > 0 {
            topo.labels = Some(derive_labels(&topo, k)?);
        }
        Ok(topo)
    }
}

/// Build the clique chain with identity matchings: the layer-`l` node of
/// clique `i` is matched to the layer-`l` node of clique `i+1`.
pub fn build_gnk(n: usize, k: usize) -> Result<Topology, TopologyError> {
    let chains = validate_gnk_params(n, k)?;
    let identity: Vec<Vec<u32>> = (0..chains.saturating_sub(1))
        .map(|_| (0..k as u32).collect())
        .collect();
    build_gnk_with_matchings(n, k, &identity)
}

/// Clique chain with one explicit permutation per inter-clique matching:
/// `matchings[i][a]` is the layer slot in clique `i+1` matched to slot `a`
/// of clique `i`. Layers are recomputed by tracing paths from the first
/// clique.
pub fn build_gnk_with_matchings(
    n: usize,
    k: usize,
    matchings: &[Vec<u32>],
) -> Result<Topology, TopologyError> {
    let cliques = validate_gnk_params(n, k)?;
    let expected = cliques.saturating_sub(1);
    if matchings.len() != expected
        || matchings
            .iter()
            .any(|p| !is_permutation(p, k))
    {
        return Err(TopologyError::BadMatching { expected, k });
    }

    let mut edges = Vec::new();
    for i in 0..cliques {
        let base = (i * k) as u32;
        for a in 0..k as u32 {
            for b in (a + 1)..k as u32 {
                edges.push((base + a, base + b));
            }
        }
    }
    for (i, perm) in matchings.iter().enumerate() {
        let base = (i * k) as u32;
        let next = ((i + 1) * k) as u32;
        for (a, &b) in perm.iter().enumerate() {
            edges.push((base + a as u32, next + b));
        }
    }

    // Trace layers: slot a of clique 0 seeds layer a; each matching carries
    // the layer one clique forward.
    let mut layer_of = vec![0u32; n];
    let mut clique_of = vec![0u32; n];
    for a in 0..k {
        layer_of[a] = a as u32;
    }
    for i in 0..cliques {
        for a in 0..k {
            clique_of[i * k + a] = i as u32;
        }
        if i + 1 < cliques {
            for a in 0..k {
                let b = matchings[i][a] as usize;
                layer_of[(i + 1) * k + b] = layer_of[i * k + a];
            }
        }
    }

    Ok(Topology::from_edges(
        n,
        &edges,
        Some(GnkLabels {
            k,
            clique_of,
            layer_of,
        }),
    ))
}

fn validate_gnk_params(n: usize, k: usize) -> Result<usize, TopologyError> {
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if k < 2 {
        return Err(TopologyError::KTooSmall(k));
    }
    if n % k != 0 {
        return Err(TopologyError::KDoesNotDivideN { n, k });
    }
    Ok(n / k)
}

fn is_permutation(p: &[u32], k: usize) -> bool {
    if p.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    for &x in p {
        if x as usize >= k || seen[x as usize] {
            return false;
        }
        seen[x as usize] = true;
    }
    true
}

/// Re-derive clique/layer labels for a graph claimed to follow the
/// clique-block id layout; layers come from tracing matching edges.
fn derive_labels(topo: &Topology, k: usize) -> Result<GnkLabels, TopologyError> {
    let n = topo.node_count();
    if k < 2 {
        return Err(TopologyError::KTooSmall(k));
    }
    if n % k != 0 {
        return Err(TopologyError::KDoesNotDivideN { n, k });
    }
    let cliques = n / k;
    let clique_of: Vec<u32> = (0..n).map(|u| (u / k) as u32).collect();
    let mut layer_of = vec![u32::MAX; n];
    for a in 0..k {
        layer_of[a] = a as u32;
    }
    for i in 0..cliques.saturating_sub(1) {
        for a in 0..k {
            let u = (i * k + a) as u32;
            let mut partner = None;
            for &v in topo.neighbors(u) {
                if clique_of[v as usize] == (i + 1) as u32 {
                    if partner.is_some() {
                        return Err(TopologyError::Parse {
                            line: 0,
                            reason: format!("node {} has two matches in the next clique", u),
                        });
                    }
                    partner = Some(v);
                }
            }
            let v = partner.ok_or(TopologyError::Parse {
                line: 0,
                reason: format!("node {} has no match in the next clique", u),
            })?;
            layer_of[v as usize] = layer_of[u as usize];
        }
    }
    Ok(GnkLabels {
        k,
        clique_of,
        layer_of,
    })
}

/// Vertex connectivity via unit-vertex-capacity max-flow (Menger).
///
/// Returns 0 for disconnected graphs and `n - 1` for complete graphs. The
/// candidate pairs follow Even's scheme: a base vertex against its
/// non-neighbors, plus non-adjacent pairs among the base's neighbors.
pub fn vertex_connectivity(topo: &Topology) -> Result<usize, TopologyError> {
    let n = topo.node_count();
    if n > CONNECTIVITY_ORACLE_BOUND {
        return Err(TopologyError::OracleBound(n, CONNECTIVITY_ORACLE_BOUND));
    }
    if n == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    if n == 1 {
        return Ok(0);
    }
    if !topo.is_connected() {
        return Ok(0);
    }

    let base = (0..n as u32).min_by_key(|&u| topo.degree(u)).unwrap();
    let mut best = n - 1;
    let mut saw_pair = false;
    for t in 0..n as u32 {
        if t != base && !topo.has_edge(base, t) {
            saw_pair = true;
            best = best.min(vertex_disjoint_paths(topo, base, t, best));
        }
    }
    let nb: Vec<u32> = topo.neighbors(base).to_vec();
    for (i, &u) in nb.iter().enumerate() {
        for &w in &nb[i + 1..] {
            if !topo.has_edge(u, w) {
                saw_pair = true;
                best = best.min(vertex_disjoint_paths(topo, u, w, best));
            }
        }
    }
    if !saw_pair {
        // Every pair adjacent: complete graph.
        return Ok(n - 1);
    }
    Ok(best)
}

/// Max number of internally vertex-disjoint s-t paths, via max-flow on the
/// split graph (v_in -> v_out with capacity 1). `cap` short-circuits the
/// augmentation once the current minimum cannot improve.
fn vertex_disjoint_paths(topo: &Topology, s: u32, t: u32, cap: usize) -> usize {
    let n = topo.node_count();
    // Node 2v = v_in, 2v+1 = v_out.
    let mut graph = FlowGraph::new(2 * n);
    for v in 0..n as u32 {
        let c = if v == s || v == t { n as i32 } else { 1 };
        graph.add_edge(2 * v, 2 * v + 1, c);
    }
    for u in 0..n as u32 {
        for &v in topo.neighbors(u) {
            graph.add_edge(2 * u + 1, 2 * v, 1);
        }
    }
    graph.max_flow(2 * s + 1, 2 * t, cap as i32) as usize
}

struct FlowGraph {
    first: Vec<Option<usize>>,
    to: Vec<u32>,
    next: Vec<Option<usize>>,
    cap: Vec<i32>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            first: vec![None; n],
            to: Vec::new(),
            next: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, u: u32, v: u32, c: i32) {
        for (a, b, cc) in [(u, v, c), (v, u, 0)] {
            let id = self.to.len();
            self.to.push(b);
            self.cap.push(cc);
            self.next.push(self.first[a as usize]);
            self.first[a as usize] = Some(id);
        }
    }

    /// Edmonds-Karp, stopping early once the flow reaches `limit`.
    fn max_flow(&mut self, s: u32, t: u32, limit: i32) -> i32 {
        let n = self.first.len();
        let mut flow = 0;
        while flow < limit {
            let mut parent_edge = vec![usize::MAX; n];
            let mut seen = vec![false; n];
            seen[s as usize] = true;
            let mut queue = VecDeque::new();
            queue.push_back(s);
            'bfs: while let Some(u) = queue.pop_front() {
                let mut e = self.first[u as usize];
                while let Some(id) = e {
                    let v = self.to[id];
                    if self.cap[id] > 0 && !seen[v as usize] {
                        seen[v as usize] = true;
                        parent_edge[v as usize] = id;
                        if v == t {
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                    e = self.next[id];
                }
            }
            if !seen[t as usize] {
                break;
            }
            // Unit capacities on the path: augment by 1.
            let mut v = t;
            while v != s {
                let id = parent_edge[v as usize];
                self.cap[id] -= 1;
                self.cap[id ^ 1] += 1;
                // The reverse edge points back at the edge's source.
                v = self.to[id ^ 1];
            }
            flow += 1;
        }
        flow
    }
}

/// Longest shortest path over all pairs (all-sources BFS).
pub fn diameter(topo: &Topology) -> Result<usize, TopologyError> {
    if !topo.is_connected() {
        return Err(TopologyError::Disconnected);
    }
    let mut best = 0u32;
    for u in 0..topo.node_count() as u32 {
        let d = topo.bfs_distances(u);
        best = best.max(d.into_iter().max().unwrap_or(0));
    }
    Ok(best as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gnk_6_3_by_hand() {
        let t = build_gnk(6, 3).unwrap();
        // Cliques {0,1,2}, {3,4,5}; matching (0,3),(1,4),(2,5).
        for (u, v) in [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (0, 3), (1, 4), (2, 5)] {
            assert!(t.has_edge(u, v), "missing edge ({u},{v})");
        }
        for u in 0..6 {
            assert_eq!(t.degree(u), 3);
        }
        let labels = t.labels().unwrap();
        assert_eq!(labels.clique_of, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(labels.layer_of, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn gnk_single_clique() {
        let t = build_gnk(4, 4).unwrap();
        for u in 0..4u32 {
            for v in 0..4u32 {
                if u != v {
                    assert!(t.has_edge(u, v));
                }
            }
        }
    }

    #[test]
    fn gnk_4_2_is_a_cycle() {
        let t = build_gnk(4, 2).unwrap();
        let mut edges = Vec::new();
        for u in 0..4u32 {
            for &v in t.neighbors(u) {
                if u < v {
                    edges.push((u, v));
                }
            }
        }
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn gnk_rejects_bad_params() {
        assert!(build_gnk(4, 3).is_err());
        assert!(build_gnk(4, 1).is_err());
    }

    #[test]
    fn connectivity_oracle_small_cases() {
        assert_eq!(vertex_connectivity(&build_gnk(6, 3).unwrap()).unwrap(), 3);
        // K_4.
        let k4 = build_gnk(4, 4).unwrap();
        assert_eq!(vertex_connectivity(&k4).unwrap(), 3);
        // Path of 3 nodes: cut vertex in the middle.
        let path = Topology::from_edges(3, &[(0, 1), (1, 2)], None);
        assert_eq!(vertex_connectivity(&path).unwrap(), 1);
        // Disconnected.
        let disc = Topology::from_edges(4, &[(0, 1), (2, 3)], None);
        assert_eq!(vertex_connectivity(&disc).unwrap(), 0);
    }

    #[test]
    fn diameter_small_cases() {
        assert_eq!(diameter(&build_gnk(6, 3).unwrap()).unwrap(), 2);
        assert_eq!(diameter(&build_gnk(5, 5).unwrap()).unwrap(), 1);
        assert_eq!(diameter(&build_gnk(16, 4).unwrap()).unwrap(), 4);
    }

    #[test]
    fn degrees_match_buffer_sizes() {
        // Inner-clique nodes: k+1; nodes of the first and last clique: k.
        let t = build_gnk(20, 4).unwrap();
        let labels = t.labels().unwrap();
        let last = labels.clique_count() as u32 - 1;
        for u in 0..20u32 {
            let c = labels.clique_of[u as usize];
            let expect = if c == 0 || c == last { 4 } else { 5 };
            assert_eq!(t.degree(u), expect, "node {u}");
        }
    }

    #[test]
    fn layers_form_paths() {
        let t = build_gnk(20, 4).unwrap();
        let labels = t.labels().unwrap();
        for layer in 0..4u32 {
            let chain: Vec<u32> = (0..20u32)
                .filter(|&u| labels.layer_of[u as usize] == layer)
                .collect();
            assert_eq!(chain.len(), 5);
            for w in chain.windows(2) {
                assert!(t.has_edge(w[0], w[1]));
            }
        }
    }

    #[test]
    fn permuted_matchings_trace_layers() {
        // Reverse permutation between the two cliques of (6,3).
        let t = build_gnk_with_matchings(6, 3, &[vec![2, 1, 0]]).unwrap();
        let labels = t.labels().unwrap();
        assert!(t.has_edge(0, 5) && t.has_edge(1, 4) && t.has_edge(2, 3));
        assert_eq!(labels.layer_of[5], 0);
        assert_eq!(labels.layer_of[3], 2);
        assert_eq!(vertex_connectivity(&t).unwrap(), 3);
    }

    #[test]
    fn edge_list_round_trip() {
        let t = build_gnk(12, 3).unwrap();
        let text = t.to_edge_list();
        assert!(text.starts_with("12 3\n"));
        let back = Topology::from_edge_list(&text).unwrap();
        assert_eq!(back.node_count(), 12);
        for u in 0..12u32 {
            assert_eq!(back.neighbors(u), t.neighbors(u));
        }
        assert_eq!(back.labels(), t.labels());
    }

    #[test]
    fn oracle_bound_enforced() {
        let t = build_gnk(514, 2).unwrap();
        assert!(matches!(
            vertex_connectivity(&t),
            Err(TopologyError::OracleBound(..))
        ));
    }

    #[test]
    fn connectivity_equals_k_across_params() {
        for (n, k) in [(8, 2), (9, 3), (12, 4), (25, 5), (12, 6)] {
            let t = build_gnk(n, k).unwrap();
            assert_eq!(vertex_connectivity(&t).unwrap(), k, "G({n},{k})");
            if n / k >= 2 {
                assert_eq!(diameter(&t).unwrap(), n / k, "G({n},{k})");
            }
        }
    }
}
