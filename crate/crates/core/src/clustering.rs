//! Grouping of NMS-free 3D detections into per-object clusters.
//!
//! Two detections are adjacent when their BEV IoU exceeds `tau_z`; clusters
//! are the maximal cliques of that graph. Because overlap is not transitive a
//! detection can sit in several cliques; it is kept only in the clique whose
//! best member score is highest, so the final clusters partition the input.

use thiserror::Error;

use crate::geometry::iou_bev;
use crate::model::Detection3D;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("clique enumeration exceeded {cap} cliques on {nodes} nodes")]
    CliqueExplosion { nodes: usize, cap: usize },
}

/// Undirected graph stored as a sorted list of `(i, j)` edges with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl OverlapGraph {
    /// Builds a graph, dropping self-loops and duplicate edges.
    pub fn new(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut e: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .inspect(|&(_, j)| assert!(j < nodes, "edge endpoint {j} out of range"))
            .collect();
        e.sort_unstable();
        e.dedup();
        Self { nodes, edges: e }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn adjacency(&self) -> Vec<BitSet> {
        let mut adj = vec![BitSet::new(self.nodes); self.nodes];
        for &(i, j) in &self.edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj
    }
}

/// Fixed-capacity bit set used by the clique search.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn new(n: usize) -> Self {
        Self { words: vec![0; n.div_ceil(64)] }
    }

    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    fn and(&self, other: &Self) -> Self {
        Self { words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect() }
    }

    fn and_not(&self, other: &Self) -> Self {
        Self { words: self.words.iter().zip(&other.words).map(|(a, b)| a & !b).collect() }
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + b)
            })
        })
    }
}

/// A group of detections believed to describe one object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    members: Vec<usize>,
}

impl Cluster {
    pub fn new(mut members: Vec<usize>) -> Self {
        assert!(!members.is_empty(), "cluster must not be empty");
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    /// Sorted detection indices.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn lead(&self) -> usize {
        self.members[0]
    }
}

/// Edge `(i, j)` iff `iou_bev(i, j) > tau_z`.
pub fn build_overlap_graph(dets: &[Detection3D], tau_z: f64) -> OverlapGraph {
    let mut edges = Vec::new();
    for i in 0..dets.len() {
        for j in i + 1..dets.len() {
            if iou_bev(&dets[i].box3d, &dets[j].box3d) > tau_z {
                edges.push((i, j));
            }
        }
    }
    OverlapGraph { nodes: dets.len(), edges }
}

/// Vertices in degeneracy order (repeatedly remove a minimum-degree vertex).
fn degeneracy_order(adj: &[BitSet]) -> Vec<usize> {
    let n = adj.len();
    let mut degree: Vec<usize> = adj.iter().map(BitSet::count).collect();
    let mut removed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n).filter(|&v| !removed[v]).min_by_key(|&v| (degree[v], v)).expect("vertex left");
        removed[v] = true;
        order.push(v);
        for u in adj[v].iter() {
            if !removed[u] {
                degree[u] -= 1;
            }
        }
    }
    order
}

struct CliqueSearch<'a> {
    adj: &'a [BitSet],
    out: Vec<Vec<usize>>,
    cap: usize,
}

impl CliqueSearch<'_> {
    fn expand(&mut self, r: &mut Vec<usize>, mut p: BitSet, mut x: BitSet) -> Result<(), ()> {
        if p.is_empty() {
            if x.is_empty() {
                if self.out.len() >= self.cap {
                    return Err(());
                }
                let mut c = r.clone();
                c.sort_unstable();
                self.out.push(c);
            }
            return Ok(());
        }
        // pivot maximizing |P ∩ N(u)|, lowest index on ties
        let pivot = p
            .iter()
            .chain(x.iter())
            .max_by_key(|&u| (p.and(&self.adj[u]).count(), std::cmp::Reverse(u)))
            .expect("P is non-empty");
        let candidates: Vec<usize> = p.and_not(&self.adj[pivot]).iter().collect();
        for v in candidates {
            r.push(v);
            let res = self.expand(r, p.and(&self.adj[v]), x.and(&self.adj[v]));
            r.pop();
            res?;
            p.remove(v);
            x.insert(v);
        }
        Ok(())
    }
}

/// Maximal cliques with the default cap of ten cliques per node.
pub fn maximal_cliques(graph: &OverlapGraph) -> Result<Vec<Vec<usize>>, ClusterError> {
    maximal_cliques_capped(graph, 10 * graph.node_count())
}

/// All maximal cliques, each sorted, listed by smallest member (then
/// lexicographically). Isolated nodes are singleton cliques.
pub fn maximal_cliques_capped(graph: &OverlapGraph, cap: usize) -> Result<Vec<Vec<usize>>, ClusterError> {
    let n = graph.node_count();
    let adj = graph.adjacency();
    let order = degeneracy_order(&adj);
    let mut position = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        position[v] = k;
    }
    let mut search = CliqueSearch { adj: &adj, out: Vec::new(), cap };
    for &v in &order {
        let mut p = BitSet::new(n);
        let mut x = BitSet::new(n);
        for u in adj[v].iter() {
            if position[u] > position[v] {
                p.insert(u);
            } else {
                x.insert(u);
            }
        }
        search
            .expand(&mut vec![v], p, x)
            .map_err(|_| ClusterError::CliqueExplosion { nodes: n, cap })?;
    }
    let mut cliques = search.out;
    cliques.sort();
    Ok(cliques)
}

/// Clusters `dets` into a partition of maximal-clique groups.
pub fn cluster_detections(dets: &[Detection3D], tau_z: f64, cap_factor: usize) -> Result<Vec<Cluster>, ClusterError> {
    let graph = build_overlap_graph(dets, tau_z);
    let cliques = maximal_cliques_capped(&graph, cap_factor * dets.len())?;
    Ok(resolve_membership(&cliques, dets))
}

/// Keeps each detection only in the clique with the highest best-member
/// score; ties go to the clique with the smaller lead index.
fn resolve_membership(cliques: &[Vec<usize>], dets: &[Detection3D]) -> Vec<Cluster> {
    let strength: Vec<f64> = cliques
        .iter()
        .map(|c| c.iter().map(|&i| dets[i].score).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; dets.len()];
    for (k, clique) in cliques.iter().enumerate() {
        for &i in clique {
            let better = match owner[i] {
                None => true,
                Some(o) => strength[k] > strength[o] || (strength[k] == strength[o] && clique[0] < cliques[o][0]),
            };
            if better {
                owner[i] = Some(k);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); cliques.len()];
    for (i, o) in owner.iter().enumerate() {
        groups[o.expect("every node lies in a maximal clique")].push(i);
    }
    groups.into_iter().filter(|g| !g.is_empty()).map(Cluster::new).collect()
}
