//! Structural validation of the transition graph: Louvain communities on the
//! undirected projection, Newman modularity, purity and NMI against external
//! category labels, and the rank correlation between transition weights and
//! description similarity.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::SkillGraph;
use crate::rng;
use crate::trajectory::ToolId;

/// Minimum modularity gain for a Louvain move to count as an improvement.
const MIN_GAIN: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;

/// Symmetric weighted graph over tool ids, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    nodes: Vec<ToolId>,
    index: BTreeMap<ToolId, usize>,
    adjacency: Vec<BTreeMap<usize, f64>>,
}

impl UndirectedGraph {
    /// Builds a graph from nodes and weighted pairs. Weights of repeated
    /// pairs add up; self-pairs and non-positive weights are ignored.
    pub fn new(
        nodes: impl IntoIterator<Item = ToolId>,
        edges: impl IntoIterator<Item = (ToolId, ToolId, f64)>,
    ) -> Result<Self> {
        let mut nodes: Vec<ToolId> = nodes.into_iter().collect();
        nodes.sort_unstable();
        nodes.dedup();
        let index: BTreeMap<ToolId, usize> =
            nodes.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        let mut adjacency = vec![BTreeMap::new(); nodes.len()];
        for (a, b, w) in edges {
            let (Some(&i), Some(&j)) = (index.get(&a), index.get(&b)) else {
                return Err(Error::invalid(format!("edge {a} -- {b} references an unknown node")));
            };
            if i == j || !(w > 0.0) {
                continue;
            }
            *adjacency[i].entry(j).or_insert(0.0) += w;
            *adjacency[j].entry(i).or_insert(0.0) += w;
        }
        Ok(UndirectedGraph {
            nodes,
            index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[ToolId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.index.get(a)?, self.index.get(b)?);
        self.adjacency[*i].get(j).copied()
    }

    /// Each unordered pair once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .filter(move |(&j, _)| j > i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].values().sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).sum()
    }
}

/// Undirected projection: `weight(a, b) = (w(a, b) + w(b, a)) / 2` for every
/// pair with an edge in at least one direction.
pub fn undirected_projection(graph: &SkillGraph) -> UndirectedGraph {
    let mut pairs: BTreeMap<(ToolId, ToolId), f64> = BTreeMap::new();
    for (a, b, edge) in graph.edges() {
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        *pairs.entry(key).or_insert(0.0) += edge.weight / 2.0;
    }
    UndirectedGraph::new(
        graph.nodes().iter().cloned(),
        pairs.into_iter().map(|((a, b), w)| (a, b, w)),
    )
    .expect("projection endpoints are graph nodes")
}

/// Assignment of every node to a community index in `0..community_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: BTreeMap<ToolId, usize>,
    community_count: usize,
}

impl Partition {
    /// Validates that community indices are contiguous from zero.
    pub fn new(assignment: BTreeMap<ToolId, usize>) -> Result<Self> {
        let community_count = assignment.values().max().map_or(0, |&m| m + 1);
        let mut used = vec![false; community_count];
        for &c in assignment.values() {
            used[c] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::invalid("community indices are not contiguous"));
        }
        Ok(Partition {
            assignment,
            community_count,
        })
    }

    /// Relabels arbitrary community keys to contiguous indices, numbering
    /// communities in order of their smallest member id.
    pub fn from_groups<K: Ord + Clone>(groups: impl IntoIterator<Item = (ToolId, K)>) -> Self {
        let groups: BTreeMap<ToolId, K> = groups.into_iter().collect();
        let mut relabel: BTreeMap<K, usize> = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        for (tool, key) in groups {
            let next = relabel.len();
            let c = *relabel.entry(key).or_insert(next);
            assignment.insert(tool, c);
        }
        Partition {
            community_count: relabel.len(),
            assignment,
        }
    }

    pub fn singletons(nodes: &[ToolId]) -> Self {
        Partition::from_groups(nodes.iter().cloned().enumerate().map(|(i, t)| (t, i)))
    }

    pub fn community_of(&self, tool: &str) -> Option<usize> {
        self.assignment.get(tool).copied()
    }

    pub fn community_count(&self) -> usize {
        self.community_count
    }

    pub fn assignment(&self) -> &BTreeMap<ToolId, usize> {
        &self.assignment
    }

    /// Members of each community, communities in index order.
    pub fn communities(&self) -> Vec<Vec<ToolId>> {
        let mut out = vec![Vec::new(); self.community_count];
        for (tool, &c) in &self.assignment {
            out[c].push(tool.clone());
        }
        out
    }
}

/// Weighted Newman modularity at resolution 1:
/// `Q = Σ_c [ L_c / m − (d_c / 2m)² ]`. Defined as 0 for edgeless graphs.
pub fn modularity(graph: &UndirectedGraph, partition: &Partition) -> Result<f64> {
    let communities = community_indices(graph, partition)?;
    let m = graph.total_weight();
    if !(m > 0.0) {
        return Ok(0.0);
    }
    let k = partition.community_count();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for (i, j, w) in graph.edges() {
        degree[communities[i]] += w;
        degree[communities[j]] += w;
        if communities[i] == communities[j] {
            internal[communities[i]] += w;
        }
    }
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&l, &d)| l / m - (d / (2.0 * m)) * (d / (2.0 * m)))
        .sum())
}

fn community_indices(graph: &UndirectedGraph, partition: &Partition) -> Result<Vec<usize>> {
    graph
        .nodes()
        .iter()
        .map(|t| {
            partition
                .community_of(t.as_str())
                .ok_or_else(|| Error::invalid(format!("node `{t}` is not covered by the partition")))
        })
        .collect()
}

/// One level of the Louvain hierarchy: compact adjacency plus self-loop
/// weight carried over from aggregation.
struct Level {
    adjacency: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
}

impl Level {
    fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self.self_loops[i]
    }

    /// Local moving phase. Returns the community of each node and whether any
    /// node changed community.
    fn local_moves(&self, order: &[usize]) -> (Vec<usize>, bool) {
        let n = self.adjacency.len();
        let degrees: Vec<f64> = (0..n).map(|i| self.degree(i)).collect();
        let two_m: f64 = degrees.iter().sum();
        let mut community: Vec<usize> = (0..n).collect();
        let mut totals = degrees.clone();
        let mut neighbor_weight = vec![0.0; n];
        let mut touched = Vec::new();
        let mut any_move = false;

        for _ in 0..MAX_SWEEPS {
            let mut moved = false;
            for &i in order {
                let own = community[i];
                let ki = degrees[i];
                totals[own] -= ki;

                touched.clear();
                touched.push(own);
                for &(j, w) in &self.adjacency[i] {
                    let c = community[j];
                    if neighbor_weight[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    neighbor_weight[c] += w;
                }

                let gain = |c: usize, links: f64| links - totals[c] * ki / two_m;
                let mut best = own;
                let mut best_gain = gain(own, neighbor_weight[own]);
                for &c in &touched {
                    let g = gain(c, neighbor_weight[c]);
                    if g > best_gain + MIN_GAIN {
                        best = c;
                        best_gain = g;
                    }
                }
                for &c in &touched {
                    neighbor_weight[c] = 0.0;
                }

                totals[best] += ki;
                if best != own {
                    community[i] = best;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
        }
        (community, any_move)
    }

    /// Collapses communities (already renumbered `0..k`) into nodes.
    fn aggregate(&self, community: &[usize], k: usize) -> Level {
        let mut links: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loops = vec![0.0; k];
        for (i, row) in self.adjacency.iter().enumerate() {
            let ci = community[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in row {
                let cj = community[j];
                if ci == cj {
                    // each internal edge is seen from both ends
                    self_loops[ci] += w / 2.0;
                } else {
                    *links[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Level {
            adjacency: links.into_iter().map(|row| row.into_iter().collect()).collect(),
            self_loops,
        }
    }
}

fn renumber(community: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    for c in community.iter_mut() {
        let next = map.len();
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

/// Multi-level Louvain at resolution 1.0.
///
/// The node visiting order of the first level is a seeded shuffle; coarser
/// levels sweep communities in index order. Moves require a strict gain, so
/// the result never has lower modularity than the singleton partition.
pub fn louvain(graph: &UndirectedGraph, seed: u64) -> Partition {
    let n = graph.node_count();
    let mut level = Level {
        adjacency: graph
            .adjacency
            .iter()
            .map(|row| row.iter().map(|(&j, &w)| (j, w)).collect())
            .collect(),
        self_loops: vec![0.0; n],
    };
    // membership[v] = community of original node v at the current level
    let mut membership: Vec<usize> = (0..n).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));

    if graph.total_weight() > 0.0 {
        loop {
            let (mut community, moved) = level.local_moves(&order);
            if !moved {
                break;
            }
            let k = renumber(&mut community);
            for m in membership.iter_mut() {
                *m = community[*m];
            }
            level = level.aggregate(&community, k);
            order = (0..k).collect();
        }
    }

    Partition::from_groups(
        graph
            .nodes()
            .iter()
            .cloned()
            .zip(membership.iter().copied()),
    )
}

fn labels_of<'a>(
    partition: &Partition,
    labels: &'a BTreeMap<ToolId, String>,
) -> Result<Vec<(usize, &'a str)>> {
    partition
        .assignment()
        .iter()
        .map(|(tool, &c)| match labels.get(tool) {
            Some(label) => Ok((c, label.as_str())),
            None => Err(Error::MissingLabel(tool.clone())),
        })
        .collect()
}

/// Purity of each community (share of its dominant label) and their
/// unweighted mean.
pub fn purity(partition: &Partition, labels: &BTreeMap<ToolId, String>) -> Result<(f64, Vec<f64>)> {
    let pairs = labels_of(partition, labels)?;
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); partition.community_count()];
    for (c, label) in pairs {
        *counts[c].entry(label).or_insert(0) += 1;
    }
    let per: Vec<f64> = counts
        .iter()
        .map(|row| {
            let size: usize = row.values().sum();
            let dominant = row.values().copied().max().unwrap_or(0);
            dominant as f64 / size as f64
        })
        .collect();
    let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    Ok((mean, per))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Normalized mutual information between communities and labels,
/// normalized by the arithmetic mean of the two entropies. Two trivial
/// (single-group) clusterings count as identical (NMI 1).
pub fn nmi(partition: &Partition, labels: &BTreeMap<ToolId, String>) -> Result<f64> {
    let pairs = labels_of(partition, labels)?;
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut joint: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    let mut by_community: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<&str, usize> = BTreeMap::new();
    for &(c, l) in &pairs {
        *joint.entry((c, l)).or_insert(0) += 1;
        *by_community.entry(c).or_insert(0) += 1;
        *by_label.entry(l).or_insert(0) += 1;
    }
    let h_c = entropy(by_community.values().copied(), n);
    let h_l = entropy(by_label.values().copied(), n);
    if h_c + h_l == 0.0 {
        return Ok(1.0);
    }
    let mutual: f64 = joint
        .iter()
        .map(|(&(c, l), &count)| {
            let p = count as f64 / n;
            let pc = by_community[&c] as f64 / n;
            let pl = by_label[l] as f64 / n;
            p * libm::log(p / (pc * pl))
        })
        .sum();
    Ok((2.0 * mutual / (h_c + h_l)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityReport {
    pub community_count: usize,
    pub modularity: f64,
    pub mean_purity: f64,
    pub nmi: f64,
    pub per_community_purity: Vec<f64>,
}

/// Projection, Louvain and all label-based scores in one pass.
pub fn analyze(
    graph: &SkillGraph,
    labels: &BTreeMap<ToolId, String>,
    seed: u64,
) -> Result<(Partition, CommunityReport)> {
    let projected = undirected_projection(graph);
    let partition = louvain(&projected, seed);
    let modularity = modularity(&projected, &partition)?;
    let (mean_purity, per_community_purity) = purity(&partition, labels)?;
    let nmi = nmi(&partition, labels)?;
    let report = CommunityReport {
        community_count: partition.community_count(),
        modularity,
        mean_purity,
        nmi,
        per_community_purity,
    };
    Ok((partition, report))
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the normal approximation `z = ρ·√(n−1)`.
    pub p_value: f64,
    pub pairs: usize,
}

/// Spearman correlation with average ranks for ties. Undefined cases
/// (fewer than three pairs or a constant variable) report ρ = 0, p = 1.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::invalid("spearman inputs differ in length"));
    }
    let pairs = x.len();
    let rho = if pairs >= 3 {
        pearson(&average_ranks(x), &average_ranks(y))
    } else {
        None
    };
    Ok(match rho {
        Some(rho) => {
            let z = rho * libm::sqrt((pairs - 1) as f64);
            Correlation {
                rho,
                p_value: libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2).min(1.0),
                pairs,
            }
        }
        None => Correlation {
            rho: 0.0,
            p_value: 1.0,
            pairs,
        },
    })
}

/// Rank correlation between transition weight and description similarity
/// over every directed edge.
pub fn complementarity(graph: &SkillGraph, embeddings: &EmbeddingStore) -> Result<Correlation> {
    let mut weights = Vec::with_capacity(graph.edge_count());
    let mut similarities = Vec::with_capacity(graph.edge_count());
    for node in graph.nodes() {
        if !embeddings.contains(node.as_str()) {
            return Err(Error::MissingEmbedding(node.clone()));
        }
    }
    for (a, b, edge) in graph.edges() {
        weights.push(edge.weight);
        similarities.push(embeddings.tool_similarity(a.as_str(), b.as_str())?);
    }
    spearman(&weights, &similarities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{ids, Trajectory, TrajectoryDataset};
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn tool(name: &str) -> ToolId {
        ToolId::new(name).unwrap()
    }

    fn graph(nodes: &[&str], edges: &[(&str, &str, f64)]) -> UndirectedGraph {
        UndirectedGraph::new(
            ids(nodes),
            edges.iter().map(|&(a, b, w)| (tool(a), tool(b), w)),
        )
        .unwrap()
    }

    /// Direct evaluation of `1/2m Σ_ij (A_ij − k_i k_j / 2m) δ(c_i, c_j)`
    /// over a dense adjacency matrix.
    fn modularity_oracle(g: &UndirectedGraph, p: &Partition) -> f64 {
        let n = g.node_count();
        let mut a = vec![vec![0.0; n]; n];
        for (i, j, w) in g.edges() {
            a[i][j] = w;
            a[j][i] = w;
        }
        let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
        let two_m: f64 = k.iter().sum();
        let c: Vec<usize> = g.nodes().iter().map(|t| p.community_of(t.as_str()).unwrap()).collect();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if c[i] == c[j] {
                    q += a[i][j] - k[i] * k[j] / two_m;
                }
            }
        }
        q / two_m
    }

    fn two_cliques(bridge: f64) -> UndirectedGraph {
        let names = ["a0", "a1", "a2", "a3", "b0", "b1", "b2", "b3"];
        let mut edges = Vec::new();
        for side in ["a", "b"] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((tool(&alloc::format!("{side}{i}")), tool(&alloc::format!("{side}{j}")), 1.0));
                }
            }
        }
        if bridge > 0.0 {
            edges.push((tool("a3"), tool("b0"), bridge));
        }
        UndirectedGraph::new(ids(&names), edges).unwrap()
    }

    fn by_prefix(g: &UndirectedGraph) -> Partition {
        Partition::from_groups(g.nodes().iter().map(|t| (t.clone(), t.as_str()[..1].to_string())))
    }

    #[test]
    fn projection_averages_directions() {
        let ds = TrajectoryDataset::new(
            [["A", "B"]; 4]
                .iter()
                .chain(&[["B", "A"]])
                .chain(&[["B", "C"]; 3])
                .enumerate()
                .map(|(i, s)| Trajectory::new("q", ids(s), i).unwrap())
                .collect(),
        );
        let g = SkillGraph::build(&ds).unwrap();
        // w(A,B) = 1, w(B,A) = 1/4
        let p = undirected_projection(&g);
        assert_eq!(p.weight("A", "B"), Some((1.0 + 0.25) / 2.0));
        assert_eq!(p.weight("B", "C"), Some(0.75 / 2.0));
        assert_eq!(p.weight("A", "C"), None);
    }

    #[test]
    fn projection_of_reverse_free_edge() {
        let g = graph(&["sc", "conv"], &[("sc", "conv", (0.78 + 0.0) / 2.0)]);
        assert!((g.weight("conv", "sc").unwrap() - 0.39).abs() < 1e-15);
    }

    #[test]
    fn modularity_reference_values() {
        let g = two_cliques(0.0);
        let all_one = Partition::from_groups(g.nodes().iter().map(|t| (t.clone(), 0)));
        assert_eq!(modularity(&g, &all_one).unwrap(), 0.0);
        assert!((modularity(&g, &by_prefix(&g)).unwrap() - 0.5).abs() < 1e-15);
        let partial = Partition::from_groups([(tool("a0"), 0)]);
        assert!(matches!(modularity(&g, &partial), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn louvain_finds_planted_cliques() {
        let g = two_cliques(0.1);
        // brute force over all 2-partitions: the clique split is the maximum
        let n = g.node_count();
        let mut best = (f64::MIN, 0u32);
        for mask in 1u32..(1 << (n - 1)) {
            let p = Partition::from_groups(g.nodes().iter().enumerate().map(|(i, t)| (t.clone(), (mask >> i) & 1)));
            let q = modularity_oracle(&g, &p);
            if q > best.0 + 1e-12 {
                best = (q, mask);
            }
        }
        assert_eq!(best.1, 0b0000_1111);

        for seed in 0..5 {
            let p = louvain(&g, seed);
            assert_eq!(p.community_count(), 2);
            assert_eq!(p, by_prefix(&g));
            let q = modularity(&g, &p).unwrap();
            assert!((q - modularity_oracle(&g, &p)).abs() <= 1e-12);
            assert!((q - best.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn louvain_degenerate_graphs() {
        let single = graph(&["x"], &[]);
        assert_eq!(louvain(&single, 1).community_count(), 1);
        let edgeless = graph(&["x", "y", "z"], &[]);
        assert_eq!(louvain(&edgeless, 1).community_count(), 3);
        assert_eq!(modularity(&single, &louvain(&single, 1)).unwrap(), 0.0);
    }

    #[test]
    fn purity_and_nmi_examples() {
        let labels = |pairs: &[(&str, &str)]| -> BTreeMap<ToolId, String> {
            pairs.iter().map(|(t, l)| (tool(t), l.to_string())).collect()
        };
        let p = Partition::from_groups(ids(&["A", "B", "C", "D"]).into_iter().map(|t| (t, 0)));
        let l = labels(&[("A", "x"), ("B", "x"), ("C", "x"), ("D", "y")]);
        assert_eq!(purity(&p, &l).unwrap(), (0.75, vec![0.75]));
        assert_eq!(nmi(&p, &l).unwrap(), 0.0);

        let ab_cd = Partition::from_groups([("A", 0), ("B", 0), ("C", 1), ("D", 1)].map(|(t, c)| (tool(t), c)));
        let ac_bd = labels(&[("A", "p"), ("C", "p"), ("B", "q"), ("D", "q")]);
        // oracle: each joint cell has p = 1/4 = p_c * p_l, so I = 0
        assert!(nmi(&ab_cd, &ac_bd).unwrap().abs() < 1e-15);
        let same = labels(&[("A", "p"), ("B", "p"), ("C", "q"), ("D", "q")]);
        assert!((nmi(&ab_cd, &same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(purity(&ab_cd, &same).unwrap().0, 1.0);

        let missing = labels(&[("A", "p")]);
        assert_eq!(purity(&ab_cd, &missing), Err(Error::MissingLabel(tool("B"))));
        assert!(matches!(nmi(&ab_cd, &missing), Err(Error::MissingLabel(_))));
    }

    #[test]
    fn spearman_extremes_and_ties() {
        let x = [0.1, 0.4, 0.2, 0.9, 0.5];
        assert!((spearman(&x, &x).unwrap().rho - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!((spearman(&x, &neg).unwrap().rho + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let flat = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((flat.rho, flat.p_value), (0.0, 1.0));
    }

    #[test]
    fn complementarity_requires_embeddings() {
        use crate::embeddings::{EmbeddingStore, EncoderTag};
        let ds = TrajectoryDataset::new(vec![Trajectory::new("q", ids(&["A", "B", "C"]), 0).unwrap()]);
        let g = SkillGraph::build(&ds).unwrap();
        let partial = EmbeddingStore::from_rows([(tool("A"), vec![1.0, 0.0])], EncoderTag::External).unwrap();
        assert!(matches!(complementarity(&g, &partial), Err(Error::MissingEmbedding(_))));
    }

    fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (2usize..10).prop_flat_map(|n| {
            let edge = (0..n, 0..n, 0.05f64..2.0);
            (Just(n), proptest::collection::vec(edge, 0..25))
        })
    }

    fn build((n, edges): &(usize, Vec<(usize, usize, f64)>)) -> UndirectedGraph {
        let name = |i: usize| tool(&alloc::format!("n{i}"));
        UndirectedGraph::new((0..*n).map(name), edges.iter().map(|&(a, b, w)| (name(a), name(b), w))).unwrap()
    }

    proptest! {
        #[test]
        fn louvain_beats_singletons_and_matches_oracle(spec in random_graph(), seed in any::<u64>()) {
            let g = build(&spec);
            let p = louvain(&g, seed);
            let q = modularity(&g, &p).unwrap();
            let q0 = modularity(&g, &Partition::singletons(g.nodes())).unwrap();
            prop_assert!(q >= q0 - 1e-12);
            prop_assert!((-0.5..=1.0).contains(&q));
            if g.total_weight() > 0.0 {
                prop_assert!((q - modularity_oracle(&g, &p)).abs() <= 1e-12);
            }
            prop_assert_eq!(louvain(&g, seed), p);
        }

        #[test]
        fn scores_ignore_community_relabeling(
            groups in proptest::collection::vec(0usize..4, 1..12),
            labels in proptest::collection::vec(0usize..3, 12),
            shift in 1usize..4,
        ) {
            let tools: Vec<ToolId> = (0..groups.len()).map(|i| tool(&alloc::format!("t{i:02}"))).collect();
            let label_map: BTreeMap<ToolId, String> = tools.iter().zip(&labels).map(|(t, l)| (t.clone(), alloc::format!("L{l}"))).collect();
            let a = Partition::from_groups(tools.iter().cloned().zip(groups.iter().copied()));
            let b = Partition::from_groups(tools.iter().cloned().zip(groups.iter().map(|g| (g + shift) % 4 + 10)));
            let (pa, pb) = (purity(&a, &label_map).unwrap(), purity(&b, &label_map).unwrap());
            prop_assert!((pa.0 - pb.0).abs() < 1e-12);
            let (na, nb) = (nmi(&a, &label_map).unwrap(), nmi(&b, &label_map).unwrap());
            prop_assert!((na - nb).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&na));
        }

        #[test]
        fn spearman_is_monotone_invariant(xs in proptest::collection::vec(-10.0f64..10.0, 3..30), ys in proptest::collection::vec(-10.0f64..10.0, 30)) {
            let ys = &ys[..xs.len()];
            let base = spearman(&xs, ys).unwrap();
            let transformed: Vec<f64> = xs.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let other = spearman(&transformed, ys).unwrap();
            prop_assert!((base.rho - other.rho).abs() < 1e-12);
        }
    }
}
