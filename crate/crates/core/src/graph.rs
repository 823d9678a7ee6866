//! The execution-transition graph.
//!
//! Nodes are tools; a directed edge `a -> b` records that `b` immediately
//! followed `a` in at least one deduplicated trajectory. Each edge keeps its
//! raw count and the row-normalized weight `P(b | a)`. Per-tool position
//! statistics (mean normalized position across trajectories) ride along for
//! the positional features downstream.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::trajectory::{dedup_first_occurrence, ToolId, TrajectoryDataset};

/// Tolerance for the row-sum check applied to graphs loaded from outside.
pub const LOAD_ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Normalized position assigned to the only tool of a length-1 trajectory.
pub const SINGLETON_POSITION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub count: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionStat {
    /// Mean of `i / (L - 1)` over trajectories containing the tool.
    pub mean: f64,
    /// Number of trajectories containing the tool.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillGraph {
    nodes: BTreeSet<ToolId>,
    outgoing: BTreeMap<ToolId, BTreeMap<ToolId, Edge>>,
    incoming: BTreeMap<ToolId, BTreeSet<ToolId>>,
    positions: BTreeMap<ToolId, PositionStat>,
}

/// Accumulates transition counts and position sums; [`GraphBuilder::build`]
/// normalizes them into a [`SkillGraph`]. Builders can keep absorbing
/// trajectories after a build.
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    nodes: BTreeSet<ToolId>,
    counts: BTreeMap<ToolId, BTreeMap<ToolId, u64>>,
    position_sums: BTreeMap<ToolId, (f64, u64)>,
    sequences: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one tool sequence. The sequence is deduplicated first, so callers
    /// may pass raw logs.
    pub fn add_sequence(&mut self, tools: &[ToolId]) {
        let tools = dedup_first_occurrence(tools.iter().cloned());
        if tools.is_empty() {
            return;
        }
        self.sequences += 1;
        let last = tools.len() - 1;
        for (i, tool) in tools.iter().enumerate() {
            self.nodes.insert(tool.clone());
            let position = if last == 0 {
                SINGLETON_POSITION
            } else {
                i as f64 / last as f64
            };
            let slot = self.position_sums.entry(tool.clone()).or_insert((0.0, 0));
            slot.0 += position;
            slot.1 += 1;
        }
        for pair in tools.windows(2) {
            // dedup already rules out a == b
            *self
                .counts
                .entry(pair[0].clone())
                .or_default()
                .entry(pair[1].clone())
                .or_insert(0) += 1;
        }
    }

    pub fn add_dataset(&mut self, dataset: &TrajectoryDataset) {
        for trajectory in dataset {
            self.add_sequence(trajectory.tools());
        }
    }

    pub fn build(&self) -> Result<SkillGraph> {
        if self.sequences == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut outgoing = BTreeMap::new();
        let mut incoming: BTreeMap<ToolId, BTreeSet<ToolId>> = BTreeMap::new();
        for (src, row) in &self.counts {
            let total: u64 = row.values().sum();
            let edges: BTreeMap<ToolId, Edge> = row
                .iter()
                .map(|(dst, &count)| {
                    incoming.entry(dst.clone()).or_default().insert(src.clone());
                    let weight = count as f64 / total as f64;
                    (dst.clone(), Edge { count, weight })
                })
                .collect();
            outgoing.insert(src.clone(), edges);
        }
        let positions = self
            .position_sums
            .iter()
            .map(|(tool, &(sum, count))| {
                let stat = PositionStat {
                    mean: sum / count as f64,
                    count,
                };
                (tool.clone(), stat)
            })
            .collect();
        Ok(SkillGraph {
            nodes: self.nodes.clone(),
            outgoing,
            incoming,
            positions,
        })
    }
}

impl SkillGraph {
    /// Builds the graph from a trajectory dataset.
    pub fn build(dataset: &TrajectoryDataset) -> Result<Self> {
        let mut builder = GraphBuilder::new();
        builder.add_dataset(dataset);
        builder.build()
    }

    /// Reassembles a graph from its serialized parts, re-validating every
    /// invariant. Weight rows must sum to one within
    /// [`LOAD_ROW_SUM_TOLERANCE`].
    pub fn from_parts(
        nodes: impl IntoIterator<Item = ToolId>,
        edges: impl IntoIterator<Item = (ToolId, ToolId, Edge)>,
        positions: impl IntoIterator<Item = (ToolId, PositionStat)>,
    ) -> Result<Self> {
        let nodes: BTreeSet<ToolId> = nodes.into_iter().collect();
        let mut outgoing: BTreeMap<ToolId, BTreeMap<ToolId, Edge>> = BTreeMap::new();
        let mut incoming: BTreeMap<ToolId, BTreeSet<ToolId>> = BTreeMap::new();
        for (src, dst, edge) in edges {
            if src == dst {
                return Err(Error::Integrity(format!("self-loop on `{src}`")));
            }
            for end in [&src, &dst] {
                if !nodes.contains(end) {
                    return Err(Error::Integrity(format!("edge endpoint `{end}` is not a node")));
                }
            }
            if edge.count == 0 {
                return Err(Error::Integrity(format!("edge {src} -> {dst} has zero count")));
            }
            if !(edge.weight > 0.0 && edge.weight <= 1.0) {
                return Err(Error::Integrity(format!(
                    "edge {src} -> {dst} has weight {} outside (0, 1]",
                    edge.weight
                )));
            }
            incoming.entry(dst.clone()).or_default().insert(src.clone());
            if outgoing.entry(src.clone()).or_default().insert(dst.clone(), edge).is_some() {
                return Err(Error::Integrity(format!("duplicate edge {src} -> {dst}")));
            }
        }
        for (src, row) in &outgoing {
            let sum: f64 = row.values().map(|e| e.weight).sum();
            if libm::fabs(sum - 1.0) > LOAD_ROW_SUM_TOLERANCE {
                return Err(Error::Integrity(format!(
                    "outgoing weights of `{src}` sum to {sum}, expected 1"
                )));
            }
        }
        let mut stats = BTreeMap::new();
        for (tool, stat) in positions {
            if !nodes.contains(&tool) {
                return Err(Error::Integrity(format!("position entry for unknown tool `{tool}`")));
            }
            if !(0.0..=1.0).contains(&stat.mean) || stat.count == 0 {
                return Err(Error::Integrity(format!("invalid position statistics for `{tool}`")));
            }
            stats.insert(tool, stat);
        }
        Ok(SkillGraph {
            nodes,
            outgoing,
            incoming,
            positions: stats,
        })
    }

    pub fn nodes(&self) -> &BTreeSet<ToolId> {
        &self.nodes
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.nodes.contains(tool)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.outgoing.values().map(BTreeMap::len).sum()
    }

    /// `P(b | a)`; zero for absent edges, self-pairs and unknown tools.
    pub fn transition_weight(&self, a: &str, b: &str) -> f64 {
        self.edge(a, b).map_or(0.0, |e| e.weight)
    }

    pub fn edge(&self, a: &str, b: &str) -> Option<&Edge> {
        self.outgoing.get(a)?.get(b)
    }

    /// All edges as `(src, dst, edge)`, ordered by `(src, dst)`.
    pub fn edges(&self) -> impl Iterator<Item = (&ToolId, &ToolId, &Edge)> {
        self.outgoing
            .iter()
            .flat_map(|(src, row)| row.iter().map(move |(dst, edge)| (src, dst, edge)))
    }

    pub fn successors(&self, tool: &str) -> impl Iterator<Item = (&ToolId, &Edge)> {
        self.outgoing.get(tool).into_iter().flat_map(|row| row.iter())
    }

    pub fn predecessors(&self, tool: &str) -> impl Iterator<Item = &ToolId> {
        self.incoming.get(tool).into_iter().flat_map(|set| set.iter())
    }

    /// Neighbours ignoring direction, in id order.
    pub fn undirected_neighbors(&self, tool: &str) -> Vec<&ToolId> {
        let mut out: Vec<&ToolId> = self
            .successors(tool)
            .map(|(t, _)| t)
            .chain(self.predecessors(tool))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn position(&self, tool: &str) -> Option<&PositionStat> {
        self.positions.get(tool)
    }

    pub fn position_mean(&self, tool: &str) -> Option<f64> {
        self.positions.get(tool).map(|s| s.mean)
    }

    pub fn positions(&self) -> impl Iterator<Item = (&ToolId, &PositionStat)> {
        self.positions.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{ids, Trajectory};
    use alloc::vec;
    use proptest::prelude::*;

    pub(crate) fn dataset(seqs: &[&[&str]]) -> TrajectoryDataset {
        TrajectoryDataset::new(
            seqs.iter()
                .enumerate()
                .map(|(i, s)| Trajectory::new("q", ids(s), i).unwrap())
                .collect(),
        )
    }

    #[test]
    fn hand_example_counts_and_weights() {
        let g = SkillGraph::build(&dataset(&[&["A", "B", "C"], &["A", "B"], &["A", "C"]])).unwrap();
        assert_eq!(g.edge("A", "B").unwrap().count, 2);
        assert_eq!(g.edge("A", "C").unwrap().count, 1);
        assert_eq!(g.edge("B", "C").unwrap().count, 1);
        assert_eq!(g.transition_weight("A", "B"), 2.0 / 3.0);
        assert_eq!(g.transition_weight("A", "C"), 1.0 / 3.0);
        assert_eq!(g.transition_weight("B", "C"), 1.0);
        assert_eq!(g.transition_weight("B", "A"), 0.0);
        assert_eq!(g.transition_weight("A", "A"), 0.0);
        assert_eq!(g.transition_weight("Z", "A"), 0.0);
        assert_eq!(g.edge_count(), 3);
        // A first in all three; B at 1/2 and 1; C at 1 twice
        assert_eq!(g.position_mean("A"), Some(0.0));
        assert_eq!(g.position_mean("B"), Some(0.75));
        assert_eq!(g.position_mean("C"), Some(1.0));
    }

    #[test]
    fn singleton_trajectory() {
        let g = SkillGraph::build(&dataset(&[&["A"]])).unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.position_mean("A"), Some(0.5));
    }

    #[test]
    fn repeated_pair_normalizes_to_one() {
        let g = SkillGraph::build(&dataset(&[&["A", "B"][..]; 5])).unwrap();
        assert_eq!(g.transition_weight("A", "B"), 1.0);
        assert_eq!(g.edge("A", "B").unwrap().count, 5);
    }

    #[test]
    fn raw_repeats_never_form_self_loops() {
        let mut b = GraphBuilder::new();
        b.add_sequence(&ids(&["A", "A", "B", "A"]));
        let g = b.build().unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.transition_weight("A", "B"), 1.0);
    }

    #[test]
    fn empty_builder_is_empty_dataset() {
        assert_eq!(GraphBuilder::new().build(), Err(Error::EmptyDataset));
    }

    fn parts(g: &SkillGraph) -> (Vec<ToolId>, Vec<(ToolId, ToolId, Edge)>, Vec<(ToolId, PositionStat)>) {
        (
            g.nodes().iter().cloned().collect(),
            g.edges().map(|(a, b, e)| (a.clone(), b.clone(), *e)).collect(),
            g.positions().map(|(t, s)| (t.clone(), *s)).collect(),
        )
    }

    #[test]
    fn from_parts_round_trip_and_integrity() {
        let g = SkillGraph::build(&dataset(&[&["A", "B", "C"], &["A", "B"], &["A", "C"]])).unwrap();
        let (n, e, p) = parts(&g);
        assert_eq!(SkillGraph::from_parts(n.clone(), e.clone(), p.clone()).unwrap(), g);

        let mut heavy = e.clone();
        heavy[0].2.weight = 1.0; // row A now sums to 1 + 1/3
        assert!(matches!(
            SkillGraph::from_parts(n.clone(), heavy, p.clone()),
            Err(Error::Integrity(_))
        ));
        let mut looped = e.clone();
        looped.push((n[0].clone(), n[0].clone(), Edge { count: 1, weight: 1.0 }));
        assert!(SkillGraph::from_parts(n.clone(), looped, p.clone()).is_err());
        let stray = vec![(n[0].clone(), ToolId::new("Z").unwrap(), Edge { count: 1, weight: 1.0 })];
        assert!(SkillGraph::from_parts(n, stray, p).is_err());
    }

    fn corpus() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..8, 1..7), 1..30)
    }

    fn to_dataset(raw: &[Vec<u8>]) -> TrajectoryDataset {
        TrajectoryDataset::new(
            raw.iter()
                .enumerate()
                .map(|(i, s)| {
                    let tools = s.iter().map(|c| ToolId::new(alloc::format!("t{c}")).unwrap());
                    Trajectory::new("q", tools, i).unwrap()
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_counts_consistent(raw in corpus()) {
            let ds = to_dataset(&raw);
            let g = SkillGraph::build(&ds).unwrap();
            for src in g.nodes() {
                let row: Vec<f64> = g.successors(src.as_str()).map(|(_, e)| e.weight).collect();
                if !row.is_empty() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
            let total: u64 = g.edges().map(|(_, _, e)| e.count).sum();
            let expected: usize = ds.iter().map(|t| t.len().saturating_sub(1)).sum();
            prop_assert_eq!(total as usize, expected);
            prop_assert_eq!(g.nodes(), ds.vocabulary());
            for (tool, stat) in g.positions() {
                prop_assert!(g.contains(tool.as_str()));
                prop_assert!((0.0..=1.0).contains(&stat.mean));
            }
        }

        #[test]
        fn adding_trajectories_is_monotone(raw in corpus(), extra in proptest::collection::vec(0u8..8, 1..7)) {
            let mut builder = GraphBuilder::new();
            builder.add_dataset(&to_dataset(&raw));
            let before = builder.build().unwrap();
            builder.add_dataset(&to_dataset(&[extra]));
            let after = builder.build().unwrap();
            prop_assert!(before.nodes().is_subset(after.nodes()));
            for (a, b, _) in before.edges() {
                prop_assert!(after.edge(a.as_str(), b.as_str()).is_some());
            }
        }
    }
}
