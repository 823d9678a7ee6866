use alloc::vec::Vec;

use crate::embeddings::by_score_then_id;
use crate::graph::SkillGraph;
use crate::retrieval::CandidateSet;
use crate::trajectory::ToolId;

pub const FEATURE_COUNT: usize = 8;

/// Position prior for tools never seen in training.
pub const UNSEEN_POSITION: f64 = 0.5;

/// Per-tool features, in order:
///
/// | index | feature |
/// |-------|---------|
/// | 0 | query similarity |
/// | 1 | semantic rank among candidates / (K − 1), 0 = most similar |
/// | 2 | total outgoing transition weight to other candidates |
/// | 3 | total incoming transition weight from other candidates |
/// | 4 | strongest outgoing transition to a candidate |
/// | 5 | strongest incoming transition from a candidate |
/// | 6 | mean normalized training position |
/// | 7 | candidate-set size / 10 |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn difference(&self, other: &FeatureVector) -> [f64; FEATURE_COUNT] {
        core::array::from_fn(|i| self.0[i] - other.0[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeatureGroup {
    /// Similarity and semantic rank.
    Semantic,
    /// The four transition aggregates.
    Graph,
    /// Position prior and set size.
    Position,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 3] = [FeatureGroup::Semantic, FeatureGroup::Graph, FeatureGroup::Position];

    pub fn indices(self) -> core::ops::Range<usize> {
        match self {
            FeatureGroup::Semantic => 0..2,
            FeatureGroup::Graph => 2..6,
            FeatureGroup::Position => 6..8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Semantic => "semantic",
            FeatureGroup::Graph => "graph",
            FeatureGroup::Position => "position",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        FeatureGroup::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Feature groups zeroed at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureMask {
    zeroed: [bool; 3],
}

impl FeatureMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn zeroing(groups: impl IntoIterator<Item = FeatureGroup>) -> Self {
        let mut mask = Self::default();
        for g in groups {
            mask.zeroed[g as usize] = true;
        }
        mask
    }

    pub fn zeroes(&self, group: FeatureGroup) -> bool {
        self.zeroed[group as usize]
    }

    pub fn groups(&self) -> impl Iterator<Item = FeatureGroup> + '_ {
        FeatureGroup::ALL.into_iter().filter(|g| self.zeroes(*g))
    }

    pub fn apply(&self, features: &mut FeatureVector) {
        for group in self.groups() {
            for i in group.indices() {
                features.0[i] = 0.0;
            }
        }
    }
}

/// Features for every candidate, in candidate id order. Transition
/// aggregates only consider edges between candidates.
pub fn extract_features(candidates: &CandidateSet, graph: &SkillGraph) -> Vec<(ToolId, FeatureVector)> {
    let tools = candidates.sorted_tools();
    let k = tools.len();
    let score = |t: &ToolId| candidates.semantic_score(t.as_str()).expect("candidates carry scores");

    let mut by_similarity: Vec<usize> = (0..k).collect();
    by_similarity.sort_by(|&a, &b| by_score_then_id(score(&tools[a]), &tools[a], score(&tools[b]), &tools[b]));
    let mut rank = alloc::vec![0usize; k];
    for (r, &i) in by_similarity.iter().enumerate() {
        rank[i] = r;
    }

    tools
        .iter()
        .enumerate()
        .map(|(i, tool)| {
            let (mut out_sum, mut in_sum, mut out_max, mut in_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for other in tools.iter().filter(|o| *o != tool) {
                let out = graph.transition_weight(tool.as_str(), other.as_str());
                let inc = graph.transition_weight(other.as_str(), tool.as_str());
                out_sum += out;
                in_sum += inc;
                out_max = out_max.max(out);
                in_max = in_max.max(inc);
            }
            let f = [
                score(tool),
                if k > 1 { rank[i] as f64 / (k - 1) as f64 } else { 0.0 },
                out_sum,
                in_sum,
                out_max,
                in_max,
                graph.position_mean(tool.as_str()).unwrap_or(UNSEEN_POSITION),
                k as f64 / 10.0,
            ];
            (tool.clone(), FeatureVector(f))
        })
        .collect()
}
