//! Stage 2: ordering a fixed candidate set.

pub mod features;
pub mod model;
pub mod train;

use alloc::vec::Vec;
use itertools::Itertools;

use crate::embeddings::by_score_then_id;
use crate::error::{Error, Result};
use crate::graph::SkillGraph;
use crate::retrieval::CandidateSet;
use crate::trajectory::ToolId;

pub use features::{extract_features, FeatureGroup, FeatureMask, FeatureVector};
pub use model::PairwiseModel;
pub use train::{train, TrainingConfig};

/// Largest candidate set searched exhaustively (7! = 5040 orders).
pub const EXHAUSTIVE_LIMIT: usize = 7;

/// Default transition weight of the hybrid permutation score.
pub const DEFAULT_HYBRID_ALPHA: f64 = 0.4;

/// Added to transition weights before taking logs.
pub const LOG_EPSILON: f64 = 1e-6;

/// Candidates in recommended execution order.
pub type RankedSequence = Vec<ToolId>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage2Method {
    SemSort,
    Hybrid { alpha: f64 },
    OptPerm,
    Learned,
}

impl Stage2Method {
    pub fn name(&self) -> &'static str {
        match self {
            Stage2Method::SemSort => "sem-sort",
            Stage2Method::Hybrid { .. } => "hybrid",
            Stage2Method::OptPerm => "opt-perm",
            Stage2Method::Learned => "lr",
        }
    }
}

/// Descending query similarity, ties by id.
pub fn sem_sort(candidates: &CandidateSet) -> RankedSequence {
    let mut tools = candidates.sorted_tools();
    let score = |t: &ToolId| candidates.semantic_score(t.as_str()).unwrap_or(0.0);
    tools.sort_by(|a, b| by_score_then_id(score(a), a, score(b), b));
    tools
}

/// `α · Σ w(π_i, π_{i+1}) + (1 − α) · Σ s(π_i) / i` with 1-based `i`.
pub fn hybrid_score(sequence: &[ToolId], candidates: &CandidateSet, graph: &SkillGraph, alpha: f64) -> f64 {
    let transitions: f64 = sequence
        .windows(2)
        .map(|p| graph.transition_weight(p[0].as_str(), p[1].as_str()))
        .sum();
    let semantic: f64 = sequence
        .iter()
        .enumerate()
        .map(|(i, t)| candidates.semantic_score(t.as_str()).unwrap_or(0.0) / (i + 1) as f64)
        .sum();
    alpha * transitions + (1.0 - alpha) * semantic
}

/// `Σ ln(w(π_i, π_{i+1}) + ε)`.
pub fn opt_perm_score(sequence: &[ToolId], graph: &SkillGraph) -> f64 {
    sequence
        .windows(2)
        .map(|p| libm::log(graph.transition_weight(p[0].as_str(), p[1].as_str()) + LOG_EPSILON))
        .sum()
}

/// Highest-scoring permutation; permutations are visited in lexicographic
/// order of ids so the first strict maximum wins ties.
fn best_permutation(tools: &[ToolId], score: impl Fn(&[ToolId]) -> f64) -> RankedSequence {
    let mut best: Option<(f64, Vec<ToolId>)> = None;
    for perm in tools.iter().cloned().permutations(tools.len()) {
        let s = score(&perm);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, perm));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Index of the highest `gain`, ties by smallest index.
fn argmax(remaining: &[ToolId], gain: impl Fn(&ToolId) -> f64) -> usize {
    let mut best = 0;
    let mut best_gain = f64::NEG_INFINITY;
    for (i, t) in remaining.iter().enumerate() {
        let g = gain(t);
        if g > best_gain {
            best = i;
            best_gain = g;
        }
    }
    best
}

/// Hybrid permutation reranking, exhaustive up to [`EXHAUSTIVE_LIMIT`] and
/// greedy on marginal score above it.
pub fn hybrid_rerank(candidates: &CandidateSet, graph: &SkillGraph, alpha: f64) -> RankedSequence {
    let tools = candidates.sorted_tools();
    if tools.len() <= EXHAUSTIVE_LIMIT {
        return best_permutation(&tools, |p| hybrid_score(p, candidates, graph, alpha));
    }
    hybrid_greedy(candidates, graph, alpha)
}

/// Greedy hybrid construction: each step appends the tool adding the most to
/// the hybrid score.
pub fn hybrid_greedy(candidates: &CandidateSet, graph: &SkillGraph, alpha: f64) -> RankedSequence {
    let mut remaining = candidates.sorted_tools();
    let mut sequence: Vec<ToolId> = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let position = (sequence.len() + 1) as f64;
        let last = sequence.last();
        let pick = argmax(&remaining, |t| {
            let w = last.map_or(0.0, |l| graph.transition_weight(l.as_str(), t.as_str()));
            alpha * w + (1.0 - alpha) * candidates.semantic_score(t.as_str()).unwrap_or(0.0) / position
        });
        sequence.push(remaining.remove(pick));
    }
    sequence
}

/// Maximum log-transition path, exhaustive up to [`EXHAUSTIVE_LIMIT`].
/// Larger sets build one greedy chain from every start and keep the best.
pub fn opt_perm(candidates: &CandidateSet, graph: &SkillGraph) -> RankedSequence {
    let tools = candidates.sorted_tools();
    if tools.len() <= EXHAUSTIVE_LIMIT {
        return best_permutation(&tools, |p| opt_perm_score(p, graph));
    }
    let mut best: Option<(f64, Vec<ToolId>)> = None;
    for start in 0..tools.len() {
        let mut remaining = tools.clone();
        let mut chain = alloc::vec![remaining.remove(start)];
        while !remaining.is_empty() {
            let last = chain.last().expect("chain is non-empty").clone();
            let pick = argmax(&remaining, |t| graph.transition_weight(last.as_str(), t.as_str()));
            chain.push(remaining.remove(pick));
        }
        let s = opt_perm_score(&chain, graph);
        let better = match &best {
            None => true,
            Some((b, seq)) => s > *b || (s == *b && chain < *seq),
        };
        if better {
            best = Some((s, chain));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Win-probability totals `v(a) = Σ_b p_ab` for each candidate, in id order.
pub fn learned_scores(
    model: &PairwiseModel,
    candidates: &CandidateSet,
    graph: &SkillGraph,
    mask: FeatureMask,
) -> Vec<(ToolId, f64)> {
    let mut features = extract_features(candidates, graph);
    for (_, f) in features.iter_mut() {
        mask.apply(f);
    }
    let k = features.len();
    let mut totals = alloc::vec![0.0f64; k];
    for a in 0..k {
        for b in a + 1..k {
            let p = model.preference(&features[a].1, &features[b].1);
            totals[a] += p;
            totals[b] += 1.0 - p;
        }
    }
    features.into_iter().map(|(t, _)| t).zip(totals).collect()
}

/// Learned pairwise reranking: sort by total win probability, ties by id.
pub fn learned_rerank(
    model: &PairwiseModel,
    candidates: &CandidateSet,
    graph: &SkillGraph,
    mask: FeatureMask,
) -> RankedSequence {
    let mut scored = learned_scores(model, candidates, graph, mask);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().map(|(t, _)| t).collect()
}

/// Dispatches to the chosen reranker. [`Stage2Method::Learned`] needs a
/// model.
pub fn rerank(
    method: Stage2Method,
    candidates: &CandidateSet,
    graph: &SkillGraph,
    model: Option<&PairwiseModel>,
    mask: FeatureMask,
) -> Result<RankedSequence> {
    Ok(match (method, model) {
        (Stage2Method::SemSort, _) => sem_sort(candidates),
        (Stage2Method::Hybrid { alpha }, _) => hybrid_rerank(candidates, graph, alpha),
        (Stage2Method::OptPerm, _) => opt_perm(candidates, graph),
        (Stage2Method::Learned, Some(m)) => learned_rerank(m, candidates, graph, mask),
        (Stage2Method::Learned, None) => return Err(Error::invalid("learned reranking needs a model")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, PositionStat};
    use crate::trajectory::{ids, Trajectory, TrajectoryDataset};
    use alloc::collections::BTreeMap;
    use alloc::format;
    use alloc::string::String;
    use proptest::prelude::*;

    fn candidates(sims: &[(&str, f64)]) -> CandidateSet {
        let tools = sims.iter().map(|(t, _)| ToolId::new(*t).unwrap()).collect();
        let scores: BTreeMap<ToolId, f64> = sims.iter().map(|(t, s)| (ToolId::new(*t).unwrap(), *s)).collect();
        CandidateSet::new(tools, scores, sims.len()).unwrap()
    }

    fn graph(seqs: &[&[&str]]) -> SkillGraph {
        SkillGraph::build(&TrajectoryDataset::new(
            seqs.iter()
                .enumerate()
                .map(|(i, s)| Trajectory::new("q", ids(s), i).unwrap())
                .collect(),
        ))
        .unwrap()
    }

    /// Graph with explicit weights; counts are placeholders.
    fn weighted(nodes: &[&str], edges: &[(&str, &str, f64)]) -> SkillGraph {
        let edges = edges
            .iter()
            .map(|(a, b, w)| (ToolId::new(*a).unwrap(), ToolId::new(*b).unwrap(), Edge { count: 1, weight: *w }))
            .collect::<Vec<_>>();
        let positions = nodes
            .iter()
            .map(|n| (ToolId::new(*n).unwrap(), PositionStat { mean: 0.5, count: 1 }))
            .collect::<Vec<_>>();
        SkillGraph::from_parts(ids(nodes), edges, positions).unwrap()
    }

    fn names(seq: &[ToolId]) -> Vec<&str> {
        seq.iter().map(|t| t.as_str()).collect()
    }

    #[test]
    fn sem_sort_examples() {
        let g = graph(&[&["A"]]);
        assert_eq!(names(&sem_sort(&candidates(&[("B", 0.5), ("A", 0.9)]))), ["A", "B"]);
        assert_eq!(names(&sem_sort(&candidates(&[("B", 0.5), ("A", 0.5)]))), ["A", "B"]);
        let one = candidates(&[("Q", 0.1)]);
        assert_eq!(names(&sem_sort(&one)), ["Q"]);
        assert_eq!(names(&hybrid_rerank(&one, &g, 0.4)), ["Q"]);
        assert_eq!(names(&opt_perm(&one, &g)), ["Q"]);
    }

    #[test]
    fn hybrid_transition_only() {
        let g = weighted(&["A", "B", "Z"], &[("A", "B", 0.9), ("A", "Z", 0.1)]);
        let c = candidates(&[("B", 0.3), ("A", 0.3)]);
        assert_eq!(names(&hybrid_rerank(&c, &g, 1.0)), ["A", "B"]);
    }

    #[test]
    fn opt_perm_examples() {
        let g = weighted(&["A", "B", "Z"], &[("A", "B", 0.9), ("A", "Z", 0.1)]);
        assert_eq!(names(&opt_perm(&candidates(&[("B", 0.9), ("A", 0.1)]), &g)), ["A", "B"]);
        let chain = graph(&[&["A", "B", "C"]]);
        assert_eq!(names(&opt_perm(&candidates(&[("C", 0.9), ("B", 0.5), ("A", 0.1)]), &chain)), ["A", "B", "C"]);
        let edgeless = graph(&[&["C"], &["A"], &["B"]]);
        assert_eq!(names(&opt_perm(&candidates(&[("C", 0.9), ("B", 0.5), ("A", 0.1)]), &edgeless)), ["A", "B", "C"]);
    }

    #[test]
    fn learned_orders_by_position_prior() {
        // a model whose logit is -Δf7: earlier-position tools win
        let mut layers = PairwiseModel::new(0).layers().to_vec();
        for l in layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        layers[0].weights[6] = -1.0;
        layers[0].weights[features::FEATURE_COUNT + 6] = 1.0;
        layers[1].weights[0] = 1.0;
        layers[1].weights[64 + 1] = 1.0;
        layers[2].weights[0] = 1.0;
        layers[2].weights[1] = -1.0;
        let model = PairwiseModel::from_layers(layers, 0).unwrap();
        let g = graph(&[&["A", "B", "C"]]);
        assert_eq!((g.position_mean("A"), g.position_mean("B"), g.position_mean("C")), (Some(0.0), Some(0.5), Some(1.0)));
        let c = candidates(&[("C", 0.9), ("B", 0.8), ("A", 0.1)]);
        let mut d = [0.0; 8];
        d[6] = -0.5;
        assert!((model.logit(&d) - 0.5).abs() < 1e-15);
        let scores = learned_scores(&model, &c, &g, FeatureMask::none());
        assert!(scores[0].1 > scores[1].1 && scores[1].1 > scores[2].1);
        assert_eq!(names(&learned_rerank(&model, &c, &g, FeatureMask::none())), ["A", "B", "C"]);
        // zeroing the position group leaves every pair at 0.5; ties go by id
        let masked = learned_scores(&model, &c, &g, FeatureMask::zeroing([FeatureGroup::Position]));
        assert!(masked.iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn learned_single_tool() {
        let model = PairwiseModel::new(3);
        let g = graph(&[&["A"]]);
        assert_eq!(names(&learned_rerank(&model, &candidates(&[("A", 0.2)]), &g, FeatureMask::none())), ["A"]);
    }

    /// Random instance: K tools with similarities and a random transition
    /// graph over them.
    fn instance(max_k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Vec<u8>>)> {
        (1..=max_k).prop_flat_map(|k| {
            (
                prop::collection::vec(-1.0f64..1.0, k),
                prop::collection::vec(prop::collection::vec(1u8..4, 1..=k + 2), 1..8),
            )
        })
    }

    fn build(sims: &[f64], walks: &[Vec<u8>]) -> (CandidateSet, SkillGraph) {
        let k = sims.len();
        let name = |i: usize| format!("t{i}");
        let mut trajectories = Vec::new();
        for (n, walk) in walks.iter().enumerate() {
            let mut at = n % k;
            let mut seq = alloc::vec![ToolId::new(name(at)).unwrap()];
            for step in walk {
                at = (at + *step as usize) % k;
                seq.push(ToolId::new(name(at)).unwrap());
            }
            trajectories.push(Trajectory::new("q", seq, n).unwrap());
        }
        for i in 0..k {
            trajectories.push(Trajectory::new("q", [ToolId::new(name(i)).unwrap()], 100 + i).unwrap());
        }
        let g = SkillGraph::build(&TrajectoryDataset::new(trajectories)).unwrap();
        let pairs: Vec<(String, f64)> = sims.iter().enumerate().map(|(i, s)| (name(i), *s)).collect();
        let refs: Vec<(&str, f64)> = pairs.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        (candidates(&refs), g)
    }

    /// Independent oracle: Heap's algorithm over all orders, then the best
    /// score with lexicographically smallest sequence among exact ties.
    fn oracle(tools: &[ToolId], score: impl Fn(&[ToolId]) -> f64) -> Vec<ToolId> {
        fn heap(k: usize, a: &mut Vec<ToolId>, out: &mut Vec<Vec<ToolId>>) {
            if k <= 1 {
                out.push(a.clone());
                return;
            }
            for i in 0..k - 1 {
                heap(k - 1, a, out);
                if k.is_multiple_of(2) {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
            }
            heap(k - 1, a, out);
        }
        let mut all = Vec::new();
        let mut a = tools.to_vec();
        heap(a.len(), &mut a, &mut all);
        all.into_iter()
            .map(|p| (score(&p), p))
            .max_by(|x, y| x.0.total_cmp(&y.0).then_with(|| y.1.cmp(&x.1)))
            .unwrap()
            .1
    }

    fn is_permutation(out: &[ToolId], c: &CandidateSet) -> bool {
        let mut sorted = out.to_vec();
        sorted.sort();
        sorted == c.sorted_tools()
    }

    proptest! {
        #[test]
        fn exhaustive_rerankers_match_oracle((sims, walks) in instance(5), alpha in 0.0f64..=1.0) {
            let (c, g) = build(&sims, &walks);
            let tools = c.sorted_tools();
            let hybrid = hybrid_rerank(&c, &g, alpha);
            prop_assert_eq!(&hybrid, &oracle(&tools, |p| hybrid_score(p, &c, &g, alpha)));
            let opt = opt_perm(&c, &g);
            prop_assert_eq!(&opt, &oracle(&tools, |p| opt_perm_score(p, &g)));
        }

        #[test]
        fn exhaustive_beats_greedy((sims, walks) in instance(4), alpha in 0.0f64..=1.0) {
            let (c, g) = build(&sims, &walks);
            let exhaustive = hybrid_score(&hybrid_rerank(&c, &g, alpha), &c, &g, alpha);
            let greedy = hybrid_score(&hybrid_greedy(&c, &g, alpha), &c, &g, alpha);
            prop_assert!(exhaustive >= greedy);
        }

        #[test]
        fn semantic_only_hybrid_is_sem_sort((sims, walks) in instance(5)) {
            let (c, g) = build(&sims, &walks);
            let hybrid = hybrid_rerank(&c, &g, 0.0);
            let sorted = sem_sort(&c);
            // equal scores can only arise from equal similarities
            prop_assert_eq!(hybrid_score(&hybrid, &c, &g, 0.0), hybrid_score(&sorted, &c, &g, 0.0));
            let distinct = sims.iter().all(|a| sims.iter().filter(|b| *b == a).count() == 1);
            if distinct {
                prop_assert_eq!(hybrid, sorted);
            }
        }

        #[test]
        fn rerankers_return_permutations((sims, walks) in instance(9), seed in 0u64..4) {
            let (c, g) = build(&sims, &walks);
            let model = PairwiseModel::new(seed);
            for method in [Stage2Method::SemSort, Stage2Method::Hybrid { alpha: 0.4 }, Stage2Method::OptPerm, Stage2Method::Learned] {
                let out = rerank(method, &c, &g, Some(&model), FeatureMask::none()).unwrap();
                prop_assert!(is_permutation(&out, &c), "{} dropped or added tools", method.name());
            }
        }
    }
}
