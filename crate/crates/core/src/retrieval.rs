//! Stage 1: graph-semantic hybrid candidate construction.
//!
//! 1. Take a semantic pool of `max(k + 2, c·k)` tools.
//! 2. Induce the transition subgraph on the pool; when it falls apart into
//!    several weakly connected components, insert a few bridge tools found on
//!    short paths of the full graph.
//! 3. Sequence the pool greedily by the hybrid score
//!    `α·w_loc(prev, t) + (1 − α)·sim(t) + γ·b_pos(t, p)`, truncate to `k`
//!    and pad from the semantic ranking when the pool runs short.
//!
//! Only the resulting set is meant for downstream ordering; the provisional
//! order is kept for inspection.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::SkillGraph;
use crate::trajectory::ToolId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    /// Semantic pool multiplier `c`.
    pub pool_multiplier: usize,
    /// Weight of the local transition term.
    pub alpha: f64,
    /// Weight of the position bonus.
    pub gamma: f64,
    /// Maximum number of bridge tools inserted per query.
    pub max_bridges: usize,
    /// Maximum path length, in edges, searched when bridging.
    pub bridge_path_limit: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_multiplier: 3,
            alpha: 0.5,
            gamma: 0.1,
            max_bridges: 2,
            bridge_path_limit: 3,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_multiplier == 0 {
            return Err(Error::invalid("pool multiplier must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be non-negative"));
        }
        if self.bridge_path_limit == 0 {
            return Err(Error::invalid("bridge path limit must be at least 1 edge"));
        }
        Ok(())
    }

    pub fn pool_size(&self, k_eval: usize) -> usize {
        (k_eval + 2).max(self.pool_multiplier * k_eval)
    }
}

/// Stage-1 output: up to `k_eval` distinct tools with their semantic scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    tools: Vec<ToolId>,
    semantic_scores: BTreeMap<ToolId, f64>,
    k_eval: usize,
}

impl CandidateSet {
    /// Fails on duplicate tools or tools without a score.
    pub fn new(tools: Vec<ToolId>, semantic_scores: BTreeMap<ToolId, f64>, k_eval: usize) -> Result<Self> {
        let unique: BTreeSet<&ToolId> = tools.iter().collect();
        if unique.len() != tools.len() {
            return Err(Error::invalid("candidate set contains duplicates"));
        }
        if let Some(t) = tools.iter().find(|t| !semantic_scores.contains_key(*t)) {
            return Err(Error::invalid(alloc::format!("candidate `{t}` has no semantic score")));
        }
        let semantic_scores = tools
            .iter()
            .map(|t| (t.clone(), semantic_scores[t]))
            .collect();
        Ok(CandidateSet {
            tools,
            semantic_scores,
            k_eval,
        })
    }

    /// Scores every tool of `tools` against `query`.
    pub fn from_tools(
        tools: Vec<ToolId>,
        embeddings: &EmbeddingStore,
        query: &[f32],
        k_eval: usize,
    ) -> Result<Self> {
        let scores = tools
            .iter()
            .map(|t| Ok((t.clone(), embeddings.semantic_similarity(query, t.as_str())?)))
            .collect::<Result<_>>()?;
        CandidateSet::new(tools, scores, k_eval)
    }

    /// Tools in provisional order.
    pub fn tools(&self) -> &[ToolId] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn k_eval(&self) -> usize {
        self.k_eval
    }

    pub fn semantic_score(&self, tool: &str) -> Option<f64> {
        self.semantic_scores.get(tool).copied()
    }

    pub fn semantic_scores(&self) -> &BTreeMap<ToolId, f64> {
        &self.semantic_scores
    }

    /// Tools in id order, i.e. the set view.
    pub fn sorted_tools(&self) -> Vec<ToolId> {
        self.semantic_scores.keys().cloned().collect()
    }
}

/// `1 − |p − p̄(tool)|` when the tool has position statistics, else 0.
pub fn position_bonus(graph: &SkillGraph, tool: &str, p: f64) -> f64 {
    graph
        .position_mean(tool)
        .map_or(0.0, |mean| 1.0 - libm::fabs(p - mean))
}

/// Local transition weight inside the pool: the forward weight, or half the
/// reverse weight when only `next -> prev` exists.
fn local_weight(graph: &SkillGraph, prev: &str, next: &str) -> f64 {
    match graph.edge(prev, next) {
        Some(edge) => edge.weight,
        None => graph.edge(next, prev).map_or(0.0, |edge| edge.weight / 2.0),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Weakly connected components of the subgraph induced on `pool`, each
/// listed in pool order (so its first member is its most similar tool).
/// Components are returned largest first, ties by best pool position.
fn components(graph: &SkillGraph, pool: &[ToolId]) -> Vec<Vec<usize>> {
    let index: BTreeMap<&str, usize> = pool.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..pool.len()).collect();
    for (i, tool) in pool.iter().enumerate() {
        for (next, _) in graph.successors(tool.as_str()) {
            if let Some(&j) = index.get(next.as_str()) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..pool.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Shortest undirected path from `from` to `to` with at most `limit` edges,
/// restricted to tools accepted by `allowed`. Neighbours are expanded in id
/// order, so the returned path is deterministic.
fn short_path<'g>(
    graph: &'g SkillGraph,
    from: &'g ToolId,
    to: &ToolId,
    limit: usize,
    allowed: impl Fn(&ToolId) -> bool,
) -> Option<Vec<&'g ToolId>> {
    let mut previous: BTreeMap<&ToolId, &ToolId> = BTreeMap::new();
    let mut depth: BTreeMap<&ToolId, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    depth.insert(from, 0);
    queue.push_back(from);
    while let Some(node) = queue.pop_front() {
        if node == to {
            let mut path = vec![node];
            let mut cur = node;
            while let Some(&p) = previous.get(cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        let d = depth[node];
        if d == limit {
            continue;
        }
        for next in graph.undirected_neighbors(node.as_str()) {
            if depth.contains_key(next) || !(next == to || allowed(next)) {
                continue;
            }
            depth.insert(next, d + 1);
            previous.insert(next, node);
            queue.push_back(next);
        }
    }
    None
}

/// Runs the three Stage-1 steps for one query vector.
pub fn gs_hybrid_retrieve(
    query: &[f32],
    graph: &SkillGraph,
    embeddings: &EmbeddingStore,
    k_eval: usize,
    config: &RetrievalConfig,
) -> Result<CandidateSet> {
    if k_eval == 0 {
        return Err(Error::invalid("k_eval must be at least 1"));
    }
    config.validate()?;
    if embeddings.is_empty() {
        return Err(Error::EmptyLibrary);
    }

    let ranking = embeddings.rank_all(query)?;
    let scores: BTreeMap<ToolId, f64> = ranking.iter().cloned().collect();

    // step 1: semantic pool
    let pool_size = config.pool_size(k_eval).min(ranking.len());
    let mut pool: Vec<ToolId> = ranking[..pool_size].iter().map(|(t, _)| t.clone()).collect();

    // step 2: bridging toward the largest component
    let groups = components(graph, &pool);
    if groups.len() > 1 && config.max_bridges > 0 {
        let hub = pool[groups[0][0]].clone();
        let targets: Vec<ToolId> = groups[1..].iter().map(|g| pool[g[0]].clone()).collect();
        let mut members: BTreeSet<ToolId> = pool.iter().cloned().collect();
        let mut inserted = 0;
        for target in &targets {
            if inserted >= config.max_bridges {
                break;
            }
            if !graph.contains(hub.as_str()) || !graph.contains(target.as_str()) {
                continue;
            }
            let Some(path) = short_path(graph, &hub, target, config.bridge_path_limit, |t| {
                embeddings.contains(t.as_str())
            }) else {
                continue;
            };
            let interior: Vec<&ToolId> = path[1..path.len() - 1]
                .iter()
                .copied()
                .filter(|t| !members.contains(*t))
                .collect();
            if inserted + interior.len() > config.max_bridges {
                continue;
            }
            for tool in interior {
                members.insert(tool.clone());
                pool.push(tool.clone());
                inserted += 1;
            }
        }
    }

    // step 3: greedy provisional sequencing
    let target_len = k_eval.min(pool.len());
    let mut used = vec![false; pool.len()];
    let mut sequence: Vec<ToolId> = Vec::with_capacity(k_eval);
    // the pool is in descending-similarity order, bridges last
    used[0] = true;
    sequence.push(pool[0].clone());
    while sequence.len() < target_len {
        let prev = sequence.last().expect("sequence is non-empty").as_str();
        let p = if k_eval == 1 {
            0.0
        } else {
            sequence.len() as f64 / (k_eval - 1) as f64
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, tool) in pool.iter().enumerate() {
            if used[i] {
                continue;
            }
            let score = config.alpha * local_weight(graph, prev, tool.as_str())
                + (1.0 - config.alpha) * scores[tool]
                + config.gamma * position_bonus(graph, tool.as_str(), p);
            let better = match best {
                None => true,
                Some((j, s)) => score > s || (score == s && *tool < pool[j]),
            };
            if better {
                best = Some((i, score));
            }
        }
        let (i, _) = best.expect("unused pool members remain");
        used[i] = true;
        sequence.push(pool[i].clone());
    }

    // step 4: pad from the global semantic ranking
    if sequence.len() < k_eval {
        let chosen: BTreeSet<ToolId> = sequence.iter().cloned().collect();
        for (tool, _) in &ranking {
            if sequence.len() == k_eval {
                break;
            }
            if !chosen.contains(tool) {
                sequence.push(tool.clone());
            }
        }
    }

    let candidate_scores = sequence.iter().map(|t| (t.clone(), scores[t])).collect();
    CandidateSet::new(sequence, candidate_scores, k_eval)
}
