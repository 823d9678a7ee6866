//! Synthetic workflow corpora with planted dependency chains.
//!
//! Every domain owns a block of tools and a few dependency chains over them.
//! Tool descriptions share the domain's topic words, so query similarity
//! finds the right domain. With `invert_order`, a tool at chain position `j`
//! also carries `j + 1` of that chain's task words, which makes later tools
//! look more relevant to the query than the tools they depend on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{ToolId, Trajectory, TrajectoryDataset};

/// Topic words shared by all tools of a domain.
pub const TOPIC_WORDS: usize = 4;
/// Words unique to a single tool.
pub const NAME_WORDS: usize = 3;
const FILLER_POOL: usize = 64;
const FILLER_PER_QUERY: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainPlan {
    /// `per_domain` chains per domain. Each domain draws a hidden dependency
    /// order over its tools; a chain is a random `length`-subset of the
    /// domain's tools listed in that order, so chains never disagree.
    Linear { per_domain: usize, length: usize },
    /// `per_domain` chains per domain over a hidden cyclic order: each chain
    /// starts at a random tool and walks forward `length` tools, skipping one
    /// tool with probability one half at every step. Walks span less than
    /// half the cycle, so chains never disagree, yet every tool is as likely
    /// to open a chain as to close one.
    Cyclic { per_domain: usize, length: usize },
    /// Chains given as tool indices within each domain, one list per domain.
    Explicit(Vec<Vec<Vec<usize>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowSpec {
    pub domain_count: usize,
    pub tools_per_domain: usize,
    pub chains: ChainPlan,
    /// Share of each chain's training trajectories (rounded down) that get
    /// one random adjacent pair swapped.
    pub query_template_noise: f64,
    pub trajectories_per_chain: usize,
    pub test_queries_per_chain: usize,
    pub invert_order: bool,
    /// Probability that a query mentions each of its chain's task words.
    pub task_word_rate: f64,
    pub seed: u64,
}

impl Default for WorkflowSpec {
    fn default() -> Self {
        WorkflowSpec {
            domain_count: 8,
            tools_per_domain: 13,
            chains: ChainPlan::Cyclic {
                per_domain: 6,
                length: 4,
            },
            query_template_noise: 0.1,
            trajectories_per_chain: 40,
            test_queries_per_chain: 10,
            invert_order: true,
            task_word_rate: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    /// Domain name of every tool.
    pub labels: BTreeMap<ToolId, String>,
    pub descriptions: BTreeMap<ToolId, String>,
    /// The planted chains, domain by domain.
    pub chains: Vec<Vec<ToolId>>,
}

impl WorkflowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domain_count == 0 || self.tools_per_domain < 2 {
            return Err(Error::invalid("need at least one domain with two tools"));
        }
        if !(0.0..=1.0).contains(&self.query_template_noise) {
            return Err(Error::invalid(format!(
                "noise must lie in [0, 1], got {}",
                self.query_template_noise
            )));
        }
        if !(0.0..=1.0).contains(&self.task_word_rate) {
            return Err(Error::invalid(format!(
                "task word rate must lie in [0, 1], got {}",
                self.task_word_rate
            )));
        }
        if self.trajectories_per_chain == 0 {
            return Err(Error::invalid("trajectories per chain must be positive"));
        }
        match &self.chains {
            ChainPlan::Linear { per_domain, length } => {
                if *per_domain == 0 || *length < 2 || *length > self.tools_per_domain {
                    return Err(Error::invalid(format!(
                        "chain length must lie in [2, {}] and each domain needs a chain",
                        self.tools_per_domain
                    )));
                }
            }
            ChainPlan::Cyclic { per_domain, length } => {
                if *per_domain == 0 || *length < 2 || 4 * (*length - 1) >= self.tools_per_domain {
                    return Err(Error::invalid(format!(
                        "cyclic chains of length {length} need more than {} tools per domain",
                        4 * length.saturating_sub(1)
                    )));
                }
            }
            ChainPlan::Explicit(domains) => {
                if domains.len() != self.domain_count {
                    return Err(Error::invalid(format!(
                        "{} chain lists given for {} domains",
                        domains.len(),
                        self.domain_count
                    )));
                }
                for chain in domains.iter().flatten() {
                    if chain.len() < 2 {
                        return Err(Error::invalid("chains need at least two tools"));
                    }
                    if chain.iter().any(|&t| t >= self.tools_per_domain) {
                        return Err(Error::invalid("chain references a tool outside its domain"));
                    }
                    let mut seen = chain.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() != chain.len() {
                        return Err(Error::invalid("chain repeats a tool"));
                    }
                }
                if domains.iter().any(|d| d.is_empty()) {
                    return Err(Error::invalid("every domain needs a chain"));
                }
            }
        }
        Ok(())
    }
}

fn tool_id(domain: usize, tool: usize) -> ToolId {
    ToolId::canonical(&format!("domain{domain}"), &format!("tool{tool}")).expect("generated ids are valid")
}

fn topic_word(domain: usize, i: usize) -> String {
    format!("topic{domain}x{i}")
}

fn task_word(domain: usize, chain: usize, i: usize) -> String {
    format!("task{domain}c{chain}x{i}")
}

/// Generates a corpus; identical specs give identical corpora.
pub fn generate(spec: &WorkflowSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let per_domain: Vec<Vec<Vec<usize>>> = match &spec.chains {
        ChainPlan::Explicit(domains) => domains.clone(),
        ChainPlan::Linear { per_domain, length } => (0..spec.domain_count)
            .map(|d| {
                let mut rng = rng::seeded(rng::derive_seed(spec.seed, d as u64));
                let mut order: Vec<usize> = (0..spec.tools_per_domain).collect();
                order.shuffle(&mut rng);
                let ranks: Vec<usize> = (0..order.len()).collect();
                (0..*per_domain)
                    .map(|_| {
                        let mut picked: Vec<usize> = ranks.choose_multiple(&mut rng, *length).copied().collect();
                        picked.sort_unstable();
                        picked.into_iter().map(|r| order[r]).collect()
                    })
                    .collect()
            })
            .collect(),
        ChainPlan::Cyclic { per_domain, length } => (0..spec.domain_count)
            .map(|d| {
                let mut rng = rng::seeded(rng::derive_seed(spec.seed, d as u64));
                let n = spec.tools_per_domain;
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                (0..*per_domain)
                    .map(|_| {
                        let mut at = rng.gen_range(0..n);
                        let mut chain = vec![order[at]];
                        for _ in 1..*length {
                            at = (at + if rng.gen_bool(0.5) { 2 } else { 1 }) % n;
                            chain.push(order[at]);
                        }
                        chain
                    })
                    .collect()
            })
            .collect(),
    };

    let mut labels = BTreeMap::new();
    let mut words: BTreeMap<ToolId, Vec<String>> = BTreeMap::new();
    for d in 0..spec.domain_count {
        for t in 0..spec.tools_per_domain {
            let id = tool_id(d, t);
            labels.insert(id.clone(), format!("domain{d}"));
            let mut w: Vec<String> = (0..NAME_WORDS).map(|i| format!("name{d}t{t}x{i}")).collect();
            w.extend((0..TOPIC_WORDS).map(|i| topic_word(d, i)));
            words.insert(id, w);
        }
    }

    // (domain, chain index within domain, tools)
    let mut chains = Vec::new();
    for (d, domain_chains) in per_domain.iter().enumerate() {
        for (c, chain) in domain_chains.iter().enumerate() {
            let tools: Vec<ToolId> = chain.iter().map(|&t| tool_id(d, t)).collect();
            if spec.invert_order {
                for (j, tool) in tools.iter().enumerate() {
                    let w = words.get_mut(tool).expect("tool is registered");
                    w.extend((0..=j).map(|i| task_word(d, c, i)));
                }
            }
            chains.push((d, c, tools));
        }
    }
    let descriptions = words.into_iter().map(|(id, w)| (id, w.join(" "))).collect();

    let mut rng = rng::seeded(rng::derive_seed(spec.seed, u64::MAX));
    let fillers: Vec<String> = (0..FILLER_POOL).map(|i| format!("filler{i}")).collect();
    let query = |d: usize, c: usize, length: usize, rng: &mut rng::SeededRng| {
        let mut w: Vec<String> = (0..TOPIC_WORDS).map(|i| topic_word(d, i)).collect();
        for i in 0..length {
            if rng.gen_bool(spec.task_word_rate) {
                w.push(task_word(d, c, i));
            }
        }
        w.extend(fillers.choose_multiple(rng, FILLER_PER_QUERY).cloned());
        w.shuffle(rng);
        w.join(" ")
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let noisy_count = (spec.query_template_noise * spec.trajectories_per_chain as f64) as usize;
    for (d, c, tools) in &chains {
        let noisy: Vec<usize> = rand::seq::index::sample(&mut rng, spec.trajectories_per_chain, noisy_count).into_vec();
        for n in 0..spec.trajectories_per_chain {
            let mut seq = tools.clone();
            if noisy.contains(&n) {
                let i = rng.gen_range(0..seq.len() - 1);
                seq.swap(i, i + 1);
            }
            let q = query(*d, *c, tools.len(), &mut rng);
            let index = train.len();
            train.push(Trajectory::new(q, seq, index)?);
        }
        for _ in 0..spec.test_queries_per_chain {
            let q = query(*d, *c, tools.len(), &mut rng);
            let index = test.len();
            test.push(Trajectory::new(q, tools.clone(), index)?);
        }
    }

    Ok(SyntheticCorpus {
        train: TrajectoryDataset::new(train),
        test: TrajectoryDataset::new(test),
        labels,
        descriptions,
        chains: chains.into_iter().map(|(_, _, t)| t).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::analyze;
    use crate::graph::SkillGraph;

    fn two_domains(noise: f64) -> WorkflowSpec {
        WorkflowSpec {
            domain_count: 2,
            tools_per_domain: 4,
            chains: ChainPlan::Explicit(vec![vec![vec![0, 1, 2, 3]], vec![vec![2, 0, 3, 1]]]),
            query_template_noise: noise,
            trajectories_per_chain: 50,
            test_queries_per_chain: 5,
            invert_order: true,
            task_word_rate: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn counts() {
        let corpus = generate(&two_domains(0.0)).unwrap();
        assert_eq!(corpus.train.len(), 100);
        assert_eq!(corpus.test.vocabulary().len(), 8);
        assert_eq!(corpus.labels.len(), 8);
        assert_eq!(corpus.descriptions.len(), 8);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = WorkflowSpec::default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = WorkflowSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let mut spec = two_domains(0.0);
        spec.chains = ChainPlan::Explicit(vec![vec![vec![0, 4]], vec![vec![0, 1]]]);
        assert!(matches!(generate(&spec), Err(Error::InvalidArgument(_))));
        spec.chains = ChainPlan::Explicit(vec![vec![vec![0, 1]]]);
        assert!(generate(&spec).is_err());
        spec.chains = ChainPlan::Explicit(vec![vec![vec![0, 0]], vec![vec![0, 1]]]);
        assert!(generate(&spec).is_err());
        let bad_noise = WorkflowSpec { query_template_noise: 1.5, ..two_domains(0.0) };
        assert!(generate(&bad_noise).is_err());
        let long = WorkflowSpec {
            chains: ChainPlan::Linear { per_domain: 1, length: 5 },
            ..two_domains(0.0)
        };
        assert!(generate(&long).is_err());
        let wide = WorkflowSpec {
            chains: ChainPlan::Cyclic { per_domain: 1, length: 2 },
            ..two_domains(0.0)
        };
        assert!(generate(&wide).is_err());
    }

    fn assert_consistent(chains: &[Vec<ToolId>]) {
        let mut before = alloc::collections::BTreeSet::new();
        for chain in chains {
            for (i, a) in chain.iter().enumerate() {
                for b in &chain[i + 1..] {
                    before.insert((a.clone(), b.clone()));
                }
            }
        }
        for (a, b) in &before {
            assert!(!before.contains(&(b.clone(), a.clone())), "{a} and {b} appear in both orders");
        }
    }

    #[test]
    fn generated_chains_never_disagree() {
        for seed in 0..20 {
            for chains in [
                ChainPlan::Linear { per_domain: 5, length: 4 },
                ChainPlan::Cyclic { per_domain: 8, length: 4 },
            ] {
                let spec = WorkflowSpec { chains, seed, ..WorkflowSpec::default() };
                let corpus = generate(&spec).unwrap();
                assert_consistent(&corpus.chains);
                assert!(corpus.chains.iter().all(|c| c.len() == 4));
            }
        }
    }

    #[test]
    fn cyclic_chains_spread_positions() {
        let corpus = generate(&WorkflowSpec { chains: ChainPlan::Cyclic { per_domain: 200, length: 4 }, domain_count: 1, ..WorkflowSpec::default() }).unwrap();
        let g = SkillGraph::build(&corpus.train).unwrap();
        for tool in g.nodes() {
            let mean = g.position_mean(tool.as_str()).unwrap();
            assert!((0.3..0.7).contains(&mean), "{tool} has mean position {mean}");
        }
    }

    #[test]
    fn gold_sequences_follow_chains() {
        let corpus = generate(&WorkflowSpec::default()).unwrap();
        for t in corpus.test.iter() {
            assert!(corpus.chains.iter().any(|c| c.as_slice() == t.tools()));
        }
    }

    #[test]
    fn planted_edges_survive_noise() {
        for noise in [0.0, 0.1, 0.3] {
            let corpus = generate(&two_domains(noise)).unwrap();
            let g = SkillGraph::build(&corpus.train).unwrap();
            for chain in &corpus.chains {
                for p in chain.windows(2) {
                    let w = g.transition_weight(p[0].as_str(), p[1].as_str());
                    assert!(w >= 1.0 - noise, "w({}, {}) = {w} at noise {noise}", p[0], p[1]);
                }
            }
        }
    }

    #[test]
    fn louvain_recovers_domains() {
        let corpus = generate(&two_domains(0.0)).unwrap();
        let g = SkillGraph::build(&corpus.train).unwrap();
        let (_, report) = analyze(&g, &corpus.labels, 5).unwrap();
        assert_eq!(report.mean_purity, 1.0);
        assert_eq!(report.nmi, 1.0);
    }
}
