//! End-to-end evaluation: Stage-1 retrieval, Stage-2 ordering and scoring
//! over a test set.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use skillgraph_core::metrics::{score_instance, InstanceScore};
use skillgraph_core::rerank::{rerank, FeatureMask, PairwiseModel, RankedSequence, Stage2Method};
use skillgraph_core::retrieval::gs_hybrid_retrieve;
use skillgraph_core::{
    CandidateSet, EmbeddingStore, QueryEncoder, Result, RetrievalConfig, SkillGraph, ToolId, TrajectoryDataset,
};

/// How many tools each query is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMode {
    /// `max(gold length, 3)`.
    Oracle,
    Fixed(usize),
}

impl KMode {
    pub fn k_for(self, gold_length: usize) -> usize {
        match self {
            KMode::Oracle => skillgraph_core::metrics::oracle_k(gold_length),
            KMode::Fixed(k) => k,
        }
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Oracle => f.write_str("oracle"),
            KMode::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl FromStr for KMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "oracle" {
            return Ok(KMode::Oracle);
        }
        let n = s
            .strip_prefix("fixed:")
            .ok_or_else(|| format!("expected `oracle` or `fixed:<n>`, got `{s}`"))?;
        match n.parse::<usize>() {
            Ok(0) => Err("k must be at least 1".into()),
            Ok(k) => Ok(KMode::Fixed(k)),
            Err(e) => Err(format!("bad k `{n}`: {e}")),
        }
    }
}

/// Everything needed to answer a query.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub graph: &'a SkillGraph,
    pub embeddings: &'a EmbeddingStore,
    pub encoder: &'a (dyn QueryEncoder + Sync),
    pub retrieval: RetrievalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub index: usize,
    pub query: String,
    pub gold: Vec<ToolId>,
    pub prediction: RankedSequence,
    pub score: InstanceScore,
}

impl<'a> Pipeline<'a> {
    pub fn candidates(&self, query: &str, k: usize) -> Result<CandidateSet> {
        let vector = self.encoder.encode_query(query)?;
        gs_hybrid_retrieve(&vector, self.graph, self.embeddings, k, &self.retrieval)
    }

    pub fn recommend(
        &self,
        query: &str,
        k: usize,
        method: Stage2Method,
        model: Option<&PairwiseModel>,
        mask: FeatureMask,
    ) -> Result<RankedSequence> {
        rerank(method, &self.candidates(query, k)?, self.graph, model, mask)
    }

    /// Stage-1 candidate sets for every test trajectory, in input order.
    pub fn retrieve_all(&self, test: &TrajectoryDataset, k_mode: KMode) -> Result<Vec<CandidateSet>> {
        test.trajectories()
            .par_iter()
            .map(|t| self.candidates(t.query(), k_mode.k_for(t.len())))
            .collect()
    }

    /// Orders precomputed candidate sets and scores them against the gold
    /// sequences. Sharing candidate sets across methods keeps set metrics
    /// identical between arms.
    pub fn evaluate(
        &self,
        test: &TrajectoryDataset,
        candidates: &[CandidateSet],
        method: Stage2Method,
        model: Option<&PairwiseModel>,
        mask: FeatureMask,
    ) -> Result<Vec<InstanceOutcome>> {
        test.trajectories()
            .par_iter()
            .zip(candidates.par_iter())
            .enumerate()
            .map(|(index, (t, c))| {
                let prediction = rerank(method, c, self.graph, model, mask)?;
                let score = score_instance(&prediction, t.tools(), c.k_eval())?;
                Ok(InstanceOutcome {
                    index,
                    query: t.query().to_owned(),
                    gold: t.tools().to_vec(),
                    prediction,
                    score,
                })
            })
            .collect()
    }
}
