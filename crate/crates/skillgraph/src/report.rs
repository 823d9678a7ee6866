//! Report documents written by the `communities` and `evaluate` commands.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use skillgraph_core::community::{CommunityReport, Correlation, Partition};
use skillgraph_core::metrics::{aggregate, bootstrap_compare, InstanceScore, Metric, MetricMeans, Resampling};
use skillgraph_core::Result;

use crate::eval::InstanceOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub count: usize,
    /// Keyed by metric name.
    pub metrics: BTreeMap<String, f64>,
}

impl From<&MetricMeans> for Means {
    fn from(means: &MetricMeans) -> Self {
        Means {
            count: means.count,
            metrics: means.means.iter().map(|(m, v)| (m.name().to_owned(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMeans {
    /// Gold-length range, such as `3-4`.
    pub bucket: String,
    #[serde(flatten)]
    pub means: Means,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Feature groups zeroed at inference.
    pub ablated: Vec<String>,
    pub overall: Means,
    pub buckets: Vec<BucketMeans>,
}

impl MethodSummary {
    pub fn new(method: &str, ablated: Vec<String>, scores: &[InstanceScore]) -> Result<Self> {
        let report = aggregate(scores)?;
        Ok(MethodSummary {
            method: method.to_owned(),
            ablated,
            overall: Means::from(&report.overall),
            buckets: report
                .buckets
                .iter()
                .map(|(bucket, means)| BucketMeans {
                    bucket: bucket.label().to_owned(),
                    means: Means::from(means),
                })
                .collect(),
        })
    }

    pub fn mean(&self, metric: Metric) -> f64 {
        self.overall.metrics[metric.name()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub baseline: String,
    pub metric: String,
    pub mean: f64,
    pub baseline_mean: f64,
    pub p_value: f64,
    /// 95% interval of the evaluated method's resampled mean.
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

/// Paired comparisons of `scores` against `baseline` on every metric.
pub fn bootstrap_rows(
    baseline: &str,
    scores: &[InstanceScore],
    baseline_scores: &[InstanceScore],
    resampling: Resampling,
) -> Result<Vec<BootstrapRow>> {
    Metric::ALL
        .into_iter()
        .map(|metric| {
            let r = bootstrap_compare(scores, baseline_scores, metric, resampling)?;
            Ok(BootstrapRow {
                baseline: baseline.to_owned(),
                metric: metric.name().to_owned(),
                mean: r.mean_a,
                baseline_mean: r.mean_b,
                p_value: r.p_value,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                resamples: r.resamples,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: serde_json::Value,
    pub instances: usize,
    /// The evaluated method first, then any baselines.
    pub methods: Vec<MethodSummary>,
    pub bootstrap: Vec<BootstrapRow>,
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// One scored instance, as streamed to the optional per-instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub method: String,
    pub index: usize,
    pub query: String,
    pub gold: Vec<String>,
    pub prediction: Vec<String>,
    pub k_eval: usize,
    pub metrics: BTreeMap<String, f64>,
}

impl InstanceRecord {
    pub fn new(method: &str, outcome: &InstanceOutcome) -> Self {
        let names = |ids: &[skillgraph_core::ToolId]| ids.iter().map(|t| t.as_str().to_owned()).collect();
        InstanceRecord {
            method: method.to_owned(),
            index: outcome.index,
            query: outcome.query.clone(),
            gold: names(&outcome.gold),
            prediction: names(&outcome.prediction),
            k_eval: outcome.score.k_eval,
            metrics: Metric::ALL
                .into_iter()
                .map(|m| (m.name().to_owned(), outcome.score.get(m)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub rho: f64,
    pub p_value: f64,
    pub pairs: usize,
}

impl From<Correlation> for CorrelationRecord {
    fn from(c: Correlation) -> Self {
        CorrelationRecord {
            rho: c.rho,
            p_value: c.p_value,
            pairs: c.pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityDocument {
    pub config: serde_json::Value,
    pub community_count: usize,
    pub modularity: f64,
    pub mean_purity: f64,
    pub nmi: f64,
    pub per_community_purity: Vec<f64>,
    /// Members of each community, in community order.
    pub communities: Vec<Vec<String>>,
    /// Transition weight vs. description similarity, when embeddings were
    /// supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complementarity: Option<CorrelationRecord>,
}

impl CommunityDocument {
    pub fn new(
        config: serde_json::Value,
        partition: &Partition,
        report: CommunityReport,
        complementarity: Option<Correlation>,
    ) -> Self {
        CommunityDocument {
            config,
            community_count: report.community_count,
            modularity: report.modularity,
            mean_purity: report.mean_purity,
            nmi: report.nmi,
            per_community_purity: report.per_community_purity,
            communities: partition
                .communities()
                .into_iter()
                .map(|c| c.into_iter().map(|t| t.into_string()).collect())
                .collect(),
            complementarity: complementarity.map(CorrelationRecord::from),
        }
    }
}
