//! Selection and ordering metrics, the Oracle-K budget, length-bucket
//! aggregation and paired bootstrap comparison.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::ToolId;

/// Prediction budget under the Oracle-K protocol: `max(L*, 3)`.
pub fn oracle_k(gold_length: usize) -> usize {
    gold_length.max(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    SetPrecision,
    SetRecall,
    SetF1,
    OrdPrec,
    KendallTau,
    TransAcc,
    FirstAcc,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::SetPrecision,
        Metric::SetRecall,
        Metric::SetF1,
        Metric::OrdPrec,
        Metric::KendallTau,
        Metric::TransAcc,
        Metric::FirstAcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SetPrecision => "set_precision",
            Metric::SetRecall => "set_recall",
            Metric::SetF1 => "set_f1",
            Metric::OrdPrec => "ord_prec",
            Metric::KendallTau => "kendall_tau",
            Metric::TransAcc => "trans_acc",
            Metric::FirstAcc => "first_acc",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceScore {
    pub set_precision: f64,
    pub set_recall: f64,
    pub set_f1: f64,
    pub ord_prec: f64,
    pub kendall_tau: f64,
    pub trans_acc: f64,
    pub first_acc: f64,
    pub gold_length: usize,
    pub k_eval: usize,
}

impl InstanceScore {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::SetPrecision => self.set_precision,
            Metric::SetRecall => self.set_recall,
            Metric::SetF1 => self.set_f1,
            Metric::OrdPrec => self.ord_prec,
            Metric::KendallTau => self.kendall_tau,
            Metric::TransAcc => self.trans_acc,
            Metric::FirstAcc => self.first_acc,
        }
    }
}

fn check_unique(seq: &[ToolId], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for t in seq {
        if !seen.insert(t) {
            return Err(Error::invalid(format!("duplicate tool `{t}` in {what} sequence")));
        }
    }
    Ok(())
}

/// Counts inversions of `seq` by merge sort.
fn inversions(seq: &mut [usize], scratch: &mut Vec<usize>) -> usize {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = inversions(&mut seq[..mid], scratch) + inversions(&mut seq[mid..], scratch);
    scratch.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            scratch.push(seq[i]);
            i += 1;
        } else {
            // everything left in the first half is greater than seq[j]
            count += mid - i;
            scratch.push(seq[j]);
            j += 1;
        }
    }
    scratch.extend_from_slice(&seq[i..mid]);
    scratch.extend_from_slice(&seq[j..n]);
    seq.copy_from_slice(scratch);
    count
}

/// Concordant and discordant pair counts over the common tools of two
/// duplicate-free sequences.
pub fn pair_counts(pred: &[ToolId], gold: &[ToolId]) -> (usize, usize, usize) {
    let gold_rank: BTreeMap<&ToolId, usize> = gold.iter().enumerate().map(|(i, t)| (t, i)).collect();
    // gold ranks of common tools, in predicted order
    let mut ranks: Vec<usize> = pred.iter().filter_map(|t| gold_rank.get(t).copied()).collect();
    let common = ranks.len();
    let total = common * common.saturating_sub(1) / 2;
    let discordant = inversions(&mut ranks, &mut Vec::with_capacity(common));
    (total - discordant, discordant, common)
}

/// Scores one prediction against its gold sequence. `k_eval` is recorded
/// for reporting only.
pub fn score_instance(pred: &[ToolId], gold: &[ToolId], k_eval: usize) -> Result<InstanceScore> {
    if gold.is_empty() {
        return Err(Error::invalid("gold sequence is empty"));
    }
    check_unique(pred, "predicted")?;
    check_unique(gold, "gold")?;

    let (concordant, discordant, common) = pair_counts(pred, gold);
    let set_precision = if pred.is_empty() { 0.0 } else { common as f64 / pred.len() as f64 };
    let set_recall = common as f64 / gold.len() as f64;
    let set_f1 = if set_precision + set_recall > 0.0 {
        2.0 * set_precision * set_recall / (set_precision + set_recall)
    } else {
        0.0
    };

    let (ord_prec, kendall_tau) = if common < 2 {
        (0.0, 0.0)
    } else {
        let pairs = (concordant + discordant) as f64;
        (
            concordant as f64 / pairs,
            (concordant as f64 - discordant as f64) / pairs,
        )
    };

    let pred_rank: BTreeMap<&ToolId, usize> = pred.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let trans_acc = if gold.len() < 2 {
        0.0
    } else {
        let hits = gold
            .windows(2)
            .filter(|w| match (pred_rank.get(&w[0]), pred_rank.get(&w[1])) {
                (Some(&a), Some(&b)) => b > a && b - a <= 2,
                _ => false,
            })
            .count();
        hits as f64 / (gold.len() - 1) as f64
    };

    let first_acc = if pred.first() == gold.first() { 1.0 } else { 0.0 };

    Ok(InstanceScore {
        set_precision,
        set_recall,
        set_f1,
        ord_prec,
        kendall_tau,
        trans_acc,
        first_acc,
        gold_length: gold.len(),
        k_eval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthBucket {
    Short,
    Medium,
    Long,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] = [LengthBucket::Short, LengthBucket::Medium, LengthBucket::Long];

    pub fn of(gold_length: usize) -> LengthBucket {
        match gold_length {
            0..=2 => LengthBucket::Short,
            3..=4 => LengthBucket::Medium,
            _ => LengthBucket::Long,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LengthBucket::Short => "1-2",
            LengthBucket::Medium => "3-4",
            LengthBucket::Long => "5+",
        }
    }
}

/// Macro means of every metric over a group of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMeans {
    pub count: usize,
    pub means: BTreeMap<Metric, f64>,
}

impl MetricMeans {
    fn of<'a>(scores: impl Iterator<Item = &'a InstanceScore> + Clone) -> MetricMeans {
        let count = scores.clone().count();
        let means = Metric::ALL
            .into_iter()
            .map(|m| {
                let sum: f64 = scores.clone().map(|s| s.get(m)).sum();
                (m, if count == 0 { 0.0 } else { sum / count as f64 })
            })
            .collect();
        MetricMeans { count, means }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        self.means[&metric]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub overall: MetricMeans,
    /// Only non-empty buckets are present.
    pub buckets: BTreeMap<LengthBucket, MetricMeans>,
}

pub fn aggregate(scores: &[InstanceScore]) -> Result<AggregateReport> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot aggregate zero instances"));
    }
    let buckets = LengthBucket::ALL
        .into_iter()
        .filter_map(|bucket| {
            let members = scores.iter().filter(move |s| LengthBucket::of(s.gold_length) == bucket);
            let means = MetricMeans::of(members);
            (means.count > 0).then_some((bucket, means))
        })
        .collect();
    Ok(AggregateReport {
        overall: MetricMeans::of(scores.iter()),
        buckets,
    })
}

/// How bootstrap resamples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// `iterations` seeded draws of `n` indices with replacement.
    Random { iterations: usize, seed: u64 },
    /// All `n^n` index tuples; only sensible for tiny `n`.
    Exhaustive,
}

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    pub mean_a: f64,
    pub mean_b: f64,
    /// Two-sided: `min(1, 2·min(P(Δ* ≤ 0), P(Δ* ≥ 0)))` over resampled mean
    /// differences `Δ*`.
    pub p_value: f64,
    /// 95% percentile interval of the resampled mean of `a`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

/// Paired bootstrap over instance indices for the difference of means of
/// `metric` between two methods scored on the same instances.
pub fn bootstrap_compare(
    a: &[InstanceScore],
    b: &[InstanceScore],
    metric: Metric,
    resampling: Resampling,
) -> Result<BootstrapResult> {
    let xs: Vec<f64> = a.iter().map(|s| s.get(metric)).collect();
    let ys: Vec<f64> = b.iter().map(|s| s.get(metric)).collect();
    bootstrap_paired(&xs, &ys, resampling)
}

pub fn bootstrap_paired(a: &[f64], b: &[f64], resampling: Resampling) -> Result<BootstrapResult> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired bootstrap needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired bootstrap needs at least two instances"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();

    let mut at_or_below = 0usize;
    let mut at_or_above = 0usize;
    let mut means_a = Vec::new();
    let mut indices = vec![0usize; n];
    let mut record = |indices: &[usize]| {
        let (mut d, mut m) = (0.0, 0.0);
        for &i in indices {
            d += diffs[i];
            m += a[i];
        }
        let d = d / n as f64;
        if d <= 0.0 {
            at_or_below += 1;
        }
        if d >= 0.0 {
            at_or_above += 1;
        }
        means_a.push(m / n as f64);
    };

    match resampling {
        Resampling::Random { iterations, seed } => {
            if iterations == 0 {
                return Err(Error::invalid("bootstrap needs at least one iteration"));
            }
            let mut rng = rng::seeded(seed);
            for _ in 0..iterations {
                for slot in indices.iter_mut() {
                    *slot = rng.gen_range(0..n);
                }
                record(&indices);
            }
        }
        Resampling::Exhaustive => {
            if n > 8 {
                return Err(Error::invalid("exhaustive bootstrap is limited to n <= 8"));
            }
            // odometer over n^n tuples
            loop {
                record(&indices);
                let mut pos = 0;
                while pos < n {
                    indices[pos] += 1;
                    if indices[pos] < n {
                        break;
                    }
                    indices[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
        }
    }

    let resamples = means_a.len();
    let tail = at_or_below.min(at_or_above) as f64 / resamples as f64;
    means_a.sort_by(f64::total_cmp);
    let percentile = |q: f64| means_a[libm::floor(q * (resamples - 1) as f64) as usize];
    Ok(BootstrapResult {
        mean_a: a.iter().sum::<f64>() / n as f64,
        mean_b: b.iter().sum::<f64>() / n as f64,
        p_value: (2.0 * tail).min(1.0),
        ci_low: percentile(0.025),
        ci_high: percentile(0.975),
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ids;
    use proptest::prelude::*;

    #[test]
    fn oracle_k_values() {
        assert_eq!(oracle_k(1), 3);
        assert_eq!(oracle_k(3), 3);
        assert_eq!(oracle_k(7), 7);
    }

    #[test]
    fn identity_prediction() {
        let s = score_instance(&ids(&["A", "B", "C"]), &ids(&["A", "B", "C"]), 3).unwrap();
        assert_eq!(
            (s.kendall_tau, s.ord_prec, s.trans_acc, s.first_acc, s.set_f1),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn one_swap_worked_example() {
        let s = score_instance(&ids(&["A", "C", "B"]), &ids(&["A", "B", "C"]), 3).unwrap();
        assert_eq!(s.kendall_tau, 1.0 / 3.0);
        assert_eq!(s.ord_prec, 2.0 / 3.0);
        assert_eq!(s.trans_acc, 0.5);
        assert_eq!(s.first_acc, 1.0);
        assert_eq!(s.set_f1, 1.0);
    }

    #[test]
    fn set_errors() {
        let s = score_instance(&ids(&["A", "B", "D"]), &ids(&["A", "B", "C"]), 3).unwrap();
        assert_eq!((s.set_precision, s.set_recall), (2.0 / 3.0, 2.0 / 3.0));
        assert!((s.set_f1 - 2.0 / 3.0).abs() < 1e-15);
        // C missing from the prediction: (B, C) cannot count
        assert_eq!(s.trans_acc, 0.5);
    }

    #[test]
    fn degenerate_cases() {
        let s = score_instance(&ids(&["X", "Y", "Z"]), &ids(&["A"]), 3).unwrap();
        assert_eq!((s.set_f1, s.kendall_tau, s.ord_prec, s.trans_acc, s.first_acc), (0.0, 0.0, 0.0, 0.0, 0.0));
        let s = score_instance(&ids(&["A", "Y", "Z"]), &ids(&["A", "B"]), 3).unwrap();
        assert_eq!((s.kendall_tau, s.ord_prec), (0.0, 0.0));
        assert!(score_instance(&ids(&["A", "A"]), &ids(&["A"]), 3).is_err());
        assert!(score_instance(&ids(&["A"]), &ids(&["B", "B"]), 3).is_err());
        assert!(score_instance(&ids(&["A"]), &[], 3).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let base = score_instance(&ids(&["A", "B"]), &ids(&["A", "B"]), 3).unwrap();
        let single = aggregate(&[base]).unwrap();
        for m in Metric::ALL {
            assert_eq!(single.overall.get(m), base.get(m));
        }
        let zero = InstanceScore { kendall_tau: 0.0, ..base };
        let one = InstanceScore { kendall_tau: 1.0, ..base };
        assert_eq!(aggregate(&[zero, one]).unwrap().overall.get(Metric::KendallTau), 0.5);

        let lens = [2, 3, 6].map(|l| InstanceScore { gold_length: l, ..base });
        let report = aggregate(&lens).unwrap();
        let counts: Vec<_> = report.buckets.iter().map(|(b, m)| (b.label(), m.count)).collect();
        assert_eq!(counts, [("1-2", 1), ("3-4", 1), ("5+", 1)]);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn bootstrap_trivial_cases() {
        let a = [0.2, 0.5, 0.9, 0.1];
        let same = bootstrap_paired(&a, &a, Resampling::Random { iterations: 1000, seed: 3 }).unwrap();
        assert_eq!(same.p_value, 1.0);
        let shifted: Vec<f64> = a.iter().map(|x| x - 1.0).collect();
        let apart = bootstrap_paired(&a, &shifted, Resampling::Random { iterations: 10_000, seed: 3 }).unwrap();
        assert!(apart.p_value <= 1e-3);
        assert!(apart.ci_low <= apart.mean_a && apart.mean_a <= apart.ci_high);
        assert!(bootstrap_paired(&a, &a[..3], Resampling::Exhaustive).is_err());
        assert!(bootstrap_paired(&a[..1], &a[..1], Resampling::Exhaustive).is_err());
    }

    /// Independent enumeration of all 27 paired resamples for n = 3.
    fn exhaustive_p(a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let (mut below, mut above) = (0, 0);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let d = (a[i] - b[i]) + (a[j] - b[j]) + (a[k] - b[k]);
                    if d <= 0.0 {
                        below += 1;
                    }
                    if d >= 0.0 {
                        above += 1;
                    }
                }
            }
        }
        (2.0 * f64::from(below.min(above)) / 27.0).min(1.0)
    }

    #[test]
    fn bootstrap_matches_enumeration_at_n3() {
        let cases = [
            ([0.5, 0.25, 1.0], [0.0, 0.5, 0.25]),
            ([1.0, 0.0, 0.5], [0.0, 0.25, 0.0]),
            ([0.125, 0.75, 0.5], [0.5, 0.5, 0.5]),
        ];
        for (a, b) in cases {
            let expected = exhaustive_p(&a, &b);
            let exact = bootstrap_paired(&a, &b, Resampling::Exhaustive).unwrap();
            assert_eq!(exact.resamples, 27);
            assert_eq!(exact.p_value, expected);
            let sampled = bootstrap_paired(&a, &b, Resampling::Random { iterations: 20_000, seed: 11 }).unwrap();
            assert!((sampled.p_value - expected).abs() < 0.03, "{} vs {expected}", sampled.p_value);
        }
    }

    /// All-pairs enumeration of concordant / discordant counts.
    fn brute_pairs(pred: &[ToolId], gold: &[ToolId]) -> (usize, usize) {
        let common: Vec<&ToolId> = pred.iter().filter(|t| gold.contains(t)).collect();
        let rank = |seq: &[ToolId], t: &ToolId| seq.iter().position(|x| x == t).unwrap();
        let (mut c, mut d) = (0, 0);
        for i in 0..common.len() {
            for j in i + 1..common.len() {
                let (x, y) = (common[i], common[j]);
                if (rank(pred, x) < rank(pred, y)) == (rank(gold, x) < rank(gold, y)) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        (c, d)
    }

    fn instance() -> impl Strategy<Value = (Vec<ToolId>, Vec<ToolId>)> {
        let pool: Vec<ToolId> = (0..10).map(|i| ToolId::new(alloc::format!("t{i}")).unwrap()).collect();
        (
            Just(pool.clone()).prop_shuffle(),
            Just(pool).prop_shuffle(),
            1usize..9,
            1usize..9,
        )
            .prop_map(|(p, g, np, ng)| (p[..np].to_vec(), g[..ng].to_vec()))
    }

    proptest! {
        #[test]
        fn tau_and_ord_prec_match_enumeration((pred, gold) in instance()) {
            let s = score_instance(&pred, &gold, pred.len()).unwrap();
            let (c, d) = brute_pairs(&pred, &gold);
            let pairs = c + d;
            if pairs == 0 {
                prop_assert_eq!((s.kendall_tau, s.ord_prec), (0.0, 0.0));
            } else {
                prop_assert_eq!(s.kendall_tau, (c as f64 - d as f64) / pairs as f64);
                prop_assert_eq!(s.ord_prec, c as f64 / pairs as f64);
                // strict orders: Ord.Prec = (τ + 1) / 2
                prop_assert!((s.ord_prec - (s.kendall_tau + 1.0) / 2.0).abs() < 1e-12);
            }
            prop_assert!((-1.0..=1.0).contains(&s.kendall_tau));
        }

        #[test]
        fn set_metrics_ignore_order((pred, gold) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pred.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            let a = score_instance(&pred, &gold, 3).unwrap();
            let b = score_instance(&shuffled, &gold, 3).unwrap();
            prop_assert_eq!((a.set_precision, a.set_recall, a.set_f1), (b.set_precision, b.set_recall, b.set_f1));
        }

        #[test]
        fn ordering_ignores_tools_outside_common_set((pred, gold) in instance()) {
            let common: Vec<ToolId> = pred.iter().filter(|t| gold.contains(t)).cloned().collect();
            let a = score_instance(&pred, &gold, 3).unwrap();
            let b = score_instance(&common, &gold, 3).unwrap();
            prop_assert_eq!((a.kendall_tau, a.ord_prec), (b.kendall_tau, b.ord_prec));
            if common.len() >= 2 {
                let restricted: Vec<ToolId> = gold.iter().filter(|t| common.contains(t)).cloned().collect();
                prop_assert_eq!(score_instance(&restricted, &gold, 3).unwrap().kendall_tau, 1.0);
                let reversed: Vec<ToolId> = restricted.iter().rev().cloned().collect();
                prop_assert_eq!(score_instance(&reversed, &gold, 3).unwrap().kendall_tau, -1.0);
            }
        }
    }
}
