//! Pair generation and mini-batch training of the pairwise model.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::features::{extract_features, FEATURE_COUNT};
use super::model::{flatten, PairwiseModel};
use crate::embeddings::{EmbeddingStore, QueryEncoder};
use crate::error::{Error, Result};
use crate::graph::SkillGraph;
use crate::retrieval::CandidateSet;
use crate::rng;
use crate::trajectory::TrajectoryDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of trajectories held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 2048,
            max_epochs: 30,
            patience: 5,
            validation_fraction: 0.05,
            seed: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Labelled feature differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub inputs: Vec<[f64; FEATURE_COUNT]>,
    pub labels: Vec<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Builds training pairs from gold trajectories. Features are computed with
/// the gold tool set as the candidate set; for every gold pair `a` before `b`
/// both `(f_a − f_b, 1)` and `(f_b − f_a, 0)` are emitted.
pub fn generate_pairs(
    dataset: &TrajectoryDataset,
    graph: &SkillGraph,
    embeddings: &EmbeddingStore,
    encoder: &dyn QueryEncoder,
) -> Result<PairSet> {
    let mut pairs = PairSet::default();
    for trajectory in dataset.iter().filter(|t| t.len() >= 2) {
        let query = encoder.encode_query(trajectory.query())?;
        let gold = trajectory.tools();
        let candidates = CandidateSet::from_tools(gold.to_vec(), embeddings, &query, gold.len())?;
        let features = extract_features(&candidates, graph);
        let lookup = |t: &crate::trajectory::ToolId| {
            &features
                .iter()
                .find(|(id, _)| id == t)
                .expect("every gold tool has features")
                .1
        };
        for (i, a) in gold.iter().enumerate() {
            for b in &gold[i + 1..] {
                let (fa, fb) = (lookup(a), lookup(b));
                pairs.inputs.push(fa.difference(fb));
                pairs.labels.push(1.0);
                pairs.inputs.push(fb.difference(fa));
                pairs.labels.push(0.0);
            }
        }
    }
    Ok(pairs)
}

struct Adam {
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(size: usize) -> Self {
        Adam {
            first: vec![0.0; size],
            second: vec![0.0; size],
            step: 0,
        }
    }

    fn update(&mut self, model: &mut PairwiseModel, gradient: &[f64], learning_rate: f64) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(ADAM_BETA2, f64::from(self.step));
        for (i, param) in model.parameters_mut().enumerate() {
            let g = gradient[i];
            self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
            self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
            let m = self.first[i] / c1;
            let v = self.second[i] / c2;
            *param -= learning_rate * m / (libm::sqrt(v) + ADAM_EPSILON);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: PairwiseModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

/// Mini-batch Adam on precomputed pairs with early stopping on
/// `validation`. When `validation` is empty the training loss drives early
/// stopping instead.
pub fn train_on_pairs(train: &PairSet, validation: &PairSet, config: &TrainingConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::invalid("batch size and epoch count must be positive"));
    }
    let mut model = PairwiseModel::new(config.seed);
    let mut adam = Adam::new(model.parameter_count());
    let mut shuffler = rng::seeded(rng::derive_seed(config.seed, 1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_inputs = Vec::with_capacity(config.batch_size);
    let mut batch_labels = Vec::with_capacity(config.batch_size);

    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_inputs.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_inputs.push(train.inputs[i]);
                batch_labels.push(train.labels[i]);
            }
            let (loss, grads) = model.loss_and_gradient(&batch_inputs, &batch_labels);
            epoch_loss += loss * chunk.len() as f64;
            adam.update(&mut model, &flatten(&grads), config.learning_rate);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let validation_loss = if validation.is_empty() {
            model.loss(&train.inputs, &train.labels)
        } else {
            model.loss(&validation.inputs, &validation.labels)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.1,
        best_epoch: best.2,
        history,
        train_pairs: train.len(),
        validation_pairs: validation.len(),
    })
}

/// Splits trajectories, generates pairs for both parts and trains. A split
/// whose validation side yields no pairs (or a dataset too small to split)
/// falls back to early stopping on the training loss.
pub fn train(
    dataset: &TrajectoryDataset,
    graph: &SkillGraph,
    embeddings: &EmbeddingStore,
    encoder: &dyn QueryEncoder,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    let all = generate_pairs(dataset, graph, embeddings, encoder)?;
    if all.is_empty() {
        return Err(Error::InsufficientData(
            "no trajectory has two or more tools".into(),
        ));
    }
    let (train_pairs, validation_pairs) = match dataset.split_train_validation(config.validation_fraction, config.seed) {
        Ok((train_set, validation_set)) => {
            let train_pairs = generate_pairs(&train_set, graph, embeddings, encoder)?;
            let validation_pairs = generate_pairs(&validation_set, graph, embeddings, encoder)?;
            if train_pairs.is_empty() || validation_pairs.is_empty() {
                (all, PairSet::default())
            } else {
                (train_pairs, validation_pairs)
            }
        }
        Err(_) => (all, PairSet::default()),
    };
    train_on_pairs(&train_pairs, &validation_pairs, config)
}
