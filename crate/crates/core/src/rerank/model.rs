//! The pairwise preference network.
//!
//! A 8 → 64 → 32 → 1 perceptron with rectifiers after both hidden layers
//! scores a feature difference `x = f_a − f_b`. The logit is antisymmetrized,
//! `g(x) = (raw(x) − raw(−x)) / 2`, so `p_ab = σ(g(x))` and `p_ba = σ(−g(x))`
//! always sum to exactly one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::features::{FeatureVector, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::rng;

pub const LAYER_DIMS: [usize; 4] = [FEATURE_COUNT, 64, 32, 1];

/// One affine layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.biases[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseModel {
    layers: Vec<Layer>,
    seed: u64,
}

/// Activations of one forward pass, kept for backpropagation.
struct Trace {
    input: [f64; FEATURE_COUNT],
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    output: f64,
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Probability from a logit such that `prob(g) + prob(-g) == 1` exactly.
/// The larger of the two is computed directly; the smaller is its exact
/// complement.
pub fn probability(logit: f64) -> f64 {
    let high = sigmoid(libm::fabs(logit));
    if logit >= 0.0 {
        high
    } else {
        1.0 - high
    }
}

/// Binary cross-entropy of a logit against a 0/1 label.
pub fn bce_from_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

impl PairwiseModel {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let layers = LAYER_DIMS
            .windows(2)
            .map(|d| {
                let mut layer = Layer::zeros(d[0], d[1]);
                let limit = libm::sqrt(6.0 / (d[0] + d[1]) as f64);
                for w in layer.weights.iter_mut() {
                    *w = rng.gen_range(-limit..limit);
                }
                layer
            })
            .collect();
        PairwiseModel { layers, seed }
    }

    /// Reassembles a model, checking the layer shapes.
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.len() != LAYER_DIMS.len() - 1 {
            return Err(Error::format(format!(
                "expected {} layers, found {}",
                LAYER_DIMS.len() - 1,
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (inputs, outputs) = (LAYER_DIMS[i], LAYER_DIMS[i + 1]);
            if layer.inputs != inputs
                || layer.outputs != outputs
                || layer.weights.len() != inputs * outputs
                || layer.biases.len() != outputs
            {
                return Err(Error::format(format!(
                    "layer {i} must be {inputs} -> {outputs}, found {} -> {} with {} weights and {} biases",
                    layer.inputs,
                    layer.outputs,
                    layer.weights.len(),
                    layer.biases.len()
                )));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(Error::format(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(PairwiseModel { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn trace(&self, input: [f64; FEATURE_COUNT]) -> Trace {
        let mut hidden1 = vec![0.0; LAYER_DIMS[1]];
        self.layers[0].forward(&input, &mut hidden1);
        hidden1.iter_mut().for_each(|h| *h = h.max(0.0));
        let mut hidden2 = vec![0.0; LAYER_DIMS[2]];
        self.layers[1].forward(&hidden1, &mut hidden2);
        hidden2.iter_mut().for_each(|h| *h = h.max(0.0));
        let mut output = [0.0];
        self.layers[2].forward(&hidden2, &mut output);
        Trace {
            input,
            hidden1,
            hidden2,
            output: output[0],
        }
    }

    /// Output of the plain network.
    pub fn raw(&self, input: &[f64; FEATURE_COUNT]) -> f64 {
        self.trace(*input).output
    }

    /// Antisymmetrized logit `(raw(x) − raw(−x)) / 2`.
    pub fn logit(&self, diff: &[f64; FEATURE_COUNT]) -> f64 {
        let negated = diff.map(|v| -v);
        (self.raw(diff) - self.raw(&negated)) / 2.0
    }

    /// Probability that the tool with features `a` runs before `b`.
    pub fn preference(&self, a: &FeatureVector, b: &FeatureVector) -> f64 {
        probability(self.logit(&a.difference(b)))
    }

    /// Mean binary cross-entropy over `(difference, label)` pairs.
    pub fn loss(&self, inputs: &[[f64; FEATURE_COUNT]], labels: &[f64]) -> f64 {
        let total: f64 = inputs
            .iter()
            .zip(labels)
            .map(|(x, &y)| bce_from_logit(self.logit(x), y))
            .sum();
        total / inputs.len().max(1) as f64
    }

    /// Mean loss and its gradient with respect to every parameter, laid out
    /// like the model's layers.
    pub fn loss_and_gradient(&self, inputs: &[[f64; FEATURE_COUNT]], labels: &[f64]) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let n = inputs.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            let forward = self.trace(*x);
            let backward = self.trace(x.map(|v| -v));
            let logit = (forward.output - backward.output) / 2.0;
            loss += bce_from_logit(logit, y);
            let upstream = (sigmoid(logit) - y) / n;
            self.backprop(&forward, upstream / 2.0, &mut grads);
            self.backprop(&backward, -upstream / 2.0, &mut grads);
        }
        (loss / n, grads)
    }

    /// Accumulates `upstream · ∂raw/∂θ` for one traced pass.
    fn backprop(&self, trace: &Trace, upstream: f64, grads: &mut [Layer]) {
        let [l1, l2, l3] = [&self.layers[0], &self.layers[1], &self.layers[2]];

        let mut delta2 = vec![0.0; l2.outputs];
        for j in 0..l3.inputs {
            grads[2].weights[j] += upstream * trace.hidden2[j];
            if trace.hidden2[j] > 0.0 {
                delta2[j] = upstream * l3.weights[j];
            }
        }
        grads[2].biases[0] += upstream;

        let mut delta1 = vec![0.0; l1.outputs];
        for (o, &d) in delta2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads[1].biases[o] += d;
            let row = o * l2.inputs;
            for i in 0..l2.inputs {
                grads[1].weights[row + i] += d * trace.hidden1[i];
                delta1[i] += d * l2.weights[row + i];
            }
        }

        for (o, &d) in delta1.iter().enumerate() {
            if d == 0.0 || trace.hidden1[o] <= 0.0 {
                continue;
            }
            grads[0].biases[o] += d;
            let row = o * l1.inputs;
            for i in 0..l1.inputs {
                grads[0].weights[row + i] += d * trace.input[i];
            }
        }
    }

    /// Smallest absolute hidden pre-activation over the passes on `input`
    /// and its negation. Finite differences are only valid when this exceeds
    /// the perturbation's effect.
    pub fn kink_margin(&self, input: &[f64; FEATURE_COUNT]) -> f64 {
        let mut margin = f64::INFINITY;
        for x in [*input, input.map(|v| -v)] {
            let mut z1 = vec![0.0; LAYER_DIMS[1]];
            self.layers[0].forward(&x, &mut z1);
            margin = z1.iter().fold(margin, |m, z| m.min(libm::fabs(*z)));
            z1.iter_mut().for_each(|h| *h = h.max(0.0));
            let mut z2 = vec![0.0; LAYER_DIMS[2]];
            self.layers[1].forward(&z1, &mut z2);
            margin = z2.iter().fold(margin, |m, z| m.min(libm::fabs(*z)));
        }
        margin
    }

    /// Central finite-difference estimate of the loss gradient, in
    /// [`PairwiseModel::parameters`] order.
    pub fn numeric_gradient(&self, inputs: &[[f64; FEATURE_COUNT]], labels: &[f64], step: f64) -> Vec<f64> {
        let mut probe = self.clone();
        (0..self.parameter_count())
            .map(|i| {
                let original = *probe.parameters().nth(i).expect("index in range");
                *probe.parameters_mut().nth(i).expect("index in range") = original + step;
                let plus = probe.loss(inputs, labels);
                *probe.parameters_mut().nth(i).expect("index in range") = original - step;
                let minus = probe.loss(inputs, labels);
                *probe.parameters_mut().nth(i).expect("index in range") = original;
                (plus - minus) / (2.0 * step)
            })
            .collect()
    }

    /// All parameters, layer by layer (weights then biases).
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

/// Flattens gradients in the same order as [`PairwiseModel::parameters`].
pub fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent forward pass written directly from the layer equations.
    fn oracle_raw(m: &PairwiseModel, x: &[f64; 8]) -> f64 {
        let mut act: Vec<f64> = x.to_vec();
        for (li, layer) in m.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..layer.outputs {
                let mut z = layer.biases[o];
                for i in 0..layer.inputs {
                    z += layer.weights[o * layer.inputs + i] * act[i];
                }
                next.push(if li < 2 { z.max(0.0) } else { z });
            }
            act = next;
        }
        act[0]
    }

    fn oracle_preference(m: &PairwiseModel, a: &[f64; 8], b: &[f64; 8]) -> f64 {
        let d: [f64; 8] = core::array::from_fn(|i| a[i] - b[i]);
        let nd = d.map(|v| -v);
        let g = (oracle_raw(m, &d) - oracle_raw(m, &nd)) / 2.0;
        1.0 / (1.0 + (-g).exp())
    }

    #[test]
    fn equal_features_give_one_half() {
        let m = PairwiseModel::new(3);
        let f = FeatureVector([0.3; 8]);
        assert_eq!(m.preference(&f, &f), 0.5);
    }

    #[test]
    fn shapes_are_checked() {
        let m = PairwiseModel::new(1);
        assert_eq!(m.parameter_count(), 8 * 64 + 64 + 64 * 32 + 32 + 32 + 1);
        let mut layers = m.layers().to_vec();
        assert_eq!(PairwiseModel::from_layers(layers.clone(), 1).unwrap(), m);
        layers[1].weights.pop();
        assert!(matches!(PairwiseModel::from_layers(layers.clone(), 1), Err(Error::Format(_))));
        layers.pop();
        assert!(matches!(PairwiseModel::from_layers(layers, 1), Err(Error::Format(_))));
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(PairwiseModel::new(9), PairwiseModel::new(9));
        assert_ne!(PairwiseModel::new(9), PairwiseModel::new(10));
        let limit = (6.0f64 / 72.0).sqrt();
        assert!(PairwiseModel::new(9).layers()[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn probability_is_exactly_complementary_at_extremes() {
        for g in [0.0, 1e-300, 3.0, 36.0, 700.0, -5.5] {
            assert_eq!(probability(g) + probability(-g), 1.0);
        }
    }

    #[test]
    fn bias_of_output_layer_has_no_gradient() {
        let m = PairwiseModel::new(5);
        let x = [[0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.0]];
        let (_, grads) = m.loss_and_gradient(&x, &[1.0]);
        assert_eq!(grads[2].biases[0], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        let mut rng = rng::seeded(17);
        let mut m = PairwiseModel::new(11);
        // non-zero biases so bias gradients are exercised too
        for p in m.parameters_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let mut inputs: Vec<[f64; 8]> = Vec::new();
        while inputs.len() < 16 {
            let x: [f64; 8] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            if m.kink_margin(&x) > 1e-3 {
                inputs.push(x);
            }
        }
        let labels: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        let analytic = flatten(&m.loss_and_gradient(&inputs, &labels).1);
        let numeric = m.numeric_gradient(&inputs, &labels, 1e-5);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    fn features() -> impl Strategy<Value = [f64; 8]> {
        proptest::array::uniform8(-1.0f64..1.0)
    }

    proptest! {
        #[test]
        fn antisymmetric_and_matches_oracle(seed in any::<u64>(), a in features(), b in features()) {
            let m = PairwiseModel::new(seed);
            let (fa, fb) = (FeatureVector(a), FeatureVector(b));
            let pab = m.preference(&fa, &fb);
            prop_assert_eq!(pab + m.preference(&fb, &fa), 1.0);
            prop_assert!(pab > 0.0 && pab < 1.0);
            prop_assert!((pab - oracle_preference(&m, &a, &b)).abs() < 1e-6);
        }
    }
}
