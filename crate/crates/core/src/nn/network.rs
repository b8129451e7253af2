use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::mixops::{MixParams, MixStrategy, Mixing, MultiLabelBatch};

/// Layer widths of a [`TappedNetwork`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Output widths of the encoder's dense+ReLU layers; the last one is the
    /// embedding width. May be empty, in which case the embedding is the input.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || hidden.contains(&0) {
            return Err(Error::Param(format!(
                "layer widths must be positive: input {input_dim}, hidden {hidden:?}, classes {num_classes}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            num_classes,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn num_parameters(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut total = 0;
        for &w in self.hidden.iter().chain(std::iter::once(&self.num_classes)) {
            total += fan_in * w + w;
            fan_in = w;
        }
        total
    }
}

/// Where in the network a mixing operator acts.
///
/// Boundary `0` is the input; boundary `k` is the output of encoder layer `k`.
pub type Boundary = usize;

/// The mixing applied during a forward pass, kept for the loss and backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRecord {
    pub strategy: MixStrategy,
    pub mixing: Mixing,
    pub boundary: Boundary,
}

impl MixRecord {
    pub fn none() -> Self {
        Self {
            strategy: MixStrategy::NoMix,
            mixing: Mixing::Identity,
            boundary: 0,
        }
    }

    pub fn loss(&self, logits: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
        self.mixing.loss(logits, labels)
    }

    pub fn loss_grad(&self, logits: &Array2<f64>, labels: &Array2<f64>) -> Result<Array2<f64>> {
        self.mixing.loss_grad(logits, labels)
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
struct Tape {
    /// Input to each dense layer (encoder layers then head), after mixing.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each encoder layer, for the ReLU mask.
    pre: Vec<Array2<f64>>,
    mixing: Mixing,
    boundary: Boundary,
}

/// Feed-forward classifier `head ∘ encoder` with a mixing tap.
///
/// Parameters live in a [`ParameterStore`] as `(weight, bias)` pairs per layer,
/// encoder layers first then the head. Weights are `fan_in × fan_out`.
#[derive(Debug, Clone)]
pub struct TappedNetwork {
    arch: Architecture,
    params: ParameterStore,
    tap_index: Boundary,
    tape: Option<Tape>,
}

impl TappedNetwork {
    /// Seeded He-uniform weights for the ReLU layers, `1/√fan_in` uniform
    /// for the head, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut tensors = Vec::with_capacity(2 * (arch.hidden.len() + 1));
        let mut fan_in = arch.input_dim;
        let depth = arch.hidden.len();
        for (k, &width) in arch.hidden.iter().chain(std::iter::once(&arch.num_classes)).enumerate() {
            let bound = if k < depth {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            let w = Array2::from_shape_fn((fan_in, width), |_| rng.random_range(-bound..bound));
            let name = layer_name(k, depth);
            tensors.push(Tensor::new(format!("{name}.weight"), w));
            tensors.push(Tensor::new(format!("{name}.bias"), Array2::zeros((1, width))));
            fan_in = width;
        }
        Self::from_store(arch, ParameterStore::new(tensors)).expect("shapes built from the architecture")
    }

    /// Wraps an existing parameter store, checking its shapes against `arch`.
    pub fn from_store(arch: Architecture, params: ParameterStore) -> Result<Self> {
        let depth = arch.hidden.len();
        if params.len() != 2 * (depth + 1) {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                2 * (depth + 1),
                params.len()
            )));
        }
        let mut fan_in = arch.input_dim;
        for (k, &width) in arch.hidden.iter().chain(std::iter::once(&arch.num_classes)).enumerate() {
            let w = params.get(2 * k);
            let b = params.get(2 * k + 1);
            if w.value.dim() != (fan_in, width) || b.value.dim() != (1, width) {
                return Err(Error::Shape(format!(
                    "layer {}: expected weight {:?} and bias {:?}, got {:?} and {:?}",
                    layer_name(k, depth),
                    (fan_in, width),
                    (1, width),
                    w.value.dim(),
                    b.value.dim()
                )));
            }
            fan_in = width;
        }
        if !params.all_finite() {
            return Err(Error::Numeric("non-finite parameters".into()));
        }
        Ok(Self {
            tap_index: depth,
            arch,
            params,
            tape: None,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn depth(&self) -> usize {
        self.arch.hidden.len()
    }

    /// Boundary used by Manifold Mixup and MultiMix. Defaults to the encoder output.
    pub fn tap_index(&self) -> Boundary {
        self.tap_index
    }

    pub fn set_tap_index(&mut self, tap: Boundary) -> Result<()> {
        if tap > self.depth() {
            return Err(Error::Param(format!(
                "tap index {tap} beyond encoder depth {}",
                self.depth()
            )));
        }
        self.tap_index = tap;
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input features, got {}x{}",
                self.arch.input_dim,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Array2<f64>, mixing: &Mixing, boundary: Boundary, record: bool) -> Result<(Array2<f64>, Option<Tape>)> {
        self.check_input(x)?;
        if boundary > self.depth() {
            return Err(Error::Param(format!("mix boundary {boundary} beyond depth {}", self.depth())));
        }
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);

        let mut act = if boundary == 0 { mixing.apply(x)? } else { x.clone() };
        for k in 0..depth {
            let z = self.affine(k, &act);
            let mut a = z.mapv(|v| v.max(0.0));
            if k + 1 == boundary {
                a = mixing.apply(&a)?;
            }
            if record {
                inputs.push(act);
                pre.push(z);
            }
            act = a;
        }
        let logits = self.affine(depth, &act);
        let tape = record.then(|| {
            inputs.push(act);
            Tape {
                inputs,
                pre,
                mixing: mixing.clone(),
                boundary,
            }
        });
        Ok((logits, tape))
    }

    fn affine(&self, layer: usize, x: &Array2<f64>) -> Array2<f64> {
        let w = &self.params.get(2 * layer).value;
        let b = &self.params.get(2 * layer + 1).value;
        x.dot(w) + b
    }

    /// Plain inference logits.
    pub fn forward(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.run(features, &Mixing::Identity, 0, false)?.0)
    }

    /// Encoder output `h` for each row.
    pub fn embed(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(features)?;
        let mut act = features.clone();
        for k in 0..self.depth() {
            act = self.affine(k, &act).mapv(|v| v.max(0.0));
        }
        Ok(act)
    }

    /// Forward pass with an explicit mixing operator at `boundary`, recorded
    /// for [`TappedNetwork::backward`].
    pub fn forward_mixed(&mut self, features: &Array2<f64>, mixing: &Mixing, boundary: Boundary) -> Result<Array2<f64>> {
        let (logits, tape) = self.run(features, mixing, boundary, true)?;
        self.tape = tape;
        Ok(logits)
    }

    /// Loss of the mixed forward pass without recording anything.
    pub fn mixed_loss(&self, batch: &MultiLabelBatch, record: &MixRecord) -> Result<f64> {
        let (logits, _) = self.run(batch.features(), &record.mixing, record.boundary, false)?;
        record.loss(&logits, batch.labels())
    }

    /// Samples the mixing operator `strategy` needs and runs a recorded forward pass.
    ///
    /// Mixup acts on the input, Manifold Mixup and MultiMix on the tap
    /// (or, with `random_layer`, Manifold Mixup on a uniformly chosen encoder
    /// boundary `1..=depth`).
    pub fn forward_tapped<R: Rng + ?Sized>(
        &mut self,
        batch: &MultiLabelBatch,
        strategy: MixStrategy,
        params: &MixParams,
        random_layer: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, MixRecord)> {
        let mixing = Mixing::draw(strategy, batch.len(), params, rng)?;
        let boundary = match strategy {
            MixStrategy::NoMix | MixStrategy::Mixup => 0,
            MixStrategy::ManifoldMixup if random_layer && self.depth() > 0 => rng.random_range(1..=self.depth()),
            MixStrategy::ManifoldMixup | MixStrategy::MultiMix => self.tap_index,
        };
        let record = MixRecord {
            strategy,
            mixing,
            boundary,
        };
        let logits = self.forward_mixed(batch.features(), &record.mixing, record.boundary)?;
        Ok((logits, record))
    }

    /// Accumulates parameter gradients for `dL/dlogits` of the last recorded pass.
    pub fn backward(&mut self, grad_logits: &Array2<f64>) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let depth = self.depth();
        let head_in = &tape.inputs[depth];
        if grad_logits.dim() != (head_in.nrows(), self.arch.num_classes) {
            return Err(Error::Shape(format!(
                "logit gradient {:?} does not match forward output {:?}",
                grad_logits.dim(),
                (head_in.nrows(), self.arch.num_classes)
            )));
        }

        let mut upstream = grad_logits.to_owned();
        for k in (0..=depth).rev() {
            let input = &tape.inputs[k];
            if k < depth {
                // `upstream` is dL/d(post-mix activation of layer k).
                if k + 1 == tape.boundary {
                    upstream = tape.mixing.apply_transpose(&upstream)?;
                }
                upstream.zip_mut_with(&tape.pre[k], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let dw = input.t().dot(&upstream);
            let db = upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
            self.params.get_mut(2 * k).grad += &dw;
            self.params.get_mut(2 * k + 1).grad += &db;
            if k > 0 {
                upstream = upstream.dot(&self.params.get(2 * k).value.t());
            }
        }
        Ok(())
    }

    /// Drops any recorded forward pass.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }
}

fn layer_name(k: usize, depth: usize) -> String {
    if k < depth {
        format!("encoder.{k}")
    } else {
        "head".into()
    }
}
