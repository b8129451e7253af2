use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWState};
use super::network::TappedNetwork;
use crate::data::augment::{circular_time_shift, spec_augment, SpecAugmentConfig};
use crate::data::mel::MelSpectrogram;
use crate::data::{Example, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::mixops::{select_strategy, sigmoid, Mix2Policy, MixParams, MixStrategy, Mixing, MultiLabelBatch};

/// How a `rows × frames` feature map becomes a network input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "bins", rename_all = "snake_case")]
pub enum InputView {
    #[default]
    Flatten,
    /// Averages frames into this many equal time bins per row.
    PoolTime(usize),
}

impl InputView {
    pub fn dim(&self, rows: usize, frames: usize) -> usize {
        match self {
            InputView::Flatten => rows * frames,
            InputView::PoolTime(bins) => rows * (*bins).min(frames).max(1),
        }
    }

    pub fn write(&self, rows: usize, frames: usize, values: &[f32], out: &mut [f64]) {
        match *self {
            InputView::Flatten => {
                for (o, &v) in out.iter_mut().zip(values) {
                    *o = v as f64;
                }
            }
            InputView::PoolTime(bins) => {
                let bins = bins.min(frames).max(1);
                for r in 0..rows {
                    let row = &values[r * frames..(r + 1) * frames];
                    for b in 0..bins {
                        let (lo, hi) = (b * frames / bins, (b + 1) * frames / bins);
                        let sum: f64 = row[lo..hi].iter().map(|&v| v as f64).sum();
                        out[r * bins + b] = sum / (hi - lo) as f64;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub spec_augment: bool,
    pub masks: SpecAugmentConfig,
    pub time_shift: bool,
}

impl AugmentConfig {
    pub fn is_active(&self) -> bool {
        self.spec_augment || self.time_shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochConfig {
    pub policy: Mix2Policy,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub mix: MixParams,
    pub random_layer: bool,
    pub view: InputView,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            policy: Mix2Policy::mix2(),
            batch_size: 64,
            augment: AugmentConfig::default(),
            mix: MixParams::default(),
            random_layer: false,
            view: InputView::Flatten,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub mean_loss: f64,
    pub iterations: usize,
    pub strategy_counts: BTreeMap<MixStrategy, usize>,
    pub strategies: Vec<MixStrategy>,
    pub warnings: Vec<String>,
}

fn example_input<R: Rng + ?Sized>(
    e: &Example,
    view: InputView,
    augment: Option<(&AugmentConfig, &mut R)>,
    out: &mut [f64],
) -> Result<()> {
    match augment {
        Some((cfg, rng)) if cfg.is_active() => {
            let mut mel = MelSpectrogram::from_flat(e.rows, e.frames, e.features.clone())?;
            if cfg.spec_augment {
                mel = spec_augment(&mel, &cfg.masks, rng);
            }
            if cfg.time_shift {
                mel = circular_time_shift(&mel, rng);
            }
            view.write(e.rows, e.frames, &mel.into_flat(), out);
        }
        _ => view.write(e.rows, e.frames, &e.features, out),
    }
    Ok(())
}

/// Network inputs for `indices`, optionally augmented.
pub fn gather_inputs<R: Rng + ?Sized>(
    data: &MultiLabelDataset,
    indices: &[usize],
    view: InputView,
    mut augment: Option<(&AugmentConfig, &mut R)>,
) -> Result<Array2<f64>> {
    let (rows, frames) = data.feature_shape().ok_or(Error::EmptyBatch)?;
    let dim = view.dim(rows, frames);
    let mut x = Array2::zeros((indices.len(), dim));
    for (k, &i) in indices.iter().enumerate() {
        let aug = augment.as_mut().map(|(c, r)| (*c, &mut **r));
        let mut row = x.row_mut(k);
        example_input(&data.examples[i], view, aug, row.as_slice_mut().expect("contiguous row"))?;
    }
    Ok(x)
}

pub fn gather_labels(data: &MultiLabelDataset, indices: &[usize]) -> Array2<f64> {
    let mut y = Array2::zeros((indices.len(), data.num_classes()));
    for (k, &i) in indices.iter().enumerate() {
        for (c, &on) in data.examples[i].labels.iter().enumerate() {
            if on {
                y[[k, c]] = 1.0;
            }
        }
    }
    y
}

fn describe(mixing: &Mixing) -> String {
    match mixing {
        Mixing::Identity => "no mixing".into(),
        Mixing::Pairwise { lambda, .. } => format!("lambda {}", lambda.value()),
        Mixing::Matrix(m) => format!("Lambda {:?}", m.view()),
    }
}

/// One pass over shuffled mini-batches: augment, pick a strategy, mixed
/// forward pass, loss-level mixed BCE, backward, AdamW.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut TappedNetwork,
    opt: &mut AdamWState,
    data: &MultiLabelDataset,
    cfg: &EpochConfig,
    rng: &mut R,
) -> Result<EpochLog> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Param("batch size must be positive".into()));
    }
    let mut warnings = Vec::new();
    let batch_size = if cfg.batch_size > data.len() {
        warnings.push(format!(
            "batch size {} exceeds {} training examples; clamped",
            cfg.batch_size,
            data.len()
        ));
        data.len()
    } else {
        cfg.batch_size
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut strategy_counts: BTreeMap<MixStrategy, usize> = MixStrategy::ALL.iter().map(|&s| (s, 0)).collect();
    let mut strategies = Vec::new();
    let mut total_loss = 0.0;
    for (it, chunk) in order.chunks(batch_size).enumerate() {
        let x = gather_inputs(data, chunk, cfg.view, Some((&cfg.augment, &mut *rng)))?;
        let batch = MultiLabelBatch::new(x, gather_labels(data, chunk))?;
        let strategy = select_strategy(&cfg.policy, rng);
        let (logits, record) = net.forward_tapped(&batch, strategy, &cfg.mix, cfg.random_layer, rng)?;
        let loss = record.loss(&logits, batch.labels());
        let loss = match loss {
            Ok(l) if l.is_finite() => l,
            other => {
                net.clear_tape();
                return Err(Error::Numeric(format!(
                    "non-finite loss at iteration {it} ({strategy}, {}, lr {}): {:?}",
                    describe(&record.mixing),
                    opt.config.lr,
                    other
                )));
            }
        };
        let grad = record.loss_grad(&logits, batch.labels())?;
        net.backward(&grad)?;
        adamw_step(net.params_mut(), opt)?;
        if !net.params().all_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at iteration {it} ({strategy}, {}, lr {})",
                describe(&record.mixing),
                opt.config.lr
            )));
        }
        total_loss += loss;
        *strategy_counts.get_mut(&strategy).expect("all strategies present") += 1;
        strategies.push(strategy);
    }
    let iterations = strategies.len();
    Ok(EpochLog {
        mean_loss: total_loss / iterations as f64,
        iterations,
        strategy_counts,
        strategies,
        warnings,
    })
}

/// Sigmoid outputs for every example, in dataset order.
pub fn predict_probabilities(
    net: &TappedNetwork,
    data: &MultiLabelDataset,
    view: InputView,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let mut probs = Array2::zeros((data.len(), net.architecture().num_classes));
    let indices: Vec<usize> = (0..data.len()).collect();
    for (b, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        let x = gather_inputs::<rand_chacha::ChaCha8Rng>(data, chunk, view, None)?;
        let logits = net.forward(&x)?;
        let start = b * batch_size.max(1);
        probs
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&logits.mapv(sigmoid));
    }
    Ok(probs)
}
