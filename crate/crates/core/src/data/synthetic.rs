//! Count-driven synthetic multi-label data with a long-tailed class histogram.
//!
//! Each class owns a fixed prototype vector. A positive example is the sum of
//! the prototypes of its active classes plus a per-recording background and
//! per-example Gaussian noise; a negative example is background plus noise.
//! Label sets are built by drawing classes without replacement, weighted by
//! their remaining count, until every class has exactly its target count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Example, MultiLabelDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CountLaw {
    /// `count_c = round(c0 · ratio^c)`.
    Geometric { c0: f64, ratio: f64 },
    Explicit { counts: Vec<usize> },
}

impl CountLaw {
    pub fn counts(&self, n_classes: usize) -> Result<Vec<usize>> {
        match self {
            CountLaw::Geometric { c0, ratio } => {
                if !(*c0 >= 0.0) || !(*ratio > 0.0) {
                    return Err(Error::Param(format!("geometric law needs c0 ≥ 0 and ratio > 0, got {c0}, {ratio}")));
                }
                Ok((0..n_classes).map(|c| (c0 * ratio.powi(c as i32)).round() as usize).collect())
            }
            CountLaw::Explicit { counts } => {
                if counts.len() != n_classes {
                    return Err(Error::Param(format!(
                        "{} explicit counts for {n_classes} classes",
                        counts.len()
                    )));
                }
                Ok(counts.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub counts: CountLaw,
    /// Probability of polyphony level `k + 1` at index `k`.
    pub polyphony: Vec<f64>,
    pub negative_fraction: f64,
    pub feature_dim: usize,
    /// Norm of each class prototype.
    pub signal_scale: f64,
    /// Standard deviation of the per-coordinate example noise.
    pub noise_std: f64,
    /// Standard deviation of the per-coordinate background shared by a recording.
    pub background_std: f64,
    pub segments_per_recording: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Twelve classes decaying geometrically from 600 to 30, 36% negatives.
    fn default() -> Self {
        Self {
            n_classes: 12,
            counts: CountLaw::Geometric {
                c0: 600.0,
                ratio: (30.0f64 / 600.0).powf(1.0 / 11.0),
            },
            polyphony: vec![0.6, 0.25, 0.1, 0.05],
            negative_fraction: 0.36,
            feature_dim: 64,
            signal_scale: 1.0,
            noise_std: 0.35,
            background_std: 0.2,
            segments_per_recording: 10,
            seed: 2024,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.n_classes == 0 || self.feature_dim == 0 || self.segments_per_recording == 0 {
            return Err(Error::Param(
                "n_classes, feature_dim and segments_per_recording must be positive".into(),
            ));
        }
        if self.polyphony.is_empty() {
            return Err(Error::Param("polyphony distribution is empty".into()));
        }
        if self.polyphony.len() > self.n_classes {
            return Err(Error::Param(format!(
                "max polyphony {} exceeds {} classes",
                self.polyphony.len(),
                self.n_classes
            )));
        }
        if self.polyphony.iter().any(|p| !(*p >= 0.0)) || (self.polyphony.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Param("polyphony probabilities must be non-negative and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::Param(format!("negative fraction {} outside [0, 1]", self.negative_fraction)));
        }
        if !(self.noise_std >= 0.0) || !(self.background_std >= 0.0) || !(self.signal_scale >= 0.0) {
            return Err(Error::Param("scales must be non-negative".into()));
        }
        self.counts.counts(self.n_classes)
    }

    /// Number of negatives added to `positives` positive examples.
    ///
    /// With a fraction of exactly 1 there is no finite answer, and the
    /// generator instead emits the total label mass as all-negative rows.
    pub fn negatives_for(&self, positives: usize) -> usize {
        let f = self.negative_fraction;
        (positives as f64 * f / (1.0 - f)).round() as usize
    }
}

fn sample_level<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k + 1;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1
}

fn label_sets<R: Rng + ?Sized>(counts: &[usize], polyphony: &[f64], rng: &mut R) -> Vec<Vec<usize>> {
    let mut remaining = counts.to_vec();
    let mut sets = Vec::new();
    while remaining.iter().any(|&r| r > 0) {
        let available = remaining.iter().filter(|&&r| r > 0).count();
        let level = sample_level(polyphony, rng).min(available);
        let mut chosen = Vec::with_capacity(level);
        for _ in 0..level {
            let total: usize = remaining
                .iter()
                .enumerate()
                .filter(|(c, _)| !chosen.contains(c))
                .map(|(_, &r)| r)
                .sum();
            let mut pick = rng.random_range(0..total);
            for (c, &r) in remaining.iter().enumerate() {
                if chosen.contains(&c) {
                    continue;
                }
                if pick < r {
                    chosen.push(c);
                    break;
                }
                pick -= r;
            }
        }
        for &c in &chosen {
            remaining[c] -= 1;
        }
        chosen.sort_unstable();
        sets.push(chosen);
    }
    sets
}

/// Builds the dataset described by `spec`. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiLabelDataset> {
    let counts = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;

    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * spec.signal_scale / norm).collect()
        })
        .collect();

    let mut sets = if spec.negative_fraction >= 1.0 {
        vec![Vec::new(); counts.iter().sum::<usize>()]
    } else {
        let positives = label_sets(&counts, &spec.polyphony, &mut rng);
        let negatives = spec.negatives_for(positives.len());
        let mut all = positives;
        all.extend(std::iter::repeat_n(Vec::new(), negatives));
        all
    };
    sets.shuffle(&mut rng);

    let n_recordings = sets.len().div_ceil(spec.segments_per_recording);
    let background = Normal::new(0.0, spec.background_std).expect("validated");
    let backgrounds: Vec<Vec<f64>> = (0..n_recordings)
        .map(|_| (0..d).map(|_| background.sample(&mut rng)).collect())
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("validated");

    let examples = sets
        .into_iter()
        .enumerate()
        .map(|(i, active)| {
            let recording = i / spec.segments_per_recording;
            let mut x = backgrounds[recording].clone();
            for &c in &active {
                for (xi, p) in x.iter_mut().zip(&prototypes[c]) {
                    *xi += p;
                }
            }
            for xi in &mut x {
                *xi += noise.sample(&mut rng);
            }
            let mut labels = vec![false; spec.n_classes];
            for c in active {
                labels[c] = true;
            }
            Example {
                rows: 1,
                frames: d,
                features: x.into_iter().map(|v| v as f32).collect(),
                labels,
                recording: recording as u32,
                offset_s: (i % spec.segments_per_recording) as f32,
            }
        })
        .collect();

    Ok(MultiLabelDataset {
        class_names: (0..spec.n_classes).map(|c| format!("class_{c:02}")).collect(),
        recording_names: (0..n_recordings).map(|r| format!("rec_{r:04}")).collect(),
        examples,
    })
}
