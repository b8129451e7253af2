//! Datasets: synthetic long-tail generation, audio ingestion, the mel
//! front-end, augmentations, recording-level splits and class subsets.

pub mod annotations;
pub mod audio;
pub mod augment;
pub mod cache;
pub mod mel;
pub mod split;
pub mod synthetic;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{circular_time_shift, rotate_frames, spec_augment, SpecAugmentConfig};
pub use mel::{mel_spectrogram, MelSpectrogram};
pub use split::{build_subset, split_by_recording, DatasetSplit, SubsetMode};
pub use synthetic::{generate_synthetic, CountLaw, SyntheticSpec};

/// One segment: a `rows × frames` feature map (row-major) with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub rows: usize,
    pub frames: usize,
    pub features: Vec<f32>,
    pub labels: Vec<bool>,
    pub recording: u32,
    pub offset_s: f32,
}

impl Example {
    pub fn polyphony(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn is_negative(&self) -> bool {
        !self.labels.iter().any(|&b| b)
    }
}

/// A collection of equally-shaped examples over a shared class list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiLabelDataset {
    pub class_names: Vec<String>,
    pub recording_names: Vec<String>,
    pub examples: Vec<Example>,
}

impl MultiLabelDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(rows, frames)` shared by every example.
    pub fn feature_shape(&self) -> Option<(usize, usize)> {
        self.examples.first().map(|e| (e.rows, e.frames))
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.feature_shape();
        for (i, e) in self.examples.iter().enumerate() {
            if Some((e.rows, e.frames)) != shape || e.features.len() != e.rows * e.frames {
                return Err(Error::Data(format!("example {i} has inconsistent feature shape")));
            }
            if e.labels.len() != self.num_classes() {
                return Err(Error::Data(format!(
                    "example {i} has {} labels, expected {}",
                    e.labels.len(),
                    self.num_classes()
                )));
            }
            if e.recording as usize >= self.recording_names.len() {
                return Err(Error::Data(format!("example {i} references unknown recording {}", e.recording)));
            }
        }
        Ok(())
    }

    /// Per-class count of positive examples.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.examples {
            for (c, &on) in e.labels.iter().enumerate() {
                counts[c] += on as usize;
            }
        }
        counts
    }

    pub fn negative_count(&self) -> usize {
        self.examples.iter().filter(|e| e.is_negative()).count()
    }

    pub fn negative_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.negative_count() as f64 / self.len() as f64
        }
    }

    pub fn max_polyphony(&self) -> usize {
        self.examples.iter().map(Example::polyphony).max().unwrap_or(0)
    }

    /// Dense `n × C` 0/1 label matrix.
    pub fn label_matrix(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.len(), self.num_classes()));
        for (i, e) in self.examples.iter().enumerate() {
            for (c, &on) in e.labels.iter().enumerate() {
                if on {
                    y[[i, c]] = 1.0;
                }
            }
        }
        y
    }

    /// Keeps only the listed class columns, in the given order.
    pub fn select_classes(&self, keep: &[usize]) -> Self {
        Self {
            class_names: keep.iter().map(|&c| self.class_names[c].clone()).collect(),
            recording_names: self.recording_names.clone(),
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    labels: keep.iter().map(|&c| e.labels[c]).collect(),
                    ..e.clone()
                })
                .collect(),
        }
    }
}

/// Frequency stratum of a class by training count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyGroup {
    Frequent,
    Common,
    Rare,
}

impl FrequencyGroup {
    pub const ALL: [FrequencyGroup; 3] = [FrequencyGroup::Frequent, FrequencyGroup::Common, FrequencyGroup::Rare];

    pub fn name(self) -> &'static str {
        match self {
            FrequencyGroup::Frequent => "frequent",
            FrequencyGroup::Common => "common",
            FrequencyGroup::Rare => "rare",
        }
    }
}

impl fmt::Display for FrequencyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Half-open group boundaries: `count ≥ frequent` is frequent,
/// `common ≤ count < frequent` is common, anything lower is rare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub frequent: usize,
    pub common: usize,
}

impl GroupThresholds {
    /// The full-corpus thresholds (10k and 5k training instances).
    pub const CORPUS: Self = Self {
        frequent: 10_000,
        common: 5_000,
    };

    pub fn new(frequent: usize, common: usize) -> Result<Self> {
        if common > frequent {
            return Err(Error::Param(format!(
                "common threshold {common} exceeds frequent threshold {frequent}"
            )));
        }
        Ok(Self { frequent, common })
    }

    pub fn group(&self, train_count: usize) -> FrequencyGroup {
        if train_count >= self.frequent {
            FrequencyGroup::Frequent
        } else if train_count >= self.common {
            FrequencyGroup::Common
        } else {
            FrequencyGroup::Rare
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_id: usize,
    pub name: String,
    pub train_count: usize,
    pub group: FrequencyGroup,
}

/// Profiles every class of `train` by its positive count.
pub fn class_profiles(train: &MultiLabelDataset, thresholds: GroupThresholds) -> Vec<ClassProfile> {
    train
        .class_counts()
        .into_iter()
        .enumerate()
        .map(|(class_id, train_count)| ClassProfile {
            class_id,
            name: train.class_names[class_id].clone(),
            train_count,
            group: thresholds.group(train_count),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_thresholds_are_half_open() {
        let t = GroupThresholds::CORPUS;
        assert_eq!(t.group(10_000), FrequencyGroup::Frequent);
        assert_eq!(t.group(9_999), FrequencyGroup::Common);
        assert_eq!(t.group(5_000), FrequencyGroup::Common);
        assert_eq!(t.group(4_999), FrequencyGroup::Rare);
        assert_eq!(t.group(0), FrequencyGroup::Rare);
    }

    #[test]
    fn scaled_thresholds_assign_groups() {
        // frequent > 20, common 10..=20, rare < 10
        let t = GroupThresholds::new(21, 10).unwrap();
        let groups: Vec<_> = [30, 12, 3].iter().map(|&c| t.group(c)).collect();
        assert_eq!(groups, vec![FrequencyGroup::Frequent, FrequencyGroup::Common, FrequencyGroup::Rare]);
        assert!(GroupThresholds::new(5, 10).is_err());
    }

    #[test]
    fn counts_and_negatives() {
        let ex = |labels: Vec<bool>| Example {
            rows: 1,
            frames: 1,
            features: vec![0.0],
            labels,
            recording: 0,
            offset_s: 0.0,
        };
        let ds = MultiLabelDataset {
            class_names: vec!["a".into(), "b".into()],
            recording_names: vec!["r".into()],
            examples: vec![ex(vec![true, false]), ex(vec![true, true]), ex(vec![false, false])],
        };
        ds.validate().unwrap();
        assert_eq!(ds.class_counts(), vec![2, 1]);
        assert_eq!(ds.negative_count(), 1);
        assert_eq!(ds.max_polyphony(), 2);
        let sub = ds.select_classes(&[1]);
        assert_eq!(sub.class_counts(), vec![1]);
        assert_eq!(sub.negative_count(), 2);
    }
}
