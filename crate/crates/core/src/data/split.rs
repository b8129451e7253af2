use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiLabelDataset;
use crate::error::{Error, Result};

pub const TRAIN_RATIO: f64 = 2.0 / 3.0;

/// Train and test partitions with disjoint recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: MultiLabelDataset,
    pub test: MultiLabelDataset,
}

impl DatasetSplit {
    pub fn train_recordings(&self) -> BTreeSet<u32> {
        self.train.examples.iter().map(|e| e.recording).collect()
    }

    pub fn test_recordings(&self) -> BTreeSet<u32> {
        self.test.examples.iter().map(|e| e.recording).collect()
    }
}

/// Assigns whole recordings to train or test, `round(ratio · R)` of them to train.
pub fn split_by_recording(dataset: &MultiLabelDataset, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Param(format!("split ratio {ratio} must be in (0, 1)")));
    }
    let mut recordings: Vec<u32> = dataset
        .examples
        .iter()
        .map(|e| e.recording)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if recordings.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 recordings to split, found {}",
            recordings.len()
        )));
    }
    recordings.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((recordings.len() as f64 * ratio).round() as usize).clamp(1, recordings.len() - 1);
    let train_set: BTreeSet<u32> = recordings[..n_train].iter().copied().collect();

    let empty = MultiLabelDataset {
        class_names: dataset.class_names.clone(),
        recording_names: dataset.recording_names.clone(),
        examples: Vec::new(),
    };
    let mut split = DatasetSplit {
        train: empty.clone(),
        test: empty,
    };
    for e in &dataset.examples {
        if train_set.contains(&e.recording) {
            split.train.examples.push(e.clone());
        } else {
            split.test.examples.push(e.clone());
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SubsetMode {
    #[default]
    Full,
    /// Drop classes missing from either split; negatives stay.
    DropNonOverlap,
    /// Additionally drop examples left without any active class.
    DropNonOverlapAndNegatives,
}

impl FromStr for SubsetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(SubsetMode::Full),
            "36n" | "drop_nonoverlap" => Ok(SubsetMode::DropNonOverlap),
            "36" | "drop_nonoverlap_and_negatives" => Ok(SubsetMode::DropNonOverlapAndNegatives),
            other => Err(Error::Param(format!("unknown subset `{other}` (full, 36n, 36)"))),
        }
    }
}

impl TryFrom<String> for SubsetMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SubsetMode> for String {
    fn from(m: SubsetMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for SubsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubsetMode::Full => "full",
            SubsetMode::DropNonOverlap => "36n",
            SubsetMode::DropNonOverlapAndNegatives => "36",
        })
    }
}

/// Class indices with at least one positive in both splits.
pub fn overlapping_classes(split: &DatasetSplit) -> Vec<usize> {
    let train = split.train.class_counts();
    let test = split.test.class_counts();
    (0..split.train.num_classes())
        .filter(|&c| train[c] > 0 && test[c] > 0)
        .collect()
}

pub fn build_subset(split: &DatasetSplit, mode: SubsetMode) -> DatasetSplit {
    if mode == SubsetMode::Full {
        return split.clone();
    }
    let keep = overlapping_classes(split);
    let mut out = DatasetSplit {
        train: split.train.select_classes(&keep),
        test: split.test.select_classes(&keep),
    };
    if mode == SubsetMode::DropNonOverlapAndNegatives {
        out.train.examples.retain(|e| !e.is_negative());
        out.test.examples.retain(|e| !e.is_negative());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn dataset(recordings: u32, per: usize) -> MultiLabelDataset {
        let mut examples = Vec::new();
        for r in 0..recordings {
            for k in 0..per {
                examples.push(Example {
                    rows: 1,
                    frames: 1,
                    features: vec![r as f32],
                    labels: vec![k % 2 == 0, true],
                    recording: r,
                    offset_s: k as f32,
                });
            }
        }
        MultiLabelDataset {
            class_names: vec!["a".into(), "b".into()],
            recording_names: (0..recordings).map(|r| r.to_string()).collect(),
            examples,
        }
    }

    #[test]
    fn three_recordings_split_two_one() {
        let s = split_by_recording(&dataset(3, 4), TRAIN_RATIO, 0).unwrap();
        assert_eq!(s.train_recordings().len(), 2);
        assert_eq!(s.test_recordings().len(), 1);
        assert!(s.train_recordings().is_disjoint(&s.test_recordings()));
        assert_eq!(s.train.len() + s.test.len(), 12);
    }

    #[test]
    fn segments_of_a_recording_stay_together() {
        let ds = dataset(30, 7);
        let s = split_by_recording(&ds, TRAIN_RATIO, 5).unwrap();
        for e in &s.train.examples {
            assert!(!s.test_recordings().contains(&e.recording));
        }
        for r in s.train_recordings() {
            assert_eq!(s.train.examples.iter().filter(|e| e.recording == r).count(), 7);
        }
    }

    #[test]
    fn too_few_recordings() {
        assert!(matches!(split_by_recording(&dataset(1, 5), TRAIN_RATIO, 0), Err(Error::Data(_))));
    }

    #[test]
    fn subset_without_disjoint_classes_is_identity() {
        let s = split_by_recording(&dataset(6, 4), TRAIN_RATIO, 1).unwrap();
        assert_eq!(build_subset(&s, SubsetMode::DropNonOverlap), s);
        assert_eq!(build_subset(&s, SubsetMode::Full), s);
    }

    #[test]
    fn subset_mode_names() {
        assert_eq!("36n".parse::<SubsetMode>().unwrap(), SubsetMode::DropNonOverlap);
        assert_eq!("36".parse::<SubsetMode>().unwrap(), SubsetMode::DropNonOverlapAndNegatives);
        assert!("42".parse::<SubsetMode>().is_err());
        for m in [SubsetMode::Full, SubsetMode::DropNonOverlap, SubsetMode::DropNonOverlapAndNegatives] {
            assert_eq!(m.to_string().parse::<SubsetMode>().unwrap(), m);
        }
    }
}
