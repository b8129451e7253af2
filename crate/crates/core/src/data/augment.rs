//! SpecAugment-style rectangular masking and circular time shifts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mel::MelSpectrogram;

/// Mask counts are upper bounds: each call draws `0..=max` masks of width
/// `0..=max_width`, zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecAugmentConfig {
    pub max_time_masks: usize,
    pub max_freq_masks: usize,
    pub max_time_width: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentConfig {
    /// Two masks per axis, up to 60 frames and 8 mel bands wide.
    fn default() -> Self {
        Self {
            max_time_masks: 2,
            max_freq_masks: 2,
            max_time_width: 60,
            max_freq_width: 8,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        Self {
            max_time_masks: 0,
            max_freq_masks: 0,
            max_time_width: 0,
            max_freq_width: 0,
        }
    }
}

/// Zeroes a rectangle spanning every mel band across `frames`.
pub fn mask_time(spec: &mut MelSpectrogram, start: usize, width: usize) {
    let frames = spec.frames();
    let end = (start + width).min(frames);
    for t in start.min(frames)..end {
        spec.values_mut().column_mut(t).fill(0.0);
    }
}

/// Zeroes a rectangle spanning every frame across `bands`.
pub fn mask_freq(spec: &mut MelSpectrogram, start: usize, width: usize) {
    let mels = spec.mels();
    let end = (start + width).min(mels);
    for m in start.min(mels)..end {
        spec.values_mut().row_mut(m).fill(0.0);
    }
}

pub fn spec_augment<R: Rng + ?Sized>(spec: &MelSpectrogram, cfg: &SpecAugmentConfig, rng: &mut R) -> MelSpectrogram {
    let mut out = spec.clone();
    let time_width = cfg.max_time_width.min(spec.frames());
    let freq_width = cfg.max_freq_width.min(spec.mels());
    let time_masks = if cfg.max_time_masks > 0 { rng.random_range(0..=cfg.max_time_masks) } else { 0 };
    for _ in 0..time_masks {
        let w = rng.random_range(0..=time_width);
        let start = rng.random_range(0..=spec.frames() - w);
        mask_time(&mut out, start, w);
    }
    let freq_masks = if cfg.max_freq_masks > 0 { rng.random_range(0..=cfg.max_freq_masks) } else { 0 };
    for _ in 0..freq_masks {
        let w = rng.random_range(0..=freq_width);
        let start = rng.random_range(0..=spec.mels() - w);
        mask_freq(&mut out, start, w);
    }
    out
}

/// Rotates frames right by `k` (mod the frame count).
pub fn rotate_frames(spec: &MelSpectrogram, k: usize) -> MelSpectrogram {
    let frames = spec.frames();
    if frames == 0 {
        return spec.clone();
    }
    let k = k % frames;
    let mut out = spec.clone();
    for t in 0..frames {
        out.values_mut().column_mut((t + k) % frames).assign(&spec.values().column(t));
    }
    out
}

/// Rotates frames by a uniformly random offset.
pub fn circular_time_shift<R: Rng + ?Sized>(spec: &MelSpectrogram, rng: &mut R) -> MelSpectrogram {
    if spec.frames() == 0 {
        return spec.clone();
    }
    let k = rng.random_range(0..spec.frames());
    rotate_frames(spec, k)
}
