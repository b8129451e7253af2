//! Log-mel front-end: 16 kHz, 512-sample Hann window, hop 128, 128 HTK mel bands.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::audio::{AudioSegment, SEGMENT_SAMPLES, TARGET_RATE};
use crate::error::{Error, Result};

pub const N_FFT: usize = 512;
pub const HOP: usize = 128;
pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;
/// Mel energies below this are treated as silence before `ln(1 + e)`.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Frames of a 3 s segment under center padding: `1 + 48000 / 128`.
pub const SEGMENT_FRAMES: usize = 1 + SEGMENT_SAMPLES / HOP;

/// `mels × frames` log-compressed mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f32>,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("mel spectrogram contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn from_flat(mels: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        let values = Array2::from_shape_vec((mels, frames), values)
            .map_err(|e| Error::Shape(format!("{mels}x{frames} spectrogram: {e}")))?;
        Self::new(values)
    }

    pub fn mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f32> {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f32> {
        let (v, _) = self.values.into_raw_vec_and_offset();
        v
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK filters with unit peak, `n_mels × (n_fft/2 + 1)`.
///
/// At this resolution the lowest bands are narrower than one FFT bin and
/// can come out all-zero.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT + filterbank state.
pub struct MelFrontEnd {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl Default for MelFrontEnd {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontEnd {
    pub fn new() -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window: hann(N_FFT),
            filters: mel_filterbank(N_MELS, N_FFT, TARGET_RATE as f64, F_MIN, F_MAX),
        }
    }

    /// Power spectrogram `(n_fft/2 + 1) × frames` with reflect center padding.
    pub fn power_spectrogram(&self, samples: &[f32]) -> Array2<f64> {
        let pad = N_FFT / 2;
        let n = samples.len();
        let frames = 1 + n / HOP;
        let at = |i: isize| -> f64 {
            // Reflect without repeating the edge sample.
            let mut i = i;
            let last = n as isize - 1;
            while i < 0 || i > last {
                if i < 0 {
                    i = -i;
                }
                if i > last {
                    i = 2 * last - i;
                }
            }
            samples[i as usize] as f64
        };
        let bins = N_FFT / 2 + 1;
        let mut out = Array2::zeros((bins, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for t in 0..frames {
            let start = (t * HOP) as isize - pad as isize;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(at(start + j as isize) * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                out[[k, t]] = buf[k].norm_sqr();
            }
        }
        out
    }

    pub fn compute(&self, segment: &AudioSegment) -> Result<MelSpectrogram> {
        if segment.sample_rate != TARGET_RATE || segment.samples.len() != SEGMENT_SAMPLES {
            return Err(Error::Shape(format!(
                "mel front-end expects {SEGMENT_SAMPLES} samples at {TARGET_RATE} Hz, got {} at {} Hz",
                segment.samples.len(),
                segment.sample_rate
            )));
        }
        let power = self.power_spectrogram(&segment.samples);
        let energies = self.filters.dot(&power);
        let values = energies.mapv(|e| {
            let e = if e < ENERGY_FLOOR { 0.0 } else { e };
            e.ln_1p() as f32
        });
        MelSpectrogram::new(values)
    }
}

/// One-shot [`MelFrontEnd::compute`].
pub fn mel_spectrogram(segment: &AudioSegment) -> Result<MelSpectrogram> {
    MelFrontEnd::new().compute(segment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment(samples: Vec<f32>) -> AudioSegment {
        AudioSegment {
            samples,
            sample_rate: TARGET_RATE,
            source_recording_id: 0,
            offset_s: 0.0,
        }
    }

    fn sine(freq: f64, amp: f64) -> Vec<f32> {
        (0..SEGMENT_SAMPLES)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / TARGET_RATE as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn silent_segment_shape_and_values() {
        let mel = mel_spectrogram(&segment(vec![0.0; SEGMENT_SAMPLES])).unwrap();
        assert_eq!((mel.mels(), mel.frames()), (128, 376));
        assert_eq!(SEGMENT_FRAMES, 376);
        assert!(mel.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_or_rate_rejected() {
        assert!(matches!(mel_spectrogram(&segment(vec![0.0; 100])), Err(Error::Shape(_))));
        let mut s = segment(vec![0.0; SEGMENT_SAMPLES]);
        s.sample_rate = 22_050;
        assert!(mel_spectrogram(&s).is_err());
    }

    fn band_of(freq: f64) -> usize {
        // Band whose triangle peaks nearest to `freq`, from the band edges directly.
        let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
        let centre = |m: usize| mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / (N_MELS + 1) as f64);
        (0..N_MELS)
            .min_by(|&a, &b| (centre(a) - freq).abs().total_cmp(&(centre(b) - freq).abs()))
            .unwrap()
    }

    #[test]
    fn sine_lands_in_one_stable_band() {
        let mel = mel_spectrogram(&segment(sine(1000.0, 0.5))).unwrap();
        let argmax: Vec<usize> = (0..mel.frames())
            .map(|t| {
                let col = mel.values().column(t);
                (0..mel.mels()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap()
            })
            .collect();
        let expected = argmax[mel.frames() / 2];
        assert!(argmax[2..mel.frames() - 2].iter().all(|&b| b == expected));
        assert!((expected as isize - band_of(1000.0) as isize).abs() <= 1);
    }

    #[test]
    fn stft_bin_matches_direct_dft() {
        // Direct DFT of one interior frame against the FFT path.
        let x = sine(1000.0, 0.5);
        let fe = MelFrontEnd::new();
        let power = fe.power_spectrogram(&x);
        let t = 100;
        let start = t * HOP - N_FFT / 2;
        let w = hann(N_FFT);
        for k in [0usize, 10, 32, 33, 100] {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..N_FFT {
                let v = x[start + j] as f64 * w[j];
                let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / N_FFT as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let direct = re * re + im * im;
            assert!((direct - power[[k, t]]).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn louder_input_never_decreases_any_cell() {
        let quiet = mel_spectrogram(&segment(sine(440.0, 0.1))).unwrap();
        let loud = mel_spectrogram(&segment(sine(440.0, 0.2))).unwrap();
        for (a, b) in quiet.values().iter().zip(loud.values().iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn filterbank_properties() {
        let fb = mel_filterbank(N_MELS, N_FFT, 16_000.0, 0.0, 8000.0);
        assert_eq!(fb.dim(), (128, 257));
        assert!(fb.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!((hz_to_mel(mel_to_hz(1234.5)) - 1234.5).abs() < 1e-9);
    }
}
