//! WAV decoding, resampling to 16 kHz and sliding-window segmentation.

use std::path::Path;

use crate::error::{Error, Result};

pub const TARGET_RATE: u32 = 16_000;
pub const SEGMENT_SECONDS: usize = 3;
pub const STRIDE_SECONDS: usize = 1;
pub const SEGMENT_SAMPLES: usize = SEGMENT_SECONDS * TARGET_RATE as usize;

/// Sinc zero crossings on each side of the resampling kernel.
pub const RESAMPLE_HALF_WIDTH: usize = 32;
/// Cutoff as a fraction of the lower Nyquist frequency.
pub const RESAMPLE_ROLLOFF: f64 = 0.95;

/// A fixed-length window of mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_recording_id: u32,
    pub offset_s: f32,
}

/// Mono samples in `[-1, 1]` and their rate. Multi-channel files keep the first channel.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            let all: std::result::Result<Vec<f32>, _> = reader.into_samples::<f32>().collect();
            all.map_err(|e| Error::format(path, e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            let all: std::result::Result<Vec<i32>, _> = reader.into_samples::<i32>().collect();
            all.map_err(|e| Error::format(path, e.to_string()))?
                .into_iter()
                .map(|s| s as f32 * scale)
                .collect()
        }
    };
    let mono = samples.into_iter().step_by(channels).collect();
    Ok((mono, spec.sample_rate))
}

/// Writes 16-bit PCM mono.
pub fn write_wav_i16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The kernel spans [`RESAMPLE_HALF_WIDTH`] zero crossings per side at a cutoff of
/// [`RESAMPLE_ROLLOFF`] × the lower of the two Nyquist frequencies; samples
/// beyond the signal edges are taken as zero.
pub fn resample(samples: &[f32], from_rate: u32, to_rate: u32) -> Result<Vec<f32>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::Param("sample rates must be positive".into()));
    }
    if from_rate == to_rate {
        return Ok(samples.to_vec());
    }
    let ratio = to_rate as f64 / from_rate as f64;
    let cutoff = ratio.min(1.0) * RESAMPLE_ROLLOFF;
    let half = RESAMPLE_HALF_WIDTH as f64 / cutoff;
    let out_len = (samples.len() as u64 * to_rate as u64 / from_rate as u64) as usize;
    let n = samples.len() as isize;
    let out = (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let lo = (t - half).ceil() as isize;
            let hi = (t + half).floor() as isize;
            let mut acc = 0.0;
            for k in lo.max(0)..=hi.min(n - 1) {
                let d = t - k as f64;
                let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half).cos();
                acc += samples[k as usize] as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect();
    Ok(out)
}

/// Cuts 3 s windows every 1 s, dropping any trailing remainder shorter than 3 s.
pub fn segment_recording(samples: &[f32], sample_rate: u32, recording_id: u32) -> Vec<AudioSegment> {
    let win = SEGMENT_SECONDS * sample_rate as usize;
    let stride = STRIDE_SECONDS * sample_rate as usize;
    if win == 0 || samples.len() < win {
        return Vec::new();
    }
    (0..=(samples.len() - win) / stride)
        .map(|k| AudioSegment {
            samples: samples[k * stride..k * stride + win].to_vec(),
            sample_rate,
            source_recording_id: recording_id,
            offset_s: (k * STRIDE_SECONDS) as f32,
        })
        .collect()
}
