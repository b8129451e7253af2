//! Segment annotations and the WAV → feature-cache ingestion path.
//!
//! The annotation table is a CSV with header `recording_id,offset_s,class_list`.
//! `class_list` holds `;`-separated class names; an empty list marks a
//! negative segment. `recording_id` matches a WAV file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::audio::{read_wav, resample, segment_recording, TARGET_RATE};
use super::mel::MelFrontEnd;
use super::{Example, MultiLabelDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub recording_id: String,
    pub offset_s: f32,
    pub classes: Vec<String>,
}

/// Offsets are matched to segment starts at millisecond resolution.
fn offset_key(offset_s: f32) -> i64 {
    (offset_s as f64 * 1000.0).round() as i64
}

pub fn parse_annotations<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<AnnotationRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(path, format!("line 1: {e}")))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if header != ["recording_id", "offset_s", "class_list"] {
        return Err(Error::format(
            path,
            format!("line 1: expected header recording_id,offset_s,class_list, got {}", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::format(path, format!("line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::format(path, format!("line {line}: expected 3 fields, got {}", record.len())));
        }
        let recording_id = record[0].trim().to_string();
        if recording_id.is_empty() {
            return Err(Error::format(path, format!("line {line}: empty recording_id")));
        }
        let offset_s: f32 = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|o: &f32| o.is_finite() && *o >= 0.0)
            .ok_or_else(|| Error::format(path, format!("line {line}: bad offset `{}`", &record[1])))?;
        let classes = record[2]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        rows.push(AnnotationRow {
            recording_id,
            offset_s,
            classes,
        });
    }
    Ok(rows)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, path)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeaturizeLog {
    /// Recording name → number of segments cached.
    pub segments: BTreeMap<String, usize>,
    pub skipped_files: Vec<(PathBuf, String)>,
    /// Segments cut from audio that had no annotation row.
    pub unannotated_segments: usize,
}

/// Resamples, segments and featurizes every `*.wav` in `audio_dir`.
///
/// Files are processed in parallel and collected in sorted file order, so the
/// output does not depend on scheduling. Unreadable files are skipped with a
/// warning; if every file is skipped the call fails. Segments without an
/// annotation row are dropped.
pub fn featurize(audio_dir: &Path, annotations: &[AnnotationRow]) -> Result<(MultiLabelDataset, FeaturizeLog)> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(audio_dir)
        .map_err(|e| Error::io(audio_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Data(format!("no .wav files in {}", audio_dir.display())));
    }

    let class_names: Vec<String> = annotations
        .iter()
        .flat_map(|r| r.classes.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_index: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut table: BTreeMap<(&str, i64), &AnnotationRow> = BTreeMap::new();
    for row in annotations {
        table.insert((row.recording_id.as_str(), offset_key(row.offset_s)), row);
    }

    let front_end = MelFrontEnd::new();
    let results: Vec<(PathBuf, Result<Vec<(f32, Vec<f32>, usize, usize)>>)> = wavs
        .par_iter()
        .map(|path| {
            let out = read_wav(path).and_then(|(samples, rate)| {
                let samples = resample(&samples, rate, TARGET_RATE)?;
                segment_recording(&samples, TARGET_RATE, 0)
                    .iter()
                    .map(|seg| {
                        let mel = front_end.compute(seg)?;
                        let (m, f) = (mel.mels(), mel.frames());
                        Ok((seg.offset_s, mel.into_flat(), m, f))
                    })
                    .collect()
            });
            (path.clone(), out)
        })
        .collect();

    let mut log = FeaturizeLog::default();
    let mut ds = MultiLabelDataset {
        class_names: class_names.clone(),
        ..Default::default()
    };
    for (path, result) in results {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let segments = match result {
            Ok(s) => s,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                log.skipped_files.push((path, e.to_string()));
                continue;
            }
        };
        let recording = ds.recording_names.len() as u32;
        ds.recording_names.push(stem.clone());
        let mut kept = 0;
        for (offset_s, features, rows, frames) in segments {
            let Some(row) = table.get(&(stem.as_str(), offset_key(offset_s))) else {
                log.unannotated_segments += 1;
                continue;
            };
            let mut labels = vec![false; class_names.len()];
            for c in &row.classes {
                labels[class_index[c.as_str()]] = true;
            }
            ds.examples.push(Example {
                rows,
                frames,
                features,
                labels,
                recording,
                offset_s,
            });
            kept += 1;
        }
        info!("{stem}: {kept} segments");
        log.segments.insert(stem, kept);
    }
    if log.skipped_files.len() == wavs.len() {
        return Err(Error::Data(format!("all {} audio files were unreadable", wavs.len())));
    }
    Ok((ds, log))
}
