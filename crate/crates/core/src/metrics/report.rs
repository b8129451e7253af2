use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{binarize, group_report, per_class_f, polyphony_report, ClassCounts};
use crate::data::{ClassProfile, FrequencyGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub frequent: Option<f64>,
    pub common: Option<f64>,
    pub rare: Option<f64>,
    pub all: Option<f64>,
}

impl GroupReport {
    pub fn get(&self, group: Option<FrequencyGroup>) -> Option<f64> {
        match group {
            Some(FrequencyGroup::Frequent) => self.frequent,
            Some(FrequencyGroup::Common) => self.common,
            Some(FrequencyGroup::Rare) => self.rare,
            None => self.all,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyphonyPoint {
    pub level: usize,
    pub examples: usize,
    pub macro_f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub name: String,
    pub group: FrequencyGroup,
    pub train_count: usize,
    #[serde(flatten)]
    pub counts: ClassCounts,
    pub f_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub threshold: f64,
    pub examples: usize,
    pub groups: GroupReport,
    pub classes: Vec<ClassEntry>,
    pub polyphony: Vec<PolyphonyPoint>,
}

/// Thresholds probabilities and computes every stratified score.
pub fn evaluate(
    probabilities: &Array2<f64>,
    labels: &Array2<bool>,
    profiles: &[ClassProfile],
    threshold: f64,
) -> Result<StratifiedReport> {
    let preds = binarize(probabilities, threshold)?;
    let (counts, f) = per_class_f(preds.view(), labels.view())?;
    let groups = group_report(&f, profiles)?;
    let polyphony = polyphony_report(preds.view(), labels.view())?;
    let classes = profiles
        .iter()
        .zip(counts.iter().zip(&f))
        .map(|(p, (&counts, &f_score))| ClassEntry {
            class_id: p.class_id,
            name: p.name.clone(),
            group: p.group,
            train_count: p.train_count,
            counts,
            f_score,
        })
        .collect();
    Ok(StratifiedReport {
        threshold,
        examples: labels.nrows(),
        groups,
        classes,
        polyphony,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl StratifiedReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::State(format!("report serialization: {e}")))
    }

    /// One row per class, polyphony level and group. Undefined scores are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::State(format!("csv write: {e}"));
        w.write_record(["scope", "key", "group", "support", "tp", "fp", "fn", "f_score"])
            .map_err(io)?;
        for c in &self.classes {
            w.write_record([
                "class".to_string(),
                c.name.clone(),
                c.group.name().to_string(),
                c.counts.support.to_string(),
                c.counts.tp.to_string(),
                c.counts.fp.to_string(),
                c.counts.fn_.to_string(),
                cell(c.f_score),
            ])
            .map_err(io)?;
        }
        for p in &self.polyphony {
            w.write_record([
                "polyphony".to_string(),
                p.level.to_string(),
                String::new(),
                p.examples.to_string(),
                String::new(),
                String::new(),
                String::new(),
                cell(p.macro_f),
            ])
            .map_err(io)?;
        }
        let groups = FrequencyGroup::ALL
            .iter()
            .map(|g| (g.name(), self.groups.get(Some(*g))))
            .chain(std::iter::once(("all", self.groups.all)));
        for (name, v) in groups {
            w.write_record(["group", name, name, "", "", "", "", &cell(v)]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::State(format!("csv write: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn profiles() -> Vec<ClassProfile> {
        [FrequencyGroup::Frequent, FrequencyGroup::Rare]
            .iter()
            .enumerate()
            .map(|(class_id, &group)| ClassProfile {
                class_id,
                name: format!("c{class_id}"),
                train_count: 10 - class_id,
                group,
            })
            .collect()
    }

    #[test]
    fn json_round_trip_keeps_nulls() {
        let probs = array![[0.9, 0.1], [0.2, 0.4]];
        let labels = array![[true, false], [true, false]];
        let r = evaluate(&probs, &labels, &profiles(), 0.5).unwrap();
        assert_eq!(r.groups.rare, None);
        assert_eq!(r.groups.common, None);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"rare\": null"));
        let back: StratifiedReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_has_every_stratum() {
        let probs = array![[0.9, 0.8], [0.2, 0.6]];
        let labels = array![[true, true], [false, true]];
        let r = evaluate(&probs, &labels, &profiles(), 0.5).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scope,key,group,support,tp,fp,fn,f_score");
        // 2 classes + levels 1,2 + 4 group rows
        assert_eq!(lines.len(), 1 + 2 + 2 + 4);
        assert!(lines.contains(&"group,common,common,,,,,"));
        assert!(lines.contains(&"group,all,all,,,,,1.000000"));
    }
}
