//! Seed aggregation into the policy table and polyphony curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{GroupReport, StratifiedReport};

pub const TABLE_HEADER: [&str; 9] = [
    "policy",
    "frequent_mean",
    "frequent_std",
    "common_mean",
    "common_std",
    "rare_mean",
    "rare_std",
    "all_mean",
    "all_std",
];

pub const PLOT_HEADER: [&str; 3] = ["polyphony_level", "macro_f", "std"];

/// Mean and sample standard deviation over the seeds where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: Option<f64>,
    /// `None` with fewer than two defined values.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> CellStat {
    let n = values.len();
    if n == 0 {
        return CellStat {
            mean: None,
            std: None,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    CellStat {
        mean: Some(mean),
        std,
        n,
    }
}

fn defined<F: Fn(&GroupReport) -> Option<f64>>(reports: &[StratifiedReport], f: F) -> Vec<f64> {
    reports.iter().filter_map(|r| f(&r.groups)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub policy: String,
    pub frequent: CellStat,
    pub common: CellStat,
    pub rare: CellStat,
    pub all: CellStat,
}

impl TableRow {
    pub fn from_reports(policy: &str, reports: &[StratifiedReport]) -> Self {
        Self {
            policy: policy.to_string(),
            frequent: mean_std(&defined(reports, |g| g.frequent)),
            common: mean_std(&defined(reports, |g| g.common)),
            rare: mean_std(&defined(reports, |g| g.rare)),
            all: mean_std(&defined(reports, |g| g.all)),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn to_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::State(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed column order; undefined cells are empty.
pub fn table_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::State(format!("csv: {e}"));
    w.write_record(TABLE_HEADER).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.policy.clone()];
        for c in [r.frequent, r.common, r.rare, r.all] {
            rec.push(cell(c.mean));
            rec.push(cell(c.std));
        }
        w.write_record(&rec).map_err(err)?;
    }
    to_text(w)
}

/// Per-level macro F aggregated over seeds.
pub fn polyphony_curve(reports: &[StratifiedReport]) -> Vec<(usize, CellStat)> {
    let mut by_level: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for p in &r.polyphony {
            let v = by_level.entry(p.level).or_default();
            if let Some(f) = p.macro_f {
                v.push(f);
            }
        }
    }
    by_level.into_iter().map(|(l, v)| (l, mean_std(&v))).collect()
}

pub fn plot_csv(curve: &[(usize, CellStat)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::State(format!("csv: {e}"));
    w.write_record(PLOT_HEADER).map_err(err)?;
    for (level, s) in curve {
        w.write_record([level.to_string(), cell(s.mean), cell(s.std)]).map_err(err)?;
    }
    to_text(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PolyphonyPoint;

    fn report(all: f64, rare: Option<f64>, levels: &[(usize, f64)]) -> StratifiedReport {
        StratifiedReport {
            threshold: 0.5,
            examples: 1,
            groups: GroupReport {
                frequent: Some(all),
                common: None,
                rare,
                all: Some(all),
            },
            classes: vec![],
            polyphony: levels
                .iter()
                .map(|&(level, f)| PolyphonyPoint {
                    level,
                    examples: 1,
                    macro_f: Some(f),
                })
                .collect(),
        }
    }

    #[test]
    fn sample_std() {
        let s = mean_std(&[0.5, 0.7, 0.9]);
        assert!((s.mean.unwrap() - 0.7).abs() < 1e-15);
        assert!((s.std.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(mean_std(&[0.4]).std, None);
        assert_eq!(mean_std(&[]).mean, None);
        assert_eq!(mean_std(&[0.3, 0.3, 0.3]).std, Some(0.0));
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            TableRow::from_reports("none", &[report(0.5, Some(0.1), &[]), report(0.7, None, &[])]),
            TableRow::from_reports("mixup=0.5,multimix=0.5", &[report(0.6, Some(0.2), &[])]),
        ];
        let text = table_csv(&rows).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TABLE_HEADER.join(","));
        assert_eq!(lines[1], "none,0.600000,0.141421,,,0.100000,,0.600000,0.141421");
        assert_eq!(lines[2], "\"mixup=0.5,multimix=0.5\",0.600000,,,,0.200000,,0.600000,");
    }

    #[test]
    fn curve_merges_levels_across_seeds() {
        let curve = polyphony_curve(&[report(0.0, None, &[(1, 0.4), (2, 0.2)]), report(0.0, None, &[(1, 0.6)])]);
        assert_eq!(curve.len(), 2);
        assert!((curve[0].1.mean.unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(curve[1].1.n, 1);
        let text = plot_csv(&curve).unwrap();
        assert!(text.starts_with("polyphony_level,macro_f,std\n1,0.500000,"));
    }
}
