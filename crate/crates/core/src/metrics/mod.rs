//! Macro F-score with frequency-group and polyphony stratification.
//!
//! Classes without positives in the evaluated examples are excluded from
//! every average. Undefined averages (no eligible class) are `None`, never 0.

mod report;

pub use report::{evaluate, GroupReport, PolyphonyPoint, StratifiedReport, ClassEntry};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ClassProfile, FrequencyGroup};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `p ≥ threshold` → 1.
pub fn binarize(probabilities: &Array2<f64>, threshold: f64) -> Result<Array2<bool>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Param(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(probabilities.mapv(|p| p >= threshold))
}

pub fn labels_to_bool(labels: &Array2<f64>) -> Array2<bool> {
    labels.mapv(|y| y >= 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

impl ClassCounts {
    /// `2tp / (2tp + fp + fn)`, or `None` without support.
    pub fn f_score(&self) -> Option<f64> {
        if self.support == 0 {
            return None;
        }
        Some(2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

fn check_shapes(preds: ArrayView2<bool>, labels: ArrayView2<bool>) -> Result<()> {
    if preds.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs labels {:?}",
            preds.dim(),
            labels.dim()
        )));
    }
    Ok(())
}

pub fn class_counts(preds: ArrayView2<bool>, labels: ArrayView2<bool>) -> Result<Vec<ClassCounts>> {
    check_shapes(preds, labels)?;
    let mut counts = vec![ClassCounts::default(); preds.ncols()];
    for (p_row, y_row) in preds.axis_iter(Axis(0)).zip(labels.axis_iter(Axis(0))) {
        for (c, (&p, &y)) in p_row.iter().zip(y_row.iter()).enumerate() {
            let k = &mut counts[c];
            match (p, y) {
                (true, true) => k.tp += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
                (false, false) => {}
            }
            k.support += y as usize;
        }
    }
    Ok(counts)
}

/// Confusion counts and F-score per class.
pub fn per_class_f(preds: ArrayView2<bool>, labels: ArrayView2<bool>) -> Result<(Vec<ClassCounts>, Vec<Option<f64>>)> {
    let counts = class_counts(preds, labels)?;
    let f = counts.iter().map(ClassCounts::f_score).collect();
    Ok((counts, f))
}

/// Unweighted mean of the defined F-scores among `subset`.
pub fn macro_f(per_class: &[Option<f64>], subset: &[usize]) -> Option<f64> {
    let values: Vec<f64> = subset.iter().filter_map(|&c| per_class[c]).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Mean over every class with a defined F-score.
pub fn macro_f_all(per_class: &[Option<f64>]) -> Option<f64> {
    let all: Vec<usize> = (0..per_class.len()).collect();
    macro_f(per_class, &all)
}

/// Macro F over examples with exactly `level` active classes, for each level ≥ 1 present.
pub fn polyphony_report(preds: ArrayView2<bool>, labels: ArrayView2<bool>) -> Result<Vec<PolyphonyPoint>> {
    check_shapes(preds, labels)?;
    let levels: Vec<usize> = labels
        .axis_iter(Axis(0))
        .map(|r| r.iter().filter(|&&b| b).count())
        .collect();
    let max = levels.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for level in 1..=max {
        let rows: Vec<usize> = (0..levels.len()).filter(|&i| levels[i] == level).collect();
        if rows.is_empty() {
            continue;
        }
        let p = preds.select(Axis(0), &rows);
        let y = labels.select(Axis(0), &rows);
        let (_, f) = per_class_f(p.view(), y.view())?;
        out.push(PolyphonyPoint {
            level,
            examples: rows.len(),
            macro_f: macro_f_all(&f),
        });
    }
    Ok(out)
}

/// Frequent/common/rare means plus the mean over all evaluated classes.
pub fn group_report(per_class: &[Option<f64>], profiles: &[ClassProfile]) -> Result<GroupReport> {
    if profiles.len() != per_class.len() {
        return Err(Error::Shape(format!(
            "{} class profiles for {} classes",
            profiles.len(),
            per_class.len()
        )));
    }
    let members = |g: FrequencyGroup| -> Vec<usize> {
        profiles.iter().filter(|p| p.group == g).map(|p| p.class_id).collect()
    };
    Ok(GroupReport {
        frequent: macro_f(per_class, &members(FrequencyGroup::Frequent)),
        common: macro_f(per_class, &members(FrequencyGroup::Common)),
        rare: macro_f(per_class, &members(FrequencyGroup::Rare)),
        all: macro_f_all(per_class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn profile(ids_groups: &[FrequencyGroup]) -> Vec<ClassProfile> {
        ids_groups
            .iter()
            .enumerate()
            .map(|(class_id, &group)| ClassProfile {
                class_id,
                name: format!("c{class_id}"),
                train_count: 0,
                group,
            })
            .collect()
    }

    #[test]
    fn binarize_threshold_rules() {
        let p = array![[0.5, 0.49, 1.0, 0.0]];
        assert_eq!(binarize(&p, 0.5).unwrap(), array![[true, false, true, false]]);
        assert!(binarize(&p, 0.0).unwrap().iter().all(|&b| b));
        assert!(binarize(&p, 1.0 + f64::EPSILON).is_err());
        assert!(binarize(&p, -0.1).is_err());
    }

    #[test]
    fn f_score_formula() {
        let k = ClassCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            support: 3,
        };
        assert_eq!(k.f_score(), Some(4.0 / 6.0));
        let none = ClassCounts {
            tp: 0,
            fp: 4,
            fn_: 0,
            support: 0,
        };
        assert_eq!(none.f_score(), None);
    }

    #[test]
    fn perfect_and_all_negative_predictions() {
        let y = array![[true, false], [false, true], [true, true]];
        let (_, f) = per_class_f(y.view(), y.view()).unwrap();
        assert_eq!(f, vec![Some(1.0), Some(1.0)]);
        let none = Array2::from_elem((3, 2), false);
        let (_, f) = per_class_f(none.view(), y.view()).unwrap();
        assert_eq!(f, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn unsupported_class_is_excluded() {
        let y = array![[true, false], [true, false]];
        let p = array![[true, true], [false, true]];
        let (_, f) = per_class_f(p.view(), y.view()).unwrap();
        assert_eq!(f[1], None);
        assert_eq!(macro_f_all(&f), f[0]);
    }

    #[test]
    fn macro_means() {
        assert_eq!(macro_f(&[Some(0.25)], &[0]), Some(0.25));
        assert_eq!(macro_f(&[Some(1.0), Some(0.0)], &[0, 1]), Some(0.5));
        assert_eq!(macro_f(&[Some(1.0), None], &[1]), None);
        assert_eq!(macro_f(&[Some(1.0)], &[]), None);
    }

    #[test]
    fn group_means() {
        use FrequencyGroup::*;
        let f = [Some(1.0), Some(0.5), Some(0.0)];
        let g = group_report(&f, &profile(&[Frequent, Common, Rare])).unwrap();
        assert_eq!((g.frequent, g.common, g.rare, g.all), (Some(1.0), Some(0.5), Some(0.0), Some(0.5)));

        let g = group_report(&f, &profile(&[Frequent, Frequent, Frequent])).unwrap();
        assert_eq!((g.common, g.rare), (None, None));
        assert_eq!(g.all, g.frequent);
    }

    #[test]
    fn six_class_hand_computation() {
        use FrequencyGroup::*;
        // F per class: 1, 0.5, 2/3, 0, 0.8, undefined.
        let f = [Some(1.0), Some(0.5), Some(2.0 / 3.0), Some(0.0), Some(0.8), None];
        let g = group_report(&f, &profile(&[Frequent, Frequent, Common, Common, Rare, Rare])).unwrap();
        assert_eq!(g.frequent, Some(0.75));
        assert_eq!(g.common, Some(1.0 / 3.0));
        assert_eq!(g.rare, Some(0.8));
        let all = g.all.unwrap();
        assert!((all - (1.0 + 0.5 + 2.0 / 3.0 + 0.0 + 0.8) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn monophonic_data_has_one_level() {
        let y = array![[true, false], [false, true], [false, false]];
        let pts = polyphony_report(y.view(), y.view()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].level, 1);
        assert_eq!(pts[0].examples, 2);
    }

    #[test]
    fn nine_polyphony_levels() {
        let c = 10;
        let n = 9;
        let y = Array2::from_shape_fn((n, c), |(i, j)| j <= i);
        let pts = polyphony_report(y.view(), y.view()).unwrap();
        assert_eq!(pts.iter().map(|p| p.level).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
    }
}
