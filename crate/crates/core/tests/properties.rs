use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mix2::data::{ClassProfile, FrequencyGroup};
use mix2::metrics::{evaluate, per_class_f};
use mix2::mixops::{bce, MixParams, MixStrategy, Mixing};

fn matrix(n: usize, c: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-4.0f64..4.0, n * c).prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap())
}

fn binary(n: usize, c: usize) -> impl Strategy<Value = Array2<bool>> {
    proptest::collection::vec(any::<bool>(), n * c).prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap())
}

fn shaped() -> impl Strategy<Value = (usize, usize)> {
    (1usize..12, 1usize..6)
}

fn batch() -> impl Strategy<Value = Array2<f64>> {
    shaped().prop_flat_map(|(n, d)| matrix(n, d))
}

fn logits_and_labels() -> impl Strategy<Value = (Array2<f64>, Array2<bool>)> {
    shaped().prop_flat_map(|(n, c)| (matrix(n, c), binary(n, c)))
}

fn mixing(strategy: MixStrategy, n: usize, seed: u64, alpha: f64) -> Mixing {
    let params = MixParams {
        mixup_alpha: alpha,
        manifold_alpha: alpha,
        multimix_alpha: alpha,
    };
    Mixing::draw(strategy, n, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn any_strategy() -> impl Strategy<Value = MixStrategy> {
    prop::sample::select(MixStrategy::ALL.to_vec())
}

fn profiles(c: usize, groups: &[u8]) -> Vec<ClassProfile> {
    (0..c)
        .map(|k| ClassProfile {
            class_id: k,
            name: format!("c{k}"),
            train_count: 0,
            group: FrequencyGroup::ALL[groups[k % groups.len()] as usize % 3],
        })
        .collect()
}

proptest! {
    #[test]
    fn mixed_rows_stay_in_the_convex_hull(
        h in batch(),
        seed in any::<u64>(),
        alpha in 0.05f64..4.0,
        strategy in any_strategy(),
    ) {
        let (n, d) = h.dim();
        let mixed = mixing(strategy, n, seed, alpha).apply(&h).unwrap();
        for col in 0..d {
            let c = h.column(col);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &v in mixed.column(col) {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn label_mass_is_linear(
        labels in shaped().prop_flat_map(|(n, c)| binary(n, c)),
        seed in any::<u64>(),
        strategy in any_strategy(),
    ) {
        let (n, c) = labels.dim();
        let y = labels.mapv(|b| b as u8 as f64);
        let m = mixing(strategy, n, seed, 1.0);
        let mixed = m.targets(&y).unwrap();
        let mass: Array2<f64> = y.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        let mixed_mass = m.apply(&mass).unwrap();
        for i in 0..n {
            let s: f64 = (0..c).map(|k| mixed[[i, k]]).sum();
            prop_assert!((s - mixed_mass[[i, 0]]).abs() < 1e-12);
            for k in 0..c {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&mixed[[i, k]]));
            }
        }
    }

    #[test]
    fn loss_level_mixing_matches_materialized_targets(
        (z, labels) in logits_and_labels(),
        seed in any::<u64>(),
        strategy in any_strategy(),
    ) {
        let y = labels.mapv(|b| b as u8 as f64);
        let m = mixing(strategy, z.nrows(), seed, 1.0);
        let a = m.loss(&z, &y).unwrap();
        let b = bce(&z, &m.targets(&y).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn metrics_are_invariant_to_class_and_example_order(
        probs in (1usize..30, 1usize..7).prop_flat_map(|(n, c)| (
            proptest::collection::vec(0.0f64..1.0, n * c).prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap()),
            binary(n, c),
            proptest::collection::vec(0u8..3, c),
            Just(n), Just(c),
        )),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (p, y, groups, n, c) = probs;
        let prof = profiles(c, &groups);
        let base = evaluate(&p, &y, &prof, 0.5).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<usize> = (0..c).collect();
        cols.shuffle(&mut rng);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let p2 = p.select(ndarray::Axis(1), &cols).select(ndarray::Axis(0), &rows);
        let y2 = y.select(ndarray::Axis(1), &cols).select(ndarray::Axis(0), &rows);
        let prof2: Vec<ClassProfile> = cols
            .iter()
            .enumerate()
            .map(|(new, &old)| ClassProfile { class_id: new, ..prof[old].clone() })
            .collect();
        let shuffled = evaluate(&p2, &y2, &prof2, 0.5).unwrap();

        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(base.groups.all, shuffled.groups.all));
        prop_assert!(close(base.groups.frequent, shuffled.groups.frequent));
        prop_assert!(close(base.groups.common, shuffled.groups.common));
        prop_assert!(close(base.groups.rare, shuffled.groups.rare));
        prop_assert_eq!(base.polyphony.len(), shuffled.polyphony.len());
        for (a, b) in base.polyphony.iter().zip(&shuffled.polyphony) {
            prop_assert_eq!(a.level, b.level);
            prop_assert!(close(a.macro_f, b.macro_f));
        }
    }

    #[test]
    fn unsupported_classes_never_contribute(
        data in (1usize..30, 2usize..7).prop_flat_map(|(n, c)| (binary(n, c), binary(n, c))),
        drop in 0usize..7,
    ) {
        let (p, mut y) = data;
        let k = drop % y.ncols();
        y.column_mut(k).fill(false);
        let (counts, f) = per_class_f(p.view(), y.view()).unwrap();
        prop_assert_eq!(counts[k].support, 0);
        prop_assert_eq!(f[k], None);
        for (c, cnt) in counts.iter().enumerate() {
            prop_assert_eq!(cnt.tp + cnt.fn_, cnt.support);
            if let Some(v) = f[c] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn fixing_a_false_negative_never_lowers_f(
        data in (1usize..30, 1usize..7).prop_flat_map(|(n, c)| (binary(n, c), binary(n, c))),
        pick in any::<prop::sample::Index>(),
    ) {
        let (mut p, y) = data;
        let misses: Vec<(usize, usize)> = y
            .indexed_iter()
            .filter(|&((i, k), &on)| on && !p[[i, k]])
            .map(|(ix, _)| ix)
            .collect();
        prop_assume!(!misses.is_empty());
        let (i, k) = misses[pick.index(misses.len())];
        let (_, before) = per_class_f(p.view(), y.view()).unwrap();
        p[[i, k]] = true;
        let (_, after) = per_class_f(p.view(), y.view()).unwrap();
        prop_assert!(after[k].unwrap() >= before[k].unwrap());
    }
}
