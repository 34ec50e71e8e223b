mod common;

use cxrprep_core::config::Method;
use cxrprep_core::manifest::RaceGroup;
use cxrprep_core::metrics::{
    aggregate_seeds, auroc, build_report, group_disparity, macro_diagnostic_auroc, parse_predictions, race_auroc,
    render_predictions, spread, Dataset, DisparityMode, PredictionRow, PredictionSet, ReportHeader,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn scored_instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..12, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 11.0).collect()),
            prop::collection::vec(prop::bool::ANY, n).prop_map(|mut l| {
                l[0] = true;
                l[1] = false;
                l
            }),
        )
    })
}

proptest! {
    #[test]
    fn auroc_agrees_with_pair_count((s, l) in scored_instance()) {
        prop_assert!((auroc(&s, &l).unwrap() - common::brute_auroc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_complements((s, l) in scored_instance()) {
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        let a = auroc(&s, &l).unwrap();
        prop_assert!((a + auroc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let negated: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((a + auroc(&negated, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_is_invariant((s, l) in scored_instance()) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
    }

    #[test]
    fn spread_ignores_group_order(mut v in prop::collection::vec(0.0f64..1.0, 2..6), seed in 0u64..1000) {
        let a = spread(&v, DisparityMode::PairwiseMean).unwrap();
        let m = spread(&v, DisparityMode::MaxMinusMin).unwrap();
        let mut rng = common::rng(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        prop_assert!((spread(&v, DisparityMode::PairwiseMean).unwrap() - a).abs() < 1e-12);
        prop_assert_eq!(spread(&v, DisparityMode::MaxMinusMin).unwrap(), m);
        prop_assert!(a <= m + 1e-15);
    }

    #[test]
    fn aggregate_matches_two_pass_formula(v in prop::collection::vec(0.0f64..1.0, 2..10)) {
        let (mean, std) = aggregate_seeds(&v).unwrap();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((mean - m).abs() < 1e-12);
        prop_assert!((std.unwrap() - var.sqrt()).abs() < 1e-12);
    }
}

fn random_set(
    rng: &mut ChaCha8Rng,
    n: usize,
    labels: usize,
    method: Method,
    seed: i64,
    dataset: Dataset,
) -> PredictionSet {
    let groups = RaceGroup::STUDY_GROUPS;
    let rows = (0..n)
        .map(|i| {
            let g = if i % 11 == 10 { RaceGroup::Other } else { groups[i % 4] };
            let truth: Vec<Option<bool>> = (0..labels)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        None
                    } else {
                        Some(rng.random_bool(0.4))
                    }
                })
                .collect();
            let scores = truth
                .iter()
                .map(|t| (rng.random_range(0..50) as f64 + if *t == Some(true) { 20.0 } else { 0.0 }) / 70.0)
                .collect();
            let race_scores = groups
                .iter()
                .map(|&h| (rng.random_range(0..40) as f64 + if h == g { 15.0 } else { 0.0 }) / 55.0)
                .collect();
            PredictionRow {
                sample_id: format!("x{i:03}"),
                race_group: g,
                truth,
                scores,
                race_scores,
            }
        })
        .collect();
    PredictionSet {
        method,
        seed,
        dataset,
        labels: (0..labels).map(|l| format!("Finding{l}")).collect(),
        race_score_groups: groups.to_vec(),
        rows,
    }
}

#[test]
fn macro_auroc_matches_per_label_oracle() {
    let mut rng = common::rng(41);
    let p = random_set(&mut rng, 50, 3, Method::Baseline, 1, Dataset::Internal);
    let mut sum = 0.0;
    for l in 0..3 {
        let (s, t): (Vec<f64>, Vec<bool>) = p
            .rows
            .iter()
            .filter_map(|r| r.truth[l].map(|t| (r.scores[l], t)))
            .unzip();
        sum += common::brute_auroc(&s, &t);
    }
    assert!((macro_diagnostic_auroc(&p).unwrap() - sum / 3.0).abs() < 1e-12);
}

#[test]
fn race_auroc_matches_one_vs_rest_oracle() {
    let mut rng = common::rng(42);
    let p = random_set(&mut rng, 120, 1, Method::Baseline, 1, Dataset::Internal);
    let mut sum = 0.0;
    for (col, g) in RaceGroup::STUDY_GROUPS.iter().enumerate() {
        let s: Vec<f64> = p.rows.iter().map(|r| r.race_scores[col]).collect();
        let t: Vec<bool> = p.rows.iter().map(|r| r.race_group == *g).collect();
        sum += common::brute_auroc(&s, &t);
    }
    assert!((race_auroc(&p).unwrap() - sum / 4.0).abs() < 1e-12);
}

#[test]
fn disparity_matches_group_oracle() {
    let mut rng = common::rng(43);
    let p = random_set(&mut rng, 200, 2, Method::Clahe, 3, Dataset::External);
    let mut per_label = Vec::new();
    for l in 0..2 {
        let vals: Vec<f64> = RaceGroup::STUDY_GROUPS
            .iter()
            .map(|g| {
                let (s, t): (Vec<f64>, Vec<bool>) = p
                    .rows
                    .iter()
                    .filter(|r| r.race_group == *g)
                    .filter_map(|r| r.truth[l].map(|t| (r.scores[l], t)))
                    .unzip();
                common::brute_auroc(&s, &t)
            })
            .collect();
        let mut sum = 0.0;
        let mut pairs = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                sum += (vals[i] - vals[j]).abs();
                pairs += 1.0;
            }
        }
        per_label.push(sum / pairs);
    }
    let d = group_disparity(&p, DisparityMode::PairwiseMean).unwrap();
    assert!((d.value - (per_label[0] + per_label[1]) / 2.0).abs() < 1e-12);
    assert_eq!(d.cells_used, 8);
    assert_eq!(d.cells_skipped, 0);
}

#[test]
fn prediction_files_round_trip() {
    let mut rng = common::rng(44);
    let p = random_set(&mut rng, 30, 2, Method::Masking, 4, Dataset::Internal);
    let text = render_predictions(&p);
    assert_eq!(parse_predictions(&text, "mem").unwrap(), p);
}

#[test]
fn report_is_deterministic_and_order_free() {
    let mut rng = common::rng(45);
    let mut runs = Vec::new();
    for method in Method::REPORT_ORDER {
        for seed in 1..=3 {
            for dataset in Dataset::ALL {
                runs.push(random_set(&mut rng, 60, 2, method, seed, dataset));
            }
        }
    }
    let header = ReportHeader {
        tool_version: "0.1.0".into(),
        config_hash: "abc".into(),
        disparity_mode: DisparityMode::PairwiseMean,
    };
    let a = build_report(&runs, header.clone()).unwrap();
    runs.reverse();
    let b = build_report(&runs, header).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_markdown(), b.to_markdown());
    let methods: Vec<Method> = a.rows.iter().map(|r| r.method).collect();
    assert_eq!(methods, Method::REPORT_ORDER);
}

#[test]
fn duplicate_runs_are_rejected() {
    let mut rng = common::rng(46);
    let a = random_set(&mut rng, 20, 1, Method::Baseline, 1, Dataset::Internal);
    let header = ReportHeader {
        tool_version: "0.1.0".into(),
        config_hash: "abc".into(),
        disparity_mode: DisparityMode::PairwiseMean,
    };
    assert!(build_report(&[a.clone(), a], header).is_err());
}
