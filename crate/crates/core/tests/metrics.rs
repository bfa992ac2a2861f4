use cfodds_core::metrics::{
    auc_prc, auc_roc, brier, build_report, cf_diff_matrix, clp_aggregate, demographic_parity_gaps,
    equalized_odds_gaps, expected_utility, group_rates, prevalence_threshold, write_report,
    ModelEvaluation, ScoredCounterfactual, ScoredSample, UtilitySpec, BASELINE_LABEL,
    MATRICES_JSON, REPORT_JSON, SUMMARY_CSV,
};
use cfodds_core::{rng, Error};
use proptest::prelude::*;
use rand::Rng;

/// Pair-counting AUC: wins count 2, ties count 1, over all positive/negative pairs.
fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0 {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Average precision by enumerating every distinct cut `s >= t`.
fn ap_cuts(scores: &[f64], labels: &[u8]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in cuts {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &y)| s >= t && y == 1)
            .count() as f64;
        let pp = scores.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / pp);
        prev_recall = recall;
    }
    ap
}

fn random_instance(seed: u64, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
    let mut r = rng::seeded(seed);
    let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = labels
        .iter()
        .map(|&y| (r.gen_range(0..levels) + y as u32 * levels / 4) as f64 / (2 * levels) as f64)
        .collect();
    (scores, labels)
}

#[test]
fn auc_roc_matches_pair_counting() {
    for seed in 0..100 {
        let (s, y) = random_instance(seed, 2 + (seed as usize * 7) % 150, 1 + (seed as u32 % 40));
        assert_eq!(auc_roc(&s, &y).unwrap(), auc_pairs(&s, &y), "seed {seed}");
    }
}

#[test]
fn auc_prc_matches_cut_enumeration() {
    for seed in 0..100 {
        let (s, y) = random_instance(
            seed + 500,
            2 + (seed as usize * 11) % 150,
            1 + (seed as u32 % 30),
        );
        let got = auc_prc(&s, &y).unwrap();
        assert!((got - ap_cuts(&s, &y)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn performance_hand_cases() {
    let y = [0, 0, 1, 1];
    assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
    assert_eq!(auc_prc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
    assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 0.0);
    let flat = [0.4; 4];
    assert_eq!(auc_roc(&flat, &y).unwrap(), 0.5);
    assert_eq!(auc_prc(&flat, &[0, 0, 0, 1]).unwrap(), 0.25);

    let b = brier(&[0.8, 0.3, 0.6, 0.1], &[1, 0, 1, 0]).unwrap();
    assert!((b - 0.075).abs() < 1e-15);
    assert_eq!(brier(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);

    assert!(matches!(
        auc_roc(&[0.1, 0.2], &[1, 1]),
        Err(Error::UndefinedMetric(_))
    ));
    assert!(matches!(
        auc_prc(&[0.1, 0.2], &[0, 0]),
        Err(Error::UndefinedMetric(_))
    ));
    assert!(auc_roc(&[0.1], &[0, 1]).is_err());
    assert!(auc_roc(&[f64::NAN, 0.2], &[0, 1]).is_err());
    assert!(brier(&[1.5], &[1]).is_err());
    assert!(brier(&[], &[]).is_err());
}

#[test]
fn prevalence_threshold_matches_the_label_rate() {
    for seed in 0..30 {
        let mut r = rng::seeded(seed);
        let n = 10 + seed as usize * 13;
        let p: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.3))).collect();
        let t = prevalence_threshold(&p, &y).unwrap();
        let predicted = p.iter().filter(|&&v| v >= t).count();
        let positives = y.iter().filter(|&&v| v == 1).count();
        assert_eq!(predicted, positives.max(1), "seed {seed}");
    }
}

/// Two groups of four: group 0 misclassifies one of each class, group 1 none.
fn hand_groups() -> (Vec<f64>, Vec<u8>, Vec<usize>) {
    (
        vec![0.9, 0.4, 0.6, 0.1, 0.8, 0.7, 0.2, 0.3],
        vec![1, 1, 0, 0, 1, 1, 0, 0],
        vec![0, 0, 0, 0, 1, 1, 1, 1],
    )
}

#[test]
fn group_gaps_hand_enumeration() {
    let (p, y, g) = hand_groups();
    let rates = group_rates(&p, Some(&y), &g, 2, 0.5).unwrap();
    assert_eq!(rates[0].fpr, Some(0.5));
    assert_eq!(rates[0].fnr, Some(0.5));
    assert_eq!(rates[1].fpr, Some(0.0));
    assert_eq!(rates[1].fnr, Some(0.0));
    let eo = equalized_odds_gaps(&p, &y, &g, 2, 0.5).unwrap();
    assert_eq!(eo.len(), 1);
    assert_eq!((eo[0].fpr, eo[0].fnr), (Some(0.5), Some(0.5)));
    let dp = demographic_parity_gaps(&p, &g, 2, 0.5).unwrap();
    assert_eq!(dp[0].gap, Some(0.0));
    let dp = demographic_parity_gaps(&p, &g, 2, 0.85).unwrap();
    assert_eq!(dp[0].gap, Some(0.25));

    // three groups give three pairs; the empty group yields undefined gaps
    let eo = equalized_odds_gaps(&p, &y, &g, 3, 0.5).unwrap();
    assert_eq!(
        eo.iter()
            .map(|e| (e.group_a, e.group_b))
            .collect::<Vec<_>>(),
        vec![(0, 1), (0, 2), (1, 2)]
    );
    assert_eq!(eo[1].fpr, None);
    assert!(group_rates(&p, Some(&y), &g, 1, 0.5).is_err());
}

#[test]
fn gaps_vanish_for_truth_and_constant_predictors() {
    let mut r = rng::seeded(3);
    let n = 300;
    let y: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
    let g: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
    let truth: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    for p in [truth, vec![0.3; n]] {
        for e in equalized_odds_gaps(&p, &y, &g, 3, 0.5).unwrap() {
            assert_eq!((e.fpr, e.fnr), (Some(0.0), Some(0.0)));
        }
    }
    for e in demographic_parity_gaps(&[0.7; 300], &g, 3, 0.5).unwrap() {
        assert_eq!(e.gap, Some(0.0));
    }
}

#[test]
fn utility_hand_cases() {
    let (p, y, g) = hand_groups();
    let perfect: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let spec = UtilitySpec::default();
    let table = expected_utility(&perfect, &y, &g, 2, &spec).unwrap();
    assert!(table.per_group.iter().all(|v| *v == [Some(1.0), Some(1.0)]));
    assert!(table
        .gaps
        .iter()
        .all(|v| v.stratum_y0 == Some(0.0) && v.stratum_y1 == Some(0.0)));

    // ten negatives, three flagged: FPR 0.3
    let p10: Vec<f64> = (0..10).map(|i| if i < 3 { 0.9 } else { 0.1 }).collect();
    let table = expected_utility(&p10, &[0; 10], &[0; 10], 1, &spec).unwrap();
    assert!((table.per_group[0][0].unwrap() - 0.7).abs() < 1e-15);
    assert_eq!(table.per_group[0][1], None);
    let half = UtilitySpec {
        alpha_0: 0.5,
        ..spec
    };
    let table = expected_utility(&p10, &[0; 10], &[0; 10], 1, &half).unwrap();
    assert!((table.per_group[0][0].unwrap() - 0.85).abs() < 1e-15);

    let table = expected_utility(&p, &y, &g, 2, &spec).unwrap();
    assert_eq!(table.per_group[0], [Some(0.5), Some(0.5)]);
    assert_eq!(table.gaps[0].stratum_y0, Some(-0.5));
    assert_eq!(table.gaps[0].stratum_y1, Some(-0.5));

    for bad in [
        UtilitySpec {
            alpha_0: 0.0,
            ..spec
        },
        UtilitySpec {
            alpha_1: 1.5,
            ..spec
        },
        UtilitySpec {
            threshold: 1.0,
            ..spec
        },
        UtilitySpec {
            threshold: 0.0,
            ..spec
        },
    ] {
        assert!(expected_utility(&p, &y, &g, 2, &bad).is_err());
    }
}

fn scored(
    id: u64,
    a: usize,
    y: u8,
    logits_f: [f64; 2],
    cfs: &[(usize, u8, [f64; 2])],
) -> ScoredSample {
    let p = |l: [f64; 2]| 1.0 / (1.0 + (l[0] - l[1]).exp());
    ScoredSample {
        id,
        a,
        y,
        p_f: p(logits_f),
        logits_f,
        counterfactuals: cfs
            .iter()
            .map(|&(a, y_cf, l)| ScoredCounterfactual {
                a,
                y_cf,
                p_cf: p(l),
                logits_cf: l,
            })
            .collect(),
    }
}

#[test]
fn clp_aggregate_hand_cases() {
    let same = scored(0, 0, 1, [0.0, 1.0], &[(1, 1, [0.0, 1.0])]);
    let far = scored(1, 1, 0, [1.0, 0.0], &[(0, 0, [0.0, 1.0])]);
    let mismatch = scored(2, 0, 1, [5.0, 0.0], &[(1, 0, [0.0, 5.0])]);
    assert_eq!(clp_aggregate(std::slice::from_ref(&same)).unwrap(), 0.0);
    assert_eq!(clp_aggregate(std::slice::from_ref(&mismatch)).unwrap(), 0.0);
    assert_eq!(clp_aggregate(std::slice::from_ref(&far)).unwrap(), 1.0);
    assert!((clp_aggregate(&[same, far, mismatch]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(clp_aggregate(&[]).is_err());
}

#[test]
fn cf_matrix_hand_case() {
    let s = vec![
        ScoredSample {
            id: 0,
            a: 0,
            y: 1,
            p_f: 0.6,
            logits_f: [0.0, 0.0],
            counterfactuals: vec![ScoredCounterfactual {
                a: 1,
                y_cf: 1,
                p_cf: 0.9,
                logits_cf: [0.0, 0.0],
            }],
        },
        ScoredSample {
            id: 1,
            a: 0,
            y: 1,
            p_f: 0.5,
            logits_f: [0.0, 0.0],
            counterfactuals: vec![ScoredCounterfactual {
                a: 1,
                y_cf: 0,
                p_cf: 0.1,
                logits_cf: [0.0, 0.0],
            }],
        },
    ];
    let all = cf_diff_matrix(&s, 2, None).unwrap();
    assert_eq!(all.cells[0][0], Some(0.0));
    assert!((all.cells[0][1].unwrap() - (0.3 - 0.4) / 2.0).abs() < 1e-15);
    assert_eq!(all.cells[1], vec![None, None]);
    let y1 = cf_diff_matrix(&s, 2, Some(1)).unwrap();
    assert!((y1.cells[0][1].unwrap() - 0.3).abs() < 1e-15);
    let y0 = cf_diff_matrix(&s, 2, Some(0)).unwrap();
    assert!(y0.cells.iter().flatten().all(Option::is_none));
    assert!(cf_diff_matrix(&s, 1, None).is_err());
}

fn shuffle_groups(groups: &[usize], perm: &[usize]) -> Vec<usize> {
    groups.iter().map(|&g| perm[g]).collect()
}

proptest! {
    #[test]
    fn ranking_metrics_ignore_monotone_transforms(seed in 0u64..10_000) {
        let (s, y) = random_instance(seed, 60, 25);
        let t: Vec<f64> = s.iter().map(|x| x * x * x + x).collect();
        prop_assert!((auc_roc(&s, &y).unwrap() - auc_roc(&t, &y).unwrap()).abs() <= 1e-12);
        prop_assert!((auc_prc(&s, &y).unwrap() - auc_prc(&t, &y).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn rates_are_monotone_in_the_threshold(seed in 0u64..10_000, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (p, y) = random_instance(seed, 80, 50);
        let g: Vec<usize> = (0..p.len()).map(|i| i % 2).collect();
        let a = group_rates(&p, Some(&y), &g, 2, lo).unwrap();
        let b = group_rates(&p, Some(&y), &g, 2, hi).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            prop_assert!(rb.positive_rate <= ra.positive_rate);
            prop_assert!(rb.fpr <= ra.fpr);
            prop_assert!(rb.fnr >= ra.fnr);
        }
    }

    #[test]
    fn gaps_follow_group_relabelling(seed in 0u64..10_000, perm_index in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm = perms[perm_index];
        let (p, y) = random_instance(seed, 90, 20);
        let mut r = rng::seeded(seed);
        let g: Vec<usize> = (0..p.len()).map(|_| r.gen_range(0..3)).collect();
        let h = shuffle_groups(&g, &perm);
        let before = equalized_odds_gaps(&p, &y, &g, 3, 0.3).unwrap();
        let after = equalized_odds_gaps(&p, &y, &h, 3, 0.3).unwrap();
        for e in &before {
            let (a, b) = (perm[e.group_a].min(perm[e.group_b]), perm[e.group_a].max(perm[e.group_b]));
            let m = after.iter().find(|x| x.group_a == a && x.group_b == b).unwrap();
            prop_assert_eq!((m.fpr, m.fnr), (e.fpr, e.fnr));
        }
        let dp_before = demographic_parity_gaps(&p, &g, 3, 0.3).unwrap();
        let dp_after = demographic_parity_gaps(&p, &h, 3, 0.3).unwrap();
        for e in &dp_before {
            let (a, b) = (perm[e.group_a].min(perm[e.group_b]), perm[e.group_a].max(perm[e.group_b]));
            let m = dp_after.iter().find(|x| x.group_a == a && x.group_b == b).unwrap();
            prop_assert_eq!(m.gap, e.gap);
        }
    }

    #[test]
    fn brier_decomposes_into_reliability_resolution_uncertainty(seed in 0u64..10_000) {
        // forecasts on a ten-point grid, so each distinct value is its own bin
        let mut r = rng::seeded(seed);
        let n = 200;
        let p: Vec<f64> = (0..n).map(|_| r.gen_range(0..=10) as f64 / 10.0).collect();
        let y: Vec<u8> = p.iter().map(|&q| u8::from(r.gen::<f64>() < q * 0.8 + 0.1)).collect();
        let base = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let (mut rel, mut res) = (0.0, 0.0);
        for level in 0..=10 {
            let f = level as f64 / 10.0;
            let bin: Vec<u8> = p.iter().zip(&y).filter(|(&q, _)| q == f).map(|(_, &v)| v).collect();
            if bin.is_empty() {
                continue;
            }
            let w = bin.len() as f64 / n as f64;
            let o = bin.iter().map(|&v| v as f64).sum::<f64>() / bin.len() as f64;
            rel += w * (f - o).powi(2);
            res += w * (o - base).powi(2);
        }
        let unc = base * (1.0 - base);
        prop_assert!((brier(&p, &y).unwrap() - (rel - res + unc)).abs() < 1e-12);
    }
}

fn evaluation(seed: u64, lambda_clp: Option<f64>) -> ModelEvaluation {
    let mut r = rng::seeded(seed);
    let scored = (0..200)
        .map(|i| {
            let a = r.gen_range(0..2);
            let y = r.gen_range(0..2u8);
            let lf = [0.0, r.gen_range(-2.0..2.0) + y as f64];
            let lc = [0.0, lf[1] + r.gen_range(-0.5..0.5)];
            let y_cf = if r.gen_bool(0.8) { y } else { 1 - y };
            self::scored(i, a, y, lf, &[(1 - a, y_cf, lc)])
        })
        .collect();
    ModelEvaluation { lambda_clp, scored }
}

#[test]
fn report_has_one_summary_row_per_model() {
    let evals = vec![
        evaluation(1, None),
        evaluation(2, Some(0.0)),
        evaluation(3, Some(10.0)),
    ];
    let labels = vec!["g0".to_string(), "g1".to_string()];
    let report = build_report("test", labels, &evals, &UtilitySpec::default()).unwrap();
    assert_eq!(report.models.len(), 3);
    assert_eq!(report.models[0].label, BASELINE_LABEL);
    assert_eq!(report.models[0].clp, None);
    assert_eq!(
        report.models[2].clp,
        Some(clp_aggregate(&evals[2].scored).unwrap())
    );
    assert!(report
        .models
        .iter()
        .all(|m| m.fairness.len() == 2 && m.per_group.len() == 2));

    let dir = tempfile::tempdir().unwrap();
    let written = write_report(&report, dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let mut csv = csv::Reader::from_path(dir.path().join(SUMMARY_CSV)).unwrap();
    let header: Vec<String> = csv.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["lambda_clp", "auc_prc", "auc_roc", "brier", "clp"]);
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "N/A");
    assert_eq!(&rows[0][4], "N/A");
    assert_eq!(rows[2][0].parse::<f64>().unwrap(), 10.0);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().is_ok()));

    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(json["models"].as_array().unwrap().len(), 3);
    let matrices: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join(MATRICES_JSON)).unwrap()).unwrap();
    assert!(matrices.is_array() || matrices.is_object());

    let again = tempfile::tempdir().unwrap();
    write_report(&report, again.path()).unwrap();
    for p in &written {
        let name = p.file_name().unwrap();
        assert_eq!(
            std::fs::read(p).unwrap(),
            std::fs::read(again.path().join(name)).unwrap()
        );
    }
}
