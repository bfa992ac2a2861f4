use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::counterfactual::{cf_diff_matrix, clp_aggregate, CfDiffMatrix, ScoredSample};
use super::group::{
    demographic_parity_gaps, equalized_odds_gaps, expected_utility, group_rates, GroupRates,
    PairGap, ParityGap, UtilitySpec, UtilityTable,
};
use super::performance::{auc_prc, auc_roc, brier, prevalence_threshold};
use crate::error::{Error, Result};

/// Row label used for the baseline model.
pub const BASELINE_LABEL: &str = "N/A";

/// Predictions of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// `None` for the baseline.
    pub lambda_clp: Option<f64>,
    pub scored: Vec<ScoredSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub count: usize,
    pub auc_roc: Option<f64>,
    pub auc_prc: Option<f64>,
    pub brier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedFairness {
    /// `fixed` or `prevalence`.
    pub kind: String,
    pub threshold: f64,
    pub rates: Vec<GroupRates>,
    pub equalized_odds: Vec<PairGap>,
    pub demographic_parity: Vec<ParityGap>,
    /// `None` when the threshold is outside (0, 1).
    pub utility: Option<UtilityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfMatrices {
    pub outcome_0: CfDiffMatrix,
    pub outcome_1: CfDiffMatrix,
    pub unconditioned: CfDiffMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub lambda_clp: Option<f64>,
    pub overall: Performance,
    /// Not reported for the baseline.
    pub clp: Option<f64>,
    pub per_group: Vec<Performance>,
    pub fairness: Vec<ThresholdedFairness>,
    pub cf_matrices: CfMatrices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub group_labels: Vec<String>,
    pub utility: UtilitySpec,
    pub models: Vec<ModelReport>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) | Err(Error::EmptyInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn performance(probabilities: &[f64], labels: &[u8]) -> Result<Performance> {
    Ok(Performance {
        count: labels.len(),
        auc_roc: defined(auc_roc(probabilities, labels))?,
        auc_prc: defined(auc_prc(probabilities, labels))?,
        brier: defined(brier(probabilities, labels))?,
    })
}

fn fairness_at(
    kind: &str,
    threshold: f64,
    probabilities: &[f64],
    labels: &[u8],
    groups: &[usize],
    group_count: usize,
    utility: &UtilitySpec,
) -> Result<ThresholdedFairness> {
    let spec = UtilitySpec {
        threshold,
        ..*utility
    };
    Ok(ThresholdedFairness {
        kind: kind.to_string(),
        threshold,
        rates: group_rates(probabilities, Some(labels), groups, group_count, threshold)?,
        equalized_odds: equalized_odds_gaps(probabilities, labels, groups, group_count, threshold)?,
        demographic_parity: demographic_parity_gaps(probabilities, groups, group_count, threshold)?,
        utility: if spec.validate().is_ok() {
            Some(expected_utility(
                probabilities,
                labels,
                groups,
                group_count,
                &spec,
            )?)
        } else {
            None
        },
    })
}

pub fn model_report(
    evaluation: &ModelEvaluation,
    group_count: usize,
    utility: &UtilitySpec,
) -> Result<ModelReport> {
    let scored = &evaluation.scored;
    if scored.is_empty() {
        return Err(Error::EmptyInput("model evaluation"));
    }
    let probabilities: Vec<f64> = scored.iter().map(|s| s.p_f).collect();
    let labels: Vec<u8> = scored.iter().map(|s| s.y).collect();
    let groups: Vec<usize> = scored.iter().map(|s| s.a).collect();

    let per_group = (0..group_count)
        .map(|g| {
            let (p, y): (Vec<f64>, Vec<u8>) = scored
                .iter()
                .filter(|s| s.a == g)
                .map(|s| (s.p_f, s.y))
                .unzip();
            performance(&p, &y)
        })
        .collect::<Result<_>>()?;
    let fairness = vec![
        fairness_at(
            "fixed",
            utility.threshold,
            &probabilities,
            &labels,
            &groups,
            group_count,
            utility,
        )?,
        fairness_at(
            "prevalence",
            prevalence_threshold(&probabilities, &labels)?,
            &probabilities,
            &labels,
            &groups,
            group_count,
            utility,
        )?,
    ];
    Ok(ModelReport {
        label: evaluation
            .lambda_clp
            .map_or_else(|| BASELINE_LABEL.to_string(), |l| l.to_string()),
        lambda_clp: evaluation.lambda_clp,
        overall: performance(&probabilities, &labels)?,
        clp: match evaluation.lambda_clp {
            Some(_) => Some(clp_aggregate(scored)?),
            None => None,
        },
        per_group,
        fairness,
        cf_matrices: CfMatrices {
            outcome_0: cf_diff_matrix(scored, group_count, Some(0))?,
            outcome_1: cf_diff_matrix(scored, group_count, Some(1))?,
            unconditioned: cf_diff_matrix(scored, group_count, None)?,
        },
    })
}

pub fn build_report(
    split: &str,
    group_labels: Vec<String>,
    evaluations: &[ModelEvaluation],
    utility: &UtilitySpec,
) -> Result<MetricsReport> {
    utility.validate()?;
    let k = group_labels.len();
    Ok(MetricsReport {
        split: split.to_string(),
        utility: *utility,
        models: evaluations
            .iter()
            .map(|e| model_report(e, k, utility))
            .collect::<Result<_>>()?,
        group_labels,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// File names written by [`write_report`].
pub const SUMMARY_CSV: &str = "metrics_summary.csv";
pub const BY_GROUP_CSV: &str = "metrics_by_group.csv";
pub const FAIRNESS_CSV: &str = "fairness_gaps.csv";
pub const UTILITY_CSV: &str = "group_benefit.csv";
pub const MATRICES_JSON: &str = "cf_matrices.json";
pub const REPORT_JSON: &str = "metrics.json";

/// Writes the summary table (one row per model, baseline labelled `N/A`),
/// per-group performance, fairness gaps, group benefit, the difference
/// matrices and the full report. Returns the written paths.
pub fn write_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let summary: Vec<Vec<String>> = report
        .models
        .iter()
        .map(|m| {
            vec![
                m.label.clone(),
                cell(m.overall.auc_prc),
                cell(m.overall.auc_roc),
                cell(m.overall.brier),
                m.clp
                    .map_or_else(|| BASELINE_LABEL.to_string(), |c| c.to_string()),
            ]
        })
        .collect();
    let path = dir.join(SUMMARY_CSV);
    write_csv(
        &path,
        &["lambda_clp", "auc_prc", "auc_roc", "brier", "clp"],
        &summary,
    )?;
    written.push(path);

    let mut by_group = Vec::new();
    for m in &report.models {
        for (g, p) in m.per_group.iter().enumerate() {
            by_group.push(vec![
                m.label.clone(),
                report.group_labels[g].clone(),
                p.count.to_string(),
                cell(p.auc_prc),
                cell(p.auc_roc),
                cell(p.brier),
            ]);
        }
    }
    let path = dir.join(BY_GROUP_CSV);
    write_csv(
        &path,
        &[
            "lambda_clp",
            "group",
            "count",
            "auc_prc",
            "auc_roc",
            "brier",
        ],
        &by_group,
    )?;
    written.push(path);

    let mut gaps = Vec::new();
    let mut benefit = Vec::new();
    for m in &report.models {
        for f in &m.fairness {
            for (eo, dp) in f.equalized_odds.iter().zip(&f.demographic_parity) {
                gaps.push(vec![
                    m.label.clone(),
                    f.kind.clone(),
                    f.threshold.to_string(),
                    report.group_labels[eo.group_a].clone(),
                    report.group_labels[eo.group_b].clone(),
                    cell(eo.fpr),
                    cell(eo.fnr),
                    cell(dp.gap),
                ]);
            }
            if let Some(u) = &f.utility {
                for (g, v) in u.per_group.iter().enumerate() {
                    benefit.push(vec![
                        m.label.clone(),
                        f.kind.clone(),
                        f.threshold.to_string(),
                        report.group_labels[g].clone(),
                        cell(v[0]),
                        cell(v[1]),
                    ]);
                }
            }
        }
    }
    let path = dir.join(FAIRNESS_CSV);
    write_csv(
        &path,
        &[
            "lambda_clp",
            "threshold_kind",
            "threshold",
            "group_a",
            "group_b",
            "fpr_gap",
            "fnr_gap",
            "parity_gap",
        ],
        &gaps,
    )?;
    written.push(path);
    let path = dir.join(UTILITY_CSV);
    write_csv(
        &path,
        &[
            "lambda_clp",
            "threshold_kind",
            "threshold",
            "group",
            "utility_y0",
            "utility_y1",
        ],
        &benefit,
    )?;
    written.push(path);

    #[derive(Serialize)]
    struct MatrixEntry<'a> {
        lambda_clp: &'a str,
        outcome_0: &'a [Vec<Option<f64>>],
        outcome_1: &'a [Vec<Option<f64>>],
        unconditioned: &'a [Vec<Option<f64>>],
    }
    #[derive(Serialize)]
    struct Matrices<'a> {
        group_labels: &'a [String],
        models: Vec<MatrixEntry<'a>>,
    }
    let matrices = Matrices {
        group_labels: &report.group_labels,
        models: report
            .models
            .iter()
            .map(|m| MatrixEntry {
                lambda_clp: &m.label,
                outcome_0: &m.cf_matrices.outcome_0.cells,
                outcome_1: &m.cf_matrices.outcome_1.cells,
                unconditioned: &m.cf_matrices.unconditioned.cells,
            })
            .collect(),
    };
    let path = dir.join(MATRICES_JSON);
    fs::write(&path, serde_json::to_vec_pretty(&matrices)?)?;
    written.push(path);

    let path = dir.join(REPORT_JSON);
    fs::write(&path, serde_json::to_vec_pretty(report)?)?;
    written.push(path);
    Ok(written)
}
