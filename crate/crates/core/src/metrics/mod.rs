//! Performance, group-fairness and counterfactual metrics, and the report
//! that collects them per model.

mod counterfactual;
mod group;
mod performance;
mod report;

pub use counterfactual::{
    cf_diff_matrix, clp_aggregate, CfDiffMatrix, ScoredCounterfactual, ScoredSample,
};
pub use group::{
    demographic_parity_gaps, equalized_odds_gaps, expected_utility, group_rates, GroupRates,
    PairGap, ParityGap, UtilityGap, UtilitySpec, UtilityTable,
};
pub use performance::{auc_prc, auc_roc, brier, prevalence_threshold};
pub use report::{
    build_report, model_report, write_report, CfMatrices, MetricsReport, ModelEvaluation,
    ModelReport, Performance, ThresholdedFairness, BASELINE_LABEL, BY_GROUP_CSV, FAIRNESS_CSV,
    MATRICES_JSON, REPORT_JSON, SUMMARY_CSV, UTILITY_CSV,
};
