use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilitySpec {
    /// Cost of a false positive.
    pub alpha_0: f64,
    /// Cost of a false negative.
    pub alpha_1: f64,
    pub threshold: f64,
}

impl Default for UtilitySpec {
    fn default() -> Self {
        Self {
            alpha_0: 1.0,
            alpha_1: 1.0,
            threshold: 0.5,
        }
    }
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        for (name, alpha) in [("alpha_0", self.alpha_0), ("alpha_1", self.alpha_1)] {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} must lie in (0, 1], got {alpha}"
                )));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Confusion counts of one group at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupRates {
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub predicted_positive: usize,
    /// `None` when the group has no negatives.
    pub fpr: Option<f64>,
    /// `None` when the group has no positives.
    pub fnr: Option<f64>,
    /// `None` when the group is empty.
    pub positive_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub group_a: usize,
    pub group_b: usize,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityGap {
    pub group_a: usize,
    pub group_b: usize,
    pub gap: Option<f64>,
}

fn check(
    probabilities: &[f64],
    labels: Option<&[u8]>,
    groups: &[usize],
    group_count: usize,
) -> Result<()> {
    if probabilities.len() != groups.len() {
        return Err(Error::Shape {
            context: "probabilities and groups",
            expected: probabilities.len(),
            actual: groups.len(),
        });
    }
    if let Some(labels) = labels {
        if labels.len() != groups.len() {
            return Err(Error::Shape {
                context: "labels and groups",
                expected: groups.len(),
                actual: labels.len(),
            });
        }
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= group_count) {
        return Err(Error::Validation(format!(
            "group {g} out of range for {group_count} groups"
        )));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn abs_diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

/// Per-group rates with predictions `1[p >= threshold]`. Labels may be
/// omitted when only positive rates are needed.
pub fn group_rates(
    probabilities: &[f64],
    labels: Option<&[u8]>,
    groups: &[usize],
    group_count: usize,
    threshold: f64,
) -> Result<Vec<GroupRates>> {
    check(probabilities, labels, groups, group_count)?;
    let mut out = vec![GroupRates::default(); group_count];
    let mut false_pos = vec![0usize; group_count];
    let mut false_neg = vec![0usize; group_count];
    for (i, (&p, &g)) in probabilities.iter().zip(groups).enumerate() {
        let predicted = p >= threshold;
        let r = &mut out[g];
        r.count += 1;
        r.predicted_positive += usize::from(predicted);
        match labels.map(|l| l[i]) {
            Some(1) => {
                r.positives += 1;
                false_neg[g] += usize::from(!predicted);
            }
            Some(_) => {
                r.negatives += 1;
                false_pos[g] += usize::from(predicted);
            }
            None => {}
        }
    }
    for (g, r) in out.iter_mut().enumerate() {
        r.positive_rate = ratio(r.predicted_positive, r.count);
        if labels.is_some() {
            r.fpr = ratio(false_pos[g], r.negatives);
            r.fnr = ratio(false_neg[g], r.positives);
        }
    }
    Ok(out)
}

fn pairs(group_count: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..group_count).flat_map(move |a| (a + 1..group_count).map(move |b| (a, b)))
}

/// Absolute FPR and FNR differences for every unordered group pair.
pub fn equalized_odds_gaps(
    probabilities: &[f64],
    labels: &[u8],
    groups: &[usize],
    group_count: usize,
    threshold: f64,
) -> Result<Vec<PairGap>> {
    let rates = group_rates(probabilities, Some(labels), groups, group_count, threshold)?;
    Ok(pairs(group_count)
        .map(|(a, b)| PairGap {
            group_a: a,
            group_b: b,
            fpr: abs_diff(rates[a].fpr, rates[b].fpr),
            fnr: abs_diff(rates[a].fnr, rates[b].fnr),
        })
        .collect())
}

/// Absolute differences of positive-prediction rates for every group pair.
pub fn demographic_parity_gaps(
    probabilities: &[f64],
    groups: &[usize],
    group_count: usize,
    threshold: f64,
) -> Result<Vec<ParityGap>> {
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("demographic parity"));
    }
    let rates = group_rates(probabilities, None, groups, group_count, threshold)?;
    Ok(pairs(group_count)
        .map(|(a, b)| ParityGap {
            group_a: a,
            group_b: b,
            gap: abs_diff(rates[a].positive_rate, rates[b].positive_rate),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    /// Per group: mean utility in the `y = 0` and `y = 1` strata; `None`
    /// for an empty cell.
    pub per_group: Vec<[Option<f64>; 2]>,
    /// Per unordered group pair: signed differences `V_a - V_b` per stratum.
    pub gaps: Vec<UtilityGap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityGap {
    pub group_a: usize,
    pub group_b: usize,
    pub stratum_y0: Option<f64>,
    pub stratum_y1: Option<f64>,
}

/// Group benefit: within `y = 0`, `V = 1 - alpha_0 * FPR`; within `y = 1`,
/// `V = 1 - alpha_1 * FNR`.
pub fn expected_utility(
    probabilities: &[f64],
    labels: &[u8],
    groups: &[usize],
    group_count: usize,
    spec: &UtilitySpec,
) -> Result<UtilityTable> {
    spec.validate()?;
    let rates = group_rates(
        probabilities,
        Some(labels),
        groups,
        group_count,
        spec.threshold,
    )?;
    let per_group: Vec<[Option<f64>; 2]> = rates
        .iter()
        .map(|r| {
            [
                r.fpr.map(|f| 1.0 - spec.alpha_0 * f),
                r.fnr.map(|f| 1.0 - spec.alpha_1 * f),
            ]
        })
        .collect();
    let diff = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
    let gaps = pairs(group_count)
        .map(|(a, b)| UtilityGap {
            group_a: a,
            group_b: b,
            stratum_y0: diff(per_group[a][0], per_group[b][0]),
            stratum_y1: diff(per_group[a][1], per_group[b][1]),
        })
        .collect();
    Ok(UtilityTable { per_group, gaps })
}
