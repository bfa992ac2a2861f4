use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fair::clp_term;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCounterfactual {
    pub a: usize,
    pub y_cf: u8,
    pub p_cf: f64,
    pub logits_cf: [f64; 2],
}

/// Factual and counterfactual predictions for one evaluation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: u64,
    pub a: usize,
    pub y: u8,
    pub p_f: f64,
    pub logits_f: [f64; 2],
    pub counterfactuals: Vec<ScoredCounterfactual>,
}

/// Mean over samples of the summed pairing terms.
pub fn clp_aggregate(scored: &[ScoredSample]) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("clp aggregate"));
    }
    let total: f64 = scored
        .iter()
        .map(|s| {
            s.counterfactuals
                .iter()
                .map(|c| clp_term(s.logits_f, c.logits_cf, s.y, c.y_cf))
                .sum::<f64>()
        })
        .sum();
    Ok(total / scored.len() as f64)
}

/// `K x K` matrix; `cells[a][a']` is the mean of `p_cf(a') - p_f` over
/// samples of factual group `a`. With `condition = Some(y*)` only samples
/// with `y = y*` and `y_cf[a'] = y*` count. Cells without qualifying samples
/// are `None`; the diagonal is 0 whenever group `a` has a qualifying sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfDiffMatrix {
    pub condition: Option<u8>,
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn cf_diff_matrix(
    scored: &[ScoredSample],
    group_count: usize,
    condition: Option<u8>,
) -> Result<CfDiffMatrix> {
    let mut sums = vec![vec![0.0; group_count]; group_count];
    let mut counts = vec![vec![0usize; group_count]; group_count];
    let mut group_hits = vec![0usize; group_count];
    for s in scored {
        if s.a >= group_count {
            return Err(Error::Validation(format!(
                "sample {}: group {} out of range",
                s.id, s.a
            )));
        }
        if condition.is_some_and(|c| c != s.y) {
            continue;
        }
        group_hits[s.a] += 1;
        for c in &s.counterfactuals {
            if c.a >= group_count {
                return Err(Error::Validation(format!(
                    "sample {}: counterfactual group {} out of range",
                    s.id, c.a
                )));
            }
            if condition.is_some_and(|y| y != c.y_cf) {
                continue;
            }
            sums[s.a][c.a] += c.p_cf - s.p_f;
            counts[s.a][c.a] += 1;
        }
    }
    let cells = (0..group_count)
        .map(|a| {
            (0..group_count)
                .map(|b| {
                    if a == b {
                        (group_hits[a] > 0).then_some(0.0)
                    } else {
                        (counts[a][b] > 0).then(|| sums[a][b] / counts[a][b] as f64)
                    }
                })
                .collect()
        })
        .collect();
    Ok(CfDiffMatrix { condition, cells })
}
