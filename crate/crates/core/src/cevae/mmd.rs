//! Squared maximum mean discrepancy with a Gaussian RBF kernel.
//!
//! Biased V-statistic:
//! `mean k(p, p') + mean k(q, q') - 2 mean k(p, q)`, clamped at zero,
//! with `k(x, y) = exp(-|x - y|^2 / (2 s^2))`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample, recomputed per call.
    Median,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(&self, pooled: &[ArrayView2<'_, f64>]) -> f64 {
        match *self {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Median => median_pairwise_distance(pooled),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median of all pairwise Euclidean distances among the rows of the given
/// blocks. Falls back to 1 when the sample is degenerate.
pub fn median_pairwise_distance(blocks: &[ArrayView2<'_, f64>]) -> f64 {
    let rows: Vec<&[f64]> = blocks
        .iter()
        .flat_map(|b| {
            b.rows()
                .into_iter()
                .map(|r| r.to_slice().expect("standard layout"))
        })
        .collect();
    let n = rows.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(rows[i], rows[j]));
        }
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let median = median.sqrt();
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

fn check_inputs(p: &ArrayView2<'_, f64>, q: &ArrayView2<'_, f64>, bandwidth: f64) -> Result<()> {
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::EmptyInput("mmd sample set"));
    }
    if p.ncols() != q.ncols() {
        return Err(Error::Shape {
            context: "mmd sample dimension",
            expected: p.ncols(),
            actual: q.ncols(),
        });
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Config(format!(
            "invalid kernel bandwidth {bandwidth}"
        )));
    }
    Ok(())
}

fn mean_kernel(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>, bandwidth: f64) -> f64 {
    let mut total = 0.0;
    for ra in a.rows() {
        let ra = ra.to_slice().expect("standard layout");
        for rb in b.rows() {
            total += rbf_kernel(ra, rb.to_slice().expect("standard layout"), bandwidth);
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

pub fn mmd_sq(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>, bandwidth: f64) -> Result<f64> {
    check_inputs(&p, &q, bandwidth)?;
    let value = mean_kernel(&p, &p, bandwidth) + mean_kernel(&q, &q, bandwidth)
        - 2.0 * mean_kernel(&p, &q, bandwidth);
    Ok(value.max(0.0))
}

/// MMD and its gradient with respect to the rows of `p`; `q` and the
/// bandwidth are treated as constants.
pub fn mmd_sq_with_grad(
    p: ArrayView2<'_, f64>,
    q: ArrayView2<'_, f64>,
    bandwidth: f64,
) -> Result<(f64, Array2<f64>)> {
    check_inputs(&p, &q, bandwidth)?;
    let (n, m, d) = (p.nrows(), q.nrows(), p.ncols());
    let inv_bw2 = 1.0 / (bandwidth * bandwidth);
    let mut grad = Array2::<f64>::zeros((n, d));
    let mut k_pp = 0.0;
    let mut k_pq = 0.0;
    let pp_scale = 2.0 / (n * n) as f64;
    let pq_scale = 2.0 / (n * m) as f64;
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let pi = p.row(i);
        let pi = pi.to_slice().expect("standard layout");
        // pp pairs, counting (i, j) and (j, i) through the symmetric factor
        k_pp += 1.0;
        for j in i + 1..n {
            let pj = p.row(j);
            let pj = pj.to_slice().expect("standard layout");
            let mut sq = 0.0;
            for c in 0..d {
                diff[c] = pi[c] - pj[c];
                sq += diff[c] * diff[c];
            }
            let k = (-0.5 * sq * inv_bw2).exp();
            k_pp += 2.0 * k;
            let coeff = -pp_scale * k * inv_bw2;
            for c in 0..d {
                grad[[i, c]] += coeff * diff[c];
                grad[[j, c]] -= coeff * diff[c];
            }
        }
        for j in 0..m {
            let qj = q.row(j);
            let qj = qj.to_slice().expect("standard layout");
            let mut sq = 0.0;
            for c in 0..d {
                diff[c] = pi[c] - qj[c];
                sq += diff[c] * diff[c];
            }
            let k = (-0.5 * sq * inv_bw2).exp();
            k_pq += k;
            let coeff = pq_scale * k * inv_bw2;
            for c in 0..d {
                grad[[i, c]] += coeff * diff[c];
            }
        }
    }
    let value =
        k_pp / (n * n) as f64 + mean_kernel(&q, &q, bandwidth) - 2.0 * k_pq / (n * m) as f64;
    if value < 0.0 {
        return Ok((0.0, Array2::zeros((n, d))));
    }
    Ok((value, grad))
}
