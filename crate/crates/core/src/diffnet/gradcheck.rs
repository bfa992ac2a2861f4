//! Central finite differences for verifying analytic gradients.

use super::params::ParamStore;

/// Scale below which gradients are compared absolutely rather than
/// relatively; keeps near-zero entries from amplifying rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// Central-difference gradient of `loss` with respect to every scalar in
/// `params`, in [`ParamStore::tensors`] order.
pub fn numerical_gradient<P, F>(params: &P, h: f64, mut loss: F) -> Vec<Vec<f64>>
where
    P: ParamStore + Clone,
    F: FnMut(&P) -> f64,
{
    let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    let mut probe = params.clone();
    for (ti, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, gk) in g.iter_mut().enumerate() {
            let original = probe.tensors()[ti].1[k];
            probe.tensors_mut()[ti].1[k] = original + h;
            let plus = loss(&probe);
            probe.tensors_mut()[ti].1[k] = original - h;
            let minus = loss(&probe);
            probe.tensors_mut()[ti].1[k] = original;
            *gk = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error<P: ParamStore>(analytic: &P, numeric: &[Vec<f64>]) -> f64 {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .flat_map(|((_, a), n)| a.iter().zip(n.iter()).map(|(&a, &n)| relative_error(a, n)))
        .fold(0.0, f64::max)
}
