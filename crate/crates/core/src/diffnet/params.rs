/// A collection of named, flat parameter tensors.
///
/// Gradients are represented by a value of the same type, so optimizers,
/// checkpoints and gradient checks can walk parameters and gradients in
/// lockstep.
pub trait ParamStore {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Prefixes every tensor name of `inner` with `prefix.`.
pub(crate) fn prefixed<'a>(
    prefix: &str,
    inner: Vec<(String, &'a [f64])>,
) -> Vec<(String, &'a [f64])> {
    inner
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    inner: Vec<(String, &'a mut [f64])>,
) -> Vec<(String, &'a mut [f64])> {
    inner
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}
