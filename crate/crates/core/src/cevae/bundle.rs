use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{reparameterize, Cevae, GaussianPosterior};
use crate::data::LabeledSample;
use crate::error::Result;
use crate::rng;

/// Counterfactual world `a'` for one factual sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSample {
    pub a: usize,
    /// Present only when feature draws were requested.
    pub x_cf: Option<Vec<usize>>,
    pub y_cf: u8,
    pub p_y_cf: f64,
}

/// A factual sample, its posterior, the latent draw shared by every
/// counterfactual world, and one entry per `a' != a` in increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualBundle {
    pub sample: LabeledSample,
    pub posterior: GaussianPosterior,
    pub u: Vec<f64>,
    pub counterfactuals: Vec<CounterfactualSample>,
}

pub fn sample_counterfactual_bundle(
    model: &Cevae,
    sample: &LabeledSample,
    seed: u64,
    with_features: bool,
) -> Result<CounterfactualBundle> {
    Ok(
        sample_counterfactual_bundles(model, &[sample], seed, with_features)?
            .pop()
            .expect("one bundle"),
    )
}

/// Bundles for many samples. Every sample draws from its own streams keyed
/// by its id, so a bundle does not depend on which batch it was drawn in.
pub fn sample_counterfactual_bundles(
    model: &Cevae,
    samples: &[&LabeledSample],
    seed: u64,
    with_features: bool,
) -> Result<Vec<CounterfactualBundle>> {
    let k = model.spec.group_count;
    let d = model.spec.latent_dim;
    let posteriors = model.encode_batch(samples)?;
    let latents: Vec<Vec<f64>> = samples
        .iter()
        .zip(&posteriors)
        .map(|(s, post)| reparameterize(post, &mut rng::stream(seed, "bundle-latent", s.id)))
        .collect();

    // one decoder row per (sample, a') pair
    let mut rows = Vec::with_capacity(samples.len() * k.saturating_sub(1));
    for (i, s) in samples.iter().enumerate() {
        for a in (0..k).filter(|&a| a != s.a) {
            rows.push((i, a));
        }
    }
    let mut inputs = Array2::zeros((rows.len(), d));
    for (r, &(i, _)) in rows.iter().enumerate() {
        for (c, v) in latents[i].iter().enumerate() {
            inputs[[r, c]] = *v;
        }
    }
    let groups: Vec<usize> = rows.iter().map(|&(_, a)| a).collect();
    let (px, py) = model.decode_batch(inputs.view(), &groups)?;

    let mut bundles: Vec<CounterfactualBundle> = samples
        .iter()
        .zip(posteriors)
        .zip(latents)
        .map(|((s, posterior), u)| CounterfactualBundle {
            sample: (*s).clone(),
            posterior,
            u,
            counterfactuals: Vec::with_capacity(k.saturating_sub(1)),
        })
        .collect();
    for (r, &(i, a)) in rows.iter().enumerate() {
        let id = samples[i].id;
        let slot = a as u64;
        let mut y_rng = rng::stream(rng::derive_seed(seed, "bundle-outcome", id), "world", slot);
        let p_y_cf = py[r];
        let y_cf = u8::from(y_rng.gen::<f64>() < p_y_cf);
        let x_cf = with_features.then(|| {
            let mut x_rng =
                rng::stream(rng::derive_seed(seed, "bundle-features", id), "world", slot);
            px.row(r)
                .iter()
                .enumerate()
                .filter_map(|(j, &p)| (x_rng.gen::<f64>() < p).then_some(j))
                .collect()
        });
        bundles[i].counterfactuals.push(CounterfactualSample {
            a,
            x_cf,
            y_cf,
            p_y_cf,
        });
    }
    Ok(bundles)
}
