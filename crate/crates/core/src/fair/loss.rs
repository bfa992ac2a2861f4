use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::predictor::{PredictorGradients, PredictorHandle, PredictorInput};
use crate::cevae::CounterfactualBundle;
use crate::diffnet::{softmax_cross_entropy, Mode, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairWeights {
    pub lambda_cf: f64,
    pub lambda_clp: f64,
    /// When false the counterfactual logits inside the pairing term are
    /// treated as constants.
    pub cf_gradients: bool,
}

/// Which latent code of a bundle feeds the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentChoice {
    /// The reparameterized draw stored in the bundle.
    Draw,
    PosteriorMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FairLoss {
    pub total: f64,
    pub factual_ce: f64,
    pub cf_ce: f64,
    pub clp: f64,
}

impl FairLoss {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.factual_ce.is_finite()
            && self.cf_ce.is_finite()
            && self.clp.is_finite()
    }
}

/// Mean squared difference of two logit pairs, zero unless the outcomes agree.
pub fn clp_term(logits_f: [f64; 2], logits_cf: [f64; 2], y_f: u8, y_cf: u8) -> f64 {
    if y_f != y_cf {
        return 0.0;
    }
    0.5 * ((logits_f[0] - logits_cf[0]).powi(2) + (logits_f[1] - logits_cf[1]).powi(2))
}

/// Factual row followed by one row per counterfactual, for every bundle.
pub(crate) fn bundle_rows<'b>(
    predictor: &PredictorHandle,
    bundles: &[&'b CounterfactualBundle],
    choice: LatentChoice,
) -> Result<Vec<(PredictorInput<'b>, usize)>> {
    let k = predictor.spec.group_count;
    let mut rows = Vec::with_capacity(bundles.len() * k);
    for b in bundles {
        check_counterfactuals(b, k)?;
        let u: &[f64] = match choice {
            LatentChoice::Draw => &b.u,
            LatentChoice::PosteriorMean => &b.posterior.mu,
        };
        rows.push((PredictorInput::Latent(u), b.sample.a));
        for c in &b.counterfactuals {
            rows.push((PredictorInput::Latent(u), c.a));
        }
    }
    Ok(rows)
}

/// Every `a' != a` must appear exactly once, in increasing order.
pub(crate) fn check_counterfactuals(
    bundle: &CounterfactualBundle,
    group_count: usize,
) -> Result<()> {
    let mut expected = (0..group_count).filter(|&a| a != bundle.sample.a);
    for c in &bundle.counterfactuals {
        match expected.next() {
            Some(a) if a == c.a => {}
            Some(a) => return Err(Error::MissingCounterfactual(a)),
            None => {
                return Err(Error::Validation(format!(
                    "sample {}: unexpected counterfactual entry for attribute {}",
                    bundle.sample.id, c.a
                )))
            }
        }
    }
    match expected.next() {
        Some(a) => Err(Error::MissingCounterfactual(a)),
        None => Ok(()),
    }
}

fn cross_entropy<'t>(l: [Var<'t>; 2], y: u8) -> Var<'t> {
    Var::log_sum_exp(&l) - l[y as usize]
}

fn logit_pair(logits: &Array2<f64>, row: usize) -> [f64; 2] {
    [logits[[row, 0]], logits[[row, 1]]]
}

/// Loss of one bundle on the tape; returns the components and, per logit
/// row, the gradient of the total.
fn bundle_head(
    logits: &Array2<f64>,
    first_row: usize,
    bundle: &CounterfactualBundle,
    weights: FairWeights,
) -> (FairLoss, Vec<[f64; 2]>) {
    let tape = Tape::new();
    let vars = |row: usize| {
        let pair = logit_pair(logits, row);
        [tape.var(pair[0]), tape.var(pair[1])]
    };

    let factual = vars(first_row);
    let factual_ce = cross_entropy(factual, bundle.sample.y);
    let mut cf_vars = Vec::with_capacity(bundle.counterfactuals.len());
    let mut cf_terms = Vec::new();
    let mut clp_terms = Vec::new();
    for (i, c) in bundle.counterfactuals.iter().enumerate() {
        let l = vars(first_row + 1 + i);
        cf_vars.push(l);
        cf_terms.push(cross_entropy(l, c.y_cf));
        if c.y_cf == bundle.sample.y {
            let paired = if weights.cf_gradients {
                l
            } else {
                [l[0].stop_gradient(), l[1].stop_gradient()]
            };
            clp_terms.push(
                ((factual[0] - paired[0]).square() + (factual[1] - paired[1]).square()).scale(0.5),
            );
        }
    }
    let zero = tape.var(0.0);
    let cf_ce = if cf_terms.is_empty() {
        zero
    } else {
        Var::sum(&cf_terms)
    };
    let clp = if clp_terms.is_empty() {
        zero
    } else {
        Var::sum(&clp_terms)
    };
    let total = factual_ce + cf_ce.scale(weights.lambda_cf) + clp.scale(weights.lambda_clp);

    let grads = tape.gradients(total);
    let mut row_grads = Vec::with_capacity(1 + cf_vars.len());
    row_grads.push([grads.wrt(factual[0]), grads.wrt(factual[1])]);
    for l in cf_vars {
        row_grads.push([grads.wrt(l[0]), grads.wrt(l[1])]);
    }
    let loss = FairLoss {
        total: total.value(),
        factual_ce: factual_ce.value(),
        cf_ce: cf_ce.value(),
        clp: clp.value(),
    };
    (loss, row_grads)
}

/// Eval-mode loss of one bundle.
pub fn fair_loss(
    predictor: &PredictorHandle,
    bundle: &CounterfactualBundle,
    weights: FairWeights,
    choice: LatentChoice,
) -> Result<FairLoss> {
    batch_fair_loss(predictor, &[bundle], weights, choice, Mode::Eval)
}

/// Mean loss over a batch of bundles.
pub fn batch_fair_loss(
    predictor: &PredictorHandle,
    bundles: &[&CounterfactualBundle],
    weights: FairWeights,
    choice: LatentChoice,
    mode: Mode,
) -> Result<FairLoss> {
    Ok(evaluate(predictor, bundles, weights, choice, mode, false)?.0)
}

pub fn fair_loss_and_gradients(
    predictor: &PredictorHandle,
    bundles: &[&CounterfactualBundle],
    weights: FairWeights,
    choice: LatentChoice,
    mode: Mode,
) -> Result<(FairLoss, PredictorGradients)> {
    let (loss, grads) = evaluate(predictor, bundles, weights, choice, mode, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn evaluate(
    predictor: &PredictorHandle,
    bundles: &[&CounterfactualBundle],
    weights: FairWeights,
    choice: LatentChoice,
    mode: Mode,
    with_grad: bool,
) -> Result<(FairLoss, Option<PredictorGradients>)> {
    if bundles.is_empty() {
        return Err(Error::EmptyInput("fair loss batch"));
    }
    let rows = bundle_rows(predictor, bundles, choice)?;
    let (logits, cache) = predictor.forward(&rows, mode)?;
    let n = bundles.len() as f64;
    let mut mean = FairLoss::default();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut row = 0;
    for b in bundles {
        let (loss, grads) = bundle_head(&logits, row, b, weights);
        mean.total += loss.total / n;
        mean.factual_ce += loss.factual_ce / n;
        mean.cf_ce += loss.cf_ce / n;
        mean.clp += loss.clp / n;
        for (i, g) in grads.iter().enumerate() {
            dlogits[[row + i, 0]] = g[0] / n;
            dlogits[[row + i, 1]] = g[1] / n;
        }
        row += grads.len();
    }
    if !with_grad {
        return Ok((mean, None));
    }
    Ok((mean, Some(predictor.backward(&cache, &dlogits)?)))
}

/// Plain factual cross-entropy of feature-mode rows, averaged.
pub(crate) fn cross_entropy_and_gradients(
    predictor: &PredictorHandle,
    rows: &[(PredictorInput<'_>, usize)],
    labels: &[u8],
    mode: Mode,
    with_grad: bool,
) -> Result<(f64, Option<PredictorGradients>)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    let (logits, cache) = predictor.forward(rows, mode)?;
    let n = rows.len() as f64;
    let mut total = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let pair = logit_pair(&logits, i);
        total += softmax_cross_entropy(&pair, y as usize);
        let p1 = super::predictor::class_one_probability(pair);
        // d CE / d logits = softmax - onehot
        dlogits[[i, 0]] = ((1.0 - p1) - f64::from(y == 0)) / n;
        dlogits[[i, 1]] = (p1 - f64::from(y == 1)) / n;
    }
    let grads = if with_grad {
        Some(predictor.backward(&cache, &dlogits)?)
    } else {
        None
    };
    Ok((total / n, grads))
}
