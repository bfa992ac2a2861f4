use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mmd::{mmd_sq_with_grad, Bandwidth};
use crate::data::LabeledSample;
use crate::diffnet::{
    bce_from_logit, prefixed, prefixed_mut, sigmoid, softplus, Mode, Network, NetworkParams,
    NetworkSpec, ParamStore,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_mmd: f64,
    pub lambda_mmd_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1000.0,
            lambda_y: 10.0,
            lambda_mmd: 10000.0,
            lambda_mmd_a: 1000.0,
        }
    }
}

/// Architecture knobs shared by the encoder and both decoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CevaeArchitecture {
    pub latent_dim: usize,
    pub group_embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub dropout_prob: f64,
    pub layer_norm: bool,
}

impl Default for CevaeArchitecture {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            group_embedding_dim: 64,
            hidden_dim: 128,
            num_hidden_layers: 1,
            dropout_prob: 0.25,
            layer_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CevaeSpec {
    pub feature_dim: usize,
    pub group_count: usize,
    pub latent_dim: usize,
    pub group_embedding_dim: usize,
    /// `(x, onehot(a)) -> (mu, raw sigma)`
    pub encoder: NetworkSpec,
    /// `(u, embed(a)) -> feature logits`
    pub decoder_x: NetworkSpec,
    /// `(u, embed(a)) -> outcome logit`
    pub decoder_y: NetworkSpec,
    pub weights: LossWeights,
    pub bandwidth: Bandwidth,
}

impl CevaeSpec {
    pub fn new(
        feature_dim: usize,
        group_count: usize,
        arch: &CevaeArchitecture,
        weights: LossWeights,
        bandwidth: Bandwidth,
    ) -> Result<Self> {
        let net = |input_dim, output_dim| NetworkSpec {
            input_dim,
            hidden_dim: arch.hidden_dim,
            num_hidden_layers: arch.num_hidden_layers,
            output_dim,
            dropout_prob: arch.dropout_prob,
            layer_norm: arch.layer_norm,
        };
        let latent_in = arch.latent_dim + arch.group_embedding_dim;
        let spec = Self {
            feature_dim,
            group_count,
            latent_dim: arch.latent_dim,
            group_embedding_dim: arch.group_embedding_dim,
            encoder: net(feature_dim + group_count, 2 * arch.latent_dim),
            decoder_x: net(latent_in, feature_dim),
            decoder_y: net(latent_in, 1),
            weights,
            bandwidth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.group_count == 0
            || self.latent_dim == 0
            || self.group_embedding_dim == 0
        {
            return Err(Error::Config("cevae dimensions must be positive".into()));
        }
        let w = &self.weights;
        if [w.lambda_x, w.lambda_y, w.lambda_mmd, w.lambda_mmd_a]
            .iter()
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::Config(
                "cevae loss weights must be nonnegative".into(),
            ));
        }
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(Error::Config("fixed bandwidth must be positive".into()));
            }
        }
        let latent_in = self.latent_dim + self.group_embedding_dim;
        let checks = [
            (
                "encoder input",
                self.encoder.input_dim,
                self.feature_dim + self.group_count,
            ),
            (
                "encoder output",
                self.encoder.output_dim,
                2 * self.latent_dim,
            ),
            ("decoder_x input", self.decoder_x.input_dim, latent_in),
            (
                "decoder_x output",
                self.decoder_x.output_dim,
                self.feature_dim,
            ),
            ("decoder_y input", self.decoder_y.input_dim, latent_in),
            ("decoder_y output", self.decoder_y.output_dim, 1),
        ];
        for (name, actual, expected) in checks {
            if actual != expected {
                return Err(Error::Config(format!(
                    "{name} is {actual}, expected {expected}"
                )));
            }
        }
        self.encoder.validate()?;
        self.decoder_x.validate()?;
        self.decoder_y.validate()
    }
}

/// Diagonal Gaussian `q(u | x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    /// Closed-form `KL(q || N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| s * s + m * m - 1.0 - 2.0 * s.ln())
            .sum::<f64>()
    }
}

pub fn gaussian_kl(posterior: &GaussianPosterior) -> f64 {
    posterior.kl_to_standard_normal()
}

/// Reparameterized draw `mu + sigma * eps`, `eps ~ N(0, I)` from `seed`.
pub fn sample_latent(posterior: &GaussianPosterior, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    reparameterize(posterior, &mut rng)
}

pub(crate) fn reparameterize<R: Rng>(posterior: &GaussianPosterior, rng: &mut R) -> Vec<f64> {
    posterior
        .mu
        .iter()
        .zip(&posterior.sigma)
        .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Loss components of one evaluation; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CevaeLoss {
    pub total: f64,
    pub recon_x: f64,
    pub recon_y: f64,
    pub mmd: f64,
    pub mmd_per_group: f64,
}

impl CevaeLoss {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.recon_x,
            self.recon_y,
            self.mmd,
            self.mmd_per_group,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Gradient of the loss, tensor-for-tensor parallel to [`Cevae`].
#[derive(Debug, Clone, PartialEq)]
pub struct CevaeGradients {
    pub encoder: NetworkParams,
    pub embedding: Array2<f64>,
    pub decoder_x: NetworkParams,
    pub decoder_y: NetworkParams,
}

impl ParamStore for CevaeGradients {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = prefixed("encoder", self.encoder.tensors());
        out.push((
            "embedding".into(),
            self.embedding.as_slice().expect("standard layout"),
        ));
        out.extend(prefixed("decoder_x", self.decoder_x.tensors()));
        out.extend(prefixed("decoder_y", self.decoder_y.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut("encoder", self.encoder.tensors_mut());
        out.push((
            "embedding".into(),
            self.embedding.as_slice_mut().expect("standard layout"),
        ));
        out.extend(prefixed_mut("decoder_x", self.decoder_x.tensors_mut()));
        out.extend(prefixed_mut("decoder_y", self.decoder_y.tensors_mut()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cevae {
    pub spec: CevaeSpec,
    pub encoder: Network,
    /// `group_count x group_embedding_dim`
    pub embedding: Array2<f64>,
    pub decoder_x: Network,
    pub decoder_y: Network,
}

impl ParamStore for Cevae {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = prefixed("encoder", self.encoder.params.tensors());
        out.push((
            "embedding".into(),
            self.embedding.as_slice().expect("standard layout"),
        ));
        out.extend(prefixed("decoder_x", self.decoder_x.params.tensors()));
        out.extend(prefixed("decoder_y", self.decoder_y.params.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut("encoder", self.encoder.params.tensors_mut());
        out.push((
            "embedding".into(),
            self.embedding.as_slice_mut().expect("standard layout"),
        ));
        out.extend(prefixed_mut(
            "decoder_x",
            self.decoder_x.params.tensors_mut(),
        ));
        out.extend(prefixed_mut(
            "decoder_y",
            self.decoder_y.params.tensors_mut(),
        ));
        out
    }
}

/// Dense `(x, onehot(a))` rows for the encoder.
pub(crate) fn encoder_inputs(
    samples: &[&LabeledSample],
    feature_dim: usize,
    group_count: usize,
) -> Array2<f64> {
    let mut inputs = Array2::zeros((samples.len(), feature_dim + group_count));
    for (i, s) in samples.iter().enumerate() {
        for &j in &s.x {
            inputs[[i, j]] = 1.0;
        }
        inputs[[i, feature_dim + s.a]] = 1.0;
    }
    inputs
}

struct EncoderOutput {
    mu: Array2<f64>,
    raw_sigma: Array2<f64>,
    sigma: Array2<f64>,
}

impl Cevae {
    pub fn new(spec: CevaeSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let encoder = Network::new(
            spec.encoder.clone(),
            rng::derive_seed(seed, "init-encoder", 0),
        )?;
        let decoder_x = Network::new(
            spec.decoder_x.clone(),
            rng::derive_seed(seed, "init-decoder-x", 0),
        )?;
        let decoder_y = Network::new(
            spec.decoder_y.clone(),
            rng::derive_seed(seed, "init-decoder-y", 0),
        )?;
        let mut emb_rng = rng::stream(seed, "init-embedding", 0);
        let embedding =
            Array2::from_shape_simple_fn((spec.group_count, spec.group_embedding_dim), || {
                0.01 * emb_rng.sample::<f64, _>(StandardNormal)
            });
        Ok(Self {
            spec,
            encoder,
            embedding,
            decoder_x,
            decoder_y,
        })
    }

    pub fn zero_gradients(&self) -> CevaeGradients {
        CevaeGradients {
            encoder: NetworkParams::zeros(&self.spec.encoder),
            embedding: Array2::zeros(self.embedding.raw_dim()),
            decoder_x: NetworkParams::zeros(&self.spec.decoder_x),
            decoder_y: NetworkParams::zeros(&self.spec.decoder_y),
        }
    }

    fn check_sample(&self, sample: &LabeledSample) -> Result<()> {
        sample.validate(self.spec.feature_dim, self.spec.group_count)
    }

    fn run_encoder(
        &self,
        inputs: &Array2<f64>,
        mode: Mode,
    ) -> Result<(EncoderOutput, crate::diffnet::ForwardCache)> {
        let d = self.spec.latent_dim;
        let (out, cache) = self.encoder.forward(inputs, mode)?;
        let mu = out.slice(s![.., ..d]).to_owned();
        let raw_sigma = out.slice(s![.., d..]).to_owned();
        let sigma = raw_sigma.mapv(softplus);
        Ok((
            EncoderOutput {
                mu,
                raw_sigma,
                sigma,
            },
            cache,
        ))
    }

    pub fn encode(&self, sample: &LabeledSample) -> Result<GaussianPosterior> {
        Ok(self.encode_batch(&[sample])?.pop().expect("one posterior"))
    }

    /// Deterministic (eval-mode) posteriors for a batch.
    pub fn encode_batch(&self, samples: &[&LabeledSample]) -> Result<Vec<GaussianPosterior>> {
        for s in samples {
            self.check_sample(s)?;
        }
        let inputs = encoder_inputs(samples, self.spec.feature_dim, self.spec.group_count);
        let (enc, _) = self.run_encoder(&inputs, Mode::Eval)?;
        Ok(enc
            .mu
            .rows()
            .into_iter()
            .zip(enc.sigma.rows())
            .map(|(m, s)| GaussianPosterior {
                mu: m.to_vec(),
                sigma: s.to_vec(),
            })
            .collect())
    }

    fn decoder_inputs(
        &self,
        latents: ArrayView2<'_, f64>,
        groups: &[usize],
    ) -> Result<Array2<f64>> {
        let d = self.spec.latent_dim;
        if latents.ncols() != d {
            return Err(Error::Shape {
                context: "latent dimension",
                expected: d,
                actual: latents.ncols(),
            });
        }
        let mut inputs = Array2::zeros((latents.nrows(), d + self.spec.group_embedding_dim));
        for (i, &a) in groups.iter().enumerate() {
            if a >= self.spec.group_count {
                return Err(Error::Validation(format!(
                    "attribute {a} out of range for {} groups",
                    self.spec.group_count
                )));
            }
            inputs.slice_mut(s![i, ..d]).assign(&latents.row(i));
            inputs.slice_mut(s![i, d..]).assign(&self.embedding.row(a));
        }
        Ok(inputs)
    }

    /// Eval-mode decoder probabilities: `(p(x | u, a)` rows, `p(y = 1 | u, a))`.
    pub fn decode_batch(
        &self,
        latents: ArrayView2<'_, f64>,
        groups: &[usize],
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let inputs = self.decoder_inputs(latents, groups)?;
        let (logits_x, _) = self.decoder_x.forward(&inputs, Mode::Eval)?;
        let (logits_y, _) = self.decoder_y.forward(&inputs, Mode::Eval)?;
        Ok((logits_x.mapv(sigmoid), logits_y.column(0).mapv(sigmoid)))
    }

    pub fn decode_x(&self, u: &[f64], a: usize) -> Result<Vec<f64>> {
        let latents =
            ArrayView2::from_shape((1, u.len()), u).map_err(|_| Error::EmptyInput("latent"))?;
        Ok(self.decode_batch(latents, &[a])?.0.row(0).to_vec())
    }

    pub fn decode_y(&self, u: &[f64], a: usize) -> Result<f64> {
        let latents =
            ArrayView2::from_shape((1, u.len()), u).map_err(|_| Error::EmptyInput("latent"))?;
        Ok(self.decode_batch(latents, &[a])?.1[0])
    }

    /// Weighted loss on a batch: one latent draw per element, pooled and
    /// per-group MMD against fresh prior draws. `train` enables dropout.
    pub fn loss(&self, batch: &[&LabeledSample], seed: u64, train: bool) -> Result<CevaeLoss> {
        Ok(self.evaluate(batch, seed, train, false)?.0)
    }

    pub fn loss_and_gradients(
        &self,
        batch: &[&LabeledSample],
        seed: u64,
    ) -> Result<(CevaeLoss, CevaeGradients)> {
        let (loss, grads) = self.evaluate(batch, seed, true, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }

    fn evaluate(
        &self,
        batch: &[&LabeledSample],
        seed: u64,
        train: bool,
        with_grad: bool,
    ) -> Result<(CevaeLoss, Option<CevaeGradients>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("cevae loss batch"));
        }
        for s in batch {
            self.check_sample(s)?;
        }
        let spec = &self.spec;
        let (n, d, m) = (batch.len(), spec.latent_dim, spec.feature_dim);
        let w = spec.weights;
        let mode = |label: &str| {
            if train {
                Mode::Train {
                    seed: rng::derive_seed(seed, label, 0),
                }
            } else {
                Mode::Eval
            }
        };

        let enc_in = encoder_inputs(batch, m, spec.group_count);
        let (enc, enc_cache) = self.run_encoder(&enc_in, mode("dropout-encoder"))?;
        let mut eps_rng = rng::stream(seed, "reparameterize", 0);
        let eps = Array2::from_shape_simple_fn((n, d), || eps_rng.sample::<f64, _>(StandardNormal));
        let latents = &enc.mu + &(&enc.sigma * &eps);

        let groups: Vec<usize> = batch.iter().map(|s| s.a).collect();
        let dec_in = self.decoder_inputs(latents.view(), &groups)?;
        let (logits_x, cache_x) = self.decoder_x.forward(&dec_in, mode("dropout-decoder-x"))?;
        let (logits_y, cache_y) = self.decoder_y.forward(&dec_in, mode("dropout-decoder-y"))?;

        let mut recon_x = 0.0;
        let mut dlogits_x = Array2::zeros((n, m));
        for (i, s) in batch.iter().enumerate() {
            let mut active = s.x.iter().peekable();
            for j in 0..m {
                let target = if active.peek() == Some(&&j) {
                    active.next();
                    1.0
                } else {
                    0.0
                };
                let (l, g) = bce_from_logit(logits_x[[i, j]], target);
                recon_x += l;
                dlogits_x[[i, j]] = g;
            }
        }
        recon_x /= (n * m) as f64;
        dlogits_x *= w.lambda_x / (n * m) as f64;

        let mut recon_y = 0.0;
        let mut dlogits_y = Array2::zeros((n, 1));
        for (i, s) in batch.iter().enumerate() {
            let (l, g) = bce_from_logit(logits_y[[i, 0]], s.y as f64);
            recon_y += l;
            dlogits_y[[i, 0]] = g * w.lambda_y / n as f64;
        }
        recon_y /= n as f64;

        let mut prior_rng = rng::stream(seed, "prior", 0);
        let prior =
            Array2::from_shape_simple_fn((n, d), || prior_rng.sample::<f64, _>(StandardNormal));
        let bandwidth = spec.bandwidth.resolve(&[latents.view(), prior.view()]);

        let mut dlatents = Array2::<f64>::zeros((n, d));
        let (mmd, mmd_grad) = mmd_sq_with_grad(latents.view(), prior.view(), bandwidth)?;
        dlatents.scaled_add(w.lambda_mmd, &mmd_grad);

        let mut mmd_per_group = 0.0;
        for k in 0..spec.group_count {
            let members: Vec<usize> = (0..n).filter(|&i| groups[i] == k).collect();
            if members.len() < 2 {
                continue;
            }
            let subset = latents.select(Axis(0), &members);
            let (v, g) = mmd_sq_with_grad(subset.view(), prior.view(), bandwidth)?;
            mmd_per_group += v;
            for (row, &i) in members.iter().enumerate() {
                dlatents.row_mut(i).scaled_add(w.lambda_mmd_a, &g.row(row));
            }
        }

        let total = w.lambda_x * recon_x
            + w.lambda_y * recon_y
            + w.lambda_mmd * mmd
            + w.lambda_mmd_a * mmd_per_group;
        let loss = CevaeLoss {
            total,
            recon_x,
            recon_y,
            mmd,
            mmd_per_group,
        };
        if !with_grad {
            return Ok((loss, None));
        }

        let (grad_dx, din_x) = self.decoder_x.backward(&cache_x, &dlogits_x)?;
        let (grad_dy, din_y) = self.decoder_y.backward(&cache_y, &dlogits_y)?;
        let din = din_x + din_y;
        dlatents += &din.slice(s![.., ..d]);
        let mut grad_emb = Array2::zeros(self.embedding.raw_dim());
        for (i, &a) in groups.iter().enumerate() {
            let mut row = grad_emb.row_mut(a);
            row += &din.slice(s![i, d..]);
        }
        let dsigma = &dlatents * &eps;
        let draw = &dsigma * &enc.raw_sigma.mapv(sigmoid);
        let mut denc = Array2::zeros((n, 2 * d));
        denc.slice_mut(s![.., ..d]).assign(&dlatents);
        denc.slice_mut(s![.., d..]).assign(&draw);
        let (grad_enc, _) = self.encoder.backward(&enc_cache, &denc)?;

        Ok((
            loss,
            Some(CevaeGradients {
                encoder: grad_enc,
                embedding: grad_emb,
                decoder_x: grad_dx,
                decoder_y: grad_dy,
            }),
        ))
    }
}
