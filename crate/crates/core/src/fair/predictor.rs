use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    prefixed, prefixed_mut, softmax, ForwardCache, Mode, Network, NetworkParams, NetworkSpec,
    ParamStore,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `h(x, a)`: dense features followed by a one-hot attribute.
    Features,
    /// `h(u, a)`: latent code followed by a learned attribute embedding.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub input_mode: InputMode,
    /// Feature dimension or latent dimension, depending on the mode.
    pub base_dim: usize,
    pub group_count: usize,
    /// Zero in feature mode.
    pub group_embedding_dim: usize,
    pub network: NetworkSpec,
}

/// Shared hidden-layer settings of a predictor network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayers {
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub dropout_prob: f64,
    pub layer_norm: bool,
}

impl HiddenLayers {
    fn network(&self, input_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_dim: self.hidden_dim,
            num_hidden_layers: self.num_hidden_layers,
            output_dim: 2,
            dropout_prob: self.dropout_prob,
            layer_norm: self.layer_norm,
        }
    }
}

impl PredictorSpec {
    pub fn features(feature_dim: usize, group_count: usize, hidden: &HiddenLayers) -> Result<Self> {
        let spec = Self {
            input_mode: InputMode::Features,
            base_dim: feature_dim,
            group_count,
            group_embedding_dim: 0,
            network: hidden.network(feature_dim + group_count),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn latent(
        latent_dim: usize,
        group_count: usize,
        group_embedding_dim: usize,
        hidden: &HiddenLayers,
    ) -> Result<Self> {
        let spec = Self {
            input_mode: InputMode::Latent,
            base_dim: latent_dim,
            group_count,
            group_embedding_dim,
            network: hidden.network(latent_dim + group_embedding_dim),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_dim == 0 || self.group_count == 0 {
            return Err(Error::Config(
                "predictor dimensions must be positive".into(),
            ));
        }
        let expected_input = match self.input_mode {
            InputMode::Features => {
                if self.group_embedding_dim != 0 {
                    return Err(Error::Config(
                        "feature-mode predictors take a one-hot attribute".into(),
                    ));
                }
                self.base_dim + self.group_count
            }
            InputMode::Latent => {
                if self.group_embedding_dim == 0 {
                    return Err(Error::Config(
                        "latent-mode predictors need an embedding".into(),
                    ));
                }
                self.base_dim + self.group_embedding_dim
            }
        };
        if self.network.input_dim != expected_input {
            return Err(Error::Config(format!(
                "predictor input is {}, expected {expected_input}",
                self.network.input_dim
            )));
        }
        if self.network.output_dim != 2 {
            return Err(Error::Config("predictor must output two logits".into()));
        }
        self.network.validate()
    }
}

/// One predictor input row.
#[derive(Debug, Clone, Copy)]
pub enum PredictorInput<'a> {
    Features(&'a [usize]),
    Latent(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGradients {
    pub embedding: Array2<f64>,
    pub network: NetworkParams,
}

impl ParamStore for PredictorGradients {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.as_slice().expect("standard layout"),
        )];
        out.extend(prefixed("network", self.network.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.as_slice_mut().expect("standard layout"),
        )];
        out.extend(prefixed_mut("network", self.network.tensors_mut()));
        out
    }
}

/// A two-logit classifier; the predicted probability is the softmax weight
/// of class 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorHandle {
    pub spec: PredictorSpec,
    /// `group_count x group_embedding_dim`; empty in feature mode.
    pub embedding: Array2<f64>,
    pub network: Network,
}

impl ParamStore for PredictorHandle {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.as_slice().expect("standard layout"),
        )];
        out.extend(prefixed("network", self.network.params.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.as_slice_mut().expect("standard layout"),
        )];
        out.extend(prefixed_mut("network", self.network.params.tensors_mut()));
        out
    }
}

pub struct PredictorCache {
    network: ForwardCache,
    groups: Vec<usize>,
}

pub fn class_one_probability(logits: [f64; 2]) -> f64 {
    softmax(&logits)[1]
}

impl PredictorHandle {
    pub fn new(spec: PredictorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let network = Network::new(
            spec.network.clone(),
            rng::derive_seed(seed, "init-network", 0),
        )?;
        let mut emb_rng = rng::stream(seed, "init-embedding", 0);
        let embedding =
            Array2::from_shape_simple_fn((spec.group_count, spec.group_embedding_dim), || {
                0.01 * emb_rng.sample::<f64, _>(StandardNormal)
            });
        Ok(Self {
            spec,
            embedding,
            network,
        })
    }

    pub fn zero_gradients(&self) -> PredictorGradients {
        PredictorGradients {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            network: NetworkParams::zeros(&self.spec.network),
        }
    }

    fn input_matrix(&self, rows: &[(PredictorInput<'_>, usize)]) -> Result<Array2<f64>> {
        let spec = &self.spec;
        let mut inputs = Array2::zeros((rows.len(), spec.network.input_dim));
        for (i, (input, a)) in rows.iter().enumerate() {
            let a = *a;
            if a >= spec.group_count {
                return Err(Error::Validation(format!(
                    "attribute {a} out of range for {} groups",
                    spec.group_count
                )));
            }
            match (spec.input_mode, input) {
                (InputMode::Features, PredictorInput::Features(x)) => {
                    for &j in x.iter() {
                        if j >= spec.base_dim {
                            return Err(Error::Shape {
                                context: "predictor feature index",
                                expected: spec.base_dim,
                                actual: j,
                            });
                        }
                        inputs[[i, j]] = 1.0;
                    }
                    inputs[[i, spec.base_dim + a]] = 1.0;
                }
                (InputMode::Latent, PredictorInput::Latent(u)) => {
                    if u.len() != spec.base_dim {
                        return Err(Error::Shape {
                            context: "predictor latent dimension",
                            expected: spec.base_dim,
                            actual: u.len(),
                        });
                    }
                    for (c, &v) in u.iter().enumerate() {
                        inputs[[i, c]] = v;
                    }
                    inputs
                        .slice_mut(s![i, spec.base_dim..])
                        .assign(&self.embedding.row(a));
                }
                _ => {
                    return Err(Error::Validation(
                        "predictor input does not match its input mode".into(),
                    ))
                }
            }
        }
        Ok(inputs)
    }

    pub fn forward(
        &self,
        rows: &[(PredictorInput<'_>, usize)],
        mode: Mode,
    ) -> Result<(Array2<f64>, PredictorCache)> {
        let inputs = self.input_matrix(rows)?;
        let (logits, network) = self.network.forward(&inputs, mode)?;
        Ok((
            logits,
            PredictorCache {
                network,
                groups: rows.iter().map(|r| r.1).collect(),
            },
        ))
    }

    pub fn logits(&self, rows: &[(PredictorInput<'_>, usize)]) -> Result<Array2<f64>> {
        Ok(self.forward(rows, Mode::Eval)?.0)
    }

    pub fn backward(
        &self,
        cache: &PredictorCache,
        dlogits: &Array2<f64>,
    ) -> Result<PredictorGradients> {
        let (network, dinput) = self.network.backward(&cache.network, dlogits)?;
        let mut embedding = Array2::zeros(self.embedding.raw_dim());
        if self.spec.input_mode == InputMode::Latent {
            let d = self.spec.base_dim;
            for (i, &a) in cache.groups.iter().enumerate() {
                let mut row = embedding.row_mut(a);
                row += &dinput.slice(s![i, d..]);
            }
        }
        Ok(PredictorGradients { embedding, network })
    }
}
