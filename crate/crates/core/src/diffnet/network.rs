use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Fully-connected ReLU network:
/// `num_hidden_layers` x (affine -> [layer norm] -> ReLU -> dropout) -> affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub output_dim: usize,
    pub dropout_prob: f64,
    pub layer_norm: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(
                "network dimensions must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!(
                "dropout_prob {} outside [0, 1)",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.num_hidden_layers {
            dims.push((fan_in, self.hidden_dim));
            fan_in = self.hidden_dim;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<LayerNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| Layer {
                weight: Array2::zeros((fan_in, fan_out)),
                bias: Array1::zeros(fan_out),
                norm: (spec.layer_norm && i < last).then(|| LayerNorm {
                    gain: Array1::zeros(fan_out),
                    shift: Array1::zeros(fan_out),
                }),
            })
            .collect();
        Self { layers }
    }

    /// He-normal hidden weights, `1/fan_in` variance on the output layer,
    /// zero biases, unit gains.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut params = Self::zeros(spec);
        let mut rng = rng::seeded(seed);
        let last = params.layers.len() - 1;
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let fan_in = layer.weight.nrows() as f64;
            let std = if i < last {
                (2.0 / fan_in).sqrt()
            } else {
                (1.0 / fan_in).sqrt()
            };
            layer
                .weight
                .mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
            if let Some(norm) = layer.norm.as_mut() {
                norm.gain.fill(1.0);
            }
        }
        params
    }

    fn signature(&self) -> Vec<(usize, usize, bool)> {
        self.layers
            .iter()
            .map(|l| (l.weight.nrows(), l.weight.ncols(), l.norm.is_some()))
            .collect()
    }
}

impl ParamStore for NetworkParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{i}.weight"),
                l.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("layer{i}.bias"),
                l.bias.as_slice().expect("standard layout"),
            ));
            if let Some(n) = &l.norm {
                out.push((
                    format!("layer{i}.gain"),
                    n.gain.as_slice().expect("standard layout"),
                ));
                out.push((
                    format!("layer{i}.shift"),
                    n.shift.as_slice().expect("standard layout"),
                ));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((
                format!("layer{i}.weight"),
                l.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("layer{i}.bias"),
                l.bias.as_slice_mut().expect("standard layout"),
            ));
            if let Some(n) = l.norm.as_mut() {
                out.push((
                    format!("layer{i}.gain"),
                    n.gain.as_slice_mut().expect("standard layout"),
                ));
                out.push((
                    format!("layer{i}.shift"),
                    n.shift.as_slice_mut().expect("standard layout"),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks drawn from the given seed.
    Train {
        seed: u64,
    },
    Eval,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    normalized: Option<(Array2<f64>, Array1<f64>)>,
    activated: Option<Array2<f64>>,
    dropout_mask: Option<Array2<f64>>,
}

/// Activations recorded by [`Network::forward`], consumed by
/// [`Network::backward`]. A cache may be replayed any number of times.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    signature: Vec<(usize, usize, bool)>,
    batch: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
}

impl Network {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = NetworkParams::init(&spec, seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: NetworkParams) -> Result<Self> {
        spec.validate()?;
        if NetworkParams::zeros(&spec).signature() != params.signature() {
            return Err(Error::Validation(
                "parameter shapes do not match network spec".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    pub fn forward(&self, inputs: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::Shape {
                context: "network input columns",
                expected: self.spec.input_dim,
                actual: inputs.ncols(),
            });
        }
        let p = self.spec.dropout_prob;
        let mut mask_rng = match mode {
            Mode::Train { seed } if p > 0.0 => Some(rng::seeded(seed)),
            _ => None,
        };
        let last = self.params.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.params.layers.len());
        let mut h = inputs.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight) + &layer.bias;
            if i == last {
                caches.push(LayerCache {
                    input: h,
                    normalized: None,
                    activated: None,
                    dropout_mask: None,
                });
                h = z;
                break;
            }
            let normalized = layer.norm.as_ref().map(|norm| {
                let (xhat, inv_std) = layer_norm(&z);
                z = &xhat * &norm.gain + &norm.shift;
                (xhat, inv_std)
            });
            let activated = z.mapv(|v| v.max(0.0));
            let dropout_mask = mask_rng.as_mut().map(|rng| {
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_simple_fn(activated.raw_dim(), || {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                })
            });
            let out = match &dropout_mask {
                Some(mask) => &activated * mask,
                None => activated.clone(),
            };
            caches.push(LayerCache {
                input: h,
                normalized,
                activated: Some(activated),
                dropout_mask,
            });
            h = out;
        }
        let cache = ForwardCache {
            signature: self.params.signature(),
            batch: inputs.nrows(),
            layers: caches,
        };
        Ok((h, cache))
    }

    /// Reverse pass. Returns parameter gradients and the gradient with
    /// respect to the network inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Array2<f64>,
    ) -> Result<(NetworkParams, Array2<f64>)> {
        if cache.signature != self.params.signature()
            || cache.layers.len() != self.params.layers.len()
        {
            return Err(Error::StaleCache(
                "cache was produced by a different network",
            ));
        }
        if output_grad.nrows() != cache.batch {
            return Err(Error::Shape {
                context: "output gradient rows",
                expected: cache.batch,
                actual: output_grad.nrows(),
            });
        }
        if output_grad.ncols() != self.spec.output_dim {
            return Err(Error::Shape {
                context: "output gradient columns",
                expected: self.spec.output_dim,
                actual: output_grad.ncols(),
            });
        }
        let mut grads = NetworkParams::zeros(&self.spec);
        let mut g = output_grad.clone();
        for i in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[i];
            let c = &cache.layers[i];
            if let Some(activated) = &c.activated {
                if let Some(mask) = &c.dropout_mask {
                    g *= mask;
                }
                g.zip_mut_with(activated, |gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
                if let (Some(norm), Some((xhat, inv_std))) = (&layer.norm, &c.normalized) {
                    let gnorm = grads.layers[i].norm.as_mut().expect("norm grads allocated");
                    gnorm.gain = (&g * xhat).sum_axis(Axis(0));
                    gnorm.shift = g.sum_axis(Axis(0));
                    let dxhat = &g * &norm.gain;
                    g = layer_norm_backward(&dxhat, xhat, inv_std);
                }
            }
            grads.layers[i].weight = c.input.t().dot(&g).as_standard_layout().into_owned();
            grads.layers[i].bias = g.sum_axis(Axis(0));
            g = g.dot(&layer.weight.t());
        }
        Ok((grads, g))
    }
}

fn layer_norm(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = z.ncols() as f64;
    let mut xhat = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * s);
        *inv = s;
    }
    (xhat, inv_std)
}

fn layer_norm_backward(
    dxhat: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
) -> Array2<f64> {
    let n = dxhat.ncols() as f64;
    let mut dz = Array2::zeros(dxhat.raw_dim());
    for r in 0..dxhat.nrows() {
        let d = dxhat.row(r);
        let x = xhat.row(r);
        let sum_d = d.sum();
        let sum_dx = d.dot(&x);
        let s = inv_std[r];
        for c in 0..dxhat.ncols() {
            dz[[r, c]] = s * (d[c] - sum_d / n - x[c] * sum_dx / n);
        }
    }
    dz
}
