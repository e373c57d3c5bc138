use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{FeatureVector, RangingMode};

/// Fully connected network with ReLU hidden layers and a linear scalar output.
///
/// Parameters live in one flat buffer. Layer `l` maps `dims[l]` inputs to
/// `dims[l + 1]` outputs and occupies `dims[l + 1] * dims[l]` row-major weights
/// followed by `dims[l + 1]` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer dims {dims:?}")));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::InvalidConfig("network output must be scalar".into()));
        }
        let n = dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Uniform He initialization, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for l in 0..net.num_layers() {
            let fan_in = net.dims[l];
            let limit = (6.0 / fan_in as f64).sqrt();
            let (w, _) = net.layer_mut(l);
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let layers = net.num_layers();
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::DimensionMismatch {
                expected: layers,
                found: weights.len().min(biases.len()),
            });
        }
        for l in 0..layers {
            let (w, b) = net.layer_mut(l);
            if weights[l].len() != w.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.len(),
                    found: weights[l].len(),
                });
            }
            if biases[l].len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.len(),
                    found: biases[l].len(),
                });
            }
            w.copy_from_slice(&weights[l]);
            b.copy_from_slice(&biases[l]);
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn offset(&self, layer: usize) -> usize {
        self.dims[..=layer].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Row-major weights and biases of one layer.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.params[start..].split_at(n_out * n_in);
        (w, &rest[..n_out])
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.params[start..].split_at_mut(n_out * n_in);
        (w, &mut rest[..n_out])
    }

    /// Evaluates the network on an already-normalized input.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut scratch = Scratch::new(self);
        self.forward_into(x, &mut scratch)
    }

    fn forward_into(&self, x: &[f64], s: &mut Scratch) -> f64 {
        debug_assert_eq!(x.len(), self.dims[0]);
        s.acts[0].copy_from_slice(x);
        let layers = self.num_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[offset..offset + n_out * n_in];
            let b = &self.params[offset + n_out * n_in..offset + n_out * n_in + n_out];
            offset += n_out * n_in + n_out;
            let (lower, upper) = s.acts.split_at_mut(l + 1);
            let input = &lower[l];
            let out = &mut upper[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wk, xk) in row.iter().zip(input.iter()) {
                    acc += wk * xk;
                }
                out[o] = if l + 1 < layers { acc.max(0.0) } else { acc };
            }
        }
        s.acts[layers][0]
    }

    /// Adds `d(scale * (f(x) - target)^2) / d(params)` to `grad`; returns the
    /// unscaled squared error.
    fn accumulate(&self, x: &[f64], target: f64, scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        let y = self.forward_into(x, s);
        let err = y - target;
        let layers = self.num_layers();
        s.deltas[layers - 1][0] = 2.0 * err * scale;

        let mut end = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let start = end - (n_out * n_in + n_out);
            let (gw, gb) = grad[start..end].split_at_mut(n_out * n_in);
            let input = &s.acts[l];
            let delta = &s.deltas[l];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                if d != 0.0 {
                    for (g, xk) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input.iter()) {
                        *g += d * xk;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[start..start + n_out * n_in];
                let (lower, upper) = s.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (p, wk) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *p += d * wk;
                        }
                    }
                }
                // ReLU derivative, taken as 0 at the kink.
                for (p, a) in prev.iter_mut().zip(s.acts[l].iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            end = start;
        }
        err * err
    }
}

/// Per-layer activation and backprop buffers.
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    pub(crate) fn new(net: &Mlp) -> Self {
        Self {
            acts: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
            deltas: net.dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

/// Per-feature z-score constants folded into a saved model.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Features whose spread falls below this are passed through unscaled.
pub const MIN_STD: f64 = 1e-9;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean/std per column of `rows`.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > MIN_STD {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (x[k] - self.mean[k]) / self.std[k];
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: self.std.len(),
            });
        }
        if !self.mean.iter().all(|v| v.is_finite()) || !self.std.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("normalizer"));
        }
        if self.std.iter().any(|&s| s <= MIN_STD) {
            return Err(Error::InvalidConfig("normalizer std must exceed 1e-9".into()));
        }
        Ok(())
    }
}

/// Learned range-bias estimator `f(x)` for one ranging mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    mode: RangingMode,
    normalizer: Normalizer,
    net: Mlp,
}

/// Hidden layer widths of the default estimator.
pub const HIDDEN_LAYERS: [usize; 2] = [50, 50];

pub fn default_dims(mode: RangingMode) -> Vec<usize> {
    let mut d = vec![mode.feature_len()];
    d.extend_from_slice(&HIDDEN_LAYERS);
    d.push(1);
    d
}

impl MlpModel {
    pub fn new(mode: RangingMode, normalizer: Normalizer, net: Mlp) -> Result<Self> {
        if net.input_dim() != mode.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: mode.feature_len(),
                found: net.input_dim(),
            });
        }
        if normalizer.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                found: normalizer.dim(),
            });
        }
        normalizer.validate()?;
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { mode, normalizer, net })
    }

    /// Model that predicts zero bias everywhere.
    pub fn zero(mode: RangingMode) -> Self {
        let net = Mlp::zeros(&default_dims(mode)).expect("default dims are valid");
        Self {
            mode,
            normalizer: Normalizer::identity(mode.feature_len()),
            net,
        }
    }

    pub fn mode(&self) -> RangingMode {
        self.mode
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn check(&self, x: &FeatureVector) -> Result<()> {
        if x.mode() != self.mode {
            return Err(Error::ModeMismatch {
                expected: self.mode,
                found: x.mode(),
            });
        }
        Ok(())
    }

    /// Predicted bias in meters.
    pub fn forward(&self, x: &FeatureVector) -> Result<f64> {
        self.check(x)?;
        if !x.values().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let mut z = [0.0; 9];
        let z = &mut z[..x.len()];
        self.normalizer.apply(x.values(), z);
        Ok(self.net.predict(z))
    }

    pub(crate) fn normalize(&self, x: &[f64], out: &mut [f64]) {
        self.normalizer.apply(x, out)
    }

    /// Squared error accumulation on a pre-normalized input.
    pub(crate) fn accumulate(&self, z: &[f64], target: f64, scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        self.net.accumulate(z, target, scale, grad, s)
    }
}

/// One labelled example: feature and observed range error `r~ - r`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub feature: FeatureVector,
    pub target_bias: f64,
}

/// Batch MSE and its gradient with respect to every network parameter, in
/// the flat layout of [`Mlp::params`].
pub fn loss_and_gradient(model: &MlpModel, batch: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.net.num_params()];
    let mut scratch = Scratch::new(&model.net);
    let mut z = vec![0.0; model.net.input_dim()];
    let mut loss = 0.0;
    for s in batch {
        model.check(&s.feature)?;
        model.normalize(s.feature.values(), &mut z);
        loss += model.accumulate(&z, s.target_bias, scale, &mut grad, &mut scratch);
    }
    Ok((loss * scale, grad))
}

/// `r* = r~ - f(x)`.
pub fn compensate(
    measurement: &crate::measurement::RangeMeasurement,
    model: &MlpModel,
    feature: &FeatureVector,
) -> Result<f64> {
    if measurement.mode != model.mode {
        return Err(Error::ModeMismatch {
            expected: model.mode,
            found: measurement.mode,
        });
    }
    Ok(measurement.value - model.forward(feature)?)
}
