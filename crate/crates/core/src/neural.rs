//! Small dense networks with a max-pooled point-set encoder.
//!
//! A [`MlpModel`] maps a set of tagged points plus a vector of extra
//! features to an output vector:
//!
//! ```text
//! latent = max over points of per_point_mlp(point)
//! output = head_mlp(concat(latent, extras))
//! ```
//!
//! Gradients are computed by hand. Parameters are addressed as one flat
//! vector (encoder layers first, then head layers; weights row-major then
//! biases per layer), which is what [`AdamState`], the CEM trainer and the
//! checkpoint format operate on.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;
use crate::{Error, Result};

/// xyz followed by a one-hot source tag.
pub const POINT_DIM: usize = 6;
pub type PointFeature = [f64; POINT_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (1.0 / inputs.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let biases = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            biases,
            activation,
        }
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(Error::Shape(format!(
                "layer {inputs}->{outputs} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            biases,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn zero_params(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = 0.0);
        self.biases.iter_mut().for_each(|b| *b = 0.0);
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.biases))
        {
            let z = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
            *o = self.activation.apply(z);
        }
    }

    /// Backpropagates `dy` (gradient w.r.t. this layer's output `y`, given
    /// input `x`). Accumulates into `grads` (weights then biases) and writes
    /// the input gradient to `dx` if given.
    fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grads: &mut [f64], dx: Option<&mut [f64]>) {
        let (gw, gb) = grads.split_at_mut(self.weights.len());
        let mut dx = dx;
        if let Some(dx) = dx.as_deref_mut() {
            dx.iter_mut().for_each(|v| *v = 0.0);
        }
        for o in 0..self.outputs {
            let dz = dy[o] * self.activation.derivative_from_output(y[o]);
            if dz == 0.0 {
                continue;
            }
            gb[o] += dz;
            let row = o * self.inputs;
            for (g, xi) in gw[row..row + self.inputs].iter_mut().zip(x) {
                *g += dz * xi;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (d, w) in dx.iter_mut().zip(&self.weights[row..row + self.inputs]) {
                    *d += dz * w;
                }
            }
        }
    }

    fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.biases);
    }

    fn set_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.biases.copy_from_slice(&src[nw..nw + self.outputs]);
        nw + self.outputs
    }
}

/// Shared per-point MLP followed by channel-wise max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoder {
    layers: Vec<DenseLayer>,
}

impl SetEncoder {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        check_chain(&layers, POINT_DIM, "encoder")?;
        if layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }
}

fn check_chain(layers: &[DenseLayer], input: usize, what: &str) -> Result<()> {
    let mut dim = input;
    for (i, l) in layers.iter().enumerate() {
        if l.inputs != dim {
            return Err(Error::Shape(format!(
                "{what} layer {i} expects {} inputs, previous width is {dim}",
                l.inputs
            )));
        }
        dim = l.outputs;
    }
    Ok(())
}

/// Layer widths and activations for building a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-point layer widths; empty means no point-set input.
    pub encoder: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub output_dim: usize,
    pub extra_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    encoder: Option<SetEncoder>,
    head: Vec<DenseLayer>,
    extra_dim: usize,
}

impl MlpModel {
    pub fn new(encoder: Option<SetEncoder>, head: Vec<DenseLayer>, extra_dim: usize) -> Result<Self> {
        let latent = encoder.as_ref().map_or(0, SetEncoder::output_dim);
        if head.is_empty() {
            return Err(Error::Shape("head needs at least one layer".into()));
        }
        check_chain(&head, latent + extra_dim, "head")?;
        Ok(Self {
            encoder,
            head,
            extra_dim,
        })
    }

    pub fn from_spec(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[0x6d6f_6465]);
        let encoder = if spec.encoder.is_empty() {
            None
        } else {
            let mut dim = POINT_DIM;
            let layers = spec
                .encoder
                .iter()
                .map(|&w| {
                    let l = DenseLayer::init(dim, w, spec.hidden_activation, &mut rng);
                    dim = w;
                    l
                })
                .collect();
            Some(SetEncoder::new(layers)?)
        };
        let mut dim = encoder.as_ref().map_or(0, SetEncoder::output_dim) + spec.extra_dim;
        let mut head = Vec::new();
        for &w in &spec.head_hidden {
            head.push(DenseLayer::init(dim, w, spec.hidden_activation, &mut rng));
            dim = w;
        }
        head.push(DenseLayer::init(dim, spec.output_dim, spec.output_activation, &mut rng));
        Self::new(encoder, head, spec.extra_dim)
    }

    /// Copy of the model taking `added` more extra inputs, appended after
    /// the existing ones with zero weights, so outputs are unchanged.
    pub fn with_added_extras(&self, added: usize) -> Result<Self> {
        let first = &self.head[0];
        let (n_in, n_out) = (first.inputs, first.outputs);
        let mut weights = Vec::with_capacity((n_in + added) * n_out);
        for row in first.weights.chunks_exact(n_in) {
            weights.extend_from_slice(row);
            weights.extend(std::iter::repeat_n(0.0, added));
        }
        let mut head = self.head.clone();
        head[0] = DenseLayer::from_parts(n_in + added, n_out, weights, first.biases.clone(), first.activation)?;
        Self::new(self.encoder.clone(), head, self.extra_dim + added)
    }

    pub fn encoder(&self) -> Option<&SetEncoder> {
        self.encoder.as_ref()
    }

    pub fn head(&self) -> &[DenseLayer] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.head
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.as_ref().map_or(0, SetEncoder::output_dim)
    }

    pub fn extra_dim(&self) -> usize {
        self.extra_dim
    }

    pub fn output_dim(&self) -> usize {
        self.head.last().map_or(0, |l| l.outputs)
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder
            .iter()
            .flat_map(|e| e.layers.iter())
            .chain(self.head.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.encoder
            .iter_mut()
            .flat_map(|e| e.layers.iter_mut())
            .chain(self.head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            l.params_into(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            offset += l.set_params(&params[offset..]);
        }
        Ok(())
    }

    fn check_inputs(&self, points: &[PointFeature], extras: &[f64]) -> Result<()> {
        if extras.len() != self.extra_dim {
            return Err(Error::Shape(format!(
                "expected {} extra features, got {}",
                self.extra_dim,
                extras.len()
            )));
        }
        if self.encoder.is_some() && points.is_empty() {
            return Err(Error::Shape("encoder needs at least one point".into()));
        }
        Ok(())
    }

    /// Max-pooled latent of a point set (empty if there is no encoder).
    pub fn encode(&self, points: &[PointFeature]) -> Vec<f64> {
        let Some(enc) = &self.encoder else {
            return Vec::new();
        };
        let mut latent = vec![f64::NEG_INFINITY; enc.output_dim()];
        let max_width = enc.layers.iter().map(|l| l.outputs).max().unwrap_or(0);
        let mut cur: Vec<f64> = Vec::with_capacity(max_width.max(POINT_DIM));
        let mut next: Vec<f64> = Vec::with_capacity(max_width);
        for p in points {
            cur.clear();
            cur.extend_from_slice(p);
            for l in &enc.layers {
                next.resize(l.outputs, 0.0);
                l.forward_into(&cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            for (m, v) in latent.iter_mut().zip(&cur) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        latent
    }

    /// Head applied to a precomputed latent.
    pub fn head_forward(&self, latent: &[f64], extras: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = latent.iter().chain(extras).copied().collect();
        for l in &self.head {
            let mut y = vec![0.0; l.outputs];
            l.forward_into(&x, &mut y);
            x = y;
        }
        x
    }

    pub fn predict(&self, points: &[PointFeature], extras: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(points, extras)?;
        Ok(self.head_forward(&self.encode(points), extras))
    }

    /// Forward pass keeping every activation for [`MlpModel::backward`].
    pub fn forward(&self, points: &[PointFeature], extras: &[f64]) -> Result<ForwardCache> {
        self.check_inputs(points, extras)?;
        let mut enc_acts = Vec::new();
        let mut argmax = Vec::new();
        let mut head_input: Vec<f64> = Vec::new();
        if let Some(enc) = &self.encoder {
            let n = points.len();
            let mut input: Vec<f64> = points.iter().flatten().copied().collect();
            enc_acts.push(input.clone());
            for l in &enc.layers {
                let mut out = vec![0.0; n * l.outputs];
                for (x, y) in input
                    .chunks_exact(l.inputs)
                    .zip(out.chunks_exact_mut(l.outputs))
                {
                    l.forward_into(x, y);
                }
                enc_acts.push(out.clone());
                input = out;
            }
            let width = enc.output_dim();
            argmax = vec![0usize; width];
            head_input = input[..width].to_vec();
            for p in 1..n {
                let row = &input[p * width..(p + 1) * width];
                for c in 0..width {
                    if row[c] > head_input[c] {
                        head_input[c] = row[c];
                        argmax[c] = p;
                    }
                }
            }
        }
        head_input.extend_from_slice(extras);
        let mut head_acts = vec![head_input];
        for l in &self.head {
            let mut y = vec![0.0; l.outputs];
            l.forward_into(head_acts.last().unwrap(), &mut y);
            head_acts.push(y);
        }
        Ok(ForwardCache {
            n_points: points.len(),
            enc_acts,
            argmax,
            head_acts,
        })
    }

    /// Gradient of `dot(d_output, output)` w.r.t. every parameter, added
    /// into `grads` (flat, same layout as [`MlpModel::params`]). Max pooling
    /// routes each channel's gradient to its arg-max point, lowest index on
    /// ties.
    pub fn backward_accumulate(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut [f64]) {
        let enc_params: usize = self
            .encoder
            .iter()
            .flat_map(|e| e.layers.iter())
            .map(DenseLayer::param_count)
            .sum();
        let (enc_grads, head_grads) = grads.split_at_mut(enc_params);

        // head, last layer first
        let mut offsets = Vec::with_capacity(self.head.len());
        let mut off = 0;
        for l in &self.head {
            offsets.push(off);
            off += l.param_count();
        }
        let mut dy = d_output.to_vec();
        for (i, l) in self.head.iter().enumerate().rev() {
            let mut dx = vec![0.0; l.inputs];
            l.backward(
                &cache.head_acts[i],
                &cache.head_acts[i + 1],
                &dy,
                &mut head_grads[offsets[i]..offsets[i] + l.param_count()],
                Some(&mut dx),
            );
            dy = dx;
        }

        let Some(enc) = &self.encoder else {
            return;
        };
        let width = enc.output_dim();
        let d_latent = &dy[..width];

        // points that won at least one channel, ascending
        let mut touched: Vec<usize> = cache
            .argmax
            .iter()
            .zip(d_latent)
            .filter(|(_, d)| **d != 0.0)
            .map(|(p, _)| *p)
            .collect();
        touched.sort_unstable();
        touched.dedup();
        if touched.is_empty() {
            return;
        }

        let mut offsets = Vec::with_capacity(enc.layers.len());
        let mut off = 0;
        for l in &enc.layers {
            offsets.push(off);
            off += l.param_count();
        }
        // per-touched-point gradient of the current layer output
        let mut d_points: Vec<Vec<f64>> = touched
            .iter()
            .map(|&p| {
                (0..width)
                    .map(|c| if cache.argmax[c] == p { d_latent[c] } else { 0.0 })
                    .collect()
            })
            .collect();
        for (i, l) in enc.layers.iter().enumerate().rev() {
            let x_all = &cache.enc_acts[i];
            let y_all = &cache.enc_acts[i + 1];
            let grads = &mut enc_grads[offsets[i]..offsets[i] + l.param_count()];
            for (k, &p) in touched.iter().enumerate() {
                let x = &x_all[p * l.inputs..(p + 1) * l.inputs];
                let y = &y_all[p * l.outputs..(p + 1) * l.outputs];
                if i > 0 {
                    let mut dx = vec![0.0; l.inputs];
                    l.backward(x, y, &d_points[k], grads, Some(&mut dx));
                    d_points[k] = dx;
                } else {
                    l.backward(x, y, &d_points[k], grads, None);
                }
            }
        }
        debug_assert!(touched.iter().all(|&p| p < cache.n_points));
    }

    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_count()];
        self.backward_accumulate(cache, d_output, &mut g);
        g
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    n_points: usize,
    /// Encoder input followed by each encoder layer output, `n_points × width`.
    enc_acts: Vec<Vec<f64>>,
    argmax: Vec<usize>,
    /// Head input followed by each head layer output.
    head_acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.head_acts.last().expect("head has at least one layer")
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One supervised regression example with a scalar target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub points: Vec<PointFeature>,
    pub extras: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement and
    /// restore the best parameters. Requires a validation set.
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (measured before each batch update).
    pub loss_curve: Vec<f64>,
    /// Validation MSE after each epoch, when a validation set was given.
    pub validation_curve: Vec<f64>,
    pub best_epoch: usize,
}

pub fn mse(model: &MlpModel, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in data {
        let e = model.predict(&s.points, &s.extras)?[0] - s.target;
        total += e * e;
    }
    Ok(total / data.len() as f64)
}

/// Minimizes mean squared error of the first model output over shuffled
/// mini-batches with Adam.
pub fn train_mse(
    model: &mut MlpModel,
    train: &[Sample],
    validation: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::Params("batch_size must be >= 1".into()));
    }
    let validation = validation.filter(|v| !v.is_empty());
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut grads = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng_for(config.seed, &[0x7472_6169_6e]);
    let out_dim = model.output_dim();
    let mut d_out = vec![0.0; out_dim];

    let mut report = TrainReport {
        loss_curve: Vec::new(),
        validation_curve: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let s = &train[i];
                let cache = model.forward(&s.points, &s.extras)?;
                let err = cache.output()[0] - s.target;
                epoch_loss += err * err;
                d_out[0] = scale * err;
                model.backward_accumulate(&cache, &d_out, &mut grads);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut params, &grads)?;
            model.set_params(&params)?;
        }
        report.loss_curve.push(epoch_loss / train.len() as f64);

        let score = match validation {
            Some(v) => {
                let m = mse(model, v)?;
                report.validation_curve.push(m);
                m
            }
            None => epoch_loss / train.len() as f64,
        };
        if !score.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        if score < best.0 {
            best = (score, params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let (Some(p), Some(_)) = (config.patience, validation) {
            if since_best >= p {
                break;
            }
        }
    }
    if validation.is_some() {
        model.set_params(&best.1)?;
    }
    Ok(report)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FCVPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    encoder: Vec<LayerShape>,
    head: Vec<LayerShape>,
    extra_dim: usize,
    param_count: usize,
    meta: serde_json::Value,
}

fn shapes(layers: &[DenseLayer]) -> Vec<LayerShape> {
    layers
        .iter()
        .map(|l| LayerShape {
            inputs: l.inputs,
            outputs: l.outputs,
            activation: l.activation,
        })
        .collect()
}

/// Writes `magic | u32 version | u32 header length | JSON header | f64 LE
/// parameters`. `meta` carries caller-specific fields.
pub fn write_checkpoint<W: Write>(mut w: W, model: &MlpModel, meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        encoder: model.encoder.as_ref().map(|e| shapes(&e.layers)).unwrap_or_default(),
        head: shapes(&model.head),
        extra_dim: model.extra_dim,
        param_count: model.param_count(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut blob = Vec::with_capacity(model.param_count() * 8);
    for p in model.params() {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(MlpModel, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;

    let build = |shapes: &[LayerShape]| -> Vec<DenseLayer> {
        shapes
            .iter()
            .map(|s| DenseLayer {
                inputs: s.inputs,
                outputs: s.outputs,
                weights: vec![0.0; s.inputs * s.outputs],
                biases: vec![0.0; s.outputs],
                activation: s.activation,
            })
            .collect()
    };
    let encoder = if header.encoder.is_empty() {
        None
    } else {
        Some(SetEncoder::new(build(&header.encoder))?)
    };
    let mut model = MlpModel::new(encoder, build(&header.head), header.extra_dim)?;
    if model.param_count() != header.param_count {
        return Err(Error::Checkpoint("layer shapes disagree with parameter count".into()));
    }
    let mut blob = vec![0u8; header.param_count * 8];
    r.read_exact(&mut blob)
        .map_err(|e| Error::Checkpoint(format!("truncated parameter blob: {e}")))?;
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.set_params(&params)?;
    Ok((model, header.meta))
}
