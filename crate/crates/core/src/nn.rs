//! Dense feed-forward networks trained with Adam.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer, its `out × in`
//! row-major weight matrix followed by its bias vector. Gradients and Adam
//! moments use the same layout, so the optimizer never needs to know about
//! layers.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Borrowed view of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(arg("a network needs at least one layer"));
        }
        let mut net = Self::zeros(dims, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.layer_count() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let range = net.weight_range(l);
            for w in &mut net.params[range] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        let n = param_count_for(dims);
        Self::from_parts(dims.to_vec(), activations.to_vec(), vec![0.0; n])
    }

    /// `dims` with a single entry and no activations is the identity map.
    pub fn from_parts(dims: Vec<usize>, activations: Vec<Activation>, params: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(arg("layer dimensions must not be empty"));
        }
        if dims.contains(&0) {
            return Err(arg(format!("layer dimensions must be positive, got {dims:?}")));
        }
        if activations.len() + 1 != dims.len() {
            return Err(arg(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        let expected = param_count_for(&dims);
        if params.len() != expected {
            return Err(arg(format!(
                "expected {expected} parameters for dims {dims:?}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(arg("network parameters must be finite"));
        }
        Ok(Self {
            dims,
            activations,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layer_count(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count_for(&self.dims[..=layer])
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.dims[layer] * self.dims[layer + 1]
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.dims[layer + 1]
    }

    pub fn layer(&self, layer: usize) -> LayerView<'_> {
        LayerView {
            fan_in: self.dims[layer],
            fan_out: self.dims[layer + 1],
            activation: self.activations[layer],
            weights: &self.params[self.weight_range(layer)],
            bias: &self.params[self.bias_range(layer)],
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerView<'_>> {
        (0..self.layer_count()).map(|l| self.layer(l))
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the parameter bits.
        self.params.iter().fold(0xcbf29ce484222325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x100000001b3)
        })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(arg(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layer_count());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layer_count());
        for l in 0..self.layer_count() {
            let x = if l == 0 { input } else { &post[l - 1] };
            let (z, a) = self.layer_forward(l, x);
            pre.push(z);
            post.push(a);
        }
        let output = post.last().cloned().unwrap_or_else(|| input.to_vec());
        let cache = ForwardCache {
            dims: self.dims.clone(),
            fingerprint: self.fingerprint(),
            input: input.to_vec(),
            pre,
            post,
        };
        Ok((output, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in 0..self.layer_count() {
            x = self.layer_forward(l, &x).1;
        }
        Ok(x)
    }

    /// Post-activation output of layer `layer` (0-based).
    pub fn activations_at(&self, input: &[f64], layer: usize) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if layer >= self.layer_count() {
            return Err(arg(format!("layer {layer} out of range")));
        }
        let mut x = input.to_vec();
        for l in 0..=layer {
            x = self.layer_forward(l, &x).1;
        }
        Ok(x)
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let layer = self.layer(l);
        let mut z = layer.bias.to_vec();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
            *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        (z, a)
    }

    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_full(cache, d_output, None)?.params)
    }

    /// Backpropagate `d_output`, optionally adding an extra gradient on the
    /// post-activation output of hidden layer `inject.0`.
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        inject: Option<(usize, &[f64])>,
    ) -> Result<Backprop> {
        if cache.dims != self.dims || cache.fingerprint != self.fingerprint() {
            return Err(Error::Usage(
                "forward cache does not belong to this network state".into(),
            ));
        }
        if d_output.len() != self.output_dim() {
            return Err(arg(format!(
                "output gradient has length {}, network output is {}",
                d_output.len(),
                self.output_dim()
            )));
        }
        if let Some((l, g)) = inject {
            if l >= self.layer_count() || g.len() != self.dims[l + 1] {
                return Err(arg("injected gradient does not match the target layer"));
            }
        }

        let mut grads = vec![0.0; self.params.len()];
        let mut delta_a = d_output.to_vec();
        for l in (0..self.layer_count()).rev() {
            if let Some((il, g)) = inject {
                if il == l {
                    for (d, gi) in delta_a.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            let layer = self.layer(l);
            let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let delta_z: Vec<f64> = delta_a
                .iter()
                .zip(&cache.pre[l])
                .zip(&cache.post[l])
                .map(|((d, &z), &a)| d * layer.activation.derivative(z, a))
                .collect();

            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            for (o, dz) in delta_z.iter().enumerate() {
                grads[br.start + o] = *dz;
                if *dz != 0.0 {
                    let row = &mut grads[wr.start + o * layer.fan_in..wr.start + (o + 1) * layer.fan_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g = dz * xi;
                    }
                }
            }

            let mut prev = vec![0.0; layer.fan_in];
            for (o, dz) in delta_z.iter().enumerate() {
                if *dz == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += dz * w;
                }
            }
            delta_a = prev;
        }
        Ok(Backprop {
            params: grads,
            input: delta_a,
        })
    }
}

/// Intermediates recorded by [`DenseNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    fingerprint: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    pub fn post_activation(&self, layer: usize) -> &[f64] {
        &self.post[layer]
    }

    fn relu_mask(&self, activations: &[Activation]) -> Vec<bool> {
        activations
            .iter()
            .zip(&self.pre)
            .filter(|(a, _)| **a == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| *v > 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Bce,
}

impl LossKind {
    /// Unnormalized loss and per-element gradient for one sample.
    pub(crate) fn sample(self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossKind::Mae => {
                let loss = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
                let grad = pred
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        if p > t {
                            1.0
                        } else if p < t {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (loss, grad)
            }
            LossKind::Bce => {
                let mut loss = 0.0;
                let grad = pred
                    .iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                        (p - t) / (p * (1.0 - p))
                    })
                    .collect();
                (loss, grad)
            }
        }
    }

    /// Mean loss over all elements and its gradient.
    pub fn evaluate(self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        if pred.len() != target.len() {
            return Err(arg(format!(
                "prediction length {} != target length {}",
                pred.len(),
                target.len()
            )));
        }
        if pred.is_empty() {
            return Err(arg("loss of an empty batch"));
        }
        let n = pred.len() as f64;
        let (loss, mut grad) = self.sample(pred, target);
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }
}

pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    LossKind::Mae.evaluate(pred, target)
}

pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    LossKind::Bce.evaluate(pred, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(arg(format!(
                "adam state holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(params: &[f64], grads: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut params = params.to_vec();
    let mut state = state.clone();
    state.step(&mut params, grads)?;
    Ok((params, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub shuffle_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            loss: LossKind::Mae,
            shuffle_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(arg("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(arg("batch size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(arg(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Paired inputs and targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(arg(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Per-epoch shuffled index order, including the final partial batch.
pub(crate) struct BatchSchedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchSchedule {
    pub(crate) fn new(samples: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..samples).collect(),
            batch_size,
        }
    }

    pub(crate) fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Loss and averaged parameter gradient over one batch.
pub(crate) fn batch_gradient(
    net: &DenseNetwork,
    data: &Dataset,
    batch: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / (batch.len() * net.output_dim()) as f64;
    let mut grads = vec![0.0; net.param_count()];
    let mut total = 0.0;
    for &i in batch {
        let (pred, cache) = net.forward(&data.inputs[i])?;
        if data.targets[i].len() != pred.len() {
            return Err(arg(format!("target {i} has the wrong width")));
        }
        let (l, mut g) = loss.sample(&pred, &data.targets[i]);
        total += l;
        g.iter_mut().for_each(|x| *x *= scale);
        let sample_grads = net.backward(&cache, &g)?;
        for (a, b) in grads.iter_mut().zip(&sample_grads) {
            *a += b;
        }
    }
    Ok((total, grads))
}

/// Mini-batch Adam training. Returns the trained network and the mean
/// training loss of every epoch.
pub fn train(
    mut net: DenseNetwork,
    data: &Dataset,
    config: &TrainingConfig,
) -> Result<(DenseNetwork, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(arg("cannot train on an empty dataset"));
    }
    let mut adam = AdamState::new(net.param_count(), config.adam());
    let mut schedule = BatchSchedule::new(data.len(), config.batch_size, config.shuffle_seed);
    let denom = (data.len() * net.output_dim()) as f64;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in schedule.next_epoch() {
            let (loss, grads) = batch_gradient(&net, data, &batch, config.loss)?;
            epoch_loss += loss;
            adam.step(net.params_mut(), &grads)?;
        }
        history.push(epoch_loss / denom);
    }
    Ok((net, history))
}

/// Mean loss of `net` over the whole dataset.
pub fn dataset_loss(net: &DenseNetwork, data: &Dataset, loss: LossKind) -> Result<f64> {
    if data.is_empty() {
        return Err(arg("loss of an empty dataset"));
    }
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let pred = net.predict(x)?;
        total += loss.evaluate(&pred, t)?.0;
    }
    Ok(total / data.len() as f64)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
const REL_ERROR_FLOOR: f64 = 1e-6;

/// Relative discrepancy used by the gradient check.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

pub fn gradient_check(net: &DenseNetwork, input: &[f64], target: &[f64], loss: LossKind) -> Result<f64> {
    gradient_check_with_step(net, input, target, loss, DEFAULT_FD_STEP)
}

/// Largest relative error between backprop and central differences over
/// every parameter. Parameters whose ±h perturbation flips a ReLU on or off
/// sit on a kink and are skipped.
pub fn gradient_check_with_step(
    net: &DenseNetwork,
    input: &[f64],
    target: &[f64],
    loss: LossKind,
    h: f64,
) -> Result<f64> {
    let (pred, cache) = net.forward(input)?;
    let (_, d_out) = loss.evaluate(&pred, target)?;
    let analytic = net.backward(&cache, &d_out)?;
    let base_mask = cache.relu_mask(net.activations());

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..net.param_count() {
        let original = net.params[i];
        let mut eval = |value: f64| -> Result<(f64, bool)> {
            probe.params[i] = value;
            let (p, c) = probe.forward(input)?;
            let kink = c.relu_mask(probe.activations()) != base_mask;
            Ok((loss.evaluate(&p, target)?.0, kink))
        };
        let (plus, kink_plus) = eval(original + h)?;
        let (minus, kink_minus) = eval(original - h)?;
        probe.params[i] = original;
        if kink_plus || kink_minus {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
