//! Minimal convolutional regression network with explicit gradients.
//!
//! Layers: 3x3 stride-1 zero-padded convolutions (optionally followed by
//! batch normalization), rectifier activations, fully connected layers, and
//! a scalar linear head. Parameters are stored as f32 (matching the file
//! format); all arithmetic runs in f64 so analytic gradients can be checked
//! tightly against central finite differences.
//!
//! `forward` runs in inference mode (batch-norm running statistics);
//! `backward` runs in training mode (batch statistics) and is the only entry
//! point that updates the running statistics. `training_loss` evaluates the
//! same training-mode loss without side effects, which is what a finite
//! difference oracle needs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::files::{self, FileError, Reader};
use crate::level::Observation;

pub const KERNEL: usize = 3;
const PAD: usize = 1;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input dims {got:?} do not match the network spec {expected:?}")]
    ShapeMismatch { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("optimizer produced a non-finite parameter value")]
    NonFiniteUpdate,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_rows: usize,
    pub input_cols: usize,
    pub input_channels: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub fc: Vec<usize>,
    pub seed: u64,
}

impl NetworkSpec {
    /// Desk-scale default: conv 16-32-32, fc 64-32.
    pub fn desk(rows: usize, cols: usize, channels: usize, batch_norm: bool, seed: u64) -> Self {
        NetworkSpec {
            input_rows: rows,
            input_cols: cols,
            input_channels: channels,
            conv: [16, 32, 32]
                .iter()
                .map(|&f| ConvLayerSpec { filters: f, batch_norm })
                .collect(),
            fc: vec![64, 32],
            seed,
        }
    }

    /// Large preset: eight convolutions (32,32,64,64,64,128,128,128) and
    /// fc 128-32. Impractical to train at desk scale.
    pub fn paper(rows: usize, cols: usize, channels: usize, batch_norm: bool, seed: u64) -> Self {
        NetworkSpec {
            input_rows: rows,
            input_cols: cols,
            input_channels: channels,
            conv: [32, 32, 64, 64, 64, 128, 128, 128]
                .iter()
                .map(|&f| ConvLayerSpec { filters: f, batch_norm })
                .collect(),
            fc: vec![128, 32],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_rows == 0 || self.input_cols == 0 || self.input_channels == 0 {
            return Err(NetError::InvalidSpec("input dims must be positive".into()));
        }
        if self.conv.is_empty() {
            return Err(NetError::InvalidSpec("at least one conv layer required".into()));
        }
        if self.fc.is_empty() {
            return Err(NetError::InvalidSpec("at least one fc layer required".into()));
        }
        if self.conv.iter().any(|c| c.filters == 0) || self.fc.iter().any(|&w| w == 0) {
            return Err(NetError::InvalidSpec("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.input_rows, self.input_cols, self.input_channels)
    }

    fn input_len(&self) -> usize {
        self.input_rows * self.input_cols * self.input_channels
    }

    fn flat_after_conv(&self) -> usize {
        self.input_rows * self.input_cols * self.conv.last().unwrap().filters
    }

    /// (input, output) widths of the dense stack including the scalar head.
    fn dense_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.flat_after_conv();
        for &w in &self.fc {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, 1));
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub(crate) gamma: Vec<f32>,
    pub(crate) beta: Vec<f32>,
    pub(crate) running_mean: Vec<f32>,
    pub(crate) running_var: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvParams {
    pub(crate) w: Vec<f32>, // [filters][3][3][cin]
    pub(crate) b: Vec<f32>,
    pub(crate) bn: Option<BnParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DenseParams {
    pub(crate) w: Vec<f32>, // [out][in]
    pub(crate) b: Vec<f32>,
}

/// All network parameters plus the spec they were shaped for.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    spec: NetworkSpec,
    pub(crate) conv: Vec<ConvParams>,
    pub(crate) dense: Vec<DenseParams>,
    version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    ConvW(usize),
    ConvB(usize),
    BnGamma(usize),
    BnBeta(usize),
    DenseW(usize),
    DenseB(usize),
}

impl Parameters {
    /// Seeded fan-in-scaled normal initialization; biases start at zero.
    pub fn init(spec: &NetworkSpec) -> Parameters {
        spec.validate().expect("network spec must be valid");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut sample = |n: usize, fan_in: usize| -> Vec<f32> {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
        };
        let mut conv = Vec::new();
        let mut cin = spec.input_channels;
        for layer in &spec.conv {
            let fan_in = KERNEL * KERNEL * cin;
            let w = sample(layer.filters * fan_in, fan_in);
            let b = vec![0.0; layer.filters];
            let bn = layer.batch_norm.then(|| BnParams {
                gamma: vec![1.0; layer.filters],
                beta: vec![0.0; layer.filters],
                running_mean: vec![0.0; layer.filters],
                running_var: vec![1.0; layer.filters],
            });
            conv.push(ConvParams { w, b, bn });
            cin = layer.filters;
        }
        let mut dense = Vec::new();
        for (in_dim, out_dim) in spec.dense_dims() {
            let w = sample(out_dim * in_dim, in_dim);
            let b = vec![0.0; out_dim];
            dense.push(DenseParams { w, b });
        }
        Parameters { spec: spec.clone(), conv, dense, version: 0 }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of trainable arrays (weights, biases, batch-norm scale and
    /// shift; running statistics are not trainable), in canonical order.
    pub fn array_count(&self) -> usize {
        self.slots().len()
    }

    pub fn array(&self, i: usize) -> &[f32] {
        match self.slots()[i] {
            Slot::ConvW(l) => &self.conv[l].w,
            Slot::ConvB(l) => &self.conv[l].b,
            Slot::BnGamma(l) => &self.conv[l].bn.as_ref().unwrap().gamma,
            Slot::BnBeta(l) => &self.conv[l].bn.as_ref().unwrap().beta,
            Slot::DenseW(l) => &self.dense[l].w,
            Slot::DenseB(l) => &self.dense[l].b,
        }
    }

    pub fn array_mut(&mut self, i: usize) -> &mut [f32] {
        match self.slots()[i] {
            Slot::ConvW(l) => &mut self.conv[l].w,
            Slot::ConvB(l) => &mut self.conv[l].b,
            Slot::BnGamma(l) => &mut self.conv[l].bn.as_mut().unwrap().gamma,
            Slot::BnBeta(l) => &mut self.conv[l].bn.as_mut().unwrap().beta,
            Slot::DenseW(l) => &mut self.dense[l].w,
            Slot::DenseB(l) => &mut self.dense[l].b,
        }
    }

    pub fn array_name(&self, i: usize) -> String {
        match self.slots()[i] {
            Slot::ConvW(l) => format!("conv{l}.w"),
            Slot::ConvB(l) => format!("conv{l}.b"),
            Slot::BnGamma(l) => format!("conv{l}.bn.gamma"),
            Slot::BnBeta(l) => format!("conv{l}.bn.beta"),
            Slot::DenseW(l) => format!("dense{l}.w"),
            Slot::DenseB(l) => format!("dense{l}.b"),
        }
    }

    fn slots(&self) -> Vec<Slot> {
        let mut slots = Vec::new();
        for (l, layer) in self.conv.iter().enumerate() {
            slots.push(Slot::ConvW(l));
            slots.push(Slot::ConvB(l));
            if layer.bn.is_some() {
                slots.push(Slot::BnGamma(l));
                slots.push(Slot::BnBeta(l));
            }
        }
        for l in 0..self.dense.len() {
            slots.push(Slot::DenseW(l));
            slots.push(Slot::DenseB(l));
        }
        slots
    }
}

/// Gradients of the mean squared loss, shaped like the trainable arrays.
#[derive(Clone, Debug)]
pub struct Gradients {
    arrays: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(params: &Parameters) -> Gradients {
        let arrays = (0..params.array_count())
            .map(|i| vec![0.0; params.array(i).len()])
            .collect();
        Gradients { arrays }
    }

    pub fn array(&self, i: usize) -> &[f64] {
        &self.arrays[i]
    }

    pub fn array_count(&self) -> usize {
        self.arrays.len()
    }
}

fn check_dims(spec: &NetworkSpec, obs: &Observation) -> Result<(), NetError> {
    if obs.dims() != spec.input_dims() {
        return Err(NetError::ShapeMismatch { expected: spec.input_dims(), got: obs.dims() });
    }
    Ok(())
}

/// Deterministic scalar prediction in inference mode.
pub fn forward(params: &Parameters, obs: &Observation) -> Result<f64, NetError> {
    check_dims(&params.spec, obs)?;
    let input = obs.to_input();
    Ok(forward_pass(params, &input, 1, Mode::Inference, None)[0])
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Inference,
    Training,
}

struct ConvTape {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    bn_mean: Vec<f64>,
    bn_var: Vec<f64>,
    relu_in: Vec<f64>,
}

struct DenseTape {
    input: Vec<f64>,
    pre_act: Vec<f64>,
}

#[derive(Default)]
struct Tape {
    conv: Vec<ConvTape>,
    dense: Vec<DenseTape>,
}

struct BnTrainOut {
    out: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Runs the network on `n` stacked inputs, returning one prediction per
/// sample. In training mode batch-norm uses batch statistics.
fn forward_pass(
    params: &Parameters,
    input: &[f64],
    n: usize,
    mode: Mode,
    mut tape: Option<&mut Tape>,
) -> Vec<f64> {
    let spec = &params.spec;
    let (rows, cols) = (spec.input_rows, spec.input_cols);
    debug_assert_eq!(input.len(), n * spec.input_len());

    let mut x = input.to_vec();
    let mut cin = spec.input_channels;
    for (l, layer) in params.conv.iter().enumerate() {
        let filters = spec.conv[l].filters;
        let conv_in = x;
        let mut y = conv_forward(&conv_in, n, rows, cols, cin, &layer.w, &layer.b, filters);
        let (xhat, inv_std, bn_mean, bn_var) = match (&layer.bn, mode) {
            (Some(bn), Mode::Training) => {
                let r = bn_forward_train(&y, n * rows * cols, filters, bn);
                y = r.out;
                (r.xhat, r.inv_std, r.mean, r.var)
            }
            (Some(bn), Mode::Inference) => {
                y = bn_forward_infer(&y, filters, bn);
                (Vec::new(), Vec::new(), Vec::new(), Vec::new())
            }
            (None, _) => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        let relu_in = y.clone();
        for v in &mut y {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if let Some(t) = tape.as_deref_mut() {
            t.conv.push(ConvTape { input: conv_in, xhat, inv_std, bn_mean, bn_var, relu_in });
        }
        x = y;
        cin = filters;
    }
    let _ = cin;

    let dense_dims = spec.dense_dims();
    let last = dense_dims.len() - 1;
    for (l, (in_dim, out_dim)) in dense_dims.iter().copied().enumerate() {
        let layer = &params.dense[l];
        let dense_in = x;
        let mut y = dense_forward(&dense_in, n, in_dim, &layer.w, &layer.b, out_dim);
        let pre_act = y.clone();
        if l != last {
            for v in &mut y {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if let Some(t) = tape.as_deref_mut() {
            t.dense.push(DenseTape { input: dense_in, pre_act });
        }
        x = y;
    }
    x
}

fn widen(w: &[f32]) -> Vec<f64> {
    w.iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward(
    input: &[f64],
    n: usize,
    rows: usize,
    cols: usize,
    cin: usize,
    w: &[f32],
    b: &[f32],
    filters: usize,
) -> Vec<f64> {
    let w64 = widen(w);
    let mut out = vec![0.0; n * rows * cols * filters];
    let sample_in = rows * cols * cin;
    let sample_out = rows * cols * filters;
    for s in 0..n {
        let in_base = s * sample_in;
        let out_base = s * sample_out;
        for r in 0..rows {
            for c in 0..cols {
                let o = out_base + (r * cols + c) * filters;
                for f in 0..filters {
                    let mut acc = b[f] as f64;
                    let wf = f * KERNEL * KERNEL * cin;
                    for kr in 0..KERNEL {
                        let rr = r as isize + kr as isize - PAD as isize;
                        if rr < 0 || rr >= rows as isize {
                            continue;
                        }
                        for kc in 0..KERNEL {
                            let cc = c as isize + kc as isize - PAD as isize;
                            if cc < 0 || cc >= cols as isize {
                                continue;
                            }
                            let ib = in_base + (rr as usize * cols + cc as usize) * cin;
                            let wb = wf + (kr * KERNEL + kc) * cin;
                            acc += dot(&input[ib..ib + cin], &w64[wb..wb + cin]);
                        }
                    }
                    out[o + f] = acc;
                }
            }
        }
    }
    out
}

/// Training-mode batch norm over the (sample, row, col) axis per channel.
fn bn_forward_train(x: &[f64], spatial: usize, channels: usize, bn: &BnParams) -> BnTrainOut {
    let mut mean = vec![0.0; channels];
    for i in 0..spatial {
        for c in 0..channels {
            mean[c] += x[i * channels + c];
        }
    }
    for m in &mut mean {
        *m /= spatial as f64;
    }
    let mut var = vec![0.0; channels];
    for i in 0..spatial {
        for c in 0..channels {
            let d = x[i * channels + c] - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= spatial as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for i in 0..spatial {
        for c in 0..channels {
            let idx = i * channels + c;
            let h = (x[idx] - mean[c]) * inv_std[c];
            xhat[idx] = h;
            out[idx] = bn.gamma[c] as f64 * h + bn.beta[c] as f64;
        }
    }
    BnTrainOut { out, xhat, inv_std, mean, var }
}

fn bn_forward_infer(x: &[f64], channels: usize, bn: &BnParams) -> Vec<f64> {
    let spatial = x.len() / channels;
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        let inv = 1.0 / (bn.running_var[c] as f64 + BN_EPS).sqrt();
        let (g, beta, m) = (bn.gamma[c] as f64, bn.beta[c] as f64, bn.running_mean[c] as f64);
        for i in 0..spatial {
            let idx = i * channels + c;
            out[idx] = g * (x[idx] - m) * inv + beta;
        }
    }
    out
}

fn dense_forward(
    input: &[f64],
    n: usize,
    in_dim: usize,
    w: &[f32],
    b: &[f32],
    out_dim: usize,
) -> Vec<f64> {
    let w64 = widen(w);
    let mut out = vec![0.0; n * out_dim];
    for s in 0..n {
        let x = &input[s * in_dim..(s + 1) * in_dim];
        for o in 0..out_dim {
            out[s * out_dim + o] = b[o] as f64 + dot(x, &w64[o * in_dim..(o + 1) * in_dim]);
        }
    }
    out
}

fn stack_inputs(spec: &NetworkSpec, batch: &[(&Observation, f64)]) -> Result<Vec<f64>, NetError> {
    let mut input = Vec::with_capacity(batch.len() * spec.input_len());
    for (obs, _) in batch {
        check_dims(spec, obs)?;
        input.extend(obs.as_bytes().iter().map(|&b| b as f64));
    }
    Ok(input)
}

fn mean_squared_loss(preds: &[f64], batch: &[(&Observation, f64)]) -> f64 {
    preds
        .iter()
        .zip(batch)
        .map(|(p, (_, y))| (p - y) * (p - y))
        .sum::<f64>()
        / batch.len() as f64
}

/// Mean squared training-mode loss without side effects; the reference
/// function for finite-difference gradient checks.
pub fn training_loss(params: &Parameters, batch: &[(&Observation, f64)]) -> Result<f64, NetError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let input = stack_inputs(&params.spec, batch)?;
    let preds = forward_pass(params, &input, batch.len(), Mode::Training, None);
    let loss = mean_squared_loss(&preds, batch);
    if !loss.is_finite() {
        return Err(NetError::NonFiniteLoss);
    }
    Ok(loss)
}

/// Training-mode forward and backward over a batch. Returns the mean squared
/// loss and gradients for every trainable array; folds the batch statistics
/// into the batch-norm running statistics.
pub fn backward(
    params: &mut Parameters,
    batch: &[(&Observation, f64)],
) -> Result<(f64, Gradients), NetError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let spec = params.spec.clone();
    let n = batch.len();
    let input = stack_inputs(&spec, batch)?;
    let mut tape = Tape::default();
    let preds = forward_pass(params, &input, n, Mode::Training, Some(&mut tape));

    let loss = mean_squared_loss(&preds, batch);
    if !loss.is_finite() {
        return Err(NetError::NonFiniteLoss);
    }

    let mut grads = Gradients::zeros_like(params);
    let slots = params.slots();
    let slot_index =
        |slot: Slot| -> usize { slots.iter().position(|s| *s == slot).expect("slot exists") };

    // d loss / d prediction
    let mut d: Vec<f64> = preds
        .iter()
        .zip(batch)
        .map(|(p, (_, y))| 2.0 * (p - y) / n as f64)
        .collect();

    // Dense stack, last to first. The head has no activation.
    let dense_dims = spec.dense_dims();
    let last = dense_dims.len() - 1;
    for l in (0..dense_dims.len()).rev() {
        let (in_dim, out_dim) = dense_dims[l];
        let t = &tape.dense[l];
        if l != last {
            for (dv, pre) in d.iter_mut().zip(&t.pre_act) {
                if *pre <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let w64 = widen(&params.dense[l].w);
        let gw = &mut grads.arrays[slot_index(Slot::DenseW(l))];
        let mut gb_local = vec![0.0; out_dim];
        let mut dx = vec![0.0; n * in_dim];
        for s in 0..n {
            let ib = s * in_dim;
            let x = &t.input[ib..ib + in_dim];
            let dxs = &mut dx[ib..ib + in_dim];
            for o in 0..out_dim {
                let dout = d[s * out_dim + o];
                if dout == 0.0 {
                    continue;
                }
                gb_local[o] += dout;
                let wb = o * in_dim;
                let gws = &mut gw[wb..wb + in_dim];
                let ws = &w64[wb..wb + in_dim];
                for i in 0..in_dim {
                    gws[i] += dout * x[i];
                    dxs[i] += dout * ws[i];
                }
            }
        }
        let gb = &mut grads.arrays[slot_index(Slot::DenseB(l))];
        gb.copy_from_slice(&gb_local);
        d = dx;
    }

    // Conv stack, last to first.
    let (rows, cols) = (spec.input_rows, spec.input_cols);
    let spatial = n * rows * cols;
    for l in (0..spec.conv.len()).rev() {
        let filters = spec.conv[l].filters;
        let cin = if l == 0 { spec.input_channels } else { spec.conv[l - 1].filters };
        let t = &tape.conv[l];
        for (dv, pre) in d.iter_mut().zip(&t.relu_in) {
            if *pre <= 0.0 {
                *dv = 0.0;
            }
        }
        if let Some(bn) = &params.conv[l].bn {
            let mut sum_dy = vec![0.0; filters];
            let mut sum_dy_xhat = vec![0.0; filters];
            for i in 0..spatial {
                for c in 0..filters {
                    let idx = i * filters + c;
                    sum_dy[c] += d[idx];
                    sum_dy_xhat[c] += d[idx] * t.xhat[idx];
                }
            }
            let m = spatial as f64;
            let mut dx = vec![0.0; d.len()];
            for i in 0..spatial {
                for c in 0..filters {
                    let idx = i * filters + c;
                    dx[idx] = bn.gamma[c] as f64
                        * t.inv_std[c]
                        * (d[idx] - sum_dy[c] / m - t.xhat[idx] * sum_dy_xhat[c] / m);
                }
            }
            grads.arrays[slot_index(Slot::BnGamma(l))].copy_from_slice(&sum_dy_xhat);
            grads.arrays[slot_index(Slot::BnBeta(l))].copy_from_slice(&sum_dy);
            d = dx;
        }
        let w64 = widen(&params.conv[l].w);
        let gw = &mut grads.arrays[slot_index(Slot::ConvW(l))];
        let mut gb_local = vec![0.0; filters];
        let sample_in = rows * cols * cin;
        let sample_out = rows * cols * filters;
        let mut dx = vec![0.0; n * sample_in];
        for s in 0..n {
            let in_base = s * sample_in;
            let out_base = s * sample_out;
            for r in 0..rows {
                for c in 0..cols {
                    let o = out_base + (r * cols + c) * filters;
                    for f in 0..filters {
                        let dout = d[o + f];
                        if dout == 0.0 {
                            continue;
                        }
                        gb_local[f] += dout;
                        let wf = f * KERNEL * KERNEL * cin;
                        for kr in 0..KERNEL {
                            let rr = r as isize + kr as isize - PAD as isize;
                            if rr < 0 || rr >= rows as isize {
                                continue;
                            }
                            for kc in 0..KERNEL {
                                let cc = c as isize + kc as isize - PAD as isize;
                                if cc < 0 || cc >= cols as isize {
                                    continue;
                                }
                                let ib = in_base + (rr as usize * cols + cc as usize) * cin;
                                let wb = wf + (kr * KERNEL + kc) * cin;
                                let x = &t.input[ib..ib + cin];
                                let dxs = &mut dx[ib..ib + cin];
                                let gws = &mut gw[wb..wb + cin];
                                let ws = &w64[wb..wb + cin];
                                for ci in 0..cin {
                                    gws[ci] += dout * x[ci];
                                    dxs[ci] += dout * ws[ci];
                                }
                            }
                        }
                    }
                }
            }
        }
        grads.arrays[slot_index(Slot::ConvB(l))].copy_from_slice(&gb_local);
        d = dx;
    }

    // Fold batch statistics into the running statistics.
    for (l, t) in tape.conv.iter().enumerate() {
        if let Some(bn) = params.conv[l].bn.as_mut() {
            for c in 0..bn.gamma.len() {
                let rm = bn.running_mean[c] as f64;
                let rv = bn.running_var[c] as f64;
                bn.running_mean[c] = ((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * t.bn_mean[c]) as f32;
                bn.running_var[c] = ((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * t.bn_var[c]) as f32;
            }
        }
    }

    Ok((loss, grads))
}

/// Adaptive moment estimation state with the standard defaults
/// (step 1e-3, decay 0.9/0.999, epsilon 1e-8).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> AdamState {
        AdamState::with_lr(params, 1e-3)
    }

    pub fn with_lr(params: &Parameters, lr: f64) -> AdamState {
        let m = (0..params.array_count())
            .map(|i| vec![0.0; params.array(i).len()])
            .collect();
        let v = (0..params.array_count())
            .map(|i| vec![0.0; params.array(i).len()])
            .collect();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }
}

/// One Adam update in place; increments the parameter version counter.
pub fn optimize_step(
    params: &mut Parameters,
    grads: &Gradients,
    opt: &mut AdamState,
) -> Result<(), NetError> {
    assert_eq!(grads.array_count(), params.array_count(), "gradient shape mismatch");
    opt.t += 1;
    let bc1 = 1.0 - opt.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - opt.beta2.powi(opt.t as i32);
    for i in 0..params.array_count() {
        let g = grads.array(i);
        let arr = params.array_mut(i);
        assert_eq!(g.len(), arr.len(), "gradient shape mismatch");
        let m = &mut opt.m[i];
        let v = &mut opt.v[i];
        for j in 0..arr.len() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            let next = arr[j] as f64 - opt.lr * mhat / (vhat.sqrt() + opt.eps);
            if !next.is_finite() {
                return Err(NetError::NonFiniteUpdate);
            }
            arr[j] = next as f32;
        }
    }
    params.version += 1;
    Ok(())
}

const WEIGHTS_MAGIC: &[u8; 4] = b"DQPW";
const WEIGHTS_FORMAT: u8 = 1;

/// Writes parameters to a versioned binary file: magic, spec header, f32
/// arrays in declaration order (including batch-norm running statistics),
/// and a trailing checksum.
pub fn save_params(params: &Parameters, path: &Path) -> Result<(), FileError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.push(WEIGHTS_FORMAT);
    let spec = &params.spec;
    files::put_u32(&mut buf, spec.input_rows as u32);
    files::put_u32(&mut buf, spec.input_cols as u32);
    files::put_u32(&mut buf, spec.input_channels as u32);
    files::put_u32(&mut buf, spec.conv.len() as u32);
    for c in &spec.conv {
        files::put_u32(&mut buf, c.filters as u32);
        buf.push(c.batch_norm as u8);
    }
    files::put_u32(&mut buf, spec.fc.len() as u32);
    for &w in &spec.fc {
        files::put_u32(&mut buf, w as u32);
    }
    files::put_u64(&mut buf, spec.seed);
    files::put_u64(&mut buf, params.version);
    let put_arr = |buf: &mut Vec<u8>, arr: &[f32]| {
        for &v in arr {
            files::put_f32(buf, v);
        }
    };
    for layer in &params.conv {
        put_arr(&mut buf, &layer.w);
        put_arr(&mut buf, &layer.b);
        if let Some(bn) = &layer.bn {
            put_arr(&mut buf, &bn.gamma);
            put_arr(&mut buf, &bn.beta);
            put_arr(&mut buf, &bn.running_mean);
            put_arr(&mut buf, &bn.running_var);
        }
    }
    for layer in &params.dense {
        put_arr(&mut buf, &layer.w);
        put_arr(&mut buf, &layer.b);
    }
    files::write_with_checksum(path, buf)
}

/// Reads a parameter file written by `save_params`.
pub fn load_params(path: &Path) -> Result<Parameters, FileError> {
    let buf = files::read_with_checksum(path)?;
    let mut r = Reader::new(&buf);
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(files::format_err("not a parameter file (bad magic)"));
    }
    if r.u8()? != WEIGHTS_FORMAT {
        return Err(files::format_err("unsupported parameter file format version"));
    }
    let input_rows = r.u32()? as usize;
    let input_cols = r.u32()? as usize;
    let input_channels = r.u32()? as usize;
    let n_conv = r.u32()? as usize;
    if n_conv > 1024 {
        return Err(files::format_err("implausible conv layer count"));
    }
    let mut conv_spec = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        let filters = r.u32()? as usize;
        let batch_norm = r.u8()? != 0;
        conv_spec.push(ConvLayerSpec { filters, batch_norm });
    }
    let n_fc = r.u32()? as usize;
    if n_fc > 1024 {
        return Err(files::format_err("implausible fc layer count"));
    }
    let mut fc = Vec::with_capacity(n_fc);
    for _ in 0..n_fc {
        fc.push(r.u32()? as usize);
    }
    let seed = r.u64()?;
    let spec = NetworkSpec { input_rows, input_cols, input_channels, conv: conv_spec, fc, seed };
    spec.validate().map_err(|e| files::format_err(e.to_string()))?;
    let version = r.u64()?;

    let read_arr = |r: &mut Reader, n: usize| -> Result<Vec<f32>, FileError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(r.f32()?);
        }
        Ok(out)
    };
    let mut conv = Vec::new();
    let mut cin = spec.input_channels;
    for layer in &spec.conv {
        let w = read_arr(&mut r, layer.filters * KERNEL * KERNEL * cin)?;
        let b = read_arr(&mut r, layer.filters)?;
        let bn = if layer.batch_norm {
            Some(BnParams {
                gamma: read_arr(&mut r, layer.filters)?,
                beta: read_arr(&mut r, layer.filters)?,
                running_mean: read_arr(&mut r, layer.filters)?,
                running_var: read_arr(&mut r, layer.filters)?,
            })
        } else {
            None
        };
        conv.push(ConvParams { w, b, bn });
        cin = layer.filters;
    }
    let mut dense = Vec::new();
    for (in_dim, out_dim) in spec.dense_dims() {
        let w = read_arr(&mut r, out_dim * in_dim)?;
        let b = read_arr(&mut r, out_dim)?;
        dense.push(DenseParams { w, b });
    }
    if !r.is_done() {
        return Err(files::format_err("trailing bytes after parameter arrays"));
    }
    Ok(Parameters { spec, conv, dense, version })
}

/// Loads parameters, failing with `SpecMismatch` unless the file header
/// matches `expected`.
pub fn load_params_expecting(path: &Path, expected: &NetworkSpec) -> Result<Parameters, FileError> {
    let params = load_params(path)?;
    if params.spec != *expected {
        return Err(FileError::SpecMismatch);
    }
    Ok(params)
}
