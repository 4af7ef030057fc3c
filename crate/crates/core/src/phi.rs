//! Singular value prediction network.
//!
//! Three shared `affine + ReLU` layers followed by two affine heads, one for
//! `S` and one for `Δs`. Parameters are stored as `f32` (that is what the
//! model file holds, so save/load is bit-exact); activations, gradients and
//! optimizer moments are `f64`. Every reduction runs in a fixed order, so
//! results do not depend on the thread count.
//!
//! Model file (`PHI1`), all little-endian:
//!
//! ```text
//! magic "PHI1" | version u32 = 1 | input u32 | hidden u32 | output u32
//! then f32 parameters, each layer weight (row-major, out×in) then bias:
//! shared 1, shared 2, shared 3, head S, head Δs
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avi::SingularValuePredictor;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

pub const MODEL_MAGIC: &[u8; 4] = b"PHI1";
pub const MODEL_VERSION: u32 = 1;
const MODEL_HEADER_LEN: usize = 20;

pub const SHARED_LAYERS: usize = 3;
pub const HEAD_S: usize = 3;
pub const HEAD_DS: usize = 4;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl PhiDims {
    /// Dimensions for `h×w` channels: input and hidden `h·w`, output
    /// `min(h, w)`.
    pub fn for_channel(h: usize, w: usize) -> Self {
        Self { input: h * w, hidden: h * w, output: h.min(w) }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 {
            return Err(Error::InvalidArgument(format!("model dims must be positive: {self:?}")));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> [(usize, usize); 5] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        [(h, i), (h, h), (h, h), (o, h), (o, h)]
    }
}

/// Affine layer `y = W·x + b`, `W` row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { out_dim, in_dim, weight: vec![0.0; out_dim * in_dim], bias: vec![0.0; out_dim] }
    }

    /// `out[b] = W·input[b] + bias` for a row-major batch.
    fn forward(&self, input: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), batch * self.in_dim);
        let mut by_unit = vec![0.0; self.out_dim * batch];
        by_unit.par_chunks_mut(batch).enumerate().for_each(|(j, col)| {
            let w = &self.weight[j * self.in_dim..(j + 1) * self.in_dim];
            let b = self.bias[j] as f64;
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = b + dot_mixed(w, &input[r * self.in_dim..(r + 1) * self.in_dim]);
            }
        });
        let mut out = vec![0.0; batch * self.out_dim];
        for j in 0..self.out_dim {
            for r in 0..batch {
                out[r * self.out_dim + j] = by_unit[j * batch + r];
            }
        }
        out
    }
}

/// `Σ wᵢ·xᵢ` with eight fixed-order partial sums.
#[inline]
fn dot_mixed(w: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let wc = w.chunks_exact(8);
    let xc = x.chunks_exact(8);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        for l in 0..8 {
            acc[l] += a[l] as f64 * b[l];
        }
    }
    let mut tail = 0.0;
    for (a, b) in wr.iter().zip(xr) {
        tail += *a as f64 * b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiModel {
    dims: PhiDims,
    layers: Vec<Dense>,
}

/// Activations kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    dims: PhiDims,
    /// Input followed by the three post-ReLU hidden activations.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Post-ReLU activations of shared layer `l` (0-based), row-major.
    pub fn hidden(&self, l: usize) -> &[f64] {
        &self.acts[l + 1]
    }
}

/// Predicted values for a batch, row-major `(batch, output)`.
#[derive(Debug, Clone)]
pub struct PhiOutput {
    pub batch: usize,
    pub output: usize,
    pub s: Vec<f64>,
    pub delta_s: Vec<f64>,
}

impl PhiOutput {
    pub fn s_row(&self, r: usize) -> &[f64] {
        &self.s[r * self.output..(r + 1) * self.output]
    }

    pub fn delta_s_row(&self, r: usize) -> &[f64] {
        &self.delta_s[r * self.output..(r + 1) * self.output]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub layers: Vec<DenseGrad>,
}

impl ParamGradients {
    pub fn zeros_like(model: &PhiModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| DenseGrad { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Gradient of the flat parameter `idx` (same order as the model file).
    pub fn get(&self, idx: usize) -> f64 {
        let mut i = idx;
        for l in &self.layers {
            if i < l.weight.len() {
                return l.weight[i];
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias)).fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl PhiModel {
    pub fn zeros(dims: PhiDims) -> Result<Self> {
        dims.validate()?;
        let layers = dims.layer_shapes().iter().map(|&(o, i)| Dense::zeros(o, i)).collect();
        Ok(Self { dims, layers })
    }

    /// He-normal weights (`std = √(2 / fan_in)`) drawn layer by layer in
    /// file order from one stream seeded with `seed`; zero biases.
    pub fn init(dims: PhiDims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let mut rng = Rng::new(seed);
        for layer in &mut model.layers {
            let std = (2.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weight {
                *w = (std * rng.normal()) as f32;
            }
        }
        Ok(model)
    }

    pub fn dims(&self) -> PhiDims {
        self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn locate(&self, idx: usize) -> (usize, bool, usize) {
        let mut i = idx;
        for (n, l) in self.layers.iter().enumerate() {
            if i < l.weight.len() {
                return (n, true, i);
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return (n, false, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Flat parameter `idx` in model-file order.
    pub fn param(&self, idx: usize) -> f32 {
        let (l, w, i) = self.locate(idx);
        if w {
            self.layers[l].weight[i]
        } else {
            self.layers[l].bias[i]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f32) {
        let (l, w, i) = self.locate(idx);
        if w {
            self.layers[l].weight[i] = v;
        } else {
            self.layers[l].bias[i] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Forward pass over a row-major batch of flattened channels.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(PhiOutput, ForwardCache)> {
        if batch == 0 || input.len() != batch * self.dims.input {
            return Err(Error::DimensionMismatch(format!(
                "model expects batches of {}-long inputs, got {} values for {batch} rows",
                self.dims.input,
                input.len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut acts = Vec::with_capacity(SHARED_LAYERS + 1);
        acts.push(input.to_vec());
        for l in 0..SHARED_LAYERS {
            let mut h = self.layers[l].forward(&acts[l], batch);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(h);
        }
        let top = &acts[SHARED_LAYERS];
        let s = self.layers[HEAD_S].forward(top, batch);
        let delta_s = self.layers[HEAD_DS].forward(top, batch);
        Ok((PhiOutput { batch, output: self.dims.output, s, delta_s }, ForwardCache { batch, dims: self.dims, acts }))
    }

    /// `S, Δs ← Φ(x)` for one flattened channel.
    pub fn forward(&self, x_flat: &[f64]) -> Result<(Vec<f64>, Vec<f64>, ForwardCache)> {
        let (out, cache) = self.forward_batch(x_flat, 1)?;
        Ok((out.s, out.delta_s, cache))
    }

    /// Accumulates into `grads` the gradient of `Σ_b ⟨grad_s[b], S[b]⟩ +
    /// ⟨grad_ds[b], Δs[b]⟩` with respect to every parameter.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_s: &[f64],
        grad_ds: &[f64],
        grads: &mut ParamGradients,
    ) -> Result<()> {
        let b = cache.batch;
        let o = self.dims.output;
        if cache.dims != self.dims || grad_s.len() != b * o || grad_ds.len() != b * o {
            return Err(Error::DimensionMismatch("cache or upstream gradient does not match this model".into()));
        }
        if grads.layers.len() != self.layers.len()
            || grads.layers.iter().zip(&self.layers).any(|(g, l)| g.weight.len() != l.weight.len())
        {
            return Err(Error::DimensionMismatch("gradient buffer shape".into()));
        }
        let top = &cache.acts[SHARED_LAYERS];
        accumulate_layer_grad(&self.layers[HEAD_S], top, grad_s, b, &mut grads.layers[HEAD_S]);
        accumulate_layer_grad(&self.layers[HEAD_DS], top, grad_ds, b, &mut grads.layers[HEAD_DS]);
        let mut delta = input_grad(&self.layers[HEAD_S], grad_s, b);
        let from_ds = input_grad(&self.layers[HEAD_DS], grad_ds, b);
        delta.iter_mut().zip(&from_ds).for_each(|(a, c)| *a += c);

        for l in (0..SHARED_LAYERS).rev() {
            // ReLU: pass gradient where the activation is positive.
            let act = &cache.acts[l + 1];
            delta.iter_mut().zip(act).for_each(|(d, a)| {
                if *a <= 0.0 {
                    *d = 0.0
                }
            });
            accumulate_layer_grad(&self.layers[l], &cache.acts[l], &delta, b, &mut grads.layers[l]);
            if l > 0 {
                delta = input_grad(&self.layers[l], &delta, b);
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, grad_s: &[f64], grad_ds: &[f64]) -> Result<ParamGradients> {
        let mut g = ParamGradients::zeros_like(self);
        self.backward_into(cache, grad_s, grad_ds, &mut g)?;
        Ok(g)
    }
}

/// `gW[j] += Σ_b δ[b, j]·input[b]`, `gb[j] += Σ_b δ[b, j]`.
fn accumulate_layer_grad(layer: &Dense, input: &[f64], delta: &[f64], batch: usize, g: &mut DenseGrad) {
    let (o, i) = (layer.out_dim, layer.in_dim);
    g.weight.par_chunks_mut(i).enumerate().for_each(|(j, row)| {
        for r in 0..batch {
            let d = delta[r * o + j];
            if d == 0.0 {
                continue;
            }
            for (w, x) in row.iter_mut().zip(&input[r * i..(r + 1) * i]) {
                *w += d * x;
            }
        }
    });
    for j in 0..o {
        for r in 0..batch {
            g.bias[j] += delta[r * o + j];
        }
    }
}

/// `δ_in[b] = Wᵀ·δ[b]`.
fn input_grad(layer: &Dense, delta: &[f64], batch: usize) -> Vec<f64> {
    let (o, i) = (layer.out_dim, layer.in_dim);
    let mut out = vec![0.0; batch * i];
    out.par_chunks_mut(i).enumerate().for_each(|(r, row)| {
        for j in 0..o {
            let d = delta[r * o + j];
            if d == 0.0 {
                continue;
            }
            let w = &layer.weight[j * i..(j + 1) * i];
            for (x, &wv) in row.iter_mut().zip(w) {
                *x += d * wv as f64;
            }
        }
    });
    out
}

impl SingularValuePredictor for PhiModel {
    fn input_len(&self) -> Option<usize> {
        Some(self.dims.input)
    }

    fn predict(&self, channel: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if channel.rows() * channel.cols() != self.dims.input {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs, channel has {}",
                self.dims.input,
                channel.rows() * channel.cols()
            )));
        }
        if self.dims.output != channel.rows().min(channel.cols()) {
            return Err(Error::DimensionMismatch(format!(
                "model predicts {} singular values, channel has {}",
                self.dims.output,
                channel.rows().min(channel.cols())
            )));
        }
        let (s, d, _) = self.forward(channel.as_slice())?;
        Ok((s, d))
    }
}

/// Adam optimizer state (bias-corrected, `β1 = 0.9`, `β2 = 0.999`,
/// `ε = 1e-8`).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    first: Vec<DenseGrad>,
    second: Vec<DenseGrad>,
}

impl AdamState {
    pub fn new(model: &PhiModel) -> Self {
        let z = ParamGradients::zeros_like(model).layers;
        Self { step: 0, first: z.clone(), second: z }
    }
}

/// One Adam update of a parameter slice. `t` is the 1-based step count.
pub fn adam_update(params: &mut [f32], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    params.par_iter_mut().zip(grads.par_iter()).zip(m.par_iter_mut().zip(v.par_iter_mut())).for_each(
        |((p, &g), (m, v))| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p = (*p as f64 - lr * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
        },
    );
}

pub fn adam_step(model: &mut PhiModel, state: &mut AdamState, grads: &ParamGradients, lr: f64) -> Result<()> {
    if grads.layers.len() != model.layers.len()
        || state.first.len() != model.layers.len()
        || model.layers.iter().zip(&grads.layers).zip(&state.first).any(|((l, g), m)| {
            l.weight.len() != g.weight.len() || l.bias.len() != g.bias.len() || m.weight.len() != l.weight.len()
        })
    {
        return Err(Error::ShapeMismatch("gradients/optimizer state do not match model".into()));
    }
    state.step += 1;
    let t = state.step;
    for (((layer, g), m), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut state.first).zip(&mut state.second)
    {
        adam_update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight, t, lr);
        adam_update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, t, lr);
    }
    Ok(())
}

pub fn encode_model(model: &PhiModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(MODEL_HEADER_LEN + 4 * model.param_count());
    write_model(model, &mut out)?;
    Ok(out)
}

fn write_model(model: &PhiModel, w: &mut impl Write) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let d = model.dims;
    for v in [d.input, d.hidden, d.output] {
        let v = u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("model dim {v}")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for layer in &model.layers {
        for v in layer.weight.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_model(bytes: &[u8]) -> Result<PhiModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadModelMagic);
    }
    if bytes.len() < MODEL_HEADER_LEN {
        return Err(Error::TruncatedPayload { expected: MODEL_HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: MODEL_VERSION });
    }
    let dims = PhiDims { input: word(2) as usize, hidden: word(3) as usize, output: word(4) as usize };
    dims.validate()?;
    let count: u64 = dims.layer_shapes().iter().map(|&(o, i)| (o as u64) * (i as u64) + o as u64).sum();
    let expected = count * 4;
    let found = (bytes.len() - MODEL_HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    let mut model = PhiModel::zeros(dims)?;
    let mut values = bytes[MODEL_HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for layer in &mut model.layers {
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *v = values.next().expect("length checked");
        }
    }
    if !model.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(model)
}

pub fn save_model(model: &PhiModel, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    write_model(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PhiModel> {
    decode_model(&fs::read(path)?)
}
