//! Conditional ε-predictor and its hand-derived reverse-mode gradients.
//!
//! The network is a plain multilayer perceptron over the concatenation
//! `flatten(z_t) ⊕ time_embedding(t) ⊕ condition`, with SiLU between affine
//! layers. Because the graph is fixed, the backward pass is written out
//! directly instead of going through a general tape.

mod checkpoint;
mod dd;
mod fdcheck;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CKPT_MAGIC};

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{forward_diffuse, mse, ImageShape, LatentState, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub image: ImageShape,
    /// Widths of the hidden layers; empty means a single affine map.
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            image: ImageShape::default(),
            hidden: vec![256, 256],
            time_dim: 32,
            cond_dim: 16,
        }
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.image.len() + self.time_dim + self.cond_dim
    }

    /// `(out, in)` for every affine layer, first to last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim();
        for &h in &self.hidden {
            dims.push((h, fan_in));
            fan_in = h;
        }
        dims.push((self.image.len(), fan_in));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Offset of the condition block inside the network input.
    pub fn cond_offset(&self) -> usize {
        self.image.len() + self.time_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Approximate,
    Optimized,
    Null,
}

/// A conditioning vector with a record of where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub embedding: Vec<f64>,
    pub provenance: Provenance,
}

impl Condition {
    pub fn new(embedding: Vec<f64>, provenance: Provenance) -> Self {
        Self { embedding, provenance }
    }

    pub fn null(dim: usize) -> Self {
        Self::new(vec![0.0; dim], Provenance::Null)
    }

    /// The slot fed to the network: `None` for the null condition.
    pub fn as_input(&self) -> Option<&[f64]> {
        match self.provenance {
            Provenance::Null => None,
            _ => Some(&self.embedding),
        }
    }
}

/// What a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    Parameters,
    Image,
    Condition,
}

/// Sinusoidal embedding of a timestep: `sin` in the first half, `cos` in the second.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Activations kept from a single-sample forward pass.
struct Trace {
    /// Input to each affine layer.
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array1<f64>>,
    out: Array1<f64>,
}

/// Activations kept from a batched forward pass (rows are samples).
pub(crate) struct BatchTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub(crate) out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: Architecture,
    layers: Vec<Layer>,
    null_embedding: Vec<f64>,
}

impl DenoiserModel {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch.layer_dims().into_iter().map(|(o, i)| Layer::zeros(o, i)).collect();
        let null_embedding = vec![0.0; arch.cond_dim];
        Self {
            arch,
            layers,
            null_embedding,
        }
    }

    /// Gaussian weights with variance `1/fan_in`, zero biases.
    pub fn random(arch: Architecture, seed: u64) -> Self {
        let mut model = Self::zeros(arch);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let fan_in = layer.weight.ncols().max(1);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            let mut r = rng::stream(seed, Purpose::ModelInit, li as u64, 0);
            layer.weight.mapv_inplace(|_| normal.sample(&mut r));
        }
        model
    }

    /// Builds a model from explicit layers, checking them against `arch`.
    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        let dims = arch.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::contract(format!(
                "architecture has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (k, ((o, i), l)) in dims.iter().zip(&layers).enumerate() {
            if l.weight.dim() != (*o, *i) || l.bias.len() != *o {
                return Err(Error::contract(format!(
                    "layer {k}: expected {o}x{i} weight, got {:?}",
                    l.weight.dim()
                )));
            }
        }
        let null_embedding = vec![0.0; arch.cond_dim];
        Ok(Self {
            arch,
            layers,
            null_embedding,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn null_embedding(&self) -> &[f64] {
        &self.null_embedding
    }

    /// Parameter tensor names in declaration order.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    /// All parameters flattened in declaration order (weights row-major).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.arch.param_count());
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.arch.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.arch.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[pos];
                pos += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for w in l.weight.iter().chain(l.bias.iter()) {
                h.update(w.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn assemble_input(&self, z: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Array1<f64>> {
        if z.len() != self.arch.image.len() {
            return Err(Error::contract(format!(
                "latent has {} elements, model expects {}",
                z.len(),
                self.arch.image.len()
            )));
        }
        let c = match cond {
            Some(c) => {
                if c.len() != self.arch.cond_dim {
                    return Err(Error::contract(format!(
                        "condition has dimension {}, model expects {}",
                        c.len(),
                        self.arch.cond_dim
                    )));
                }
                c
            }
            None => &self.null_embedding,
        };
        let mut u = Vec::with_capacity(self.arch.input_dim());
        u.extend_from_slice(z);
        u.extend(time_embedding(t, self.arch.time_dim));
        u.extend_from_slice(c);
        Ok(Array1::from(u))
    }

    fn forward(&self, input: Array1<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = input;
        for (i, l) in self.layers.iter().enumerate() {
            let h = l.weight.dot(&act) + &l.bias;
            inputs.push(act);
            if i == last {
                return Trace { inputs, pre, out: h };
            }
            act = h.mapv(silu);
            pre.push(h);
        }
        unreachable!("model has at least one layer")
    }

    /// Back-propagates `dout`; returns the input gradient and, when asked,
    /// per-layer parameter gradients.
    fn backward(&self, trace: &Trace, dout: Array1<f64>, want_params: bool) -> (Array1<f64>, Vec<Layer>) {
        let mut grads = Vec::new();
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if want_params {
                let inp = &trace.inputs[i];
                let gw = delta.view().insert_axis(Axis(1)).dot(&inp.view().insert_axis(Axis(0)));
                grads.push(Layer {
                    weight: gw,
                    bias: delta.clone(),
                });
            }
            let dinput = l.weight.t().dot(&delta);
            if i == 0 {
                grads.reverse();
                return (dinput, grads);
            }
            delta = dinput * trace.pre[i - 1].mapv(silu_grad);
        }
        unreachable!("model has at least one layer")
    }

    /// Batched forward pass; `inputs` rows are assembled network inputs.
    pub(crate) fn forward_batch(&self, input: Array2<f64>) -> BatchTrace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = input;
        for (i, l) in self.layers.iter().enumerate() {
            let h = act.dot(&l.weight.t()) + &l.bias;
            inputs.push(act);
            if i == last {
                return BatchTrace { inputs, pre, out: h };
            }
            act = h.mapv(silu);
            pre.push(h);
        }
        unreachable!("model has at least one layer")
    }

    /// Parameter gradients of a batched pass given `dout` (same shape as the output).
    pub(crate) fn backward_batch(&self, trace: &BatchTrace, dout: Array2<f64>) -> Vec<Layer> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dout;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            grads.push(Layer {
                weight: delta.t().dot(&trace.inputs[i]),
                bias: delta.sum_axis(Axis(0)),
            });
            if i == 0 {
                break;
            }
            let dinput = delta.dot(&l.weight);
            delta = dinput * trace.pre[i - 1].mapv(silu_grad);
        }
        grads.reverse();
        grads
    }

    /// Assembles one row of a training batch.
    pub(crate) fn input_row(&self, z: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Array1<f64>> {
        self.assemble_input(z, t, cond)
    }

    /// Network output for a noised latent.
    pub fn predict(&self, z: &LatentState, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let u = self.assemble_input(&z.z, z.t, cond)?;
        Ok(self.forward(u).out.to_vec())
    }

    /// Single-draw loss and its gradient with respect to `wrt`, differentiated
    /// through the forward process. The gradient is flat: image-shaped for
    /// `Image`, `cond_dim` for `Condition`, declaration order for `Parameters`.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        t: usize,
        eps: &[f64],
        sched: &NoiseSchedule,
        wrt: Wrt,
    ) -> Result<(f64, Vec<f64>)> {
        if wrt == Wrt::Condition && cond.is_none() {
            return Err(Error::contract(
                "gradient with respect to the null condition is undefined",
            ));
        }
        if x.len() != self.arch.image.len() {
            return Err(Error::contract(format!(
                "image has {} elements, model expects {}",
                x.len(),
                self.arch.image.len()
            )));
        }
        let zt = forward_diffuse(x, t, eps, sched)?;
        let u = self.assemble_input(&zt.z, t, cond)?;
        let trace = self.forward(u);
        let pred = trace.out.as_slice().expect("contiguous output");
        let loss = mse(eps, pred);
        let n = eps.len() as f64;
        let dout: Array1<f64> = pred.iter().zip(eps).map(|(p, e)| 2.0 * (p - e) / n).collect();
        let want_params = wrt == Wrt::Parameters;
        let (dinput, pgrads) = self.backward(&trace, dout, want_params);
        let grad = match wrt {
            Wrt::Parameters => {
                let mut v = Vec::with_capacity(self.arch.param_count());
                for g in &pgrads {
                    v.extend(g.weight.iter());
                    v.extend(g.bias.iter());
                }
                v
            }
            Wrt::Image => {
                let scale = sched.alpha_bar(t)?.sqrt();
                dinput
                    .slice(ndarray::s![..self.arch.image.len()])
                    .iter()
                    .map(|g| g * scale)
                    .collect()
            }
            Wrt::Condition => {
                let off = self.arch.cond_offset();
                dinput.slice(ndarray::s![off..]).to_vec()
            }
        };
        Ok((loss, grad))
    }
}

impl NoisePredictor for DenoiserModel {
    fn image_shape(&self) -> ImageShape {
        self.arch.image
    }

    fn cond_dim(&self) -> usize {
        self.arch.cond_dim
    }

    fn predict_noise(&self, z: &LatentState, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        self.predict(z, cond)
    }
}

/// Compares analytic gradients to central differences `(L(+h) − L(−h)) / 2h`
/// at `probes` randomly chosen coordinates of the `wrt` target and returns the
/// largest relative error, with denominator `max(|analytic|, |numeric|, 1e-12)`.
///
/// The two loss values are evaluated by an independent double-double forward
/// pass, so the numeric side carries only truncation error.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    model: &DenoiserModel,
    x: &[f64],
    cond: Option<&[f64]>,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
    wrt: Wrt,
    probes: usize,
    h: f64,
    probe_seed: u64,
) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::contract(format!("finite-difference step {h} must be positive")));
    }
    if probes == 0 {
        return Err(Error::contract("probes must be at least 1"));
    }
    let (_, grad) = model.loss_and_grad(x, cond, t, eps, sched, wrt)?;
    if grad.is_empty() {
        return Ok(0.0);
    }
    let mut r = rng::stream(probe_seed, Purpose::Probe, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let index = rand::Rng::random_range(&mut r, 0..grad.len());
        let at = |delta| {
            fdcheck::loss_dd(
                model,
                x,
                cond,
                t,
                eps,
                sched,
                fdcheck::Perturbation { wrt, index, delta },
            )
        };
        let diff = at(h)? - at(-h)?;
        let numeric = (diff / dd::Dd::from_f64(2.0 * h)).hi;
        let analytic = grad[index];
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
