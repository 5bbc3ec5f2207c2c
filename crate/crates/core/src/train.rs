//! Classifier-free-guidance training of the toy denoiser on the member split.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::diffusion::{eval_loss_expectation, forward_diffuse, ImageShape, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::DenoiserModel;
use crate::optim::Adam;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    /// Per-item σ is drawn uniformly from `[sigma_range.0, sigma_range.1]`.
    pub sigma_range: (f64, f64),
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            sigma_range: (0.1, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cfg_drop_prob: f64,
    pub blur_augment: Option<BlurConfig>,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            cfg_drop_prob: 0.1,
            blur_augment: None,
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::config("train.cfg_drop_prob", "must lie in [0,1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if let Some(b) = &self.blur_augment {
            let (lo, hi) = b.sigma_range;
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::config("train.blur_augment.sigma_range", "need 0 < low <= high"));
            }
        }
        Ok(())
    }
}

/// An image with its ground-truth condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Vec<f64>,
    pub cond: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// Mean batch loss at every step.
    pub losses: Vec<f64>,
}

/// Normalized 3×3 Gaussian kernel.
pub fn gaussian_kernel3(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 1.0, j as f64 - 1.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    k
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

/// 3×3 Gaussian blur with reflected edges, applied per channel.
pub fn blur3(image: &[f64], shape: ImageShape, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel3(sigma);
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut out = vec![0.0; image.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, krow) in k.iter().enumerate() {
                    let rr = reflect(r as isize + i as isize - 1, h);
                    for (j, kv) in krow.iter().enumerate() {
                        let cc = reflect(col as isize + j as isize - 1, w);
                        acc += kv * image[(rr * w + cc) * c + ch];
                    }
                }
                out[(r * w + col) * c + ch] = acc;
            }
        }
    }
    out
}

/// Trains on `members` with the joint conditional/unconditional objective.
/// Each step draws a batch (epoch-wise shuffling), a uniform timestep and
/// fresh noise per item, and swaps the condition for the null embedding with
/// probability `cfg_drop_prob`.
pub fn train(
    mut model: DenoiserModel,
    members: &[Example],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            model,
            losses: Vec::new(),
        });
    }
    if members.is_empty() {
        return Err(Error::config("dataset.n_member", "training needs at least one member"));
    }
    let arch = model.arch().clone();
    let n_pix = arch.image.len();
    let sizes: Vec<usize> = model
        .layers()
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let b = cfg.batch_size;

    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.master_seed, Purpose::TrainNoise, step as u64, 0);
        let mut inputs = Array2::<f64>::zeros((b, arch.input_dim()));
        let mut targets = Array2::<f64>::zeros((b, n_pix));
        for item in 0..b {
            if cursor == order.len() {
                order = (0..members.len()).collect();
                order.shuffle(&mut rng::stream(cfg.master_seed, Purpose::TrainBatch, epoch, 0));
                epoch += 1;
                cursor = 0;
            }
            let ex = &members[order[cursor]];
            cursor += 1;
            let t = r.random_range(1..=sched.steps());
            let eps = rng::normal_vec(&mut r, n_pix);
            let dropped = r.random::<f64>() < cfg.cfg_drop_prob;
            let blurred;
            let img: &[f64] = match &cfg.blur_augment {
                Some(bc) => {
                    let (lo, hi) = bc.sigma_range;
                    let sigma = lo + (hi - lo) * r.random::<f64>();
                    blurred = blur3(&ex.image, arch.image, sigma);
                    &blurred
                }
                None => &ex.image,
            };
            let zt = forward_diffuse(img, t, &eps, sched)?;
            let cond = if dropped { None } else { Some(ex.cond.as_slice()) };
            let row = model.input_row(&zt.z, t, cond)?;
            inputs.row_mut(item).assign(&row);
            targets.row_mut(item).assign(&ndarray::ArrayView1::from(&eps));
        }
        let trace = model.forward_batch(inputs);
        let resid = &trace.out - &targets;
        let loss = resid.iter().map(|v| v * v).sum::<f64>() / (b * n_pix) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "training",
                iteration: step,
            });
        }
        losses.push(loss);
        let dout = resid * (2.0 / (b * n_pix) as f64);
        let grads = model.backward_batch(&trace, dout);
        adam.begin_step();
        for (li, (layer, g)) in model.layers_mut().iter_mut().zip(&grads).enumerate() {
            adam.update(
                2 * li,
                layer.weight.as_slice_mut().expect("contiguous weight"),
                g.weight.as_slice().expect("contiguous grad"),
            );
            adam.update(
                2 * li + 1,
                layer.bias.as_slice_mut().expect("contiguous bias"),
                g.bias.as_slice().expect("contiguous grad"),
            );
        }
    }
    Ok(TrainOutcome { model, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondMode {
    GroundTruth,
    Null,
}

/// Per-sample expected loss under ground-truth or null conditioning.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fit(
    model: &DenoiserModel,
    samples: &[Sample],
    cond_dim: usize,
    mode: CondMode,
    t: usize,
    draws: usize,
    seed: u64,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let cond = crate::data::encode_condition(&s.spec, cond_dim);
            let c = match mode {
                CondMode::GroundTruth => Some(cond.embedding.as_slice()),
                CondMode::Null => None,
            };
            let stream = rng::stream_seed(seed, Purpose::EvalNoise, s.id, 0);
            eval_loss_expectation(model, &s.image, c, t, draws, stream, sched)
        })
        .collect()
}
