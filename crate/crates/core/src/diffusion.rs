//! Noise schedule, forward process and noise-prediction losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Height × width × channels of every image the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for ImageShape {
    fn default() -> Self {
        Self::new(16, 16, 1)
    }
}

/// Linear-β schedule with its cumulative products. Timesteps are 1-indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const DEFAULT_BETA_START: f64 = 1e-4;
    pub const DEFAULT_BETA_END: f64 = 0.02;

    /// Betas linearly interpolated from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("T", "need at least one step"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(Error::config("beta_start", format!("{beta_start} not in (0,1)")));
        }
        if !(beta_end >= beta_start && beta_end < 1.0) {
            return Err(Error::config("beta_end", format!("{beta_end} not in [beta_start, 1)")));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Builds a schedule from an explicit β sequence; each β must lie in [0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("betas", "empty sequence"));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b >= 0.0 && **b < 1.0)) {
            return Err(Error::config("betas", format!("beta[{}] = {b} not in [0,1)", i + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Builds a schedule from an explicit ᾱ table (values in [0, 1]).
    /// Used to probe the forward-process limits; β is recovered where defined.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>) -> Result<Self> {
        if alpha_bars.is_empty() {
            return Err(Error::config("alpha_bars", "empty sequence"));
        }
        if alpha_bars.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("alpha_bars", "values must lie in [0,1]"));
        }
        let mut prev = 1.0;
        let betas = alpha_bars
            .iter()
            .map(|&a| {
                let b = if prev > 0.0 { 1.0 - a / prev } else { 1.0 };
                prev = a;
                b
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_timestep(t)?;
        Ok(self.alpha_bars[t - 1])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, Self::DEFAULT_BETA_START, Self::DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// A noised image `z_t` together with its timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

/// One standard-normal noise tensor and the stream it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub eps: Vec<f64>,
    pub seed_id: u64,
}

impl NoiseDraw {
    /// Evaluation noise: stream `(master_seed, EvalNoise, seed_id)`.
    pub fn standard(master_seed: u64, seed_id: u64, len: usize) -> Self {
        Self::from_stream(master_seed, Purpose::EvalNoise, seed_id, 0, len)
    }

    pub fn from_stream(master_seed: u64, purpose: Purpose, id: u64, draw: u64, len: usize) -> Self {
        let mut r = rng::stream(master_seed, purpose, id, draw);
        Self {
            eps: rng::normal_vec(&mut r, len),
            seed_id: id,
        }
    }

    pub fn from_vec(eps: Vec<f64>) -> Self {
        Self { eps, seed_id: 0 }
    }
}

/// `z_t = sqrt(ᾱ_t)·z0 + sqrt(1-ᾱ_t)·eps`, elementwise.
pub fn forward_diffuse(z0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<LatentState> {
    if z0.len() != eps.len() {
        return Err(Error::contract(format!(
            "image has {} elements but noise has {}",
            z0.len(),
            eps.len()
        )));
    }
    let ab = sched.alpha_bar(t)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let z = z0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect();
    Ok(LatentState { z, t })
}

/// Anything that predicts the noise component of a latent.
pub trait NoisePredictor {
    fn image_shape(&self) -> ImageShape;
    fn cond_dim(&self) -> usize;
    /// `cond == None` selects the null embedding.
    fn predict_noise(&self, z: &LatentState, cond: Option<&[f64]>) -> Result<Vec<f64>>;
}

/// Mean squared difference, accumulated with error-free products and
/// compensated summation so the result is accurate to about one ulp. The
/// finite-difference checks divide loss differences by `2h`, which magnifies
/// any accumulation error.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        let sq = d * d;
        let sq_err = d.mul_add(d, -sq);
        // Neumaier two-sum
        let t = sum + sq;
        comp += if sum.abs() >= sq.abs() {
            (sum - t) + sq
        } else {
            (sq - t) + sum
        };
        comp += sq_err;
        sum = t;
    }
    (sum + comp) / n
}

/// Single-draw noise-prediction loss at a fixed `(t, eps)`.
pub fn eval_loss<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &[f64],
    cond: Option<&[f64]>,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<f64> {
    if x.len() != model.image_shape().len() {
        return Err(Error::contract(format!(
            "image has {} elements, model expects {}",
            x.len(),
            model.image_shape().len()
        )));
    }
    let zt = forward_diffuse(x, t, eps, sched)?;
    let pred = model.predict_noise(&zt, cond)?;
    Ok(mse(eps, &pred))
}

/// Monte-Carlo mean of `draws` single-draw losses; draw `i` (1-based) uses
/// `NoiseDraw::standard(seed, i)`.
pub fn eval_loss_expectation<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &[f64],
    cond: Option<&[f64]>,
    t: usize,
    draws: usize,
    seed: u64,
    sched: &NoiseSchedule,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::contract("draws must be at least 1"));
    }
    let mut total = 0.0;
    for i in 1..=draws as u64 {
        let eps = NoiseDraw::standard(seed, i, x.len());
        total += eval_loss(model, x, cond, t, &eps.eps, sched)?;
    }
    Ok(total / draws as f64)
}
