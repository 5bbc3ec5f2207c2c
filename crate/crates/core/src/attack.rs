//! Loss and CLiD baselines and the model-fitted (MoFit) attack.
//!
//! Every stage for one query shares a single timestep `t_star` and a single
//! fixed target noise `eps_hat`. Stage one perturbs the query image by signed
//! gradient descent on the unconditional loss, producing a surrogate `x*` the
//! model fits unusually well. Stage two optimizes a condition embedding `φ*`
//! on that surrogate with Adam. The MoFit score then re-evaluates the
//! *original* query under `φ*` against its unconditional loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{approximate_condition, encode_condition, Dataset, Split};
use crate::diffusion::NoiseDraw;
use crate::nn::{Condition, Provenance};
use crate::optim::Adam;
use crate::oracle::{GradTarget, LossOracle};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub t_star: usize,
    pub alpha0: f64,
    pub iters: usize,
    pub delta_init_range: f64,
    pub early_stop_loss: Option<f64>,
    pub eps_seed: u64,
    /// Clamp iterates to the pixel range [0, 1] (applied before each loss
    /// evaluation, including the initial one).
    pub clamp: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            t_star: 140,
            alpha0: 0.15,
            iters: 1000,
            delta_init_range: 0.3,
            early_stop_loss: None,
            eps_seed: 0,
            clamp: true,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::config("surrogate.alpha0", "must be positive"));
        }
        if !(self.delta_init_range >= 0.0 && self.delta_init_range.is_finite()) {
            return Err(Error::config("surrogate.delta_init_range", "must be non-negative"));
        }
        if self.t_star < 1 || self.t_star > steps {
            return Err(Error::config(
                "surrogate.t_star",
                format!("{} outside 1..={steps}", self.t_star),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub lr: f64,
    pub iters: usize,
    pub early_stop_loss: Option<f64>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            lr: 0.06,
            iters: 200,
            early_stop_loss: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("embedding.lr", "must be positive"));
        }
        Ok(())
    }
}

/// Losses visited by one optimization stage. `losses[0]` is the starting
/// point; `losses[i]` follows update `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub losses: Vec<f64>,
    pub best_loss: f64,
    pub iterations: usize,
    pub stopped_early: bool,
}

impl OptTrace {
    fn start(loss: f64) -> Self {
        Self {
            losses: vec![loss],
            best_loss: loss,
            iterations: 0,
            stopped_early: false,
        }
    }

    /// Running best (minimum for descent).
    pub fn running_best(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.losses.len());
        let mut b = f64::INFINITY;
        for &l in &self.losses {
            b = b.min(l);
            out.push(b);
        }
        out
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn finite(loss: f64, stage: &'static str, iteration: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite { stage, iteration })
    }
}

/// Fixed target noise for a query.
pub fn target_noise(master_seed: u64, sample_id: u64, eps_seed: u64, len: usize) -> Vec<f64> {
    NoiseDraw::from_stream(master_seed, Purpose::TargetNoise, sample_id, eps_seed, len).eps
}

/// Initial perturbation δ ~ U[−range, range] for a query.
pub fn delta_init(master_seed: u64, sample_id: u64, range: f64, len: usize) -> Vec<f64> {
    let mut r = rng::stream(master_seed, Purpose::DeltaInit, sample_id, 0);
    rng::uniform_vec(&mut r, len, range)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Descend,
    Ascend,
}

fn sign_iterate(
    oracle: &dyn LossOracle,
    x0: &[f64],
    eps_hat: &[f64],
    delta0: &[f64],
    cfg: &SurrogateConfig,
    dir: Direction,
) -> Result<(Vec<f64>, OptTrace)> {
    cfg.validate(oracle.info().steps)?;
    if delta0.len() != x0.len() || eps_hat.len() != x0.len() {
        return Err(Error::contract("x0, eps_hat and delta lengths differ"));
    }
    let stage = match dir {
        Direction::Descend => "surrogate",
        Direction::Ascend => "surrogate_max",
    };
    let clamp = |v: f64| if cfg.clamp { v.clamp(0.0, 1.0) } else { v };
    let mut x: Vec<f64> = x0.iter().zip(delta0).map(|(a, d)| clamp(a + d)).collect();
    let (loss, mut grad) = oracle.loss_grad(&x, None, cfg.t_star, eps_hat, GradTarget::Image)?;
    let mut trace = OptTrace::start(finite(loss, stage, 0)?);
    let mut best_x = x.clone();
    let better = |new: f64, best: f64| match dir {
        Direction::Descend => new < best,
        Direction::Ascend => new > best,
    };
    let step_sign = match dir {
        Direction::Descend => -1.0,
        Direction::Ascend => 1.0,
    };
    for i in 0..cfg.iters {
        if dir == Direction::Descend {
            if let Some(thr) = cfg.early_stop_loss {
                if trace.best_loss <= thr {
                    trace.stopped_early = true;
                    break;
                }
            }
        }
        let alpha = cfg.alpha0 * (1.0 - i as f64 / cfg.iters as f64);
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi = clamp(*xi + step_sign * alpha * sign(*g));
        }
        let (loss, g) = oracle.loss_grad(&x, None, cfg.t_star, eps_hat, GradTarget::Image)?;
        let loss = finite(loss, stage, i + 1)?;
        grad = g;
        trace.losses.push(loss);
        trace.iterations = i + 1;
        if better(loss, trace.best_loss) {
            trace.best_loss = loss;
            best_x.clone_from(&x);
        }
    }
    Ok((best_x, trace))
}

/// Model-fitted surrogate: signed-gradient descent on the unconditional loss
/// from `x0 + delta0`, step `alpha0·(1 − i/iters)`, returning the best iterate.
pub fn optimize_surrogate(
    oracle: &dyn LossOracle,
    x0: &[f64],
    eps_hat: &[f64],
    delta0: &[f64],
    cfg: &SurrogateConfig,
) -> Result<(Vec<f64>, OptTrace)> {
    sign_iterate(oracle, x0, eps_hat, delta0, cfg, Direction::Descend)
}

/// How the attack perturbs the query before embedding extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SurrogateMode {
    ModelFitted,
    RandomUniform { eps_noise: f64 },
    AdversarialMax,
}

impl SurrogateMode {
    /// Parses `model_fitted`, `adversarial_max` or `random_uniform:<eps>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "model_fitted" => Ok(Self::ModelFitted),
            "adversarial_max" => Ok(Self::AdversarialMax),
            _ => {
                if let Some(v) = s.strip_prefix("random_uniform:") {
                    let eps_noise: f64 = v
                        .parse()
                        .map_err(|_| Error::config("mode", format!("bad noise level `{v}`")))?;
                    if !(eps_noise >= 0.0 && eps_noise.is_finite()) {
                        return Err(Error::config("mode", "noise level must be non-negative"));
                    }
                    Ok(Self::RandomUniform { eps_noise })
                } else {
                    Err(Error::config("mode", format!("unknown surrogate mode `{s}`")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::ModelFitted => "model_fitted".into(),
            Self::AdversarialMax => "adversarial_max".into(),
            Self::RandomUniform { eps_noise } => format!("random_uniform:{eps_noise}"),
        }
    }
}

/// Ablation variants of the surrogate stage. The random variant draws its
/// noise from the query's own `RandomDelta` stream.
pub fn optimize_surrogate_variant(
    oracle: &dyn LossOracle,
    x0: &[f64],
    eps_hat: &[f64],
    delta0: &[f64],
    cfg: &SurrogateConfig,
    mode: SurrogateMode,
    noise_stream: (u64, u64),
) -> Result<(Vec<f64>, OptTrace)> {
    match mode {
        SurrogateMode::ModelFitted => optimize_surrogate(oracle, x0, eps_hat, delta0, cfg),
        SurrogateMode::AdversarialMax => sign_iterate(oracle, x0, eps_hat, delta0, cfg, Direction::Ascend),
        SurrogateMode::RandomUniform { eps_noise } => {
            let mut r = rng::stream(noise_stream.0, Purpose::RandomDelta, noise_stream.1, 0);
            let noise = rng::uniform_vec(&mut r, x0.len(), eps_noise);
            let x: Vec<f64> = x0
                .iter()
                .zip(&noise)
                .map(|(a, n)| if cfg.clamp { (a + n).clamp(0.0, 1.0) } else { a + n })
                .collect();
            let loss = oracle.loss(&x, None, cfg.t_star, eps_hat)?;
            Ok((x, OptTrace::start(finite(loss, "surrogate_random", 0)?)))
        }
    }
}

/// Adam on the condition embedding, minimizing the conditional loss of the
/// surrogate, starting from `init` and returning the best embedding seen.
pub fn extract_embedding(
    oracle: &dyn LossOracle,
    x_star: &[f64],
    init: &Condition,
    cfg: &EmbeddingConfig,
    t_star: usize,
    eps_hat: &[f64],
) -> Result<(Condition, OptTrace)> {
    cfg.validate()?;
    if init.provenance != Provenance::Approximate {
        return Err(Error::contract(
            "embedding extraction starts from an approximate condition",
        ));
    }
    let mut phi = init.embedding.clone();
    let (loss, mut grad) = oracle.loss_grad(x_star, Some(&phi), t_star, eps_hat, GradTarget::Condition)?;
    let mut trace = OptTrace::start(finite(loss, "embedding", 0)?);
    let mut best = phi.clone();
    let mut adam = Adam::new(cfg.lr, &[phi.len()]);
    for i in 0..cfg.iters {
        if let Some(thr) = cfg.early_stop_loss {
            if trace.best_loss <= thr {
                trace.stopped_early = true;
                break;
            }
        }
        adam.begin_step();
        adam.update(0, &mut phi, &grad);
        let (loss, g) = oracle.loss_grad(x_star, Some(&phi), t_star, eps_hat, GradTarget::Condition)?;
        let loss = finite(loss, "embedding", i + 1)?;
        grad = g;
        trace.losses.push(loss);
        trace.iterations = i + 1;
        if loss < trace.best_loss {
            trace.best_loss = loss;
            best.clone_from(&phi);
        }
    }
    Ok((Condition::new(best, Provenance::Optimized), trace))
}

/// `L_cond(x0, φ*) − L_uncond(x0)`; members score high.
pub fn mofit_score(
    oracle: &dyn LossOracle,
    x0: &[f64],
    phi_star: &Condition,
    t_star: usize,
    eps_hat: &[f64],
) -> Result<f64> {
    clid_score(oracle, x0, phi_star, t_star, eps_hat)
}

/// `L_cond(x0, c) − L_uncond(x0)`; members score low under the true condition.
pub fn clid_score(
    oracle: &dyn LossOracle,
    x0: &[f64],
    cond: &Condition,
    t_star: usize,
    eps_hat: &[f64],
) -> Result<f64> {
    let lc = oracle.loss(x0, cond.as_input(), t_star, eps_hat)?;
    let lu = oracle.loss(x0, None, t_star, eps_hat)?;
    Ok(lc - lu)
}

/// Plain conditional loss; members score low.
pub fn loss_baseline_score(
    oracle: &dyn LossOracle,
    x0: &[f64],
    cond: &Condition,
    t_star: usize,
    eps_hat: &[f64],
) -> Result<f64> {
    oracle.loss(x0, cond.as_input(), t_star, eps_hat)
}

/// One audited sample. `gt_cond` is only known in the reference setting.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: u64,
    pub split: Split,
    pub image: Vec<f64>,
    pub gt_cond: Option<Condition>,
    pub approx_cond: Condition,
}

/// Queries for every sample of `dataset`, with approximate conditions drawn
/// from `(master_seed, ApproxCondition, id)`.
pub fn queries_from_dataset(dataset: &Dataset, fidelity: f64, master_seed: u64) -> Result<Vec<Query>> {
    let dim = dataset.config.cond_dim;
    dataset
        .samples
        .iter()
        .map(|s| {
            let seed = rng::stream_seed(master_seed, Purpose::ApproxCondition, s.id, 0);
            Ok(Query {
                id: s.id,
                split: s.split,
                image: s.image.clone(),
                gt_cond: Some(encode_condition(&s.spec, dim)),
                approx_cond: approximate_condition(&s.spec, fidelity, seed, dim)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub surrogate: SurrogateConfig,
    pub embedding: EmbeddingConfig,
    pub mode: SurrogateMode,
    pub master_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateConfig::default(),
            embedding: EmbeddingConfig::default(),
            mode: SurrogateMode::ModelFitted,
            master_seed: 0,
        }
    }
}

/// Everything measured for one query. Failed queries carry `error` and NaN
/// losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub sample_id: u64,
    pub split: Split,
    pub l_uncond: f64,
    pub l_cond_gt: Option<f64>,
    pub l_cond_approx: f64,
    pub l_cond_phi_star: f64,
    pub score_mofit: f64,
    pub score_clid_gt: Option<f64>,
    pub score_clid_approx: f64,
    pub score_loss_baseline: f64,
    /// Unconditional loss of the surrogate, and conditional loss of the
    /// surrogate under φ*.
    pub surrogate_loss: f64,
    pub embed_loss: f64,
    pub surrogate_iters: usize,
    pub embed_iters: usize,
    pub surrogate_trace: Vec<f64>,
    pub embed_trace: Vec<f64>,
    pub error: Option<String>,
}

impl AttackRecord {
    fn failed(q: &Query, e: &Error) -> Self {
        Self {
            sample_id: q.id,
            split: q.split,
            l_uncond: f64::NAN,
            l_cond_gt: q.gt_cond.as_ref().map(|_| f64::NAN),
            l_cond_approx: f64::NAN,
            l_cond_phi_star: f64::NAN,
            score_mofit: f64::NAN,
            score_clid_gt: q.gt_cond.as_ref().map(|_| f64::NAN),
            score_clid_approx: f64::NAN,
            score_loss_baseline: f64::NAN,
            surrogate_loss: f64::NAN,
            embed_loss: f64::NAN,
            surrogate_iters: 0,
            embed_iters: 0,
            surrogate_trace: Vec::new(),
            embed_trace: Vec::new(),
            error: Some(e.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn attack_one(oracle: &dyn LossOracle, q: &Query, cfg: &SuiteConfig) -> Result<AttackRecord> {
    let n = oracle.info().image_shape.len();
    if q.image.len() != n {
        return Err(Error::contract(format!(
            "query {} has {} pixels, model expects {n}",
            q.id,
            q.image.len()
        )));
    }
    let s = &cfg.surrogate;
    let t = s.t_star;
    let eps = target_noise(cfg.master_seed, q.id, s.eps_seed, n);
    let delta = delta_init(cfg.master_seed, q.id, s.delta_init_range, n);
    let (x_star, s_trace) =
        optimize_surrogate_variant(oracle, &q.image, &eps, &delta, s, cfg.mode, (cfg.master_seed, q.id))?;
    let (phi, e_trace) = extract_embedding(oracle, &x_star, &q.approx_cond, &cfg.embedding, t, &eps)?;

    let l_uncond = oracle.loss(&q.image, None, t, &eps)?;
    let l_cond_approx = oracle.loss(&q.image, q.approx_cond.as_input(), t, &eps)?;
    let l_cond_phi_star = oracle.loss(&q.image, phi.as_input(), t, &eps)?;
    let l_cond_gt = match &q.gt_cond {
        Some(c) => Some(oracle.loss(&q.image, c.as_input(), t, &eps)?),
        None => None,
    };
    for (v, what) in [
        (l_uncond, "l_uncond"),
        (l_cond_approx, "l_cond_approx"),
        (l_cond_phi_star, "l_cond_phi_star"),
    ] {
        if !v.is_finite() {
            return Err(Error::contract(format!("{what} is not finite")));
        }
    }
    Ok(AttackRecord {
        sample_id: q.id,
        split: q.split,
        l_uncond,
        l_cond_gt,
        l_cond_approx,
        l_cond_phi_star,
        score_mofit: l_cond_phi_star - l_uncond,
        score_clid_gt: l_cond_gt.map(|l| l - l_uncond),
        score_clid_approx: l_cond_approx - l_uncond,
        score_loss_baseline: l_cond_approx,
        surrogate_loss: s_trace.best_loss,
        embed_loss: e_trace.best_loss,
        surrogate_iters: s_trace.iterations,
        embed_iters: e_trace.iterations,
        surrogate_trace: s_trace.losses,
        embed_trace: e_trace.losses,
        error: None,
    })
}

/// Attacks every query concurrently. Results come back in query order; a
/// failing query yields a record with `error` set instead of aborting.
pub fn run_attack_suite(oracle: &dyn LossOracle, queries: &[Query], cfg: &SuiteConfig) -> Result<Vec<AttackRecord>> {
    cfg.surrogate.validate(oracle.info().steps)?;
    cfg.embedding.validate()?;
    let before = oracle.param_hash();
    let records: Vec<AttackRecord> = queries
        .par_iter()
        .map(|q| match attack_one(oracle, q, cfg) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("query {} failed: {e}", q.id);
                AttackRecord::failed(q, &e)
            }
        })
        .collect();
    if oracle.param_hash() != before {
        return Err(Error::contract("model parameters changed during the attack"));
    }
    Ok(records)
}
