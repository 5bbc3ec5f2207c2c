//! The evaluation surface the attacks need from a model: losses and their
//! gradients at a fixed `(t, eps)`. Implemented in-process by [`LocalOracle`]
//! and over TCP by the remote client in the oracle crate.

use serde::{Deserialize, Serialize};

use crate::diffusion::{eval_loss, ImageShape, NoiseSchedule};
use crate::nn::{DenoiserModel, Wrt};
use crate::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    Image,
    Condition,
}

/// Static description of an oracle's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub image_shape: ImageShape,
    pub cond_dim: usize,
    pub steps: usize,
    pub alpha_bars: Vec<f64>,
    pub version: u32,
}

impl OracleInfo {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_bars.len() != self.steps {
            return Err(Error::Protocol(format!(
                "alpha_bars has {} entries for T={}",
                self.alpha_bars.len(),
                self.steps
            )));
        }
        Ok(())
    }
}

pub trait LossOracle: Sync {
    fn info(&self) -> &OracleInfo;

    /// `cond == None` evaluates the unconditional (null-embedding) loss.
    fn loss(&self, x: &[f64], cond: Option<&[f64]>, t: usize, eps: &[f64]) -> Result<f64>;

    fn loss_grad(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        t: usize,
        eps: &[f64],
        target: GradTarget,
    ) -> Result<(f64, Vec<f64>)>;

    /// Fingerprint of the model parameters, when the oracle can see them.
    fn param_hash(&self) -> Option<String> {
        None
    }
}

/// In-process oracle over a borrowed model and schedule.
pub struct LocalOracle<'a> {
    model: &'a DenoiserModel,
    schedule: &'a NoiseSchedule,
    info: OracleInfo,
}

impl<'a> LocalOracle<'a> {
    pub fn new(model: &'a DenoiserModel, schedule: &'a NoiseSchedule) -> Self {
        let info = OracleInfo {
            image_shape: model.arch().image,
            cond_dim: model.arch().cond_dim,
            steps: schedule.steps(),
            alpha_bars: schedule.alpha_bars().to_vec(),
            version: PROTOCOL_VERSION,
        };
        Self { model, schedule, info }
    }

    pub fn model(&self) -> &DenoiserModel {
        self.model
    }
}

impl LossOracle for LocalOracle<'_> {
    fn info(&self) -> &OracleInfo {
        &self.info
    }

    fn loss(&self, x: &[f64], cond: Option<&[f64]>, t: usize, eps: &[f64]) -> Result<f64> {
        eval_loss(self.model, x, cond, t, eps, self.schedule)
    }

    fn loss_grad(
        &self,
        x: &[f64],
        cond: Option<&[f64]>,
        t: usize,
        eps: &[f64],
        target: GradTarget,
    ) -> Result<(f64, Vec<f64>)> {
        let wrt = match target {
            GradTarget::Image => Wrt::Image,
            GradTarget::Condition => Wrt::Condition,
        };
        self.model.loss_and_grad(x, cond, t, eps, self.schedule, wrt)
    }

    fn param_hash(&self) -> Option<String> {
        Some(self.model.param_hash())
    }
}
