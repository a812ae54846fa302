//! The noise-prediction boundary.
//!
//! Pipelines only ever talk to a [`Denoiser`]. [`AnalyticGaussianDenoiser`]
//! is the exact minimum-MSE noise predictor for Gaussian data and serves as
//! the verification oracle; the bridge client in [`crate::bridge`] forwards to
//! an external model.

use serde::{Deserialize, Serialize};

use crate::diffusion::Schedule;
use crate::error::{Error, Result};
use crate::tensor::{LatentFeature, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    NullText,
    TargetText,
}

impl Conditioning {
    pub fn id(self) -> &'static str {
        match self {
            Conditioning::NullText => "null_text",
            Conditioning::TargetText => "target_text",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "null_text" => Some(Conditioning::NullText),
            "target_text" => Some(Conditioning::TargetText),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub null_text: u64,
    pub target_text: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.null_text + self.target_text
    }

    pub fn record(&mut self, cond: Conditioning) {
        match cond {
            Conditioning::NullText => self.null_text += 1,
            Conditioning::TargetText => self.target_text += 1,
        }
    }

    pub fn since(&self, earlier: &CallCounts) -> CallCounts {
        CallCounts {
            null_text: self.null_text - earlier.null_text,
            target_text: self.target_text - earlier.target_text,
        }
    }
}

/// A noise predictor `ε(z_t, t, cond)`.
///
/// Implementations must be deterministic for identical inputs, return a
/// feature of the input's shape, and bump their call counter exactly once
/// per `predict_eps` call.
pub trait Denoiser: Send {
    fn predict_eps(
        &mut self,
        z_t: &LatentFeature,
        t: usize,
        cond: Conditioning,
    ) -> Result<LatentFeature>;

    fn call_counts(&self) -> CallCounts;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_eps(
        &mut self,
        z_t: &LatentFeature,
        t: usize,
        cond: Conditioning,
    ) -> Result<LatentFeature> {
        (**self).predict_eps(z_t, t, cond)
    }

    fn call_counts(&self) -> CallCounts {
        (**self).call_counts()
    }
}

/// Isotropic Gaussian data distribution `N(mean, variance·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: LatentFeature,
    pub variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: LatentFeature, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::Config(format!(
                "prior variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }
}

/// Toy priors: null text is `N(0, I)`, target text is `N(μ, I)` with a small
/// cosine pattern `μ = 0.2·cos(0.3·i·j + c)`.
pub fn toy_priors(shape: Shape) -> (GaussianPrior, GaussianPrior) {
    let null = GaussianPrior {
        mean: LatentFeature::zeros(shape),
        variance: 1.0,
    };
    let mean = LatentFeature::from_fn(shape, |c, i, j| 0.2 * (0.3 * (i * j) as f64 + c as f64).cos())
        .expect("cosine pattern is finite");
    (null, GaussianPrior { mean, variance: 1.0 })
}

/// Closed-form noise predictor for Gaussian data.
///
/// With `z_t = √ᾱ x0 + √(1−ᾱ) ε` and `x0 ~ N(μ, σ²I)` the posterior mean is
/// `m = (√ᾱ σ² z_t + (1−ᾱ) μ) / (ᾱ σ² + 1 − ᾱ)` and the optimal prediction is
/// `ε = (z_t − √ᾱ m) / √(1−ᾱ)`. Each conditioning id has its own prior so
/// guidance has a visible effect.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    schedule: Schedule,
    null_text: GaussianPrior,
    target_text: GaussianPrior,
    counts: CallCounts,
}

impl AnalyticGaussianDenoiser {
    pub fn new(schedule: Schedule, null_text: GaussianPrior, target_text: GaussianPrior) -> Result<Self> {
        null_text.mean.ensure_same_shape(&target_text.mean)?;
        Ok(Self {
            schedule,
            null_text,
            target_text,
            counts: CallCounts::default(),
        })
    }

    /// Same prior for both conditioning ids.
    pub fn unconditional(schedule: Schedule, prior: GaussianPrior) -> Self {
        Self {
            schedule,
            null_text: prior.clone(),
            target_text: prior,
            counts: CallCounts::default(),
        }
    }

    pub fn toy(schedule: Schedule, shape: Shape) -> Self {
        let (null_text, target_text) = toy_priors(shape);
        Self {
            schedule,
            null_text,
            target_text,
            counts: CallCounts::default(),
        }
    }

    pub fn prior(&self, cond: Conditioning) -> &GaussianPrior {
        match cond {
            Conditioning::NullText => &self.null_text,
            Conditioning::TargetText => &self.target_text,
        }
    }

    /// Posterior mean `E[x0 | z_t]`.
    pub fn posterior_mean(&self, z_t: &LatentFeature, t: usize, cond: Conditioning) -> Result<LatentFeature> {
        if t == 0 {
            return Err(Error::InvalidTimestep(
                "analytic denoiser is undefined at t = 0".into(),
            ));
        }
        let prior = self.prior(cond);
        z_t.ensure_same_shape(&prior.mean)?;
        let ab = self.schedule.alpha_bar(t)?;
        let sigma2 = prior.variance;
        if sigma2 == 0.0 {
            return Ok(prior.mean.clone());
        }
        let denom = ab * sigma2 + (1.0 - ab);
        let (gain, shrink) = (ab.sqrt() * sigma2 / denom, (1.0 - ab) / denom);
        z_t.zip_map(&prior.mean, |z, mu| gain * z + shrink * mu)
    }

    fn eps_from_mean(&self, z_t: &LatentFeature, mean: &LatentFeature, t: usize) -> Result<LatentFeature> {
        let ab = self.schedule.alpha_bar(t)?;
        let (sqrt_ab, sqrt_1m) = (ab.sqrt(), (1.0 - ab).sqrt());
        z_t.zip_map(mean, |z, m| (z - sqrt_ab * m) / sqrt_1m)
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_eps(
        &mut self,
        z_t: &LatentFeature,
        t: usize,
        cond: Conditioning,
    ) -> Result<LatentFeature> {
        self.counts.record(cond);
        let mean = self.posterior_mean(z_t, t, cond)?;
        self.eps_from_mean(z_t, &mean, t)
    }

    fn call_counts(&self) -> CallCounts {
        self.counts
    }
}
