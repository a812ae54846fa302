//! Noise schedule and deterministic DDIM update rules.
//!
//! `ᾱ_t` is indexed `0..=n_train` with `ᾱ_0 = 1`. Both update directions
//! share the same two-stage form: estimate the clean feature from `(z_t, ε)`,
//! then re-noise it to the destination level with the same `ε`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::LatentFeature;

pub const DEFAULT_N_TRAIN: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    n_train: usize,
    alpha_bar: Arc<[f64]>,
    tau: Vec<usize>,
}

/// `tau_i = round(i · n_train / steps)` for `i = 0..=steps`, halves rounded up.
pub fn timestep_grid(n_train: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > n_train {
        return Err(Error::InvalidSchedule(format!(
            "need 1 <= steps <= n_train, got steps={steps}, n_train={n_train}"
        )));
    }
    Ok((0..=steps)
        .map(|i| (2 * i * n_train + steps) / (2 * steps))
        .collect())
}

/// Linear β from `beta_start` to `beta_end` over `n_train` steps, sampled on
/// a uniform grid of `steps` steps.
pub fn make_schedule(
    n_train: usize,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<Schedule> {
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let tau = timestep_grid(n_train, steps)?;
    let mut alpha_bar = Vec::with_capacity(n_train + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for t in 1..=n_train {
        let beta = if n_train == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (n_train - 1) as f64
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    Ok(Schedule {
        n_train,
        alpha_bar: alpha_bar.into(),
        tau,
    })
}

impl Schedule {
    /// The default linear schedule (1e-4 → 0.02 over 1000 steps).
    pub fn default_with_steps(steps: usize) -> Result<Self> {
        make_schedule(DEFAULT_N_TRAIN, steps, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }

    /// Adopts an externally supplied `ᾱ_1..ᾱ_n` table (e.g. a backbone's).
    pub fn from_alpha_bar(table: &[f64], steps: usize) -> Result<Self> {
        let n_train = table.len();
        let tau = timestep_grid(n_train, steps)?;
        let mut prev = 1.0;
        for (k, &a) in table.iter().enumerate() {
            if !(a > 0.0 && a < prev) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar must be strictly decreasing in (0, 1); entry {} is {a}",
                    k + 1
                )));
            }
            prev = a;
        }
        let mut alpha_bar = Vec::with_capacity(n_train + 1);
        alpha_bar.push(1.0);
        alpha_bar.extend_from_slice(table);
        Ok(Self {
            n_train,
            alpha_bar: alpha_bar.into(),
            tau,
        })
    }

    /// Same `ᾱ` table on a different step grid.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Ok(Self {
            n_train: self.n_train,
            alpha_bar: Arc::clone(&self.alpha_bar),
            tau: timestep_grid(self.n_train, steps)?,
        })
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn steps(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    /// `ᾱ_1..ᾱ_n` (without the implicit `ᾱ_0 = 1`).
    pub fn alpha_bar_table(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or_else(|| {
            Error::InvalidTimestep(format!("t={t} beyond n_train={}", self.n_train))
        })
    }
}

/// `(z_t − √(1−ᾱ_t)·ε) / √ᾱ_t`; undefined at `t = 0`.
pub fn predict_x0(
    z_t: &LatentFeature,
    eps: &LatentFeature,
    t: usize,
    s: &Schedule,
) -> Result<LatentFeature> {
    if t == 0 {
        return Err(Error::InvalidTimestep(
            "x0 prediction needs t >= 1 (noise is unrecoverable at t = 0)".into(),
        ));
    }
    let ab = s.alpha_bar(t)?;
    let (sqrt_ab, sqrt_1m) = (ab.sqrt(), (1.0 - ab).sqrt());
    z_t.zip_map(eps, |z, e| (z - sqrt_1m * e) / sqrt_ab)
}

/// `√ᾱ_to · x0 + √(1−ᾱ_to) · ε`.
fn renoise(x0: &LatentFeature, eps: &LatentFeature, t_to: usize, s: &Schedule) -> Result<LatentFeature> {
    let ab = s.alpha_bar(t_to)?;
    let (sqrt_ab, sqrt_1m) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| sqrt_ab * x + sqrt_1m * e)
}

/// One inversion step toward higher noise. At `t_from = 0` the clean
/// estimate is `z_t` itself.
pub fn ddim_invert_step(
    z_t: &LatentFeature,
    t_from: usize,
    t_to: usize,
    eps: &LatentFeature,
    s: &Schedule,
) -> Result<LatentFeature> {
    if t_to <= t_from {
        return Err(Error::InvalidTimestep(format!(
            "inversion must increase t, got {t_from} -> {t_to}"
        )));
    }
    if t_from == 0 {
        z_t.ensure_same_shape(eps)?;
        return renoise(z_t, eps, t_to, s);
    }
    renoise(&predict_x0(z_t, eps, t_from, s)?, eps, t_to, s)
}

/// One sampling step toward lower noise.
pub fn ddim_sample_step(
    z_t: &LatentFeature,
    t_from: usize,
    t_to: usize,
    eps: &LatentFeature,
    s: &Schedule,
) -> Result<LatentFeature> {
    if t_to >= t_from {
        return Err(Error::InvalidTimestep(format!(
            "sampling must decrease t, got {t_from} -> {t_to}"
        )));
    }
    renoise(&predict_x0(z_t, eps, t_from, s)?, eps, t_to, s)
}

/// Classifier-free guidance: `ω·ε_cond + (1−ω)·ε_uncond`.
pub fn cfg_eps(
    eps_cond: &LatentFeature,
    eps_uncond: &LatentFeature,
    omega: f64,
) -> Result<LatentFeature> {
    eps_cond.zip_map(eps_uncond, |c, u| omega * c + (1.0 - omega) * u)
}
