//! End-to-end translation pipelines.
//!
//! * [`run_fbsdiff`]: long DDIM inversion, then a reconstruction trajectory
//!   and a CFG sampling trajectory advanced in lockstep, with 2D band
//!   substitution from the former into the latter during the early steps.
//! * [`run_fbsdiffpp`]: short inversion whose stored trajectory, replayed in
//!   reverse, guides sampling through cascaded per-axis substitution.
//! * [`run_localized`]: the FBSDiff++ loop with every step re-anchored to the
//!   source outside a spatial mask.
//! * [`run_style_specific`]: the FBSDiff++ loop with guiding features passed
//!   through a fixed spatial transformation.
//!
//! Grid index `j` names the latent at timestep `τ_j`; sampling runs from
//! `j = T` down to `j = 0`. Substitution is active for every produced index
//! `j ≥ k` where `k = round(λ·T)` is the switch step.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dct::dct2d;
use crate::denoiser::{CallCounts, Conditioning, Denoiser};
use crate::diffusion::{cfg_eps, ddim_invert_step, ddim_sample_step, Schedule};
use crate::error::{Error, Result};
use crate::fbs::{adafbs, blend_masked, fbs2d};
use crate::io::{load_tensor, save_tensor};
use crate::masks::{make_mask_2d, make_mask_pair_1d, BandMode, BandSpec, ThresholdKind};
use crate::report::{band_energies, BandEnergies, BandPartition};
use crate::stp::{stp_apply, stp_sample, ResizeKernel, SpatialTransformParams};
use crate::tensor::{FeatureMask, LatentFeature, Shape};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_INVERSION_STEPS: usize = 1000;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_OMEGA: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fbsdiff,
    Fbsdiffpp,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbsdiff" => Ok(Variant::Fbsdiff),
            "fbsdiffpp" => Ok(Variant::Fbsdiffpp),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Substitution schedule ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Substitution {
    /// Every early step, masked.
    #[default]
    Banded,
    /// Only the step that produces the switch latent.
    Once,
    /// Every early step with the whole spectrum replaced.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StpSettings {
    pub seed: u64,
    #[serde(default)]
    pub kernel: ResizeKernel,
    /// Fixed parameters instead of sampling from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SpatialTransformParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub band: BandSpec,
    pub steps: usize,
    /// Inversion steps; only FBSDiff reads this.
    pub inversion_steps: usize,
    pub lambda: f64,
    pub omega: f64,
    /// Seed of the initial sampling noise.
    pub seed: u64,
    #[serde(default)]
    pub substitution: Substitution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stp: Option<StpSettings>,
    /// Keep the guiding trajectory on disk instead of in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn fbsdiff(mode: BandMode) -> Self {
        Self {
            variant: Variant::Fbsdiff,
            band: BandSpec::default_absolute(mode),
            steps: DEFAULT_STEPS,
            inversion_steps: DEFAULT_INVERSION_STEPS,
            lambda: DEFAULT_LAMBDA,
            omega: DEFAULT_OMEGA,
            seed: 0,
            substitution: Substitution::Banded,
            stp: None,
            spill_dir: None,
        }
    }

    pub fn fbsdiffpp(mode: BandMode) -> Self {
        Self {
            variant: Variant::Fbsdiffpp,
            band: BandSpec::default_percentile(mode),
            inversion_steps: DEFAULT_STEPS,
            ..Self::fbsdiff(mode)
        }
    }

    pub fn mode(&self) -> BandMode {
        self.band.mode()
    }

    /// `round(λ·T)`, halves rounded up.
    pub fn switch_step(&self) -> usize {
        (self.lambda * self.steps as f64 + 0.5).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        BandSpec::new(self.band.kind(), self.band.band())?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.omega.is_finite() {
            return Err(Error::Config(format!("omega {} is not finite", self.omega)));
        }
        let wanted = match self.variant {
            Variant::Fbsdiff => ThresholdKind::Absolute,
            Variant::Fbsdiffpp => ThresholdKind::Percentile,
        };
        if self.band.kind() != wanted {
            return Err(Error::Config(format!(
                "{:?} needs {:?} thresholds, got {:?}",
                self.variant,
                wanted,
                self.band.kind()
            )));
        }
        if self.variant == Variant::Fbsdiff && self.inversion_steps < self.steps {
            return Err(Error::Config(format!(
                "inversion steps ({}) must be >= sampling steps ({})",
                self.inversion_steps, self.steps
            )));
        }
        Ok(())
    }

    fn require(&self, variant: Variant) -> Result<()> {
        if self.variant != variant {
            return Err(Error::Config(format!(
                "config is for {:?}, pipeline is {variant:?}",
                self.variant
            )));
        }
        self.validate()
    }
}

/// Closed-form denoiser call counts for a config.
///
/// Inversion costs one null-text call per step. Sampling costs two calls per
/// step (conditional and unconditional). FBSDiff adds one null-text call per
/// step for its reconstruction trajectory.
pub fn expected_calls(cfg: &PipelineConfig) -> CallCounts {
    let t = cfg.steps as u64;
    match cfg.variant {
        Variant::Fbsdiff => CallCounts {
            null_text: cfg.inversion_steps as u64 + 2 * t,
            target_text: t,
        },
        Variant::Fbsdiffpp => CallCounts {
            null_text: 2 * t,
            target_text: t,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Grid index of the latent this row describes.
    pub step: usize,
    pub timestep: usize,
    pub substituted: bool,
    pub energy: BandEnergies,
    pub fractions: [f64; 3],
    /// Energies of the guiding feature used at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide_energy: Option<BandEnergies>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub inversion_secs: f64,
    pub sampling_secs: f64,
}

impl PhaseTimings {
    pub fn total_secs(&self) -> f64 {
        self.inversion_secs + self.sampling_secs
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: LatentFeature,
    pub calls: CallCounts,
    pub switch_step: usize,
    /// The sampling latent at the switch step.
    pub switch_latent: LatentFeature,
    /// The guiding feature substituted into `switch_latent`, if any.
    pub guide_at_switch: Option<LatentFeature>,
    /// FBSDiff only: end point of the reconstruction trajectory.
    pub reconstruction: Option<LatentFeature>,
    pub stp_params: Option<SpatialTransformParams>,
    pub trace: Vec<TraceRow>,
    pub timings: PhaseTimings,
}

impl RunReport {
    /// Equality of everything except wall-clock timings, with tensors
    /// compared bit for bit.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        let opt_eq = |a: &Option<LatentFeature>, b: &Option<LatentFeature>| match (a, b) {
            (Some(x), Some(y)) => x.bit_eq(y),
            (None, None) => true,
            _ => false,
        };
        self.output.bit_eq(&other.output)
            && self.calls == other.calls
            && self.switch_step == other.switch_step
            && self.switch_latent.bit_eq(&other.switch_latent)
            && opt_eq(&self.guide_at_switch, &other.guide_at_switch)
            && opt_eq(&self.reconstruction, &other.reconstruction)
            && self.stp_params == other.stp_params
            && self.trace.len() == other.trace.len()
            && self.trace.iter().zip(&other.trace).all(|(a, b)| {
                a.step == b.step
                    && a.timestep == b.timestep
                    && a.substituted == b.substituted
                    && bits(&a.energy) == bits(&b.energy)
                    && a.guide_energy.as_ref().map(bits) == b.guide_energy.as_ref().map(bits)
            })
    }
}

fn bits(e: &BandEnergies) -> [u64; 3] {
    [e.low.to_bits(), e.mid.to_bits(), e.high.to_bits()]
}

/// Seeded standard-normal latent (ChaCha8 stream, row-major fill).
pub fn gaussian_noise(shape: Shape, seed: u64) -> LatentFeature {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentFeature::from_parts_unchecked(shape, data)
}

/// Denoiser wrapper that counts the calls a pipeline makes.
struct Counted<'a, D: Denoiser + ?Sized> {
    inner: &'a mut D,
    counts: CallCounts,
}

impl<'a, D: Denoiser + ?Sized> Counted<'a, D> {
    fn new(inner: &'a mut D) -> Self {
        Self {
            inner,
            counts: CallCounts::default(),
        }
    }

    fn eps(&mut self, z: &LatentFeature, t: usize, cond: Conditioning) -> Result<LatentFeature> {
        self.counts.record(cond);
        let eps = self.inner.predict_eps(z, t, cond)?;
        if eps.shape() != z.shape() {
            return Err(Error::Mismatch(format!(
                "denoiser returned {} for a {} input",
                eps.shape(),
                z.shape()
            )));
        }
        Ok(eps)
    }

    /// Inversion step; the step leaving `t = 0` queries the denoiser at `t = 1`.
    fn invert(&mut self, z: &LatentFeature, t_from: usize, t_to: usize, s: &Schedule) -> Result<LatentFeature> {
        let eps = self.eps(z, t_from.max(1), Conditioning::NullText)?;
        ddim_invert_step(z, t_from, t_to, &eps, s)
    }

    fn sample_null(&mut self, z: &LatentFeature, t_from: usize, t_to: usize, s: &Schedule) -> Result<LatentFeature> {
        let eps = self.eps(z, t_from, Conditioning::NullText)?;
        ddim_sample_step(z, t_from, t_to, &eps, s)
    }

    fn sample_cfg(
        &mut self,
        z: &LatentFeature,
        t_from: usize,
        t_to: usize,
        omega: f64,
        s: &Schedule,
    ) -> Result<LatentFeature> {
        let cond = self.eps(z, t_from, Conditioning::TargetText)?;
        let uncond = self.eps(z, t_from, Conditioning::NullText)?;
        ddim_sample_step(z, t_from, t_to, &cfg_eps(&cond, &uncond, omega)?, s)
    }
}

/// Plain CFG sampling from grid index `from` down to 0 on the grid of
/// `steps` steps. Pipelines use the same step, so replaying the late
/// section from the switch latent reproduces their output exactly.
pub fn sample_from<D: Denoiser + ?Sized>(
    z: &LatentFeature,
    from: usize,
    steps: usize,
    omega: f64,
    schedule: &Schedule,
    d: &mut D,
) -> Result<LatentFeature> {
    let grid = schedule.with_steps(steps)?;
    if from > steps {
        return Err(Error::Config(format!("start index {from} beyond {steps} steps")));
    }
    let tau = grid.tau();
    let mut counted = Counted::new(d);
    let mut z = z.clone();
    for i in (1..=from).rev() {
        z = counted.sample_cfg(&z, tau[i], tau[i - 1], omega, &grid)?;
    }
    Ok(z)
}

fn is_active(substitution: Substitution, j: usize, k: usize) -> bool {
    match substitution {
        Substitution::Banded | Substitution::Full => j >= k,
        Substitution::Once => j == k,
    }
}

fn trace_row(
    z: &LatentFeature,
    step: usize,
    timestep: usize,
    substituted: bool,
    guide: Option<&LatentFeature>,
    partition: &BandPartition,
) -> TraceRow {
    let energy = band_energies(&dct2d(z), partition);
    TraceRow {
        step,
        timestep,
        substituted,
        fractions: energy.fractions(),
        energy,
        guide_energy: guide.map(|g| band_energies(&dct2d(g), partition)),
    }
}

/// FBSDiff: `T_inv`-step inversion, then reconstruction and CFG sampling in
/// lockstep over `T` steps with 2D band substitution.
pub fn run_fbsdiff<D: Denoiser + ?Sized>(
    z0: &LatentFeature,
    cfg: &PipelineConfig,
    schedule: &Schedule,
    d: &mut D,
) -> Result<RunReport> {
    cfg.require(Variant::Fbsdiff)?;
    let shape = z0.shape();
    let mask = match cfg.substitution {
        Substitution::Full => FeatureMask::ones(shape.height, shape.width),
        _ => make_mask_2d(&cfg.band, shape.height, shape.width)?,
    };
    let partition = BandPartition::for_spec(&cfg.band);
    let k = cfg.switch_step();
    let mut counted = Counted::new(d);

    let started = Instant::now();
    let inv = schedule.with_steps(cfg.inversion_steps)?;
    let mut recon = z0.clone();
    for w in inv.tau().windows(2) {
        recon = counted.invert(&recon, w[0], w[1], &inv)?;
    }
    let inversion_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let grid = schedule.with_steps(cfg.steps)?;
    let tau = grid.tau();
    let mut z = gaussian_noise(shape, cfg.seed);
    let mut switch = (z.clone(), None);
    let mut trace = Vec::with_capacity(cfg.steps);
    for i in (1..=cfg.steps).rev() {
        let j = i - 1;
        recon = counted.sample_null(&recon, tau[i], tau[j], &grid)?;
        z = counted.sample_cfg(&z, tau[i], tau[j], cfg.omega, &grid)?;
        let active = is_active(cfg.substitution, j, k);
        if active {
            z = fbs2d(&recon, &z, &mask)?;
        }
        let guide = active.then_some(&recon);
        trace.push(trace_row(&z, j, tau[j], active, guide, &partition));
        if j == k {
            switch = (z.clone(), guide.cloned());
        }
    }
    let sampling_secs = started.elapsed().as_secs_f64();

    finish(
        counted.counts,
        cfg,
        RunReport {
            output: z,
            calls: counted.counts,
            switch_step: k,
            switch_latent: switch.0,
            guide_at_switch: switch.1,
            reconstruction: Some(recon),
            stp_params: None,
            trace,
            timings: PhaseTimings {
                inversion_secs,
                sampling_secs,
            },
        },
    )
}

fn finish(counts: CallCounts, cfg: &PipelineConfig, report: RunReport) -> Result<RunReport> {
    let expected = expected_calls(cfg);
    if counts != expected {
        return Err(Error::Config(format!(
            "denoiser call accounting broke: made {counts:?}, expected {expected:?}"
        )));
    }
    Ok(report)
}

/// How the FBSDiff++ loop treats guiding features.
enum Extension<'a> {
    Plain,
    Localized(&'a FeatureMask),
    Style(SpatialTransformParams, ResizeKernel),
}

/// FBSDiff++: `T`-step inversion, stored trajectory replayed in reverse as
/// guides for cascaded per-axis substitution.
pub fn run_fbsdiffpp<D: Denoiser + ?Sized>(
    z0: &LatentFeature,
    cfg: &PipelineConfig,
    schedule: &Schedule,
    d: &mut D,
) -> Result<RunReport> {
    cfg.require(Variant::Fbsdiffpp)?;
    run_guided(z0, cfg, schedule, d, Extension::Plain)
}

/// FBSDiff++ with every step re-anchored to the source trajectory outside
/// `m_src`. The late section keeps consuming the stored trajectory down to
/// `z_0`, so the output equals `z0` exactly wherever the mask is 0.
pub fn run_localized<D: Denoiser + ?Sized>(
    z0: &LatentFeature,
    m_src: &FeatureMask,
    cfg: &PipelineConfig,
    schedule: &Schedule,
    d: &mut D,
) -> Result<RunReport> {
    cfg.require(Variant::Fbsdiffpp)?;
    let m_f = m_src.downsample(z0.height(), z0.width())?;
    run_guided(z0, cfg, schedule, d, Extension::Localized(&m_f))
}

/// FBSDiff++ in low mode with guides passed through one spatial transform
/// drawn at the start of the run.
pub fn run_style_specific<D: Denoiser + ?Sized>(
    z0: &LatentFeature,
    cfg: &PipelineConfig,
    schedule: &Schedule,
    d: &mut D,
) -> Result<RunReport> {
    cfg.require(Variant::Fbsdiffpp)?;
    if cfg.mode() != BandMode::Low {
        return Err(Error::Config(format!(
            "style-specific creation is defined for low mode only, got {:?}",
            cfg.mode()
        )));
    }
    let settings = cfg
        .stp
        .ok_or_else(|| Error::Config("style-specific creation needs spatial transform settings".into()))?;
    let params = match settings.params {
        Some(p) => {
            p.validate(z0.height(), z0.width())?;
            p
        }
        None => stp_sample(z0.height(), z0.width(), settings.seed),
    };
    run_guided(z0, cfg, schedule, d, Extension::Style(params, settings.kernel))
}

fn run_guided<D: Denoiser + ?Sized>(
    z0: &LatentFeature,
    cfg: &PipelineConfig,
    schedule: &Schedule,
    d: &mut D,
    ext: Extension<'_>,
) -> Result<RunReport> {
    let shape = z0.shape();
    let (mask_w, mask_h) = match cfg.substitution {
        Substitution::Full => (
            FeatureMask::ones(shape.height, shape.width),
            FeatureMask::ones(shape.height, shape.width),
        ),
        _ => make_mask_pair_1d(&cfg.band, shape.height, shape.width)?,
    };
    let partition = BandPartition::for_spec(&cfg.band);
    let k = cfg.switch_step();
    let grid = schedule.with_steps(cfg.steps)?;
    let tau = grid.tau();
    let mut counted = Counted::new(d);

    let started = Instant::now();
    let mut store = GuideStore::new(cfg.spill_dir.as_deref())?;
    let mut z = z0.clone();
    store.push(&z)?;
    for i in 0..cfg.steps {
        z = counted.invert(&z, tau[i], tau[i + 1], &grid)?;
        // z_T is never a guide: sampling starts from fresh noise.
        if i + 1 < cfg.steps {
            store.push(&z)?;
        }
    }
    let inversion_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let stp = match &ext {
        Extension::Style(p, kernel) => Some((*p, *kernel)),
        _ => None,
    };
    let localized = matches!(ext, Extension::Localized(_));
    let mut z = gaussian_noise(shape, cfg.seed);
    let mut switch = (z.clone(), None);
    let mut trace = Vec::with_capacity(cfg.steps);
    for i in (1..=cfg.steps).rev() {
        let j = i - 1;
        z = counted.sample_cfg(&z, tau[i], tau[j], cfg.omega, &grid)?;
        let active = is_active(cfg.substitution, j, k);
        // The trajectory is consumed in order while guides are still needed.
        let source = if j >= k || localized {
            store.pop()?
        } else {
            None
        };
        let mut guide = None;
        if active {
            let src = source
                .as_ref()
                .ok_or_else(|| Error::Config(format!("guide for step {j} missing")))?;
            let g = match stp {
                Some((p, kernel)) => stp_apply(src, &p, kernel)?,
                None => src.clone(),
            };
            z = adafbs(&g, &z, &mask_w, &mask_h)?;
            guide = Some(g);
        }
        if let Extension::Localized(m_f) = ext {
            let src = source
                .as_ref()
                .ok_or_else(|| Error::Config(format!("source feature for step {j} missing")))?;
            z = blend_masked(&z, src, m_f)?;
        }
        trace.push(trace_row(&z, j, tau[j], active, guide.as_ref(), &partition));
        if j == k {
            switch = (z.clone(), guide);
        }
    }
    let sampling_secs = started.elapsed().as_secs_f64();
    store.clear()?;

    finish(
        counted.counts,
        cfg,
        RunReport {
            output: z,
            calls: counted.counts,
            switch_step: k,
            switch_latent: switch.0,
            guide_at_switch: switch.1,
            reconstruction: None,
            stp_params: stp.map(|(p, _)| p),
            trace,
            timings: PhaseTimings {
                inversion_secs,
                sampling_secs,
            },
        },
    )
}

/// Stack of stored trajectory features, in memory or as tensor files.
enum GuideStore {
    Memory(Vec<LatentFeature>),
    Disk { dir: PathBuf, len: usize },
}

impl GuideStore {
    fn new(spill_dir: Option<&Path>) -> Result<Self> {
        match spill_dir {
            None => Ok(GuideStore::Memory(Vec::new())),
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                Ok(GuideStore::Disk {
                    dir: dir.to_path_buf(),
                    len: 0,
                })
            }
        }
    }

    fn slot(dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("guide-{index:05}.fbt"))
    }

    fn push(&mut self, z: &LatentFeature) -> Result<()> {
        match self {
            GuideStore::Memory(v) => v.push(z.clone()),
            GuideStore::Disk { dir, len } => {
                save_tensor(z, Self::slot(dir, *len))?;
                *len += 1;
            }
        }
        Ok(())
    }

    fn pop(&mut self) -> Result<Option<LatentFeature>> {
        match self {
            GuideStore::Memory(v) => Ok(v.pop()),
            GuideStore::Disk { dir, len } => {
                if *len == 0 {
                    return Ok(None);
                }
                *len -= 1;
                let path = Self::slot(dir, *len);
                let z = load_tensor(&path)?;
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                Ok(Some(z))
            }
        }
    }

    fn clear(&mut self) -> Result<()> {
        while self.pop()?.is_some() {}
        Ok(())
    }
}
