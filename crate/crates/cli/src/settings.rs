//! Run settings shared by flags, TOML config files and manifests.
//!
//! Every field is optional so a config file and the command line can be
//! layered; [`Settings::resolve`] fills the gaps with defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fbsdiff_core::bridge::Dtype;
use fbsdiff_core::masks::{
    DEFAULT_PT_HP, DEFAULT_PT_LP, DEFAULT_PT_MP, DEFAULT_TH_HP, DEFAULT_TH_LP, DEFAULT_TH_MP,
};
use fbsdiff_core::{
    Band, BandMode, BandSpec, PipelineConfig, ResizeKernel, StpSettings, Substitution, ThresholdKind,
    Variant,
};

use crate::error::CliError;

/// Parses a lowercase wire name through the type's serde representation.
fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Two comma-separated numbers, e.g. `7,50`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair(pub f64, pub f64);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        Ok(Pair(num(a)?, num(b)?))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    Analytic,
    Bridge,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// fbsdiff or fbsdiffpp
    #[arg(long, value_parser = parse_named::<Variant>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,

    /// low, mid or high
    #[arg(long, value_parser = parse_named::<BandMode>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<BandMode>,

    /// Absolute low-pass threshold on u+v
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th_lp: Option<f64>,

    /// Absolute high-pass threshold on u+v
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th_hp: Option<f64>,

    /// Absolute mid band as `lower,upper`
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th_mp: Option<Pair>,

    /// Low-pass percentile
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt_lp: Option<f64>,

    /// High-pass percentile
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt_hp: Option<f64>,

    /// Mid-band percentiles as `lower,upper`
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt_mp: Option<Pair>,

    /// Sampling steps T
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,

    /// Inversion steps (fbsdiff only)
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_steps: Option<usize>,

    /// Fraction of sampling steps with substitution
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,

    /// Guidance scale
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,

    /// Seed of the initial noise
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// banded, once or full
    #[arg(long, value_parser = parse_named::<Substitution>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<Substitution>,

    /// Binary spatial mask (tensor file, 1 channel) for localized editing
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,

    /// Enables style-specific creation with transforms drawn from this seed
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stp_seed: Option<u64>,

    /// bilinear or nearest
    #[arg(long, value_parser = parse_named::<ResizeKernel>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stp_kernel: Option<ResizeKernel>,

    /// Keep guiding features on disk under this directory
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill_dir: Option<PathBuf>,

    /// analytic or bridge
    #[arg(long, value_parser = parse_named::<DenoiserKind>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<DenoiserKind>,

    /// Mean of the null-text prior (tensor file); zeros if absent
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_mean: Option<PathBuf>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_var: Option<f64>,

    /// Mean of the target-text prior (tensor file); a fixed cosine pattern if absent
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<PathBuf>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_var: Option<f64>,

    /// Training steps the bridge schedule must have
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,

    /// Request payload dtype for the bridge: f32 or f64
    #[arg(long, value_parser = parse_named::<Dtype>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_dtype: Option<Dtype>,

    /// Reconnect attempts after a bridge transport failure
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay_fields!(base, top;
            variant, mode, th_lp, th_hp, th_mp, pt_lp, pt_hp, pt_mp, steps, inversion_steps,
            lambda, omega, seed, substitution, mask, stp_seed, stp_kernel, spill_dir, denoiser,
            null_mean, null_var, target_mean, target_var, n_train, wire_dtype, retries,
        )
    }

    pub fn from_toml_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn variant(&self) -> Variant {
        self.variant.unwrap_or(Variant::Fbsdiffpp)
    }

    pub fn band_kind(&self) -> ThresholdKind {
        match self.variant() {
            Variant::Fbsdiff => ThresholdKind::Absolute,
            Variant::Fbsdiffpp => ThresholdKind::Percentile,
        }
    }

    /// Band for `mode` from the thresholds matching the variant.
    pub fn band_spec(&self, mode: BandMode) -> Result<BandSpec, CliError> {
        let band = match (self.band_kind(), mode) {
            (ThresholdKind::Absolute, BandMode::Low) => Band::Low { cutoff: self.th_lp.unwrap_or(DEFAULT_TH_LP) },
            (ThresholdKind::Absolute, BandMode::High) => Band::High { cutoff: self.th_hp.unwrap_or(DEFAULT_TH_HP) },
            (ThresholdKind::Absolute, BandMode::Mid) => {
                let Pair(lower, upper) = self.th_mp.unwrap_or(Pair(DEFAULT_TH_MP.0, DEFAULT_TH_MP.1));
                Band::Mid { lower, upper }
            }
            (ThresholdKind::Percentile, BandMode::Low) => Band::Low { cutoff: self.pt_lp.unwrap_or(DEFAULT_PT_LP) },
            (ThresholdKind::Percentile, BandMode::High) => Band::High { cutoff: self.pt_hp.unwrap_or(DEFAULT_PT_HP) },
            (ThresholdKind::Percentile, BandMode::Mid) => {
                let Pair(lower, upper) = self.pt_mp.unwrap_or(Pair(DEFAULT_PT_MP.0, DEFAULT_PT_MP.1));
                Band::Mid { lower, upper }
            }
        };
        Ok(BandSpec::new(self.band_kind(), band)?)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let mode = self.mode.unwrap_or(BandMode::Low);
        let mut cfg = match self.variant() {
            Variant::Fbsdiff => PipelineConfig::fbsdiff(mode),
            Variant::Fbsdiffpp => PipelineConfig::fbsdiffpp(mode),
        };
        cfg.band = self.band_spec(mode)?;
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.inversion_steps {
            cfg.inversion_steps = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.omega {
            cfg.omega = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.substitution {
            cfg.substitution = v;
        }
        cfg.stp = self.stp_seed.map(|seed| StpSettings {
            seed,
            kernel: self.stp_kernel.unwrap_or_default(),
            params: None,
        });
        cfg.spill_dir = self.spill_dir.clone();
        cfg.validate()?;
        if cfg.stp.is_some() && self.mask.is_some() {
            return Err(CliError::Config(
                "--stp-seed and --mask select different pipelines; pick one".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn denoiser_kind(&self) -> DenoiserKind {
        self.denoiser.unwrap_or(DenoiserKind::Analytic)
    }

    /// Every field filled in, as recorded in manifests.
    pub fn resolved(&self) -> Result<Settings, CliError> {
        let cfg = self.pipeline_config()?;
        let mode = cfg.mode();
        let mut out = self.clone();
        out.variant = Some(cfg.variant);
        out.mode = Some(mode);
        match cfg.band.band() {
            Band::Low { cutoff } if cfg.band.kind() == ThresholdKind::Absolute => out.th_lp = Some(cutoff),
            Band::High { cutoff } if cfg.band.kind() == ThresholdKind::Absolute => out.th_hp = Some(cutoff),
            Band::Mid { lower, upper } if cfg.band.kind() == ThresholdKind::Absolute => out.th_mp = Some(Pair(lower, upper)),
            Band::Low { cutoff } => out.pt_lp = Some(cutoff),
            Band::High { cutoff } => out.pt_hp = Some(cutoff),
            Band::Mid { lower, upper } => out.pt_mp = Some(Pair(lower, upper)),
        }
        out.steps = Some(cfg.steps);
        out.inversion_steps = Some(cfg.inversion_steps);
        out.lambda = Some(cfg.lambda);
        out.omega = Some(cfg.omega);
        out.seed = Some(cfg.seed);
        out.substitution = Some(cfg.substitution);
        if out.stp_seed.is_some() {
            out.stp_kernel = Some(out.stp_kernel.unwrap_or_default());
        }
        out.denoiser = Some(self.denoiser_kind());
        match self.denoiser_kind() {
            DenoiserKind::Analytic => {
                out.null_var = Some(self.null_var.unwrap_or(1.0));
                out.target_var = Some(self.target_var.unwrap_or(1.0));
            }
            DenoiserKind::Bridge => {
                out.n_train = Some(self.n_train.unwrap_or(fbsdiff_core::diffusion::DEFAULT_N_TRAIN));
                out.wire_dtype = Some(self.wire_dtype.unwrap_or_default());
                out.retries = Some(self.retries.unwrap_or(2));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Settings = toml::from_str("steps = 20\nomega = 3.0\nmode = \"high\"\n").unwrap();
        let flags = Settings {
            steps: Some(10),
            ..Settings::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.steps, Some(10));
        assert_eq!(merged.omega, Some(3.0));
        assert_eq!(merged.mode, Some(BandMode::High));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Settings>("stepz = 3").is_err());
    }

    #[test]
    fn pairs_parse() {
        assert_eq!("7,50".parse::<Pair>().unwrap(), Pair(7.0, 50.0));
        assert!("7".parse::<Pair>().is_err());
        let s: Settings = toml::from_str("pt_mp = [7.0, 50.0]").unwrap();
        assert_eq!(s.pt_mp, Some(Pair(7.0, 50.0)));
    }

    #[test]
    fn defaults_resolve_to_fbsdiffpp_low() {
        let cfg = Settings::default().pipeline_config().unwrap();
        assert_eq!(cfg, PipelineConfig::fbsdiffpp(BandMode::Low));
        let r = Settings::default().resolved().unwrap();
        assert_eq!(r.pt_lp, Some(60.0));
        assert_eq!(r.steps, Some(50));
    }

    #[test]
    fn resolved_settings_reproduce_the_config() {
        let s = Settings {
            variant: Some(Variant::Fbsdiff),
            mode: Some(BandMode::Mid),
            th_mp: Some(Pair(3.0, 9.0)),
            steps: Some(10),
            ..Settings::default()
        };
        let r = s.resolved().unwrap();
        let back: Settings = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.pipeline_config().unwrap(), s.pipeline_config().unwrap());
    }
}
