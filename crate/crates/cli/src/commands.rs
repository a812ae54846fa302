use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use fbsdiff_core::bridge::{connect, BridgeClient, BridgeStream, Dtype, BRIDGE_ADDR_ENV};
use fbsdiff_core::diffusion::DEFAULT_N_TRAIN;
use fbsdiff_core::io::encode_tensor;
use fbsdiff_core::pipeline::expected_calls;
use fbsdiff_core::report::band_correlation;
use fbsdiff_core::{
    band_energies, dct2d, load_tensor, run_fbsdiff, run_fbsdiffpp, run_localized,
    run_style_specific, toy_priors, AnalyticGaussianDenoiser, BandClass, BandMode, BandPartition,
    CallCounts, Conditioning, Denoiser, FeatureMask, GaussianPrior, LatentFeature, RunReport,
    Schedule, Shape, Variant,
};

use crate::error::CliError;
use crate::manifest::{write_atomic, PipelineKind, RunManifest, MANIFEST_FILE, MANIFEST_FORMAT, OUTPUT_FILE};
use crate::settings::{DenoiserKind, Pair, Settings};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Source latent feature (tensor file)
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Directory receiving output.fbt and manifest.json
    #[arg(long)]
    pub out_dir: PathBuf,

    /// TOML file with settings; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Rerun from a manifest; its input and settings are the base layer
    #[arg(long)]
    pub replay: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Cutoffs for the band selected by --mode (low or high), comma separated
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub thresholds: Vec<f64>,

    /// Low/high partition `lower,upper` used for the correlation columns
    #[arg(long)]
    pub bands: Option<Pair>,

    /// Parallel runs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// CSV destination; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Keep each run's output and manifest under run-NNN subdirectories
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,

    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Args)]
pub struct BandReportArgs {
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,
}

fn layered(config: Option<&Path>, base: Settings, flags: Settings) -> Result<Settings, CliError> {
    let base = match config {
        Some(path) => base.overlay(Settings::from_toml_file(path)?),
        None => base,
    };
    Ok(base.overlay(flags))
}

/// Tensors a run reads besides the source.
struct Inputs {
    z0: LatentFeature,
    mask: Option<FeatureMask>,
    null_mean: Option<LatentFeature>,
    target_mean: Option<LatentFeature>,
}

impl Inputs {
    fn load(input: &Path, settings: &Settings) -> Result<Inputs, CliError> {
        let z0 = load_tensor(input)?;
        let mask = match &settings.mask {
            Some(p) => Some(FeatureMask::from_feature(&load_tensor(p)?)?),
            None => None,
        };
        let mean = |p: &Option<PathBuf>| -> Result<Option<LatentFeature>, CliError> {
            let Some(p) = p else { return Ok(None) };
            let m = load_tensor(p)?;
            if m.shape() != z0.shape() {
                return Err(CliError::Config(format!(
                    "prior mean {} has shape {}, input has {}",
                    p.display(),
                    m.shape(),
                    z0.shape()
                )));
            }
            Ok(Some(m))
        };
        let (null_mean, target_mean) = match settings.denoiser_kind() {
            DenoiserKind::Analytic => (mean(&settings.null_mean)?, mean(&settings.target_mean)?),
            DenoiserKind::Bridge => (None, None),
        };
        Ok(Inputs { z0, mask, null_mean, target_mean })
    }
}

/// Bridge denoiser that reconnects and redoes the handshake after a
/// transport failure, up to `retries` times per call.
struct ReconnectingBridge {
    addr: String,
    shape: Shape,
    n_train: usize,
    dtype: Dtype,
    retries: u32,
    alpha_bar: Vec<f64>,
    client: BridgeClient<BridgeStream>,
    counts: CallCounts,
}

fn open_bridge(addr: &str, shape: Shape, n_train: usize, dtype: Dtype) -> fbsdiff_core::Result<(BridgeClient<BridgeStream>, Vec<f64>)> {
    let mut client = BridgeClient::new(connect(addr)?).with_wire_dtype(dtype);
    let alpha_bar = client.handshake(shape, n_train)?.alpha_bar.clone();
    Ok((client, alpha_bar))
}

impl ReconnectingBridge {
    fn connect(addr: String, shape: Shape, n_train: usize, dtype: Dtype, retries: u32) -> fbsdiff_core::Result<Self> {
        let mut attempt = 0;
        let (client, alpha_bar) = loop {
            match open_bridge(&addr, shape, n_train, dtype) {
                Err(e) if e.is_retryable() && attempt < retries => attempt += 1,
                other => break other?,
            }
        };
        Ok(Self { addr, shape, n_train, dtype, retries, alpha_bar, client, counts: CallCounts::default() })
    }

    fn reconnect(&mut self) -> fbsdiff_core::Result<()> {
        let (client, alpha_bar) = open_bridge(&self.addr, self.shape, self.n_train, self.dtype)?;
        if alpha_bar != self.alpha_bar {
            return Err(fbsdiff_core::Error::Protocol(
                "schedule changed across reconnect".into(),
            ));
        }
        self.client = client;
        Ok(())
    }
}

impl Denoiser for ReconnectingBridge {
    fn predict_eps(&mut self, z_t: &LatentFeature, t: usize, cond: Conditioning) -> fbsdiff_core::Result<LatentFeature> {
        let mut attempt = 0;
        loop {
            let result = self.client.predict(z_t, t, cond);
            match result {
                Ok(eps) => {
                    self.counts.record(cond);
                    return Ok(eps);
                }
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    match self.reconnect() {
                        Ok(()) => {}
                        Err(e) if e.is_retryable() => {}
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn call_counts(&self) -> CallCounts {
        self.counts
    }
}

fn build_denoiser(settings: &Settings, inputs: &Inputs, steps: usize) -> Result<(Schedule, Box<dyn Denoiser>), CliError> {
    let shape = inputs.z0.shape();
    match settings.denoiser_kind() {
        DenoiserKind::Analytic => {
            let schedule = Schedule::default_with_steps(steps)?;
            let (toy_null, toy_target) = toy_priors(shape);
            let null = GaussianPrior::new(
                inputs.null_mean.clone().unwrap_or(toy_null.mean),
                settings.null_var.unwrap_or(toy_null.variance),
            )?;
            let target = GaussianPrior::new(
                inputs.target_mean.clone().unwrap_or(toy_target.mean),
                settings.target_var.unwrap_or(toy_target.variance),
            )?;
            let d = AnalyticGaussianDenoiser::new(schedule.clone(), null, target)?;
            Ok((schedule, Box::new(d)))
        }
        DenoiserKind::Bridge => {
            let addr = std::env::var(BRIDGE_ADDR_ENV).map_err(|_| {
                CliError::Config(format!("--denoiser bridge needs {BRIDGE_ADDR_ENV} to be set"))
            })?;
            let bridge = ReconnectingBridge::connect(
                addr,
                shape,
                settings.n_train.unwrap_or(DEFAULT_N_TRAIN),
                settings.wire_dtype.unwrap_or_default(),
                settings.retries.unwrap_or(2),
            )?;
            let schedule = Schedule::from_alpha_bar(&bridge.alpha_bar, steps)?;
            Ok((schedule, Box::new(bridge)))
        }
    }
}

/// Runs the pipeline the settings select and builds its manifest.
fn execute(settings: &Settings, inputs: &Inputs, input: &Path, output: &Path) -> Result<(RunReport, RunManifest), CliError> {
    let cfg = settings.pipeline_config()?;
    let resolved = settings.resolved()?;
    let (schedule, mut d) = build_denoiser(settings, inputs, cfg.steps)?;
    let z0 = &inputs.z0;
    let (kind, report) = match (&inputs.mask, cfg.stp) {
        (Some(mask), _) => (PipelineKind::Localized, run_localized(z0, mask, &cfg, &schedule, &mut d)?),
        (None, Some(_)) => (PipelineKind::StyleSpecific, run_style_specific(z0, &cfg, &schedule, &mut d)?),
        (None, None) => match cfg.variant {
            Variant::Fbsdiff => (PipelineKind::Fbsdiff, run_fbsdiff(z0, &cfg, &schedule, &mut d)?),
            Variant::Fbsdiffpp => (PipelineKind::Fbsdiffpp, run_fbsdiffpp(z0, &cfg, &schedule, &mut d)?),
        },
    };
    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        pipeline: kind,
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        shape: z0.shape(),
        settings: resolved,
        switch_step: report.switch_step,
        stp_params: report.stp_params,
        calls: report.calls.into(),
        expected_calls: expected_calls(&cfg).into(),
        trace: report.trace.clone(),
        timings: report.timings.into(),
    };
    Ok((report, manifest))
}

fn write_run(out_dir: &Path, report: &RunReport, manifest: &RunManifest) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
    write_atomic(&out_dir.join(OUTPUT_FILE), &encode_tensor(&report.output)?)?;
    write_atomic(&out_dir.join(MANIFEST_FILE), &manifest.to_json()?)
}

pub fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (base, replay_input) = match &args.replay {
        Some(path) => {
            let m = RunManifest::load(path)?;
            (m.settings, Some(m.input))
        }
        None => (Settings::default(), None),
    };
    let settings = layered(args.config.as_deref(), base, args.settings)?;
    settings.pipeline_config()?;
    let input = args
        .input
        .or(replay_input)
        .ok_or_else(|| CliError::Config("--input is required (or --replay a manifest)".into()))?;
    let inputs = Inputs::load(&input, &settings)?;
    let output = args.out_dir.join(OUTPUT_FILE);
    let (report, manifest) = execute(&settings, &inputs, &input, &output)?;
    write_run(&args.out_dir, &report, &manifest)?;
    println!(
        "{}: {} denoiser calls, switch step {}",
        output.display(),
        manifest.calls.total,
        manifest.switch_step
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub low_corr: f64,
    pub high_corr: f64,
}

/// Settings for one sweep point: the cutoff of the swept band replaced.
fn with_cutoff(settings: &Settings, mode: BandMode, cutoff: f64) -> Settings {
    let mut s = settings.clone();
    match (settings.variant(), mode) {
        (Variant::Fbsdiff, BandMode::Low) => s.th_lp = Some(cutoff),
        (Variant::Fbsdiff, _) => s.th_hp = Some(cutoff),
        (Variant::Fbsdiffpp, BandMode::Low) => s.pt_lp = Some(cutoff),
        (Variant::Fbsdiffpp, _) => s.pt_hp = Some(cutoff),
    }
    s
}

pub fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let settings = layered(args.config.as_deref(), Settings::default(), args.settings)?;
    let mode = settings.mode.unwrap_or(BandMode::Low);
    if mode == BandMode::Mid {
        return Err(CliError::Config("sweeps vary a low or high cutoff; --mode mid has two".into()));
    }
    if args.thresholds.is_empty() {
        return Err(CliError::Config("--thresholds needs at least one value".into()));
    }
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    let points: Vec<Settings> = args
        .thresholds
        .iter()
        .map(|&c| with_cutoff(&settings, mode, c))
        .collect();
    for p in &points {
        p.pipeline_config()?;
    }
    // Narrowest substituted band when sweeping low, widest when sweeping high,
    // so every point's band covers the measured low band.
    let Pair(lower, upper) = args.bands.unwrap_or_else(|| {
        let pick = match mode {
            BandMode::Low => args.thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            _ => args.thresholds.iter().copied().fold(f64::INFINITY, f64::min),
        };
        Pair(pick, pick)
    });
    let partition = BandPartition::new(settings.band_kind(), lower, upper)?;

    let inputs = Inputs::load(&args.input, &settings)?;
    let source = dct2d(&inputs.z0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<SweepRow, CliError>> = pool.install(|| {
        points
            .par_iter()
            .zip(args.thresholds.par_iter())
            .enumerate()
            .map(|(i, (point, &threshold))| {
                let run_dir = args.runs_dir.as_ref().map(|d| d.join(format!("run-{i:03}")));
                let output = run_dir.as_ref().map_or_else(|| PathBuf::from(OUTPUT_FILE), |d| d.join(OUTPUT_FILE));
                let (report, manifest) = execute(point, &inputs, &args.input, &output)?;
                if let Some(dir) = &run_dir {
                    write_run(dir, &report, &manifest)?;
                }
                let out = dct2d(&report.output);
                Ok(SweepRow {
                    threshold,
                    low_corr: band_correlation(&out, &source, &partition, BandClass::Low)?,
                    high_corr: band_correlation(&out, &source, &partition, BandClass::High)?,
                })
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    match &args.out {
        Some(path) => write_atomic(path, &bytes),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::io("stdout", e)),
    }
}

#[derive(Debug, Serialize)]
struct BandReport {
    input: PathBuf,
    shape: Shape,
    partition: BandPartition,
    energies: Bands,
    fractions: Bands,
}

#[derive(Debug, Serialize)]
struct Bands {
    low: f64,
    mid: f64,
    high: f64,
}

pub fn cmd_band_report(args: BandReportArgs) -> Result<(), CliError> {
    let settings = layered(args.config.as_deref(), Settings::default(), args.settings)?;
    let spec = settings.band_spec(settings.mode.unwrap_or(BandMode::Mid))?;
    let partition = BandPartition::for_spec(&spec);
    let x = load_tensor(&args.input)?;
    let e = band_energies(&dct2d(&x), &partition);
    let [fl, fm, fh] = e.fractions();
    let report = BandReport {
        input: args.input,
        shape: x.shape(),
        partition,
        energies: Bands { low: e.low, mid: e.mid, high: e.high },
        fractions: Bands { low: fl, mid: fm, high: fh },
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
