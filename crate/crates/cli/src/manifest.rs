//! Run manifests and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fbsdiff_core::pipeline::{PhaseTimings, TraceRow};
use fbsdiff_core::{CallCounts, Shape, SpatialTransformParams};

use crate::error::CliError;
use crate::settings::Settings;

pub const MANIFEST_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUTPUT_FILE: &str = "output.fbt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Fbsdiff,
    Fbsdiffpp,
    Localized,
    StyleSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calls {
    pub null_text: u64,
    pub target_text: u64,
    pub total: u64,
}

impl From<CallCounts> for Calls {
    fn from(c: CallCounts) -> Self {
        Calls {
            null_text: c.null_text,
            target_text: c.target_text,
            total: c.total(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub inversion_secs: f64,
    pub sampling_secs: f64,
    pub total_secs: f64,
}

impl From<PhaseTimings> for Timings {
    fn from(t: PhaseTimings) -> Self {
        Timings {
            inversion_secs: t.inversion_secs,
            sampling_secs: t.sampling_secs,
            total_secs: t.total_secs(),
        }
    }
}

/// Everything needed to reproduce one run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub pipeline: PipelineKind,
    pub input: PathBuf,
    pub output: PathBuf,
    pub shape: Shape,
    /// Resolved settings; every default is written out.
    pub settings: Settings,
    pub switch_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stp_params: Option<SpatialTransformParams>,
    pub calls: Calls,
    /// Closed-form count for the config; equals `calls` on every successful run.
    pub expected_calls: Calls,
    pub trace: Vec<TraceRow>,
    /// Wall-clock per phase. Informational.
    pub timings: Timings,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Config(format!(
                "{}: manifest format {} is not supported",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<Vec<u8>, CliError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let written = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    written.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path.display(), e)
    })
}
