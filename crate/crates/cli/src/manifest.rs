//! Sweep manifest: the draw list, where each result lives, and what is done.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qno_core::model::SystemParams;
use qno_core::sweep::{DrawOptions, DrawResult, SweepRanges};

use crate::error::{CliError, CliResult};
use crate::output::{write_json, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawEntry {
    pub index: usize,
    pub params: SystemParams,
    pub status: DrawStatus,
    /// Result file, relative to the sweep directory.
    pub result: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: String,
    pub tool_version: String,
    pub seed: u64,
    pub ranges: SweepRanges,
    pub options: DrawOptions,
    pub draws: Vec<DrawEntry>,
}

/// Contents of one per-draw result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub schema_version: String,
    pub index: usize,
    pub result: DrawResult,
}

pub fn result_name(index: usize) -> String {
    format!("draws/draw-{index:05}.json")
}

impl SweepManifest {
    pub fn new(seed: u64, ranges: SweepRanges, options: DrawOptions, params: &[SystemParams]) -> Self {
        SweepManifest {
            schema_version: SCHEMA_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            ranges,
            options,
            draws: params
                .iter()
                .enumerate()
                .map(|(index, &params)| DrawEntry {
                    index,
                    params,
                    status: DrawStatus::Pending,
                    result: result_name(index),
                    error: None,
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    /// True when `other` describes the same sweep, so its progress can be reused.
    pub fn same_sweep(&self, other: &SweepManifest) -> bool {
        self.seed == other.seed
            && self.ranges == other.ranges
            && self.options == other.options
            && self.draws.len() == other.draws.len()
            && self.draws.iter().zip(&other.draws).all(|(a, b)| a.params == b.params)
    }

    /// Draws still to run: pending ones, and done ones whose file is gone.
    /// Failures are final.
    pub fn pending(&self, dir: &Path) -> Vec<usize> {
        self.draws
            .iter()
            .filter(|d| match d.status {
                DrawStatus::Pending => true,
                DrawStatus::Done => !dir.join(&d.result).exists(),
                DrawStatus::Failed => false,
            })
            .map(|d| d.index)
            .collect()
    }
}
