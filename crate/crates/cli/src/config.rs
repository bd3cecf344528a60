use std::path::{Path, PathBuf};

use anyhow::Result;
use quadpose::align::MatchPolicy;
use quadpose::pipeline::PipelineConfig;
use serde::Deserialize;

use crate::invalid;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub sigma_px: Option<f64>,
    pub sigma_code: Option<f64>,
    pub seed: Option<u64>,
    pub occlude: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: Option<usize>,
    pub cameras: Option<usize>,
    pub gait: Option<String>,
    pub radius: Option<f64>,
    pub height: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub noise_step: Option<f64>,
    pub seed: Option<u64>,
    pub mirror: Option<bool>,
    pub free_root: Option<bool>,
    pub surrogate: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub dedup: Option<f64>,
    pub dims: Option<[usize; 3]>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub corpus: Option<usize>,
    pub seed: Option<u64>,
    pub components: Option<usize>,
}

/// Settings read from `--config`. Every field is optional; flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub skeleton: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub shape_model: Option<PathBuf>,
    pub known_shape: Option<bool>,
    pub camera: Option<usize>,
    pub lambda2d: Option<f64>,
    pub match_policy: Option<MatchPolicy>,
    pub pipeline: Option<PipelineConfig>,
    pub oracle: OracleConfig,
    pub synth: SynthConfig,
    pub prior_training: PriorConfig,
    pub shape: ShapeConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("bad config {}: {e}", path.display())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.skeleton, &mut cfg.prior, &mut cfg.shape_model]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
