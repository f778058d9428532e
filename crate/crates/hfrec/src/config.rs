use std::path::{Path, PathBuf};

use hfrec_core::cpc_net::{AdamWConfig, DenoiserConfig};
use hfrec_core::degradation::DegradationConfig;
use hfrec_core::hog::HogConfig;
use hfrec_core::hr_loss::{LossConfig, LossSelection};
use hfrec_core::metrics::WarpBoundary;
use hfrec_core::synth::{SynthParams, TextureKind};
use hfrec_core::wavelet::SubbandWeights;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindCount {
    pub kind: TextureKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kinds: Vec<KindCount>,
    #[serde(default)]
    pub params: SynthParams,
    /// Every `holdout_every`-th clip (1-based) goes to the evaluation split.
    #[serde(default = "default_holdout")]
    pub holdout_every: usize,
}

fn default_holdout() -> usize {
    4
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kinds: vec![
                KindCount {
                    kind: TextureKind::TranslatingSinusoid,
                    count: 2,
                },
                KindCount {
                    kind: TextureKind::TranslatingNoiseTexture,
                    count: 2,
                },
            ],
            params: SynthParams::default(),
            holdout_every: default_holdout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub steps: usize,
    /// Frames per training window, capped at the clip length; `None` uses
    /// whole clips. The denoiser mixes nothing across temporal patches, so a
    /// window only changes how many tokens one step sees.
    #[serde(default = "default_window")]
    pub window: Option<usize>,
    /// Write a loss row every this many steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_window() -> Option<usize> {
    Some(4)
}

fn default_log_every() -> usize {
    10
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            steps: 2000,
            window: default_window(),
            log_every: default_log_every(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Euler steps from pure noise to the sample.
    pub sample_steps: usize,
    #[serde(default)]
    pub boundary: WarpBoundary,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            sample_steps: 16,
            boundary: WarpBoundary::Masked,
        }
    }
}

/// Everything a command needs. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
    /// Dataset location; defaults to the output directory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub degradation: DegradationConfig,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default = "default_loss")]
    pub loss: LossSelection,
    #[serde(default)]
    pub weights: SubbandWeights,
    #[serde(default)]
    pub hog: HogConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    /// High-frequency weights for `sweep-weights`.
    #[serde(default = "default_sweep")]
    pub sweep_weights: Vec<f64>,
    /// Run ablation and sweep variants on separate threads.
    #[serde(default)]
    pub parallel: bool,
}

fn default_loss() -> LossSelection {
    LossSelection::Hr
}

fn default_sweep() -> Vec<f64> {
    vec![1.0, 1.5, 2.0, 3.0]
}

impl ExperimentConfig {
    pub fn minimal(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetSpec::default(),
            data_dir: None,
            degradation: DegradationConfig::default(),
            model: DenoiserConfig::default(),
            loss: default_loss(),
            weights: SubbandWeights::default(),
            hog: HogConfig::default(),
            optimizer: AdamWConfig::default(),
            training: TrainingSpec::default(),
            eval: EvalSpec::default(),
            sweep_weights: default_sweep(),
            parallel: false,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            selection: self.loss,
            weights: self.weights,
            hog: self.hog,
        }
    }

    pub fn data_dir<'a>(&'a self, out: &'a Path) -> &'a Path {
        self.data_dir.as_deref().unwrap_or(out)
    }

    pub fn validate(&self) -> CliResult<()> {
        let v = |r: hfrec_core::Result<()>| r.map_err(|e| CliError::Validation(e.to_string()));
        v(self.dataset.params.validate())?;
        v(self.degradation.validate())?;
        v(self.model.validate())?;
        v(self.loss_config().validate())?;
        v(self.optimizer.validate())?;
        let p = &self.dataset.params;
        if self.dataset.holdout_every == 0 {
            return Err(CliError::Validation("holdout_every must be at least 1".into()));
        }
        if p.channels != self.model.channels {
            return Err(CliError::Validation(format!(
                "dataset has {} channels, model expects {}",
                p.channels, self.model.channels
            )));
        }
        let frames = self.training.window.unwrap_or(p.frames).min(p.frames);
        if frames == 0 {
            return Err(CliError::Validation("training window must be at least one frame".into()));
        }
        let shape = [1, p.channels, frames, p.height, p.width];
        v(self.model.validate_latent(&shape))?;
        if p.frames % self.model.patch[0] != 0 {
            return Err(CliError::Validation(format!(
                "clip length {} is not a multiple of the temporal patch {}",
                p.frames, self.model.patch[0]
            )));
        }
        if self.eval.sample_steps == 0 {
            return Err(CliError::Validation("eval.sample_steps must be positive".into()));
        }
        if self.training.log_every == 0 {
            return Err(CliError::Validation("training.log_every must be positive".into()));
        }
        if self.sweep_weights.is_empty() || self.sweep_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CliError::Validation("sweep weights must be a nonempty list of finite values >= 0".into()));
        }
        Ok(())
    }
}
