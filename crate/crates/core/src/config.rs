//! Pipeline configuration: one TOML section per stage.
//!
//! ```toml
//! [pipeline]
//! seed = 7
//! train_fraction = 0.5
//! [filter]
//! threshold = -1.1
//! [proposal]
//! early_stop_conf = 0.1
//! [perturb]
//! schemes = ["R(20,0.2)", "O(0.5)"]
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::SimConfig;
use crate::perturb::{Combine, PerturbConfig};
use crate::proposal::ProposalConfig;
use crate::tcn::TrainConfig;

/// Which stages the end-to-end run includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Tubelet boxes scored directly by the detector; no perturbation or re-scoring.
    Baseline,
    /// Baseline plus perturbation and max-pooling.
    Perturb,
    /// Every stage, with one report per variant.
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    /// Simulated tracker following ground truth with drift (synthetic data only).
    #[default]
    GtFollow,
    /// Overlap linking through the filtered proposals.
    IouChain,
}

/// How the evaluated score of a re-scored box is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// The TCN foreground probability alone.
    #[default]
    Tcn,
    /// TCN probability times the logistic of the detection score.
    TcnTimesDet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// When set, overrides the seeds of the simulation, perturbation and training sections.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Existing dataset manifest; when absent the `[sim]` world is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub ablation: Ablation,
    /// Leading fraction of videos (by id) used to train the TCN; the rest are evaluated.
    pub train_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { seed: None, manifest: None, ablation: Ablation::Full, train_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { threshold: -1.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub kind: TrackerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou: f64,
    pub fusion: Fusion,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou: 0.5, fusion: Fusion::Tcn }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub sim: SimConfig,
    pub filter: FilterConfig,
    pub proposal: ProposalConfig,
    pub tracker: TrackerConfig,
    pub perturb: PerturbConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    /// The shipped desk-scale configuration.
    fn default() -> Self {
        Self {
            pipeline: PipelineSection::default(),
            sim: SimConfig::default(),
            filter: FilterConfig::default(),
            proposal: ProposalConfig::default(),
            tracker: TrackerConfig::default(),
            // Tubelet-set union duplicates every box, which VID matching
            // counts as false positives; the desk run pools the union of
            // candidates instead.
            perturb: PerturbConfig { combine: Combine::Candidates, ..PerturbConfig::default() },
            train: TrainConfig { hidden_channels: 32, iterations: 300, batch_size: 8, ..TrainConfig::default() },
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the global seed, if any, into the per-stage seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pipeline.seed = Some(seed);
        self.apply_seed();
        self
    }

    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.pipeline.seed {
            self.sim.seed = seed;
            self.perturb.seed = seed;
            self.train.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pipeline.train_fraction) {
            return Err(Error::Config("train_fraction must be in [0, 1]".into()));
        }
        if self.filter.threshold.is_nan() {
            return Err(Error::Config("filter threshold is NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.iou) {
            return Err(Error::Config("eval iou must be in [0, 1]".into()));
        }
        if self.pipeline.manifest.is_none() {
            self.sim.validate()?;
        }
        self.proposal.validate()?;
        self.perturb.validate()?;
        self.train.validate()
    }
}
