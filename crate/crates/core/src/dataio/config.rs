//! TOML engine configuration.
//!
//! Every key is optional. An empty file yields:
//!
//! ```toml
//! seed = 20250101
//!
//! [templates]            # see formatting::TemplateTable
//!
//! [sampling]
//! full_batch = 1024
//! sub_batch = 64
//! allow_replacement = false
//! [sampling.weights]     # source id -> weight, read by sample-audit
//!
//! [loss]
//! temperature = 0.02
//! false_negative_masking = true
//! hard_negative_policy = "pooled"
//!
//! [train]
//! steps = 2000
//! learning_rate = 1e-3
//! optimizer = "adam"
//! chunk_size = 64
//! hidden = 64
//! out_dim = 16
//! adapter_rank = 16      # 0 disables the adapter
//! adapter_alpha = 32.0
//! freeze_base = false
//! # [[train.sources]] id = "..", queries = "q.uemb", targets = "t.uemb", weight = 1.0
//!
//! [video]
//! frames = 8
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::LossConfig;
use crate::encoder::OptimizerKind;
use crate::error::{Error, Result};
use crate::formatting::TemplateTable;
use crate::sampler::{SamplingPlan, SourceTable};
use crate::train::TrainConfig;

pub const DEFAULT_SEED: u64 = 20250101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub full_batch: usize,
    pub sub_batch: usize,
    pub allow_replacement: bool,
    pub weights: BTreeMap<String, f64>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            full_batch: 1024,
            sub_batch: 64,
            allow_replacement: false,
            weights: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    pub queries: PathBuf,
    pub targets: PathBuf,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub chunk_size: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub freeze_base: bool,
    pub sources: Vec<SourceSpec>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            chunk_size: 64,
            hidden: 64,
            out_dim: 16,
            adapter_rank: 16,
            adapter_alpha: 32.0,
            freeze_base: false,
            sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSection {
    pub frames: usize,
}

impl Default for VideoSection {
    fn default() -> Self {
        Self { frames: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub templates: TemplateTable,
    pub sampling: SamplingSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub video: VideoSection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            templates: TemplateTable::default(),
            sampling: SamplingSection::default(),
            loss: LossConfig::default(),
            train: TrainSection::default(),
            video: VideoSection::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.templates.validate()?;
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.plan()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for (id, w) in &self.sampling.weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Config(format!(
                    "weight for {id:?} must be non-negative, got {w}"
                )));
            }
        }
        if !self.sampling.weights.is_empty() && self.sampling.weights.values().all(|w| *w == 0.0) {
            return Err(Error::Config("all sampling weights are zero".into()));
        }
        let t = &self.train;
        if t.steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if t.chunk_size == 0 || t.hidden == 0 || t.out_dim == 0 {
            return Err(Error::Config(
                "train.chunk_size, train.hidden and train.out_dim must be at least 1".into(),
            ));
        }
        if t.adapter_rank > 0 && !(t.adapter_alpha.is_finite() && t.adapter_alpha > 0.0) {
            return Err(Error::Config("train.adapter_alpha must be positive".into()));
        }
        if t.freeze_base && t.adapter_rank == 0 {
            return Err(Error::Config(
                "train.freeze_base needs adapter_rank > 0".into(),
            ));
        }
        for s in &t.sources {
            if !s.weight.is_finite() || s.weight < 0.0 {
                return Err(Error::Config(format!(
                    "source {:?} weight must be non-negative, got {}",
                    s.id, s.weight
                )));
            }
        }
        if self.video.frames == 0 {
            return Err(Error::Config("video.frames must be at least 1".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan {
            full_batch: self.sampling.full_batch,
            sub_batch: self.sampling.sub_batch,
            seed: self.seed,
            allow_replacement: self.sampling.allow_replacement,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            plan: self.plan(),
            loss: self.loss,
            chunk_size: self.train.chunk_size,
            seed: self.seed,
            freeze_base: self.train.freeze_base,
        }
    }

    /// Weight table from `[sampling.weights]` with the given example counts.
    pub fn source_table(&self, counts: &BTreeMap<String, usize>) -> Result<SourceTable> {
        let mut table = SourceTable::new();
        for (id, w) in &self.sampling.weights {
            table.insert(id.clone(), *w, counts.get(id).copied().unwrap_or(0))?;
        }
        Ok(table)
    }
}

pub fn parse_config(text: &str) -> Result<EngineConfig> {
    let cfg: EngineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads and validates a config file; relative source paths resolve against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<EngineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(base) = path.parent() {
        for s in &mut cfg.train.sources {
            if s.queries.is_relative() {
                s.queries = base.join(&s.queries);
            }
            if s.targets.is_relative() {
                s.targets = base.join(&s.targets);
            }
        }
    }
    Ok(cfg)
}
