//! The training loop: sample a batch, gather features, run a gradient-cache
//! step and apply the optimizer.

use serde::{Deserialize, Serialize};

use crate::contrastive::{grad_cache_run, LossConfig, TrainingBatch};
use crate::encoder::{Optimizer, OptimizerKind, ToyEncoder};
use crate::error::{Error, Result};
use crate::sampler::{reseed, BatchSampler, BatchSpec, SamplingPlan, SourceTable};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub plan: SamplingPlan,
    pub loss: LossConfig,
    pub chunk_size: usize,
    pub seed: u64,
    /// Update only the adapter; base weights stay bitwise fixed.
    pub freeze_base: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidArgument(
                "chunk size must be at least 1".into(),
            ));
        }
        self.plan.validate()?;
        self.loss.validate()
    }
}

/// Pre-extracted features for one training source. Example `k` pairs query
/// row `k` with target row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSource {
    pub id: String,
    pub weight: f64,
    pub queries: DenseMatrix,
    pub targets: DenseMatrix,
    /// Identity of each target row; equal ids are treated as the same target.
    pub target_ids: Vec<String>,
    /// Per example, target rows of this source used as hard negatives.
    pub hard_negatives: Vec<Vec<usize>>,
}

impl FeatureSource {
    pub fn new(
        id: impl Into<String>,
        weight: f64,
        queries: DenseMatrix,
        targets: DenseMatrix,
        target_ids: Vec<String>,
    ) -> Result<Self> {
        let n = queries.rows();
        let src = Self {
            id: id.into(),
            weight,
            queries,
            targets,
            target_ids,
            hard_negatives: vec![Vec::new(); n],
        };
        src.validate()?;
        Ok(src)
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.queries.rows();
        if self.targets.rows() != n || self.target_ids.len() != n || self.hard_negatives.len() != n
        {
            return Err(Error::shape(format!(
                "source {:?}: {n} queries, {} targets, {} target ids, {} hard-negative lists",
                self.id,
                self.targets.rows(),
                self.target_ids.len(),
                self.hard_negatives.len()
            )));
        }
        for (k, hn) in self.hard_negatives.iter().enumerate() {
            if hn.iter().any(|&h| h >= n || h == k) {
                return Err(Error::InvalidArgument(format!(
                    "source {:?} example {k}: hard negative out of range or equal to its positive",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

pub fn source_table(sources: &[FeatureSource]) -> Result<SourceTable> {
    let mut table = SourceTable::new();
    for s in sources {
        if table.get(&s.id).is_some() {
            return Err(Error::DuplicateId(s.id.clone()));
        }
        table.insert(s.id.clone(), s.weight, s.len())?;
    }
    Ok(table)
}

/// Gathers the encoder inputs for a sampled batch. Positives come first in
/// batch order, followed by the hard negatives of each example in order.
pub fn gather_batch(spec: &BatchSpec, sources: &[FeatureSource]) -> Result<TrainingBatch> {
    let find = |id: &str| {
        sources
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let mut q_rows: Vec<&[f64]> = Vec::with_capacity(spec.len());
    let mut t_rows: Vec<&[f64]> = Vec::with_capacity(spec.len());
    let mut target_ids = Vec::with_capacity(spec.len());
    let mut extra_rows: Vec<&[f64]> = Vec::new();
    let mut extra_ids = Vec::new();
    let mut hard_local: Vec<Vec<usize>> = Vec::with_capacity(spec.len());
    for (source_id, k) in spec.iter() {
        let src = find(source_id)?;
        if k >= src.len() {
            return Err(Error::InvalidArgument(format!(
                "example {k} out of range for source {source_id:?}"
            )));
        }
        q_rows.push(src.queries.row(k));
        t_rows.push(src.targets.row(k));
        target_ids.push(format!("{source_id}/{}", src.target_ids[k]));
        let mut mine = Vec::new();
        for &h in &src.hard_negatives[k] {
            mine.push(extra_rows.len());
            extra_rows.push(src.targets.row(h));
            extra_ids.push(format!("{source_id}/{}", src.target_ids[h]));
        }
        hard_local.push(mine);
    }
    let b = q_rows.len();
    t_rows.extend(extra_rows);
    target_ids.extend(extra_ids);
    let batch = TrainingBatch {
        query_inputs: DenseMatrix::from_rows(&q_rows)?,
        target_inputs: DenseMatrix::from_rows(&t_rows)?,
        positive_index: (0..b).collect(),
        target_ids,
        hard_negative_rows: hard_local
            .into_iter()
            .map(|v| v.into_iter().map(|h| h + b).collect())
            .collect(),
    };
    batch.validate()?;
    Ok(batch)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: ToyEncoder,
    pub losses: Vec<f64>,
}

/// Runs `config.steps` optimizer steps. Deterministic given the config seed.
pub fn train(
    config: &TrainConfig,
    sources: &[FeatureSource],
    encoder: ToyEncoder,
) -> Result<TrainOutcome> {
    config.validate()?;
    if sources.is_empty() {
        return Err(Error::Empty("no training sources"));
    }
    for s in sources {
        s.validate()?;
        if s.queries.cols() != encoder.d_in() || s.targets.cols() != encoder.d_in() {
            return Err(Error::shape(format!(
                "source {:?} has {} features, encoder expects {}",
                s.id,
                s.queries.cols(),
                encoder.d_in()
            )));
        }
    }
    if config.freeze_base && encoder.adapter.is_none() {
        return Err(Error::InvalidArgument(
            "freeze_base needs an adapter to train".into(),
        ));
    }
    let table = source_table(sources)?;
    let plan = reseed(&config.plan, config.seed);
    let mut sampler = BatchSampler::new(plan, &table)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut encoder = encoder;
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let spec = sampler.next_batch();
        let batch = gather_batch(&spec, sources)?;
        let out = grad_cache_run(&encoder, &batch, config.chunk_size, &config.loss)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = out.grads.slices(config.freeze_base);
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { step });
        }
        optimizer.step(encoder.trainable_mut(config.freeze_base), grads)?;
        losses.push(out.loss);
    }
    Ok(TrainOutcome { encoder, losses })
}
