//! Weight-table batch mixing with interleaved sub-batches.
//!
//! A full batch of `B` examples is split into `B / s` sub-batches. Each
//! sub-batch independently draws one source with probability proportional
//! to its weight, then draws `s` examples from that source without
//! replacement. `s = 0` means per-sample mixing and is treated as `s = 1`.
//!
//! The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`, so
//! `(plan, table, seed)` fixes the whole batch sequence.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub type SamplerRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub weight: f64,
    pub examples: usize,
}

/// Sampling weight and example count per source, ordered by source id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceTable {
    entries: BTreeMap<String, SourceEntry>,
}

impl SourceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        source_id: impl Into<String>,
        weight: f64,
        examples: usize,
    ) -> Result<()> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight must be finite and non-negative, got {weight}"
            )));
        }
        self.entries
            .insert(source_id.into(), SourceEntry { weight, examples });
        Ok(())
    }

    pub fn with(
        mut self,
        source_id: impl Into<String>,
        weight: f64,
        examples: usize,
    ) -> Result<Self> {
        self.insert(source_id, weight, examples)?;
        Ok(self)
    }

    pub fn get(&self, source_id: &str) -> Option<&SourceEntry> {
        self.entries.get(source_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SourceEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weights normalized to sum to one.
    pub fn probabilities(&self) -> Result<BTreeMap<String, f64>> {
        let total: f64 = self.entries.values().map(|e| e.weight).sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), e.weight / total))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        for (id, e) in &self.entries {
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "source {id:?} has invalid weight {}",
                    e.weight
                )));
            }
        }
        if !self.entries.values().any(|e| e.weight > 0.0) {
            return Err(Error::ZeroWeights);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub full_batch: usize,
    /// 0 selects per-sample mixing.
    pub sub_batch: usize,
    pub seed: u64,
    /// Lets a source with fewer than `sub_batch` examples fill a sub-batch by
    /// drawing with replacement. Off by default: duplicates inside one
    /// sub-batch become false negatives.
    #[serde(default)]
    pub allow_replacement: bool,
}

impl SamplingPlan {
    pub fn new(full_batch: usize, sub_batch: usize, seed: u64) -> Result<Self> {
        let plan = Self {
            full_batch,
            sub_batch,
            seed,
            allow_replacement: false,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.full_batch == 0 {
            return Err(Error::InvalidArgument(
                "full batch must be at least 1".into(),
            ));
        }
        if self.sub_batch > 0 && !self.full_batch.is_multiple_of(self.sub_batch) {
            return Err(Error::InvalidArgument(format!(
                "sub-batch {} does not divide batch {}",
                self.sub_batch, self.full_batch
            )));
        }
        Ok(())
    }

    pub fn effective_sub_batch(&self) -> usize {
        self.sub_batch.max(1)
    }

    pub fn sub_batches_per_batch(&self) -> usize {
        self.full_batch / self.effective_sub_batch()
    }

    pub fn rng(&self) -> SamplerRng {
        SamplerRng::seed_from_u64(self.seed)
    }
}

pub fn reseed(plan: &SamplingPlan, new_seed: u64) -> SamplingPlan {
    SamplingPlan {
        seed: new_seed,
        ..*plan
    }
}

/// Examples drawn from one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubBatch {
    pub source_id: String,
    pub examples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchSpec {
    pub sub_batches: Vec<SubBatch>,
}

impl BatchSpec {
    pub fn len(&self) -> usize {
        self.sub_batches.iter().map(|s| s.examples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(source_id, example index)` pairs in batch order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.sub_batches
            .iter()
            .flat_map(|s| s.examples.iter().map(move |&e| (s.source_id.as_str(), e)))
    }
}

struct Prepared<'a> {
    ids: Vec<&'a str>,
    counts: Vec<usize>,
    dist: WeightedIndex<f64>,
}

fn prepare<'a>(plan: &SamplingPlan, table: &'a SourceTable) -> Result<Prepared<'a>> {
    plan.validate()?;
    table.validate()?;
    let s = plan.effective_sub_batch();
    let mut ids = Vec::with_capacity(table.len());
    let mut counts = Vec::with_capacity(table.len());
    let mut weights = Vec::with_capacity(table.len());
    for (id, e) in table.iter() {
        if e.weight > 0.0 && (e.examples == 0 || (e.examples < s && !plan.allow_replacement)) {
            return Err(Error::SourceTooSmall {
                source_id: id.to_string(),
                available: e.examples,
                needed: s,
            });
        }
        ids.push(id);
        counts.push(e.examples);
        weights.push(e.weight);
    }
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::ZeroWeights)?;
    Ok(Prepared { ids, counts, dist })
}

fn draw_batch<R: Rng + ?Sized>(plan: &SamplingPlan, p: &Prepared<'_>, rng: &mut R) -> BatchSpec {
    let s = plan.effective_sub_batch();
    let sub_batches = (0..plan.sub_batches_per_batch())
        .map(|_| {
            let k = p.dist.sample(rng);
            let n = p.counts[k];
            let examples = if n >= s {
                rand::seq::index::sample(rng, n, s).into_vec()
            } else {
                (0..s).map(|_| rng.random_range(0..n)).collect()
            };
            SubBatch {
                source_id: p.ids[k].to_string(),
                examples,
            }
        })
        .collect();
    BatchSpec { sub_batches }
}

/// Draws one full batch, advancing `rng`.
pub fn assemble_batch<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    table: &SourceTable,
    rng: &mut R,
) -> Result<BatchSpec> {
    let prepared = prepare(plan, table)?;
    Ok(draw_batch(plan, &prepared, rng))
}

/// A seeded stream of batches for one plan.
pub struct BatchSampler<'a> {
    plan: SamplingPlan,
    prepared: Prepared<'a>,
    rng: SamplerRng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(plan: SamplingPlan, table: &'a SourceTable) -> Result<Self> {
        let prepared = prepare(&plan, table)?;
        Ok(Self {
            rng: plan.rng(),
            plan,
            prepared,
        })
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn next_batch(&mut self) -> BatchSpec {
        draw_batch(&self.plan, &self.prepared, &mut self.rng)
    }
}

/// Fraction of examples drawn from each source. When `table` is given every
/// table source appears, zero-weight ones with frequency 0.
pub fn source_frequency_report(
    batches: &[BatchSpec],
    table: Option<&SourceTable>,
) -> Result<BTreeMap<String, f64>> {
    let counts = source_counts(batches, table);
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::Empty("no examples in the given batches"));
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect())
}

fn source_counts(batches: &[BatchSpec], table: Option<&SourceTable>) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    if let Some(t) = table {
        for (id, _) in t.iter() {
            counts.insert(id.to_string(), 0);
        }
    }
    for b in batches {
        for sb in &b.sub_batches {
            *counts.entry(sb.source_id.clone()).or_default() += sb.examples.len();
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Pearson goodness-of-fit of per-sub-batch source draws against the
/// normalized weight table. Each sub-batch counts once.
pub fn chi_square_goodness_of_fit(
    batches: &[BatchSpec],
    table: &SourceTable,
) -> Result<ChiSquareTest> {
    let probs = table.probabilities()?;
    let mut observed: BTreeMap<&str, usize> = BTreeMap::new();
    let mut draws = 0usize;
    for b in batches {
        for sb in &b.sub_batches {
            *observed.entry(sb.source_id.as_str()).or_default() += 1;
            draws += 1;
        }
    }
    if draws == 0 {
        return Err(Error::Empty("no sub-batches to test"));
    }
    let mut statistic = 0.0;
    let mut categories = 0usize;
    for (id, &p) in &probs {
        let o = observed.get(id.as_str()).copied().unwrap_or(0) as f64;
        if p == 0.0 {
            if o > 0.0 {
                return Ok(ChiSquareTest {
                    statistic: f64::INFINITY,
                    degrees_of_freedom: categories,
                    p_value: 0.0,
                });
            }
            continue;
        }
        let e = p * draws as f64;
        statistic += (o - e) * (o - e) / e;
        categories += 1;
    }
    if observed.keys().any(|id| !probs.contains_key(*id)) {
        return Ok(ChiSquareTest {
            statistic: f64::INFINITY,
            degrees_of_freedom: categories.saturating_sub(1),
            p_value: 0.0,
        });
    }
    let dof = categories - 1;
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquareTest {
        statistic,
        degrees_of_freedom: dof,
        p_value,
    })
}
