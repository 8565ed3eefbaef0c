use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail};
use clap::Args;
use serde::Serialize;

use mmembed_core::sampler::{
    chi_square_goodness_of_fit, BatchSampler, BatchSpec, SourceTable, SubBatch,
};

use crate::output::{csv_field, emit, resolve};
use crate::{engine_config, Format, GlobalArgs};

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Inline weight table `id=w,id=w`; overrides [sampling.weights]
    #[arg(long, value_name = "TABLE")]
    weights: Option<String>,
    /// Number of sub-batches to draw
    #[arg(long, value_name = "N", default_value_t = 10_000)]
    draws: usize,
    /// Examples per sub-batch [default: sampling.sub_batch]
    #[arg(long, value_name = "N")]
    sub_batch: Option<usize>,
    /// Full batch size [default: sampling.full_batch]
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SourceRow {
    source: String,
    weight: f64,
    expected: f64,
    observed: usize,
    frequency: f64,
    band_low: f64,
    band_high: f64,
    within_band: bool,
}

#[derive(Debug, Serialize)]
struct Summary {
    draws: usize,
    chi_square: f64,
    degrees_of_freedom: usize,
    p_value: f64,
}

fn parse_weights(text: &str) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (id, w) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("weight entry {part:?} is not id=weight"))?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| anyhow!("weight {w:?} for {id:?} is not a number"))?;
        if out.insert(id.trim().to_string(), w).is_some() {
            bail!("source {id:?} listed twice");
        }
    }
    Ok(out)
}

pub fn run(global: &GlobalArgs, args: AuditArgs) -> anyhow::Result<bool> {
    let mut cfg = engine_config(global)?;
    if let Some(w) = &args.weights {
        cfg.sampling.weights = parse_weights(w)?;
    }
    if let Some(n) = args.sub_batch {
        cfg.sampling.sub_batch = n;
    }
    if let Some(n) = args.batch {
        cfg.sampling.full_batch = n;
    }
    if cfg.sampling.weights.is_empty() {
        for s in &cfg.train.sources {
            cfg.sampling.weights.insert(s.id.clone(), s.weight);
        }
    }
    if cfg.sampling.weights.is_empty() {
        bail!("no weight table: give --weights or [sampling.weights] in --config");
    }
    if args.draws == 0 {
        bail!("--draws must be at least 1");
    }
    cfg.validate()?;

    let plan = cfg.plan();
    let s = plan.effective_sub_batch();
    let counts = cfg
        .sampling
        .weights
        .keys()
        .map(|k| (k.clone(), s))
        .collect();
    let table: SourceTable = cfg.source_table(&counts)?;
    let mut sampler = BatchSampler::new(plan, &table)?;
    let mut drawn: Vec<SubBatch> = Vec::with_capacity(args.draws);
    while drawn.len() < args.draws {
        let b = sampler.next_batch();
        drawn.extend(b.sub_batches.into_iter().take(args.draws - drawn.len()));
    }
    let batches = [BatchSpec { sub_batches: drawn }];
    let chi = chi_square_goodness_of_fit(&batches, &table)?;

    let probs = table.probabilities()?;
    let n = args.draws as f64;
    let rows: Vec<SourceRow> = table
        .iter()
        .map(|(id, e)| {
            let p = probs[id];
            let observed = batches[0]
                .sub_batches
                .iter()
                .filter(|sb| sb.source_id == id)
                .count();
            let freq = observed as f64 / n;
            let half = 3.0 * (p * (1.0 - p) / n).sqrt();
            SourceRow {
                source: id.to_string(),
                weight: e.weight,
                expected: p,
                observed,
                frequency: freq,
                band_low: (p - half).max(0.0),
                band_high: (p + half).min(1.0),
                within_band: (freq - p).abs() <= half,
            }
        })
        .collect();
    let summary = Summary {
        draws: args.draws,
        chi_square: chi.statistic,
        degrees_of_freedom: chi.degrees_of_freedom,
        p_value: chi.p_value,
    };

    let mut out = String::new();
    match resolve(global.format) {
        Format::Json => {
            for r in &rows {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
            out.push_str(&serde_json::to_string(&summary)?);
            out.push('\n');
        }
        Format::Csv => {
            out.push_str(
                "source,weight,expected,observed,frequency,band_low,band_high,within_band\n",
            );
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{},{:?},{:?},{},{:?},{:?},{:?},{}",
                    csv_field(&r.source),
                    r.weight,
                    r.expected,
                    r.observed,
                    r.frequency,
                    r.band_low,
                    r.band_high,
                    r.within_band
                );
            }
        }
        Format::Table => {
            let w = rows
                .iter()
                .map(|r| r.source.len())
                .chain([6])
                .max()
                .unwrap_or(6);
            let _ = writeln!(
                out,
                "{:<w$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>19}  ok",
                "source", "weight", "expected", "observed", "freq", "3-sigma band"
            );
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{:<w$}  {:>8.3}  {:>8.4}  {:>9}  {:>8.4}  [{:>8.4}, {:>8.4}]  {}",
                    r.source,
                    r.weight,
                    r.expected,
                    r.observed,
                    r.frequency,
                    r.band_low,
                    r.band_high,
                    if r.within_band { "yes" } else { "no" }
                );
            }
            let _ = writeln!(
                out,
                "{} sub-batches of {s}; chi-square {:.3} on {} df, p = {:.4}",
                summary.draws, summary.chi_square, summary.degrees_of_freedom, summary.p_value
            );
        }
    }
    emit(&out, None)?;
    Ok(true)
}
