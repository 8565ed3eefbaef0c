use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;

use mmembed_core::dataio::{parse_manifest, parse_qrels, read_embeddings, PoolMode, TaskManifest};
use mmembed_core::retrieval::{
    aggregate, evaluate_task, parse_report_csv, parse_report_jsonl, render_report, CandidatePool,
    CategoryMap, EvalReport, Pools, ReportFormat, TaskResult,
};

use crate::output::{emit, resolve};
use crate::{Format, GlobalArgs};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines task manifest; data paths resolve against its directory
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Stored report (JSON-lines or CSV)
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Write the rendered report here instead of stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn report_format(f: Format) -> ReportFormat {
    match f {
        Format::Json => ReportFormat::JsonLines,
        Format::Csv => ReportFormat::Csv,
        Format::Table => ReportFormat::Table,
    }
}

fn required<'a>(
    task: &TaskManifest,
    field: &str,
    p: &'a Option<PathBuf>,
) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| anyhow!("task {:?} has no {field} file", task.name))
}

fn evaluate(task: &TaskManifest) -> anyhow::Result<TaskResult> {
    let queries = read_embeddings(required(task, "queries", &task.queries)?)?;
    let candidates = read_embeddings(required(task, "candidates", &task.candidates)?)?;
    let qrels = parse_qrels(required(task, "qrels", &task.qrels)?)?;
    let pools = match task.pool {
        PoolMode::Shared => Pools::Shared(CandidatePool::from_embeddings(&candidates)?),
        PoolMode::PerQuery => Pools::PerQuery {
            candidates,
            lists: qrels.pools.clone(),
        },
    };
    Ok(evaluate_task(
        task,
        &queries,
        &pools,
        &qrels.gold,
        &qrels.order,
    )?)
}

pub fn run_eval(global: &GlobalArgs, args: EvalArgs) -> anyhow::Result<bool> {
    let manifests = parse_manifest(&args.manifest)?;
    let mut results = Vec::new();
    let mut failed = 0;
    for task in &manifests {
        match evaluate(task) {
            Ok(r) => results.push(r),
            Err(e) => {
                failed += 1;
                eprintln!("error: task {:?}: {e:#}", task.name);
            }
        }
    }
    let report = aggregate(&results, &CategoryMap::from_manifests(&manifests))?;
    let text = render_report(&report, report_format(resolve(global.format)))?;
    emit(&text, args.out.as_deref())?;
    if failed > 0 {
        eprintln!("{failed} of {} tasks failed to evaluate", manifests.len());
    }
    Ok(failed == 0)
}

fn read_report(path: &Path) -> anyhow::Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let reader = BufReader::new(text.as_bytes());
    let parsed = if text.starts_with("kind,") {
        parse_report_csv(reader)
    } else {
        parse_report_jsonl(reader)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

pub fn run_report(global: &GlobalArgs, args: ReportArgs) -> anyhow::Result<()> {
    let report = read_report(&args.input)?;
    let text = render_report(&report, report_format(resolve(global.format)))?;
    emit(&text, args.out.as_deref())
}
