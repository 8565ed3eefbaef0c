//! JSON-lines task manifests and qrels.
//!
//! One manifest per line:
//!
//! ```json
//! {"name": "MSR-VTT", "category": "V-RET", "query_mod": "T", "target_mod": "V",
//!  "instruction": "Find a video that contains the following visual content:",
//!  "num_queries": 1000, "num_candidates": 1000,
//!  "queries": "msrvtt.q.uemb", "candidates": "msrvtt.c.uemb", "qrels": "msrvtt.qrels.jsonl"}
//! ```
//!
//! `metric` defaults to `ndcg@5` for visual-document categories (`VD-*`,
//! `VisDoc*`) and `hit@1` otherwise; a different explicit metric requires
//! `"metric_override": true`. Blank lines are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::formatting::ModalityCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    HitAt1,
    NdcgAt(usize),
    RecallAt(usize),
}

impl Metric {
    pub const NDCG_AT_5: Metric = Metric::NdcgAt(5);
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::HitAt1 => f.write_str("hit@1"),
            Metric::NdcgAt(k) => write!(f, "ndcg@{k}"),
            Metric::RecallAt(k) => write!(f, "recall@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown metric {s:?}"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match (name.to_ascii_lowercase().as_str(), k) {
            ("hit", 1) => Ok(Metric::HitAt1),
            ("ndcg", k) => Ok(Metric::NdcgAt(k)),
            ("recall", k) => Ok(Metric::RecallAt(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// Every query ranks the full candidate file.
    #[default]
    Shared,
    /// Each query ranks its own candidate list from the qrels file.
    PerQuery,
}

pub fn is_visual_document_category(category: &str) -> bool {
    let c = category.to_ascii_lowercase();
    c.starts_with("vd") || c.starts_with("visdoc")
}

/// Modality group a category rolls up into when the manifest names none.
pub fn default_group(category: &str) -> String {
    if is_visual_document_category(category) {
        "VisDoc".to_string()
    } else if category.starts_with("I-") {
        "Image".to_string()
    } else if category.starts_with("V-") {
        "Video".to_string()
    } else {
        category.to_string()
    }
}

pub fn default_metric(category: &str) -> Metric {
    if is_visual_document_category(category) {
        Metric::NDCG_AT_5
    } else {
        Metric::HitAt1
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    name: String,
    category: String,
    #[serde(default)]
    group: Option<String>,
    query_mod: ModalityCode,
    target_mod: ModalityCode,
    #[serde(default)]
    metric: Option<Metric>,
    #[serde(default)]
    metric_override: bool,
    instruction: String,
    #[serde(default)]
    target_instruction: Option<String>,
    #[serde(default)]
    pool: PoolMode,
    #[serde(default)]
    num_queries: Option<usize>,
    #[serde(default)]
    num_candidates: Option<usize>,
    #[serde(default)]
    queries: Option<PathBuf>,
    #[serde(default)]
    candidates: Option<PathBuf>,
    #[serde(default)]
    qrels: Option<PathBuf>,
}

/// One evaluation task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskManifest {
    pub name: String,
    pub category: String,
    pub group: String,
    pub query_mod: ModalityCode,
    pub target_mod: ModalityCode,
    pub metric: Metric,
    pub instruction: String,
    pub target_instruction: Option<String>,
    pub pool: PoolMode,
    pub num_queries: Option<usize>,
    pub num_candidates: Option<usize>,
    /// Data files, resolved relative to the manifest's directory.
    pub queries: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
}

impl TaskManifest {
    fn from_raw(raw: RawManifest, base: Option<&Path>) -> Result<Self> {
        if raw.name.trim().is_empty() {
            return Err(Error::InvalidArgument("task name is empty".into()));
        }
        if raw.instruction.trim().is_empty() {
            return Err(Error::InvalidArgument("instruction is empty".into()));
        }
        let expected = default_metric(&raw.category);
        let metric = match raw.metric {
            Some(m) if m != expected && !raw.metric_override => {
                return Err(Error::InvalidArgument(format!(
                    "metric {m} does not match category {:?} (expected {expected}); set metric_override to allow it",
                    raw.category
                )));
            }
            Some(m) => m,
            None => expected,
        };
        let resolve = |p: Option<PathBuf>| match (p, base) {
            (Some(p), Some(b)) if p.is_relative() => Some(b.join(p)),
            (p, _) => p,
        };
        Ok(Self {
            group: raw.group.unwrap_or_else(|| default_group(&raw.category)),
            name: raw.name,
            category: raw.category,
            query_mod: raw.query_mod,
            target_mod: raw.target_mod,
            metric,
            instruction: raw.instruction,
            target_instruction: raw.target_instruction,
            pool: raw.pool,
            num_queries: raw.num_queries,
            num_candidates: raw.num_candidates,
            queries: resolve(raw.queries),
            candidates: resolve(raw.candidates),
            qrels: resolve(raw.qrels),
        })
    }
}

fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses manifests from text; `origin` labels errors and relative paths
/// resolve against `base`.
pub fn parse_manifest_str(
    text: &str,
    origin: &str,
    base: Option<&Path>,
) -> Result<Vec<TaskManifest>> {
    let mut out = Vec::new();
    let mut names = std::collections::HashSet::new();
    for (line, l) in jsonl_lines(text) {
        let located = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let raw: RawManifest = serde_json::from_str(l).map_err(|e| located(e.to_string()))?;
        let m = TaskManifest::from_raw(raw, base).map_err(|e| located(e.to_string()))?;
        if !names.insert(m.name.clone()) {
            return Err(located(format!("duplicate task name {:?}", m.name)));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<TaskManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, &path.display().to_string(), path.parent())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQrel {
    query: String,
    gold: Vec<String>,
    #[serde(default)]
    pool: Option<Vec<String>>,
}

/// Gold targets per query and, for per-query tasks, each query's candidate list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub gold: BTreeMap<String, Vec<String>>,
    pub pools: BTreeMap<String, Vec<String>>,
    /// Query ids in file order.
    pub order: Vec<String>,
}

/// `{"query": "q1", "gold": ["c3"], "pool": ["c1", "c2", "c3"]}` per line.
pub fn parse_qrels_str(text: &str, origin: &str) -> Result<Qrels> {
    let mut q = Qrels::default();
    for (line, l) in jsonl_lines(text) {
        let located = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let raw: RawQrel = serde_json::from_str(l).map_err(|e| located(e.to_string()))?;
        if raw.gold.is_empty() {
            return Err(located(format!(
                "query {:?} has no gold targets",
                raw.query
            )));
        }
        if q.gold.contains_key(&raw.query) {
            return Err(located(format!("duplicate query {:?}", raw.query)));
        }
        if let Some(pool) = raw.pool {
            q.pools.insert(raw.query.clone(), pool);
        }
        q.order.push(raw.query.clone());
        q.gold.insert(raw.query, raw.gold);
    }
    Ok(q)
}

pub fn parse_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels_str(&text, &path.display().to_string())
}
