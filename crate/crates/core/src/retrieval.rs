//! Exact cosine retrieval over candidate pools, per-query metrics, task
//! evaluation and report aggregation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::manifest::{Metric, PoolMode, TaskManifest};
use crate::dataio::uemb::Embeddings;
use crate::error::{Error, Result};
use crate::tensor::{row_norms, DenseMatrix};

/// Candidates a query is ranked against.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    ids: Vec<String>,
    embeddings: DenseMatrix,
    norms: Vec<f64>,
}

impl CandidatePool {
    pub fn new(ids: Vec<String>, embeddings: DenseMatrix) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
        if ids.len() != embeddings.rows() {
            return Err(Error::shape(format!(
                "{} candidate ids for {} rows",
                ids.len(),
                embeddings.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let norms = row_norms(&embeddings)?;
        Ok(Self {
            ids,
            embeddings,
            norms,
        })
    }

    pub fn from_embeddings(e: &Embeddings) -> Result<Self> {
        Self::new(e.ids().to_vec(), e.matrix().clone())
    }

    /// Pool made of the listed rows of `all`.
    pub fn subset(all: &Embeddings, ids: &[String]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|id| all.position(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids.to_vec(), all.matrix().select_rows(&rows))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|x| x == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: String,
    pub score: f64,
}

/// Pool ids ordered by descending cosine, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking(pub Vec<RankedCandidate>);

impl Ranking {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|c| c.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_gold(&self, gold: &[String]) -> Result<()> {
        if gold.is_empty() {
            return Err(Error::Empty("gold set"));
        }
        for g in gold {
            if !self.0.iter().any(|c| &c.id == g) {
                return Err(Error::UnknownId(g.clone()));
            }
        }
        Ok(())
    }
}

pub fn rank_candidates(query: &[f64], pool: &CandidatePool) -> Result<Ranking> {
    if query.len() != pool.embeddings.cols() {
        return Err(Error::shape(format!(
            "query dim {} vs pool dim {}",
            query.len(),
            pool.embeddings.cols()
        )));
    }
    let qn = crate::tensor::norm(query);
    if qn == 0.0 {
        return Err(Error::ZeroNorm { row: None });
    }
    let mut ranked: Vec<RankedCandidate> = pool
        .ids
        .iter()
        .enumerate()
        .map(|(j, id)| RankedCandidate {
            id: id.clone(),
            score: (crate::tensor::dot(query, pool.embeddings.row(j)) / (qn * pool.norms[j]))
                .clamp(-1.0, 1.0),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    Ok(Ranking(ranked))
}

/// 1 when the top-ranked candidate is gold.
pub fn hit_at_1(ranking: &Ranking, gold: &[String]) -> Result<f64> {
    ranking.check_gold(gold)?;
    Ok(match ranking.0.first() {
        Some(top) if gold.contains(&top.id) => 1.0,
        _ => 0.0,
    })
}

/// Binary-relevance NDCG with a `log2(rank + 1)` discount.
pub fn ndcg_at_k(ranking: &Ranking, gold: &[String], k: usize) -> Result<f64> {
    ranking.check_gold(gold)?;
    let gold: HashSet<&str> = gold.iter().map(String::as_str).collect();
    let dcg: f64 = ranking
        .ids()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..gold.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Fraction of gold ids found in the top `k`.
pub fn recall_at_k(ranking: &Ranking, gold: &[String], k: usize) -> Result<f64> {
    ranking.check_gold(gold)?;
    let gold: HashSet<&str> = gold.iter().map(String::as_str).collect();
    let found = ranking.ids().take(k).filter(|id| gold.contains(id)).count();
    Ok(found as f64 / gold.len() as f64)
}

pub fn score(metric: Metric, ranking: &Ranking, gold: &[String]) -> Result<f64> {
    match metric {
        Metric::HitAt1 => hit_at_1(ranking, gold),
        Metric::NdcgAt(k) => ndcg_at_k(ranking, gold, k),
        Metric::RecallAt(k) => recall_at_k(ranking, gold, k),
    }
}

#[derive(Debug, Clone)]
pub enum Pools {
    Shared(CandidatePool),
    /// Per query, a list of ids into the candidate embeddings.
    PerQuery {
        candidates: Embeddings,
        lists: BTreeMap<String, Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub category: String,
    pub group: String,
    pub metric: Metric,
    pub value: f64,
    pub query_count: usize,
}

/// Mean metric over the queries in `query_order`, each ranked against its pool.
pub fn evaluate_task(
    manifest: &TaskManifest,
    queries: &Embeddings,
    pools: &Pools,
    gold: &BTreeMap<String, Vec<String>>,
    query_order: &[String],
) -> Result<TaskResult> {
    if query_order.is_empty() {
        return Err(Error::Empty("task has no queries"));
    }
    match (manifest.pool, pools) {
        (PoolMode::Shared, Pools::Shared(_)) | (PoolMode::PerQuery, Pools::PerQuery { .. }) => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "task {:?} declares {:?} pools but got the other kind",
                manifest.name, manifest.pool
            )));
        }
    }
    if let Some(n) = manifest.num_queries {
        if n != query_order.len() {
            return Err(Error::SizeMismatch(format!(
                "task {:?} declares {n} queries, qrels have {}",
                manifest.name,
                query_order.len()
            )));
        }
    }
    let per_query: Vec<f64> = query_order
        .par_iter()
        .map(|qid| {
            let q = queries
                .get(qid)
                .ok_or_else(|| Error::UnknownId(qid.clone()))?;
            let g = gold.get(qid).ok_or_else(|| Error::UnknownId(qid.clone()))?;
            let ranking = match pools {
                Pools::Shared(pool) => rank_candidates(q, pool)?,
                Pools::PerQuery { candidates, lists } => {
                    let list = lists
                        .get(qid)
                        .ok_or_else(|| Error::UnknownId(qid.clone()))?;
                    rank_candidates(q, &CandidatePool::subset(candidates, list)?)?
                }
            };
            score(manifest.metric, &ranking, g)
        })
        .collect::<Result<_>>()?;
    let value = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(TaskResult {
        task: manifest.name.clone(),
        category: manifest.category.clone(),
        group: manifest.group.clone(),
        metric: manifest.metric,
        value,
        query_count: per_query.len(),
    })
}

/// Value of a category (or group) with the number of tasks behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub value: f64,
    pub task_count: usize,
}

/// `sum(value * count) / sum(count)`.
pub fn weighted_mean(items: &[(f64, usize)]) -> Result<f64> {
    let total: usize = items.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(Error::Empty("weighted mean over zero tasks"));
    }
    Ok(items.iter().map(|(v, c)| v * *c as f64).sum::<f64>() / total as f64)
}

/// Rolls summaries up into one, weighting each by its task count.
pub fn combine(name: &str, parts: &[Summary]) -> Result<Summary> {
    let items: Vec<(f64, usize)> = parts.iter().map(|s| (s.value, s.task_count)).collect();
    Ok(Summary {
        name: name.to_string(),
        value: weighted_mean(&items)?,
        task_count: items.iter().map(|(_, c)| c).sum(),
    })
}

/// Task -> category assignment, and category -> group roll-up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    pub task_category: BTreeMap<String, String>,
    pub category_group: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn from_manifests(manifests: &[TaskManifest]) -> Self {
        let mut m = Self::default();
        for t in manifests {
            m.task_category.insert(t.name.clone(), t.category.clone());
            m.category_group.insert(t.category.clone(), t.group.clone());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    pub categories: Vec<Summary>,
    pub groups: Vec<Summary>,
    pub overall: Option<Summary>,
}

fn first_seen_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .filter(|n| seen.insert(*n))
        .map(str::to_string)
        .collect()
}

/// Per-category and per-group task-count-weighted means plus the overall
/// mean, in first-appearance order of `results`.
pub fn aggregate(results: &[TaskResult], categories: &CategoryMap) -> Result<EvalReport> {
    let mut assigned: Vec<(&TaskResult, &str, &str)> = Vec::with_capacity(results.len());
    for r in results {
        let cat = categories
            .task_category
            .get(&r.task)
            .ok_or_else(|| Error::OrphanTask(r.task.clone()))?;
        let group = categories
            .category_group
            .get(cat)
            .map(String::as_str)
            .unwrap_or(cat.as_str());
        assigned.push((r, cat.as_str(), group));
    }
    let cat_order = first_seen_order(assigned.iter().map(|(_, c, _)| *c));
    let cat_summaries = cat_order
        .iter()
        .map(|c| {
            let members: Vec<Summary> = assigned
                .iter()
                .filter(|(_, cat, _)| cat == c)
                .map(|(r, _, _)| Summary {
                    name: r.task.clone(),
                    value: r.value,
                    task_count: 1,
                })
                .collect();
            combine(c, &members)
        })
        .collect::<Result<Vec<_>>>()?;
    let group_order = first_seen_order(assigned.iter().map(|(_, _, g)| *g));
    let groups = group_order
        .iter()
        .map(|g| {
            let members: Vec<Summary> = cat_summaries
                .iter()
                .filter(|s| {
                    categories
                        .category_group
                        .get(&s.name)
                        .map_or(&s.name, |x| x)
                        == g
                })
                .cloned()
                .collect();
            combine(g, &members)
        })
        .collect::<Result<Vec<_>>>()?;
    let overall = if results.is_empty() {
        None
    } else {
        Some(combine("overall", &groups)?)
    };
    Ok(EvalReport {
        tasks: results.to_vec(),
        categories: cat_summaries,
        groups,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    Csv,
    Table,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportLine {
    Task(TaskResult),
    Category(Summary),
    Group(Summary),
    Overall(Summary),
}

const CSV_HEADER: &str = "kind,name,category,group,metric,value,count";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn report_lines(report: &EvalReport) -> Vec<ReportLine> {
    let mut lines: Vec<ReportLine> = report.tasks.iter().cloned().map(ReportLine::Task).collect();
    lines.extend(report.categories.iter().cloned().map(ReportLine::Category));
    lines.extend(report.groups.iter().cloned().map(ReportLine::Group));
    lines.extend(report.overall.iter().cloned().map(ReportLine::Overall));
    lines
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::JsonLines => {
            for line in report_lines(report) {
                out.push_str(&serde_json::to_string(&line).expect("report rows serialize"));
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for line in report_lines(report) {
                let (kind, name, category, group, metric, value, count) = match &line {
                    ReportLine::Task(t) => (
                        "task",
                        &t.task,
                        t.category.as_str(),
                        t.group.as_str(),
                        t.metric.to_string(),
                        t.value,
                        t.query_count,
                    ),
                    ReportLine::Category(s) => (
                        "category",
                        &s.name,
                        "",
                        "",
                        String::new(),
                        s.value,
                        s.task_count,
                    ),
                    ReportLine::Group(s) => (
                        "group",
                        &s.name,
                        "",
                        "",
                        String::new(),
                        s.value,
                        s.task_count,
                    ),
                    ReportLine::Overall(s) => (
                        "overall",
                        &s.name,
                        "",
                        "",
                        String::new(),
                        s.value,
                        s.task_count,
                    ),
                };
                let _ = writeln!(
                    out,
                    "{kind},{},{},{},{metric},{value:?},{count}",
                    csv_field(name),
                    csv_field(category),
                    csv_field(group)
                );
            }
        }
        ReportFormat::Table => render_table(report, &mut out),
    }
    Ok(out)
}

fn render_table(report: &EvalReport, out: &mut String) {
    let name_w = report
        .tasks
        .iter()
        .map(|t| t.task.len())
        .chain(report.categories.iter().map(|c| c.name.len() + 6))
        .chain(report.groups.iter().map(|g| g.name.len() + 6))
        .chain([8])
        .max()
        .unwrap_or(8);
    let cat_w = report
        .tasks
        .iter()
        .map(|t| t.category.len())
        .chain([8])
        .max()
        .unwrap_or(8);
    let rule = "-".repeat(name_w + cat_w + 36);
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<cat_w$}  {:<9}  {:>9}  {:>8}",
        "task", "category", "metric", "score(%)", "n"
    );
    let _ = writeln!(out, "{rule}");
    for t in &report.tasks {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<cat_w$}  {:<9}  {:>9.2}  {:>8}",
            t.task,
            t.category,
            t.metric.to_string(),
            t.value * 100.0,
            t.query_count
        );
    }
    if !report.categories.is_empty() {
        let _ = writeln!(out, "{rule}");
    }
    for (label, rows) in [("avg - ", &report.categories), ("avg - ", &report.groups)] {
        for s in rows.iter() {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<cat_w$}  {:<9}  {:>9.2}  {:>8}",
                format!("{label}{}", s.name),
                "",
                "",
                s.value * 100.0,
                format!("{} tasks", s.task_count)
            );
        }
    }
    if let Some(o) = &report.overall {
        let _ = writeln!(out, "{rule}");
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<cat_w$}  {:<9}  {:>9.2}  {:>8}",
            "avg - all",
            "",
            "",
            o.value * 100.0,
            format!("{} tasks", o.task_count)
        );
    }
}

pub fn emit_report<W: Write>(report: &EvalReport, format: ReportFormat, mut out: W) -> Result<()> {
    out.write_all(render_report(report, format)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines report back.
pub fn parse_report_jsonl<R: BufRead>(input: R) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<report>".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            ReportLine::Task(t) => report.tasks.push(t),
            ReportLine::Category(s) => report.categories.push(s),
            ReportLine::Group(s) => report.groups.push(s),
            ReportLine::Overall(s) => report.overall = Some(s),
        }
    }
    Ok(report)
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Reads a CSV report back.
pub fn parse_report_csv<R: BufRead>(input: R) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let located = |message: String| Error::Parse {
            path: "<report>".into(),
            line: i + 1,
            message,
        };
        if i == 0 {
            if line != CSV_HEADER {
                return Err(located(format!("expected header {CSV_HEADER:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(&line);
        if f.len() != 7 {
            return Err(located(format!("expected 7 fields, got {}", f.len())));
        }
        let value: f64 = f[5]
            .parse()
            .map_err(|_| located(format!("bad value {:?}", f[5])))?;
        let count: usize = f[6]
            .parse()
            .map_err(|_| located(format!("bad count {:?}", f[6])))?;
        let summary = || Summary {
            name: f[1].clone(),
            value,
            task_count: count,
        };
        match f[0].as_str() {
            "task" => report.tasks.push(TaskResult {
                task: f[1].clone(),
                category: f[2].clone(),
                group: f[3].clone(),
                metric: f[4].parse().map_err(|e: Error| located(e.to_string()))?,
                value,
                query_count: count,
            }),
            "category" => report.categories.push(summary()),
            "group" => report.groups.push(summary()),
            "overall" => report.overall = Some(summary()),
            other => return Err(located(format!("unknown row kind {other:?}"))),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(rows: &[(&str, &[f64])]) -> CandidatePool {
        let ids = rows.iter().map(|(id, _)| id.to_string()).collect();
        let m = DenseMatrix::from_rows(&rows.iter().map(|(_, r)| r.to_vec()).collect::<Vec<_>>())
            .unwrap();
        CandidatePool::new(ids, m).unwrap()
    }

    fn ranking(ids: &[&str]) -> Ranking {
        Ranking(
            ids.iter()
                .enumerate()
                .map(|(i, id)| RankedCandidate {
                    id: id.to_string(),
                    score: -(i as f64),
                })
                .collect(),
        )
    }

    fn gold(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn query_itself_ranks_first() {
        let p = pool(&[("a", &[1.0, 0.0]), ("b", &[0.3, 0.7]), ("c", &[-1.0, 0.2])]);
        let r = rank_candidates(&[0.3, 0.7], &p).unwrap();
        assert_eq!(r.0[0].id, "b");
        assert!(r.0.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn ties_break_by_id() {
        let p = pool(&[("z", &[1.0, 0.0]), ("m", &[1.0, 0.0]), ("a", &[0.0, 1.0])]);
        let r = rank_candidates(&[1.0, 0.0], &p).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["m", "z", "a"]);
    }

    #[test]
    fn ranking_errors() {
        assert!(CandidatePool::new(vec![], DenseMatrix::zeros(0, 2)).is_err());
        assert!(CandidatePool::new(gold(&["a"]), DenseMatrix::zeros(1, 2)).is_err());
        assert!(CandidatePool::new(gold(&["a", "a"]), DenseMatrix::identity(2)).is_err());
        let p = pool(&[("a", &[1.0, 0.0])]);
        assert!(rank_candidates(&[1.0], &p).is_err());
        assert!(rank_candidates(&[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn hit_examples() {
        let r = ranking(&["a", "b", "c"]);
        assert_eq!(hit_at_1(&r, &gold(&["a"])).unwrap(), 1.0);
        assert_eq!(hit_at_1(&r, &gold(&["b"])).unwrap(), 0.0);
        assert_eq!(hit_at_1(&r, &gold(&["c", "a"])).unwrap(), 1.0);
        assert!(hit_at_1(&r, &gold(&["x"])).is_err());
        assert!(hit_at_1(&r, &[]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let r = ranking(&["a", "b", "c", "d", "e", "f"]);
        assert_eq!(ndcg_at_k(&r, &gold(&["a"]), 5).unwrap(), 1.0);
        assert!((ndcg_at_k(&r, &gold(&["c"]), 5).unwrap() - 0.5).abs() < 1e-15);
        // (1/log2(3) + 1/log2(5)) / (1 + 1/log2(3))
        let v = ndcg_at_k(&r, &gold(&["b", "d"]), 5).unwrap();
        assert!((v - 0.6509209298071326).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&r, &gold(&["f"]), 5).unwrap(), 0.0);
    }

    #[test]
    fn recall_examples() {
        let r = ranking(&["a", "b", "c", "d"]);
        assert_eq!(recall_at_k(&r, &gold(&["a", "d"]), 2).unwrap(), 0.5);
        assert_eq!(recall_at_k(&r, &gold(&["a", "d"]), 4).unwrap(), 1.0);
    }

    fn task(name: &str, cat: &str, v: f64) -> TaskResult {
        TaskResult {
            task: name.into(),
            category: cat.into(),
            group: String::new(),
            metric: Metric::HitAt1,
            value: v,
            query_count: 10,
        }
    }

    #[test]
    fn aggregation() {
        let results = vec![
            task("t1", "A", 0.2),
            task("t2", "A", 0.4),
            task("t3", "B", 0.9),
        ];
        let mut map = CategoryMap::default();
        for (t, c) in [("t1", "A"), ("t2", "A"), ("t3", "B")] {
            map.task_category.insert(t.into(), c.into());
        }
        map.category_group.insert("A".into(), "G".into());
        map.category_group.insert("B".into(), "G".into());
        let rep = aggregate(&results, &map).unwrap();
        assert_eq!(rep.categories.len(), 2);
        assert!((rep.categories[0].value - 0.3).abs() < 1e-15);
        assert_eq!(rep.groups.len(), 1);
        let overall = rep.overall.unwrap();
        assert!((overall.value - 0.5).abs() < 1e-12);
        assert_eq!(overall.task_count, 3);

        let orphan = vec![task("t9", "A", 0.1)];
        assert!(matches!(
            aggregate(&orphan, &map),
            Err(Error::OrphanTask(_))
        ));

        let empty = aggregate(&[], &map).unwrap();
        assert!(empty.overall.is_none());
    }

    #[test]
    fn identical_values_aggregate_to_themselves() {
        let results: Vec<_> = (0..5).map(|i| task(&format!("t{i}"), "C", 0.37)).collect();
        let mut map = CategoryMap::default();
        for r in &results {
            map.task_category.insert(r.task.clone(), "C".into());
        }
        let rep = aggregate(&results, &map).unwrap();
        assert!((rep.overall.unwrap().value - 0.37).abs() < 1e-15);
    }

    #[test]
    fn csv_quoting_roundtrips() {
        let mut t = task("odd, \"name\"", "A", 0.25);
        t.group = "G".into();
        let mut map = CategoryMap::default();
        map.task_category.insert(t.task.clone(), "A".into());
        let rep = aggregate(&[t], &map).unwrap();
        let csv = render_report(&rep, ReportFormat::Csv).unwrap();
        let back = parse_report_csv(csv.as_bytes()).unwrap();
        assert_eq!(back, rep);
    }
}
