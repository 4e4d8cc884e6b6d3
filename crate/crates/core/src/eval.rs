//! nDCG@k, MAP@k and P@k with trec_eval conventions, computed per query and
//! macro-averaged over the queries that have at least one relevant document.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::retriever::RankedList;
use crate::rewrite::MethodTag;
use crate::{Error, Result};

pub const DEFAULT_CUTOFFS: [usize; 5] = [1, 3, 5, 10, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg,
    Map,
    Precision,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Map, Metric::Precision];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Map => "map",
            Metric::Precision => "p",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn is_relevant(row: &HashMap<String, u32>, doc: &str) -> bool {
    row.get(doc).is_some_and(|&g| g > 0)
}

fn relevant_count(row: &HashMap<String, u32>) -> usize {
    row.values().filter(|&&g| g > 0).count()
}

/// Relevant documents in the top `k`, over a fixed denominator `k`.
pub fn precision_at_k(ranking: &[String], row: &HashMap<String, u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| is_relevant(row, d))
        .count();
    hits as f64 / k as f64
}

fn discount(rank: usize) -> f64 {
    // rank is 1-based
    1.0 / ((rank + 1) as f64).log2()
}

/// Linear-gain nDCG. `None` when the row has no positive grade.
pub fn ndcg_at_k(ranking: &[String], row: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = row.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) * discount(i + 1))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(row.get(d).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    Some(dcg / idcg)
}

/// Average precision cut at `k`, divided by the total number of relevant
/// documents (trec_eval `map_cut`). `None` when nothing is relevant.
pub fn map_at_k(ranking: &[String], row: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let total = relevant_count(row);
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().take(k).enumerate() {
        if is_relevant(row, doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Rankings of one method for every query of the evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: MethodTag,
    pub rankings: BTreeMap<String, RankedList>,
}

/// Metric key, rendered as `ndcg@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetricKey {
    pub metric: Metric,
    pub cutoff: usize,
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.metric, self.cutoff)
    }
}

impl std::str::FromStr for MetricKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad metric key `{s}`"));
        let (name, cutoff) = s.split_once('@').ok_or_else(bad)?;
        Ok(MetricKey {
            metric: Metric::from_name(name).ok_or_else(bad)?,
            cutoff: cutoff.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: MethodTag,
    pub cutoffs: Vec<usize>,
    pub per_query: BTreeMap<String, BTreeMap<MetricKey, f64>>,
    pub means: BTreeMap<MetricKey, f64>,
    /// Queries of the run without any relevant document in the qrels.
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }

    pub fn mean(&self, metric: Metric, cutoff: usize) -> Option<f64> {
        self.means.get(&MetricKey { metric, cutoff }).copied()
    }

    /// Per-query JSON lines: `{"method", "query_id", "metrics": {"ndcg@1": …}}`.
    pub fn per_query_jsonl(&self) -> String {
        let mut out = String::new();
        for (qid, values) in &self.per_query {
            let record = PerQueryRecord {
                method: self.method,
                query_id: qid.clone(),
                metrics: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }

    /// Aggregate TSV rows (no header): method, metric, cutoff, value.
    pub fn tsv_rows(&self) -> String {
        let mut out = String::new();
        for metric in Metric::ALL {
            for &cutoff in &self.cutoffs {
                let value = self.mean(metric, cutoff).unwrap_or(0.0);
                let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", self.method, metric, cutoff, value);
            }
        }
        out
    }
}

pub const TSV_HEADER: &str = "method\tmetric\tcutoff\tvalue";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryRecord {
    pub method: MethodTag,
    pub query_id: String,
    pub metrics: BTreeMap<String, f64>,
}

pub fn read_per_query(path: impl AsRef<Path>) -> Result<Vec<PerQueryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Evaluates every query of `run` at `cutoffs`.
///
/// Queries without a positive qrels grade are excluded from the means; a
/// query with an empty ranking still counts, with all metrics 0.
pub fn evaluate_run(run: &RunResult, qrels: &Qrels, cutoffs: &[usize]) -> Result<EvalReport> {
    if cutoffs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one cutoff is required".into(),
        ));
    }
    if cutoffs.contains(&0) {
        return Err(Error::InvalidArgument("cutoffs must be positive".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, ranked) in &run.rankings {
        let Some(row) = qrels.row(qid).filter(|r| relevant_count(r) > 0) else {
            excluded.push(qid.clone());
            continue;
        };
        let ranking = ranked.doc_ids();
        let mut values = BTreeMap::new();
        for &cutoff in cutoffs {
            let ndcg = ndcg_at_k(&ranking, row, cutoff).unwrap_or(0.0);
            let map = map_at_k(&ranking, row, cutoff).unwrap_or(0.0);
            values.insert(
                MetricKey {
                    metric: Metric::Ndcg,
                    cutoff,
                },
                ndcg,
            );
            values.insert(
                MetricKey {
                    metric: Metric::Map,
                    cutoff,
                },
                map,
            );
            values.insert(
                MetricKey {
                    metric: Metric::Precision,
                    cutoff,
                },
                precision_at_k(&ranking, row, cutoff),
            );
        }
        per_query.insert(qid.clone(), values);
    }
    let means = macro_means(per_query.values());
    if !excluded.is_empty() {
        log::info!(
            "{}: {} queries without relevant documents excluded",
            run.method,
            excluded.len()
        );
    }
    Ok(EvalReport {
        method: run.method,
        cutoffs: cutoffs.to_vec(),
        per_query,
        means,
        excluded,
    })
}

/// Arithmetic mean per metric key, summed in iteration order.
pub fn macro_means<'a>(
    rows: impl Iterator<Item = &'a BTreeMap<MetricKey, f64>>,
) -> BTreeMap<MetricKey, f64> {
    let mut sums: BTreeMap<MetricKey, (f64, usize)> = BTreeMap::new();
    for row in rows {
        for (key, value) in row {
            let entry = sums.entry(*key).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}
