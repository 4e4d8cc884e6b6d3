//! Side-by-side comparison of per-query results from one or more runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::eval::{macro_means, read_per_query, Metric, MetricKey, PerQueryRecord};
use crate::rewrite::MethodTag;
use crate::{Error, Result};

/// Macro means on a metric × cutoff × method grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub methods: Vec<MethodTag>,
    pub keys: Vec<MetricKey>,
    pub values: BTreeMap<(MetricKey, MethodTag), f64>,
    pub queries: usize,
}

impl Comparison {
    pub fn value(&self, key: MetricKey, method: MethodTag) -> Option<f64> {
        self.values.get(&(key, method)).copied()
    }

    /// Methods holding the highest value for `key`; ties all win.
    pub fn best(&self, key: MetricKey) -> Vec<MethodTag> {
        let top = self
            .methods
            .iter()
            .filter_map(|&m| self.value(key, m))
            .fold(f64::NEG_INFINITY, f64::max);
        self.methods
            .iter()
            .copied()
            .filter(|&m| self.value(key, m) == Some(top))
            .collect()
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    /// Rows of `metric, cutoff, method, value, best`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tcutoff\tmethod\tvalue\tbest\n");
        for &key in &self.keys {
            let best = self.best(key);
            for &method in &self.methods {
                let value = self.value(key, method).unwrap_or(0.0);
                let _ = writeln!(
                    out,
                    "{}\t{}\t{method}\t{value:.6}\t{}",
                    key.metric,
                    key.cutoff,
                    u8::from(best.contains(&method))
                );
            }
        }
        out
    }

    /// An aligned table, one row per metric@cutoff; best cells carry `*`.
    pub fn to_text(&self) -> String {
        let label_width = self
            .keys
            .iter()
            .map(|k| k.to_string().len())
            .max()
            .unwrap_or(0)
            .max("metric".len());
        let col = 9;
        let mut out = format!("{:<label_width$}", "metric");
        for m in &self.methods {
            let _ = write!(out, "  {:>col$}", m.as_str());
        }
        out.push('\n');
        for &key in &self.keys {
            let best = self.best(key);
            let _ = write!(out, "{:<label_width$}", key.to_string());
            for &m in &self.methods {
                let cell = match self.value(key, m) {
                    Some(v) if best.contains(&m) => format!("{v:.4}*"),
                    Some(v) => format!("{v:.4} "),
                    None => "- ".into(),
                };
                let _ = write!(out, "  {cell:>col$}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "\n{} queries; * marks the best method per row",
            self.queries
        );
        out
    }
}

/// Merges per-query records from several sources into one grid.
///
/// Every method must cover the same query set and the same metric keys, and
/// no method may come from two sources.
pub fn compare(sources: &[Vec<PerQueryRecord>]) -> Result<Comparison> {
    let mut by_method: BTreeMap<MethodTag, BTreeMap<String, BTreeMap<MetricKey, f64>>> =
        BTreeMap::new();
    for (i, records) in sources.iter().enumerate() {
        let mut here: BTreeMap<MethodTag, BTreeMap<String, BTreeMap<MetricKey, f64>>> =
            BTreeMap::new();
        for record in records {
            let metrics = record
                .metrics
                .iter()
                .map(|(k, v)| Ok((k.parse::<MetricKey>()?, *v)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let rows = here.entry(record.method).or_default();
            if rows.insert(record.query_id.clone(), metrics).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "source {}: {} has query `{}` twice",
                    i + 1,
                    record.method,
                    record.query_id
                )));
            }
        }
        for (method, rows) in here {
            if by_method.insert(method, rows).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "method {method} appears in more than one source"
                )));
            }
        }
    }
    let Some((&first, first_rows)) = by_method.iter().next() else {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    };
    let reference: BTreeSet<&String> = first_rows.keys().collect();
    let reference_keys: BTreeSet<MetricKey> = first_rows
        .values()
        .flat_map(|m| m.keys().copied())
        .collect();
    for (&method, rows) in &by_method {
        let ids: BTreeSet<&String> = rows.keys().collect();
        if ids != reference {
            let diff: Vec<String> = reference
                .symmetric_difference(&ids)
                .map(|s| s.to_string())
                .collect();
            log::error!("{first} and {method} cover different queries");
            return Err(Error::QuerySetMismatch(diff));
        }
        for row in rows.values() {
            let keys: BTreeSet<MetricKey> = row.keys().copied().collect();
            if keys != reference_keys {
                return Err(Error::InvalidArgument(format!(
                    "{method} was evaluated at different metrics or cutoffs than {first}"
                )));
            }
        }
    }
    let mut keys: Vec<MetricKey> = reference_keys.into_iter().collect();
    keys.sort_by_key(|k| (Metric::ALL.iter().position(|m| *m == k.metric), k.cutoff));
    let methods: Vec<MethodTag> = MethodTag::ALL
        .into_iter()
        .filter(|m| by_method.contains_key(m))
        .collect();
    let mut values = BTreeMap::new();
    for (&method, rows) in &by_method {
        for (key, mean) in macro_means(rows.values()) {
            values.insert((key, method), mean);
        }
    }
    Ok(Comparison {
        methods,
        keys,
        values,
        queries: reference.len(),
    })
}

/// Reads `per_query.jsonl` from each run directory and compares them.
pub fn compare_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<Comparison> {
    let sources = dirs
        .iter()
        .map(|d| read_per_query(d.as_ref().join("per_query.jsonl")))
        .collect::<Result<Vec<_>>>()?;
    compare(&sources)
}
