//! Run configuration: a flat `key = value` file plus `key=value` overrides.
//!
//! ```text
//! # NFCorpus, sparse retriever, all four methods
//! dataset = data/nfcorpus
//! retriever = sparse
//! rewriter = live
//! llm.endpoint = http://localhost:8000/v1/chat/completions
//! methods = Org,Tkn,LLM,GLLM
//! output = runs/nfcorpus-sparse
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Later keys win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attribution::{NormalizationScheme, DEFAULT_K_DOCS, DEFAULT_STEPS};
use crate::corpus::BeirLayout;
use crate::eval::DEFAULT_CUTOFFS;
use crate::retriever::RetrieverKind;
use crate::rewrite::{MethodTag, DEFAULT_MAX_TOKENS, DEFAULT_MODEL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriterKind {
    /// Echoes the original query.
    Identity,
    /// Looks rewrites up in a JSON script keyed by query id.
    Scripted,
    /// Calls a chat-completions endpoint.
    Live,
}

impl FromStr for RewriterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(RewriterKind::Identity),
            "scripted" => Ok(RewriterKind::Scripted),
            "live" => Ok(RewriterKind::Live),
            _ => Err(Error::Config(format!(
                "unknown rewriter `{s}` (identity, scripted, live)"
            ))),
        }
    }
}

impl fmt::Display for RewriterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewriterKind::Identity => "identity",
            RewriterKind::Scripted => "scripted",
            RewriterKind::Live => "live",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// BEIR dataset directory; `corpus`, `queries` and `qrels` default into it.
    pub dataset: Option<PathBuf>,
    pub split: String,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Index snapshot to load instead of building from the corpus.
    pub index: Option<PathBuf>,
    pub retriever: RetrieverKind,
    pub seed: u64,
    pub dim: usize,
    pub expansions: usize,
    pub bridge_command: Option<String>,
    pub bridge_address: Option<String>,
    pub k_docs: usize,
    pub steps: usize,
    pub normalization: NormalizationScheme,
    pub rewriter: RewriterKind,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub cache_dir: Option<PathBuf>,
    pub attempts: usize,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    pub methods: Vec<MethodTag>,
    pub cutoffs: Vec<usize>,
    pub output: PathBuf,
    pub concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            split: "test".into(),
            corpus: None,
            queries: None,
            qrels: None,
            index: None,
            retriever: RetrieverKind::Sparse,
            seed: 13,
            dim: crate::retriever::DEFAULT_DIM,
            expansions: crate::retriever::DEFAULT_EXPANSIONS,
            bridge_command: None,
            bridge_address: None,
            k_docs: DEFAULT_K_DOCS,
            steps: DEFAULT_STEPS,
            normalization: NormalizationScheme::L1,
            rewriter: RewriterKind::Identity,
            script: None,
            endpoint: None,
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            cache_dir: Some(PathBuf::from("llm-cache")),
            attempts: 3,
            backoff_ms: 1000,
            timeout_s: 120,
            methods: MethodTag::ALL.to_vec(),
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            output: PathBuf::from("runs/latest"),
            concurrency: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn optional_string(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

fn show_path(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Splits a config text into `(key, value)` pairs, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                i + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (key, value) in parse_pairs(text)? {
            config.set(&key, &value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override such as `attribution.steps=128`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = optional_path(value),
            "split" => self.split = value.to_string(),
            "corpus" => self.corpus = optional_path(value),
            "queries" => self.queries = optional_path(value),
            "qrels" => self.qrels = optional_path(value),
            "index" => self.index = optional_path(value),
            "retriever" => self.retriever = parse(key, value)?,
            "retriever.seed" => self.seed = parse(key, value)?,
            "retriever.dim" => self.dim = parse(key, value)?,
            "retriever.expansions" => self.expansions = parse(key, value)?,
            "bridge.command" => self.bridge_command = optional_string(value),
            "bridge.address" => self.bridge_address = optional_string(value),
            "attribution.k_docs" => self.k_docs = parse(key, value)?,
            "attribution.steps" => self.steps = parse(key, value)?,
            "attribution.baseline" => {
                if value != "zero" {
                    return Err(Error::Config(format!(
                        "`{key}`: only the zero baseline is supported, got `{value}`"
                    )));
                }
            }
            "attribution.normalization" => self.normalization = parse(key, value)?,
            "rewriter" => self.rewriter = parse(key, value)?,
            "rewriter.script" => self.script = optional_path(value),
            "llm.endpoint" => self.endpoint = optional_string(value),
            "llm.model" => self.model = value.to_string(),
            "llm.temperature" => self.temperature = parse(key, value)?,
            "llm.max_tokens" => self.max_tokens = parse(key, value)?,
            "llm.cache_dir" => self.cache_dir = optional_path(value),
            "llm.retries" => self.attempts = parse(key, value)?,
            "llm.backoff_ms" => self.backoff_ms = parse(key, value)?,
            "llm.timeout_s" => self.timeout_s = parse(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| parse::<MethodTag>(key, m.trim()))
                    .collect::<Result<_>>()?;
            }
            "cutoffs" => {
                let mut cutoffs: Vec<usize> = value
                    .split(',')
                    .map(|c| parse(key, c.trim()))
                    .collect::<Result<_>>()?;
                cutoffs.sort_unstable();
                cutoffs.dedup();
                self.cutoffs = cutoffs;
            }
            "output" => self.output = PathBuf::from(value),
            "concurrency" => self.concurrency = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_docs == 0 {
            return fail("attribution.k_docs must be at least 1");
        }
        if self.steps == 0 {
            return fail("attribution.steps must be at least 1");
        }
        if self.cutoffs.is_empty() || self.cutoffs[0] == 0 {
            return fail("cutoffs must be a non-empty list of positive integers");
        }
        if self.methods.is_empty() {
            return fail("methods must name at least one of Org, Tkn, LLM, GLLM");
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                return Err(Error::Config(format!("method {m} listed twice")));
            }
            seen.push(*m);
        }
        if self.concurrency == 0 {
            return fail("concurrency must be at least 1");
        }
        if self.retriever == RetrieverKind::Dense && self.dim == 0 {
            return fail("retriever.dim must be at least 1");
        }
        if self.retriever == RetrieverKind::Bridge
            && self.bridge_command.is_none()
            && self.bridge_address.is_none()
        {
            return fail("retriever = bridge needs bridge.command or bridge.address");
        }
        if self.rewriter == RewriterKind::Scripted && self.script.is_none() {
            return fail("rewriter = scripted needs rewriter.script");
        }
        if self.rewriter == RewriterKind::Live && self.endpoint.is_none() {
            return fail("rewriter = live needs llm.endpoint");
        }
        Ok(())
    }

    /// Retrieval depth: the largest cutoff.
    pub fn depth(&self) -> usize {
        self.cutoffs.last().copied().unwrap_or(100)
    }

    fn dataset_file(
        &self,
        explicit: &Option<PathBuf>,
        pick: fn(BeirLayout) -> PathBuf,
        what: &str,
    ) -> Result<PathBuf> {
        if let Some(path) = explicit {
            return Ok(path.clone());
        }
        match &self.dataset {
            Some(root) => Ok(pick(BeirLayout::new(root, &self.split))),
            None => Err(Error::Config(format!(
                "no {what} path: set `{what}` or `dataset`"
            ))),
        }
    }

    pub fn corpus_path(&self) -> Result<PathBuf> {
        self.dataset_file(&self.corpus, |l| l.corpus, "corpus")
    }

    pub fn queries_path(&self) -> Result<PathBuf> {
        self.dataset_file(&self.queries, |l| l.queries, "queries")
    }

    pub fn qrels_path(&self) -> Result<PathBuf> {
        self.dataset_file(&self.qrels, |l| l.qrels, "qrels")
    }

    /// Every key with its resolved value, sorted by key.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let join = |items: Vec<String>| items.join(",");
        let mut pairs = vec![
            ("attribution.baseline", "zero".to_string()),
            ("attribution.k_docs", self.k_docs.to_string()),
            ("attribution.normalization", self.normalization.to_string()),
            ("attribution.steps", self.steps.to_string()),
            (
                "bridge.address",
                self.bridge_address.clone().unwrap_or_default(),
            ),
            (
                "bridge.command",
                self.bridge_command.clone().unwrap_or_default(),
            ),
            ("concurrency", self.concurrency.to_string()),
            ("corpus", show_path(&self.corpus)),
            (
                "cutoffs",
                join(self.cutoffs.iter().map(ToString::to_string).collect()),
            ),
            ("dataset", show_path(&self.dataset)),
            ("index", show_path(&self.index)),
            ("llm.backoff_ms", self.backoff_ms.to_string()),
            ("llm.cache_dir", show_path(&self.cache_dir)),
            ("llm.endpoint", self.endpoint.clone().unwrap_or_default()),
            ("llm.max_tokens", self.max_tokens.to_string()),
            ("llm.model", self.model.clone()),
            ("llm.retries", self.attempts.to_string()),
            ("llm.temperature", self.temperature.to_string()),
            ("llm.timeout_s", self.timeout_s.to_string()),
            (
                "methods",
                join(self.methods.iter().map(ToString::to_string).collect()),
            ),
            ("output", self.output.display().to_string()),
            ("qrels", show_path(&self.qrels)),
            ("queries", show_path(&self.queries)),
            ("retriever", self.retriever.to_string()),
            ("retriever.dim", self.dim.to_string()),
            ("retriever.expansions", self.expansions.to_string()),
            ("retriever.seed", self.seed.to_string()),
            ("rewriter", self.rewriter.to_string()),
            ("rewriter.script", show_path(&self.script)),
            ("split", self.split.clone()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        pairs
    }

    /// The resolved config as `key = value` lines; parses back to `self`.
    pub fn render(&self) -> String {
        self.resolved()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let config = RunConfig::from_text(
            "# comment\n\ndataset = data/nf\nretriever = dense\ncutoffs = 10, 1, 5\nmethods = org, gllm\n",
        )
        .unwrap();
        assert_eq!(config.retriever, RetrieverKind::Dense);
        assert_eq!(config.cutoffs, [1, 5, 10]);
        assert_eq!(config.depth(), 10);
        assert_eq!(config.methods, [MethodTag::Org, MethodTag::Gllm]);
        assert_eq!(config.k_docs, 5);
        assert_eq!(config.steps, 64);
        assert_eq!(config.normalization, NormalizationScheme::L1);
        assert_eq!(
            config.qrels_path().unwrap(),
            Path::new("data/nf/qrels/test.tsv")
        );

        let mut config = config;
        config.apply_override("attribution.steps=128").unwrap();
        assert_eq!(config.steps, 128);
        assert!(config.apply_override("nonsense=1").is_err());
        assert!(config.apply_override("attribution.steps=many").is_err());
        assert!(config
            .apply_override("attribution.baseline=uniform")
            .is_err());
    }

    #[test]
    fn render_round_trips() {
        let config = RunConfig {
            dataset: Some("d".into()),
            rewriter: RewriterKind::Live,
            endpoint: Some("http://x/v1/chat/completions".into()),
            temperature: 0.25,
            ..RunConfig::default()
        };
        let text = config.render();
        assert_eq!(RunConfig::from_text(&text).unwrap(), config);
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn rejects_invalid_settings() {
        for text in [
            "attribution.k_docs = 0",
            "cutoffs = 0,5",
            "methods = Org,Org",
            "rewriter = scripted",
            "rewriter = live",
            "retriever = bridge",
            "no equals sign",
        ] {
            assert!(RunConfig::from_text(text).is_err(), "{text}");
        }
    }
}
