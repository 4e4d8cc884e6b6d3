//! One closed-loop pass over a query set for each configured method.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RewriterKind, RunConfig};
use crate::attribution::{attribute_query, AttributedQuery, NormalizationScheme};
use crate::bridge::BridgeClient;
use crate::corpus::{load_corpus, load_qrels, load_queries, Qrels, Query};
use crate::eval::{evaluate_run, write_text, EvalReport, RunResult, TSV_HEADER};
use crate::retriever::{IndexSnapshot, NativeRetriever, RankedList, Retriever, RetrieverKind};
use crate::rewrite::{
    build_guided_prompt, build_plain_prompt, rewrite, select_top_tokens, ChatClient,
    ChatClientConfig, IdentityRewriter, MethodTag, PromptSettings, ResponseCache, RewriteScript,
    Rewriter, RewrittenQuery, ScriptedRewriter,
};
use crate::{Error, Result};

/// Everything recorded about one query under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub method: MethodTag,
    pub query_id: String,
    pub original: String,
    pub tokens: Vec<String>,
    /// Documents the attribution was averaged over.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationScheme>,
    #[serde(default)]
    pub normalization_degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub no_evidence: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    /// The query string actually issued for the final ranking.
    pub rewrite: String,
    pub rewrite_tokens: Vec<String>,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub cache_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_id: Option<String>,
    /// Set when the rewriter failed and the original ranking was kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Head of the final ranking (top 10).
    pub ranking_head: Vec<String>,
}

impl QueryTrace {
    fn new(method: MethodTag, query: &Query) -> Self {
        QueryTrace {
            method,
            query_id: query.id.clone(),
            original: query.text.clone(),
            tokens: query.tokens.clone(),
            top_doc_ids: Vec::new(),
            raw: None,
            normalized: None,
            normalization: None,
            normalization_degenerate: false,
            steps: None,
            no_evidence: false,
            prompt_hash: None,
            rewrite: query.text.clone(),
            rewrite_tokens: query.tokens.clone(),
            fallback: false,
            cache_hit: false,
            response_id: None,
            error: None,
            ranking_head: Vec::new(),
        }
    }

    fn record_attribution(&mut self, attributed: &AttributedQuery) {
        self.top_doc_ids = attributed.doc_ids.clone();
        self.raw = Some(attributed.raw.clone());
        self.normalized = Some(attributed.normalized.clone());
        self.normalization = Some(attributed.scheme);
        self.normalization_degenerate = attributed.normalization_degenerate;
        self.steps = Some(attributed.steps);
        self.no_evidence = attributed.no_evidence;
    }

    fn record_rewrite(&mut self, rewritten: &RewrittenQuery) {
        self.rewrite = rewritten.text.clone();
        self.rewrite_tokens = rewritten.tokens.clone();
        self.fallback = rewritten.provenance.fallback;
        self.cache_hit = rewritten.provenance.cache_hit;
        self.response_id = rewritten.provenance.response_id.clone();
        if rewritten.provenance.prompt_hash.is_some() {
            self.prompt_hash = rewritten.provenance.prompt_hash.clone();
        }
    }
}

/// Rankings and traces of one method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub result: RunResult,
    /// In query-id order.
    pub traces: Vec<QueryTrace>,
}

/// All methods of one configured run, evaluated.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub runs: Vec<MethodRun>,
    pub reports: Vec<EvalReport>,
}

impl RunOutputs {
    pub fn report(&self, method: MethodTag) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            for trace in &run.traces {
                out.push_str(&serde_json::to_string(trace).expect("trace serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn per_query_jsonl(&self) -> String {
        self.reports
            .iter()
            .map(EvalReport::per_query_jsonl)
            .collect()
    }

    /// `report.tsv`: the resolved config as `#` lines, then the aggregate rows.
    pub fn report_tsv(&self, config: &RunConfig) -> String {
        let mut out = String::new();
        for line in config.render().lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str(TSV_HEADER);
        out.push('\n');
        for report in &self.reports {
            out.push_str(&report.tsv_rows());
        }
        out
    }

    /// Writes `trace.jsonl`, `per_query.jsonl` and `report.tsv` into `dir`.
    pub fn write(&self, dir: &Path, config: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(dir.join("trace.jsonl"), &self.trace_jsonl())?;
        write_text(dir.join("per_query.jsonl"), &self.per_query_jsonl())?;
        write_text(dir.join("report.tsv"), &self.report_tsv(config))
    }
}

/// A loaded query set, retriever and rewriter, ready to run.
pub struct Experiment {
    pub config: RunConfig,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub retriever: Box<dyn Retriever>,
    pub rewriter: Box<dyn Rewriter>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("queries", &self.queries.len())
            .field("retriever", &self.retriever.describe())
            .finish()
    }
}

/// Builds (or loads) the retriever named by `config`.
pub fn open_retriever(config: &RunConfig) -> Result<Box<dyn Retriever>> {
    if config.retriever == RetrieverKind::Bridge {
        let client = match (&config.bridge_address, &config.bridge_command) {
            (Some(addr), _) => BridgeClient::connect(addr)?,
            (None, Some(command)) => BridgeClient::spawn(command)?,
            (None, None) => {
                return Err(Error::Config(
                    "bridge retriever needs a command or address".into(),
                ))
            }
        };
        log::info!("connected to {}", client.describe());
        return Ok(Box::new(client));
    }
    if let Some(path) = config.index.as_ref().filter(|p| p.exists()) {
        let snapshot = IndexSnapshot::load(path)?;
        if snapshot.kind != config.retriever {
            return Err(Error::Config(format!(
                "index {} holds a {} retriever, config asks for {}",
                path.display(),
                snapshot.kind,
                config.retriever
            )));
        }
        return Ok(Box::new(NativeRetriever::from_snapshot(&snapshot)?));
    }
    let corpus = load_corpus(config.corpus_path()?)?;
    let retriever = NativeRetriever::build(
        config.retriever,
        &corpus,
        config.seed,
        config.dim,
        config.expansions,
    )?;
    if let Some(path) = &config.index {
        retriever.snapshot()?.save(path)?;
        log::info!("index written to {}", path.display());
    }
    Ok(Box::new(retriever))
}

/// Builds the rewriter named by `config`.
pub fn open_rewriter(config: &RunConfig) -> Result<Box<dyn Rewriter>> {
    Ok(match config.rewriter {
        RewriterKind::Identity => Box::new(IdentityRewriter),
        RewriterKind::Scripted => {
            let path = config
                .script
                .as_ref()
                .ok_or_else(|| Error::Config("rewriter.script is not set".into()))?;
            Box::new(ScriptedRewriter::new(RewriteScript::load(path)?))
        }
        RewriterKind::Live => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("llm.endpoint is not set".into()))?;
            let mut client = ChatClientConfig::new(endpoint);
            client.attempts = config.attempts.max(1);
            client.initial_backoff = Duration::from_millis(config.backoff_ms);
            client.timeout = Duration::from_secs(config.timeout_s);
            client.max_in_flight = config.concurrency;
            let cache = config
                .cache_dir
                .as_ref()
                .map(ResponseCache::open)
                .transpose()?;
            Box::new(ChatClient::new(client, cache))
        }
    })
}

impl Experiment {
    pub fn new(
        config: RunConfig,
        queries: Vec<Query>,
        qrels: Qrels,
        retriever: Box<dyn Retriever>,
        rewriter: Box<dyn Rewriter>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Experiment {
            config,
            queries,
            qrels,
            retriever,
            rewriter,
        })
    }

    /// Loads data, retriever and rewriter as described by `config`.
    pub fn load(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let queries = load_queries(config.queries_path()?)?;
        let qrels = load_qrels(config.qrels_path()?)?;
        let retriever = open_retriever(&config)?;
        let rewriter = open_rewriter(&config)?;
        Self::new(config, queries, qrels, retriever, rewriter)
    }

    fn settings(&self) -> PromptSettings {
        PromptSettings {
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    fn attribute(&self, query: &Query, ranked: &RankedList) -> Result<AttributedQuery> {
        attribute_query(
            query,
            ranked,
            self.config.k_docs,
            self.config.steps,
            self.retriever.as_ref(),
            self.config.normalization,
        )
    }

    fn run_query(&self, method: MethodTag, query: &Query) -> Result<(RankedList, QueryTrace)> {
        let depth = self.config.depth();
        let settings = self.settings();
        let mut trace = QueryTrace::new(method, query);
        let original = self.retriever.search(query, depth)?;
        let rewritten = match method {
            MethodTag::Org => None,
            MethodTag::Tkn => {
                let attributed = self.attribute(query, &original)?;
                trace.record_attribution(&attributed);
                Some(Ok(select_top_tokens(query, &attributed.normalized)?))
            }
            MethodTag::Gllm => {
                let attributed = self.attribute(query, &original)?;
                trace.record_attribution(&attributed);
                let request = build_guided_prompt(query, &attributed.normalized, &settings)?;
                trace.prompt_hash = Some(request.prompt_hash.clone());
                Some(rewrite(&request, self.rewriter.as_ref(), method))
            }
            MethodTag::Llm => {
                let request = build_plain_prompt(query, &settings);
                trace.prompt_hash = Some(request.prompt_hash.clone());
                Some(rewrite(&request, self.rewriter.as_ref(), method))
            }
        };
        let ranking = match rewritten {
            None => original,
            Some(Ok(rewritten)) => {
                trace.record_rewrite(&rewritten);
                self.retriever.search(&rewritten.as_query(), depth)?
            }
            Some(Err(e)) => {
                log::warn!(
                    "{method} {}: rewriter failed, keeping original ranking: {e}",
                    query.id
                );
                trace.error = Some(e.to_string());
                trace.fallback = true;
                original
            }
        };
        trace.ranking_head = ranking
            .entries
            .iter()
            .take(10)
            .map(|(d, _)| d.clone())
            .collect();
        Ok((ranking, trace))
    }

    /// Runs `method` over every query, at most `concurrency` at a time.
    /// Output order is by query id regardless of completion order.
    pub fn run_method(&self, method: MethodTag) -> Result<MethodRun> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let results: Vec<(RankedList, QueryTrace)> = pool.install(|| {
            self.queries
                .par_iter()
                .map(|q| self.run_query(method, q))
                .collect::<Result<_>>()
        })?;
        let mut collected: BTreeMap<String, (RankedList, QueryTrace)> = BTreeMap::new();
        for (ranking, trace) in results {
            if collected.contains_key(&trace.query_id) {
                return Err(Error::InvalidArgument(format!(
                    "query id `{}` appears twice",
                    trace.query_id
                )));
            }
            collected.insert(trace.query_id.clone(), (ranking, trace));
        }
        let mut rankings = BTreeMap::new();
        let mut traces = Vec::with_capacity(collected.len());
        for (qid, (ranking, trace)) in collected {
            rankings.insert(qid, ranking);
            traces.push(trace);
        }
        Ok(MethodRun {
            result: RunResult { method, rankings },
            traces,
        })
    }

    /// Runs and evaluates every configured method, in configuration order.
    pub fn run(&self) -> Result<RunOutputs> {
        let mut runs = Vec::new();
        let mut reports = Vec::new();
        for &method in &self.config.methods {
            log::info!("running {method} over {} queries", self.queries.len());
            let run = self.run_method(method)?;
            reports.push(evaluate_run(
                &run.result,
                &self.qrels,
                &self.config.cutoffs,
            )?);
            runs.push(run);
        }
        Ok(RunOutputs { runs, reports })
    }
}
