//! Query rewriting: prompts, rewriters and the top-attribution-token baseline.

mod cache;
mod client;
mod mock_server;
mod prompt;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Query};
use crate::{Error, Result};

pub use cache::{CacheRecord, ResponseCache};
pub use client::{ChatClient, ChatClientConfig, API_KEY_ENV};
pub use mock_server::MockLlmServer;
pub use prompt::{
    build_guided_prompt, build_plain_prompt, extract_original_query, format_attributions,
    render_guided, render_plain, sha256_hex, PromptKind, PromptRequest, PromptSettings,
    DEFAULT_MAX_TOKENS, DEFAULT_MODEL,
};

/// The four compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    /// Original query.
    Org,
    /// Tokens scoring above the query-wise mean attribution.
    Tkn,
    /// LLM rewrite without attribution information.
    #[serde(rename = "LLM")]
    Llm,
    /// Attribution-guided LLM rewrite.
    #[serde(rename = "GLLM")]
    Gllm,
}

impl MethodTag {
    pub const ALL: [MethodTag; 4] = [
        MethodTag::Org,
        MethodTag::Tkn,
        MethodTag::Llm,
        MethodTag::Gllm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Org => "Org",
            MethodTag::Tkn => "Tkn",
            MethodTag::Llm => "LLM",
            MethodTag::Gllm => "GLLM",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cache_hit: bool,
    pub response_id: Option<String>,
    pub prompt_hash: Option<String>,
    /// The rewrite fell back to the original query (or, for Tkn, to all tokens).
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub query_id: String,
    pub method: MethodTag,
    pub text: String,
    pub tokens: Vec<String>,
    pub provenance: Provenance,
}

impl RewrittenQuery {
    pub fn original(query: &Query) -> Self {
        RewrittenQuery {
            query_id: query.id.clone(),
            method: MethodTag::Org,
            text: query.text.clone(),
            tokens: query.tokens.clone(),
            provenance: Provenance::default(),
        }
    }

    pub fn as_query(&self) -> Query {
        Query {
            id: self.query_id.clone(),
            text: self.text.clone(),
            tokens: self.tokens.clone(),
        }
    }
}

/// Keeps the tokens whose score is strictly above the query-wise mean, in
/// query order. If none qualifies every token is kept and `fallback` is set.
pub fn select_top_tokens(query: &Query, scores: &[f64]) -> Result<RewrittenQuery> {
    if scores.len() != query.tokens.len() {
        return Err(Error::LengthMismatch {
            expected: query.tokens.len(),
            got: scores.len(),
        });
    }
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let kept: Vec<String> = query
        .tokens
        .iter()
        .zip(scores)
        .filter(|(_, &s)| s > mean)
        .map(|(t, _)| t.clone())
        .collect();
    let fallback = kept.is_empty();
    let tokens = if fallback { query.tokens.clone() } else { kept };
    Ok(RewrittenQuery {
        query_id: query.id.clone(),
        method: MethodTag::Tkn,
        text: tokens.join(" "),
        tokens,
        provenance: Provenance {
            fallback,
            ..Provenance::default()
        },
    })
}

/// A raw model answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub response_id: String,
    pub cache_hit: bool,
}

/// Anything that turns a prompt into a completion.
pub trait Rewriter: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<Completion>;
}

/// Answers every prompt with the original query.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        Ok(Completion {
            text: request.original_query.clone(),
            response_id: "identity".into(),
            cache_hit: false,
        })
    }
}

/// A fixed rewrite table, either flat (`key → rewrite` for both prompt
/// kinds) or split as `{"guided": {…}, "plain": {…}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteScript {
    pub guided: HashMap<String, String>,
    pub plain: HashMap<String, String>,
}

impl RewriteScript {
    pub fn flat(map: HashMap<String, String>) -> Self {
        RewriteScript {
            guided: map.clone(),
            plain: map,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let split = value.as_object().is_some_and(|o| {
            !o.is_empty()
                && o.iter()
                    .all(|(k, v)| (k == "guided" || k == "plain") && v.is_object())
        });
        if split {
            #[derive(Deserialize)]
            struct Split {
                #[serde(default)]
                guided: HashMap<String, String>,
                #[serde(default)]
                plain: HashMap<String, String>,
            }
            let Split { guided, plain } = serde_json::from_value(value)?;
            Ok(RewriteScript { guided, plain })
        } else {
            Ok(RewriteScript::flat(serde_json::from_value(value)?))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn lookup(&self, kind: PromptKind, key: &str) -> Option<&str> {
        match kind {
            PromptKind::Guided => self.guided.get(key),
            PromptKind::Plain => self.plain.get(key),
        }
        .map(String::as_str)
    }
}

/// Rewrites looked up by query id; unknown ids echo the original query.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRewriter {
    script: RewriteScript,
}

impl ScriptedRewriter {
    pub fn new(script: RewriteScript) -> Self {
        ScriptedRewriter { script }
    }
}

impl Rewriter for ScriptedRewriter {
    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        Ok(match self.script.lookup(request.kind, &request.query_id) {
            Some(text) => Completion {
                text: text.to_string(),
                response_id: format!("scripted:{}", request.query_id),
                cache_hit: false,
            },
            None => Completion {
                text: request.original_query.clone(),
                response_id: "scripted:miss".into(),
                cache_hit: false,
            },
        })
    }
}

const LABELS: [&str; 5] = [
    "rewritten query:",
    "rewritten:",
    "reformulated query:",
    "new query:",
    "query:",
];

fn strip_quotes(mut s: &str) -> &str {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('`', '`'), ('“', '”'), ('‘', '’')];
    loop {
        let t = s.trim();
        let stripped = PAIRS
            .iter()
            .find_map(|&(open, close)| t.strip_prefix(open).and_then(|r| r.strip_suffix(close)));
        match stripped {
            Some(inner) => s = inner,
            None => return t,
        }
    }
}

fn strip_line(line: &str) -> String {
    let mut s = line.trim().trim_matches('*').trim();
    let lower = s.to_lowercase();
    if let Some(label) = LABELS.iter().find(|l| lower.starts_with(*l)) {
        // labels are ASCII, so byte offsets agree between `s` and `lower`
        s = s[label.len()..].trim().trim_start_matches('*').trim();
    }
    strip_quotes(s).to_string()
}

/// Reduces a model answer to a single rewritten query: the first line that
/// is non-empty once a leading label and surrounding quotes are stripped.
pub fn clean_response(raw: &str) -> String {
    raw.lines()
        .map(strip_line)
        .find(|line| !line.is_empty())
        .unwrap_or_default()
}

/// One rewrite for `request`. Empty (or token-free) answers fall back to
/// the original query with `fallback` set.
pub fn rewrite(
    request: &PromptRequest,
    rewriter: &dyn Rewriter,
    method: MethodTag,
) -> Result<RewrittenQuery> {
    let completion = rewriter.complete(request)?;
    let cleaned = clean_response(&completion.text);
    let tokens = tokenize(&cleaned);
    let (text, tokens, fallback) = if tokens.is_empty() {
        (
            request.original_query.clone(),
            tokenize(&request.original_query),
            true,
        )
    } else {
        (cleaned, tokens, false)
    };
    Ok(RewrittenQuery {
        query_id: request.query_id.clone(),
        method,
        text,
        tokens,
        provenance: Provenance {
            cache_hit: completion.cache_hit,
            response_id: Some(completion.response_id),
            prompt_hash: Some(request.prompt_hash.clone()),
            fallback,
        },
    })
}
