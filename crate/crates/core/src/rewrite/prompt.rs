//! Rewrite prompts.
//!
//! The guided prompt hands the LLM the original query and every query token
//! with its attribution score. The plain prompt is the same text with the
//! attribution input line, the two attribution guidelines and the token
//! list removed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Query;
use crate::{Error, Result};

pub const DEFAULT_MODEL: &str = "mistralai/Mistral-7B-Instruct-v0.3";
pub const DEFAULT_MAX_TOKENS: u32 = 120;

const INTRO: &str = "You are given:\n1) An original user query.\n";
const ATTRIBUTION_INPUT: &str = "2) A list of query tokens with their attribution scores, where higher scores indicate a stronger positive contribution to retrieval effectiveness, and lower or negative scores indicate weak or misleading contributions.\n";
const TASK: &str = "\nYour task is to rewrite the query to improve retrieval effectiveness.\n\nGuidelines:\n- Preserve the original user intent.\n- Do not remove important concepts.\n";
const ATTRIBUTION_GUIDELINES: &str = "- Tokens with high attribution scores should be preserved or emphasized.\n- Tokens with low or negative attribution scores may be clarified, specified, or disambiguated.\n";
const CLOSING_GUIDELINES: &str = "- Avoid adding new concepts that are not implied by the original query.\n- Produce a single rewritten query, concise and well-formed.\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Guided,
    Plain,
}

/// Decoding settings sent with every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub query_id: String,
    pub original_query: String,
    pub kind: PromptKind,
    /// The single user message.
    pub text: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Hex SHA-256 of `text`.
    pub prompt_hash: String,
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl PromptRequest {
    fn new(query: &Query, kind: PromptKind, text: String, settings: &PromptSettings) -> Self {
        PromptRequest {
            query_id: query.id.clone(),
            original_query: query.text.clone(),
            kind,
            prompt_hash: sha256_hex(&text),
            text,
            model: settings.model.clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        }
    }
}

/// `token (0.123), token (0.456), …` in query order.
pub fn format_attributions(tokens: &[String], scores: &[f64]) -> String {
    tokens
        .iter()
        .zip(scores)
        .map(|(t, s)| format!("{t} ({s:.3})"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_guided(original_query: &str, tokens: &[String], scores: &[f64]) -> String {
    format!(
        "{INTRO}{ATTRIBUTION_INPUT}{TASK}{ATTRIBUTION_GUIDELINES}{CLOSING_GUIDELINES}Original query: \"{original_query}\"\nToken attributions: \"{}\" ",
        format_attributions(tokens, scores)
    )
}

pub fn render_plain(original_query: &str) -> String {
    format!("{INTRO}{TASK}{CLOSING_GUIDELINES}Original query: \"{original_query}\"")
}

pub fn build_guided_prompt(
    query: &Query,
    scores: &[f64],
    settings: &PromptSettings,
) -> Result<PromptRequest> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "guided prompt needs attribution scores".into(),
        ));
    }
    if scores.len() != query.tokens.len() {
        return Err(Error::LengthMismatch {
            expected: query.tokens.len(),
            got: scores.len(),
        });
    }
    let text = render_guided(&query.text, &query.tokens, scores);
    Ok(PromptRequest::new(
        query,
        PromptKind::Guided,
        text,
        settings,
    ))
}

pub fn build_plain_prompt(query: &Query, settings: &PromptSettings) -> PromptRequest {
    PromptRequest::new(
        query,
        PromptKind::Plain,
        render_plain(&query.text),
        settings,
    )
}

/// The original query quoted in a rendered prompt.
pub fn extract_original_query(prompt: &str) -> Option<&str> {
    prompt.lines().find_map(|line| {
        let rest = line.strip_prefix("Original query: \"")?;
        let end = rest.rfind('"')?;
        Some(&rest[..end])
    })
}
