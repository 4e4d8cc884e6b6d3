//! Client side of the transformer-retriever bridge.
//!
//! The bridge is a separate process hosting a real neural retriever. The
//! engine talks to it with newline-delimited JSON, one request in flight at
//! a time, over the child's stdio or a TCP socket.
//!
//! ```text
//! → {"v":1,"id":7,"op":"search","payload":{"query":"…","k":100}}
//! ← {"v":1,"id":7,"ok":true,"payload":{"hits":[{"doc_id":"d1","score":3.2}, …]}}
//! → {"v":1,"id":8,"op":"attribute","payload":{"query":"…","doc_ids":["d1"],"steps":64}}
//! ← {"v":1,"id":8,"ok":true,"payload":{"tokens":["…"],"attributions":[
//!      {"doc_id":"d1","scores":[…],"residual":1e-6,
//!       "subwords":[{"token":"nug","word":0,"score":0.4}, …]}]}}
//! ← {"v":1,"id":9,"ok":false,"error":"unknown op `foo`"}
//! ```
//!
//! Attribution token lists must equal the engine's own tokenization of the
//! query. When a response carries `subwords`, their scores must sum to the
//! word scores exactly.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attribution::AttributionVector;
use crate::corpus::{tokenize, Query};
use crate::retriever::{RankedList, Retriever};
use crate::{Error, Result};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub v: u32,
    pub id: u64,
    pub op: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub v: Option<u32>,
    pub id: u64,
    pub ok: bool,
    #[serde(default)]
    pub payload: Option<Value>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeInfo {
    pub model: String,
    pub docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwordScore {
    pub token: String,
    /// Index of the word this subword belongs to.
    pub word: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeAttribution {
    pub doc_id: String,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub residual: Option<f64>,
    #[serde(default)]
    pub subwords: Option<Vec<SubwordScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AttributePayload {
    tokens: Vec<String>,
    attributions: Vec<BridgeAttribution>,
}

/// Sums subword scores into their words, in subword order.
pub fn merge_subwords(subwords: &[SubwordScore], words: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; words];
    for sw in subwords {
        let slot = out.get_mut(sw.word).ok_or_else(|| {
            Error::Bridge(format!(
                "subword `{}` maps to word {} of {words}",
                sw.token, sw.word
            ))
        })?;
        *slot += sw.score;
    }
    Ok(out)
}

/// Checks a bridge attribution against the query's engine-side tokens.
pub fn validate_attribution(tokens: &[String], attribution: &BridgeAttribution) -> Result<()> {
    if attribution.scores.len() != tokens.len() {
        return Err(Error::Bridge(format!(
            "attribution for `{}` has {} scores for {} tokens",
            attribution.doc_id,
            attribution.scores.len(),
            tokens.len()
        )));
    }
    if let Some(subwords) = &attribution.subwords {
        let merged = merge_subwords(subwords, tokens.len())?;
        if merged != attribution.scores {
            return Err(Error::Bridge(format!(
                "subword scores for `{}` do not sum to the word scores",
                attribution.doc_id
            )));
        }
    }
    Ok(())
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

pub struct BridgeClient {
    channel: Mutex<Channel>,
    next_id: AtomicU64,
    child: Option<Child>,
    info: BridgeInfo,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("info", &self.info)
            .finish()
    }
}

impl BridgeClient {
    /// Wraps an already connected stream pair and performs the `info` handshake.
    pub fn from_streams(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        let mut client = BridgeClient {
            channel: Mutex::new(Channel { reader, writer }),
            next_id: AtomicU64::new(1),
            child: None,
            info: BridgeInfo {
                model: String::new(),
                docs: 0,
            },
        };
        let info = client.call("info", json!({}))?;
        client.info = serde_json::from_value(info)
            .map_err(|e| Error::Bridge(format!("bad info payload: {e}")))?;
        Ok(client)
    }

    /// Spawns `command` (whitespace separated program and arguments) and
    /// talks to it over stdin/stdout.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::from_streams(Box::new(BufReader::new(stdout)), Box::new(stdin)) {
            Ok(mut client) => {
                client.child = Some(child);
                Ok(client)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io(addr, e))?;
        let reader = stream.try_clone().map_err(|e| Error::io(addr, e))?;
        Self::from_streams(Box::new(BufReader::new(reader)), Box::new(stream))
    }

    pub fn info(&self) -> &BridgeInfo {
        &self.info
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, op: &str, payload: Value) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let request = WireRequest {
            v: WIRE_VERSION,
            id,
            op: op.to_string(),
            payload,
        };
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        let mut channel = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        let io = |e: std::io::Error| Error::Bridge(format!("{op}: {e}"));
        channel.writer.write_all(line.as_bytes()).map_err(io)?;
        channel.writer.flush().map_err(io)?;
        let mut reply = String::new();
        if channel.reader.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::Bridge(format!("{op}: bridge closed the connection")));
        }
        drop(channel);
        let response: WireResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Bridge(format!("{op}: malformed response: {e}")))?;
        if response.id != id {
            return Err(Error::Bridge(format!(
                "{op}: response id {} does not echo request id {id}",
                response.id
            )));
        }
        if let Some(v) = response.v.filter(|&v| v != WIRE_VERSION) {
            return Err(Error::Bridge(format!("{op}: unsupported wire version {v}")));
        }
        if !response.ok {
            return Err(Error::Bridge(format!(
                "{op}: {}",
                response.error.unwrap_or_else(|| "unspecified error".into())
            )));
        }
        Ok(response.payload.unwrap_or(Value::Null))
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Retriever for BridgeClient {
    fn describe(&self) -> String {
        format!("bridge({}, {} docs)", self.info.model, self.info.docs)
    }

    fn search(&self, query: &Query, k: usize) -> Result<RankedList> {
        crate::retriever::check_k(k)?;
        #[derive(Deserialize)]
        struct Hits {
            hits: Vec<Hit>,
        }
        let payload = self.call("search", json!({ "query": query.text, "k": k }))?;
        let hits: Hits = serde_json::from_value(payload)
            .map_err(|e| Error::Bridge(format!("bad search payload: {e}")))?;
        let scored = hits.hits.into_iter().map(|h| (h.doc_id, h.score)).collect();
        Ok(RankedList::from_scores(query.id.clone(), scored, k))
    }

    fn attribute(
        &self,
        query: &Query,
        doc_ids: &[String],
        steps: usize,
    ) -> Result<Vec<AttributionVector>> {
        let payload = self.call(
            "attribute",
            json!({ "query": query.text, "doc_ids": doc_ids, "steps": steps }),
        )?;
        let payload: AttributePayload = serde_json::from_value(payload)
            .map_err(|e| Error::Bridge(format!("bad attribute payload: {e}")))?;
        let expected = tokenize(&query.text);
        if payload.tokens != expected {
            return Err(Error::Bridge(format!(
                "bridge tokens {:?} differ from engine tokens {expected:?}",
                payload.tokens
            )));
        }
        if payload.attributions.len() != doc_ids.len() {
            return Err(Error::Bridge(format!(
                "asked for {} attributions, got {}",
                doc_ids.len(),
                payload.attributions.len()
            )));
        }
        payload
            .attributions
            .into_iter()
            .zip(doc_ids)
            .map(|(a, doc)| {
                if &a.doc_id != doc {
                    return Err(Error::Bridge(format!(
                        "attribution for `{}` where `{doc}` was requested",
                        a.doc_id
                    )));
                }
                validate_attribution(&payload.tokens, &a)?;
                Ok(AttributionVector {
                    doc_id: a.doc_id,
                    values: a.scores,
                    steps,
                    baseline: "zero".into(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sw(token: &str, word: usize, score: f64) -> SubwordScore {
        SubwordScore {
            token: token.into(),
            word,
            score,
        }
    }

    #[test]
    fn merges_subwords_into_words() {
        let merged = merge_subwords(&[sw("nug", 0, 0.4), sw("##gets", 0, 0.248)], 1).unwrap();
        assert_eq!(merged, [0.4 + 0.248]);
        assert!((merged[0] - 0.648).abs() < 1e-12);
        assert_eq!(
            merge_subwords(&[sw("chicken", 0, 0.217)], 1).unwrap(),
            [0.217]
        );
        assert_eq!(
            merge_subwords(&[sw("a", 0, 0.0), sw("b", 1, 0.0)], 2).unwrap(),
            [0.0, 0.0]
        );
        assert!(merge_subwords(&[sw("x", 3, 1.0)], 2).is_err());
    }

    #[test]
    fn validation_checks_lengths_and_conservation() {
        let tokens = vec!["chicken".to_string(), "nuggets".to_string()];
        let good = BridgeAttribution {
            doc_id: "d".into(),
            scores: vec![0.217, 0.4 + 0.248],
            residual: Some(0.0),
            subwords: Some(vec![
                sw("chicken", 0, 0.217),
                sw("nug", 1, 0.4),
                sw("##gets", 1, 0.248),
            ]),
        };
        validate_attribution(&tokens, &good).unwrap();
        let mut bad = good.clone();
        bad.scores[1] = 0.649;
        assert!(validate_attribution(&tokens, &bad).is_err());
        let mut short = good;
        short.scores.pop();
        short.subwords = None;
        assert!(validate_attribution(&tokens, &short).is_err());
    }
}
