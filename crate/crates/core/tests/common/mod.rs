//! Shared fixtures: a synthetic ambiguous-query corpus, an independent
//! metric evaluator and an oracle rewriter.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use qrewrite_core::corpus::{
    write_corpus, write_qrels, write_queries, Corpus, Document, Qrels, Query,
};
use qrewrite_core::rewrite::{Completion, PromptKind, PromptRequest, Rewriter};
use qrewrite_core::Result;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEADS: usize = 25;
pub const DOCS_PER_SENSE: usize = 10;
const SENSE_WORDS: usize = 5;
const CUE_POOL: usize = 8;
const FILLER: usize = 400;

/// 25 ambiguous head words, two senses each, ten documents per sense.
///
/// Every query is `head cue`. Its cue appears in 60% of the target sense's
/// documents and 30% of the other sense's, so it only weakly separates
/// them. Sense words never appear outside their sense.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    /// Query id → words that name its sense.
    pub sense_words: HashMap<String, Vec<String>>,
}

fn head(i: usize) -> String {
    format!("amb{i:02}")
}

fn sense_word(i: usize, s: usize, j: usize) -> String {
    format!("sense{i:02}{}{j}", ['a', 'b'][s])
}

fn cue(i: usize, s: usize) -> String {
    format!("cue{i:02}{}", ['a', 'b'][s])
}

pub fn synthetic(seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler: Vec<String> = (0..FILLER).map(|n| format!("w{n:03}")).collect();
    let generic: Vec<String> = (0..CUE_POOL).map(|n| format!("topic{n}")).collect();
    let mut documents = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Qrels::default();
    let mut sense_words = HashMap::new();
    for i in 0..HEADS {
        for s in 0..2 {
            let qid = format!("q{i:02}{}", ['a', 'b'][s]);
            queries.push(Query::new(&qid, format!("{} {}", head(i), cue(i, s))));
            sense_words.insert(qid.clone(), (0..2).map(|j| sense_word(i, s, j)).collect());
            for n in 0..DOCS_PER_SENSE {
                let id = format!("d{i:02}{}{n}", ['a', 'b'][s]);
                let mut words = vec![head(i)];
                if rng.random_bool(0.5) {
                    words.push(head(i));
                }
                for j in 0..SENSE_WORDS {
                    if rng.random_bool(0.6) {
                        words.push(sense_word(i, s, j));
                    }
                }
                if rng.random_bool(0.6) {
                    words.push(cue(i, s));
                }
                if rng.random_bool(0.3) {
                    words.push(cue(i, 1 - s));
                }
                if rng.random_bool(0.3) {
                    words.push(generic.choose(&mut rng).unwrap().clone());
                }
                for _ in 0..12 {
                    words.push(filler.choose(&mut rng).unwrap().clone());
                }
                // shuffle so position carries no signal
                for k in (1..words.len()).rev() {
                    let m = rng.random_range(0..=k);
                    words.swap(k, m);
                }
                qrels.insert(&qid, &id, 1);
                documents.push(Document {
                    id,
                    title: None,
                    text: words.join(" "),
                });
            }
        }
    }
    Synthetic {
        documents,
        queries,
        qrels,
        sense_words,
    }
}

impl Synthetic {
    pub fn corpus(&self) -> Corpus {
        Corpus::from_documents(self.documents.clone()).unwrap()
    }

    /// Writes a BEIR-style dataset directory.
    pub fn write(&self, root: &Path) {
        write_corpus(root.join("corpus.jsonl"), &self.documents).unwrap();
        write_queries(root.join("queries.jsonl"), &self.queries).unwrap();
        write_qrels(root.join("qrels").join("test.tsv"), &self.qrels).unwrap();
    }

    pub fn query(&self, id: &str) -> &Query {
        self.queries.iter().find(|q| q.id == id).unwrap()
    }
}

/// Reads `token (score)` pairs back out of a guided prompt.
pub fn prompt_attributions(prompt: &str) -> Vec<(String, f64)> {
    let line = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Token attributions: \""))
        .unwrap_or_default();
    let line = line.trim_end().trim_end_matches('"');
    line.split(", ")
        .filter_map(|pair| {
            let (token, rest) = pair.rsplit_once(" (")?;
            let score = rest.trim_end_matches(')').parse().ok()?;
            Some((token.to_string(), score))
        })
        .collect()
}

/// Clarifies the lowest-attribution token of a guided prompt with the
/// query's sense words. Plain prompts are echoed unchanged.
#[derive(Debug, Clone)]
pub struct OracleRewriter {
    /// Original query text → sense words.
    pub senses: HashMap<String, Vec<String>>,
}

impl OracleRewriter {
    pub fn new(data: &Synthetic) -> Self {
        let senses = data
            .queries
            .iter()
            .map(|q| (q.text.clone(), data.sense_words[&q.id].clone()))
            .collect();
        OracleRewriter { senses }
    }
}

impl Rewriter for OracleRewriter {
    fn complete(&self, request: &PromptRequest) -> Result<Completion> {
        let text = match request.kind {
            PromptKind::Plain => request.original_query.clone(),
            PromptKind::Guided => {
                let pairs = prompt_attributions(&request.text);
                let weakest = pairs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map_or(0, |(i, _)| i);
                let clarifiers = self
                    .senses
                    .get(&request.original_query)
                    .cloned()
                    .unwrap_or_default();
                let mut words = Vec::new();
                for (i, (token, _)) in pairs.iter().enumerate() {
                    words.push(token.clone());
                    if i == weakest {
                        words.extend(clarifiers.iter().cloned());
                    }
                }
                words.join(" ")
            }
        };
        Ok(Completion {
            text,
            response_id: format!("oracle:{}", request.query_id),
            cache_hit: false,
        })
    }
}

/// Plain-formula metrics, written independently of the library.
pub mod oracle {
    use std::collections::HashMap;

    fn log2(x: f64) -> f64 {
        x.ln() / std::f64::consts::LN_2
    }

    pub fn precision(ranking: &[String], qrels: &HashMap<String, u32>, k: usize) -> f64 {
        let mut hits = 0.0;
        for i in 0..k {
            if let Some(doc) = ranking.get(i) {
                if qrels.get(doc).copied().unwrap_or(0) > 0 {
                    hits += 1.0;
                }
            }
        }
        hits / k as f64
    }

    pub fn ndcg(ranking: &[String], qrels: &HashMap<String, u32>, k: usize) -> f64 {
        let mut dcg = 0.0;
        for (i, doc) in ranking.iter().take(k).enumerate() {
            let gain = qrels.get(doc).copied().unwrap_or(0) as f64;
            dcg += gain / log2(i as f64 + 2.0);
        }
        let mut grades: Vec<u32> = qrels.values().copied().filter(|&g| g > 0).collect();
        grades.sort();
        grades.reverse();
        let mut ideal = 0.0;
        for (i, grade) in grades.iter().take(k).enumerate() {
            ideal += *grade as f64 / log2(i as f64 + 2.0);
        }
        if ideal == 0.0 {
            0.0
        } else {
            dcg / ideal
        }
    }

    pub fn average_precision(ranking: &[String], qrels: &HashMap<String, u32>, k: usize) -> f64 {
        let relevant = |d: &String| qrels.get(d).copied().unwrap_or(0) > 0;
        let total = qrels.values().filter(|&&g| g > 0).count();
        if total == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for r in 1..=k.min(ranking.len()) {
            if relevant(&ranking[r - 1]) {
                let above = ranking[..r].iter().filter(|d| relevant(d)).count();
                sum += above as f64 / r as f64;
            }
        }
        sum / total as f64
    }
}
