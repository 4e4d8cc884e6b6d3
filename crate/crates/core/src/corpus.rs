//! BEIR-format collections: `corpus.jsonl`, `queries.jsonl` and
//! `qrels/<split>.tsv`, plus the word tokenizer shared by every component.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Splits text into lowercase word tokens.
///
/// Tokens are separated by Unicode whitespace; leading and trailing
/// non-alphanumeric characters are stripped from each token and tokens left
/// empty are dropped. Internal hyphens and apostrophes survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    /// Title and body joined by a single space, the text a retriever scores.
    pub fn full_text(&self) -> String {
        match self.title.as_deref() {
            Some(title) if !title.is_empty() => {
                if self.text.is_empty() {
                    title.to_string()
                } else {
                    format!("{title} {}", self.text)
                }
            }
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Query {
            id: id.into(),
            text,
            tokens,
        }
    }
}

/// Relevance judgments: query id → doc id → grade. Missing pairs are grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(pub BTreeMap<String, HashMap<String, u32>>);

impl Qrels {
    pub fn row(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.0.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.row(query_id)
            .and_then(|row| row.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.0
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }
}

/// An immutable document collection with its tokenized texts and vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    doc_tokens: Vec<Vec<String>>,
    index: HashMap<String, usize>,
    vocabulary: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        let mut vocabulary: BTreeMap<String, usize> = BTreeMap::new();
        let mut doc_tokens = Vec::with_capacity(documents.len());
        for (pos, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "document at position {pos} has an empty id"
                )));
            }
            if index.insert(doc.id.clone(), pos).is_some() {
                return Err(Error::DuplicateDocId(doc.id.clone()));
            }
            let tokens = tokenize(&doc.full_text());
            let mut seen: Vec<&String> = tokens.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for word in seen {
                *vocabulary.entry(word.clone()).or_insert(0) += 1;
            }
            doc_tokens.push(tokens);
        }
        Ok(Corpus {
            documents,
            doc_tokens,
            index,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&pos| &self.documents[pos])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Tokens of `title + " " + text` for the document at `pos`.
    pub fn tokens_at(&self, pos: usize) -> &[String] {
        &self.doc_tokens[pos]
    }

    /// Sorted vocabulary with document frequencies.
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }
}

#[derive(Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct QueryLine {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a JSON-lines file, skipping blank lines. Line numbers are 1-based.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut documents = Vec::new();
    for (line, row) in read_jsonl::<CorpusLine>(path)? {
        if row.id.is_empty() {
            return Err(parse_error(path, line, "empty `_id`"));
        }
        let title = row.title.filter(|t| !t.is_empty());
        if row.text.is_empty() && title.is_none() {
            return Err(parse_error(
                path,
                line,
                "document has neither title nor text",
            ));
        }
        documents.push(Document {
            id: row.id,
            title,
            text: row.text,
        });
    }
    Corpus::from_documents(documents)
}

/// Loads queries; queries that tokenize to nothing are dropped with a warning.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    for (line, row) in read_jsonl::<QueryLine>(path)? {
        let query = Query::new(row.id, row.text);
        if query.tokens.is_empty() {
            log::warn!(
                "{}:{line}: dropping query `{}`: no tokens in {:?}",
                path.display(),
                query.id,
                query.text
            );
            continue;
        }
        queries.push(query);
    }
    Ok(queries)
}

/// Loads a BEIR qrels TSV (header row; query-id, corpus-id, score).
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let mut qrels = Qrels::default();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| parse_error(path, line, e.to_string()))?;
        if record.len() < 3 {
            return Err(parse_error(path, line, "expected three columns"));
        }
        let grade: i64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("non-integer score {:?}", &record[2])))?;
        let grade = u32::try_from(grade)
            .map_err(|_| parse_error(path, line, format!("score {grade} out of range")))?;
        qrels.insert(record[0].trim(), record[1].trim(), grade);
    }
    Ok(qrels)
}

/// Paths of a BEIR dataset directory.
#[derive(Debug, Clone)]
pub struct BeirLayout {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

impl BeirLayout {
    pub fn new(root: impl AsRef<Path>, split: &str) -> Self {
        let root = root.as_ref();
        BeirLayout {
            corpus: root.join("corpus.jsonl"),
            queries: root.join("queries.jsonl"),
            qrels: root.join("qrels").join(format!("{split}.tsv")),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for doc in documents {
        let line = serde_json::json!({
            "_id": doc.id,
            "title": doc.title.clone().unwrap_or_default(),
            "text": doc.text,
        });
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for q in queries {
        let line = serde_json::json!({ "_id": q.id, "text": q.text });
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    writeln!(out, "query-id\tcorpus-id\tscore").map_err(|e| Error::io(path, e))?;
    for (qid, row) in &qrels.0 {
        let mut docs: Vec<_> = row.iter().collect();
        docs.sort();
        for (did, grade) in docs {
            writeln!(out, "{qid}\t{did}\t{grade}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn tokenizes_nuggets_query() {
        assert_eq!(
            tokenize("What is actually in chicken nuggets?"),
            ["what", "is", "actually", "in", "chicken", "nuggets"]
        );
    }

    #[test]
    fn tokenize_edge_cases() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ?? !! ").is_empty());
        assert_eq!(
            tokenize("Self-driving cars, today!"),
            ["self-driving", "cars", "today"]
        );
        assert_eq!(
            tokenize("'don't'\tstop\u{3000}NOW"),
            ["don't", "stop", "now"]
        );
    }

    #[test]
    fn loads_two_document_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "corpus.jsonl",
            "{\"_id\":\"d1\",\"title\":\"Heart\",\"text\":\"diet and heart disease\"}\n\
             {\"_id\":\"d2\",\"title\":\"\",\"text\":\"a low salt diet\"}\n",
        );
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.vocabulary()["diet"], 2);
        assert_eq!(corpus.vocabulary()["heart"], 1);
        assert_eq!(
            corpus.tokens_at(0),
            ["heart", "diet", "and", "heart", "disease"]
        );
        assert_eq!(corpus.document("d2").unwrap().title, None);
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(
            dir.path(),
            "dup.jsonl",
            "{\"_id\":\"d1\",\"text\":\"a\"}\n{\"_id\":\"d1\",\"text\":\"b\"}\n",
        );
        assert!(matches!(load_corpus(&dup), Err(Error::DuplicateDocId(id)) if id == "d1"));

        let bad = write(
            dir.path(),
            "bad.jsonl",
            "{\"_id\":\"d1\",\"text\":\"a\"}\n\n{\"_id\": oops}\n",
        );
        match load_corpus(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let empty = write(
            dir.path(),
            "empty.jsonl",
            "{\"_id\":\"d1\",\"text\":\"\"}\n",
        );
        assert!(matches!(
            load_corpus(&empty),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn loads_queries_and_drops_empty_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "queries.jsonl",
            "{\"_id\":\"q1\",\"text\":\"heart disease diet\"}\n{\"_id\":\"q2\",\"text\":\"???\"}\n",
        );
        let queries = load_queries(&path).unwrap();
        assert_eq!(queries.len(), 1);
        assert_eq!(queries[0].tokens, ["heart", "disease", "diet"]);

        let bad = write(dir.path(), "bad.jsonl", "{\"_id\":\"q1\"}\n");
        assert!(matches!(
            load_queries(&bad),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn loads_qrels() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "test.tsv",
            "query-id\tcorpus-id\tscore\nq1\td1\t2\nq1\td3\t1\n",
        );
        let qrels = load_qrels(&path).unwrap();
        assert_eq!(qrels.grade("q1", "d1"), 2);
        assert_eq!(qrels.grade("q1", "d3"), 1);
        assert_eq!(qrels.grade("q1", "d2"), 0);
        assert_eq!(qrels.row("q1").unwrap().len(), 2);

        let negative = write(
            dir.path(),
            "neg.tsv",
            "query-id\tcorpus-id\tscore\nq1\td1\t-1\n",
        );
        assert!(matches!(
            load_qrels(&negative),
            Err(Error::Parse { line: 2, .. })
        ));
        let fractional = write(
            dir.path(),
            "frac.tsv",
            "query-id\tcorpus-id\tscore\nq1\td1\t0.5\n",
        );
        assert!(load_qrels(&fractional).is_err());
    }

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let docs = vec![
            Document {
                id: "a".into(),
                title: Some("T \"quoted\"".into()),
                text: "body\nwith newline".into(),
            },
            Document {
                id: "b".into(),
                title: None,
                text: "ünïcödé text".into(),
            },
        ];
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &docs).unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.documents(), &docs[..]);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "\\PC{0,60}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn document_frequencies_match_recount(
            docs in proptest::collection::vec("[a-d ,.!]{1,30}", 1..12)
        ) {
            let documents: Vec<Document> = docs
                .iter()
                .enumerate()
                .map(|(i, text)| Document { id: format!("d{i}"), title: None, text: text.clone() })
                .collect();
            let corpus = Corpus::from_documents(documents.clone()).unwrap();
            let mut recount: BTreeMap<String, usize> = BTreeMap::new();
            for doc in &documents {
                let words: std::collections::BTreeSet<String> =
                    tokenize(&doc.text).into_iter().collect();
                for w in words {
                    *recount.entry(w).or_default() += 1;
                }
            }
            prop_assert_eq!(corpus.vocabulary(), &recount);
            prop_assert!(corpus.vocabulary().values().all(|&df| df <= corpus.len()));
        }
    }
}
