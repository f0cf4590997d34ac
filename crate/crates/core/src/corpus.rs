//! Document corpus and QA dataset storage.
//!
//! Both are ingested from JSONL (one object per line). Ingestion is strict:
//! the first bad record aborts the load with an error naming the line. After
//! ingestion the stores are immutable and can be shared freely across threads.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Whether a question comes from a single-hop or a multi-hop dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    SingleHop,
    MultiHop,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::SingleHop => "single_hop",
            Origin::MultiHop => "multi_hop",
        }
    }

    /// Origin implied by a well-known dataset tag, if the tag is recognised.
    pub fn for_dataset(tag: &str) -> Option<Origin> {
        match tag.to_ascii_lowercase().as_str() {
            "squad" | "nq" | "natural_questions" | "trivia" | "triviaqa" | "trivia_qa" => {
                Some(Origin::SingleHop)
            }
            "hotpotqa" | "hotpot_qa" | "2wikimultihopqa" | "2wikimqa" | "musique" => {
                Some(Origin::MultiHop)
            }
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "single_hop" => Ok(Origin::SingleHop),
            "multi_hop" => Ok(Origin::MultiHop),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub origin: Origin,
    pub dataset: String,
}

/// Wire form of a QA line. Key order here is the normalized export order.
#[derive(Serialize, Deserialize)]
struct QaRecord {
    id: String,
    question: String,
    answers: Vec<String>,
    origin: String,
    dataset: String,
}

impl QaRecord {
    fn into_example(self) -> Result<QaExample> {
        if self.id.is_empty() {
            return Err(Error::validation("empty id"));
        }
        if self.answers.is_empty() {
            return Err(Error::validation(format!("{}: empty answers", self.id)));
        }
        if self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::validation(format!("{}: blank gold answer", self.id)));
        }
        let origin: Origin = self
            .origin
            .parse()
            .map_err(|_| Error::validation(format!("{}: unknown origin", self.id)))?;
        if let Some(expected) = Origin::for_dataset(&self.dataset) {
            if expected != origin {
                return Err(Error::validation(format!(
                    "{}: origin {} inconsistent with dataset {}",
                    self.id, origin, self.dataset
                )));
            }
        }
        Ok(QaExample {
            id: self.id,
            question: self.question,
            gold_answers: self.answers,
            origin,
            dataset: self.dataset,
        })
    }

    fn from_example(ex: &QaExample) -> Self {
        QaRecord {
            id: ex.id.clone(),
            question: ex.question.clone(),
            answers: ex.gold_answers.clone(),
            origin: ex.origin.as_str().to_string(),
            dataset: ex.dataset.clone(),
        }
    }
}

/// Iterate the non-blank lines of a JSONL stream with 1-based line numbers.
pub(crate) fn jsonl_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_line<T: serde::de::DeserializeOwned>(line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line)
        .map_err(|e| Error::validation(format!("line {line_no}: malformed record: {e}")))
}

/// An ingested corpus. Documents keep their file order; that order is the
/// document ordinal used by the index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: Document, line_no: usize) -> Result<()> {
        if doc.id.is_empty() {
            return Err(Error::validation(format!("line {line_no}: empty id")));
        }
        if doc.text.is_empty() {
            return Err(Error::validation(format!(
                "line {line_no}: empty text for {}",
                doc.id
            )));
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(Error::validation(format!(
                "duplicate id {} at line {line_no}",
                doc.id
            )));
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (line_no, line) in jsonl_lines(reader) {
            let line = line.map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
            let doc: Document = parse_line(line_no, &line)?;
            corpus.push(doc, line_no)?;
        }
        Ok(corpus)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn by_ordinal(&self, ordinal: usize) -> Option<&Document> {
        self.docs.get(ordinal)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }
}

/// Load a corpus JSONL file (`{"id","title","text"}` per line).
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    Corpus::read_jsonl(open(path)?)
}

#[derive(Debug, Clone, Default)]
pub struct QaSet {
    examples: Vec<QaExample>,
    by_id: HashMap<String, usize>,
}

impl QaSet {
    pub fn from_examples(examples: Vec<QaExample>) -> Result<Self> {
        let mut set = QaSet::default();
        for (i, ex) in examples.into_iter().enumerate() {
            set.push(ex, i + 1)?;
        }
        Ok(set)
    }

    fn push(&mut self, ex: QaExample, line_no: usize) -> Result<()> {
        if self.by_id.contains_key(&ex.id) {
            return Err(Error::validation(format!(
                "duplicate id {} at line {line_no}",
                ex.id
            )));
        }
        self.by_id.insert(ex.id.clone(), self.examples.len());
        self.examples.push(ex);
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = QaSet::default();
        for (line_no, line) in jsonl_lines(reader) {
            let line = line.map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
            let record: QaRecord = parse_line(line_no, &line)?;
            set.push(record.into_example()?, line_no)?;
        }
        Ok(set)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, &QaRecord::from_example(ex))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaExample> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn examples(&self) -> &[QaExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QaExample> {
        self.examples.iter()
    }
}

/// Load a QA JSONL file (`{"id","question","answers","origin","dataset"}` per line).
pub fn ingest_qa(path: impl AsRef<Path>) -> Result<QaSet> {
    let path = path.as_ref();
    QaSet::read_jsonl(open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(s: &str) -> Result<Corpus> {
        Corpus::read_jsonl(s.as_bytes())
    }

    #[test]
    fn three_line_corpus() {
        let src = r#"{"id":"d1","title":"A","text":"alpha"}
{"id":"d2","title":"B","text":"beta"}
{"id":"d3","title":"C","text":"gamma"}
"#;
        assert_eq!(corpus_from(src).unwrap().len(), 3);
    }

    #[test]
    fn empty_corpus() {
        assert_eq!(corpus_from("").unwrap().len(), 0);
    }

    #[test]
    fn duplicate_id_names_line() {
        let src = r#"{"id":"d1","title":"","text":"a"}
{"id":"d2","title":"","text":"b"}
{"id":"d3","title":"","text":"c"}
{"id":"d1","title":"","text":"d"}"#;
        let err = corpus_from(src).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id d1 at line 4");
    }

    #[test]
    fn malformed_line_names_line() {
        let src = "{\"id\":\"d1\",\"title\":\"\",\"text\":\"a\"}\n{not json}\n";
        let err = corpus_from(src).unwrap_err().to_string();
        assert!(err.starts_with("line 2:"), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let src = r#"{"id":"d1","title":"t","text":""}"#;
        assert!(corpus_from(src).is_err());
    }

    #[test]
    fn qa_single_line() {
        let src = r#"{"id":"q1","question":"who wrote Hamlet","answers":["Shakespeare"],"origin":"single_hop","dataset":"trivia"}"#;
        let set = QaSet::read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.get("q1").unwrap().origin, Origin::SingleHop);
    }

    #[test]
    fn qa_empty_answers() {
        let src = r#"{"id":"q1","question":"x","answers":[],"origin":"single_hop","dataset":"trivia"}"#;
        let err = QaSet::read_jsonl(src.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "q1: empty answers");
    }

    #[test]
    fn qa_unknown_origin() {
        let src = r#"{"id":"q1","question":"x","answers":["a"],"origin":"two_hop","dataset":"trivia"}"#;
        let err = QaSet::read_jsonl(src.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "q1: unknown origin");
    }

    #[test]
    fn qa_origin_must_match_known_dataset() {
        let src = r#"{"id":"q1","question":"x","answers":["a"],"origin":"multi_hop","dataset":"squad"}"#;
        assert!(QaSet::read_jsonl(src.as_bytes()).is_err());
        let src = r#"{"id":"q1","question":"x","answers":["a"],"origin":"multi_hop","dataset":"custom"}"#;
        assert!(QaSet::read_jsonl(src.as_bytes()).is_ok());
    }

    #[test]
    fn lookup_unknown_is_none() {
        let c = corpus_from(r#"{"id":"d1","title":"","text":"a"}"#).unwrap();
        assert!(c.get("d1").is_some());
        assert!(c.get("nope").is_none());
    }

    fn doc_strategy() -> impl Strategy<Value = Vec<Document>> {
        proptest::collection::btree_map("[a-z0-9]{1,6}", ("\\PC{0,12}", "\\PC{1,40}"), 0..12)
            .prop_map(|m| {
                m.into_iter()
                    .map(|(id, (title, text))| Document { id, title, text })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn corpus_export_roundtrip(docs in doc_strategy()) {
            let corpus = Corpus::from_documents(docs.clone()).unwrap();
            let mut first = Vec::new();
            corpus.write_jsonl(&mut first).unwrap();
            let reread = Corpus::read_jsonl(first.as_slice()).unwrap();
            let mut second = Vec::new();
            reread.write_jsonl(&mut second).unwrap();
            prop_assert_eq!(&first, &second);
            for d in &docs {
                prop_assert_eq!(reread.get(&d.id), Some(d));
            }
        }
    }
}
