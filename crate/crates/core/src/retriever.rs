//! BM25 sparse retrieval over an in-memory inverted index.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const INDEX_FORMAT: &str = "flare-bm25-index";
pub const INDEX_VERSION: u32 = 1;

/// Default number of passages fetched per retrieval call.
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { lowercase: true }
    }
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut terms = Vec::new();
        let mut current = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                if self.lowercase {
                    current.extend(ch.to_lowercase());
                } else {
                    current.push(ch);
                }
            } else if !current.is_empty() {
                terms.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            terms.push(current);
        }
        terms
    }
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    TokenizerConfig::default().tokenize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, strictly positive for `df <= N`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending doc id.
pub fn result_order(a: &RetrievalResult, b: &RetrievalResult) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    tokenizer: TokenizerConfig,
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
}

impl InvertedIndex {
    /// Index the title and text of every document in the corpus.
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::build_with(corpus, TokenizerConfig::default(), Bm25Params::default())
    }

    pub fn build_with(
        corpus: &Corpus,
        tokenizer: TokenizerConfig,
        params: Bm25Params,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::validation("cannot index an empty corpus"));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ordinal, doc) in corpus.documents().iter().enumerate() {
            let mut terms = tokenizer.tokenize(&doc.title);
            terms.extend(tokenizer.tokenize(&doc.text));
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
            doc_ids.push(doc.id.clone());
            doc_lengths.push(terms.len() as u32);
        }
        Ok(Self::assemble(tokenizer, params, doc_ids, doc_lengths, postings))
    }

    fn assemble(
        tokenizer: TokenizerConfig,
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;
        InvertedIndex {
            tokenizer,
            params,
            doc_ids,
            doc_lengths,
            postings,
            avgdl,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        self.tokenizer
    }

    /// Top-`k` documents by BM25 score. Documents sharing no term with the
    /// query are never returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievalResult> {
        if k == 0 {
            return Vec::new();
        }
        let Bm25Params { k1, b } = self.params;
        let n = self.num_docs();
        let mut scores = vec![0.0f64; n];
        let mut touched = Vec::new();
        for term in self.tokenizer.tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let w = idf(n, list.len());
            for p in list {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let norm = 1.0 - b + b * self.doc_lengths[d] as f64 / self.avgdl;
                if scores[d] == 0.0 {
                    touched.push(d);
                }
                scores[d] += w * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut results: Vec<RetrievalResult> = touched
            .into_iter()
            .filter(|&d| scores[d] > 0.0)
            .map(|d| RetrievalResult {
                doc_id: self.doc_ids[d].clone(),
                score: scores[d],
            })
            .collect();
        results.sort_by(result_order);
        results.truncate(k);
        results
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let file = IndexFile {
            header: IndexHeader {
                format: INDEX_FORMAT.to_string(),
                version: INDEX_VERSION,
                num_docs: self.num_docs(),
                num_terms: self.postings.len(),
                k1: self.params.k1,
                b: self.params.b,
                tokenizer: self.tokenizer,
            },
            documents: self
                .doc_ids
                .iter()
                .zip(&self.doc_lengths)
                .map(|(id, &len)| IndexedDoc {
                    id: id.clone(),
                    len,
                })
                .collect(),
            postings: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        serde_json::to_writer(out, &file).map_err(std::io::Error::other)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes)
    }

    pub fn read_from(bytes: &[u8]) -> Result<Self> {
        let file: IndexFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::format(format!("unreadable index file: {e}")))?;
        let h = &file.header;
        if h.format != INDEX_FORMAT {
            return Err(Error::format(format!("not an index file: {}", h.format)));
        }
        if h.version != INDEX_VERSION {
            return Err(Error::format(format!(
                "unsupported index version {} (expected {INDEX_VERSION})",
                h.version
            )));
        }
        let n = file.documents.len();
        if n == 0 || n != h.num_docs || file.postings.len() != h.num_terms {
            return Err(Error::format("index header does not match its contents"));
        }
        let mut postings = BTreeMap::new();
        for (term, list) in file.postings {
            let mut converted = Vec::with_capacity(list.len());
            for (doc, tf) in list {
                if doc as usize >= n || tf == 0 {
                    return Err(Error::format(format!("bad posting for term {term}")));
                }
                converted.push(Posting { doc, tf });
            }
            postings.insert(term, converted);
        }
        let (doc_ids, doc_lengths) = file.documents.into_iter().map(|d| (d.id, d.len)).unzip();
        Ok(Self::assemble(
            h.tokenizer,
            Bm25Params { k1: h.k1, b: h.b },
            doc_ids,
            doc_lengths,
            postings,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    num_docs: usize,
    num_terms: usize,
    k1: f64,
    b: f64,
    tokenizer: TokenizerConfig,
}

#[derive(Serialize, Deserialize)]
struct IndexedDoc {
    id: String,
    len: u32,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    header: IndexHeader,
    documents: Vec<IndexedDoc>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// A retrieved passage handed to the answerer.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

/// Anything that can turn a query string into ranked passages.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Vec<Passage>;
}

/// BM25 index paired with the corpus that holds passage text.
pub struct Bm25Retriever<'a> {
    index: &'a InvertedIndex,
    corpus: &'a Corpus,
}

impl<'a> Bm25Retriever<'a> {
    pub fn new(index: &'a InvertedIndex, corpus: &'a Corpus) -> Self {
        Bm25Retriever { index, corpus }
    }
}

impl Retriever for Bm25Retriever<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Vec<Passage> {
        self.index
            .search(query, k)
            .into_iter()
            .map(|r| {
                let (title, text) = self
                    .corpus
                    .get(&r.doc_id)
                    .map(|d| (d.title.clone(), d.text.clone()))
                    .unwrap_or_default();
                Passage {
                    doc_id: r.doc_id,
                    title,
                    text,
                    score: r.score,
                }
            })
            .collect()
    }
}
