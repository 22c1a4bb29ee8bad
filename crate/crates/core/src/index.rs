//! Inverted index with Okapi BM25, and propagation of word-level BM25 scores
//! onto subword positions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::text::{AnalyzedDocument, Analyzer};
use crate::trec::{sort_entries, RunEntry};

const MAGIC: &[u8; 8] = b"RGNTIDX1";

/// Default candidate depth for first-stage retrieval.
pub const DEFAULT_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    params: Bm25Params,
    /// Postings sorted by document number.
    postings: BTreeMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_numbers: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

/// Per-subword-position BM25 scores for one query-document pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRelevanceVector {
    pub scores: Vec<f64>,
}

impl InvertedIndex {
    pub fn build<I, S, T>(corpus: I, analyzer: Analyzer) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::build_with(corpus, analyzer, Bm25Params::default())
    }

    pub fn build_with<I, S, T>(corpus: I, analyzer: Analyzer, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::new();
        let mut doc_numbers = HashMap::new();
        let mut doc_lengths = Vec::new();
        for (id, text) in corpus {
            let id: String = id.into();
            let doc = doc_ids.len() as u32;
            if doc_numbers.insert(id.clone(), doc).is_some() {
                return Err(Error::DuplicateDocument(id));
            }
            doc_ids.push(id);
            let stems = analyzer.stems(text.as_ref());
            doc_lengths.push(stems.len() as u32);
            let mut tfs: BTreeMap<String, u32> = BTreeMap::new();
            for s in stems {
                *tfs.entry(s).or_default() += 1;
            }
            for (stem, tf) in tfs {
                postings.entry(stem).or_default().push(Posting { doc, tf });
            }
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            analyzer,
            params,
            postings,
            doc_ids,
            doc_numbers,
            doc_lengths,
            avg_doc_length,
        })
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_numbers.contains_key(doc_id)
    }

    pub fn doc_length(&self, doc_id: &str) -> Result<u32> {
        Ok(self.doc_lengths[self.doc_number(doc_id)? as usize])
    }

    /// `(doc_id, tf)` pairs for a stem.
    pub fn postings(&self, stem: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(stem)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn doc_frequency(&self, stem: &str) -> usize {
        self.postings.get(stem).map_or(0, Vec::len)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    fn doc_number(&self, doc_id: &str) -> Result<u32> {
        self.doc_numbers
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    /// `ln(1 + (N − df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, stem: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_frequency(stem) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score_by_number(&self, stem: &str, doc: u32) -> f64 {
        let Some(list) = self.postings.get(stem) else {
            return 0.0;
        };
        let Ok(pos) = list.binary_search_by_key(&doc, |p| p.doc) else {
            return 0.0;
        };
        let tf = list[pos].tf as f64;
        let dl = self.doc_lengths[doc as usize] as f64;
        let Bm25Params { k1, b } = self.params;
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * dl / self.avg_doc_length
        } else {
            1.0
        };
        let n = self.doc_count() as f64;
        let df = list.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 contribution of one stem to one document; 0 when absent.
    pub fn bm25_term_score(&self, stem: &str, doc_id: &str) -> Result<f64> {
        let doc = self.doc_number(doc_id)?;
        Ok(self.term_score_by_number(stem, doc))
    }

    /// Distinct non-empty query stems, sorted.
    pub fn query_stems(&self, query_text: &str) -> Vec<String> {
        let set: BTreeSet<String> = self.analyzer.stems(query_text).into_iter().collect();
        set.into_iter().collect()
    }

    /// Document-level BM25: the sum of term scores over distinct query stems,
    /// accumulated in sorted stem order.
    pub fn score(&self, query_text: &str, doc_id: &str) -> Result<f64> {
        let doc = self.doc_number(doc_id)?;
        Ok(self
            .query_stems(query_text)
            .iter()
            .fold(0.0, |acc, s| acc + self.term_score_by_number(s, doc)))
    }

    /// Top-`k` documents matching at least one query stem, by descending
    /// BM25 with ties broken by ascending doc id.
    pub fn retrieve(&self, query_text: &str, k: usize) -> Vec<RunEntry> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for stem in self.query_stems(query_text) {
            let Some(list) = self.postings.get(&stem) else {
                continue;
            };
            for p in list {
                *acc.entry(p.doc).or_insert(0.0) += self.term_score_by_number(&stem, p.doc);
            }
        }
        let mut entries: Vec<RunEntry> = acc
            .into_iter()
            .map(|(doc, score)| RunEntry::new(self.doc_ids[doc as usize].clone(), score))
            .collect();
        sort_entries(&mut entries);
        entries.truncate(k);
        entries
    }

    /// Gives every subword of a document word whose stem is a query stem that
    /// word's BM25 score; every other position is 0.
    pub fn token_relevance_vector(
        &self,
        query_text: &str,
        doc: &AnalyzedDocument,
    ) -> Result<TokenRelevanceVector> {
        let number = self.doc_number(&doc.doc_id)?;
        let stems = self.query_stems(query_text);
        let mut scores = vec![0.0; doc.max_len()];
        for (term, span) in doc.aligned_terms() {
            if term.stem.is_empty() || stems.binary_search(&term.stem).is_err() {
                continue;
            }
            let s = self.term_score_by_number(&term.stem, number);
            scores[span.start..=span.end].fill(s);
        }
        Ok(TokenRelevanceVector { scores })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(BufWriter::new(out));
        w.bytes(MAGIC)?;
        w.f64(self.params.k1)?;
        w.f64(self.params.b)?;
        let stopwords = self.analyzer.stopwords();
        w.u32(stopwords.len() as u32)?;
        for s in stopwords {
            w.str(s)?;
        }
        w.u64(self.doc_ids.len() as u64)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            w.str(id)?;
            w.u32(*len)?;
        }
        w.u64(self.postings.len() as u64)?;
        for (stem, list) in &self.postings {
            w.str(stem)?;
            w.u32(list.len() as u32)?;
            for p in list {
                w.u32(p.doc)?;
                w.u32(p.tf)?;
            }
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(BufReader::new(input));
        r.magic(MAGIC)?;
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        let n_stop = r.u32()?;
        let stopwords: Vec<String> = (0..n_stop).map(|_| r.str()).collect::<Result<_>>()?;
        let n_docs = r.u64()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        let mut doc_numbers = HashMap::with_capacity(n_docs);
        for i in 0..n_docs {
            let id = r.str()?;
            doc_lengths.push(r.u32()?);
            if doc_numbers.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Corrupt(format!("duplicate document `{id}`")));
            }
            doc_ids.push(id);
        }
        let n_terms = r.u64()?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let stem = r.str()?;
            let n = r.u32()?;
            let mut list = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let doc = r.u32()?;
                let tf = r.u32()?;
                if doc as usize >= n_docs || tf == 0 {
                    return Err(Error::Corrupt(format!("bad posting for `{stem}`")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(stem, list);
        }
        Ok(Self {
            analyzer: Analyzer::with_stopwords(stopwords),
            params,
            postings,
            avg_doc_length: mean_length(&doc_lengths),
            doc_ids,
            doc_numbers,
            doc_lengths,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
    }
}
