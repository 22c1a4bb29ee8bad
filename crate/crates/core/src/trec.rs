//! TREC run and qrels files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

impl RunEntry {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Per-query ranked lists. Rank is list position + 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    pub tag: String,
    pub queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RankedRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn get(&self, query_id: &str) -> &[RunEntry] {
        self.queries.get(query_id).map_or(&[], Vec::as_slice)
    }

    /// Inserts a list after sorting it by descending score, ties by ascending
    /// doc id.
    pub fn insert_sorted(&mut self, query_id: impl Into<String>, mut entries: Vec<RunEntry>) {
        sort_entries(&mut entries);
        self.queries.insert(query_id.into(), entries);
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (qid, entries) in &self.queries {
            for (i, e) in entries.iter().enumerate() {
                // Fixed precision keeps run files byte-stable across platforms.
                writeln!(out, "{qid} Q0 {} {} {:.9} {}", e.doc_id, i + 1, e.score, self.tag)
                    .expect("writing to a String");
            }
        }
        out
    }

    pub fn write_trec(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_trec_string())?;
        Ok(())
    }

    /// Parses a run file; entries are ordered by the rank column.
    pub fn parse_trec(text: &str, path: &Path) -> Result<Self> {
        let mut ranked: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        let mut tag = String::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            if fields.len() != 6 {
                return Err(bad("expected `qid Q0 docid rank score tag`"));
            }
            let rank: usize = fields[3].parse().map_err(|_| bad("rank is not an integer"))?;
            let score: f64 = fields[4].parse().map_err(|_| bad("score is not a number"))?;
            tag = fields[5].to_string();
            ranked
                .entry(fields[0].to_string())
                .or_default()
                .push((rank, RunEntry::new(fields[2], score)));
        }
        let queries = ranked
            .into_iter()
            .map(|(q, mut v)| {
                v.sort_by_key(|(r, _)| *r);
                (q, v.into_iter().map(|(_, e)| e).collect())
            })
            .collect();
        Ok(Self { tag, queries })
    }

    pub fn read_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_trec(&std::fs::read_to_string(path)?, path)
    }
}

pub(crate) fn sort_entries(entries: &mut [RunEntry]) {
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Documents judged with grade ≥ 1.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        self.judgments
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g >= 1)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn num_relevant(&self, query_id: &str) -> usize {
        self.relevant(query_id).len()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut qrels = Self::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            if fields.len() != 4 {
                return Err(bad("expected `qid 0 docid grade`".into()));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| bad(format!("grade `{}` is not an integer", fields[3])))?;
            if grade < 0 {
                // Negative grades (e.g. -1 for unjudgeable) count as non-relevant.
                qrels.insert(fields[0], fields[2], 0);
            } else {
                qrels.insert(fields[0], fields[2], grade as u32);
            }
        }
        Ok(qrels)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}").expect("writing to a String");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_round_trips_through_trec_text() {
        let mut run = RankedRun::new("bm25");
        run.insert_sorted("q1", vec![RunEntry::new("b", 1.0), RunEntry::new("a", 2.5)]);
        let text = run.to_trec_string();
        assert_eq!(
            text,
            "q1 Q0 a 1 2.500000000 bm25\nq1 Q0 b 2 1.000000000 bm25\n"
        );
        let back = RankedRun::parse_trec(&text, Path::new("run")).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let mut run = RankedRun::new("t");
        run.insert_sorted("q", vec![RunEntry::new("z", 1.0), RunEntry::new("a", 1.0)]);
        assert_eq!(run.get("q")[0].doc_id, "a");
    }

    #[test]
    fn qrels_parse_and_errors() {
        let q = Qrels::parse("q1 0 d1 2\nq1 0 d2 0\n\nq2 0 d3 1\n", Path::new("qrels")).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(q.relevant("q1"), vec!["d1"]);
        assert_eq!(q.num_relevant("q2"), 1);
        let err = Qrels::parse("q1 0 d1\n", Path::new("qrels")).unwrap_err();
        assert!(err.to_string().contains(":1:"));
    }
}
