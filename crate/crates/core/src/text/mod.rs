//! IR-style text analysis and WordPiece-style subword tokenization.
//!
//! Words are runs of alphanumeric characters; every other non-whitespace
//! character is a word of its own. Each word keeps its surface form (which the
//! subword tokenizer sees) and its analyzed stem (which the lexical index sees),
//! so term-level scores can be carried over to subword positions.

pub mod porter;
mod subword;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use subword::{tokenize_subwords, AlignmentTuple, AnalyzedDocument, Vocab, CONTINUATION};

use crate::error::Result;

const ENGLISH_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerTerm {
    pub surface: String,
    /// Empty when the word is a stopword or punctuation.
    pub stem: String,
    pub word_index: usize,
}

/// Lowercasing, stopword removal and Porter stemming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analyzer {
    stopwords: HashSet<String>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::english()
    }
}

impl Analyzer {
    /// The 33-word English default stopword list.
    pub fn english() -> Self {
        Self::with_stopwords(parse_word_list(ENGLISH_STOPWORDS))
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            stopwords: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    pub fn from_stopword_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_stopwords(parse_word_list(&text)))
    }

    /// Stopwords in sorted order.
    pub fn stopwords(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.stopwords.iter().map(String::as_str).collect();
        words.sort_unstable();
        words
    }

    pub fn analyze(&self, text: &str) -> Vec<AnalyzerTerm> {
        split_words(text)
            .into_iter()
            .enumerate()
            .map(|(word_index, surface)| {
                let stem = self.stem_word(surface);
                AnalyzerTerm {
                    surface: surface.to_string(),
                    stem,
                    word_index,
                }
            })
            .collect()
    }

    /// Non-empty stems of `text`, in order, with repetitions.
    pub fn stems(&self, text: &str) -> Vec<String> {
        self.analyze(text)
            .into_iter()
            .filter(|t| !t.stem.is_empty())
            .map(|t| t.stem)
            .collect()
    }

    fn stem_word(&self, surface: &str) -> String {
        if !surface.chars().any(char::is_alphanumeric) {
            return String::new();
        }
        let lower = surface.to_lowercase();
        if self.stopwords.contains(&lower) {
            return String::new();
        }
        porter::stem(&lower)
    }
}

/// Analyzes `text` with an explicit stopword set.
pub fn analyze(text: &str, stopwords: &HashSet<String>) -> Vec<AnalyzerTerm> {
    Analyzer {
        stopwords: stopwords.iter().map(|w| w.to_lowercase()).collect(),
    }
    .analyze(text)
}

fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits on whitespace; alphanumeric runs form words and each remaining
/// character stands alone.
fn split_words(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            words.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            words.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        words.push(&text[s..]);
    }
    words
}
