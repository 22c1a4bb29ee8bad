use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyzerTerm;
use crate::error::{Error, Result};

/// Marker prefix for word-internal subword pieces.
pub const CONTINUATION: &str = "##";

const PAD: &str = "[PAD]";
const UNK: &str = "[UNK]";
const CLS: &str = "[CLS]";
const SEP: &str = "[SEP]";

/// Words longer than this many characters are emitted as a single unknown token.
const MAX_WORD_CHARS: usize = 100;

/// `(w_i, s_i, e_i)`: word index and inclusive subword span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentTuple {
    pub word_index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzedDocument {
    pub doc_id: String,
    /// Exactly `max_len` ids: `[CLS]`, word pieces, `[SEP]`, then padding.
    pub subwords: Vec<u32>,
    pub alignments: Vec<AlignmentTuple>,
    pub terms: Vec<AnalyzerTerm>,
    /// Non-padding positions, counting `[CLS]` and `[SEP]`.
    pub length: usize,
}

impl AnalyzedDocument {
    pub fn max_len(&self) -> usize {
        self.subwords.len()
    }

    /// `true` at non-padding positions.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.max_len()).map(|i| i < self.length).collect()
    }

    /// Terms whose subwords survived truncation, paired with their spans.
    pub fn aligned_terms(&self) -> impl Iterator<Item = (&AnalyzerTerm, &AlignmentTuple)> {
        self.alignments
            .iter()
            .map(move |a| (&self.terms[a.word_index], a))
    }
}

/// Subword vocabulary; the line number of a token in the vocabulary file is
/// its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    lowercase: bool,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ids.entry(t.clone()).or_insert(i as u32);
        }
        let special = |name: &str| {
            ids.get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks the {name} token")))
        };
        Ok(Self {
            pad: special(PAD)?,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            tokens,
            ids,
            lowercase: true,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()))
    }

    /// Special tokens, every character of `words` both as a word-initial and a
    /// continuation piece, and the words themselves.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let words: Vec<String> = words.into_iter().map(str::to_lowercase).collect();
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].map(String::from).to_vec();
        let mut chars: Vec<char> = words.iter().flat_map(|w| w.chars()).collect();
        chars.extend('a'..='z');
        chars.extend('0'..='9');
        chars.extend(".,;:!?'\"()-".chars());
        chars.sort_unstable();
        chars.dedup();
        for c in &chars {
            tokens.push(c.to_string());
        }
        for c in &chars {
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in words {
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens).expect("special tokens present")
    }

    /// Case-sensitive matching; by default words are lowercased first, as for
    /// an uncased vocabulary.
    pub fn case_sensitive(mut self) -> Self {
        self.lowercase = false;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Greedy longest-match segmentation of a single word. A word that cannot
    /// be covered becomes one unknown token.
    pub fn segment(&self, word: &str) -> Vec<u32> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return vec![self.unk];
        }
        let byte_at = |ci: usize| chars.get(ci).map_or(word.len(), |(b, _)| *b);

        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[byte_at(start)..byte_at(end)]);
                if let Some(&id) = self.ids.get(candidate.as_str()) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.unk],
            }
        }
        pieces
    }
}

/// Segments every surface word, lays the pieces out as
/// `[CLS] pieces... [SEP] [PAD]...` over exactly `max_len` positions, and
/// records one alignment tuple per word that fits. The first word that does
/// not fit entirely ends the sequence.
pub fn tokenize_subwords(
    doc_id: impl Into<String>,
    terms: &[AnalyzerTerm],
    vocab: &Vocab,
    max_len: usize,
) -> Result<AnalyzedDocument> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be at least 2, got {max_len}")));
    }
    let capacity = max_len - 2;
    let mut subwords = Vec::with_capacity(max_len);
    subwords.push(vocab.cls_id());
    let mut alignments = Vec::new();
    for term in terms {
        let pieces = vocab.segment(&term.surface);
        let used = subwords.len() - 1;
        if used + pieces.len() > capacity {
            break;
        }
        let start = subwords.len();
        subwords.extend_from_slice(&pieces);
        alignments.push(AlignmentTuple {
            word_index: term.word_index,
            start,
            end: subwords.len() - 1,
        });
    }
    subwords.push(vocab.sep_id());
    let length = subwords.len();
    subwords.resize(max_len, vocab.pad_id());
    Ok(AnalyzedDocument {
        doc_id: doc_id.into(),
        subwords,
        alignments,
        terms: terms.to_vec(),
        length,
    })
}
