//! Checks that word-level BM25 scores land on subword positions intact.

use std::collections::BTreeMap;

use regent::index::InvertedIndex;
use regent::text::{tokenize_subwords, Analyzer, Vocab};

pub const DOCS: [(&str, &str); 10] = [
    ("d00", "Cats are playing with the boys in the playground"),
    ("d01", "The market fell as traders were selling stocks"),
    ("d02", "Dogs sleep while cats play quietly"),
    ("d03", "Playing football, boys played and players cheered"),
    ("d04", "A cat and a dog: playful rivals"),
    ("d05", "Stocks rallied; the market recovered"),
    ("d06", "The boy sleeps"),
    ("d07", "plays, playing, played, player"),
    ("d08", "Nothing relevant here at all"),
    ("d09", "cats cats cats dogs"),
];

pub const QUERIES: [&str; 5] = [
    "playing cats",
    "market stocks selling",
    "boys sleeping dogs",
    "the and of",
    "players playground",
];

/// Pieces chosen so inflected words split into a stem piece plus suffixes.
const PIECES: [&str; 12] = [
    "play", "##ing", "##s", "##ed", "##er", "##ful", "cat", "boy", "dog", "market", "stock", "sleep",
];

/// Runs every check on every (query, document) pair; returns the number of
/// matched words verified.
pub fn check() -> Result<usize, String> {
    let analyzer = Analyzer::english();
    let index = InvertedIndex::build(DOCS, analyzer.clone()).map_err(|e| e.to_string())?;
    let vocab = Vocab::build(PIECES);
    let mut matched_words = 0;
    for query in QUERIES {
        let stems = index.query_stems(query);
        let retrieved: BTreeMap<String, f64> =
            index.retrieve(query, 1000).into_iter().map(|e| (e.doc_id, e.score)).collect();
        for (doc_id, text) in DOCS {
            let doc = tokenize_subwords(doc_id, &analyzer.analyze(text), &vocab, 64).map_err(|e| e.to_string())?;
            if doc.alignments.len() != doc.terms.len() {
                return Err(format!("{doc_id} truncated"));
            }
            let r = index.token_relevance_vector(query, &doc).map_err(|e| e.to_string())?.scores;
            let mut covered = vec![false; r.len()];
            let mut from_r = Vec::new();
            let mut expected = Vec::new();
            let mut representative: BTreeMap<&str, f64> = BTreeMap::new();
            for (term, span) in doc.aligned_terms() {
                if term.stem.is_empty() || !stems.contains(&term.stem) {
                    continue;
                }
                matched_words += 1;
                let want = index.bm25_term_score(&term.stem, doc_id).map_err(|e| e.to_string())?;
                let slice = &r[span.start..=span.end];
                if slice.iter().any(|&x| x != slice[0]) {
                    return Err(format!("{doc_id}/{query}: word {} has unequal pieces {slice:?}", term.surface));
                }
                if slice[0] != want {
                    return Err(format!("{doc_id}/{query}: word {} got {} want {want}", term.surface, slice[0]));
                }
                covered[span.start..=span.end].fill(true);
                from_r.push(slice[0]);
                expected.push(want);
                representative.entry(term.stem.as_str()).or_insert(slice[0]);
            }
            if let Some(i) = (0..r.len()).find(|&i| !covered[i] && r[i] != 0.0) {
                return Err(format!("{doc_id}/{query}: unmatched position {i} carries {}", r[i]));
            }
            from_r.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            if from_r != expected {
                return Err(format!("{doc_id}/{query}: conservation {from_r:?} vs {expected:?}"));
            }
            // Query stems are sorted, as is the representative map, so the
            // summation order matches retrieve()'s.
            let total = representative.values().fold(0.0, |acc, s| acc + s);
            let direct = index.score(query, doc_id).map_err(|e| e.to_string())?;
            let listed = retrieved.get(doc_id).copied().unwrap_or(0.0);
            if total != direct || total != listed {
                return Err(format!("{doc_id}/{query}: sum {total} score {direct} retrieve {listed}"));
            }
        }
    }
    Ok(matched_words)
}
