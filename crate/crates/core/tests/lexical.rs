mod common;

use proptest::prelude::*;
use regent::index::InvertedIndex;
use regent::text::{tokenize_subwords, Analyzer, Vocab};

#[test]
fn bm25_propagates_onto_subwords() {
    let matched = common::propagation::check().unwrap();
    assert!(matched > 20, "fixture too sparse: {matched}");
}

const WORDS: [&str; 10] = ["cat", "cats", "play", "playing", "the", "boy", "boys", "dog", "and", "fell"];

proptest! {
    #[test]
    fn relevance_vector_invariants(
        docs in prop::collection::vec(prop::collection::vec(0usize..WORDS.len(), 0..12), 1..6),
        query in prop::collection::vec(0usize..WORDS.len(), 1..4),
    ) {
        let texts: Vec<(String, String)> = docs
            .iter()
            .enumerate()
            .map(|(i, ws)| (format!("d{i}"), ws.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")))
            .collect();
        let query: String = query.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
        let analyzer = Analyzer::english();
        let index = InvertedIndex::build(texts.iter().map(|(a, b)| (a.as_str(), b.as_str())), analyzer.clone()).unwrap();
        let vocab = Vocab::build(["play", "##ing", "##s", "cat", "boy"]);
        for (id, text) in &texts {
            let doc = tokenize_subwords(id.as_str(), &analyzer.analyze(text), &vocab, 48).unwrap();
            let r = index.token_relevance_vector(&query, &doc).unwrap().scores;
            prop_assert!(r.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(r[0], 0.0);
            prop_assert!(r[doc.length - 1..].iter().all(|&x| x == 0.0));
            for a in &doc.alignments {
                prop_assert!(r[a.start..=a.end].iter().all(|&x| x == r[a.start]));
            }
        }
    }
}
