//! Pre-computed model inputs for every (query, candidate) pair.

use std::collections::{BTreeMap, HashMap};

use crate::entity::{document_entity_set, ScoredEntitySet, QUERY_FALLBACK_K};
use crate::error::{Error, Result};
use crate::index::{InvertedIndex, TokenRelevanceVector};
use crate::model::ScoringInput;
use crate::text::{tokenize_subwords, AnalyzedDocument, Vocab};
use crate::trec::{Qrels, RankedRun, RunEntry};

#[derive(Debug, Clone)]
pub struct QueryEntry {
    pub text: String,
    pub analyzed: AnalyzedDocument,
    /// Query-relevant set; document sets are drawn from it.
    pub entity_set: ScoredEntitySet,
    /// Entities on the query side of entity attention.
    pub entities: ScoredEntitySet,
}

#[derive(Debug, Clone)]
pub struct PairEntry {
    pub relevance: TokenRelevanceVector,
    pub doc_bm25: f64,
    pub doc_entities: ScoredEntitySet,
}

/// Raw inputs to [`RerankDataset::build`].
pub struct DatasetSources<'a> {
    pub index: &'a InvertedIndex,
    pub vocab: &'a Vocab,
    pub max_len: usize,
    pub corpus: &'a BTreeMap<String, String>,
    pub queries: &'a BTreeMap<String, String>,
    /// Query-specific entity sets; queries without one get an empty set.
    pub query_entities: &'a BTreeMap<String, ScoredEntitySet>,
    /// Entities linked in the query text itself. Queries absent here use the
    /// head of their query-relevant set.
    pub query_side: Option<&'a BTreeMap<String, ScoredEntitySet>>,
    pub doc_links: &'a dyn Fn(&str) -> Vec<String>,
    pub candidates: RankedRun,
    pub qrels: Qrels,
    pub entity_dim: usize,
}

/// Queries, analyzed documents and per-pair features for re-ranking. Pairs
/// cover every candidate plus every judged document present in the corpus,
/// so training positives outside the candidate list can still be scored.
#[derive(Debug, Clone)]
pub struct RerankDataset {
    pub queries: BTreeMap<String, QueryEntry>,
    pub docs: BTreeMap<String, AnalyzedDocument>,
    pub candidates: RankedRun,
    pub qrels: Qrels,
    pub entity_dim: usize,
    pairs: HashMap<(String, String), PairEntry>,
}

impl RerankDataset {
    pub fn build(src: DatasetSources<'_>) -> Result<Self> {
        let analyzer = src.index.analyzer();
        let mut queries = BTreeMap::new();
        for (qid, text) in src.queries {
            let analyzed = tokenize_subwords(qid.as_str(), &analyzer.analyze(text), src.vocab, src.max_len)?;
            let entity_set = src
                .query_entities
                .get(qid)
                .cloned()
                .unwrap_or_else(|| ScoredEntitySet::empty(src.entity_dim));
            let entities = match src.query_side.and_then(|m| m.get(qid)) {
                Some(set) if !set.is_empty() => set.clone(),
                _ => entity_set.head(QUERY_FALLBACK_K),
            };
            for set in [&entity_set, &entities] {
                if set.scaled_embeddings.cols() != src.entity_dim {
                    return Err(Error::shape(
                        format!("entity set of query {qid}"),
                        src.entity_dim,
                        set.scaled_embeddings.cols(),
                    ));
                }
            }
            queries.insert(qid.clone(), QueryEntry { text: text.clone(), analyzed, entity_set, entities });
        }

        let mut wanted: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (qid, entries) in &src.candidates.queries {
            if !queries.contains_key(qid) {
                return Err(Error::Config(format!("candidate list for unknown query `{qid}`")));
            }
            wanted.entry(qid).or_default().extend(entries.iter().map(|e| e.doc_id.as_str()));
        }
        for qid in src.qrels.query_ids() {
            if let (Some(judged), true) = (src.qrels.judged(qid), queries.contains_key(qid)) {
                let list = wanted.entry(qid).or_default();
                list.extend(judged.keys().map(String::as_str).filter(|d| src.corpus.contains_key(*d)));
            }
        }

        let mut docs = BTreeMap::new();
        let mut pairs = HashMap::new();
        for (qid, doc_ids) in wanted {
            let q = &queries[qid];
            for did in doc_ids {
                if pairs.contains_key(&(qid.to_string(), did.to_string())) {
                    continue;
                }
                if !docs.contains_key(did) {
                    let text = src.corpus.get(did).ok_or_else(|| Error::UnknownDocument(did.to_string()))?;
                    let analyzed = tokenize_subwords(did, &analyzer.analyze(text), src.vocab, src.max_len)?;
                    docs.insert(did.to_string(), analyzed);
                }
                let relevance = src.index.token_relevance_vector(&q.text, &docs[did])?;
                let doc_bm25 = src.index.score(&q.text, did)?;
                let doc_entities = document_entity_set(&(src.doc_links)(did), &q.entity_set);
                pairs.insert(
                    (qid.to_string(), did.to_string()),
                    PairEntry { relevance, doc_bm25, doc_entities },
                );
            }
        }
        Ok(Self {
            queries,
            docs,
            candidates: src.candidates,
            qrels: src.qrels,
            entity_dim: src.entity_dim,
            pairs,
        })
    }

    pub fn query_ids(&self) -> Vec<&str> {
        self.queries.keys().map(String::as_str).collect()
    }

    pub fn pair(&self, query_id: &str, doc_id: &str) -> Option<&PairEntry> {
        self.pairs.get(&(query_id.to_string(), doc_id.to_string()))
    }

    pub fn input(&self, query_id: &str, doc_id: &str) -> Result<ScoringInput<'_>> {
        let q = self
            .queries
            .get(query_id)
            .ok_or_else(|| Error::Config(format!("unknown query `{query_id}`")))?;
        let pair = self.pair(query_id, doc_id).ok_or_else(|| {
            Error::Config(format!("document `{doc_id}` is not a candidate for query `{query_id}`"))
        })?;
        Ok(ScoringInput {
            query: &q.analyzed,
            doc: &self.docs[doc_id],
            relevance: &pair.relevance,
            query_entities: &q.entities,
            doc_entities: &pair.doc_entities,
            doc_bm25: pair.doc_bm25,
        })
    }

    pub fn candidates_of(&self, query_id: &str) -> &[RunEntry] {
        self.candidates.get(query_id)
    }

    /// A copy restricted to `query_ids`.
    pub fn subset(&self, query_ids: &[&str]) -> Self {
        let keep: std::collections::HashSet<&str> = query_ids.iter().copied().collect();
        let mut candidates = RankedRun::new(self.candidates.tag.clone());
        for (q, e) in &self.candidates.queries {
            if keep.contains(q.as_str()) {
                candidates.queries.insert(q.clone(), e.clone());
            }
        }
        let mut qrels = Qrels::new();
        for q in self.qrels.query_ids().filter(|q| keep.contains(q)) {
            for (d, &g) in self.qrels.judged(q).into_iter().flatten() {
                qrels.insert(q, d.as_str(), g);
            }
        }
        Self {
            queries: self
                .queries
                .iter()
                .filter(|(q, _)| keep.contains(q.as_str()))
                .map(|(q, e)| (q.clone(), e.clone()))
                .collect(),
            docs: self.docs.clone(),
            candidates,
            qrels,
            entity_dim: self.entity_dim,
            pairs: self
                .pairs
                .iter()
                .filter(|((q, _), _)| keep.contains(q.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}
