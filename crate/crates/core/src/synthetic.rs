//! Generated corpora with planted relevance signals.
//!
//! Every query owns 20 candidate documents, 5 of them relevant. Words are
//! pronounceable nonsense built from a restricted alphabet so the analyzer
//! leaves them unchanged. What separates relevant from non-relevant
//! documents depends on [`Signal`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSources, RerankDataset};
use crate::embedding::{EncoderConfig, EncoderMode, EntityEmbeddingTable};
use crate::entity::ScoredEntitySet;
use crate::error::Result;
use crate::index::InvertedIndex;
use crate::model::RegentConfig;
use crate::text::{Analyzer, Vocab};
use crate::training::optim::AdamConfig;
use crate::training::{derive_seed, TrainConfig};
use crate::trec::{Qrels, RankedRun, RunEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Relevant documents repeat query terms and link query entities.
    Mixed,
    /// Every document mentions each query term once at the same length, so
    /// BM25 ties; only relevant documents link query entities.
    EntityOnly,
    /// Relevant documents repeat query terms; every document links one query
    /// entity regardless of relevance.
    LexicalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub signal: Signal,
    pub num_queries: usize,
    pub docs_per_query: usize,
    pub relevant_per_query: usize,
    /// Filler words per document before query terms are planted.
    pub doc_words: usize,
    pub entity_dim: usize,
    /// Entities shared by all queries; each query's topic entities and every
    /// off-topic link come from this pool.
    pub entity_pool: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(signal: Signal, num_queries: usize, seed: u64) -> Self {
        Self {
            signal,
            num_queries,
            docs_per_query: 20,
            relevant_per_query: 5,
            doc_words: 10,
            entity_dim: 8,
            entity_pool: 8,
            seed,
        }
    }

    /// Longest document in subwords, plus `[CLS]` and `[SEP]`.
    pub fn max_len(&self) -> usize {
        self.doc_words + 3 + 2
    }
}

const ONSETS: [char; 7] = ['b', 'd', 'k', 'm', 'p', 't', 'z'];
const VOWELS: [char; 3] = ['a', 'o', 'u'];
const QUERY_TERMS: usize = 2;
const QUERY_ENTITIES: usize = 3;
const FILLER_WORDS: usize = 40;

/// Distinct five-letter CVCVC words.
fn words(n: usize, rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..5)
            .map(|i| {
                if i % 2 == 0 {
                    *ONSETS.choose(rng).unwrap()
                } else {
                    *VOWELS.choose(rng).unwrap()
                }
            })
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn random_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub corpus: BTreeMap<String, String>,
    pub queries: BTreeMap<String, String>,
    pub qrels: Qrels,
    /// Each query's own documents, scored by BM25.
    pub candidates: RankedRun,
    pub doc_links: BTreeMap<String, Vec<String>>,
    pub query_entities: BTreeMap<String, ScoredEntitySet>,
    pub table: EntityEmbeddingTable,
    pub index: InvertedIndex,
    pub vocab: Vocab,
}

pub fn generate(spec: SyntheticSpec) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthetic"));
    let mut taken = BTreeSet::new();
    let filler = words(FILLER_WORDS, &mut rng, &mut taken);
    let mut table = EntityEmbeddingTable::new(spec.entity_dim);
    let pool: Vec<String> = (0..spec.entity_pool.max(QUERY_ENTITIES + 1)).map(|i| format!("Entity_{i:02}")).collect();
    for id in &pool {
        table.insert(id.clone(), random_vector(spec.entity_dim, &mut rng))?;
    }

    let mut corpus = BTreeMap::new();
    let mut queries = BTreeMap::new();
    let mut qrels = Qrels::new();
    let mut doc_links = BTreeMap::new();
    let mut query_entities = BTreeMap::new();
    let mut per_query_docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for qn in 0..spec.num_queries {
        let qid = format!("q{qn:03}");
        let terms = words(QUERY_TERMS, &mut rng, &mut taken);
        queries.insert(qid.clone(), terms.join(" "));

        let ents: Vec<String> = pool.choose_multiple(&mut rng, QUERY_ENTITIES).cloned().collect();
        let off_topic: Vec<&String> = pool.iter().filter(|e| !ents.contains(e)).collect();
        let scores: Vec<f64> = (0..QUERY_ENTITIES).map(|j| 0.9 - 0.2 * j as f64).collect();
        query_entities.insert(qid.clone(), ScoredEntitySet::new(ents.clone(), scores, &table)?);

        // Document numbers are shuffled so ids carry no relevance information.
        let mut numbers: Vec<usize> = (0..spec.docs_per_query).collect();
        numbers.shuffle(&mut rng);
        let mut ids = Vec::new();
        for (rank, &num) in numbers.iter().enumerate() {
            let relevant = rank < spec.relevant_per_query;
            let did = format!("{qid}_d{num:02}");
            let mut text: Vec<String> = (0..spec.doc_words).map(|_| filler.choose(&mut rng).unwrap().clone()).collect();
            let mut links: Vec<String> = vec![(*off_topic.choose(&mut rng).unwrap()).clone()];
            let plant = match (spec.signal, relevant) {
                (Signal::EntityOnly, _) => terms.clone(),
                (_, true) => (0..2 + rng.gen_range(0..2)).map(|_| terms.choose(&mut rng).unwrap().clone()).collect(),
                (_, false) if rng.gen_bool(0.3) => vec![terms.choose(&mut rng).unwrap().clone()],
                _ => Vec::new(),
            };
            for w in plant {
                let at = rng.gen_range(0..=text.len());
                text.insert(at, w);
            }
            let entity_linked = match spec.signal {
                Signal::LexicalOnly => true,
                _ => relevant,
            };
            if entity_linked {
                let k = if spec.signal == Signal::LexicalOnly { 1 } else { rng.gen_range(1..=2) };
                links.extend(ents.choose_multiple(&mut rng, k).cloned());
            }
            links.shuffle(&mut rng);
            corpus.insert(did.clone(), text.join(" "));
            doc_links.insert(did.clone(), links);
            if relevant {
                qrels.insert(qid.as_str(), did.as_str(), if rng.gen_bool(0.4) { 2 } else { 1 });
            } else if rng.gen_bool(0.5) {
                qrels.insert(qid.as_str(), did.as_str(), 0);
            }
            ids.push(did);
        }
        ids.sort();
        per_query_docs.insert(qid, ids);
    }

    let index = InvertedIndex::build(corpus.iter().map(|(d, t)| (d.as_str(), t.as_str())), Analyzer::english())?;
    let mut candidates = RankedRun::new("bm25");
    for (qid, ids) in &per_query_docs {
        let entries = ids
            .iter()
            .map(|d| Ok(RunEntry::new(d.clone(), index.score(&queries[qid], d)?)))
            .collect::<Result<Vec<_>>>()?;
        candidates.insert_sorted(qid.clone(), entries);
    }
    let vocab = Vocab::build(taken.iter().map(String::as_str));
    Ok(SyntheticCorpus {
        spec,
        corpus,
        queries,
        qrels,
        candidates,
        doc_links,
        query_entities,
        table,
        index,
        vocab,
    })
}

/// Generates `2 · num_queries` queries and splits them in half: the first
/// half to train on, the second held out. Both halves share the index,
/// vocabulary and entity table but no queries, documents or topic entities.
pub fn symmetric_split(spec: SyntheticSpec) -> Result<(SyntheticCorpus, SyntheticCorpus)> {
    let n = spec.num_queries;
    let all = generate(SyntheticSpec { num_queries: 2 * n, ..spec })?;
    let ids: Vec<String> = all.queries.keys().cloned().collect();
    let (a, b) = ids.split_at(n);
    Ok((all.restrict(a, spec), all.restrict(b, spec)))
}

impl SyntheticCorpus {
    fn restrict(&self, query_ids: &[String], spec: SyntheticSpec) -> Self {
        let keep = |q: &str| query_ids.iter().any(|k| k == q);
        let mut candidates = RankedRun::new(self.candidates.tag.clone());
        let mut qrels = Qrels::new();
        let mut docs = BTreeSet::new();
        for q in query_ids {
            let entries = self.candidates.get(q).to_vec();
            docs.extend(entries.iter().map(|e| e.doc_id.clone()));
            candidates.queries.insert(q.clone(), entries);
            for (d, &g) in self.qrels.judged(q).into_iter().flatten() {
                qrels.insert(q.as_str(), d.as_str(), g);
            }
        }
        let pick = |m: &BTreeMap<String, String>| {
            m.iter().filter(|(k, _)| docs.contains(*k)).map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        Self {
            spec,
            corpus: pick(&self.corpus),
            queries: self.queries.iter().filter(|(q, _)| keep(q)).map(|(k, v)| (k.clone(), v.clone())).collect(),
            qrels,
            candidates,
            doc_links: self.doc_links.iter().filter(|(d, _)| docs.contains(*d)).map(|(k, v)| (k.clone(), v.clone())).collect(),
            query_entities: self
                .query_entities
                .iter()
                .filter(|(q, _)| keep(q))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            table: self.table.clone(),
            index: self.index.clone(),
            vocab: self.vocab.clone(),
        }
    }

    pub fn dataset(&self) -> Result<RerankDataset> {
        let links = |d: &str| self.doc_links.get(d).cloned().unwrap_or_default();
        RerankDataset::build(DatasetSources {
            index: &self.index,
            vocab: &self.vocab,
            max_len: self.spec.max_len(),
            corpus: &self.corpus,
            queries: &self.queries,
            query_entities: &self.query_entities,
            query_side: None,
            doc_links: &links,
            candidates: self.candidates.clone(),
            qrels: self.qrels.clone(),
            entity_dim: self.spec.entity_dim,
        })
    }

    /// Scoring network sized for these corpora: `d = 16`, two heads, a frozen
    /// token lookup shared by both corpora of a split.
    pub fn model_config(&self) -> RegentConfig {
        let encoder = EncoderConfig {
            hidden_dim: 16,
            num_layers: 0,
            num_heads: 2,
            max_len: self.spec.max_len(),
            mode: EncoderMode::FrozenLookup,
            vocab_size: self.vocab.len(),
            ffn_dim: 32,
        };
        RegentConfig::new(encoder, self.spec.entity_dim)
    }
}

/// Optimizer settings for the synthetic corpora. The small data set needs a
/// far larger step and shorter warmup than full-scale training.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            base_lr: 1e-2,
            warmup_steps: 10,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}
