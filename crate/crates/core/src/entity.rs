//! Query-specific entity sets: candidate pooling over first-stage results,
//! entity relevance scoring, top-k selection, per-document intersection and
//! relevance scaling of embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, ParamStore, Var};
use crate::embedding::{Encoder, EncoderConfig, EntityEmbeddingTable};
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::io::{read_jsonl, LinkRecord};
use crate::nn::{self, Dropout};
use crate::tensor::{dot, Matrix};
use crate::text::{AnalyzedDocument, Analyzer, Vocab};
use crate::training::folds::FoldPlan;
use crate::training::optim::{AdamConfig, OptimizerState};
use crate::trec::RunEntry;

pub const DEFAULT_TOP_K: usize = 20;
/// Query-side fallback size when a query has no linked entities.
pub const QUERY_FALLBACK_K: usize = 5;

/// Entity links for documents and queries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityLinks {
    pub docs: HashMap<String, Vec<String>>,
    pub queries: HashMap<String, Vec<String>>,
}

impl EntityLinks {
    pub fn from_records(docs: Vec<LinkRecord>, queries: Vec<LinkRecord>) -> Self {
        let collect = |rs: Vec<LinkRecord>| {
            rs.into_iter()
                .map(|r| (r.id, dedup_preserving(r.entities)))
                .collect()
        };
        Self {
            docs: collect(docs),
            queries: collect(queries),
        }
    }

    pub fn load(doc_links: impl AsRef<Path>, query_links: Option<&Path>) -> Result<Self> {
        let docs = read_jsonl(doc_links)?;
        let queries = match query_links {
            Some(p) => read_jsonl(p)?,
            None => Vec::new(),
        };
        Ok(Self::from_records(docs, queries))
    }

    pub fn doc_entities(&self, doc_id: &str) -> &[String] {
        self.docs.get(doc_id).map_or(&[], Vec::as_slice)
    }

    pub fn query_entities(&self, query_id: &str) -> &[String] {
        self.queries.get(query_id).map_or(&[], Vec::as_slice)
    }

    /// Drops ids without an embedding; returns the dropped ids.
    pub fn retain_resolvable(&mut self, table: &EntityEmbeddingTable) -> BTreeSet<String> {
        let mut dropped = BTreeSet::new();
        for list in self.docs.values_mut().chain(self.queries.values_mut()) {
            list.retain(|e| {
                let keep = table.contains(e);
                if !keep {
                    dropped.insert(e.clone());
                }
                keep
            });
        }
        dropped
    }
}

fn dedup_preserving(ids: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ids.into_iter().filter(|e| seen.insert(e.clone())).collect()
}

/// Union of the entities linked from the top `depth` documents.
pub fn candidate_pool(run: &[RunEntry], links: &EntityLinks, depth: usize) -> BTreeSet<String> {
    run.iter()
        .take(depth)
        .flat_map(|e| links.doc_entities(&e.doc_id).iter().cloned())
        .collect()
}

/// Fraction of the top `depth` documents linking each pooled entity.
pub fn pool_frequency(run: &[RunEntry], links: &EntityLinks, depth: usize) -> BTreeMap<String, f64> {
    let docs: Vec<&RunEntry> = run.iter().take(depth).collect();
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for e in &docs {
        for ent in links.doc_entities(&e.doc_id) {
            *counts.entry(ent.clone()).or_default() += 1.0;
        }
    }
    let n = docs.len().max(1) as f64;
    for v in counts.values_mut() {
        *v /= n;
    }
    counts
}

/// Entities with scores in `[0, 1]` and score-scaled embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntitySet {
    pub entity_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Row `j` is `scores[j] · embedding(entity_ids[j])`.
    pub scaled_embeddings: Matrix,
}

impl ScoredEntitySet {
    pub fn empty(dim: usize) -> Self {
        Self {
            entity_ids: Vec::new(),
            scores: Vec::new(),
            scaled_embeddings: Matrix::zeros(0, dim),
        }
    }

    pub fn new(entity_ids: Vec<String>, scores: Vec<f64>, table: &EntityEmbeddingTable) -> Result<Self> {
        if entity_ids.len() != scores.len() {
            return Err(Error::shape("entity scores", entity_ids.len(), scores.len()));
        }
        let mut scaled = table.lookup(&entity_ids)?;
        for (j, s) in scores.iter().enumerate() {
            for x in scaled.row_mut(j) {
                *x *= s;
            }
        }
        Ok(Self {
            entity_ids,
            scores,
            scaled_embeddings: scaled,
        })
    }

    /// The first `k` entries.
    pub fn head(&self, k: usize) -> Self {
        let n = self.len().min(k);
        let keep: Vec<usize> = (0..n).collect();
        Self {
            entity_ids: self.entity_ids[..n].to_vec(),
            scores: self.scores[..n].to_vec(),
            scaled_embeddings: self.scaled_embeddings.select_rows(&keep),
        }
    }

    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.entity_ids
            .iter()
            .position(|e| e == id)
            .map(|i| self.scores[i])
    }

    pub fn to_record(&self, query_id: &str) -> EntitySetRecord {
        EntitySetRecord {
            query_id: query_id.to_string(),
            entities: self
                .entity_ids
                .iter()
                .zip(&self.scores)
                .map(|(id, &score)| ScoredEntity {
                    id: id.clone(),
                    score,
                })
                .collect(),
        }
    }

    pub fn from_record(record: &EntitySetRecord, table: &EntityEmbeddingTable) -> Result<Self> {
        let (ids, scores) = record
            .entities
            .iter()
            .map(|e| (e.id.clone(), e.score))
            .unzip();
        Self::new(ids, scores, table)
    }
}

/// On-disk form of a query's entity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySetRecord {
    pub query_id: String,
    pub entities: Vec<ScoredEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub id: String,
    pub score: f64,
}

/// The `k` highest-scoring entities, ties broken by ascending id.
pub fn select_top_k(
    scores: &BTreeMap<String, f64>,
    k: usize,
    table: &EntityEmbeddingTable,
) -> Result<ScoredEntitySet> {
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(id, &s)| (id, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    let (ids, vals) = ranked.into_iter().map(|(id, s)| (id.clone(), s)).unzip();
    ScoredEntitySet::new(ids, vals, table)
}

/// Document entities that are also in the query set, in query-set order,
/// with the query-set scores.
pub fn document_entity_set(doc_entities: &[String], query_set: &ScoredEntitySet) -> ScoredEntitySet {
    let doc: BTreeSet<&str> = doc_entities.iter().map(String::as_str).collect();
    let keep: Vec<usize> = (0..query_set.len())
        .filter(|&j| doc.contains(query_set.entity_ids[j].as_str()))
        .collect();
    ScoredEntitySet {
        entity_ids: keep.iter().map(|&j| query_set.entity_ids[j].clone()).collect(),
        scores: keep.iter().map(|&j| query_set.scores[j]).collect(),
        scaled_embeddings: query_set.scaled_embeddings.select_rows(&keep),
    }
}

/// The query's own linked entities, scored and capped at `k`; when it has
/// none, the first [`QUERY_FALLBACK_K`] entries of the query-relevant set.
pub fn query_side_set(
    linked_scores: &BTreeMap<String, f64>,
    query_set: &ScoredEntitySet,
    k: usize,
    table: &EntityEmbeddingTable,
) -> Result<ScoredEntitySet> {
    if !linked_scores.is_empty() {
        return select_top_k(linked_scores, k, table);
    }
    Ok(query_set.head(QUERY_FALLBACK_K))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityScorerKind {
    SupervisedCross,
    Bm25Descriptions,
    MaxSim,
    CentroidSim,
    LogisticRegression,
}

impl EntityScorerKind {
    pub const ALL: [EntityScorerKind; 5] = [
        EntityScorerKind::SupervisedCross,
        EntityScorerKind::Bm25Descriptions,
        EntityScorerKind::MaxSim,
        EntityScorerKind::CentroidSim,
        EntityScorerKind::LogisticRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SupervisedCross => "supervised_cross",
            Self::Bm25Descriptions => "bm25_descriptions",
            Self::MaxSim => "max_sim",
            Self::CentroidSim => "centroid_sim",
            Self::LogisticRegression => "logistic_regression",
        }
    }

    pub fn needs_training(self) -> bool {
        matches!(self, Self::SupervisedCross | Self::LogisticRegression)
    }
}

impl std::str::FromStr for EntityScorerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown entity scorer `{s}`")))
    }
}

/// The query being scored.
#[derive(Debug, Clone, Copy)]
pub struct EntityQuery<'a> {
    pub query_id: &'a str,
    pub text: &'a str,
    pub linked: &'a [String],
    /// Candidate pool frequencies, used as a logistic-regression feature.
    pub pool_frequency: &'a BTreeMap<String, f64>,
}

/// What the scorers may need; each kind checks for its own requirements.
#[derive(Clone, Copy)]
pub struct ScorerResources<'a> {
    pub embeddings: &'a EntityEmbeddingTable,
    pub descriptions: Option<&'a InvertedIndex>,
    pub cross_encoder: Option<&'a CrossEncoderScorer>,
    pub logistic: Option<&'a LogisticScorer>,
}

/// `(1 + cos) / 2`; zero vectors have cosine 0.
pub fn cosine_unit(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let cos = if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    };
    (1.0 + cos) / 2.0
}

fn embedding<'t>(table: &'t EntityEmbeddingTable, id: &str) -> Result<&'t [f64]> {
    table
        .get(id)
        .ok_or_else(|| Error::MissingEntities(vec![id.to_string()]))
}

fn query_vectors<'t>(query: &EntityQuery<'_>, table: &'t EntityEmbeddingTable) -> Result<Vec<&'t [f64]>> {
    if query.linked.is_empty() {
        return Err(Error::NoQueryEntities(query.query_id.to_string()));
    }
    query.linked.iter().map(|e| embedding(table, e)).collect()
}

fn max_sim(query: &EntityQuery<'_>, candidates: &BTreeSet<String>, table: &EntityEmbeddingTable) -> Result<BTreeMap<String, f64>> {
    let qv = query_vectors(query, table)?;
    candidates
        .iter()
        .map(|c| {
            let v = embedding(table, c)?;
            let best = qv.iter().map(|q| cosine_unit(v, q)).fold(0.0, f64::max);
            Ok((c.clone(), best))
        })
        .collect()
}

fn centroid(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut c = vec![0.0; dim];
    for v in vectors {
        for (a, b) in c.iter_mut().zip(*v) {
            *a += b;
        }
    }
    for a in &mut c {
        *a /= vectors.len() as f64;
    }
    c
}

fn centroid_sim(query: &EntityQuery<'_>, candidates: &BTreeSet<String>, table: &EntityEmbeddingTable) -> Result<BTreeMap<String, f64>> {
    let c = centroid(&query_vectors(query, table)?);
    candidates
        .iter()
        .map(|id| Ok((id.clone(), cosine_unit(embedding(table, id)?, &c))))
        .collect()
}

/// Min-max normalized BM25 of the query against each entity's description.
/// When every candidate scores the same, each gets 1 if that score is
/// positive and 0 otherwise.
fn description_bm25(text: &str, candidates: &BTreeSet<String>, descriptions: &InvertedIndex) -> BTreeMap<String, f64> {
    let raw: Vec<(String, f64)> = candidates
        .iter()
        .map(|id| {
            let s = if descriptions.contains(id) {
                descriptions.score(text, id).unwrap_or(0.0)
            } else {
                0.0
            };
            (id.clone(), s)
        })
        .collect();
    let min = raw.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let max = raw.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    raw.into_iter()
        .map(|(id, s)| {
            let n = if max > min {
                (s - min) / (max - min)
            } else if max > 0.0 {
                1.0
            } else {
                0.0
            };
            (id, n)
        })
        .collect()
}

/// `[max_sim, centroid_sim, description BM25, pool frequency]` per candidate.
/// Without query entities the two similarity features are 0.5.
pub fn logistic_features(
    query: &EntityQuery<'_>,
    candidates: &BTreeSet<String>,
    resources: &ScorerResources<'_>,
) -> Result<BTreeMap<String, [f64; 4]>> {
    let table = resources.embeddings;
    let (maxs, cents) = if query.linked.is_empty() {
        let half: BTreeMap<String, f64> = candidates.iter().map(|c| (c.clone(), 0.5)).collect();
        (half.clone(), half)
    } else {
        (max_sim(query, candidates, table)?, centroid_sim(query, candidates, table)?)
    };
    let desc = match resources.descriptions {
        Some(d) => description_bm25(query.text, candidates, d),
        None => candidates.iter().map(|c| (c.clone(), 0.0)).collect(),
    };
    Ok(candidates
        .iter()
        .map(|c| {
            let f = [
                maxs[c],
                cents[c],
                desc[c],
                query.pool_frequency.get(c).copied().unwrap_or(0.0),
            ];
            (c.clone(), f)
        })
        .collect())
}

/// Relevance of each candidate to the query, in `[0, 1]`.
pub fn score_entities(
    kind: EntityScorerKind,
    query: &EntityQuery<'_>,
    candidates: &BTreeSet<String>,
    resources: &ScorerResources<'_>,
) -> Result<BTreeMap<String, f64>> {
    let table = resources.embeddings;
    for c in candidates {
        embedding(table, c)?;
    }
    match kind {
        EntityScorerKind::MaxSim => max_sim(query, candidates, table),
        EntityScorerKind::CentroidSim => centroid_sim(query, candidates, table),
        EntityScorerKind::Bm25Descriptions => {
            let d = resources.descriptions.ok_or_else(|| {
                Error::Config("bm25_descriptions needs an entity description corpus".into())
            })?;
            Ok(description_bm25(query.text, candidates, d))
        }
        EntityScorerKind::LogisticRegression => {
            let model = resources.logistic.ok_or_else(|| {
                Error::Config("logistic_regression needs trained weights; run train-entity-ranker".into())
            })?;
            Ok(logistic_features(query, candidates, resources)?
                .into_iter()
                .map(|(c, f)| (c, model.predict(&f)))
                .collect())
        }
        EntityScorerKind::SupervisedCross => {
            let model = resources.cross_encoder.ok_or_else(|| {
                Error::Config("supervised_cross needs trained weights; run train-entity-ranker".into())
            })?;
            candidates
                .iter()
                .map(|c| Ok((c.clone(), model.score(query.text, c)?)))
                .collect()
        }
    }
}

/// Label for a (query, entity) training pair; only 0 and 1 are accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPair {
    pub query_id: String,
    pub query_text: String,
    pub entity_id: String,
    pub label: u8,
}

impl EntityPair {
    pub fn new(
        query_id: impl Into<String>,
        query_text: impl Into<String>,
        entity_id: impl Into<String>,
        label: i64,
    ) -> Result<Self> {
        if label != 0 && label != 1 {
            return Err(Error::InvalidLabel(label));
        }
        Ok(Self {
            query_id: query_id.into(),
            query_text: query_text.into(),
            entity_id: entity_id.into(),
            label: label as u8,
        })
    }
}

/// Candidates linked from a relevant document are positives; the rest are
/// negatives.
pub fn label_candidates(
    query_id: &str,
    query_text: &str,
    candidates: &BTreeSet<String>,
    relevant_docs: &[&str],
    links: &EntityLinks,
) -> Vec<EntityPair> {
    let positive: BTreeSet<&str> = relevant_docs
        .iter()
        .flat_map(|d| links.doc_entities(d).iter().map(String::as_str))
        .collect();
    candidates
        .iter()
        .map(|c| EntityPair {
            query_id: query_id.to_string(),
            query_text: query_text.to_string(),
            entity_id: c.clone(),
            label: positive.contains(c.as_str()) as u8,
        })
        .collect()
}

/// Entity name shown to the pair scorer: the id with underscores as spaces.
pub fn entity_name(entity_id: &str) -> String {
    entity_id.replace('_', " ")
}

/// `[CLS] query [SEP] name [SEP]` padded to `max_len`. Query words are
/// dropped from the end when the pair does not fit.
pub fn pair_tokens(query: &str, name: &str, vocab: &Vocab, max_len: usize) -> Result<AnalyzedDocument> {
    if max_len < 3 {
        return Err(Error::Config("pair sequences need max_len >= 3".into()));
    }
    let analyzer = Analyzer::with_stopwords(Vec::<String>::new());
    let pieces = |text: &str| -> Vec<u32> {
        analyzer
            .analyze(text)
            .iter()
            .flat_map(|t| vocab.segment(&t.surface))
            .collect()
    };
    let mut q = pieces(query);
    let mut n = pieces(name);
    let budget = max_len - 3;
    n.truncate(budget);
    q.truncate(budget - n.len());
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    ids.extend(q);
    ids.push(vocab.sep_id());
    ids.extend(n);
    ids.push(vocab.sep_id());
    let length = ids.len();
    ids.resize(max_len, vocab.pad_id());
    Ok(AnalyzedDocument {
        doc_id: String::new(),
        subwords: ids,
        alignments: Vec::new(),
        terms: Vec::new(),
        length,
    })
}

/// Text-pair relevance scorer: an encoder over the pair sequence and a
/// linear head on the first position's representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderScorer {
    pub encoder: Encoder,
    pub params: ParamStore,
    pub vocab: Vocab,
}

impl CrossEncoderScorer {
    pub fn init(config: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, "encoder");
        let mut params = ParamStore::new();
        encoder.init(&mut params, &mut rng)?;
        nn::init_linear(&mut params, "head", config.hidden_dim, 1, true, &mut rng);
        Ok(Self {
            encoder,
            params,
            vocab,
        })
    }

    fn logit_on(&self, g: &mut Graph, query: &str, entity_id: &str, dropout: &mut Dropout) -> Result<Var> {
        let tokens = pair_tokens(query, &entity_name(entity_id), &self.vocab, self.encoder.config.max_len)?;
        let h = self.encoder.encode_on(g, &self.params, &tokens, dropout)?;
        let cls = g.mean_rows(h, &[0]);
        Ok(nn::linear(g, &self.params, cls, "head"))
    }

    pub fn logit(&self, query: &str, entity_id: &str) -> Result<f64> {
        let mut g = Graph::new();
        let out = self.logit_on(&mut g, query, entity_id, &mut Dropout::disabled())?;
        Ok(g.value(out).to_scalar())
    }

    pub fn score(&self, query: &str, entity_id: &str) -> Result<f64> {
        Ok(sigmoid(self.logit(query, entity_id)?))
    }
}

/// Logistic regression over [`logistic_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    pub weights: [f64; 4],
    pub bias: f64,
}

impl LogisticScorer {
    pub fn predict(&self, features: &[f64; 4]) -> f64 {
        sigmoid(dot(&self.weights, features) + self.bias)
    }

    /// Full-batch gradient descent on mean binary cross-entropy.
    pub fn fit(examples: &[([f64; 4], u8)], epochs: usize, lr: f64) -> Self {
        let mut model = Self {
            weights: [0.0; 4],
            bias: 0.0,
        };
        if examples.is_empty() {
            return model;
        }
        let n = examples.len() as f64;
        for _ in 0..epochs {
            let mut gw = [0.0; 4];
            let mut gb = 0.0;
            for (f, y) in examples {
                let err = model.predict(f) - *y as f64;
                for (g, x) in gw.iter_mut().zip(f) {
                    *g += err * x / n;
                }
                gb += err / n;
            }
            for (w, g) in model.weights.iter_mut().zip(gw) {
                *w -= lr * g;
            }
            model.bias -= lr * gb;
        }
        model
    }
}

/// One trained model per held-out fold.
#[derive(Debug, Clone)]
pub struct FoldModels<T> {
    pub plan: FoldPlan,
    pub models: Vec<T>,
}

impl<T> FoldModels<T> {
    /// The model that never saw `query_id` in training.
    pub fn for_query(&self, query_id: &str) -> Option<&T> {
        self.plan.fold_of(query_id).map(|f| &self.models[f])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerTrainConfig {
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

/// Trains one pair scorer with binary cross-entropy; returns the model and
/// the per-step mean batch loss.
pub fn train_cross_encoder(
    pairs: &[EntityPair],
    vocab: &Vocab,
    config: &RankerTrainConfig,
) -> Result<(CrossEncoderScorer, Vec<f64>)> {
    let mut model = CrossEncoderScorer::init(config.encoder, vocab.clone(), config.seed)?;
    let mut opt = OptimizerState::new(config.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.steps);
    let batch = config.batch_size.max(1);
    for _ in 0..config.steps {
        let mut grads = crate::autodiff::Gradients::zeros_like(&model.params);
        let mut loss = 0.0;
        let take = batch.min(pairs.len());
        for _ in 0..take {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let pair = &pairs[order[cursor]];
            cursor += 1;
            let mut dropout = Dropout {
                p: config.dropout,
                rng: Some(ChaCha8Rng::seed_from_u64(rand::Rng::gen(&mut rng))),
            };
            let mut g = Graph::new();
            let logit = model.logit_on(&mut g, &pair.query_text, &pair.entity_id, &mut dropout)?;
            let z = g.value(logit).to_scalar();
            let (l, dz) = crate::training::bce_with_logit(z, pair.label as f64);
            loss += l / take as f64;
            grads.add_assign(&g.backward(logit, dz / take as f64, &model.params));
        }
        opt.update(&mut model.params, &mut grads);
        losses.push(loss);
    }
    Ok((model, losses))
}

/// Per-fold pair scorers; fold `f`'s model trains on every query outside
/// fold `f`.
pub fn train_entity_ranker(
    pairs: &[EntityPair],
    plan: &FoldPlan,
    vocab: &Vocab,
    config: &RankerTrainConfig,
) -> Result<FoldModels<CrossEncoderScorer>> {
    let mut models = Vec::with_capacity(plan.num_folds());
    for fold in 0..plan.num_folds() {
        let train: Vec<EntityPair> = pairs
            .iter()
            .filter(|p| plan.fold_of(&p.query_id).is_some_and(|f| f != fold))
            .cloned()
            .collect();
        if !train.iter().any(|p| p.label == 1) {
            return Err(Error::FoldWithoutPositives(fold));
        }
        let fold_config = RankerTrainConfig {
            seed: config.seed.wrapping_add(fold as u64),
            ..*config
        };
        models.push(train_cross_encoder(&train, vocab, &fold_config)?.0);
    }
    Ok(FoldModels {
        plan: plan.clone(),
        models,
    })
}

/// Per-fold logistic scorers over precomputed features keyed by query.
pub fn train_logistic_ranker(
    examples: &[(String, [f64; 4], u8)],
    plan: &FoldPlan,
    epochs: usize,
    lr: f64,
) -> Result<FoldModels<LogisticScorer>> {
    let mut models = Vec::with_capacity(plan.num_folds());
    for fold in 0..plan.num_folds() {
        let train: Vec<([f64; 4], u8)> = examples
            .iter()
            .filter(|(q, _, _)| plan.fold_of(q).is_some_and(|f| f != fold))
            .map(|(_, f, y)| (*f, *y))
            .collect();
        if !train.iter().any(|(_, y)| *y == 1) {
            return Err(Error::FoldWithoutPositives(fold));
        }
        models.push(LogisticScorer::fit(&train, epochs, lr));
    }
    Ok(FoldModels {
        plan: plan.clone(),
        models,
    })
}
