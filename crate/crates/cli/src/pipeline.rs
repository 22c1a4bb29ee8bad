//! Loading inputs and artifacts shared by several commands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use regent::dataset::{DatasetSources, RerankDataset};
use regent::embedding::{load_embeddings, EntityEmbeddingTable};
use regent::entity::{
    candidate_pool, pool_frequency, query_side_set, score_entities, select_top_k, CrossEncoderScorer, EntityLinks,
    EntityQuery, EntityScorerKind, EntitySetRecord, FoldModels, LogisticScorer, ScoredEntitySet, ScorerResources,
};
use regent::index::InvertedIndex;
use regent::io::{read_jsonl, CorpusRecord, QueryRecord};
use regent::text::{Analyzer, Vocab};
use regent::training::folds::FoldPlan;
use regent::trec::{Qrels, RankedRun};
use regent::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::failure::Failure;
use crate::workspace::Workspace;

pub const INDEX: &str = "index.bin";
pub const VOCAB: &str = "vocab.txt";
pub const BM25_RUN: &str = "bm25.run";
pub const FOLDS: &str = "folds.json";
pub const ENTITY_SETS: &str = "entity_sets.jsonl";
pub const QUERY_ENTITIES: &str = "query_entities.jsonl";
pub const UNRESOLVED: &str = "unresolved_entities.json";
pub const LOGISTIC: &str = "entity_ranker/logistic.json";
pub const RUN: &str = "runs/regent.run";

pub fn ranker_checkpoint(fold: usize) -> String {
    format!("entity_ranker/fold{fold}.ckpt")
}

pub fn regent_checkpoint(fold: usize) -> String {
    format!("checkpoints/fold{fold}.ckpt")
}

pub fn read_corpus(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for r in read_jsonl::<CorpusRecord>(path)? {
        if out.insert(r.doc_id.clone(), r.text).is_some() {
            return Err(Error::DuplicateDocument(r.doc_id).into());
        }
    }
    Ok(out)
}

pub fn read_queries(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for r in read_jsonl::<QueryRecord>(path)? {
        if out.insert(r.query_id.clone(), r.text).is_some() {
            return Err(Failure::user(format!("{}: duplicate query id `{}`", path.display(), r.query_id)));
        }
    }
    Ok(out)
}

pub fn analyzer(ws: &mut Workspace, config: &ExperimentConfig) -> Result<Analyzer, Failure> {
    match &config.paths.stopwords {
        Some(p) => Ok(Analyzer::from_stopword_file(ws.input(p)?)?),
        None => Ok(Analyzer::english()),
    }
}

pub fn queries(ws: &mut Workspace, config: &ExperimentConfig) -> Result<BTreeMap<String, String>, Failure> {
    read_queries(&ws.input(&config.paths.queries)?)
}

pub fn corpus(ws: &mut Workspace, config: &ExperimentConfig) -> Result<BTreeMap<String, String>, Failure> {
    read_corpus(&ws.input(&config.paths.corpus)?)
}

pub fn qrels(ws: &mut Workspace, config: &ExperimentConfig) -> Result<Qrels, Failure> {
    Ok(Qrels::read(ws.input(&config.paths.qrels)?)?)
}

pub fn embeddings(ws: &mut Workspace, config: &ExperimentConfig) -> Result<EntityEmbeddingTable, Failure> {
    Ok(load_embeddings(ws.input(&config.paths.entity_embeddings)?)?)
}

pub fn index(ws: &mut Workspace) -> Result<InvertedIndex, Failure> {
    Ok(InvertedIndex::load(ws.require(INDEX, "index")?)?)
}

pub fn vocab(ws: &mut Workspace) -> Result<Vocab, Failure> {
    Ok(Vocab::from_file(ws.require(VOCAB, "index")?)?)
}

pub fn bm25_run(ws: &mut Workspace) -> Result<RankedRun, Failure> {
    Ok(RankedRun::read_trec(ws.require(BM25_RUN, "index")?)?)
}

pub fn fold_plan(ws: &mut Workspace) -> Result<FoldPlan, Failure> {
    let path = ws.require(FOLDS, "index")?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Entity links with unresolvable ids removed; the removed ids are returned.
pub fn links(
    ws: &mut Workspace,
    config: &ExperimentConfig,
    table: &EntityEmbeddingTable,
) -> Result<(EntityLinks, BTreeSet<String>), Failure> {
    let docs = ws.input(&config.paths.doc_links)?;
    let queries = match &config.paths.query_links {
        Some(p) => Some(ws.input(p)?),
        None => None,
    };
    let mut links = EntityLinks::load(docs, queries.as_deref())?;
    let dropped = links.retain_resolvable(table);
    Ok((links, dropped))
}

pub fn descriptions(
    ws: &mut Workspace,
    config: &ExperimentConfig,
    analyzer: &Analyzer,
) -> Result<Option<InvertedIndex>, Failure> {
    let Some(path) = &config.paths.entity_descriptions else {
        return Ok(None);
    };
    let corpus = read_corpus(&ws.input(path)?)?;
    Ok(Some(InvertedIndex::build(
        corpus.iter().map(|(id, t)| (id.as_str(), t.as_str())),
        analyzer.clone(),
    )?))
}

/// Trained entity scorers, one per fold.
pub enum Rankers {
    None,
    Cross(FoldModels<CrossEncoderScorer>),
    Logistic(FoldModels<LogisticScorer>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFile {
    pub models: Vec<LogisticScorer>,
}

pub fn rankers(ws: &mut Workspace, kind: EntityScorerKind, plan: &FoldPlan) -> Result<Rankers, Failure> {
    match kind {
        EntityScorerKind::SupervisedCross => {
            let models = (0..plan.num_folds())
                .map(|f| {
                    let path = ws.require(&ranker_checkpoint(f), "train-entity-ranker")?;
                    Ok(CrossEncoderScorer::from_checkpoint(regent::checkpoint::Checkpoint::load(path)?)?)
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            Ok(Rankers::Cross(FoldModels { plan: plan.clone(), models }))
        }
        EntityScorerKind::LogisticRegression => {
            let path = ws.require(LOGISTIC, "train-entity-ranker")?;
            let file: LogisticFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if file.models.len() != plan.num_folds() {
                return Err(Failure::user(format!(
                    "{LOGISTIC} holds {} fold models but the fold plan has {}; rerun `regent train-entity-ranker`",
                    file.models.len(),
                    plan.num_folds()
                )));
            }
            Ok(Rankers::Logistic(FoldModels { plan: plan.clone(), models: file.models }))
        }
        _ => Ok(Rankers::None),
    }
}

pub struct EntityInputs<'a> {
    pub queries: &'a BTreeMap<String, String>,
    pub bm25: &'a RankedRun,
    pub links: &'a EntityLinks,
    pub table: &'a EntityEmbeddingTable,
    pub descriptions: Option<&'a InvertedIndex>,
    pub rankers: &'a Rankers,
    pub pool_depth: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone)]
pub struct EntitySets {
    pub query_sets: BTreeMap<String, ScoredEntitySet>,
    pub query_side: BTreeMap<String, ScoredEntitySet>,
    /// Queries the scorer refused for lack of linked entities; their sets
    /// are empty.
    pub unscored: Vec<String>,
}

/// Pools, scores and selects the entity sets of every query.
pub fn build_entity_sets(kind: EntityScorerKind, inputs: &EntityInputs<'_>) -> Result<EntitySets, Failure> {
    let dim = inputs.table.dim();
    let per_query: Vec<Result<(String, ScoredEntitySet, ScoredEntitySet, bool), Failure>> = inputs
        .queries
        .par_iter()
        .map(|(qid, text)| {
            let run = inputs.bm25.get(qid);
            let candidates = candidate_pool(run, inputs.links, inputs.pool_depth);
            let freq = pool_frequency(run, inputs.links, inputs.pool_depth);
            let linked = inputs.links.query_entities(qid);
            let query = EntityQuery { query_id: qid, text, linked, pool_frequency: &freq };
            let resources = ScorerResources {
                embeddings: inputs.table,
                descriptions: inputs.descriptions,
                cross_encoder: match inputs.rankers {
                    Rankers::Cross(m) => m.for_query(qid),
                    _ => None,
                },
                logistic: match inputs.rankers {
                    Rankers::Logistic(m) => m.for_query(qid),
                    _ => None,
                },
            };
            let scores = match score_entities(kind, &query, &candidates, &resources) {
                Ok(s) => s,
                Err(Error::NoQueryEntities(_)) => {
                    let empty = ScoredEntitySet::empty(dim);
                    return Ok((qid.clone(), empty.clone(), empty, true));
                }
                Err(e) => return Err(e.into()),
            };
            let set = select_top_k(&scores, inputs.top_k, inputs.table)?;
            let linked_set: BTreeSet<String> = linked.iter().cloned().collect();
            let linked_scores = if linked_set.is_empty() {
                BTreeMap::new()
            } else {
                score_entities(kind, &query, &linked_set, &resources)?
            };
            let side = query_side_set(&linked_scores, &set, inputs.top_k, inputs.table)?;
            Ok((qid.clone(), set, side, false))
        })
        .collect();
    let mut out = EntitySets { query_sets: BTreeMap::new(), query_side: BTreeMap::new(), unscored: Vec::new() };
    for r in per_query {
        let (qid, set, side, unscored) = r?;
        if unscored {
            out.unscored.push(qid.clone());
        }
        out.query_sets.insert(qid.clone(), set);
        out.query_side.insert(qid, side);
    }
    Ok(out)
}

pub fn read_entity_sets(path: &Path, table: &EntityEmbeddingTable) -> Result<BTreeMap<String, ScoredEntitySet>, Failure> {
    read_jsonl::<EntitySetRecord>(path)?
        .iter()
        .map(|r| Ok((r.query_id.clone(), ScoredEntitySet::from_record(r, table)?)))
        .collect()
}

pub fn stored_entity_sets(ws: &mut Workspace, table: &EntityEmbeddingTable) -> Result<EntitySets, Failure> {
    let query_sets = read_entity_sets(&ws.require(ENTITY_SETS, "entity-sets")?, table)?;
    let query_side = read_entity_sets(&ws.require(QUERY_ENTITIES, "entity-sets")?, table)?;
    Ok(EntitySets { query_sets, query_side, unscored: Vec::new() })
}

/// Everything a dataset is built from, loaded once.
pub struct Loaded {
    pub index: InvertedIndex,
    pub vocab: Vocab,
    pub corpus: BTreeMap<String, String>,
    pub queries: BTreeMap<String, String>,
    pub table: EntityEmbeddingTable,
    pub links: EntityLinks,
    pub bm25: RankedRun,
    pub plan: FoldPlan,
}

impl Loaded {
    pub fn load(ws: &mut Workspace, config: &ExperimentConfig) -> Result<Self, Failure> {
        let index = index(ws)?;
        let vocab = vocab(ws)?;
        let bm25 = bm25_run(ws)?;
        let plan = fold_plan(ws)?;
        let corpus = corpus(ws, config)?;
        let queries = queries(ws, config)?;
        let table = embeddings(ws, config)?;
        let (links, _) = links(ws, config, &table)?;
        Ok(Self { index, vocab, corpus, queries, table, links, bm25, plan })
    }

    pub fn dataset(
        &self,
        config: &ExperimentConfig,
        sets: &EntitySets,
        candidates: RankedRun,
        qrels: Qrels,
    ) -> Result<RerankDataset, Failure> {
        let doc_links = |d: &str| self.links.doc_entities(d).to_vec();
        let queries: BTreeMap<String, String> = self
            .queries
            .iter()
            .filter(|(q, _)| candidates.queries.contains_key(*q))
            .map(|(q, t)| (q.clone(), t.clone()))
            .collect();
        Ok(RerankDataset::build(DatasetSources {
            index: &self.index,
            vocab: &self.vocab,
            max_len: config.model.max_len,
            corpus: &self.corpus,
            queries: &queries,
            query_entities: &sets.query_sets,
            query_side: Some(&sets.query_side),
            doc_links: &doc_links,
            candidates,
            qrels,
            entity_dim: self.table.dim(),
        })?)
    }
}
