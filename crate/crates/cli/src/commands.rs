use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use regent::checkpoint::Checkpoint;
use regent::entity::{
    candidate_pool, label_candidates, logistic_features, pool_frequency, train_entity_ranker, train_logistic_ranker,
    EntityQuery, EntityScorerKind, ScorerResources,
};
use regent::eval::{evaluate, evaluated_queries, wig, EvaluationReport, QueryMetrics};
use regent::index::InvertedIndex;
use regent::io::write_jsonl;
use regent::model::{AblationFlags, FusionKind, RegentModel};
use regent::text::Vocab;
use regent::training::folds::FoldPlan;
use regent::training::{cross_validate, derive_seed, rerank, FoldOutcome};
use regent::trec::{Qrels, RankedRun};
use regent::Error;
use serde::Serialize;

use crate::attention;
use crate::config::ExperimentConfig;
use crate::failure::Failure;
use crate::pipeline::*;
use crate::workspace::Workspace;

pub fn cmd_index(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "index")?;
    let analyzer = analyzer(&mut ws, config)?;
    let corpus = corpus(&mut ws, config)?;
    let queries = queries(&mut ws, config)?;
    let index = InvertedIndex::build(corpus.iter().map(|(d, t)| (d.as_str(), t.as_str())), analyzer.clone())?;
    index.save(ws.output(INDEX)?)?;
    ws.produced(INDEX)?;

    let vocab = match &config.paths.vocab {
        Some(p) => Vocab::from_file(ws.input(p)?)?,
        None => {
            let mut texts: Vec<&str> = corpus.values().chain(queries.values()).map(String::as_str).collect();
            let descriptions = match &config.paths.entity_descriptions {
                Some(p) => read_corpus(&ws.input(p)?)?,
                None => BTreeMap::new(),
            };
            texts.extend(descriptions.values().map(String::as_str));
            let plain = regent::text::Analyzer::with_stopwords(Vec::<String>::new());
            let words: Vec<String> = texts.iter().flat_map(|t| plain.analyze(t)).map(|t| t.surface).collect();
            Vocab::build(words.iter().map(String::as_str))
        }
    };
    std::fs::write(ws.output(VOCAB)?, vocab.tokens().join("\n") + "\n")?;
    ws.produced(VOCAB)?;

    let mut run = RankedRun::new("bm25");
    for (qid, text) in &queries {
        run.insert_sorted(qid.clone(), index.retrieve(text, config.pipeline.candidate_depth));
    }
    run.write_trec(ws.output(BM25_RUN)?)?;
    ws.produced(BM25_RUN)?;

    let ids: Vec<&str> = queries.keys().map(String::as_str).collect();
    let plan = FoldPlan::new(&ids, config.pipeline.folds, derive_seed(config.seed, "folds"))?;
    std::fs::write(ws.output(FOLDS)?, serde_json::to_string_pretty(&plan)? + "\n")?;
    ws.produced(FOLDS)?;
    ws.finish()?;
    println!("indexed {} documents, {} queries", index.doc_count(), queries.len());
    Ok(())
}

#[derive(Serialize)]
struct UnresolvedReport<'a> {
    /// Linked entity ids without an embedding; dropped from every link list.
    unresolvable_entities: &'a BTreeSet<String>,
    /// Queries the scorer could not score; their entity sets are empty.
    queries_without_entity_sets: &'a [String],
}

pub fn cmd_entity_sets(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "entity-sets")?;
    let kind = config.pipeline.entity_scorer;
    let index = index(&mut ws)?;
    let bm25 = bm25_run(&mut ws)?;
    let plan = fold_plan(&mut ws)?;
    let queries = queries(&mut ws, config)?;
    let table = embeddings(&mut ws, config)?;
    let (links, dropped) = links(&mut ws, config, &table)?;
    let descriptions = descriptions(&mut ws, config, index.analyzer())?;
    let rankers = rankers(&mut ws, kind, &plan)?;
    let inputs = EntityInputs {
        queries: &queries,
        bm25: &bm25,
        links: &links,
        table: &table,
        descriptions: descriptions.as_ref(),
        rankers: &rankers,
        pool_depth: config.pipeline.pool_depth,
        top_k: config.pipeline.top_k_entities,
    };
    let sets = build_entity_sets(kind, &inputs)?;
    let records = |m: &BTreeMap<String, regent::entity::ScoredEntitySet>| {
        m.iter().map(|(q, s)| s.to_record(q)).collect::<Vec<_>>()
    };
    write_jsonl(ws.output(ENTITY_SETS)?, &records(&sets.query_sets))?;
    ws.produced(ENTITY_SETS)?;
    write_jsonl(ws.output(QUERY_ENTITIES)?, &records(&sets.query_side))?;
    ws.produced(QUERY_ENTITIES)?;
    let report = UnresolvedReport { unresolvable_entities: &dropped, queries_without_entity_sets: &sets.unscored };
    std::fs::write(ws.output(UNRESOLVED)?, serde_json::to_string_pretty(&report)? + "\n")?;
    ws.produced(UNRESOLVED)?;
    ws.finish()?;
    if !dropped.is_empty() {
        eprintln!("warning: {} unresolvable entity ids skipped; see {UNRESOLVED}", dropped.len());
    }
    if !sets.unscored.is_empty() {
        eprintln!(
            "warning: {} queries have no linked entities for {}; see {UNRESOLVED}",
            sets.unscored.len(),
            kind.name()
        );
    }
    println!("entity sets for {} queries with {}", sets.query_sets.len(), kind.name());
    Ok(())
}

/// Trains the configured scorer, or the pair scorer when the configured one
/// needs no training.
pub fn cmd_train_entity_ranker(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "train-entity-ranker")?;
    let kind = match config.pipeline.entity_scorer {
        k if k.needs_training() => k,
        _ => EntityScorerKind::SupervisedCross,
    };
    let index = index(&mut ws)?;
    let vocab = vocab(&mut ws)?;
    let bm25 = bm25_run(&mut ws)?;
    let plan = fold_plan(&mut ws)?;
    let queries = queries(&mut ws, config)?;
    let qrels = qrels(&mut ws, config)?;
    let table = embeddings(&mut ws, config)?;
    let (links, _) = links(&mut ws, config, &table)?;
    let depth = config.pipeline.pool_depth;
    match kind {
        EntityScorerKind::SupervisedCross => {
            let mut pairs = Vec::new();
            for (qid, text) in &queries {
                let candidates = candidate_pool(bm25.get(qid), &links, depth);
                pairs.extend(label_candidates(qid, text, &candidates, &qrels.relevant(qid), &links));
            }
            let models = train_entity_ranker(&pairs, &plan, &vocab, &config.ranker_config(vocab.len()))?;
            for (f, m) in models.models.iter().enumerate() {
                let name = ranker_checkpoint(f);
                m.to_checkpoint()?.save(ws.output(&name)?)?;
                ws.produced(&name)?;
            }
            println!("trained {} pair scorers on {} labelled pairs", models.models.len(), pairs.len());
        }
        _ => {
            let descriptions = descriptions(&mut ws, config, index.analyzer())?;
            let resources = ScorerResources {
                embeddings: &table,
                descriptions: descriptions.as_ref(),
                cross_encoder: None,
                logistic: None,
            };
            let mut examples = Vec::new();
            for (qid, text) in &queries {
                let run = bm25.get(qid);
                let candidates = candidate_pool(run, &links, depth);
                let freq = pool_frequency(run, &links, depth);
                let query = EntityQuery { query_id: qid, text, linked: links.query_entities(qid), pool_frequency: &freq };
                let features = logistic_features(&query, &candidates, &resources)?;
                for pair in label_candidates(qid, text, &candidates, &qrels.relevant(qid), &links) {
                    examples.push((qid.clone(), features[&pair.entity_id], pair.label));
                }
            }
            let r = &config.entity_ranker;
            let models = train_logistic_ranker(&examples, &plan, r.logistic_epochs, r.logistic_lr)?;
            let file = LogisticFile { models: models.models };
            std::fs::write(ws.output(LOGISTIC)?, serde_json::to_string_pretty(&file)? + "\n")?;
            ws.produced(LOGISTIC)?;
            println!("trained {} logistic scorers on {} labelled pairs", file.models.len(), examples.len());
        }
    }
    ws.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainingSummary<'a> {
    folds: &'a [FoldOutcome],
    warnings: &'a [String],
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "train")?;
    let loaded = Loaded::load(&mut ws, config)?;
    let sets = stored_entity_sets(&mut ws, &loaded.table)?;
    let qrels = qrels(&mut ws, config)?;
    let data = loaded.dataset(config, &sets, loaded.bm25.clone(), qrels)?;
    let regent = config.regent_config(loaded.vocab.len(), loaded.table.dim(), config.model.fusion, config.flags());
    let cv = cross_validate(&data, &loaded.plan, regent, &config.train_config(), "regent")?;
    for (f, model) in cv.models.iter().enumerate() {
        let name = regent_checkpoint(f);
        model.save(ws.output(&name)?)?;
        ws.produced(&name)?;
    }
    write_jsonl(ws.output("training_log.jsonl")?, &cv.log)?;
    ws.produced("training_log.jsonl")?;
    let summary = TrainingSummary { folds: &cv.folds, warnings: &cv.warnings };
    std::fs::write(ws.output("training_summary.json")?, serde_json::to_string_pretty(&summary)? + "\n")?;
    ws.produced("training_summary.json")?;
    ws.finish()?;
    for w in &cv.warnings {
        eprintln!("warning: {w}");
    }
    for f in &cv.folds {
        println!(
            "fold {}: best epoch {}, validation MAP {:.4}",
            f.fold,
            f.best_epoch,
            f.validation_map.get(f.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn load_fold_models(ws: &mut Workspace, plan: &FoldPlan, vocab: &Vocab) -> Result<Vec<RegentModel>, Failure> {
    (0..plan.num_folds())
        .map(|f| {
            let model = RegentModel::from_checkpoint(Checkpoint::load(ws.require(&regent_checkpoint(f), "train")?)?)?;
            if model.config.encoder.vocab_size != vocab.len() {
                return Err(Failure::user(format!(
                    "checkpoint for fold {f} was trained with a vocabulary of {} tokens, not {}; rerun `regent train`",
                    model.config.encoder.vocab_size,
                    vocab.len()
                )));
            }
            Ok(model)
        })
        .collect()
}

pub fn cmd_rerank(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "rerank")?;
    let loaded = Loaded::load(&mut ws, config)?;
    let sets = stored_entity_sets(&mut ws, &loaded.table)?;
    let models = load_fold_models(&mut ws, &loaded.plan, &loaded.vocab)?;
    let data = loaded.dataset(config, &sets, loaded.bm25.clone(), Qrels::new())?;
    let mut run = RankedRun::new("regent");
    for (f, model) in models.iter().enumerate() {
        let queries: Vec<&str> = loaded
            .plan
            .fold_queries(f)
            .into_iter()
            .filter(|q| data.queries.contains_key(*q))
            .collect();
        run.queries.extend(rerank(model, &data, &queries, "regent")?.queries);
    }
    run.write_trec(ws.output(RUN)?)?;
    ws.produced(RUN)?;
    ws.finish()?;
    println!("re-ranked {} queries into {RUN}", run.queries.len());
    Ok(())
}

/// Report with difficulty bins when the baseline has enough queries.
fn report(
    run: &RankedRun,
    qrels: &Qrels,
    baseline: &RankedRun,
    wig_values: &BTreeMap<String, f64>,
) -> Result<EvaluationReport, Failure> {
    match evaluate(run, qrels, Some(baseline), Some(wig_values)) {
        Err(Error::TooFewQueries(n)) => {
            eprintln!("warning: {n} evaluated queries are too few for difficulty bins");
            Ok(evaluate(run, qrels, None, Some(wig_values))?)
        }
        r => Ok(r?),
    }
}

fn wig_values(index: &InvertedIndex, queries: &BTreeMap<String, String>, qrels: &Qrels, k: usize) -> BTreeMap<String, f64> {
    evaluated_queries(qrels)
        .into_iter()
        .filter_map(|q| queries.get(q).and_then(|t| wig(t, index, k).ok()).map(|w| (q.to_string(), w)))
        .collect()
}

fn metrics_line(m: &QueryMetrics) -> String {
    format!("MAP {:.4}  nDCG@20 {:.4}  P@20 {:.4}", m.map, m.ndcg_cut_20, m.p_20)
}

pub fn cmd_evaluate(config: &ExperimentConfig, run_path: Option<PathBuf>) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "evaluate")?;
    let run_path = match run_path {
        Some(p) => ws.input(&p).map_err(|_| Failure::user(format!("run file {} does not exist", p.display())))?,
        None => ws.require(RUN, "rerank")?,
    };
    let run = RankedRun::read_trec(&run_path)?;
    let qrels = qrels(&mut ws, config)?;
    let queries = queries(&mut ws, config)?;
    let index = index(&mut ws)?;
    let baseline = bm25_run(&mut ws)?;
    let wig = wig_values(&index, &queries, &qrels, config.pipeline.wig_top_k);
    let report = report(&run, &qrels, &baseline, &wig)?;
    let stem = run_path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let name = format!("reports/{stem}.json");
    std::fs::write(ws.output(&name)?, serde_json::to_string_pretty(&report)? + "\n")?;
    ws.produced(&name)?;
    ws.finish()?;
    println!("{}  ({} queries) -> {name}", metrics_line(&report.aggregate), report.per_query.len());
    Ok(())
}

pub fn cmd_ablate(config: &ExperimentConfig) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "ablate")?;
    let loaded = Loaded::load(&mut ws, config)?;
    let qrels = qrels(&mut ws, config)?;
    let descriptions = descriptions(&mut ws, config, loaded.index.analyzer())?;
    let fusions = match config.ablate.fusions.as_slice() {
        [] => vec![config.model.fusion],
        f => f.to_vec(),
    };
    let scorers = match config.ablate.scorers.as_slice() {
        [] => vec![config.pipeline.entity_scorer],
        s => s.to_vec(),
    };
    let wig = wig_values(&loaded.index, &loaded.queries, &qrels, config.pipeline.wig_top_k);
    let mut table = String::from("variant\tfusion\tentity_scorer\tmap\tndcg_cut_20\tP_20\n");
    let mut cells = 0;
    for scorer in scorers {
        let rankers = rankers(&mut ws, scorer, &loaded.plan)?;
        let inputs = EntityInputs {
            queries: &loaded.queries,
            bm25: &loaded.bm25,
            links: &loaded.links,
            table: &loaded.table,
            descriptions: descriptions.as_ref(),
            rankers: &rankers,
            pool_depth: config.pipeline.pool_depth,
            top_k: config.pipeline.top_k_entities,
        };
        let sets = build_entity_sets(scorer, &inputs)?;
        let data = loaded.dataset(config, &sets, loaded.bm25.clone(), qrels.clone())?;
        for variant in &config.ablate.variants {
            let flags = AblationFlags::from_variant(variant)?;
            for &fusion in &fusions {
                let cell = cell_name(variant, fusion, scorer);
                let regent = config.regent_config(loaded.vocab.len(), loaded.table.dim(), fusion, flags);
                let cv = cross_validate(&data, &loaded.plan, regent, &config.train_config(), &cell)?;
                let run_name = format!("ablation/{cell}.run");
                cv.run.write_trec(ws.output(&run_name)?)?;
                ws.produced(&run_name)?;
                let report = report(&cv.run, &qrels, &loaded.bm25, &wig)?;
                let report_name = format!("ablation/{cell}.json");
                std::fs::write(ws.output(&report_name)?, serde_json::to_string_pretty(&report)? + "\n")?;
                ws.produced(&report_name)?;
                let a = &report.aggregate;
                let _ = writeln!(
                    table,
                    "{variant}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    fusion.name(),
                    scorer.name(),
                    a.map,
                    a.ndcg_cut_20,
                    a.p_20
                );
                println!("{cell}: {}", metrics_line(a));
                cells += 1;
            }
        }
    }
    let name = "ablation/comparison.tsv";
    std::fs::write(ws.output(name)?, &table)?;
    ws.produced(name)?;
    ws.finish()?;
    println!("{cells} cells; comparison in {name}");
    Ok(())
}

fn cell_name(variant: &str, fusion: FusionKind, scorer: EntityScorerKind) -> String {
    format!("{variant}__{}__{}", fusion.name(), scorer.name())
}

pub fn cmd_attention_dump(config: &ExperimentConfig, query_id: &str, doc_id: &str) -> Result<(), Failure> {
    let mut ws = Workspace::open(config, "attention-dump")?;
    let loaded = Loaded::load(&mut ws, config)?;
    let fold = loaded
        .plan
        .fold_of(query_id)
        .ok_or_else(|| Failure::user(format!("unknown query `{query_id}`")))?;
    if !loaded.bm25.get(query_id).iter().any(|e| e.doc_id == doc_id) {
        return Err(Failure::user(format!(
            "document `{doc_id}` is not among the BM25 candidates of query `{query_id}`"
        )));
    }
    let model = RegentModel::from_checkpoint(Checkpoint::load(ws.require(&regent_checkpoint(fold), "train")?)?)?;
    let sets = stored_entity_sets(&mut ws, &loaded.table)?;
    let mut candidates = RankedRun::new("bm25");
    candidates.queries.insert(query_id.to_string(), loaded.bm25.get(query_id).to_vec());
    let data = loaded.dataset(config, &sets, candidates, Qrels::new())?;
    let input = data.input(query_id, doc_id)?;
    let trace = model.forward_traced(&input)?;
    let dump = attention::AttentionDump::new(query_id, doc_id, fold, &input, &trace, &loaded.vocab);
    let name = format!("attention/{query_id}__{doc_id}.json");
    std::fs::write(ws.output(&name)?, serde_json::to_string_pretty(&dump)? + "\n")?;
    ws.produced(&name)?;
    ws.finish()?;
    println!(
        "score {:.6}, entity pathway {} -> {name}",
        trace.score,
        if trace.entity_pathway_active { "active" } else { "inactive" }
    );
    Ok(())
}
