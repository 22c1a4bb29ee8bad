//! Cross-validated training of the re-ranker.

pub mod folds;
pub mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Gradients};
use crate::dataset::RerankDataset;
use crate::error::{Error, Result};
use crate::eval::mean_average_precision;
use crate::model::{RegentConfig, RegentModel, ScoringInput};
use crate::nn::Dropout;
use crate::trec::{Qrels, RankedRun, RunEntry};
use folds::FoldPlan;
use optim::{AdamConfig, OptimizerState};

/// Binary cross-entropy on a logit: `(loss, dloss/dz)`.
pub fn bce_with_logit(z: f64, y: f64) -> (f64, f64) {
    // log(1 + e^z) computed without overflow.
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (softplus - y * z, sigmoid(z) - y)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named sub-seed of `seed`, stable across platforms and releases.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the parent seed.
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    mix(seed ^ mix(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    QrelsPositive,
    Bm25Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub doc_id: String,
    pub label: u8,
    pub source: ExampleSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    pub warnings: Vec<String>,
}

impl ExampleSet {
    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }
}

/// All relevant documents of each query (grade ≥ 1) plus as many negatives,
/// sampled without replacement from the query's candidates that are judged
/// non-relevant or unjudged. Each query samples from its own sub-seed, so a
/// query's examples do not depend on which other queries are present.
pub fn build_examples(qrels: &Qrels, candidates: &RankedRun, query_ids: &[&str], seed: u64) -> ExampleSet {
    let mut ids: Vec<&str> = query_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut out = ExampleSet::default();
    for qid in ids {
        let positives = qrels.relevant(qid);
        if positives.is_empty() {
            out.warnings.push(format!("query {qid}: no relevant documents; excluded from training"));
            continue;
        }
        let eligible: Vec<&RunEntry> = candidates
            .get(qid)
            .iter()
            .filter(|e| qrels.grade(qid, &e.doc_id).unwrap_or(0) == 0)
            .collect();
        let wanted = positives.len();
        if eligible.len() < wanted {
            out.warnings.push(format!(
                "query {qid}: {} positives but only {} eligible negatives",
                wanted,
                eligible.len()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, qid));
        let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), wanted.min(eligible.len())).into_vec();
        picked.sort_unstable();
        for d in positives {
            out.examples.push(TrainingExample {
                query_id: qid.to_string(),
                doc_id: d.to_string(),
                label: 1,
                source: ExampleSource::QrelsPositive,
            });
        }
        for i in picked {
            out.examples.push(TrainingExample {
                query_id: qid.to_string(),
                doc_id: eligible[i].doc_id.clone(),
                label: 0,
                source: ExampleSource::Bm25Negative,
            });
        }
    }
    out
}

/// Which parameters [`train_model`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Epoch with the highest validation MAP (earliest on ties), with early
    /// stopping after `patience` epochs without a strict improvement.
    BestValidation,
    /// Parameters after the last epoch; every epoch runs.
    FinalEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 10,
            patience: 3,
            selection: Selection::BestValidation,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.adam.base_lr > 0.0 && self.adam.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.base_lr)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

/// BCE of one labelled pair and `weight · ∂loss/∂θ`. A non-finite loss is
/// reported with the pair's ids.
pub fn example_gradient(
    model: &RegentModel,
    input: &ScoringInput<'_>,
    label: u8,
    weight: f64,
    dropout: &mut Dropout,
) -> Result<(f64, Gradients)> {
    let rec = model.record(input, dropout)?;
    let z = rec.score();
    let (loss, dz) = bce_with_logit(z, label as f64);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            query_id: input.query.doc_id.clone(),
            doc_id: input.doc.doc_id.clone(),
            score: z,
        });
    }
    Ok((loss, rec.graph.backward(rec.score, weight * dz, &model.params)))
}

/// One optimizer update on the mean BCE of `batch`. Example gradients are
/// computed in parallel and summed in batch order. Example `i` draws its
/// dropout masks from `derive_seed(dropout_seed, i)`.
pub fn train_step(
    model: &mut RegentModel,
    state: &mut OptimizerState,
    dataset: &RerankDataset,
    batch: &[TrainingExample],
    dropout_seed: u64,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let n = batch.len() as f64;
    let p = model.config.dropout;
    let shared: &RegentModel = model;
    let per_example: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let input = dataset.input(&ex.query_id, &ex.doc_id)?;
            let mut dropout = Dropout {
                p,
                rng: Some(ChaCha8Rng::seed_from_u64(derive_seed(dropout_seed, &i.to_string()))),
            };
            example_gradient(shared, &input, ex.label, 1.0 / n, &mut dropout).map_err(|e| match e {
                Error::NonFiniteLoss { score, .. } => Error::NonFiniteLoss {
                    query_id: ex.query_id.clone(),
                    doc_id: ex.doc_id.clone(),
                    score,
                },
                other => other,
            })
        })
        .collect();
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for r in per_example {
        let (l, g) = r?;
        loss += l;
        total.add_assign(&g);
    }
    let (grad_norm, lr) = state.update(&mut model.params, &mut total);
    Ok(StepRecord {
        step: state.step,
        lr,
        loss: loss / n,
        grad_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks validation MAP; only a strictly higher value counts as progress.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub history: Vec<f64>,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            history: Vec::new(),
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        self.history.push(value);
        let epoch = self.history.len();
        match self.best {
            Some((_, b)) if value <= b => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// 1-based epoch of the best value so far, and the value.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Scores every candidate of each query and sorts by the new score.
pub fn rerank(model: &RegentModel, dataset: &RerankDataset, query_ids: &[&str], tag: &str) -> Result<RankedRun> {
    let mut run = RankedRun::new(tag);
    for &qid in query_ids {
        let entries: Vec<Result<RunEntry>> = dataset
            .candidates_of(qid)
            .par_iter()
            .map(|c| {
                let score = model.forward(&dataset.input(qid, &c.doc_id)?)?;
                Ok(RunEntry::new(c.doc_id.clone(), score))
            })
            .collect();
        run.insert_sorted(qid, entries.into_iter().collect::<Result<_>>()?);
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters chosen by `TrainConfig::selection`; `best_epoch` is their
    /// 1-based epoch.
    pub model: RegentModel,
    pub best_epoch: usize,
    pub validation_map: Vec<f64>,
    pub stopped_early: bool,
    pub log: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

/// Trains one model on `train_queries`, selecting the epoch by MAP on
/// `validation_queries`. Randomness comes from named sub-seeds of
/// `config.seed`: `sampling`, `init`, `shuffle` and `dropout`.
pub fn train_model(
    dataset: &RerankDataset,
    train_queries: &[&str],
    validation_queries: &[&str],
    regent: RegentConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if validation_queries.is_empty() {
        return Err(Error::Config("no validation queries".into()));
    }
    let seed = config.seed;
    let mut set = build_examples(&dataset.qrels, &dataset.candidates, train_queries, derive_seed(seed, "sampling"));
    let before = set.examples.len();
    set.examples.retain(|e| dataset.pair(&e.query_id, &e.doc_id).is_some());
    if set.examples.len() < before {
        set.warnings.push(format!(
            "{} examples dropped: documents missing from the corpus",
            before - set.examples.len()
        ));
    }
    if set.positives() == 0 {
        return Err(Error::Config("no positive training examples".into()));
    }
    let mut model = RegentModel::init(regent, derive_seed(seed, "init"))?;
    let mut state = OptimizerState::new(config.adam, &model.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let dropout_seed = derive_seed(seed, "dropout");
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut examples = set.examples;
    for _ in 0..config.epochs {
        examples.shuffle(&mut shuffle);
        for batch in examples.chunks(config.batch_size) {
            let step_seed = derive_seed(dropout_seed, &state.step.to_string());
            log.push(train_step(&mut model, &mut state, dataset, batch, step_seed)?);
        }
        let run = rerank(&model, dataset, validation_queries, "validation")?;
        let map = mean_average_precision(&run, &dataset.qrels, Some(validation_queries));
        match (stopping.observe(map), config.selection) {
            (_, Selection::FinalEpoch) | (StopDecision::Continue, _) => {}
            (StopDecision::Improved, _) => best = model.clone(),
            (StopDecision::Stop, _) => {
                stopped_early = true;
                break;
            }
        }
    }
    let (model, best_epoch) = match config.selection {
        Selection::BestValidation => (best, stopping.best().map_or(0, |(e, _)| e)),
        Selection::FinalEpoch => (model, stopping.history.len()),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        validation_map: stopping.history,
        stopped_early,
        log,
        warnings: set.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_queries: Vec<String>,
    pub validation_queries: Vec<String>,
    pub test_queries: Vec<String>,
    pub best_epoch: usize,
    pub validation_map: Vec<f64>,
    pub stopped_early: bool,
}

/// Step-log line tagged with its fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldStep {
    pub fold: usize,
    #[serde(flatten)]
    pub step: StepRecord,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    /// Every query scored by the model of the fold that held it out.
    pub run: RankedRun,
    pub folds: Vec<FoldOutcome>,
    pub models: Vec<RegentModel>,
    pub log: Vec<FoldStep>,
    pub warnings: Vec<String>,
}

/// Checks the plan before any training: every fold needs validation queries
/// and at least one relevant document among its training queries.
pub fn check_plan(plan: &FoldPlan, qrels: &Qrels) -> Result<()> {
    for f in 0..plan.num_folds() {
        if plan.validation_queries(f).is_empty() {
            return Err(Error::EmptyFold(plan.validation_fold(f)));
        }
        if plan.training_queries(f).iter().all(|q| qrels.num_relevant(q) == 0) {
            return Err(Error::FoldWithoutPositives(f));
        }
    }
    Ok(())
}

/// Trains one model per fold (folds run concurrently) and assembles the
/// out-of-fold run.
pub fn cross_validate(
    dataset: &RerankDataset,
    plan: &FoldPlan,
    regent: RegentConfig,
    config: &TrainConfig,
    tag: &str,
) -> Result<CrossValidation> {
    check_plan(plan, &dataset.qrels)?;
    let outcomes: Vec<Result<(FoldOutcome, TrainOutcome, RankedRun)>> = (0..plan.num_folds())
        .into_par_iter()
        .map(|f| {
            let train = plan.training_queries(f);
            let validation = plan.validation_queries(f);
            let test = plan.fold_queries(f);
            let fold_config = TrainConfig {
                seed: derive_seed(config.seed, &format!("fold{f}")),
                ..*config
            };
            let out = train_model(dataset, &train, &validation, regent, &fold_config)?;
            let run = rerank(&out.model, dataset, &test, tag)?;
            let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
            let summary = FoldOutcome {
                fold: f,
                train_queries: strings(&train),
                validation_queries: strings(&validation),
                test_queries: strings(&test),
                best_epoch: out.best_epoch,
                validation_map: out.validation_map.clone(),
                stopped_early: out.stopped_early,
            };
            Ok((summary, out, run))
        })
        .collect();
    let mut run = RankedRun::new(tag);
    let mut folds = Vec::new();
    let mut models = Vec::new();
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    for r in outcomes {
        let (summary, out, fold_run) = r?;
        run.queries.extend(fold_run.queries);
        log.extend(out.log.iter().map(|&step| FoldStep { fold: summary.fold, step }));
        warnings.extend(out.warnings.iter().map(|w| format!("fold {}: {w}", summary.fold)));
        folds.push(summary);
        models.push(out.model);
    }
    Ok(CrossValidation {
        run,
        folds,
        models,
        log,
        warnings,
    })
}

/// Per-query MAP of a run, keyed by query id.
pub fn per_query_ap(run: &RankedRun, qrels: &Qrels) -> BTreeMap<String, f64> {
    crate::eval::evaluated_queries(qrels)
        .into_iter()
        .map(|q| (q.to_string(), crate::eval::average_precision(run.get(q), qrels, q)))
        .collect()
}
