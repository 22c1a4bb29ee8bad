//! trec_eval-compatible metrics, difficulty analyses and rank statistics.
//!
//! Metrics score a run in trec_eval order: descending score, ties broken by
//! descending doc id. A document is relevant when its grade is at least 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::trec::{Qrels, RankedRun, RunEntry};

pub const DEFAULT_CUTOFF: usize = 20;
pub const DEFAULT_WIG_TOP_K: usize = 5;

/// Entries in the order trec_eval scores them.
pub fn evaluation_order(entries: &[RunEntry]) -> Vec<&RunEntry> {
    let mut v: Vec<&RunEntry> = entries.iter().collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| b.doc_id.cmp(&a.doc_id)));
    v
}

fn grade(qrels: &Qrels, query_id: &str, doc_id: &str) -> u32 {
    qrels.grade(query_id, doc_id).unwrap_or(0)
}

pub fn average_precision(entries: &[RunEntry], qrels: &Qrels, query_id: &str) -> f64 {
    let total = qrels.num_relevant(query_id);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in evaluation_order(entries).into_iter().enumerate() {
        if grade(qrels, query_id, &e.doc_id) >= 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

/// Gain is the raw grade, discount `log2(rank + 1)`.
pub fn ndcg_at_k(entries: &[RunEntry], qrels: &Qrels, query_id: &str, k: usize) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = evaluation_order(entries)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| grade(qrels, query_id, &e.doc_id) as f64 / discount(i))
        .sum();
    let mut ideal: Vec<u32> = qrels
        .judged(query_id)
        .map(|j| j.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| g as f64 / discount(i)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Relevant documents in the top `k`, divided by `k` even for shorter runs.
pub fn precision_at_k(entries: &[RunEntry], qrels: &Qrels, query_id: &str, k: usize) -> f64 {
    let hits = evaluation_order(entries)
        .into_iter()
        .take(k)
        .filter(|e| grade(qrels, query_id, &e.doc_id) >= 1)
        .count();
    hits as f64 / k as f64
}

/// Queries with at least one relevant document; each is evaluated whether
/// or not the run contains it.
pub fn evaluated_queries(qrels: &Qrels) -> Vec<&str> {
    qrels.query_ids().filter(|q| qrels.num_relevant(q) > 0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub map: f64,
    pub ndcg_cut_20: f64,
    #[serde(rename = "P_20")]
    pub p_20: f64,
}

pub fn query_metrics(run: &RankedRun, qrels: &Qrels, query_id: &str) -> QueryMetrics {
    let entries = run.get(query_id);
    QueryMetrics {
        map: average_precision(entries, qrels, query_id),
        ndcg_cut_20: ndcg_at_k(entries, qrels, query_id, DEFAULT_CUTOFF),
        p_20: precision_at_k(entries, qrels, query_id, DEFAULT_CUTOFF),
    }
}

pub fn per_query_metrics(run: &RankedRun, qrels: &Qrels) -> BTreeMap<String, QueryMetrics> {
    evaluated_queries(qrels)
        .into_iter()
        .map(|q| (q.to_string(), query_metrics(run, qrels, q)))
        .collect()
}

pub fn aggregate(per_query: &BTreeMap<String, QueryMetrics>) -> QueryMetrics {
    let n = per_query.len().max(1) as f64;
    let sum = |f: fn(&QueryMetrics) -> f64| per_query.values().map(f).sum::<f64>() / n;
    QueryMetrics {
        map: sum(|m| m.map),
        ndcg_cut_20: sum(|m| m.ndcg_cut_20),
        p_20: sum(|m| m.p_20),
    }
}

/// MAP restricted to `queries` (all evaluated queries when `None`).
pub fn mean_average_precision(run: &RankedRun, qrels: &Qrels, queries: Option<&[&str]>) -> f64 {
    let all = evaluated_queries(qrels);
    let chosen: Vec<&str> = match queries {
        Some(qs) => qs.iter().copied().filter(|q| qrels.num_relevant(q) > 0).collect(),
        None => all,
    };
    if chosen.is_empty() {
        return 0.0;
    }
    chosen
        .iter()
        .map(|q| average_precision(run.get(q), qrels, q))
        .sum::<f64>()
        / chosen.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DifficultyBin {
    #[serde(rename = "0-5")]
    P0To5,
    #[serde(rename = "5-25")]
    P5To25,
    #[serde(rename = "25-75")]
    P25To75,
    #[serde(rename = "75-95")]
    P75To95,
    #[serde(rename = "95-100")]
    P95To100,
}

impl DifficultyBin {
    pub const ALL: [DifficultyBin; 5] = [
        Self::P0To5,
        Self::P5To25,
        Self::P25To75,
        Self::P75To95,
        Self::P95To100,
    ];

    pub fn of_percentile(p: f64) -> Self {
        match p {
            p if p < 5.0 => Self::P0To5,
            p if p < 25.0 => Self::P5To25,
            p if p < 75.0 => Self::P25To75,
            p if p < 95.0 => Self::P75To95,
            _ => Self::P95To100,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::P0To5 => "0-5",
            Self::P5To25 => "5-25",
            Self::P25To75 => "25-75",
            Self::P75To95 => "75-95",
            Self::P95To100 => "95-100",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBins {
    pub percentiles: BTreeMap<String, f64>,
    pub bins: BTreeMap<String, DifficultyBin>,
}

impl DifficultyBins {
    pub fn members(&self, bin: DifficultyBin) -> Vec<&str> {
        self.bins
            .iter()
            .filter(|(_, &b)| b == bin)
            .map(|(q, _)| q.as_str())
            .collect()
    }
}

/// Percentile bins of the baseline nDCG@20, hardest first. Queries are
/// sorted ascending by nDCG (stable by query id); percentile is
/// `100 · position / count`, and tied queries share the percentile of the
/// first of them.
pub fn difficulty_bins(baseline: &RankedRun, qrels: &Qrels) -> Result<DifficultyBins> {
    let mut scored: Vec<(&str, f64)> = evaluated_queries(qrels)
        .into_iter()
        .map(|q| (q, ndcg_at_k(baseline.get(q), qrels, q, DEFAULT_CUTOFF)))
        .collect();
    if scored.len() < 5 {
        return Err(Error::TooFewQueries(scored.len()));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = scored.len() as f64;
    let mut percentiles = BTreeMap::new();
    let mut bins = BTreeMap::new();
    let mut group_start = 0;
    for (i, &(q, v)) in scored.iter().enumerate() {
        if i > 0 && v != scored[i - 1].1 {
            group_start = i;
        }
        let p = 100.0 * group_start as f64 / n;
        percentiles.insert(q.to_string(), p);
        bins.insert(q.to_string(), DifficultyBin::of_percentile(p));
    }
    Ok(DifficultyBins { percentiles, bins })
}

/// Weighted information gain: mean advantage of the top-`top_k` BM25 scores
/// over the mean score of every document matching a query stem, divided by
/// the number of distinct query stems. When fewer than `top_k` documents
/// match, the mean runs over those that do.
pub fn wig(query_text: &str, index: &InvertedIndex, top_k: usize) -> Result<f64> {
    let stems = index.query_stems(query_text);
    let matched = index.retrieve(query_text, usize::MAX);
    if matched.is_empty() || stems.is_empty() {
        return Err(Error::NoMatchingDocuments(query_text.to_string()));
    }
    let mean = matched.iter().map(|e| e.score).sum::<f64>() / matched.len() as f64;
    let k = top_k.max(1).min(matched.len());
    let advantage: f64 = matched[..k].iter().map(|e| e.score - mean).sum();
    Ok(advantage / k as f64 / stems.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WigClass {
    Hard,
    Medium,
    Easy,
}

/// Splits queries into WIG terciles: lowest third hard, highest third easy.
pub fn wig_terciles(values: &BTreeMap<String, f64>) -> BTreeMap<String, WigClass> {
    let mut sorted: Vec<(&String, f64)> = values.iter().map(|(q, &v)| (q, v)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = sorted.len();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, (q, _))| {
            let class = match 3 * i / n.max(1) {
                0 => WigClass::Hard,
                1 => WigClass::Medium,
                _ => WigClass::Easy,
            };
            (q.clone(), class)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub count: usize,
    pub mean_rank: f64,
    pub in_top_10: usize,
    pub in_top_50: usize,
}

/// Rank statistics over every judged document with exactly `grade`.
/// Unretrieved documents get rank `run length + 1`. `None` when no document
/// has that grade.
pub fn rank_distribution(run: &RankedRun, qrels: &Qrels, grade: u32) -> Option<RankSummary> {
    let mut ranks = Vec::new();
    for q in qrels.query_ids() {
        let Some(judged) = qrels.judged(q) else { continue };
        let ordered = evaluation_order(run.get(q));
        let position: BTreeMap<&str, usize> = ordered
            .iter()
            .enumerate()
            .map(|(i, e)| (e.doc_id.as_str(), i + 1))
            .collect();
        for (doc, &g) in judged {
            if g == grade {
                ranks.push(position.get(doc.as_str()).copied().unwrap_or(ordered.len() + 1));
            }
        }
    }
    if ranks.is_empty() {
        return None;
    }
    Some(RankSummary {
        count: ranks.len(),
        mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
        in_top_10: ranks.iter().filter(|&&r| r <= 10).count(),
        in_top_50: ranks.iter().filter(|&&r| r <= 50).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub queries: usize,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub aggregate: QueryMetrics,
    /// Metrics per baseline-difficulty bin, when a baseline was supplied.
    pub bins: BTreeMap<String, BinSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub wig_classes: BTreeMap<String, BinSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub rank_distribution: BTreeMap<String, RankSummary>,
}

fn summarize(per_query: &BTreeMap<String, QueryMetrics>, members: &[&str]) -> BinSummary {
    let subset: BTreeMap<String, QueryMetrics> = members
        .iter()
        .filter_map(|q| per_query.get(*q).map(|m| (q.to_string(), *m)))
        .collect();
    BinSummary {
        queries: subset.len(),
        metrics: aggregate(&subset),
    }
}

/// Metrics report, optionally broken down by baseline difficulty and WIG
/// class, with rank statistics for every grade present in the qrels.
pub fn evaluate(
    run: &RankedRun,
    qrels: &Qrels,
    baseline: Option<&RankedRun>,
    wig_values: Option<&BTreeMap<String, f64>>,
) -> Result<EvaluationReport> {
    let per_query = per_query_metrics(run, qrels);
    let aggregate = aggregate(&per_query);
    let mut bins = BTreeMap::new();
    if let Some(b) = baseline {
        let d = difficulty_bins(b, qrels)?;
        for bin in DifficultyBin::ALL {
            bins.insert(bin.label().to_string(), summarize(&per_query, &d.members(bin)));
        }
    }
    let mut wig_classes = BTreeMap::new();
    if let Some(w) = wig_values {
        let classes = wig_terciles(w);
        for class in [WigClass::Hard, WigClass::Medium, WigClass::Easy] {
            let members: Vec<&str> = classes
                .iter()
                .filter(|(_, &c)| c == class)
                .map(|(q, _)| q.as_str())
                .collect();
            let name = serde_json::to_value(class)?.as_str().unwrap_or_default().to_string();
            wig_classes.insert(name, summarize(&per_query, &members));
        }
    }
    let mut grades: Vec<u32> = qrels
        .query_ids()
        .filter_map(|q| qrels.judged(q))
        .flat_map(|j| j.values().copied())
        .filter(|&g| g >= 1)
        .collect();
    grades.sort_unstable();
    grades.dedup();
    let rank_distribution = grades
        .into_iter()
        .filter_map(|g| rank_distribution(run, qrels, g).map(|s| (format!("grade_{g}"), s)))
        .collect();
    Ok(EvaluationReport {
        per_query,
        aggregate,
        bins,
        wig_classes,
        rank_distribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Analyzer;

    fn qrels(pairs: &[(&str, &str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for &(a, b, g) in pairs {
            q.insert(a, b, g);
        }
        q
    }

    fn run(ids: &[&str]) -> Vec<RunEntry> {
        ids.iter()
            .enumerate()
            .map(|(i, d)| RunEntry::new(*d, 100.0 - i as f64))
            .collect()
    }

    #[test]
    fn average_precision_examples() {
        let q = qrels(&[("q", "a", 1)]);
        assert_eq!(average_precision(&run(&["a", "b"]), &q, "q"), 1.0);
        let q = qrels(&[("q", "a", 1), ("q", "c", 2), ("q", "b", 0)]);
        let ap = average_precision(&run(&["a", "b", "c"]), &q, "q");
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[], &q, "q"), 0.0);
    }

    #[test]
    fn map_counts_missing_queries_as_zero() {
        let q = qrels(&[("q1", "a", 1), ("q2", "b", 1), ("q3", "c", 0)]);
        let mut r = RankedRun::new("t");
        r.insert_sorted("q1", run(&["a"]));
        r.insert_sorted("q9", run(&["a"]));
        assert_eq!(mean_average_precision(&r, &q, None), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        let q = qrels(&[("q", "a", 2), ("q", "b", 1)]);
        assert!((ndcg_at_k(&run(&["a", "b", "c"]), &q, "q", 20) - 1.0).abs() < 1e-15);
        let q = qrels(&[("q", "a", 1)]);
        let v = ndcg_at_k(&run(&["x", "a"]), &q, "q", 20);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn precision_examples() {
        let docs: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let ids: Vec<&str> = docs.iter().map(String::as_str).collect();
        let all: Vec<(&str, &str, u32)> = ids.iter().map(|d| ("q", *d, 1)).collect();
        assert_eq!(precision_at_k(&run(&ids), &qrels(&all), "q", 20), 1.0);
        let five: Vec<(&str, &str, u32)> = ids[..5].iter().map(|d| ("q", *d, 1)).collect();
        assert_eq!(precision_at_k(&run(&ids), &qrels(&five), "q", 20), 0.25);
        assert_eq!(precision_at_k(&run(&ids[..10]), &qrels(&five), "q", 20), 0.25);
    }

    #[test]
    fn ties_are_scored_in_trec_eval_order() {
        let q = qrels(&[("q", "a", 1)]);
        let tied = vec![RunEntry::new("a", 1.0), RunEntry::new("b", 1.0)];
        // "b" sorts before "a" among equal scores.
        assert_eq!(average_precision(&tied, &q, "q"), 0.5);
    }

    #[test]
    fn bins_for_twenty_queries() {
        let mut q = Qrels::new();
        let mut r = RankedRun::new("bm25");
        for i in 0..20 {
            let qid = format!("q{i:02}");
            q.insert(&qid, "rel", 1);
            // Query i retrieves the relevant doc at rank i + 1.
            let mut docs: Vec<String> = (0..i).map(|j| format!("x{j}")).collect();
            docs.push("rel".into());
            let ids: Vec<&str> = docs.iter().map(String::as_str).collect();
            r.insert_sorted(qid, run(&ids));
        }
        let b = difficulty_bins(&r, &q).unwrap();
        assert_eq!(b.members(DifficultyBin::P0To5), vec!["q19"]);
        assert_eq!(b.members(DifficultyBin::P95To100), vec!["q00"]);
        assert_eq!(b.bins.len(), 20);
        let mut small = Qrels::new();
        small.insert("q", "a", 1);
        assert!(matches!(difficulty_bins(&r, &small), Err(Error::TooFewQueries(1))));
    }

    #[test]
    fn tied_queries_share_a_percentile() {
        let mut q = Qrels::new();
        for i in 0..6 {
            q.insert(format!("q{i}"), "rel", 1);
        }
        let b = difficulty_bins(&RankedRun::new("empty"), &q).unwrap();
        assert!(b.bins.values().all(|&x| x == DifficultyBin::P0To5));
    }

    #[test]
    fn wig_examples() {
        let one = InvertedIndex::build([("d", "cats play")], Analyzer::english()).unwrap();
        assert_eq!(wig("cats", &one, 5).unwrap(), 0.0);
        let idx = InvertedIndex::build(
            [("a", "cats cats cats"), ("b", "cats dog"), ("c", "dog bird"), ("d", "cats")],
            Analyzer::english(),
        )
        .unwrap();
        assert!(wig("cats", &idx, 1).unwrap() > 0.0);
        assert!(matches!(wig("zebra", &idx, 5), Err(Error::NoMatchingDocuments(_))));
    }

    #[test]
    fn terciles() {
        let v: BTreeMap<String, f64> = (0..9).map(|i| (format!("q{i}"), i as f64)).collect();
        let t = wig_terciles(&v);
        assert_eq!(t["q0"], WigClass::Hard);
        assert_eq!(t["q4"], WigClass::Medium);
        assert_eq!(t["q8"], WigClass::Easy);
    }

    #[test]
    fn rank_distribution_examples() {
        let q = qrels(&[("q", "a", 2), ("q", "b", 2), ("q", "c", 2), ("q", "x", 1)]);
        let mut r = RankedRun::new("t");
        r.insert_sorted("q", run(&["a", "b", "c", "x"]));
        let s = rank_distribution(&r, &q, 2).unwrap();
        assert_eq!(s.mean_rank, 2.0);
        assert_eq!(s.in_top_10, 3);
        assert!(rank_distribution(&r, &q, 3).is_none());

        let docs: Vec<String> = (0..100).map(|i| format!("n{i}")).collect();
        let ids: Vec<&str> = docs.iter().map(String::as_str).collect();
        let mut r = RankedRun::new("t");
        r.insert_sorted("q", run(&ids));
        let s = rank_distribution(&r, &qrels(&[("q", "a", 2)]), 2).unwrap();
        assert_eq!(s.mean_rank, 101.0);
        assert_eq!(s.in_top_50, 0);
    }
}
