//! Metric parity against frozen reference trec_eval output.

use std::collections::BTreeMap;
use std::path::PathBuf;

use regent::eval::{per_query_metrics, QueryMetrics};
use regent::trec::{Qrels, RankedRun};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/metrics")
}

pub fn load() -> (RankedRun, Qrels, BTreeMap<String, QueryMetrics>) {
    let dir = fixture_dir();
    let run = RankedRun::read_trec(dir.join("run.txt")).unwrap();
    let qrels = Qrels::read(dir.join("qrels.txt")).unwrap();
    let text = std::fs::read_to_string(dir.join("reference.json")).unwrap();
    (run, qrels, serde_json::from_str(&text).unwrap())
}

/// Largest absolute difference over every query and metric.
pub fn max_deviation() -> f64 {
    let (run, qrels, reference) = load();
    let ours = per_query_metrics(&run, &qrels);
    assert_eq!(ours.len(), reference.len());
    reference
        .iter()
        .flat_map(|(q, r)| {
            let m = ours[q];
            [(m.map - r.map).abs(), (m.ndcg_cut_20 - r.ndcg_cut_20).abs(), (m.p_20 - r.p_20).abs()]
        })
        .fold(0.0, f64::max)
}
