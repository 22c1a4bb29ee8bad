mod common;

use std::collections::BTreeSet;

use common::*;
use regent::eval::{evaluate, QueryMetrics};
use regent::trec::{Qrels, RankedRun};

fn full_pipeline(fx: &Fixture) {
    for cmd in ["index", "entity-sets", "train", "rerank"] {
        fx.ok(&[cmd]);
    }
}

#[test]
fn pipeline_end_to_end() {
    let fx = fixture();
    let stdout = fx.ok(&["index"]);
    assert!(stdout.contains("indexed 200 documents"), "{stdout}");
    fx.ok(&["entity-sets"]);
    fx.ok(&["train"]);
    fx.ok(&["rerank"]);
    fx.ok(&["evaluate"]);
    let out = fx.out();

    // Re-ranking only reorders each query's BM25 candidates.
    let bm25 = RankedRun::read_trec(out.join("bm25.run")).unwrap();
    let run = RankedRun::read_trec(out.join("runs/regent.run")).unwrap();
    assert_eq!(run.queries.len(), bm25.queries.len());
    for (q, entries) in &bm25.queries {
        let a: BTreeSet<&str> = entries.iter().map(|e| e.doc_id.as_str()).collect();
        let b: BTreeSet<&str> = run.get(q).iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(a, b, "candidate set of {q}");
    }

    // The report matches direct evaluation calls.
    let qrels = Qrels::read(fx.root().join("qrels.txt")).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/regent.json")).unwrap()).unwrap();
    let direct = evaluate(&run, &qrels, Some(&bm25), None).unwrap();
    let aggregate: QueryMetrics = serde_json::from_value(report["aggregate"].clone()).unwrap();
    assert_eq!(aggregate, direct.aggregate);
    assert_eq!(serde_json::to_value(&direct.per_query).unwrap(), report["per_query"]);
    assert_eq!(serde_json::to_value(&direct.bins).unwrap(), report["bins"]);

    // Every command's artifacts are recorded with their current digests.
    let manifest = manifest(&out);
    for cmd in ["index", "entity-sets", "train", "rerank", "evaluate"] {
        let artifacts = artifact_digests(&out, cmd);
        assert!(!artifacts.is_empty(), "{cmd} recorded no artifacts");
        for (name, digest) in artifacts {
            let bytes = std::fs::read(out.join(&name)).unwrap();
            use sha2::Digest;
            let actual: String = sha2::Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(actual, digest, "{name}");
        }
        assert_eq!(manifest["commands"][cmd]["config_hash"], manifest["config_hash"]);
    }
    let inputs = manifest["commands"]["train"]["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("corpus.jsonl")));
    assert!(inputs.keys().any(|k| k.ends_with("entity_sets.jsonl")));
    assert!(!out.join(".regent.lock").exists());
}

#[test]
fn identical_config_gives_identical_run_files() {
    let fx = fixture();
    full_pipeline(&fx);
    let first = std::fs::read(fx.out().join("runs/regent.run")).unwrap();
    let other = fx.root().join("again");
    for cmd in ["index", "entity-sets", "train", "rerank"] {
        let out = regent_with(&fx.config, &[cmd, "--output-dir", other.to_str().unwrap()], &[]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let second = std::fs::read(other.join("runs/regent.run")).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

#[test]
fn reindexing_unchanged_inputs_keeps_digests() {
    let fx = fixture();
    fx.ok(&["index"]);
    let first = artifact_digests(&fx.out(), "index");
    fx.ok(&["index"]);
    assert_eq!(first, artifact_digests(&fx.out(), "index"));
}

#[test]
fn corrupted_corpus_line_is_reported() {
    let fx = fixture();
    let path = fx.root().join("corpus.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"doc_id\": \"broken\", \"text\": ";
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = fx.regent(&["index"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corpus.jsonl:7:"), "{}", stderr(&out));
}

#[test]
fn missing_upstream_artifact_names_its_command() {
    let fx = fixture();
    let out = fx.regent(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run `regent index` first"), "{}", stderr(&out));

    fx.ok(&["index"]);
    fx.ok(&["entity-sets"]);
    let out = fx.regent(&["rerank"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run `regent train` first"), "{}", stderr(&out));
}

#[test]
fn supervised_scorer_needs_trained_weights() {
    let fx = fixture();
    fx.ok(&["index"]);
    let out = fx.regent(&["entity-sets", "--scorer", "supervised_cross"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("regent train-entity-ranker"), "{}", stderr(&out));

    fx.ok(&["train-entity-ranker", "--scorer", "supervised_cross"]);
    fx.ok(&["entity-sets", "--scorer", "supervised_cross"]);
    fx.ok(&["train-entity-ranker", "--scorer", "logistic_regression"]);
    fx.ok(&["entity-sets", "--scorer", "logistic_regression"]);
}

fn entity_sets(fx: &Fixture) -> Vec<serde_json::Value> {
    std::fs::read_to_string(fx.out().join("entity_sets.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn entity_sets_cap_and_report_unresolvable_ids() {
    let fx = fixture();
    fx.ok(&["index"]);
    fx.ok(&["entity-sets"]);
    let sets = entity_sets(&fx);
    assert_eq!(sets.len(), 10);
    let wide = sets.iter().find(|s| s["query_id"] == WIDE_QUERY).unwrap();
    assert_eq!(wide["entities"].as_array().unwrap().len(), 20);
    for s in &sets {
        for e in s["entities"].as_array().unwrap() {
            let score = e["score"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&score));
            assert_ne!(e["id"], GHOST);
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.out().join("unresolved_entities.json")).unwrap()).unwrap();
    assert_eq!(report["unresolvable_entities"], serde_json::json!([GHOST]));
}

#[test]
fn ablation_writes_one_run_per_cell_and_a_table() {
    let fx = fixture();
    fx.ok(&["index"]);
    fx.ok(&["ablate", "--set", "ablate.variants=[\"full\", \"no_entities\", \"no_bm25\"]", "--epochs", "1"]);
    let dir = fx.out().join("ablation");
    let runs: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".run"))
        .collect();
    assert_eq!(runs.len(), 3, "{runs:?}");
    let table = std::fs::read_to_string(dir.join("comparison.tsv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().skip(1).any(|l| l.starts_with("no_entities\tlearned_sigmoid\tmax_sim\t")));
}

fn dump(fx: &Fixture, query: &str, doc: &str) -> serde_json::Value {
    fx.ok(&["attention-dump", "--query", query, "--doc", doc]);
    let path = fx.out().join(format!("attention/{query}__{doc}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(v: &serde_json::Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v.clone()).unwrap()
}

#[test]
fn attention_dump_shapes_and_row_sums() {
    let fx = fixture();
    full_pipeline(&fx);
    let bm25 = RankedRun::read_trec(fx.out().join("bm25.run")).unwrap();
    let doc = bm25.get(WIDE_QUERY)[0].doc_id.clone();
    let d = dump(&fx, WIDE_QUERY, &doc);
    assert_eq!(d["entity_pathway_active"], true);
    let nqe = d["query_entities"].as_array().unwrap().len();
    let nde = d["doc_entities"].as_array().unwrap().len();
    let nq = d["query_tokens"].as_array().unwrap().len();
    assert!(nqe > 0 && nde > 0);
    assert_eq!(d["query_tokens"][0], "[CLS]");
    for layer in d["layers"].as_array().unwrap() {
        let heads = layer["heads"].as_array().unwrap();
        assert_eq!(heads.len(), 2);
        for h in heads {
            let ee = rows(&h["entity_entity"]);
            assert_eq!(ee.len(), nqe);
            assert!(ee.iter().all(|r| r.len() == nde));
            for m in [ee, rows(&h["token"]), rows(&h["entity_token"])] {
                for r in &m {
                    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
            assert_eq!(rows(&h["token"]).len(), nq);
        }
    }

    let d = dump(&fx, "q001", &fx.unlinked_doc);
    assert_eq!(d["entity_pathway_active"], false);
    assert!(d["doc_entities"].as_array().unwrap().is_empty());
    for layer in d["layers"].as_array().unwrap() {
        for h in layer["heads"].as_array().unwrap() {
            assert!(h["entity_entity"].as_array().unwrap().is_empty());
        }
    }

    let out = fx.regent(&["attention-dump", "--query", "q001", "--doc", "q002_d00"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not among the BM25 candidates"));
}

#[test]
fn output_dir_variable_and_flag_precedence() {
    let fx = fixture();
    let env_dir = fx.root().join("from_env");
    let out = regent_with(&fx.config, &["index"], &[("REGENT_OUTPUT_DIR", &env_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(env_dir.join("index.bin").exists());
    assert!(!fx.out().exists());

    let flag_dir = fx.root().join("from_flag");
    let out = regent_with(&fx.config, &["index", "--output-dir", flag_dir.to_str().unwrap()], &[("REGENT_OUTPUT_DIR", &env_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(flag_dir.join("index.bin").exists());
}

#[test]
fn concurrent_writer_is_refused() {
    let fx = fixture();
    std::fs::create_dir_all(fx.out()).unwrap();
    std::fs::write(fx.out().join(".regent.lock"), "").unwrap();
    let out = fx.regent(&["index"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("in use by another run"));
}

#[test]
fn configuration_errors_are_user_errors() {
    let fx = fixture();
    let text = std::fs::read_to_string(&fx.config).unwrap().replace("seed = 17\n", "");
    std::fs::write(&fx.config, text).unwrap();
    let out = fx.regent(&["index"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));

    let fx = fixture();
    let out = fx.regent(&["index", "--set", "paths.corpus=\"nowhere.jsonl\""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not exist"));

    let out = fx.regent(&["index", "--variant", "half"]);
    assert_eq!(out.status.code(), Some(2));
}
