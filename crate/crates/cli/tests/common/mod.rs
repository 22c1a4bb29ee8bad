#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regent::io::{write_jsonl, CorpusRecord, LinkRecord, QueryRecord};
use regent::synthetic::{generate, Signal, SyntheticSpec};

pub const GHOST: &str = "Ghost_entity";
/// Query whose top document links 30 extra entities.
pub const WIDE_QUERY: &str = "q000";
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    /// Relevant candidate of `q001` whose only link is unresolvable.
    pub unlinked_doc: String,
}

/// Ten synthetic queries with twenty documents each, written as files, and
/// a small configuration for them.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut c = generate(SyntheticSpec::new(Signal::Mixed, 10, 21)).unwrap();

    let corpus: Vec<CorpusRecord> =
        c.corpus.iter().map(|(d, t)| CorpusRecord { doc_id: d.clone(), text: t.clone() }).collect();
    write_jsonl(root.join("corpus.jsonl"), &corpus).unwrap();
    let queries: Vec<QueryRecord> =
        c.queries.iter().map(|(q, t)| QueryRecord { query_id: q.clone(), text: t.clone() }).collect();
    write_jsonl(root.join("queries.jsonl"), &queries).unwrap();
    std::fs::write(root.join("qrels.txt"), c.qrels.to_trec_string()).unwrap();

    let top = c.candidates.get(WIDE_QUERY)[0].doc_id.clone();
    for i in 0..30 {
        let id = format!("Extra_{i:02}");
        let v: Vec<f64> = (0..c.spec.entity_dim).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect();
        c.table.insert(id.clone(), v).unwrap();
        c.doc_links.get_mut(&top).unwrap().push(id);
    }
    let unlinked_doc = c.qrels.relevant("q001")[0].to_string();
    c.doc_links.insert(unlinked_doc.clone(), vec![GHOST.to_string()]);
    let links: Vec<LinkRecord> =
        c.doc_links.iter().map(|(d, e)| LinkRecord { id: d.clone(), entities: e.clone() }).collect();
    write_jsonl(root.join("doc_links.jsonl"), &links).unwrap();
    let query_links: Vec<LinkRecord> = c
        .query_entities
        .iter()
        .map(|(q, s)| LinkRecord { id: q.clone(), entities: s.entity_ids.clone() })
        .collect();
    write_jsonl(root.join("query_links.jsonl"), &query_links).unwrap();
    std::fs::write(root.join("entities.txt"), c.table.to_text()).unwrap();

    let words: Vec<&str> = c.corpus.values().flat_map(|t| t.split(' ')).collect();
    let descriptions: Vec<CorpusRecord> = c
        .table
        .ids()
        .enumerate()
        .map(|(i, id)| CorpusRecord {
            doc_id: id.to_string(),
            text: (0..4).map(|k| words[(i * 13 + k * 5) % words.len()]).collect::<Vec<_>>().join(" "),
        })
        .collect();
    write_jsonl(root.join("descriptions.jsonl"), &descriptions).unwrap();

    let config = root.join("regent.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Fixture { dir, config, unlinked_doc }
}

const CONFIG: &str = r#"seed = 17

[paths]
corpus = "corpus.jsonl"
queries = "queries.jsonl"
qrels = "qrels.txt"
doc_links = "doc_links.jsonl"
query_links = "query_links.jsonl"
entity_embeddings = "entities.txt"
entity_descriptions = "descriptions.jsonl"
output_dir = "out"

[model]
hidden_dim = 16
num_heads = 2
num_layers = 1
max_len = 24
ffn_dim = 32

[pipeline]
candidate_depth = 100
pool_depth = 100
entity_scorer = "max_sim"

[training]
lr = 1e-3
warmup = 0
epochs = 2

[entity_ranker]
hidden_dim = 8
max_len = 16
ffn_dim = 16
steps = 10
"#;

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.root().join("out")
    }

    pub fn regent(&self, args: &[&str]) -> Output {
        regent_with(&self.config, args, &[])
    }

    /// Runs and asserts success.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.regent(args);
        assert!(
            out.status.success(),
            "regent {args:?} failed with {:?}:\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

pub fn regent_with(config: &Path, args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_regent"));
    cmd.arg("--config").arg(config).args(args).env_remove("REGENT_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

pub fn artifact_digests(dir: &Path, command: &str) -> BTreeMap<String, String> {
    serde_json::from_value(manifest(dir)["commands"][command]["artifacts"].clone()).unwrap()
}
