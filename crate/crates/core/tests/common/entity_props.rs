//! Entity selection laws and scorer ranges, shared with the acceptance run.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regent::embedding::{EncoderConfig, EncoderMode, EntityEmbeddingTable};
use regent::entity::{
    document_entity_set, score_entities, select_top_k, train_cross_encoder, EntityPair, EntityQuery,
    EntityScorerKind, LogisticScorer, RankerTrainConfig, ScorerResources, DEFAULT_TOP_K,
};
use regent::index::InvertedIndex;
use regent::text::{Analyzer, Vocab};
use regent::training::optim::AdamConfig;

#[derive(Debug, Clone)]
pub struct Case {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub in_doc: Vec<bool>,
}

/// Up to 45 entities; scores drawn from a coarse grid half the time so ties
/// are common.
pub fn case() -> impl Strategy<Value = Case> {
    (1usize..6, 0usize..45).prop_flat_map(|(dim, n)| {
        let score = prop_oneof![0.0f64..1.0, (0u8..5).prop_map(|k| k as f64 / 4.0)];
        (
            Just(dim),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n),
            prop::collection::vec(score, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(dim, vectors, scores, in_doc)| Case { dim, vectors, scores, in_doc })
    })
}

fn id(i: usize) -> String {
    format!("E{i:03}")
}

pub fn check_case(c: &Case) -> Result<(), TestCaseError> {
    let mut table = EntityEmbeddingTable::new(c.dim);
    for (i, v) in c.vectors.iter().enumerate() {
        table.insert(id(i), v.clone()).unwrap();
    }
    let scores: BTreeMap<String, f64> = c.scores.iter().enumerate().map(|(i, &s)| (id(i), s)).collect();
    let set = select_top_k(&scores, DEFAULT_TOP_K, &table).unwrap();

    // Cap, and nothing left out outranks anything kept.
    prop_assert_eq!(set.len(), c.scores.len().min(DEFAULT_TOP_K));
    let kept: BTreeSet<&str> = set.entity_ids.iter().map(String::as_str).collect();
    let min_kept = set.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    for (e, &s) in &scores {
        if !kept.contains(e.as_str()) {
            prop_assert!(s <= min_kept);
        }
    }
    prop_assert!(set.scores.windows(2).all(|w| w[0] >= w[1]));

    // Scaling: every row is exactly score times the stored vector.
    for (j, e) in set.entity_ids.iter().enumerate() {
        let v = table.get(e).unwrap();
        let row = set.scaled_embeddings.row(j);
        for (a, b) in row.iter().zip(v) {
            prop_assert_eq!(a.to_bits(), (set.scores[j] * b).to_bits());
        }
    }

    // Subset: document sets only hold query-set entities with their scores.
    let links: Vec<String> = c.in_doc.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| id(i)).collect();
    let doc = document_entity_set(&links, &set);
    for (j, e) in doc.entity_ids.iter().enumerate() {
        prop_assert!(kept.contains(e.as_str()));
        prop_assert!(links.contains(e));
        prop_assert_eq!(Some(doc.scores[j]), set.score_of(e));
        let row = set.entity_ids.iter().position(|x| x == e).unwrap();
        prop_assert_eq!(doc.scaled_embeddings.row(j), set.scaled_embeddings.row(row));
    }
    let expected = set.entity_ids.iter().filter(|e| links.contains(e)).count();
    prop_assert_eq!(doc.len(), expected);
    Ok(())
}

/// Runs the selection laws over `cases` random cases.
pub fn check_laws(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&case(), |c| check_case(&c)).map_err(|e| e.to_string())
}

const ENTITIES: [(&str, &str); 8] = [
    ("Stock_market", "a market where shares of companies are traded"),
    ("Market_crash", "a sudden steep fall in stock prices"),
    ("Cat", "a small domesticated carnivorous mammal"),
    ("Dog", "a domesticated descendant of the wolf"),
    ("Sleep", "a state of rest for the mind and body"),
    ("Play", "activity for enjoyment and recreation"),
    ("Origin", ""),
    ("Zero", "nothing at all"),
];

const QUERIES: [(&str, &str, &[&str]); 4] = [
    ("q1", "stock market crash", &["Stock_market"]),
    ("q2", "cats playing with dogs", &["Cat", "Dog"]),
    ("q3", "how long do dogs sleep", &[]),
    ("q4", "zero origin", &["Zero", "Origin"]),
];

/// Checks every scorer kind on a small corpus, including a zero embedding,
/// an exactly opposite pair and a query with no linked entities.
pub fn check_scorer_ranges() -> Result<usize, String> {
    let dim = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut table = EntityEmbeddingTable::new(dim);
    for (e, _) in ENTITIES {
        let v: Vec<f64> = match e {
            "Zero" => vec![0.0; dim],
            _ => (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        table.insert(e, v).unwrap();
    }
    let opposite: Vec<f64> = table.get("Cat").unwrap().iter().map(|x| -x).collect();
    table.insert("Not_cat", opposite).unwrap();

    let descriptions =
        InvertedIndex::build(ENTITIES.iter().map(|&(e, d)| (e, d)), Analyzer::english()).map_err(|e| e.to_string())?;
    let words = ENTITIES
        .iter()
        .flat_map(|(e, d)| e.split('_').chain(d.split(' ')))
        .chain(QUERIES.iter().flat_map(|(_, t, _)| t.split(' ')))
        .map(str::to_lowercase)
        .collect::<Vec<_>>();
    let vocab = Vocab::build(words.iter().map(String::as_str));

    let mut pairs = Vec::new();
    for (qid, text, linked) in QUERIES {
        for (e, _) in ENTITIES {
            pairs.push(EntityPair::new(qid, text, e, linked.contains(&e) as i64).map_err(|e| e.to_string())?);
        }
    }
    let config = RankerTrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            max_len: 16,
            mode: EncoderMode::TrainableTransformer,
            vocab_size: vocab.len(),
            ffn_dim: 16,
        },
        adam: AdamConfig { base_lr: 1e-2, warmup_steps: 0, ..AdamConfig::default() },
        steps: 20,
        batch_size: 4,
        dropout: 0.1,
        seed: 5,
    };
    let (cross, _) = train_cross_encoder(&pairs, &vocab, &config).map_err(|e| e.to_string())?;
    let logistic = LogisticScorer { weights: [3.0, -2.0, 1.5, 40.0], bias: -0.5 };
    let resources = ScorerResources {
        embeddings: &table,
        descriptions: Some(&descriptions),
        cross_encoder: Some(&cross),
        logistic: Some(&logistic),
    };

    let candidates: BTreeSet<String> =
        ENTITIES.iter().map(|(e, _)| e.to_string()).chain(["Not_cat".to_string()]).collect();
    let pool: BTreeMap<String, f64> = candidates.iter().enumerate().map(|(i, c)| (c.clone(), i as f64 / 8.0)).collect();
    let mut checked = 0;
    for (qid, text, linked) in QUERIES {
        let linked: Vec<String> = linked.iter().map(|s| s.to_string()).collect();
        let query = EntityQuery { query_id: qid, text, linked: &linked, pool_frequency: &pool };
        for kind in EntityScorerKind::ALL {
            let scores = match score_entities(kind, &query, &candidates, &resources) {
                Ok(s) => s,
                // Similarity scorers need query entities; that refusal is expected.
                Err(regent::Error::NoQueryEntities(_)) if linked.is_empty() => continue,
                Err(e) => return Err(format!("{}: {e}", kind.name())),
            };
            if scores.len() != candidates.len() {
                return Err(format!("{} scored {} of {} candidates", kind.name(), scores.len(), candidates.len()));
            }
            for (e, s) in &scores {
                if !(0.0..=1.0).contains(s) {
                    return Err(format!("{} gave {e} the score {s} for {qid}", kind.name()));
                }
            }
            let again = score_entities(kind, &query, &candidates, &resources).map_err(|e| e.to_string())?;
            if again != scores {
                return Err(format!("{} is not deterministic", kind.name()));
            }
            checked += scores.len();
        }
    }
    Ok(checked)
}
