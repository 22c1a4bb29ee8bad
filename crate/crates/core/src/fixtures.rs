//! Small deterministic inputs for tests, benchmarks and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{EncoderConfig, EncoderMode, EntityEmbeddingTable};
use crate::entity::{select_top_k, ScoredEntitySet};
use crate::error::Result;
use crate::index::{InvertedIndex, TokenRelevanceVector};
use crate::model::{AblationFlags, FusionKind, RegentConfig, RegentModel, ScoringInput};
use crate::text::{tokenize_subwords, AnalyzedDocument, Analyzer, Vocab};

const DOCS: [(&str, &str); 3] = [
    ("d1", "cats are playing with boys"),
    ("d2", "the market fell"),
    ("d3", "dogs sleep"),
];
const QUERY: &str = "playing cats";

/// One scored pair on an 8-position, `d = 8`, two-head network with two
/// query entities and two document entities. Token embeddings are a frozen
/// lookup so every trainable tensor belongs to the re-ranking network.
pub struct TinyFixture {
    pub model: RegentModel,
    pub query: AnalyzedDocument,
    pub doc: AnalyzedDocument,
    pub relevance: TokenRelevanceVector,
    pub query_entities: ScoredEntitySet,
    pub doc_entities: ScoredEntitySet,
    pub doc_bm25: f64,
}

impl TinyFixture {
    pub fn new(fusion: FusionKind, flags: AblationFlags, seed: u64) -> Result<Self> {
        let analyzer = Analyzer::english();
        let index = InvertedIndex::build(DOCS.iter().map(|&(i, t)| (i, t)), analyzer.clone())?;
        let words: Vec<&str> = DOCS.iter().flat_map(|(_, t)| t.split(' ')).chain(QUERY.split(' ')).collect();
        let vocab = Vocab::build(words);
        let max_len = 8;
        let query = tokenize_subwords("q", &analyzer.analyze(QUERY), &vocab, max_len)?;
        let doc = tokenize_subwords("d1", &analyzer.analyze(DOCS[0].1), &vocab, max_len)?;
        let relevance = index.token_relevance_vector(QUERY, &doc)?;
        let doc_bm25 = index.score(QUERY, "d1")?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entity_dim = 4;
        let mut table = EntityEmbeddingTable::new(entity_dim);
        for id in ["Cat", "Play", "Boy"] {
            table.insert(id, (0..entity_dim).map(|_| rng.gen_range(-1.5..1.5)).collect())?;
        }
        let scores = [("Cat".to_string(), 0.9), ("Play".to_string(), 0.6), ("Boy".to_string(), 0.3)].into();
        let query_set = select_top_k(&scores, 20, &table)?;
        let query_entities = ScoredEntitySet::new(vec!["Cat".into(), "Play".into()], vec![0.9, 0.6], &table)?;
        let doc_entities = crate::entity::document_entity_set(&["Boy".into(), "Cat".into()], &query_set);

        let encoder = EncoderConfig {
            hidden_dim: 8,
            num_layers: 0,
            num_heads: 2,
            max_len,
            mode: EncoderMode::FrozenLookup,
            vocab_size: vocab.len(),
            ffn_dim: 16,
        };
        let config = RegentConfig {
            num_heads: 2,
            ffn_dim: 16,
            fusion,
            flags,
            dropout: 0.0,
            ..RegentConfig::new(encoder, entity_dim)
        };
        let mut model = RegentModel::init(config, seed)?;
        // Move layer norms off their identity initialization and sharpen the
        // entity attentions so their query/key gradients are not vanishingly small.
        for (name, m) in model.params.iter_mut() {
            if name.ends_with(".gain") || name.ends_with(".bias") {
                for x in m.data_mut() {
                    *x += rng.gen_range(-0.2..0.2);
                }
            } else if name.contains(".entity_") {
                for x in m.data_mut() {
                    *x *= 4.0;
                }
            }
        }
        Ok(Self {
            model,
            query,
            doc,
            relevance,
            query_entities,
            doc_entities,
            doc_bm25,
        })
    }

    pub fn input(&self) -> ScoringInput<'_> {
        ScoringInput {
            query: &self.query,
            doc: &self.doc,
            relevance: &self.relevance,
            query_entities: &self.query_entities,
            doc_entities: &self.doc_entities,
            doc_bm25: self.doc_bm25,
        }
    }
}
