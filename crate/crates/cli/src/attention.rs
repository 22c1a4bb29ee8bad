//! Attention weights of one scored pair, labelled for plotting.

use regent::model::{ForwardTrace, ScoringInput};
use regent::tensor::Matrix;
use regent::text::{AnalyzedDocument, Vocab};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct HeadWeights {
    pub head: usize,
    /// Query tokens by document tokens.
    pub token: Vec<Vec<f64>>,
    /// Query entities by document entities; empty when the pathway is off.
    pub entity_entity: Vec<Vec<f64>>,
    /// Query tokens by query entities.
    pub entity_token: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct LayerWeights {
    pub layer: usize,
    /// Mean weight on the token pathway, for gated fusion kinds.
    pub mean_gate: Option<f64>,
    pub heads: Vec<HeadWeights>,
}

#[derive(Debug, Serialize)]
pub struct AttentionDump {
    pub query_id: String,
    pub doc_id: String,
    pub fold: usize,
    pub score: f64,
    pub entity_pathway_active: bool,
    pub query_tokens: Vec<String>,
    pub doc_tokens: Vec<String>,
    pub query_entities: Vec<String>,
    pub doc_entities: Vec<String>,
    pub layers: Vec<LayerWeights>,
}

fn surfaces(doc: &AnalyzedDocument, vocab: &Vocab) -> Vec<String> {
    doc.subwords[..doc.length]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or("[UNK]").to_string())
        .collect()
}

fn block(m: &Matrix, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows.min(m.rows())).map(|r| m.row(r)[..cols.min(m.cols())].to_vec()).collect()
}

impl AttentionDump {
    pub fn new(
        query_id: &str,
        doc_id: &str,
        fold: usize,
        input: &ScoringInput<'_>,
        trace: &ForwardTrace,
        vocab: &Vocab,
    ) -> Self {
        let nq = input.query.length;
        let nd = input.doc.length;
        let nqe = input.query_entities.len();
        let nde = input.doc_entities.len();
        let layers = trace
            .layers
            .iter()
            .enumerate()
            .map(|(layer, l)| {
                let heads = (0..l.token_weights.len())
                    .map(|h| HeadWeights {
                        head: h,
                        token: block(&l.token_weights[h], nq, nd),
                        entity_entity: l.entity_entity_weights.get(h).map_or_else(Vec::new, |m| block(m, nqe, nde)),
                        entity_token: l.entity_token_weights.get(h).map_or_else(Vec::new, |m| block(m, nq, nqe)),
                    })
                    .collect();
                let mean_gate = l.pathway.gate.as_ref().map(|g| {
                    let rows = block(g, nq, g.cols());
                    let n: usize = rows.iter().map(Vec::len).sum();
                    rows.iter().flatten().sum::<f64>() / n.max(1) as f64
                });
                LayerWeights { layer, mean_gate, heads }
            })
            .collect();
        Self {
            query_id: query_id.to_string(),
            doc_id: doc_id.to_string(),
            fold,
            score: trace.score,
            entity_pathway_active: trace.entity_pathway_active,
            query_tokens: surfaces(input.query, vocab),
            doc_tokens: surfaces(input.doc, vocab),
            query_entities: input.query_entities.entity_ids.clone(),
            doc_entities: input.doc_entities.entity_ids.clone(),
            layers,
        }
    }
}
