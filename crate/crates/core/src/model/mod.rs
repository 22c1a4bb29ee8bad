//! The re-ranking network: BM25-enhanced token cross-attention, the entity
//! pathway, adaptive fusion, pooling and the scoring head.

mod fusion;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fusion::FusionKind;

use crate::autodiff::{Gradients, Graph, ParamStore, Var};
use crate::embedding::{Encoder, EncoderConfig};
use crate::entity::ScoredEntitySet;
use crate::error::{Error, Result};
use crate::index::TokenRelevanceVector;
use crate::nn::{self, Dropout};
use crate::tensor::Matrix;
use crate::text::AnalyzedDocument;

pub const BM25_SCALE: &str = "bm25_scale";
pub const ENTITY_PROJECTION: &str = "entity_projection";
pub const DOC_BM25_WEIGHT: &str = "doc_bm25.w";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub disable_entities: bool,
    pub disable_token_bm25: bool,
    /// Combine the neural score with the document BM25 score linearly.
    /// Requires `disable_token_bm25`.
    pub document_level_bm25: bool,
}

impl AblationFlags {
    pub const FULL: Self = Self {
        disable_entities: false,
        disable_token_bm25: false,
        document_level_bm25: false,
    };
    pub const NO_ENTITIES: Self = Self {
        disable_entities: true,
        ..Self::FULL
    };
    pub const NO_BM25: Self = Self {
        disable_token_bm25: true,
        ..Self::FULL
    };
    pub const DOCUMENT_LEVEL_BM25: Self = Self {
        disable_token_bm25: true,
        document_level_bm25: true,
        ..Self::FULL
    };

    /// Every valid combination.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for e in [false, true] {
            for t in [false, true] {
                for d in [false, true] {
                    let f = Self {
                        disable_entities: e,
                        disable_token_bm25: t,
                        document_level_bm25: d,
                    };
                    if f.validate().is_ok() {
                        out.push(f);
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.document_level_bm25 && !self.disable_token_bm25 {
            return Err(Error::Config(
                "document_level_bm25 requires disable_token_bm25".into(),
            ));
        }
        Ok(())
    }

    /// The named variant this combination corresponds to, if any.
    pub fn variant_name(&self) -> String {
        match *self {
            Self::FULL => "full".into(),
            Self::NO_ENTITIES => "no_entities".into(),
            Self::NO_BM25 => "no_bm25".into(),
            Self::DOCUMENT_LEVEL_BM25 => "document_level_bm25".into(),
            f => format!(
                "entities{}_tokbm25{}_docbm25{}",
                !f.disable_entities as u8, !f.disable_token_bm25 as u8, f.document_level_bm25 as u8
            ),
        }
    }

    pub fn from_variant(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::FULL),
            "no_entities" => Ok(Self::NO_ENTITIES),
            "no_bm25" => Ok(Self::NO_BM25),
            "document_level_bm25" => Ok(Self::DOCUMENT_LEVEL_BM25),
            _ => Err(Error::Config(format!("unknown ablation variant `{name}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegentConfig {
    pub encoder: EncoderConfig,
    /// Heads in the cross-attention and entity attentions.
    pub num_heads: usize,
    pub num_cross_layers: usize,
    pub ffn_dim: usize,
    pub head_blocks: usize,
    pub entity_dim: usize,
    pub dropout: f64,
    pub alpha_init: f64,
    pub fusion: FusionKind,
    pub flags: AblationFlags,
}

impl RegentConfig {
    pub fn new(encoder: EncoderConfig, entity_dim: usize) -> Self {
        let d = encoder.hidden_dim;
        Self {
            encoder,
            num_heads: encoder.num_heads,
            num_cross_layers: 2,
            ffn_dim: 4 * d,
            head_blocks: 2,
            entity_dim,
            dropout: 0.1,
            alpha_init: 0.1,
            fusion: FusionKind::LearnedSigmoid,
            flags: AblationFlags::FULL,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.flags.validate()?;
        let d = self.hidden_dim();
        if self.num_heads == 0 || d % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {d} is not divisible by {} heads",
                self.num_heads
            )));
        }
        if self.fusion == FusionKind::AttentionBased && d % 2 != 0 {
            return Err(Error::Config(format!(
                "attention_based fusion needs an even hidden size, got {d}"
            )));
        }
        if self.entity_dim == 0 {
            return Err(Error::Config("entity_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

fn layer_prefix(l: usize) -> String {
    format!("cross{l}")
}

/// Everything scored for one (query, document) pair.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInput<'a> {
    pub query: &'a AnalyzedDocument,
    pub doc: &'a AnalyzedDocument,
    pub relevance: &'a TokenRelevanceVector,
    pub query_entities: &'a ScoredEntitySet,
    pub doc_entities: &'a ScoredEntitySet,
    /// Document-level BM25, used only with `document_level_bm25`.
    pub doc_bm25: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayOutput {
    pub token_pathway: Matrix,
    pub entity_pathway: Matrix,
    /// Weight on the token pathway; `None` for `additive`.
    pub gate: Option<Matrix>,
    pub fused: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub pathway: PathwayOutput,
    /// Per head, `n_q × n_d` over query and document positions.
    pub token_weights: Vec<Matrix>,
    /// Per head, `n_qe × n_de`; empty when the entity pathway is inactive.
    pub entity_entity_weights: Vec<Matrix>,
    /// Per head, `n_q × n_qe`.
    pub entity_token_weights: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub score: f64,
    pub neural_score: f64,
    pub entity_pathway_active: bool,
    pub layers: Vec<LayerTrace>,
}

struct LayerVars {
    a_t: Var,
    a_et: Var,
    gate: Option<Var>,
    fused: Var,
    token_weights: Vec<Var>,
    ee_weights: Vec<Var>,
    et_weights: Vec<Var>,
}

/// The recorded computation of one score.
pub struct Recorded {
    pub graph: Graph,
    pub score: Var,
    neural: Var,
    layers: Vec<LayerVars>,
    entity_pathway_active: bool,
}

impl Recorded {
    pub fn score(&self) -> f64 {
        self.graph.value(self.score).to_scalar()
    }

    pub fn trace(&self) -> ForwardTrace {
        let g = &self.graph;
        let mats = |vs: &[Var]| vs.iter().map(|&v| g.value(v).clone()).collect();
        ForwardTrace {
            score: self.score(),
            neural_score: g.value(self.neural).to_scalar(),
            entity_pathway_active: self.entity_pathway_active,
            layers: self
                .layers
                .iter()
                .map(|l| LayerTrace {
                    pathway: PathwayOutput {
                        token_pathway: g.value(l.a_t).clone(),
                        entity_pathway: g.value(l.a_et).clone(),
                        gate: l.gate.map(|v| g.value(v).clone()),
                        fused: g.value(l.fused).clone(),
                    },
                    token_weights: mats(&l.token_weights),
                    entity_entity_weights: mats(&l.ee_weights),
                    entity_token_weights: mats(&l.et_weights),
                })
                .collect(),
        }
    }
}

/// A configured network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RegentModel {
    pub config: RegentConfig,
    pub params: ParamStore,
}

impl RegentModel {
    pub fn init(config: RegentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.hidden_dim();
        Encoder::new(config.encoder, "encoder").init(&mut params, &mut rng)?;
        params.insert(BM25_SCALE, Matrix::scalar(config.alpha_init));
        nn::init_matrix(&mut params, ENTITY_PROJECTION, config.entity_dim, d, config.entity_dim, &mut rng);
        for l in 0..config.num_cross_layers {
            let p = layer_prefix(l);
            for proj in ["q", "k", "v", "o"] {
                nn::init_linear(&mut params, &format!("{p}.token.{proj}"), d, d, false, &mut rng);
            }
            for path in ["entity_entity", "entity_token"] {
                for proj in ["q", "k", "v"] {
                    nn::init_linear(&mut params, &format!("{p}.{path}.{proj}"), d, d, false, &mut rng);
                }
            }
            fusion::init(&mut params, &format!("{p}.fusion"), config.fusion, d, &mut rng);
            nn::init_layer_norm(&mut params, &format!("{p}.ln1"), d);
            nn::init_feed_forward(&mut params, &format!("{p}.ffn"), d, config.ffn_dim, &mut rng);
            nn::init_layer_norm(&mut params, &format!("{p}.ln2"), d);
        }
        for b in 0..config.head_blocks {
            nn::init_linear(&mut params, &format!("head.block{b}"), d, d, true, &mut rng);
            nn::init_layer_norm(&mut params, &format!("head.block{b}.ln"), d);
        }
        nn::init_linear(&mut params, "head.out", d, 1, true, &mut rng);
        if config.flags.document_level_bm25 {
            nn::init_matrix(&mut params, DOC_BM25_WEIGHT, 2, 1, 2, &mut rng);
        }
        Ok(Self { config, params })
    }

    /// Checks that every tensor the configuration needs is present and shaped.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.hidden_dim();
        let s = &self.params;
        Encoder::new(c.encoder, "encoder").validate(s)?;
        nn::expect_shape(s, BM25_SCALE, (1, 1))?;
        nn::expect_shape(s, ENTITY_PROJECTION, (c.entity_dim, d))?;
        for l in 0..c.num_cross_layers {
            let p = layer_prefix(l);
            for proj in ["q", "k", "v", "o"] {
                nn::expect_shape(s, &format!("{p}.token.{proj}.w"), (d, d))?;
            }
            for path in ["entity_entity", "entity_token"] {
                for proj in ["q", "k", "v"] {
                    nn::expect_shape(s, &format!("{p}.{path}.{proj}.w"), (d, d))?;
                }
            }
            fusion::validate(s, &format!("{p}.fusion"), c.fusion, d)?;
            nn::expect_shape(s, &format!("{p}.ffn.in.w"), (d, c.ffn_dim))?;
            nn::expect_shape(s, &format!("{p}.ffn.out.w"), (c.ffn_dim, d))?;
            for ln in ["ln1", "ln2"] {
                nn::expect_shape(s, &format!("{p}.{ln}.gain"), (1, d))?;
                nn::expect_shape(s, &format!("{p}.{ln}.bias"), (1, d))?;
            }
        }
        for b in 0..c.head_blocks {
            nn::expect_shape(s, &format!("head.block{b}.w"), (d, d))?;
            nn::expect_shape(s, &format!("head.block{b}.ln.gain"), (1, d))?;
        }
        nn::expect_shape(s, "head.out.w", (d, 1))?;
        if c.flags.document_level_bm25 {
            nn::expect_shape(s, DOC_BM25_WEIGHT, (2, 1))?;
        }
        Ok(())
    }

    fn check_input(&self, input: &ScoringInput<'_>) -> Result<()> {
        let max_len = self.config.encoder.max_len;
        for (what, doc) in [("query", input.query), ("document", input.doc)] {
            if doc.max_len() != max_len {
                return Err(Error::shape(
                    format!("{what} `{}` positions", doc.doc_id),
                    max_len,
                    doc.max_len(),
                ));
            }
        }
        if input.relevance.scores.len() != input.doc.max_len() {
            return Err(Error::shape(
                "token relevance vector",
                input.doc.max_len(),
                input.relevance.scores.len(),
            ));
        }
        for (what, set) in [("query", input.query_entities), ("document", input.doc_entities)] {
            if set.scaled_embeddings.cols() != self.config.entity_dim {
                return Err(Error::shape(
                    format!("{what} entity embedding width"),
                    self.config.entity_dim,
                    set.scaled_embeddings.cols(),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass; dropout is active only when `dropout` has an RNG.
    pub fn record(&self, input: &ScoringInput<'_>, dropout: &mut Dropout) -> Result<Recorded> {
        self.check_input(input)?;
        let c = &self.config;
        let s = &self.params;
        let d = c.hidden_dim();
        let mut g = Graph::new();
        let encoder = Encoder::new(c.encoder, "encoder");
        let q_enc = encoder.encode_on(&mut g, s, input.query, dropout)?;
        let d_enc = encoder.encode_on(&mut g, s, input.doc, dropout)?;
        let doc_mask = input.doc.mask();

        let relevance = if c.flags.disable_token_bm25 {
            None
        } else {
            let r = &input.relevance.scores;
            let big_r = Matrix::from_vec(r.len(), d, r.iter().flat_map(|&x| std::iter::repeat(x).take(d)).collect());
            let rv = g.constant(big_r);
            let alpha = g.param(s, BM25_SCALE);
            Some(g.scalar_mul(alpha, rv))
        };

        let active = !c.flags.disable_entities
            && !input.query_entities.is_empty()
            && !input.doc_entities.is_empty();
        let entities = if active {
            let wp = g.param(s, ENTITY_PROJECTION);
            let eq = g.constant(input.query_entities.scaled_embeddings.clone());
            let ed = g.constant(input.doc_entities.scaled_embeddings.clone());
            Some((g.matmul(eq, wp), g.matmul(ed, wp)))
        } else {
            None
        };

        let mut x = q_enc;
        let mut layers = Vec::with_capacity(c.num_cross_layers);
        for l in 0..c.num_cross_layers {
            let p = layer_prefix(l);
            let q = nn::linear(&mut g, s, x, &format!("{p}.token.q"));
            let mut k = nn::linear(&mut g, s, d_enc, &format!("{p}.token.k"));
            let mut v = nn::linear(&mut g, s, d_enc, &format!("{p}.token.v"));
            if let Some(ar) = relevance {
                k = g.add(k, ar);
                v = g.add(v, ar);
            }
            let att = nn::multi_head_attention(&mut g, q, k, v, c.num_heads, Some(&doc_mask))?;
            let a_t = nn::linear(&mut g, s, att.output, &format!("{p}.token.o"));
            let a_t = dropout.apply(&mut g, a_t);

            let (a_et, ee_weights, et_weights) = match entities {
                Some((eq, ed)) => {
                    let ee = entity_attention_on(&mut g, s, &format!("{p}.entity_entity"), eq, ed, c.num_heads)?;
                    let et = entity_attention_on(&mut g, s, &format!("{p}.entity_token"), x, ee.output, c.num_heads)?;
                    let a_et = dropout.apply(&mut g, et.output);
                    (a_et, ee.weights, et.weights)
                }
                None => {
                    let n = g.value(x).rows();
                    (g.constant(Matrix::zeros(n, d)), Vec::new(), Vec::new())
                }
            };

            let f = fusion::fuse_on(&mut g, s, &format!("{p}.fusion"), c.fusion, a_t, a_et, active, dropout)?;
            let h = g.add(x, f.fused);
            let h = nn::layer_norm(&mut g, s, h, &format!("{p}.ln1"));
            let ff = nn::feed_forward(&mut g, s, h, &format!("{p}.ffn"), dropout);
            let ff = dropout.apply(&mut g, ff);
            let o = g.add(h, ff);
            x = nn::layer_norm(&mut g, s, o, &format!("{p}.ln2"));
            layers.push(LayerVars {
                a_t,
                a_et,
                gate: f.gate,
                fused: f.fused,
                token_weights: att.weights,
                ee_weights,
                et_weights,
            });
        }

        let rows: Vec<usize> = (0..input.query.length).collect();
        let mut h = g.mean_rows(x, &rows);
        for b in 0..c.head_blocks {
            let z = nn::linear(&mut g, s, h, &format!("head.block{b}"));
            let z = g.gelu(z);
            let sum = g.add(h, z);
            h = nn::layer_norm(&mut g, s, sum, &format!("head.block{b}.ln"));
        }
        let neural = nn::linear(&mut g, s, h, "head.out");
        let score = if c.flags.document_level_bm25 {
            let bm25 = g.constant(Matrix::scalar(input.doc_bm25));
            let pair = g.hconcat(&[neural, bm25]);
            let w = g.param(s, DOC_BM25_WEIGHT);
            g.matmul(pair, w)
        } else {
            neural
        };
        Ok(Recorded {
            graph: g,
            score,
            neural,
            layers,
            entity_pathway_active: active,
        })
    }

    /// Relevance score with dropout disabled.
    pub fn forward(&self, input: &ScoringInput<'_>) -> Result<f64> {
        Ok(self.record(input, &mut Dropout::disabled())?.score())
    }

    pub fn forward_traced(&self, input: &ScoringInput<'_>) -> Result<ForwardTrace> {
        Ok(self.record(input, &mut Dropout::disabled())?.trace())
    }

    /// Score and `upstream · ∂score/∂θ` for every trainable tensor, with
    /// dropout disabled.
    pub fn backward(&self, input: &ScoringInput<'_>, upstream: f64) -> Result<(f64, Gradients)> {
        let rec = self.record(input, &mut Dropout::disabled())?;
        let grads = rec.graph.backward(rec.score, upstream, &self.params);
        Ok((rec.score(), grads))
    }
}

/// `softmax(X W_q (Y W_k)ᵀ / √d_k) Y W_v` per head, no output projection.
fn entity_attention_on(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    y: Var,
    heads: usize,
) -> Result<nn::Attention> {
    let q = nn::linear(g, store, x, &format!("{prefix}.q"));
    let k = nn::linear(g, store, y, &format!("{prefix}.k"));
    let v = nn::linear(g, store, y, &format!("{prefix}.v"));
    nn::multi_head_attention(g, q, k, v, heads, None)
}

/// `K' = K + αR`, `V' = V + αR` with `R` the relevance vector repeated
/// across columns.
pub fn enhance_kv(k: &Matrix, v: &Matrix, r: &[f64], alpha: f64) -> Result<(Matrix, Matrix)> {
    if k.shape() != v.shape() {
        return Err(Error::shape("keys/values", format!("{:?}", k.shape()), format!("{:?}", v.shape())));
    }
    if r.len() != k.rows() {
        return Err(Error::shape("token relevance vector", k.rows(), r.len()));
    }
    let add = |m: &Matrix| {
        let mut out = m.clone();
        for (i, &ri) in r.iter().enumerate() {
            for x in out.row_mut(i) {
                *x += alpha * ri;
            }
        }
        out
    };
    Ok((add(k), add(v)))
}

/// Multi-head attention of projected queries over enhanced keys/values,
/// followed by the output projection `w_o`.
pub fn token_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    w_o: &Matrix,
    heads: usize,
    mask: &[bool],
) -> Result<Matrix> {
    let mut g = Graph::new();
    let (q, k, v, w) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()), g.constant(w_o.clone()));
    let att = nn::multi_head_attention(&mut g, q, k, v, heads, Some(mask))?;
    let out = g.matmul(att.output, w);
    Ok(g.value(out).clone())
}

/// Query-side attention projections `(W_q, W_k, W_v)`.
#[derive(Debug, Clone, Copy)]
pub struct Projections<'a> {
    pub q: &'a Matrix,
    pub k: &'a Matrix,
    pub v: &'a Matrix,
}

fn projected_attention(x: &Matrix, y: &Matrix, w: Projections<'_>, heads: usize) -> Result<Matrix> {
    let mut store = ParamStore::new();
    store.insert("p.q.w", w.q.clone());
    store.insert("p.k.w", w.k.clone());
    store.insert("p.v.w", w.v.clone());
    let mut g = Graph::new();
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let att = entity_attention_on(&mut g, &store, "p", xv, yv, heads)?;
    Ok(g.value(att.output).clone())
}

/// `A_e` for projected query and document entities; `None` when either
/// side is empty.
pub fn entity_entity_attention(e_q: &Matrix, e_d: &Matrix, w: Projections<'_>, heads: usize) -> Result<Option<Matrix>> {
    if e_q.rows() == 0 || e_d.rows() == 0 {
        return Ok(None);
    }
    projected_attention(e_q, e_d, w, heads).map(Some)
}

/// `A_et`; all zeros when `a_e` is absent.
pub fn entity_token_attention(x: &Matrix, a_e: Option<&Matrix>, w: Projections<'_>, heads: usize) -> Result<Matrix> {
    match a_e {
        Some(a) if a.rows() > 0 => projected_attention(x, a, w, heads),
        _ => Ok(Matrix::zeros(x.rows(), x.cols())),
    }
}

/// Applies fusion kind `kind` with parameters under `prefix` (dropout off).
pub fn fuse(
    kind: FusionKind,
    a_t: &Matrix,
    a_et: &Matrix,
    store: &ParamStore,
    prefix: &str,
    entities_present: bool,
) -> Result<PathwayOutput> {
    let mut g = Graph::new();
    let (t, e) = (g.constant(a_t.clone()), g.constant(a_et.clone()));
    let f = fusion::fuse_on(&mut g, store, prefix, kind, t, e, entities_present, &mut Dropout::disabled())?;
    Ok(PathwayOutput {
        token_pathway: a_t.clone(),
        entity_pathway: a_et.clone(),
        gate: f.gate.map(|v| g.value(v).clone()),
        fused: g.value(f.fused).clone(),
    })
}

/// Fresh fusion parameters of `kind` under `prefix`.
pub fn init_fusion(store: &mut ParamStore, prefix: &str, kind: FusionKind, d: usize, seed: u64) {
    fusion::init(store, prefix, kind, d, &mut ChaCha8Rng::seed_from_u64(seed));
}
