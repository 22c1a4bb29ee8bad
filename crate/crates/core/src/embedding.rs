//! Token encoders and pre-computed entity embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Dropout};
use crate::tensor::Matrix;
use crate::text::AnalyzedDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Untrained embedding lookup, no position information.
    FrozenLookup,
    /// Token embeddings plus sinusoidal positions, followed by
    /// `num_layers` post-norm self-attention blocks.
    TrainableTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_len: usize,
    pub mode: EncoderMode,
    pub vocab_size: usize,
    pub ffn_dim: usize,
}

impl EncoderConfig {
    /// d = 64, 2 layers, 4 heads, 512 positions.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            max_len: 512,
            mode: EncoderMode::TrainableTransformer,
            vocab_size,
            ffn_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "encoder hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("encoder max_len must be at least 2".into()));
        }
        Ok(())
    }
}

/// Token encoder whose weights live under `prefix` in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub prefix: String,
}

impl Encoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Self {
        Self {
            config,
            prefix: prefix.into(),
        }
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.config.validate()?;
        let EncoderConfig {
            hidden_dim: d,
            vocab_size,
            ffn_dim,
            ..
        } = self.config;
        let emb = self.name("tok_emb");
        nn::init_matrix(store, &emb, vocab_size, d, d, rng);
        match self.config.mode {
            EncoderMode::FrozenLookup => store.freeze(&emb),
            EncoderMode::TrainableTransformer => {
                for l in 0..self.config.num_layers {
                    let p = self.name(&format!("l{l}"));
                    for proj in ["q", "k", "v", "o"] {
                        nn::init_linear(store, &format!("{p}.attn.{proj}"), d, d, false, rng);
                    }
                    nn::init_layer_norm(store, &format!("{p}.ln1"), d);
                    nn::init_feed_forward(store, &format!("{p}.ffn"), d, ffn_dim, rng);
                    nn::init_layer_norm(store, &format!("{p}.ln2"), d);
                }
            }
        }
        Ok(())
    }

    /// Fails when any tensor is missing or shaped differently from the config.
    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        self.config.validate()?;
        let EncoderConfig {
            hidden_dim: d,
            vocab_size,
            ffn_dim,
            ..
        } = self.config;
        nn::expect_shape(store, &self.name("tok_emb"), (vocab_size, d))?;
        if self.config.mode == EncoderMode::TrainableTransformer {
            for l in 0..self.config.num_layers {
                let p = self.name(&format!("l{l}"));
                for proj in ["q", "k", "v", "o"] {
                    nn::expect_shape(store, &format!("{p}.attn.{proj}.w"), (d, d))?;
                }
                nn::expect_shape(store, &format!("{p}.ffn.in.w"), (d, ffn_dim))?;
                nn::expect_shape(store, &format!("{p}.ffn.out.w"), (ffn_dim, d))?;
                for ln in ["ln1", "ln2"] {
                    nn::expect_shape(store, &format!("{p}.{ln}.gain"), (1, d))?;
                }
            }
        }
        Ok(())
    }

    /// Records the encoder on `g`; the result is `max_len × d`.
    pub fn encode_on(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &AnalyzedDocument,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        if tokens.max_len() != self.config.max_len {
            return Err(Error::shape(
                format!("encoding `{}`", tokens.doc_id),
                format!("{} positions", self.config.max_len),
                tokens.max_len(),
            ));
        }
        let mut x = g.embed(store, &self.name("tok_emb"), &tokens.subwords)?;
        if self.config.mode == EncoderMode::FrozenLookup {
            return Ok(x);
        }
        let pe = g.constant(positional_encoding(self.config.max_len, self.config.hidden_dim));
        x = g.add(x, pe);
        let mask = tokens.mask();
        for l in 0..self.config.num_layers {
            let p = self.name(&format!("l{l}"));
            let q = nn::linear(g, store, x, &format!("{p}.attn.q"));
            let k = nn::linear(g, store, x, &format!("{p}.attn.k"));
            let v = nn::linear(g, store, x, &format!("{p}.attn.v"));
            let att = nn::multi_head_attention(g, q, k, v, self.config.num_heads, Some(&mask))?;
            let a = nn::linear(g, store, att.output, &format!("{p}.attn.o"));
            let a = dropout.apply(g, a);
            let h = g.add(x, a);
            let h = nn::layer_norm(g, store, h, &format!("{p}.ln1"));
            let f = nn::feed_forward(g, store, h, &format!("{p}.ffn"), dropout);
            let f = dropout.apply(g, f);
            let o = g.add(h, f);
            x = nn::layer_norm(g, store, o, &format!("{p}.ln2"));
        }
        Ok(x)
    }
}

/// Encodes one token sequence with the `encoder` weights in `params`.
pub fn encode(config: &EncoderConfig, params: &ParamStore, tokens: &AnalyzedDocument) -> Result<Matrix> {
    let encoder = Encoder::new(*config, "encoder");
    encoder.validate(params)?;
    let mut g = Graph::new();
    let out = encoder.encode_on(&mut g, params, tokens, &mut Dropout::disabled())?;
    Ok(g.value(out).clone())
}

/// Sinusoidal positions: `sin(p / 10000^(2i/d))` on even columns, `cos` on odd.
pub fn positional_encoding(max_len: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(max_len, d);
    for pos in 0..max_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe[(pos, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Pre-computed entity vectors of a shared dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityEmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EntityEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Config("empty entity id".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::shape(format!("embedding of `{id}`"), self.dim, vector.len()));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Rows for `ids` in order; fails listing every missing id.
    pub fn lookup(&self, ids: &[String]) -> Result<Matrix> {
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !self.entries.contains_key(*id))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingEntities(missing));
        }
        let mut m = Matrix::zeros(ids.len(), self.dim);
        for (i, id) in ids.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&self.entries[id]);
        }
        Ok(m)
    }

    /// Word2vec text format: a `count dim` header, then `id v1 … v_dim` lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "missing `count dim` header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (count, dim) = match fields.as_slice() {
            [c, d] => match (parse_usize(c), parse_usize(d)) {
                (Some(c), Some(d)) => (c, d),
                _ => return Err(bad(1, format!("bad header `{header}`"))),
            },
            _ => return Err(bad(1, format!("bad header `{header}`"))),
        };
        let mut table = Self::new(dim);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-blank line");
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(n + 1, format!("bad number: {e}")))?;
            if values.len() != dim {
                return Err(bad(n + 1, format!("expected {dim} values, found {}", values.len())));
            }
            table.entries.insert(id.to_string(), values);
        }
        if table.len() != count {
            return Err(bad(1, format!("header declares {count} vectors, found {}", table.len())));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (id, v) in &self.entries {
            out.push_str(id);
            for x in v {
                out.push(' ');
                out.push_str(&format!("{x}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EntityEmbeddingTable> {
    let path = path.as_ref();
    EntityEmbeddingTable::parse(&std::fs::read_to_string(path)?, path)
}

/// Row `j` is `table[ids[j]] · W_p`.
pub fn project_entities(
    table: &EntityEmbeddingTable,
    ids: &[String],
    projection: &Matrix,
) -> Result<Matrix> {
    if projection.rows() != table.dim() {
        return Err(Error::shape("entity projection rows", table.dim(), projection.rows()));
    }
    Ok(table.lookup(ids)?.matmul(projection))
}
