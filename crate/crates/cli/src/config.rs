//! Experiment configuration: one TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use regent::embedding::{EncoderConfig, EncoderMode};
use regent::entity::{EntityScorerKind, RankerTrainConfig};
use regent::model::{AblationFlags, FusionKind, RegentConfig};
use regent::training::optim::AdamConfig;
use regent::training::{Selection, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const OUTPUT_DIR_ENV: &str = "REGENT_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// No default: every experiment names its seed.
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub entity_ranker: EntityRankerConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub doc_links: PathBuf,
    #[serde(default)]
    pub query_links: Option<PathBuf>,
    pub entity_embeddings: PathBuf,
    #[serde(default)]
    pub entity_descriptions: Option<PathBuf>,
    /// Built from the corpus when absent.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("regent-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_len: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub encoder: EncoderMode,
    pub cross_layers: usize,
    pub head_blocks: usize,
    pub alpha_init: f64,
    pub fusion: FusionKind,
    /// `full`, `no_entities`, `no_bm25` or `document_level_bm25`.
    pub variant: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_heads: 4,
            num_layers: 2,
            max_len: 512,
            ffn_dim: 256,
            dropout: 0.1,
            encoder: EncoderMode::TrainableTransformer,
            cross_layers: 2,
            head_blocks: 2,
            alpha_init: 0.1,
            fusion: FusionKind::LearnedSigmoid,
            variant: "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// BM25 candidates re-ranked per query.
    pub candidate_depth: usize,
    /// Top documents whose linked entities form the candidate pool.
    pub pool_depth: usize,
    pub top_k_entities: usize,
    pub entity_scorer: EntityScorerKind,
    pub folds: usize,
    pub wig_top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            candidate_depth: 1000,
            pool_depth: 1000,
            top_k_entities: regent::entity::DEFAULT_TOP_K,
            entity_scorer: EntityScorerKind::SupervisedCross,
            folds: 5,
            wig_top_k: regent::eval::DEFAULT_WIG_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub warmup: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub clip: f64,
    pub selection: Selection,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.adam.base_lr,
            warmup: t.adam.warmup_steps,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            clip: t.adam.clip_norm,
            selection: t.selection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntityRankerConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub max_len: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub warmup: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub logistic_epochs: usize,
    pub logistic_lr: f64,
}

impl Default for EntityRankerConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            num_heads: 2,
            num_layers: 1,
            max_len: 32,
            ffn_dim: 64,
            dropout: 0.1,
            lr: 1e-3,
            warmup: 0,
            steps: 200,
            batch_size: 8,
            logistic_epochs: 500,
            logistic_lr: 0.5,
        }
    }
}

/// Empty lists fall back to the single value configured elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<String>,
    pub fusions: Vec<FusionKind>,
    pub scorers: Vec<EntityScorerKind>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: ["full", "no_entities", "no_bm25", "document_level_bm25"].map(String::from).to_vec(),
            fusions: Vec::new(),
            scorers: Vec::new(),
        }
    }
}

/// Settings from the command line, applied over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    /// `dotted.key=value` pairs; values parse as TOML, else as strings.
    pub set: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

const FILE_PATHS: [&str; 10] = [
    "corpus",
    "queries",
    "qrels",
    "doc_links",
    "query_links",
    "entity_embeddings",
    "entity_descriptions",
    "vocab",
    "stopwords",
    "output_dir",
];

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Failure> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Failure::user(format!("empty key in `{key}`")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Failure::user(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path`, resolves its relative paths against the file's
    /// directory, then applies the output-directory variable and `overrides`
    /// (flags win).
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::user(format!("cannot read config {}: {e}", path.display())))?;
        let mut root: toml::Table =
            toml::from_str(&text).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(paths) = root.get_mut("paths").and_then(toml::Value::as_table_mut) {
            for key in FILE_PATHS {
                if let Some(toml::Value::String(p)) = paths.get_mut(key) {
                    *p = base.join(&*p).to_string_lossy().into_owned();
                }
            }
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            set_path(&mut root, "paths.output_dir", toml::Value::String(dir))?;
        }
        for s in &overrides.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Failure::user(format!("override `{s}` is not key=value")))?;
            set_path(&mut root, k.trim(), parse_value(v.trim()))?;
        }
        if let Some(dir) = &overrides.output_dir {
            set_path(&mut root, "paths.output_dir", toml::Value::String(dir.to_string_lossy().into_owned()))?;
        }
        if let Some(seed) = overrides.seed {
            set_path(&mut root, "seed", toml::Value::Integer(seed as i64))?;
        }
        let config: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::user(format!("{}: {}", path.display(), e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let p = &self.paths;
        let required = [&p.corpus, &p.queries, &p.qrels, &p.doc_links, &p.entity_embeddings];
        let optional = [&p.query_links, &p.entity_descriptions, &p.vocab, &p.stopwords];
        for path in required.into_iter().chain(optional.into_iter().flatten()) {
            if !path.is_file() {
                return Err(Failure::user(format!("input file {} does not exist", path.display())));
            }
        }
        AblationFlags::from_variant(&self.model.variant)?;
        for v in &self.ablate.variants {
            AblationFlags::from_variant(v)?;
        }
        self.regent_config(2, 1, self.model.fusion, AblationFlags::FULL).validate()?;
        self.train_config().validate()?;
        if self.pipeline.folds < 3 {
            return Err(Failure::user(format!(
                "pipeline.folds must be at least 3 (test, validation and training folds), got {}",
                self.pipeline.folds
            )));
        }
        if self.pipeline.candidate_depth == 0 || self.pipeline.pool_depth == 0 || self.pipeline.top_k_entities == 0 {
            return Err(Failure::user("candidate_depth, pool_depth and top_k_entities must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags::from_variant(&self.model.variant).expect("validated")
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let m = &self.model;
        EncoderConfig {
            hidden_dim: m.hidden_dim,
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            max_len: m.max_len,
            mode: m.encoder,
            vocab_size,
            ffn_dim: m.ffn_dim,
        }
    }

    pub fn regent_config(&self, vocab_size: usize, entity_dim: usize, fusion: FusionKind, flags: AblationFlags) -> RegentConfig {
        let m = &self.model;
        RegentConfig {
            num_heads: m.num_heads,
            num_cross_layers: m.cross_layers,
            ffn_dim: m.ffn_dim,
            head_blocks: m.head_blocks,
            dropout: m.dropout,
            alpha_init: m.alpha_init,
            fusion,
            flags,
            ..RegentConfig::new(self.encoder_config(vocab_size), entity_dim)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            adam: AdamConfig {
                base_lr: t.lr,
                warmup_steps: t.warmup,
                clip_norm: t.clip,
                ..AdamConfig::default()
            },
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            selection: t.selection,
            seed: regent::training::derive_seed(self.seed, "regent"),
        }
    }

    pub fn ranker_config(&self, vocab_size: usize) -> RankerTrainConfig {
        let r = &self.entity_ranker;
        RankerTrainConfig {
            encoder: EncoderConfig {
                hidden_dim: r.hidden_dim,
                num_layers: r.num_layers,
                num_heads: r.num_heads,
                max_len: r.max_len,
                mode: EncoderMode::TrainableTransformer,
                vocab_size,
                ffn_dim: r.ffn_dim,
            },
            adam: AdamConfig {
                base_lr: r.lr,
                warmup_steps: r.warmup,
                ..AdamConfig::default()
            },
            steps: r.steps,
            batch_size: r.batch_size,
            dropout: r.dropout,
            seed: regent::training::derive_seed(self.seed, "entity_ranker"),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
