//! Self-describing binary checkpoints: a kind tag, a JSON configuration and
//! named tensors with their shapes. Integers and floats are little-endian.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::autodiff::ParamStore;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::embedding::{Encoder, EncoderConfig};
use crate::entity::CrossEncoderScorer;
use crate::model::{RegentConfig, RegentModel};
use crate::text::Vocab;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"RGNTCKPT";
const VERSION: u32 = 1;

pub const REGENT_KIND: &str = "regent";
pub const CROSS_ENCODER_KIND: &str = "entity_cross_encoder";

#[derive(Serialize, serde::Deserialize)]
struct CrossEncoderConfig {
    encoder: EncoderConfig,
    prefix: String,
    vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new<C: Serialize>(kind: &str, config: &C, params: ParamStore) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            params,
        })
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(BufWriter::new(out));
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.str(&self.kind)?;
        w.str(&serde_json::to_string(&self.config)?)?;
        w.u64(self.params.len() as u64)?;
        for (name, m) in self.params.iter() {
            w.str(name)?;
            w.u32(u32::from(!self.params.is_trainable(name)))?;
            w.u64(m.rows() as u64)?;
            w.u64(m.cols() as u64)?;
            for &x in m.data() {
                w.f64(x)?;
            }
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(BufReader::new(input));
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let kind = r.str()?;
        let config = serde_json::from_str(&r.str()?)?;
        let n = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let frozen = match r.u32()? {
                0 => false,
                1 => true,
                other => return Err(Error::Corrupt(format!("bad frozen flag {other} on `{name}`"))),
            };
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l <= 1 << 32)
                .ok_or_else(|| Error::Corrupt(format!("implausible shape {rows}x{cols} for `{name}`")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if params.contains(&name) {
                return Err(Error::Corrupt(format!("duplicate tensor `{name}`")));
            }
            params.insert(name.clone(), Matrix::from_vec(rows, cols, data));
            if frozen {
                params.freeze(&name);
            }
        }
        Ok(Self { kind, config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

impl RegentModel {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(REGENT_KIND, &self.config, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != REGENT_KIND {
            return Err(Error::Config(format!(
                "checkpoint holds a `{}` model, expected `{REGENT_KIND}`",
                ckpt.kind
            )));
        }
        let config: RegentConfig = ckpt.config_as()?;
        let model = Self {
            config,
            params: ckpt.params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl CrossEncoderScorer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config = CrossEncoderConfig {
            encoder: self.encoder.config,
            prefix: self.encoder.prefix.clone(),
            vocab: self.vocab.tokens().to_vec(),
        };
        Checkpoint::new(CROSS_ENCODER_KIND, &config, self.params.clone())
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CROSS_ENCODER_KIND {
            return Err(Error::Config(format!(
                "checkpoint holds a `{}` model, expected `{CROSS_ENCODER_KIND}`",
                ckpt.kind
            )));
        }
        let config: CrossEncoderConfig = ckpt.config_as()?;
        let encoder = Encoder::new(config.encoder, config.prefix);
        encoder.validate(&ckpt.params)?;
        Ok(Self {
            encoder,
            params: ckpt.params,
            vocab: Vocab::from_tokens(config.vocab)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::TinyFixture;
    use crate::model::{AblationFlags, FusionKind};

    #[test]
    fn model_round_trip_is_exact() {
        let fx = TinyFixture::new(FusionKind::AttentionBased, AblationFlags::DOCUMENT_LEVEL_BM25, 4).unwrap();
        let mut bytes = Vec::new();
        fx.model.to_checkpoint().unwrap().write_to(&mut bytes).unwrap();
        let back = RegentModel::from_checkpoint(Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, fx.model);
        assert_eq!(back.forward(&fx.input()).unwrap(), fx.model.forward(&fx.input()).unwrap());
        let mut again = Vec::new();
        back.to_checkpoint().unwrap().write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn cross_encoder_round_trip() {
        let vocab = Vocab::build(["cat", "play"]);
        let config = EncoderConfig {
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            max_len: 12,
            mode: crate::embedding::EncoderMode::TrainableTransformer,
            vocab_size: vocab.len(),
            ffn_dim: 16,
        };
        let model = CrossEncoderScorer::init(config, vocab, 3).unwrap();
        let mut bytes = Vec::new();
        model.to_checkpoint().unwrap().write_to(&mut bytes).unwrap();
        let back = CrossEncoderScorer::from_checkpoint(Checkpoint::read_from(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back.score("cat", "Play").unwrap(), model.score("cat", "Play").unwrap());
    }

    #[test]
    fn frozen_flags_survive() {
        let mut params = ParamStore::new();
        params.insert("a", Matrix::zeros(2, 3));
        params.insert("b", Matrix::scalar(1.5));
        params.freeze("a");
        let ckpt = Checkpoint::new("test", &serde_json::json!({"x": 1}), params).unwrap();
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert!(!back.params.is_trainable("a"));
    }

    #[test]
    fn wrong_kind_and_truncation_are_rejected() {
        let ckpt = Checkpoint::new("entity_ranker", &0, ParamStore::new()).unwrap();
        assert!(matches!(RegentModel::from_checkpoint(ckpt), Err(Error::Config(_))));
        let fx = TinyFixture::new(FusionKind::Additive, AblationFlags::FULL, 1).unwrap();
        let mut bytes = Vec::new();
        fx.model.to_checkpoint().unwrap().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }
}
