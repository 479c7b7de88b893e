//! Versioned JSON checkpoint: config, seed, vocabulary and every named
//! parameter tensor. Serialization is key-sorted so identical state
//! produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::text::Vocabulary;

use super::config::ModelConfig;
use super::transformer::Model;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    /// Vocabulary tokens in id order (reserved ids first).
    pub vocab: Vec<String>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_parts(
        config: &ModelConfig,
        seed: u64,
        vocab: &Vocabulary,
        params: &ParamSet,
    ) -> Self {
        let tensors = params
            .iter()
            .map(|(name, p)| (name.to_string(), p.value.clone()))
            .collect();
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: config.clone(),
            seed,
            vocab: (0..vocab.len()).map(|i| vocab.token(i).to_string()).collect(),
            params: tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let content = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&content)
            .map_err(|e| Error::data(format!("bad checkpoint {}: {e}", path.display())))?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint schema_version {}",
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuild the model, parameter set and vocabulary.
    pub fn instantiate(&self) -> Result<(Model, ParamSet, Vocabulary)> {
        let mut params = ParamSet::new();
        for (name, tensor) in &self.params {
            params.register(name, tensor.clone());
        }
        let model = Model::bind(self.config.clone(), &mut params)?;
        let vocab = Vocabulary::from_tokens(self.vocab.clone());
        if vocab.len() != self.config.vocab_size {
            return Err(Error::data(format!(
                "vocabulary size {} does not match config vocab_size {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok((model, params, vocab))
    }
}
