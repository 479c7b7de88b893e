use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the tiny encoder-decoder backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Must match the vocabulary the model is trained with.
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    /// Decoder length limit, sized to the corpus summary lengths.
    pub max_tgt_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            max_src_len: 128,
            max_tgt_len: 40,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 {
            return Err(Error::Config(format!(
                "vocab_size {} is too small (4 ids are reserved)",
                self.vocab_size
            )));
        }
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_is_valid_once_vocab_is_set() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_err());
        cfg.vocab_size = 32;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            vocab_size: 32,
            d_model: 62,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
