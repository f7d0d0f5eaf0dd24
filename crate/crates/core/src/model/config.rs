use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Full self-attention over `[visual; label slots]`, classifier on the
    /// last `max_seq_len` positions.
    LinearHead,
    /// Causal transformer decoder cross-attending to `[visual; label slots]`.
    ArDecoder,
}

impl std::str::FromStr for DecoderKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear_head" => Ok(Self::LinearHead),
            "ar_decoder" => Ok(Self::ArDecoder),
            _ => Err(ModelError::Config(format!("unknown decoder kind `{s}`"))),
        }
    }
}

/// Architecture of a [`super::ModelBundle`]. Serialized as JSON next to
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub decoder_kind: DecoderKind,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_true")]
    pub learnable_pad: bool,
    /// Add the slot's positional embedding on top of the pad vector in
    /// masked slots. Off: the pad vector replaces the whole row.
    #[serde(default)]
    pub pad_positional: bool,
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 128,
            patch_height: 8,
            patch_width: 8,
            embed_dim: 64,
            encoder_depth: 2,
            encoder_heads: 4,
            decoder_kind: DecoderKind::LinearHead,
            decoder_depth: 2,
            decoder_heads: 4,
            max_seq_len: 10,
            vocab_size: 39,
            seed: 0,
            mlp_ratio: 4,
            learnable_pad: true,
            pad_positional: false,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_height) * (self.width / self.patch_width)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_height * self.patch_width
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.patch_height == 0
            || self.patch_width == 0
            || self.height % self.patch_height != 0
            || self.width % self.patch_width != 0
            || self.height == 0
            || self.width == 0
        {
            return bad(format!(
                "image {}x{} is not divisible into {}x{} patches",
                self.height, self.width, self.patch_height, self.patch_width
            ));
        }
        for heads in [self.encoder_heads, self.decoder_heads] {
            if heads == 0 || self.embed_dim % heads != 0 {
                return bad(format!(
                    "embed_dim {} must be divisible by head count {heads}",
                    self.embed_dim
                ));
            }
        }
        if self.max_seq_len < 3 {
            return bad(format!("max_seq_len must be >= 3, got {}", self.max_seq_len));
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size must be >= 4, got {}", self.vocab_size));
        }
        if self.mlp_ratio == 0 || self.embed_dim == 0 {
            return bad("embed_dim and mlp_ratio must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_patch_count() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let heads = ModelConfig {
            encoder_heads: 3,
            ..ModelConfig::default()
        };
        assert!(heads.validate().is_err());
        let patch = ModelConfig {
            patch_width: 7,
            ..ModelConfig::default()
        };
        assert!(patch.validate().is_err());
        let seq = ModelConfig {
            max_seq_len: 2,
            ..ModelConfig::default()
        };
        assert!(seq.validate().is_err());
    }

    #[test]
    fn json_keys_follow_field_names() {
        let v = serde_json::to_value(ModelConfig::default()).unwrap();
        assert_eq!(v["decoder_kind"], "linear_head");
        assert_eq!(v["embed_dim"], 64);
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, ModelConfig::default());
    }
}
