use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::vocab::Vocab;

/// Architecture and initialization settings for [`super::Lsm`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub n_content: u32,
    pub n_intent: u32,
    pub n_sentiment: u32,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers_lm: usize,
    pub n_layers_encoder: usize,
    pub n_qformer_blocks: usize,
    /// Frames per Q-Former window (L).
    pub window: usize,
    /// Learned queries per window (N).
    pub queries: usize,
    /// Acoustic frames emitted per token (r).
    pub frames_per_token: usize,
    pub feat_dim: usize,
    pub max_seq: usize,
    pub init_std: f64,
    /// Whether the prompt markers belong to the instruction span of a trace.
    pub template_in_instruction: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let vocab = Vocab::toy();
        Self {
            vocab_size: vocab.size,
            n_content: vocab.n_content,
            n_intent: vocab.n_intent,
            n_sentiment: vocab.n_sentiment,
            d_model: 64,
            n_heads: 2,
            d_ff: 128,
            n_layers_lm: 4,
            n_layers_encoder: 2,
            n_qformer_blocks: 2,
            window: 17,
            queries: 1,
            frames_per_token: 17,
            feat_dim: 16,
            max_seq: 32,
            init_std: 0.1,
            template_in_instruction: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks (d=16, 2 layers, 2 heads).
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            n_layers_lm: 2,
            n_layers_encoder: 1,
            n_qformer_blocks: 1,
            window: 4,
            queries: 1,
            frames_per_token: 3,
            feat_dim: 6,
            max_seq: 24,
            init_std: 0.3,
            ..Self::default()
        }
    }

    pub fn vocab(&self) -> Result<Vocab, ModelError> {
        Vocab::new(self.vocab_size, self.n_content, self.n_intent, self.n_sentiment)
            .map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of speech tokens the connector emits for `frames` encoder frames.
    pub fn speech_tokens(&self, frames: usize) -> usize {
        frames.div_ceil(self.window) * self.queries
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.queries == 0 {
            return bad("queries must be at least 1");
        }
        if self.frames_per_token == 0 || self.feat_dim == 0 || self.d_ff == 0 {
            return bad("frames_per_token, feat_dim and d_ff must be positive");
        }
        if self.n_layers_lm == 0 || self.n_qformer_blocks == 0 {
            return bad("the LM and connector need at least one layer");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        self.vocab()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_single_query_17_frame_windows() {
        let c = ModelConfig::default();
        assert_eq!((c.queries, c.window), (1, 17));
        c.validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn speech_token_count_is_ceiling() {
        let c = ModelConfig::default();
        assert_eq!(c.speech_tokens(34), 2);
        assert_eq!(c.speech_tokens(17), 1);
        assert_eq!(c.speech_tokens(35), 3);
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
