//! Speech LM: frozen encoder, window-level Q-Former connector and a causal decoder.

mod checkpoint;
mod config;
mod layers;
mod lsm;
mod params;
mod speech;
mod trace;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::ModelConfig;
pub use lsm::{argmax_lowest, Generation, Layout, LmOutput, Lsm, Prefix};
pub use params::{Param, ParamId, ParamStore};
pub use speech::{featurize_speech, token_voice, SpeechSample};
pub use trace::{AttentionTrace, HeadTrace, LayerTrace, SpanKind, SpanMap};

use crate::numerics::NumericsError;
use crate::vocab::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty input")]
    EmptyInput,
    #[error("sequence of {len} positions exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token {0} is outside the vocabulary")]
    TokenOutOfRange(TokenId),
    #[error("max_new must be at least 1")]
    NothingToGenerate,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
