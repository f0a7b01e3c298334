//! Instruction pool, oracle targets and corpus manifests.

mod corpus;
mod oracle;
mod pool;

pub use corpus::{
    build_corpus, self_power_target, CorpusConfig, CorpusManifest, ExampleRecord, ManifestHeader, Provenance,
    TargetMode,
};
pub use oracle::{Oracle, KEYWORDS, LENGTH_FACTOR};
pub use pool::{build_pool, sample_instruction, InstructionPool, PoolSpec, Task, TaskSpec};

use crate::model::ModelError;
use crate::vocab::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("task {task} repeats instruction instance {instance:?}")]
    DuplicateInstance { task: String, instance: Vec<TokenId> },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Parse(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
