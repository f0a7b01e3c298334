//! Norm-based attention information flow and speech/text representation alignment.

mod alignment;
mod flow;

pub use alignment::{alignment_from_states, cosine, pca_2d, repr_alignment, AlignmentReport, MIN_PAIRS};
pub use flow::{
    attn_contribution, average_flow, bin_layers, bin_ranges, flow_metrics, flow_report, trace_flow, ExampleFlow,
    FlowMetrics, FlowOptions, FlowReport, HeadReduction, LayerFlow, SpanOptions,
};

use crate::model::{ModelError, SpanKind};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("trace has no captured attention for layer {layer} at the requested cell")]
    MissingCapture { layer: usize },
    #[error("trace has no generated steps")]
    NoGeneratedTokens,
    #[error("no {0:?} positions to average")]
    EmptySpan(SpanKind),
    #[error("instruction and speech contributions are both zero")]
    ZeroFlow,
    #[error("cannot split {layers} layers into {bins} bins")]
    TooFewLayers { layers: usize, bins: usize },
    #[error("alignment needs at least 10 pairs, got {0}")]
    TooFewPairs(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
mod tests;
