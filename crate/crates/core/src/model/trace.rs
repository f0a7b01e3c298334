use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpanKind {
    /// Connector outputs (or source text on the text path).
    Speech,
    Instruction,
    Other,
}

/// Role of every position of the initial input (and, for full-sequence traces, beyond it).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanMap {
    pub kinds: Vec<SpanKind>,
    /// Prompt marker positions; they carry a [`SpanKind`] too, chosen by
    /// `ModelConfig::template_in_instruction`.
    pub template: Vec<bool>,
    /// Length of the initial input (prefix plus prompt), before any target token.
    pub n_input: usize,
}

impl SpanMap {
    pub fn count(&self, kind: SpanKind) -> usize {
        self.kinds.iter().filter(|k| **k == kind).count()
    }

    pub fn positions(&self, kind: SpanKind) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, k)| **k == kind)
            .map(|(i, _)| i)
    }

    pub fn truncated(&self, n: usize) -> SpanMap {
        SpanMap {
            kinds: self.kinds[..n].to_vec(),
            template: self.template[..n].to_vec(),
            n_input: self.n_input.min(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    /// `rows × cols` attention weights.
    pub alpha: Tensor,
    /// `cols × d_head` value-transformed inputs `v(x_j)`.
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub heads: Vec<HeadTrace>,
    /// Full `d × d` output projection; head `h` uses rows `h·d_head .. (h+1)·d_head`.
    pub w_o: Tensor,
}

impl LayerTrace {
    pub fn d_head(&self) -> usize {
        self.heads.first().map_or(0, |h| h.values.cols())
    }

    pub fn d_model(&self) -> usize {
        self.w_o.cols()
    }
}

/// Attention weights and value paths captured while running the LM.
///
/// For [`super::Lsm::lm_forward`] traces, rows are every position and columns
/// every position. For [`super::Lsm::generate`] traces, row `m` is the position
/// that produced the `m`-th generated token and columns are restricted to the
/// initial input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<LayerTrace>,
    pub spans: SpanMap,
    /// Sequence position of each row.
    pub row_positions: Vec<usize>,
}

impl AttentionTrace {
    pub fn n_rows(&self) -> usize {
        self.row_positions.len()
    }

    pub fn n_cols(&self) -> usize {
        self.layers
            .first()
            .and_then(|l| l.heads.first())
            .map_or(0, |h| h.alpha.cols())
    }
}
