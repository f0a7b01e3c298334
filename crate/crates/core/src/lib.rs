// Index loops mirror the math in the numeric kernels; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod datagen;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod training;
pub mod vocab;
