//! Pre-norm transformer building blocks recorded onto a [`Graph`].

use rand::Rng;

use super::params::{ParamId, ParamStore};
use crate::numerics::{Graph, Mask, NumericsError, Var};

/// Builds graph nodes against a parameter store.
pub(crate) struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
    pub train: bool,
}

impl Ctx<'_> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.store.var(self.g, id, self.train)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, frozen: bool) -> Self {
        Self {
            gain: store.constant(format!("{name}.gain"), &[d], 1.0, frozen),
            bias: store.constant(format!("{name}.bias"), &[d], 0.0, frozen),
        }
    }

    pub fn apply(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var, NumericsError> {
        let (g, b) = (cx.p(self.gain), cx.p(self.bias));
        cx.g.layer_norm(x, g, b)
    }
}

/// Multi-head attention projections (no biases, so each head's value path is linear).
#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub n_heads: usize,
}

/// Graph handles needed to rebuild norm-based attention contributions.
#[derive(Clone, Debug)]
pub(crate) struct AttnCapture {
    /// Per head, `rows × cols` attention weights.
    pub alphas: Vec<Var>,
    /// Per head, `cols × d_head` value vectors `v(x_j)`.
    pub values: Vec<Var>,
    pub wo: Var,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        std: f64,
        frozen: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            wq: store.normal(format!("{name}.wq"), &[d, d], std, frozen, rng),
            wk: store.normal(format!("{name}.wk"), &[d, d], std, frozen, rng),
            wv: store.normal(format!("{name}.wv"), &[d, d], std, frozen, rng),
            wo: store.normal(format!("{name}.wo"), &[d, d], std, frozen, rng),
            n_heads,
        }
    }

    /// Queries from `xq`, keys and values from `xkv`.
    pub fn apply(
        &self,
        cx: &mut Ctx<'_>,
        xq: Var,
        xkv: Var,
        mask: Option<&Mask>,
    ) -> Result<(Var, AttnCapture), NumericsError> {
        let (wq, wk, wv, wo) = (cx.p(self.wq), cx.p(self.wk), cx.p(self.wv), cx.p(self.wo));
        let d = cx.g.value(wq).cols();
        let dh = d / self.n_heads;
        let q = cx.g.matmul(xq, wq)?;
        let q = cx.g.scale(q, 1.0 / (dh as f64).sqrt())?;
        let k = cx.g.matmul(xkv, wk)?;
        let v = cx.g.matmul(xkv, wv)?;
        let mut outs = Vec::with_capacity(self.n_heads);
        let mut alphas = Vec::with_capacity(self.n_heads);
        let mut values = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    cx.g.slice_cols(q, h * dh, (h + 1) * dh)?,
                    cx.g.slice_cols(k, h * dh, (h + 1) * dh)?,
                    cx.g.slice_cols(v, h * dh, (h + 1) * dh)?,
                )
            };
            let scores = cx.g.matmul_nt(qh, kh)?;
            let alpha = cx.g.softmax_rows(scores, mask)?;
            outs.push(cx.g.matmul(alpha, vh)?);
            alphas.push(alpha);
            values.push(vh);
        }
        let o = if outs.len() == 1 { outs[0] } else { cx.g.concat_cols(&outs)? };
        let out = cx.g.matmul(o, wo)?;
        Ok((out, AttnCapture { alphas, values, wo }))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        d_ff: usize,
        std: f64,
        frozen: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: store.normal(format!("{name}.w1"), &[d, d_ff], std, frozen, rng),
            b1: store.constant(format!("{name}.b1"), &[d_ff], 0.0, frozen),
            w2: store.normal(format!("{name}.w2"), &[d_ff, d], std, frozen, rng),
            b2: store.constant(format!("{name}.b2"), &[d], 0.0, frozen),
        }
    }

    pub fn apply(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var, NumericsError> {
        let (w1, b1, w2, b2) = (cx.p(self.w1), cx.p(self.b1), cx.p(self.w2), cx.p(self.b2));
        let h = cx.g.matmul(x, w1)?;
        let h = cx.g.add_row(h, b1)?;
        let h = cx.g.gelu(h)?;
        let h = cx.g.matmul(h, w2)?;
        cx.g.add_row(h, b2)
    }
}

/// Self-attention + feed-forward, both pre-norm residual.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub ln_attn: Norm,
    pub attn: Attention,
    pub ln_ffn: Norm,
    pub ffn: FeedForward,
}

pub(crate) struct BlockDims {
    pub d: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub std: f64,
    pub frozen: bool,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, dims: &BlockDims, rng: &mut impl Rng) -> Self {
        let BlockDims {
            d,
            d_ff,
            n_heads,
            std,
            frozen,
        } = *dims;
        Self {
            ln_attn: Norm::new(store, &format!("{name}.ln_attn"), d, frozen),
            attn: Attention::new(store, &format!("{name}.attn"), d, n_heads, std, frozen, rng),
            ln_ffn: Norm::new(store, &format!("{name}.ln_ffn"), d, frozen),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, d_ff, std, frozen, rng),
        }
    }

    pub fn apply(
        &self,
        cx: &mut Ctx<'_>,
        x: Var,
        mask: Option<&Mask>,
    ) -> Result<(Var, AttnCapture), NumericsError> {
        let h = self.ln_attn.apply(cx, x)?;
        let (a, cap) = self.attn.apply(cx, h, h, mask)?;
        let x = cx.g.add(x, a)?;
        let h = self.ln_ffn.apply(cx, x)?;
        let f = self.ffn.apply(cx, h)?;
        Ok((cx.g.add(x, f)?, cap))
    }
}
