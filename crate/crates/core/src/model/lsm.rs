use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{AttnCapture, Attention, Block, BlockDims, Ctx, FeedForward, Norm};
use super::params::{ParamId, ParamStore};
use super::trace::{AttentionTrace, HeadTrace, LayerTrace, SpanKind, SpanMap};
use super::{ModelConfig, ModelError, SpeechSample};
use crate::numerics::{Graph, Mask, NumericsError, Tensor, Var};
use crate::vocab::{TokenId, Vocab, EOS, INST_BEGIN, INST_END};

/// What occupies the leading positions of the LM input.
#[derive(Clone, Copy, Debug)]
pub enum Prefix<'a> {
    /// Frozen-encoder output `H`; the connector runs inside the graph.
    Encoded(&'a Tensor),
    /// Precomputed connector output `Z`.
    Speech(&'a Tensor),
    /// Source tokens embedded as text.
    Text(&'a [TokenId]),
}

/// Token-level layout of one `[prefix; prompt; target]` sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_prefix: usize,
    /// Prefix plus prompt; the first target token is predicted at `n_input - 1`.
    pub n_input: usize,
    /// Tokens following the prefix: markers, instruction, then the target (without EOS).
    pub text_tokens: Vec<TokenId>,
    /// Next-token labels for every position; only `loss_mask` positions are scored.
    pub labels: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.n_prefix + self.text_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct LmOutput {
    pub logits: Tensor,
    pub trace: Option<AttentionTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated tokens, without the terminating EOS.
    pub tokens: Vec<TokenId>,
    pub hit_eos: bool,
    /// One row per decoding step (including the EOS step), columns over the initial input.
    pub trace: AttentionTrace,
}

#[derive(Clone, Debug)]
struct Encoder {
    in_proj: ParamId,
    in_bias: ParamId,
    blocks: Vec<Block>,
    ln_out: Norm,
}

#[derive(Clone, Debug)]
struct QBlock {
    ln_self: Norm,
    self_attn: Attention,
    ln_cross: Norm,
    ln_frames: Norm,
    cross_attn: Attention,
    ln_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct QFormer {
    queries: ParamId,
    frame_pos: ParamId,
    blocks: Vec<QBlock>,
    ln_out: Norm,
    proj: ParamId,
    proj_bias: ParamId,
}

#[derive(Clone, Debug)]
struct Lm {
    tok_emb: ParamId,
    pos_emb: ParamId,
    modality_bias: ParamId,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: ParamId,
}

struct ForwardVars {
    logits: Var,
    hidden: Var,
    captures: Vec<AttnCapture>,
}

/// Frozen speech encoder, window-level Q-Former and decoder-only LM.
#[derive(Clone, Debug)]
pub struct Lsm {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    encoder: Encoder,
    qformer: QFormer,
    lm: Lm,
}

impl Lsm {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let vocab = config.vocab()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let std = config.init_std;

        // Random frozen features: scaled so activations keep unit order.
        let enc_dims = BlockDims {
            d,
            d_ff: config.d_ff,
            n_heads: config.n_heads,
            std: 1.0 / (d as f64).sqrt(),
            frozen: true,
        };
        let encoder = Encoder {
            in_proj: store.normal(
                "encoder.in_proj",
                &[config.feat_dim, d],
                1.0 / (config.feat_dim as f64).sqrt(),
                true,
                &mut rng,
            ),
            in_bias: store.constant("encoder.in_bias", &[d], 0.0, true),
            blocks: (0..config.n_layers_encoder)
                .map(|i| Block::new(&mut store, &format!("encoder.blocks.{i}"), &enc_dims, &mut rng))
                .collect(),
            ln_out: Norm::new(&mut store, "encoder.ln_out", d, true),
        };

        let qformer = QFormer {
            queries: store.normal("qformer.queries", &[config.queries, d], std, false, &mut rng),
            frame_pos: store.normal("qformer.frame_pos", &[config.window, d], std, false, &mut rng),
            blocks: (0..config.n_qformer_blocks)
                .map(|i| {
                    let name = format!("qformer.blocks.{i}");
                    QBlock {
                        ln_self: Norm::new(&mut store, &format!("{name}.ln_self"), d, false),
                        self_attn: Attention::new(
                            &mut store,
                            &format!("{name}.self_attn"),
                            d,
                            config.n_heads,
                            std,
                            false,
                            &mut rng,
                        ),
                        ln_cross: Norm::new(&mut store, &format!("{name}.ln_cross"), d, false),
                        ln_frames: Norm::new(&mut store, &format!("{name}.ln_frames"), d, false),
                        cross_attn: Attention::new(
                            &mut store,
                            &format!("{name}.cross_attn"),
                            d,
                            config.n_heads,
                            std,
                            false,
                            &mut rng,
                        ),
                        ln_ffn: Norm::new(&mut store, &format!("{name}.ln_ffn"), d, false),
                        ffn: FeedForward::new(
                            &mut store,
                            &format!("{name}.ffn"),
                            d,
                            config.d_ff,
                            std,
                            false,
                            &mut rng,
                        ),
                    }
                })
                .collect(),
            ln_out: Norm::new(&mut store, "qformer.ln_out", d, false),
            proj: store.normal("qformer.proj", &[d, d], std, false, &mut rng),
            proj_bias: store.constant("qformer.proj_bias", &[d], 0.0, false),
        };

        let lm_dims = BlockDims {
            d,
            d_ff: config.d_ff,
            n_heads: config.n_heads,
            std,
            frozen: false,
        };
        let lm = Lm {
            tok_emb: store.normal("lm.tok_emb", &[vocab.size as usize, d], std, false, &mut rng),
            pos_emb: store.normal("lm.pos_emb", &[config.max_seq, d], std, false, &mut rng),
            modality_bias: store.normal("lm.modality_bias", &[d], std, false, &mut rng),
            blocks: (0..config.n_layers_lm)
                .map(|i| Block::new(&mut store, &format!("lm.blocks.{i}"), &lm_dims, &mut rng))
                .collect(),
            ln_f: Norm::new(&mut store, "lm.ln_f", d, false),
            head: store.normal("lm.head", &[d, vocab.size as usize], std, false, &mut rng),
        };

        Ok(Self {
            config,
            vocab,
            params: store,
            encoder,
            qformer,
            lm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Checksum of the frozen speech-encoder parameters.
    pub fn encoder_checksum(&self) -> String {
        self.params.frozen_checksum()
    }

    fn encoder_graph(&self, cx: &mut Ctx<'_>, frames: &Tensor) -> Result<Var, NumericsError> {
        let t = frames.rows();
        let d = self.config.d_model;
        let x = cx.g.constant(frames.clone());
        let w = cx.p(self.encoder.in_proj);
        let b = cx.p(self.encoder.in_bias);
        let x = cx.g.matmul(x, w)?;
        let x = cx.g.add_row(x, b)?;
        let pos = cx.g.constant(sinusoid(t, d));
        let mut x = cx.g.add(x, pos)?;
        for block in &self.encoder.blocks {
            x = block.apply(cx, x, None)?.0;
        }
        self.encoder.ln_out.apply(cx, x)
    }

    /// Contextual frame representations `H` (`T × d_model`) from the frozen encoder.
    pub fn encode_speech(&self, sample: &SpeechSample) -> Result<Tensor, ModelError> {
        if sample.frames.cols() != self.config.feat_dim {
            return Err(ModelError::Numerics(NumericsError::ShapeMismatch {
                op: "encode_speech",
                left: sample.frames.shape().to_vec(),
                right: vec![self.config.feat_dim],
            }));
        }
        let mut g = Graph::new();
        let mut cx = Ctx {
            g: &mut g,
            store: &self.params,
            train: false,
        };
        let h = self.encoder_graph(&mut cx, &sample.frames)?;
        Ok(g.value(h).clone())
    }

    fn qformer_graph(&self, cx: &mut Ctx<'_>, h: &Tensor) -> Result<Var, NumericsError> {
        let t = h.rows();
        let l = self.config.window;
        let n = self.config.queries;
        let windows = t.div_ceil(l);
        let rows = windows * n;
        let window_of_frame = |f: usize| f / l;
        let window_of_query = |r: usize| r / n;

        let hv = cx.g.constant(h.clone());
        let fp = cx.p(self.qformer.frame_pos);
        let frame_ids: Vec<usize> = (0..t).map(|f| f % l).collect();
        let fp = cx.g.gather_rows(fp, &frame_ids)?;
        let frames = cx.g.add(hv, fp)?;

        let qp = cx.p(self.qformer.queries);
        let query_ids: Vec<usize> = (0..rows).map(|r| r % n).collect();
        let mut q = cx.g.gather_rows(qp, &query_ids)?;

        let self_mask = Mask::from_fn(rows, rows, |i, j| window_of_query(i) == window_of_query(j));
        let cross_mask = Mask::from_fn(rows, t, |i, f| window_of_query(i) == window_of_frame(f));
        for block in &self.qformer.blocks {
            let hq = block.ln_self.apply(cx, q)?;
            let (a, _) = block.self_attn.apply(cx, hq, hq, Some(&self_mask))?;
            q = cx.g.add(q, a)?;
            let hq = block.ln_cross.apply(cx, q)?;
            let kv = block.ln_frames.apply(cx, frames)?;
            let (a, _) = block.cross_attn.apply(cx, hq, kv, Some(&cross_mask))?;
            q = cx.g.add(q, a)?;
            let hq = block.ln_ffn.apply(cx, q)?;
            let f = block.ffn.apply(cx, hq)?;
            q = cx.g.add(q, f)?;
        }
        let z = self.qformer.ln_out.apply(cx, q)?;
        let (w, b) = (cx.p(self.qformer.proj), cx.p(self.qformer.proj_bias));
        let z = cx.g.matmul(z, w)?;
        cx.g.add_row(z, b)
    }

    /// Speech tokens `Z`: `⌈T/L⌉·N` rows, windows in time order.
    pub fn qformer_connect(&self, h: &Tensor) -> Result<Tensor, ModelError> {
        if h.rows() == 0 {
            return Err(ModelError::EmptyInput);
        }
        let mut g = Graph::new();
        let mut cx = Ctx {
            g: &mut g,
            store: &self.params,
            train: false,
        };
        let z = self.qformer_graph(&mut cx, h)?;
        Ok(g.value(z).clone())
    }

    /// Encoder followed by connector.
    pub fn speech_tokens(&self, sample: &SpeechSample) -> Result<Tensor, ModelError> {
        let h = self.encode_speech(sample)?;
        self.qformer_connect(&h)
    }

    fn prefix_len(&self, prefix: &Prefix<'_>) -> usize {
        match prefix {
            Prefix::Encoded(h) => self.config.speech_tokens(h.rows()),
            Prefix::Speech(z) => z.rows(),
            Prefix::Text(t) => t.len(),
        }
    }

    /// Sequence layout for a prefix of `n_prefix` positions.
    pub fn layout(&self, n_prefix: usize, instruction: &[TokenId], target: &[TokenId]) -> Result<Layout, ModelError> {
        let mut text_tokens = Vec::with_capacity(instruction.len() + target.len() + 2);
        text_tokens.push(INST_BEGIN);
        text_tokens.extend_from_slice(instruction);
        text_tokens.push(INST_END);
        let n_input = n_prefix + text_tokens.len();
        text_tokens.extend_from_slice(target);
        let len = n_prefix + text_tokens.len();
        if len > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.config.max_seq,
            });
        }
        let mut labels = vec![0usize; len];
        let mut loss_mask = vec![false; len];
        for (k, t) in target.iter().chain(std::iter::once(&EOS)).enumerate() {
            let pos = n_input - 1 + k;
            if pos < len {
                labels[pos] = *t as usize;
                loss_mask[pos] = true;
            }
        }
        Ok(Layout {
            n_prefix,
            n_input,
            text_tokens,
            labels,
            loss_mask,
        })
    }

    fn span_map(&self, n_prefix: usize, n_instruction: usize, len: usize) -> SpanMap {
        let mut kinds = Vec::with_capacity(len);
        let mut template = Vec::with_capacity(len);
        let marker = if self.config.template_in_instruction {
            SpanKind::Instruction
        } else {
            SpanKind::Other
        };
        for _ in 0..n_prefix {
            kinds.push(SpanKind::Speech);
            template.push(false);
        }
        kinds.push(marker);
        template.push(true);
        for _ in 0..n_instruction {
            kinds.push(SpanKind::Instruction);
            template.push(false);
        }
        kinds.push(marker);
        template.push(true);
        while kinds.len() < len {
            kinds.push(SpanKind::Other);
            template.push(false);
        }
        SpanMap {
            kinds,
            template,
            n_input: n_prefix + n_instruction + 2,
        }
    }

    fn forward_graph(
        &self,
        cx: &mut Ctx<'_>,
        prefix: Prefix<'_>,
        text_tokens: &[TokenId],
    ) -> Result<ForwardVars, NumericsError> {
        let tok_emb = cx.p(self.lm.tok_emb);
        let prefix_var = match prefix {
            Prefix::Encoded(h) => {
                let z = self.qformer_graph(cx, h)?;
                let bias = cx.p(self.lm.modality_bias);
                cx.g.add_row(z, bias)?
            }
            Prefix::Speech(z) => {
                let z = cx.g.constant(z.clone());
                let bias = cx.p(self.lm.modality_bias);
                cx.g.add_row(z, bias)?
            }
            Prefix::Text(tokens) => {
                let ids: Vec<usize> = tokens.iter().map(|t| *t as usize).collect();
                cx.g.gather_rows(tok_emb, &ids)?
            }
        };
        let ids: Vec<usize> = text_tokens.iter().map(|t| *t as usize).collect();
        let text = cx.g.gather_rows(tok_emb, &ids)?;
        let x = cx.g.concat_rows(&[prefix_var, text])?;
        let n = cx.g.value(x).rows();
        let pos = cx.p(self.lm.pos_emb);
        let pos = cx.g.slice_rows(pos, 0, n)?;
        let mut x = cx.g.add(x, pos)?;
        let mask = Mask::causal(n, n, 0);
        let mut captures = Vec::with_capacity(self.lm.blocks.len());
        for block in &self.lm.blocks {
            let (y, cap) = block.apply(cx, x, Some(&mask))?;
            x = y;
            captures.push(cap);
        }
        let hidden = self.lm.ln_f.apply(cx, x)?;
        let head = cx.p(self.lm.head);
        let logits = cx.g.matmul(hidden, head)?;
        Ok(ForwardVars {
            logits,
            hidden,
            captures,
        })
    }

    fn check_prefix(&self, prefix: &Prefix<'_>) -> Result<(), ModelError> {
        let n = self.prefix_len(prefix);
        if n == 0 {
            return Err(ModelError::EmptyInput);
        }
        if let Prefix::Text(tokens) = prefix {
            if let Some(t) = tokens.iter().find(|t| **t >= self.vocab.size) {
                return Err(ModelError::TokenOutOfRange(*t));
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        match tokens.iter().find(|t| **t >= self.vocab.size) {
            Some(t) => Err(ModelError::TokenOutOfRange(*t)),
            None => Ok(()),
        }
    }

    /// Records the masked next-token loss for one example onto `g`.
    ///
    /// `labels` overrides the layout's labels when given; only loss-mask
    /// positions are ever read.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        prefix: Prefix<'_>,
        instruction: &[TokenId],
        target: &[TokenId],
        labels: Option<&[usize]>,
        train: bool,
    ) -> Result<Var, ModelError> {
        self.check_prefix(&prefix)?;
        self.check_tokens(instruction)?;
        self.check_tokens(target)?;
        let layout = self.layout(self.prefix_len(&prefix), instruction, target)?;
        let mut cx = Ctx {
            g,
            store: &self.params,
            train,
        };
        let fv = self.forward_graph(&mut cx, prefix, &layout.text_tokens)?;
        let labels = labels.unwrap_or(&layout.labels);
        Ok(g.masked_cross_entropy(fv.logits, labels, &layout.loss_mask)?)
    }

    /// Logits for `[prefix; prompt(instruction); target]`, optionally capturing attention.
    pub fn lm_forward(
        &self,
        prefix: Prefix<'_>,
        instruction: &[TokenId],
        target: &[TokenId],
        capture: bool,
    ) -> Result<LmOutput, ModelError> {
        self.check_prefix(&prefix)?;
        self.check_tokens(instruction)?;
        self.check_tokens(target)?;
        let n_prefix = self.prefix_len(&prefix);
        let layout = self.layout(n_prefix, instruction, target)?;
        let mut g = Graph::new();
        let mut cx = Ctx {
            g: &mut g,
            store: &self.params,
            train: false,
        };
        let fv = self.forward_graph(&mut cx, prefix, &layout.text_tokens)?;
        let logits = g.value(fv.logits).clone();
        let trace = capture.then(|| {
            let len = layout.len();
            let layers = fv
                .captures
                .iter()
                .map(|cap| LayerTrace {
                    heads: cap
                        .alphas
                        .iter()
                        .zip(&cap.values)
                        .map(|(a, v)| HeadTrace {
                            alpha: g.value(*a).clone(),
                            values: g.value(*v).clone(),
                        })
                        .collect(),
                    w_o: g.value(cap.wo).clone(),
                })
                .collect();
            AttentionTrace {
                layers,
                spans: self.span_map(n_prefix, instruction.len(), len),
                row_positions: (0..len).collect(),
            }
        });
        Ok(LmOutput { logits, trace })
    }

    /// Mean over input positions of the final-layer hidden states (after the last norm).
    pub fn mean_final_hidden(&self, prefix: Prefix<'_>, instruction: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.check_prefix(&prefix)?;
        self.check_tokens(instruction)?;
        let layout = self.layout(self.prefix_len(&prefix), instruction, &[])?;
        let mut g = Graph::new();
        let mut cx = Ctx {
            g: &mut g,
            store: &self.params,
            train: false,
        };
        let fv = self.forward_graph(&mut cx, prefix, &layout.text_tokens)?;
        let h = g.value(fv.hidden);
        let d = h.cols();
        let mut mean = vec![0.0; d];
        for i in 0..h.rows() {
            for (m, v) in mean.iter_mut().zip(h.row(i)) {
                *m += v;
            }
        }
        let n = h.rows() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Greedy decoding; ties go to the lowest token id. Stops after EOS or `max_new` steps.
    pub fn generate(&self, prefix: Prefix<'_>, instruction: &[TokenId], max_new: usize) -> Result<Generation, ModelError> {
        if max_new == 0 {
            return Err(ModelError::NothingToGenerate);
        }
        self.check_prefix(&prefix)?;
        self.check_tokens(instruction)?;
        let z_owned;
        let prefix = match prefix {
            Prefix::Encoded(h) => {
                z_owned = self.qformer_connect(h)?;
                Prefix::Speech(&z_owned)
            }
            p => p,
        };
        let n_prefix = self.prefix_len(&prefix);
        let n_input = n_prefix + instruction.len() + 2;
        if n_input > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: n_input,
                max: self.config.max_seq,
            });
        }
        let max_new = max_new.min(self.config.max_seq - n_input + 1);
        let n_layers = self.lm.blocks.len();
        let mut rows: Vec<Vec<Vec<Vec<f64>>>> = vec![vec![Vec::new(); self.config.n_heads]; n_layers];
        let mut layer_values: Vec<Vec<Tensor>> = Vec::new();
        let mut layer_wo: Vec<Tensor> = Vec::new();
        let mut generated = Vec::new();
        let mut row_positions = Vec::new();
        let mut hit_eos = false;

        for step in 0..max_new {
            let layout = self.layout(n_prefix, instruction, &generated)?;
            let mut g = Graph::new();
            let mut cx = Ctx {
                g: &mut g,
                store: &self.params,
                train: false,
            };
            let fv = self.forward_graph(&mut cx, prefix, &layout.text_tokens)?;
            let last = layout.len() - 1;
            for (l, cap) in fv.captures.iter().enumerate() {
                for (h, a) in cap.alphas.iter().enumerate() {
                    rows[l][h].push(g.value(*a).row(last)[..n_input].to_vec());
                }
                if step == 0 {
                    let values = cap
                        .values
                        .iter()
                        .map(|v| {
                            let t = g.value(*v);
                            Tensor::matrix(n_input, t.cols(), t.data()[..n_input * t.cols()].to_vec())
                        })
                        .collect();
                    layer_values.push(values);
                    layer_wo.push(g.value(cap.wo).clone());
                }
            }
            row_positions.push(last);
            let next = argmax_lowest(g.value(fv.logits).row(last)) as TokenId;
            if next == EOS {
                hit_eos = true;
                break;
            }
            generated.push(next);
        }

        let n_rows = row_positions.len();
        let layers = rows
            .into_iter()
            .zip(layer_values)
            .zip(layer_wo)
            .map(|((heads, values), w_o)| LayerTrace {
                heads: heads
                    .into_iter()
                    .zip(values)
                    .map(|(r, v)| HeadTrace {
                        alpha: Tensor::matrix(n_rows, n_input, r.concat()),
                        values: v,
                    })
                    .collect(),
                w_o,
            })
            .collect();
        Ok(Generation {
            tokens: generated,
            hit_eos,
            trace: AttentionTrace {
                layers,
                spans: self.span_map(n_prefix, instruction.len(), n_input),
                row_positions,
            },
        })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sinusoid(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(t, d, data)
}

impl Lsm {
    /// Worst relative error between the analytic loss gradient and five-point
    /// finite differences, over every trainable parameter value.
    pub fn finite_diff_check(
        &self,
        prefix: Prefix<'_>,
        instruction: &[TokenId],
        target: &[TokenId],
        eps: f64,
    ) -> Result<f64, ModelError> {
        let mut g = Graph::new().with_finite_checks(true);
        let loss = self.loss_graph(&mut g, prefix, instruction, target, None, true)?;
        let grads = g.backward(loss)?;
        let analytic: std::collections::HashMap<usize, Vec<f64>> =
            grads.params().map(|(k, v)| (k, v.to_vec())).collect();
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        for (id, p) in self.params.iter() {
            if p.frozen {
                continue;
            }
            let zeros;
            let a = match analytic.get(&id.index()) {
                Some(a) => a.as_slice(),
                None => {
                    zeros = vec![0.0; p.tensor.len()];
                    &zeros
                }
            };
            let err = crate::numerics::finite_diff_error_fourth_order(a, p.tensor.data(), eps, |x| {
                probe.params.set_tensor(id, p.tensor.with_data(x.to_vec()));
                let mut g = Graph::new();
                let l = probe
                    .loss_graph(&mut g, prefix, instruction, target, None, false)
                    .map_err(|e| match e {
                        ModelError::Numerics(n) => n,
                        other => panic!("unexpected error in probe: {other}"),
                    })?;
                Ok(g.value(l).item())
            })?;
            probe.params.set_tensor(id, p.tensor.clone());
            worst = worst.max(err);
        }
        Ok(worst)
    }
}
