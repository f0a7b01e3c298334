use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::datagen::{ExampleRecord, LENGTH_FACTOR};
use crate::exec::Exec;
use crate::model::{AttentionTrace, Lsm, Prefix, SpanKind, SpanMap};
use crate::numerics::Tensor;

/// How per-head transformed vectors are combined into one contribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadReduction {
    /// `‖Σ_h α^h v^h W^O_h‖`.
    #[default]
    SumThenNorm,
    /// `Σ_h ‖α^h v^h W^O_h‖`.
    NormThenSum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanOptions {
    /// Count prompt markers toward whatever span the trace assigns them.
    pub include_template: bool,
}

/// Per-head `v(x_j) · W^O_h` for every column `j`: `heads × cols × d`.
fn transformed_values(trace: &AttentionTrace, layer: usize) -> Result<Vec<Tensor>, AnalysisError> {
    let lt = trace.layers.get(layer).ok_or(AnalysisError::MissingCapture { layer })?;
    if lt.heads.is_empty() {
        return Err(AnalysisError::MissingCapture { layer });
    }
    let dh = lt.d_head();
    let d = lt.d_model();
    Ok(lt
        .heads
        .iter()
        .enumerate()
        .map(|(h, head)| {
            let cols = head.values.rows();
            let mut out = vec![0.0; cols * d];
            for j in 0..cols {
                let v = head.values.row(j);
                for (k, vk) in v.iter().enumerate() {
                    let w = lt.w_o.row(h * dh + k);
                    for (o, wv) in out[j * d..(j + 1) * d].iter_mut().zip(w) {
                        *o += vk * wv;
                    }
                }
            }
            Tensor::matrix(cols, d, out)
        })
        .collect())
}

fn contribution_from(
    trace: &AttentionTrace,
    layer: usize,
    tv: &[Tensor],
    m: usize,
    j: usize,
    reduction: HeadReduction,
) -> f64 {
    let heads = &trace.layers[layer].heads;
    match reduction {
        HeadReduction::SumThenNorm => {
            let d = tv[0].cols();
            let mut acc = vec![0.0; d];
            for (head, t) in heads.iter().zip(tv) {
                let a = head.alpha.at(m, j);
                for (s, x) in acc.iter_mut().zip(t.row(j)) {
                    *s += a * x;
                }
            }
            acc.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
        HeadReduction::NormThenSum => heads
            .iter()
            .zip(tv)
            .map(|(head, t)| {
                let a = head.alpha.at(m, j);
                t.row(j).iter().map(|x| (a * x) * (a * x)).sum::<f64>().sqrt()
            })
            .sum(),
    }
}

fn check_cell(trace: &AttentionTrace, layer: usize, m: usize, j: usize) -> Result<(), AnalysisError> {
    if layer >= trace.layers.len() || m >= trace.n_rows() || j >= trace.n_cols() {
        return Err(AnalysisError::MissingCapture { layer });
    }
    Ok(())
}

/// `a(m, j)`: norm of the attention-weighted, output-projected value of input `j` at step `m`.
pub fn attn_contribution(
    trace: &AttentionTrace,
    layer: usize,
    m: usize,
    j: usize,
    reduction: HeadReduction,
) -> Result<f64, AnalysisError> {
    check_cell(trace, layer, m, j)?;
    let tv = transformed_values(trace, layer)?;
    Ok(contribution_from(trace, layer, &tv, m, j, reduction))
}

/// `A_j`: mean of `a(m, j)` over generated steps, for every initial-input position `j`.
pub fn average_flow(trace: &AttentionTrace, layer: usize, reduction: HeadReduction) -> Result<Vec<f64>, AnalysisError> {
    let rows = trace.n_rows();
    if rows == 0 {
        return Err(AnalysisError::NoGeneratedTokens);
    }
    let tv = transformed_values(trace, layer)?;
    let cols = trace.spans.n_input.min(trace.n_cols());
    Ok((0..cols)
        .map(|j| {
            (0..rows)
                .map(|m| contribution_from(trace, layer, &tv, m, j, reduction))
                .sum::<f64>()
                / rows as f64
        })
        .collect())
}

/// Settings for [`flow_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowOptions {
    pub bins: usize,
    pub reduction: HeadReduction,
    pub spans: SpanOptions,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            bins: 4,
            reduction: HeadReduction::default(),
            spans: SpanOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowMetrics {
    pub s_instruction: f64,
    pub s_speech: f64,
    /// `S_instruction / (S_instruction + S_speech)`.
    pub eta: f64,
}

/// Span means of `a` and the instruction share.
pub fn flow_metrics(a: &[f64], spans: &SpanMap, opts: SpanOptions) -> Result<FlowMetrics, AnalysisError> {
    let mean = |kind: SpanKind| {
        let (sum, n) = a
            .iter()
            .enumerate()
            .filter(|(j, _)| spans.kinds[*j] == kind && (opts.include_template || !spans.template[*j]))
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            Err(AnalysisError::EmptySpan(kind))
        } else {
            Ok(sum / n as f64)
        }
    };
    let s_instruction = mean(SpanKind::Instruction)?;
    let s_speech = mean(SpanKind::Speech)?;
    let total = s_instruction + s_speech;
    if !(total > 0.0) {
        return Err(AnalysisError::ZeroFlow);
    }
    Ok(FlowMetrics {
        s_instruction,
        s_speech,
        eta: s_instruction / total,
    })
}

/// Contiguous layer groups whose sizes differ by at most one, larger groups first.
pub fn bin_ranges(n_layers: usize, bins: usize) -> Result<Vec<Range<usize>>, AnalysisError> {
    if bins == 0 || n_layers < bins {
        return Err(AnalysisError::TooFewLayers { layers: n_layers, bins });
    }
    let (base, extra) = (n_layers / bins, n_layers % bins);
    let mut start = 0;
    Ok((0..bins)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Mean of `values` within each bin of [`bin_ranges`].
pub fn bin_layers(values: &[f64], bins: usize) -> Result<Vec<f64>, AnalysisError> {
    Ok(bin_ranges(values.len(), bins)?
        .into_iter()
        .map(|r| values[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerFlow {
    /// `A_j` over initial-input positions.
    pub a: Vec<f64>,
    pub metrics: FlowMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFlow {
    pub id: u64,
    pub task: String,
    /// Decoding steps averaged over (generated tokens plus the EOS step, if reached).
    pub steps: usize,
    pub layers: Vec<LayerFlow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowReport {
    pub seed: u64,
    pub examples: Vec<ExampleFlow>,
    pub bins: Vec<Range<usize>>,
    /// Per layer, the mean over examples of per-example η.
    pub layer_eta: Vec<f64>,
    /// Per layer, `ΣS_I / (ΣS_I + ΣS_S)` pooled over examples.
    pub layer_eta_micro: Vec<f64>,
    pub bin_eta: Vec<f64>,
    pub bin_eta_micro: Vec<f64>,
}

impl FlowReport {
    pub fn from_examples(seed: u64, examples: Vec<ExampleFlow>, bins: usize) -> Result<Self, AnalysisError> {
        let n_layers = examples.first().map_or(0, |e| e.layers.len());
        let ranges = bin_ranges(n_layers, bins)?;
        let n = examples.len() as f64;
        let mut layer_eta = vec![0.0; n_layers];
        let mut si = vec![0.0; n_layers];
        let mut ss = vec![0.0; n_layers];
        for e in &examples {
            for (l, lf) in e.layers.iter().enumerate() {
                layer_eta[l] += lf.metrics.eta / n;
                si[l] += lf.metrics.s_instruction;
                ss[l] += lf.metrics.s_speech;
            }
        }
        let layer_eta_micro: Vec<f64> = si.iter().zip(&ss).map(|(i, s)| i / (i + s)).collect();
        Ok(Self {
            seed,
            bin_eta: bin_layers(&layer_eta, bins)?,
            bin_eta_micro: bin_layers(&layer_eta_micro, bins)?,
            bins: ranges,
            layer_eta,
            layer_eta_micro,
            examples,
        })
    }

    /// η of the last bin (the deepest layers).
    pub fn final_bin_eta(&self) -> f64 {
        *self.bin_eta.last().expect("at least one bin")
    }

    pub fn mean_bin_eta(&self) -> f64 {
        self.bin_eta.iter().sum::<f64>() / self.bin_eta.len() as f64
    }

    fn bin_of(&self, layer: usize) -> usize {
        self.bins.iter().position(|r| r.contains(&layer)).expect("layer binned")
    }

    /// One row per (example, layer).
    pub fn layers_csv(&self) -> String {
        let mut s = format!("# seed={}\nexample_id,task,layer,bin,S_instruction,S_speech,eta\n", self.seed);
        for e in &self.examples {
            for (l, lf) in e.layers.iter().enumerate() {
                let m = lf.metrics;
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    e.id,
                    e.task,
                    l,
                    self.bin_of(l),
                    m.s_instruction,
                    m.s_speech,
                    m.eta
                )
                .expect("string write");
            }
        }
        s
    }

    /// Aggregates per layer and per bin.
    pub fn bins_csv(&self) -> String {
        let mut s = format!("# seed={}\nlevel,index,first_layer,last_layer,eta_macro,eta_micro\n", self.seed);
        for l in 0..self.layer_eta.len() {
            writeln!(s, "layer,{l},{l},{l},{},{}", self.layer_eta[l], self.layer_eta_micro[l]).expect("string write");
        }
        for (b, r) in self.bins.iter().enumerate() {
            writeln!(
                s,
                "bin,{b},{},{},{},{}",
                r.start,
                r.end - 1,
                self.bin_eta[b],
                self.bin_eta_micro[b]
            )
            .expect("string write");
        }
        s
    }
}

/// Flow metrics for every layer of one captured generation.
pub fn trace_flow(trace: &AttentionTrace, reduction: HeadReduction, opts: SpanOptions) -> Result<Vec<LayerFlow>, AnalysisError> {
    (0..trace.layers.len())
        .map(|l| {
            let a = average_flow(trace, l, reduction)?;
            let metrics = flow_metrics(&a, &trace.spans, opts)?;
            Ok(LayerFlow { a, metrics })
        })
        .collect()
}

/// Generates from speech for each record and reports the per-layer information flow.
pub fn flow_report(
    model: &Lsm,
    records: &[ExampleRecord],
    sigma: f64,
    seed: u64,
    opts: &FlowOptions,
    exec: Exec,
) -> Result<FlowReport, AnalysisError> {
    let examples = exec
        .map(records, |_, r| -> Result<ExampleFlow, AnalysisError> {
            let s = r.speech(model.config(), sigma)?;
            let h = model.encode_speech(&s)?;
            let g = model.generate(Prefix::Encoded(&h), &r.instruction, LENGTH_FACTOR * r.source.len())?;
            Ok(ExampleFlow {
                id: r.id,
                task: r.task.clone(),
                steps: g.trace.n_rows(),
                layers: trace_flow(&g.trace, opts.reduction, opts.spans)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    FlowReport::from_examples(seed, examples, opts.bins)
}
