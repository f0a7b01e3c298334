use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{build_corpus, build_pool, CorpusConfig, PoolSpec, TargetMode};
use crate::exec::Exec;
use crate::model::{AttentionTrace, HeadTrace, LayerTrace, Lsm, ModelConfig, SpanKind, SpanMap};
use crate::numerics::Tensor;
use crate::vocab::Vocab;

fn random_trace(rng: &mut impl Rng, rows: usize, cols: usize, layers: usize, heads: usize, dh: usize) -> AttentionTrace {
    let d = heads * dh;
    let uniform = |n: usize, rng: &mut dyn FnMut() -> f64| (0..n).map(|_| rng()).collect::<Vec<f64>>();
    let layers = (0..layers)
        .map(|_| LayerTrace {
            heads: (0..heads)
                .map(|_| {
                    let mut alpha = uniform(rows * cols, &mut || rng.random_range(0.0..1.0));
                    for r in 0..rows {
                        let s: f64 = alpha[r * cols..(r + 1) * cols].iter().sum();
                        alpha[r * cols..(r + 1) * cols].iter_mut().for_each(|a| *a /= s);
                    }
                    HeadTrace {
                        alpha: Tensor::matrix(rows, cols, alpha),
                        values: Tensor::matrix(cols, dh, uniform(cols * dh, &mut || rng.random_range(-1.0..1.0))),
                    }
                })
                .collect(),
            w_o: Tensor::matrix(d, d, uniform(d * d, &mut || rng.random_range(-1.0..1.0))),
        })
        .collect();
    let kinds = (0..cols)
        .map(|j| match j % 3 {
            0 => SpanKind::Speech,
            1 => SpanKind::Instruction,
            _ => SpanKind::Other,
        })
        .collect();
    AttentionTrace {
        layers,
        spans: SpanMap {
            kinds,
            template: vec![false; cols],
            n_input: cols,
        },
        row_positions: (0..rows).collect(),
    }
}

/// Concatenate the weighted head values and project once, as the attention layer itself does.
fn oracle_contribution(t: &AttentionTrace, layer: usize, m: usize, j: usize, per_head: bool) -> f64 {
    let lt = &t.layers[layer];
    let dh = lt.heads[0].values.cols();
    let d = lt.w_o.cols();
    let project = |c: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|o| (0..c.len()).map(|k| c[k] * lt.w_o.at(k, o)).sum())
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if per_head {
        (0..lt.heads.len())
            .map(|h| {
                let mut c = vec![0.0; d];
                for k in 0..dh {
                    c[h * dh + k] = lt.heads[h].alpha.at(m, j) * lt.heads[h].values.at(j, k);
                }
                norm(&project(&c))
            })
            .sum()
    } else {
        let mut c = vec![0.0; d];
        for (h, head) in lt.heads.iter().enumerate() {
            for k in 0..dh {
                c[h * dh + k] = head.alpha.at(m, j) * head.values.at(j, k);
            }
        }
        norm(&project(&c))
    }
}

#[test]
fn one_hot_attention_isolates_one_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = random_trace(&mut rng, 1, 3, 1, 1, 4);
    t.layers[0].heads[0].alpha = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]);
    let lt = &t.layers[0];
    let v = lt.heads[0].values.row(1);
    let vw: Vec<f64> = (0..4).map(|o| (0..4).map(|k| v[k] * lt.w_o.at(k, o)).sum()).collect();
    let expect = vw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let got = attn_contribution(&t, 0, 0, 1, HeadReduction::SumThenNorm).unwrap();
    assert!((got - expect).abs() < 1e-12);
    assert_eq!(attn_contribution(&t, 0, 0, 0, HeadReduction::SumThenNorm).unwrap(), 0.0);
    assert_eq!(attn_contribution(&t, 0, 0, 2, HeadReduction::SumThenNorm).unwrap(), 0.0);
}

#[test]
fn zero_values_contribute_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = random_trace(&mut rng, 2, 3, 1, 2, 2);
    for h in &mut t.layers[0].heads {
        h.values = Tensor::zeros(&[3, 2]);
    }
    for r in [HeadReduction::SumThenNorm, HeadReduction::NormThenSum] {
        assert!(average_flow(&t, 0, r).unwrap().iter().all(|a| *a == 0.0));
    }
}

#[test]
fn contributions_match_concat_then_project_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(2..5);
        let t = random_trace(&mut rng, rows, cols, 3, 2, 3);
        for l in 0..3 {
            for m in 0..rows {
                for j in 0..cols {
                    let a = attn_contribution(&t, l, m, j, HeadReduction::SumThenNorm).unwrap();
                    assert!((a - oracle_contribution(&t, l, m, j, false)).abs() < 1e-10);
                    let b = attn_contribution(&t, l, m, j, HeadReduction::NormThenSum).unwrap();
                    assert!((b - oracle_contribution(&t, l, m, j, true)).abs() < 1e-10);
                    assert!(b + 1e-12 >= a);
                }
            }
        }
    }
}

#[test]
fn average_flow_is_mean_over_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random_trace(&mut rng, 4, 4, 1, 2, 2);
    let a = average_flow(&t, 0, HeadReduction::SumThenNorm).unwrap();
    for j in 0..4 {
        let mut sum = 0.0;
        for m in 0..4 {
            sum += oracle_contribution(&t, 0, m, j, false);
        }
        assert!((a[j] - sum / 4.0).abs() < 1e-10);
    }
    let single = random_trace(&mut rng, 1, 3, 1, 2, 2);
    let a1 = average_flow(&single, 0, HeadReduction::SumThenNorm).unwrap();
    for j in 0..3 {
        assert_eq!(a1[j], attn_contribution(&single, 0, 0, j, HeadReduction::SumThenNorm).unwrap());
    }
}

#[test]
fn constant_contributions_average_to_themselves() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = random_trace(&mut rng, 3, 2, 1, 1, 2);
    t.layers[0].heads[0].alpha = Tensor::filled(&[3, 2], 0.5);
    let a = average_flow(&t, 0, HeadReduction::SumThenNorm).unwrap();
    for (j, aj) in a.iter().enumerate() {
        assert!((aj - attn_contribution(&t, 0, 1, j, HeadReduction::SumThenNorm).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn missing_layer_and_empty_trace_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random_trace(&mut rng, 2, 3, 1, 1, 2);
    assert!(matches!(
        attn_contribution(&t, 3, 0, 0, HeadReduction::SumThenNorm),
        Err(AnalysisError::MissingCapture { layer: 3 })
    ));
    let empty = random_trace(&mut rng, 0, 3, 1, 1, 2);
    assert!(matches!(
        average_flow(&empty, 0, HeadReduction::SumThenNorm),
        Err(AnalysisError::NoGeneratedTokens)
    ));
}

fn spans(kinds: &[SpanKind], template: &[bool]) -> SpanMap {
    SpanMap {
        kinds: kinds.to_vec(),
        template: template.to_vec(),
        n_input: kinds.len(),
    }
}

#[test]
fn flow_metric_examples() {
    use SpanKind::*;
    let s = spans(&[Speech, Speech, Speech, Instruction, Other], &[false; 5]);
    let uniform = flow_metrics(&[0.3; 5], &s, SpanOptions::default()).unwrap();
    assert!((uniform.eta - 0.5).abs() < 1e-15);
    let only_inst = flow_metrics(&[0.0, 0.0, 0.0, 2.0, 9.0], &s, SpanOptions::default()).unwrap();
    assert_eq!(only_inst.eta, 1.0);
    let m = flow_metrics(&[1.0, 2.0, 6.0, 1.0, 100.0], &s, SpanOptions::default()).unwrap();
    assert_eq!((m.s_speech, m.s_instruction), (3.0, 1.0));
    assert_eq!(m.eta, 0.25);
    let no_inst = spans(&[Speech, Other], &[false; 2]);
    assert!(matches!(
        flow_metrics(&[1.0, 1.0], &no_inst, SpanOptions::default()),
        Err(AnalysisError::EmptySpan(SpanKind::Instruction))
    ));
}

#[test]
fn template_positions_are_excluded_by_default() {
    use SpanKind::*;
    let s = spans(&[Speech, Instruction, Instruction, Instruction], &[false, true, false, true]);
    let a = [1.0, 10.0, 2.0, 10.0];
    let excl = flow_metrics(&a, &s, SpanOptions::default()).unwrap();
    assert_eq!(excl.s_instruction, 2.0);
    let incl = flow_metrics(&a, &s, SpanOptions { include_template: true }).unwrap();
    assert!((incl.s_instruction - 22.0 / 3.0).abs() < 1e-12);
}

#[test]
fn random_flow_metrics_match_hand_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let t = random_trace(&mut rng, 3, 4, 3, 2, 2);
        for l in 0..3 {
            let a: Vec<f64> = (0..4)
                .map(|j| (0..3).map(|m| oracle_contribution(&t, l, m, j, false)).sum::<f64>() / 3.0)
                .collect();
            // columns 0 and 3 are speech, column 1 is instruction
            let s_s = (a[0] + a[3]) / 2.0;
            let s_i = a[1];
            let got = trace_flow(&t, HeadReduction::SumThenNorm, SpanOptions::default()).unwrap();
            assert!((got[l].metrics.s_speech - s_s).abs() < 1e-10);
            assert!((got[l].metrics.s_instruction - s_i).abs() < 1e-10);
            assert!((got[l].metrics.eta - s_i / (s_i + s_s)).abs() < 1e-10);
        }
    }
}

#[test]
fn binning_examples() {
    let sizes = |n, b| bin_ranges(n, b).unwrap().iter().map(|r| r.len()).collect::<Vec<_>>();
    assert_eq!(sizes(12, 6), vec![2; 6]);
    assert_eq!(sizes(32, 6), vec![6, 6, 5, 5, 5, 5]);
    assert_eq!(bin_layers(&[0.3; 9], 6).unwrap(), vec![0.3; 6]);
    assert_eq!(bin_layers(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap(), vec![2.0, 4.5]);
    assert!(matches!(
        bin_ranges(4, 6),
        Err(AnalysisError::TooFewLayers { layers: 4, bins: 6 })
    ));
}

#[test]
fn alignment_errors_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = |n: usize| (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let (s, t) = (pts(12), pts(12));
    let r = alignment_from_states(0, (0..12).collect(), &s, &t, true).unwrap();
    assert!(r.paired.iter().chain(&r.control).all(|c| (-1.0..=1.0).contains(c)));
    assert_eq!(r.projection.as_ref().unwrap().len(), 24);
    assert!((r.gap - (r.mean_paired - r.mean_control)).abs() < 1e-15);
    assert!(matches!(
        alignment_from_states(0, (0..5).collect(), &s[..5], &t[..5], false),
        Err(AnalysisError::TooFewPairs(5))
    ));
}

#[test]
fn paired_mean_ignores_pair_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pts = |n: usize| (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let (s, t) = (pts(15), pts(15));
    let a = alignment_from_states(0, (0..15).collect(), &s, &t, false).unwrap();
    let order: Vec<usize> = (0..15).rev().collect();
    let s2: Vec<_> = order.iter().map(|&i| s[i].clone()).collect();
    let t2: Vec<_> = order.iter().map(|&i| t[i].clone()).collect();
    let b = alignment_from_states(0, order.iter().map(|&i| i as u64).collect(), &s2, &t2, false).unwrap();
    assert!((a.mean_paired - b.mean_paired).abs() < 1e-12);
}

#[test]
fn pca_recovers_a_line_and_maximizes_variance() {
    let dir = [0.6, 0.0, -0.8];
    let pts: Vec<Vec<f64>> = (0..10)
        .map(|i| dir.iter().map(|d| d * (i as f64 - 4.5)).collect())
        .collect();
    let proj = pca_2d(&pts);
    for (i, p) in proj.iter().enumerate() {
        assert!((p[0].abs() - (i as f64 - 4.5).abs()).abs() < 1e-9);
        assert!(p[1].abs() < 1e-9);
    }
    // first-axis variance beats any random direction
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud: Vec<Vec<f64>> = (0..40)
        .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)])
        .collect();
    let proj = pca_2d(&cloud);
    let var1: f64 = proj.iter().map(|p| p[0] * p[0]).sum();
    let mean: Vec<f64> = (0..3).map(|k| cloud.iter().map(|p| p[k]).sum::<f64>() / 40.0).collect();
    for _ in 0..200 {
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let var: f64 = cloud
            .iter()
            .map(|p| ((0..3).map(|k| (p[k] - mean[k]) * u[k]).sum::<f64>() / n).powi(2))
            .sum();
        assert!(var <= var1 + 1e-9);
    }
}

fn tiny_setup() -> (Lsm, Vec<crate::datagen::ExampleRecord>) {
    let m = Lsm::new(ModelConfig {
        n_layers_lm: 6,
        ..ModelConfig::tiny()
    })
    .unwrap();
    let pool = build_pool(&PoolSpec::default(), &Vocab::toy()).unwrap();
    let cfg = CorpusConfig {
        size: 12,
        min_len: 3,
        max_len: 4,
        ..CorpusConfig::default()
    };
    let c = build_corpus(&cfg, &pool, TargetMode::Oracle, Exec::Sequential).unwrap();
    (m, c.records)
}

#[test]
fn untrained_model_reports_every_layer_and_bin() {
    let (m, records) = tiny_setup();
    let opts = FlowOptions {
        bins: 6,
        ..FlowOptions::default()
    };
    let r = flow_report(&m, &records, 0.1, 0, &opts, Exec::Parallel).unwrap();
    assert_eq!(r.layer_eta.len(), 6);
    assert_eq!(r.bin_eta.len(), 6);
    assert!(r.layer_eta.iter().chain(&r.layer_eta_micro).all(|e| (0.0..=1.0).contains(e)));
    for e in &r.examples {
        assert!(e.steps >= 1);
        for l in &e.layers {
            assert!(l.a.iter().all(|a| *a >= 0.0));
        }
    }
    let again = flow_report(&m, &records, 0.1, 0, &opts, Exec::Sequential).unwrap();
    assert_eq!(r.layers_csv(), again.layers_csv());
    assert_eq!(r.bins_csv(), again.bins_csv());
    assert_eq!(r.layers_csv().lines().count(), 2 + 12 * 6);
}

#[test]
fn speech_and_text_paths_differ() {
    let (m, records) = tiny_setup();
    let a = repr_alignment(&m, &records, 0.0, 0, true, Exec::Parallel).unwrap();
    assert!(a.paired.iter().all(|c| *c < 1.0));
    let b = repr_alignment(&m, &records, 0.0, 0, true, Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn eta_is_scale_invariant(a in prop::collection::vec(0.01f64..10.0, 6), k in 0.01f64..100.0) {
        use SpanKind::*;
        let s = spans(&[Speech, Speech, Instruction, Instruction, Other, Speech], &[false; 6]);
        let e1 = flow_metrics(&a, &s, SpanOptions::default()).unwrap().eta;
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let e2 = flow_metrics(&scaled, &s, SpanOptions::default()).unwrap().eta;
        prop_assert!((e1 - e2).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&e1));
    }

    #[test]
    fn bins_partition_layers(n in 1usize..80, b in 1usize..12) {
        prop_assume!(n >= b);
        let r = bin_ranges(n, b).unwrap();
        prop_assert_eq!(r.len(), b);
        prop_assert_eq!(r[0].start, 0);
        prop_assert_eq!(r[b - 1].end, n);
        for w in r.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].len() >= w[1].len());
            prop_assert!(w[0].len() - w[1].len() <= 1);
        }
    }
}
