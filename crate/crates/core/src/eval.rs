//! Token-level WER and exact-match accuracy over held-out manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::datagen::{CorpusManifest, InstructionPool, LENGTH_FACTOR};
use crate::exec::Exec;
use crate::model::{Lsm, ModelError, Prefix};
use crate::vocab::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("{outputs} outputs for {references} references")]
    CountMismatch { outputs: usize, references: usize },
    #[error("test ids {test:?} overlap training ids {train:?}")]
    OverlapDetected { test: (u64, u64), train: (u64, u64) },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length; may exceed 1.
pub fn wer(hypothesis: &[TokenId], reference: &[TokenId]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Fraction of outputs exactly equal to their reference.
pub fn task_accuracy(outputs: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> Result<f64, EvalError> {
    if outputs.len() != references.len() {
        return Err(EvalError::CountMismatch {
            outputs: outputs.len(),
            references: references.len(),
        });
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let hits = outputs.iter().zip(references).filter(|(o, r)| o == r).count();
    Ok(hits as f64 / outputs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: u64,
    pub task: String,
    pub output: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskMetric {
    pub task: String,
    /// `"wer"` or `"accuracy"`.
    pub metric: &'static str,
    pub value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub metrics: Vec<TaskMetric>,
    /// Exact-match rate over every non-ASR example.
    pub instruction_following: f64,
    /// The same rate restricted to tasks whose answer differs from the transcript.
    pub instruction_following_distinct: f64,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn metric(&self, task: &str, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.task == task && m.metric == metric)
            .map(|m| m.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\ntask,metric,value,n\n", self.seed);
        for m in &self.metrics {
            writeln!(s, "{},{},{},{}", m.task, m.metric, m.value, m.n).expect("string write");
        }
        s
    }
}

fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Greedy-decodes every manifest example (optionally only `tasks`) and scores it.
///
/// ASR examples get WER and exact match; the rest get exact match against the oracle target.
pub fn evaluate(
    model: &Lsm,
    train_ids: Option<(u64, u64)>,
    manifest: &CorpusManifest,
    pool: &InstructionPool,
    tasks: Option<&[String]>,
    exec: Exec,
) -> Result<EvalReport, EvalError> {
    if let Some(train) = train_ids {
        let test = manifest.id_range();
        if overlaps(test, train) {
            return Err(EvalError::OverlapDetected { test, train });
        }
    }
    if let Some(ts) = tasks {
        if let Some(t) = ts.iter().find(|t| pool.task(t).is_err()) {
            return Err(EvalError::UnknownTask(t.clone()));
        }
    }
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| tasks.is_none_or(|ts| ts.contains(&r.task)))
        .collect();
    let sigma = manifest.header.sigma;
    let predictions = exec
        .map(&records, |_, r| -> Result<Prediction, EvalError> {
            let speech = r.speech(model.config(), sigma)?;
            let h = model.encode_speech(&speech)?;
            let g = model.generate(Prefix::Encoded(&h), &r.instruction, LENGTH_FACTOR * r.source.len())?;
            Ok(Prediction {
                id: r.id,
                task: r.task.clone(),
                output: g.tokens,
                reference: r.target.clone(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut by_task: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in &predictions {
        by_task.entry(p.task.as_str()).or_default().push(p);
    }
    let mut metrics = Vec::new();
    let (mut hits, mut total, mut hits_d, mut total_d) = (0usize, 0usize, 0usize, 0usize);
    for (task, preds) in &by_task {
        let t = pool.task(task).map_err(|_| EvalError::UnknownTask(task.to_string()))?;
        let outputs: Vec<_> = preds.iter().map(|p| p.output.clone()).collect();
        let refs: Vec<_> = preds.iter().map(|p| p.reference.clone()).collect();
        let acc = task_accuracy(&outputs, &refs)?;
        if t.is_ground_truth() {
            let mut sum = 0.0;
            for p in preds {
                sum += wer(&p.output, &p.reference)?;
            }
            metrics.push(TaskMetric {
                task: task.to_string(),
                metric: "wer",
                value: sum / preds.len() as f64,
                n: preds.len(),
            });
        } else {
            let h = outputs.iter().zip(&refs).filter(|(o, r)| o == r).count();
            hits += h;
            total += preds.len();
            if !t.oracle.is_identity() {
                hits_d += h;
                total_d += preds.len();
            }
        }
        metrics.push(TaskMetric {
            task: task.to_string(),
            metric: "accuracy",
            value: acc,
            n: preds.len(),
        });
    }
    let rate = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(EvalReport {
        seed: manifest.header.seed,
        metrics,
        instruction_following: rate(hits, total),
        instruction_following_distinct: rate(hits_d, total_d),
        predictions,
    })
}
