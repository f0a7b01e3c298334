use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use super::AnalysisError;
use crate::datagen::ExampleRecord;
use crate::exec::Exec;
use crate::model::{Lsm, Prefix};

pub const MIN_PAIRS: usize = 10;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    pub seed: u64,
    pub pair_ids: Vec<u64>,
    /// Cosine between the speech-run and text-run states of the same pair.
    pub paired: Vec<f64>,
    /// Cosine between speech state `i` and text state `i + 1 (mod n)`.
    pub control: Vec<f64>,
    pub mean_paired: f64,
    pub mean_control: f64,
    /// `mean_paired − mean_control`.
    pub gap: f64,
    /// Principal-component coordinates: speech states first, then text states.
    pub projection: Option<Vec<[f64; 2]>>,
}

impl AlignmentReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\npair_id,paired_cosine,control_cosine\n", self.seed);
        for ((id, p), c) in self.pair_ids.iter().zip(&self.paired).zip(&self.control) {
            writeln!(s, "{id},{p},{c}").expect("string write");
        }
        s
    }

    pub fn projection_csv(&self) -> Option<String> {
        let pts = self.projection.as_ref()?;
        let n = self.pair_ids.len();
        let mut s = format!("# seed={}\npair_id,input,pc1,pc2\n", self.seed);
        for (k, p) in pts.iter().enumerate() {
            let kind = if k < n { "speech" } else { "text" };
            writeln!(s, "{},{kind},{},{}", self.pair_ids[k % n], p[0], p[1]).expect("string write");
        }
        Some(s)
    }
}

/// Paired and cyclically-deranged cosines of precomputed mean states.
pub fn alignment_from_states(
    seed: u64,
    pair_ids: Vec<u64>,
    speech: &[Vec<f64>],
    text: &[Vec<f64>],
    project: bool,
) -> Result<AlignmentReport, AnalysisError> {
    let n = speech.len();
    if n < MIN_PAIRS || text.len() != n || pair_ids.len() != n {
        return Err(AnalysisError::TooFewPairs(n.min(text.len())));
    }
    let paired: Vec<f64> = (0..n).map(|i| cosine(&speech[i], &text[i])).collect();
    let control: Vec<f64> = (0..n).map(|i| cosine(&speech[i], &text[(i + 1) % n])).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mean_paired, mean_control) = (mean(&paired), mean(&control));
    let projection = project.then(|| {
        let all: Vec<Vec<f64>> = speech.iter().chain(text).cloned().collect();
        pca_2d(&all)
    });
    Ok(AlignmentReport {
        seed,
        pair_ids,
        paired,
        control,
        mean_paired,
        mean_control,
        gap: mean_paired - mean_control,
        projection,
    })
}

/// Projects centred points onto the two leading principal axes.
///
/// Each axis is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&c) = order.get(k) else {
            return vec![0.0; d];
        };
        let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let (a1, a2) = (axis(0), axis(1));
    (0..n)
        .map(|i| {
            let row = centred.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&a1), p(&a2)]
        })
        .collect()
}

/// Runs each record through the speech path and the transcript path with the same instruction.
pub fn repr_alignment(
    model: &Lsm,
    records: &[ExampleRecord],
    sigma: f64,
    seed: u64,
    project: bool,
    exec: Exec,
) -> Result<AlignmentReport, AnalysisError> {
    let states = exec
        .map(records, |_, r| -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
            let s = r.speech(model.config(), sigma)?;
            let h = model.encode_speech(&s)?;
            let speech = model.mean_final_hidden(Prefix::Encoded(&h), &r.instruction)?;
            let text = model.mean_final_hidden(Prefix::Text(&r.source), &r.instruction)?;
            Ok((speech, text))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let (speech, text): (Vec<_>, Vec<_>) = states.into_iter().unzip();
    alignment_from_states(seed, records.iter().map(|r| r.id).collect(), &speech, &text, project)
}
