use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// One record per optimizer step, plus the mean training loss of each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            steps: Vec::new(),
            epoch_loss: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\nstep,epoch,loss,lr,grad_norm\n", self.seed);
        for r in &self.steps {
            writeln!(s, "{},{},{},{},{}", r.step, r.epoch, r.loss, r.lr, r.grad_norm).expect("string write");
        }
        s
    }

    /// Mean of a trailing window of step losses.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        self.steps
            .windows(window.max(1))
            .map(|w| w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64)
            .collect()
    }
}
