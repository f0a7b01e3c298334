use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::LENGTH_FACTOR;
use super::pool::sample_from;
use super::{DataError, InstructionPool};
use crate::exec::Exec;
use crate::model::{featurize_speech, Lsm, ModelConfig, ModelError, Prefix, SpeechSample};
use crate::vocab::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    /// First example id; ids are `id_start .. id_start + size`.
    pub id_start: u64,
    /// Probability that an example is ground-truth ASR instead of self-powered.
    pub mix: f64,
    /// Standard deviation of the additive frame noise.
    pub sigma: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 3000,
            id_start: 0,
            mix: 1.0 / 7.0,
            sigma: 0.1,
            seed: 0,
            min_len: 3,
            max_len: 6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.mix) {
            return bad("mix must lie in [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("source lengths need 1 <= min_len <= max_len");
        }
        if self.id_start.checked_add(self.size as u64).is_none() {
            return bad("id range overflows");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    SelfPowered,
}

/// One `(speech, instruction, target)` triple; the speech is rebuilt from `source` and `noise_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: u64,
    pub task: String,
    pub provenance: Provenance,
    pub instruction: Vec<TokenId>,
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub noise_seed: u64,
}

impl ExampleRecord {
    pub fn speech(&self, cfg: &ModelConfig, sigma: f64) -> Result<SpeechSample, ModelError> {
        featurize_speech(&self.source, cfg, self.noise_seed, sigma)
    }
}

/// How self-powered targets are produced.
#[derive(Clone, Copy, Debug)]
pub enum TargetMode<'a> {
    /// The task's deterministic transform.
    Oracle,
    /// Greedy decoding of a text-only LM prompted with the instruction and the transcript.
    Model(&'a Lsm),
}

impl TargetMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            TargetMode::Oracle => "oracle",
            TargetMode::Model(_) => "model",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub seed: u64,
    pub pool_checksum: String,
    pub mix: f64,
    pub sigma: f64,
    pub id_start: u64,
    pub size: usize,
    pub target_mode: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub records: Vec<ExampleRecord>,
}

impl CorpusManifest {
    /// Half-open id range covered by the manifest.
    pub fn id_range(&self) -> (u64, u64) {
        (self.header.id_start, self.header.id_start + self.header.size as u64)
    }

    /// Header line, then one JSON record per line.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<(), DataError> {
        serde_json::to_writer(&mut *w, &self.header).map_err(|e| DataError::Manifest(e.to_string()))?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut *w, r).map_err(|e| DataError::Manifest(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        buf
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, DataError> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| DataError::Manifest("empty manifest".into()))??;
        let header: ManifestHeader =
            serde_json::from_str(&first).map_err(|e| DataError::Manifest(format!("line 1: {e}")))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| DataError::Manifest(format!("line {}: {e}", i + 2)))?;
            records.push(rec);
        }
        Ok(Self { header, records })
    }
}

/// Self-powered target for `source` under one instruction instance of `task`.
pub fn self_power_target(
    pool: &InstructionPool,
    task: &str,
    instance: &[TokenId],
    source: &[TokenId],
    mode: TargetMode<'_>,
) -> Result<Vec<TokenId>, DataError> {
    let t = pool.task(task)?;
    match mode {
        TargetMode::Oracle => Ok(t.oracle.apply(source, &pool.vocab, &pool.cipher)),
        TargetMode::Model(lm) => {
            let g = lm.generate(Prefix::Text(source), instance, LENGTH_FACTOR * source.len())?;
            Ok(g.tokens)
        }
    }
}

fn build_record(
    cfg: &CorpusConfig,
    pool: &InstructionPool,
    mode: TargetMode<'_>,
    gt: &[usize],
    sp: &[usize],
    index: usize,
) -> Result<ExampleRecord, DataError> {
    let id = cfg.id_start + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id);
    let content = pool.vocab.content();
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let source: Vec<TokenId> = (0..len).map(|_| rng.random_range(content.clone())).collect();
    let noise_seed = rng.random::<u64>();
    let ground_truth = sp.is_empty() || rng.random::<f64>() < cfg.mix;
    let (t, i) = if ground_truth {
        sample_from(pool, gt, &mut rng)
    } else {
        sample_from(pool, sp, &mut rng)
    };
    let task = &pool.tasks[t];
    let instruction = task.instances[i].clone();
    let (provenance, target) = if ground_truth {
        (Provenance::GroundTruth, source.clone())
    } else {
        let target = self_power_target(pool, &task.name, &instruction, &source, mode)?;
        (Provenance::SelfPowered, target)
    };
    Ok(ExampleRecord {
        id,
        task: task.name.clone(),
        provenance,
        instruction,
        source,
        target,
        noise_seed,
    })
}

/// Generates every record from `(seed, id)` alone, so the result is independent of `exec`.
pub fn build_corpus(
    cfg: &CorpusConfig,
    pool: &InstructionPool,
    mode: TargetMode<'_>,
    exec: Exec,
) -> Result<CorpusManifest, DataError> {
    cfg.validate()?;
    pool.validate()?;
    let gt = pool.ground_truth_tasks();
    let sp = pool.self_powered_tasks();
    if gt.is_empty() && cfg.mix > 0.0 {
        return Err(DataError::InvalidConfig("mix > 0 needs a ground-truth (transcribe) task".into()));
    }
    if sp.is_empty() && cfg.mix < 1.0 {
        return Err(DataError::InvalidConfig("mix < 1 needs at least one self-powered task".into()));
    }
    let records = exec
        .map_range(0..cfg.size, |i| build_record(cfg, pool, mode, &gt, &sp, i))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorpusManifest {
        header: ManifestHeader {
            seed: cfg.seed,
            pool_checksum: pool.checksum(),
            mix: cfg.mix,
            sigma: cfg.sigma,
            id_start: cfg.id_start,
            size: cfg.size,
            target_mode: mode.name().into(),
        },
        records,
    })
}
