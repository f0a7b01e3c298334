use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Oracle};
use crate::vocab::{TokenId, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub oracle: Oracle,
    /// Instances per task (m).
    #[serde(default = "default_instances")]
    pub instances: usize,
}

fn default_instances() -> usize {
    5
}

/// Pool description: the task roster plus how instances are synthesized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    #[serde(default = "default_instance_len")]
    pub instance_len: usize,
    #[serde(default)]
    pub seed: u64,
    /// Draw every task's instances from the whole instruction vocabulary instead of a
    /// task-private slice, so no single word identifies the task.
    #[serde(default)]
    pub shared_words: bool,
    pub tasks: Vec<TaskSpec>,
}

fn default_instance_len() -> usize {
    3
}

impl Default for PoolSpec {
    /// Ground-truth ASR plus six self-powered tasks, five instances each.
    fn default() -> Self {
        let task = |name: &str, oracle| TaskSpec {
            name: name.into(),
            oracle,
            instances: 5,
        };
        Self {
            instance_len: 3,
            seed: 0,
            shared_words: false,
            tasks: vec![
                task("asr", Oracle::Transcribe),
                task("repeat", Oracle::Repeat),
                task("cipher", Oracle::Cipher),
                task("keyword", Oracle::Keyword),
                task("intent", Oracle::Intent),
                task("sentiment", Oracle::Sentiment),
                task("continuation", Oracle::Continuation),
            ],
        }
    }
}

impl PoolSpec {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub name: String,
    pub oracle: Oracle,
    pub instances: Vec<Vec<TokenId>>,
}

impl Task {
    pub fn is_ground_truth(&self) -> bool {
        self.oracle == Oracle::Transcribe
    }
}

/// Tasks with their instruction instances and the cipher table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionPool {
    pub vocab: Vocab,
    /// Image of each content word under the cipher task; a derangement.
    pub cipher: Vec<TokenId>,
    pub tasks: Vec<Task>,
}

/// Synthesizes a pool: each task draws its instances from its own slice of the instruction words.
pub fn build_pool(spec: &PoolSpec, vocab: &Vocab) -> Result<InstructionPool, DataError> {
    let k = spec.tasks.len();
    if k == 0 {
        return Err(DataError::InvalidPool("pool needs at least one task".into()));
    }
    if spec.instance_len == 0 {
        return Err(DataError::InvalidPool("instance_len must be at least 1".into()));
    }
    let words: Vec<TokenId> = vocab.instruction_words().collect();
    let per_task = if spec.shared_words { words.len() } else { words.len() / k };
    if per_task == 0 {
        return Err(DataError::InvalidPool(format!(
            "{k} tasks cannot share {} instruction words",
            words.len()
        )));
    }
    let capacity = (per_task as f64).powi(spec.instance_len as i32);
    let requested: usize = spec.tasks.iter().map(|t| t.instances).sum();
    if spec.shared_words && requested as f64 > capacity {
        return Err(DataError::InvalidPool(format!(
            "{requested} instances requested; at most {capacity} distinct ones exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tasks = Vec::with_capacity(k);
    let mut seen = HashSet::new();
    for (i, ts) in spec.tasks.iter().enumerate() {
        if ts.instances == 0 || ts.instances as f64 > capacity {
            return Err(DataError::InvalidPool(format!(
                "task {} asks for {} instances; between 1 and {capacity} are possible",
                ts.name, ts.instances
            )));
        }
        let sub = if spec.shared_words {
            &words[..]
        } else {
            &words[i * per_task..(i + 1) * per_task]
        };
        let mut instances = Vec::with_capacity(ts.instances);
        while instances.len() < ts.instances {
            let inst: Vec<TokenId> = (0..spec.instance_len)
                .map(|_| sub[rng.random_range(0..sub.len())])
                .collect();
            if seen.insert(inst.clone()) {
                instances.push(inst);
            }
        }
        tasks.push(Task {
            name: ts.name.clone(),
            oracle: ts.oracle,
            instances,
        });
    }
    let pool = InstructionPool {
        vocab: *vocab,
        cipher: derangement(vocab, &mut rng),
        tasks,
    };
    pool.validate()?;
    Ok(pool)
}

fn derangement(vocab: &Vocab, rng: &mut impl Rng) -> Vec<TokenId> {
    let content: Vec<TokenId> = vocab.content().collect();
    let mut perm = content.clone();
    loop {
        perm.shuffle(rng);
        if perm.iter().zip(&content).all(|(a, b)| a != b) {
            return perm;
        }
    }
}

impl InstructionPool {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.tasks.is_empty() {
            return Err(DataError::InvalidPool("pool needs at least one task".into()));
        }
        let m = self.tasks[0].instances.len();
        let mut names = HashSet::new();
        let mut all = HashSet::new();
        for task in &self.tasks {
            if !names.insert(task.name.as_str()) {
                return Err(DataError::InvalidPool(format!("task {} listed twice", task.name)));
            }
            if task.instances.len() != m || m == 0 {
                return Err(DataError::InvalidPool(format!(
                    "task {} has {} instances, expected {m} for every task",
                    task.name,
                    task.instances.len()
                )));
            }
            for inst in &task.instances {
                if inst.is_empty() || inst.iter().any(|t| !self.vocab.instruction_words().contains(t)) {
                    return Err(DataError::InvalidPool(format!(
                        "task {} has an instance outside the instruction words: {inst:?}",
                        task.name
                    )));
                }
                if !all.insert(inst.clone()) {
                    return Err(DataError::DuplicateInstance {
                        task: task.name.clone(),
                        instance: inst.clone(),
                    });
                }
            }
        }
        let content: HashSet<TokenId> = self.vocab.content().collect();
        let image: HashSet<TokenId> = self.cipher.iter().copied().collect();
        if self.cipher.len() != content.len() || image != content {
            return Err(DataError::InvalidPool("cipher must permute the content words".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let pool: Self = toml::from_str(text).map_err(|e| DataError::Parse(e.to_string()))?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pool serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, name: &str) -> Result<&Task, DataError> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DataError::UnknownTask(name.to_string()))
    }

    pub fn task_index(&self, name: &str) -> Result<usize, DataError> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| DataError::UnknownTask(name.to_string()))
    }

    pub fn ground_truth_tasks(&self) -> Vec<usize> {
        (0..self.tasks.len()).filter(|&i| self.tasks[i].is_ground_truth()).collect()
    }

    pub fn self_powered_tasks(&self) -> Vec<usize> {
        (0..self.tasks.len()).filter(|&i| !self.tasks[i].is_ground_truth()).collect()
    }

    /// Applies the named task's oracle.
    pub fn oracle_target(&self, task: &str, source: &[TokenId]) -> Result<Vec<TokenId>, DataError> {
        Ok(self.task(task)?.oracle.apply(source, &self.vocab, &self.cipher))
    }
}

/// Uniform task, then a uniform instance of it: `(task index, instance index)`.
pub fn sample_instruction(pool: &InstructionPool, rng: &mut impl Rng) -> (usize, usize) {
    let all: Vec<usize> = (0..pool.tasks.len()).collect();
    sample_from(pool, &all, rng)
}

pub(crate) fn sample_from(pool: &InstructionPool, tasks: &[usize], rng: &mut impl Rng) -> (usize, usize) {
    let t = tasks[rng.random_range(0..tasks.len())];
    let i = rng.random_range(0..pool.tasks[t].instances.len());
    (t, i)
}
