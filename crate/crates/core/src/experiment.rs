//! End-to-end pipelines behind the command-line tool: data, training, analysis, evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{flow_report, repr_alignment, AlignmentReport, AnalysisError, FlowOptions, FlowReport, HeadReduction, SpanOptions};
use crate::datagen::{
    build_corpus, build_pool, CorpusConfig, CorpusManifest, DataError, InstructionPool, PoolSpec, TargetMode,
};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::exec::Exec;
use crate::model::{Checkpoint, CheckpointMeta, Lsm, ModelConfig, ModelError};
use crate::training::{prepare_speech, prepare_text, TrainConfig, TrainError, TrainLog, Trainer};

pub const POOL_FILE: &str = "pool.toml";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const FLOW_LAYERS_FILE: &str = "flow_layers.csv";
pub const FLOW_BINS_FILE: &str = "flow_bins.csv";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const PROJECTION_FILE: &str = "alignment_pca.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const COMPARISON_FILE: &str = "comparison.csv";

const TEST_SEED_SALT: u64 = 0x7e57;
const BACKBONE_SEED_SALT: u64 = 0xba5e;
const BACKBONE_ID_START: u64 = 500_000;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("required file not found: {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl ExperimentError {
    /// Whether the error comes from the user's configuration rather than the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Data(DataError::UnknownTask(_))
                | ExperimentError::Data(DataError::Parse(_))
                | ExperimentError::Data(DataError::InvalidConfig(_))
                | ExperimentError::Data(DataError::InvalidPool(_))
                | ExperimentError::Data(DataError::DuplicateInstance { .. })
                | ExperimentError::Model(ModelError::Config(_))
                | ExperimentError::Train(TrainError::InvalidConfig(_))
                | ExperimentError::Eval(EvalError::UnknownTask(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

/// Where self-powered targets come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    #[default]
    Oracle,
    /// Greedy decoding of the text backbone.
    Model,
}

/// The two canonical recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Ground-truth ASR only.
    VanillaBias,
    /// Self-powered targets mixed with ground-truth ASR.
    SelfPowered,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::VanillaBias => "vanilla-bias",
            Recipe::SelfPowered => "self-powered",
        }
    }
}

/// Flat experiment settings; every key is optional in the TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for every random stream.
    pub seed: u64,
    /// Optional pool description; the built-in seven-task roster otherwise.
    pub pool: Option<PathBuf>,
    /// For the built-in roster: let tasks share instruction words (see `PoolSpec::shared_words`).
    pub shared_words: bool,

    pub train_size: usize,
    pub test_size: usize,
    pub mix: f64,
    pub test_mix: f64,
    pub sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub test_id_start: u64,
    pub targets: TargetSource,

    /// Text-only pretraining of the LM before speech training (0 disables it).
    pub backbone_epochs: u64,
    pub backbone_size: usize,

    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers_lm: usize,
    pub n_layers_encoder: usize,
    pub n_qformer_blocks: usize,
    pub window: usize,
    pub queries: usize,
    pub frames_per_token: usize,
    pub feat_dim: usize,
    pub max_seq: usize,
    pub init_std: f64,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub epochs: u64,
    pub clip_norm: f64,

    pub bins: usize,
    pub include_template: bool,
    pub head_reduction: HeadReduction,
    pub projection: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let c = CorpusConfig::default();
        Self {
            seed: 0,
            pool: None,
            shared_words: false,
            train_size: c.size,
            test_size: 350,
            mix: c.mix,
            test_mix: 1.0 / 7.0,
            sigma: c.sigma,
            min_len: c.min_len,
            max_len: c.max_len,
            test_id_start: 1_000_000,
            targets: TargetSource::Oracle,
            backbone_epochs: 6,
            backbone_size: 3000,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            n_layers_lm: m.n_layers_lm,
            n_layers_encoder: m.n_layers_encoder,
            n_qformer_blocks: m.n_qformer_blocks,
            window: m.window,
            queries: m.queries,
            frames_per_token: m.frames_per_token,
            feat_dim: m.feat_dim,
            max_seq: m.max_seq,
            init_std: m.init_std,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            warmup_steps: t.warmup_steps,
            epochs: t.epochs,
            clip_norm: t.clip_norm,
            bins: 4,
            include_template: false,
            head_reduction: HeadReduction::SumThenNorm,
            projection: true,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the line and column of the offending key.
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = read_file(path)?;
        Self::from_toml(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.corpus_config(self.mix).validate()?;
        self.test_corpus_config().validate()?;
        if let Some(p) = &self.pool {
            if !p.exists() {
                return Err(ExperimentError::Config(format!("pool file {} does not exist", p.display())));
            }
        }
        if self.bins == 0 || self.bins > self.n_layers_lm {
            return Err(ExperimentError::Config(format!(
                "bins must be between 1 and n_layers_lm ({})",
                self.n_layers_lm
            )));
        }
        if self.targets == TargetSource::Model && self.backbone_epochs == 0 {
            return Err(ExperimentError::Config("targets = \"model\" needs backbone_epochs > 0".into()));
        }
        let train_end = self.train_size as u64;
        if self.test_id_start < train_end {
            return Err(ExperimentError::Config(format!(
                "test_id_start {} overlaps the training ids 0..{train_end}",
                self.test_id_start
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_layers_lm: self.n_layers_lm,
            n_layers_encoder: self.n_layers_encoder,
            n_qformer_blocks: self.n_qformer_blocks,
            window: self.window,
            queries: self.queries,
            frames_per_token: self.frames_per_token,
            feat_dim: self.feat_dim,
            max_seq: self.max_seq,
            init_std: self.init_std,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            epochs: self.epochs,
            seed: self.seed,
            clip_norm: self.clip_norm,
        }
    }

    pub fn corpus_config(&self, mix: f64) -> CorpusConfig {
        CorpusConfig {
            size: self.train_size,
            id_start: 0,
            mix,
            sigma: self.sigma,
            seed: self.seed,
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }

    pub fn test_corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            size: self.test_size,
            id_start: self.test_id_start,
            mix: self.test_mix,
            seed: self.seed ^ TEST_SEED_SALT,
            ..self.corpus_config(self.test_mix)
        }
    }

    fn backbone_corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            size: self.backbone_size,
            id_start: BACKBONE_ID_START,
            seed: self.seed ^ BACKBONE_SEED_SALT,
            ..self.corpus_config(self.mix)
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            bins: self.bins,
            reduction: self.head_reduction,
            spans: SpanOptions {
                include_template: self.include_template,
            },
        }
    }

    pub fn pool_spec(&self) -> Result<PoolSpec, ExperimentError> {
        let mut spec = match &self.pool {
            Some(p) => PoolSpec::from_toml(&read_file(p)?)
                .map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?,
            None => PoolSpec {
                shared_words: self.shared_words,
                ..PoolSpec::default()
            },
        };
        spec.seed = self.seed;
        Ok(spec)
    }
}

pub struct DataArtifacts {
    pub pool: InstructionPool,
    pub train: CorpusManifest,
    pub test: CorpusManifest,
    pub backbone: Option<Lsm>,
}

/// Trains the LM on transcript-prefixed examples only (connector untouched).
pub fn train_backbone(cfg: &ExperimentConfig, pool: &InstructionPool, exec: Exec) -> Result<Lsm, ExperimentError> {
    let corpus = build_corpus(&cfg.backbone_corpus_config(), pool, TargetMode::Oracle, exec)?;
    let mut lm = Lsm::new(cfg.model_config())?;
    let train_cfg = TrainConfig {
        epochs: cfg.backbone_epochs,
        ..cfg.train_config()
    };
    let mut trainer = Trainer::new(train_cfg, &lm)?;
    let mut log = TrainLog::new(cfg.seed);
    trainer.run(&mut lm, &prepare_text(&corpus.records), exec, &mut log)?;
    Ok(lm)
}

/// Builds the pool and the train/test manifests (plus the text backbone when enabled) into `dir`.
pub fn gen_data(cfg: &ExperimentConfig, mix: f64, dir: &Path, exec: Exec) -> Result<DataArtifacts, ExperimentError> {
    cfg.validate()?;
    let model_cfg = cfg.model_config();
    let pool = build_pool(&cfg.pool_spec()?, &model_cfg.vocab()?)?;
    let backbone = if cfg.backbone_epochs > 0 {
        Some(train_backbone(cfg, &pool, exec)?)
    } else {
        None
    };
    let mode = match (cfg.targets, &backbone) {
        (TargetSource::Model, Some(lm)) => TargetMode::Model(lm),
        _ => TargetMode::Oracle,
    };
    let train = build_corpus(&cfg.corpus_config(mix), &pool, mode, exec)?;
    let test = build_corpus(&cfg.test_corpus_config(), &pool, TargetMode::Oracle, exec)?;
    write_file(&dir.join(POOL_FILE), pool.to_toml())?;
    write_file(&dir.join(TRAIN_FILE), train.to_bytes())?;
    write_file(&dir.join(TEST_FILE), test.to_bytes())?;
    if let Some(lm) = &backbone {
        let mut bytes = Vec::new();
        lm.to_checkpoint(CheckpointMeta {
            seed: cfg.seed,
            recipe: "backbone".into(),
            ..CheckpointMeta::default()
        })
        .encode(&mut bytes)?;
        write_file(&dir.join(BACKBONE_FILE), bytes)?;
    }
    Ok(DataArtifacts {
        pool,
        train,
        test,
        backbone,
    })
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, ExperimentError> {
    let text = read_file(path)?;
    Ok(CorpusManifest::read_jsonl(text.as_bytes())?)
}

pub fn load_pool(path: &Path) -> Result<InstructionPool, ExperimentError> {
    Ok(InstructionPool::from_toml(&read_file(path)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(Checkpoint::read(path)?)
}

fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ExperimentError> {
    let mut bytes = Vec::new();
    ckpt.encode(&mut bytes)?;
    write_file(path, bytes)
}

/// Initial model for speech training: the text backbone if one exists, else a fresh model.
fn initial_model(cfg: &ExperimentConfig, backbone: Option<&Path>) -> Result<Lsm, ExperimentError> {
    match backbone {
        Some(p) if p.exists() => {
            let ckpt = load_checkpoint(p)?;
            if ckpt.config != cfg.model_config() {
                return Err(ExperimentError::Config(format!(
                    "{} was built with a different model configuration",
                    p.display()
                )));
            }
            Ok(Lsm::from_checkpoint(&ckpt)?)
        }
        _ => Ok(Lsm::new(cfg.model_config())?),
    }
}

/// Trains on `manifest`, optionally resuming from `resume`, and writes the checkpoint and log.
pub fn train_model(
    cfg: &ExperimentConfig,
    manifest: &CorpusManifest,
    backbone: Option<&Path>,
    resume: Option<&Path>,
    recipe: &str,
    out: &Path,
    exec: Exec,
) -> Result<(Lsm, Checkpoint, TrainLog), ExperimentError> {
    cfg.validate()?;
    let train_cfg = cfg.train_config();
    let (mut model, mut trainer) = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            let model = Lsm::from_checkpoint(&ckpt)?;
            let trainer = Trainer::resume(train_cfg.clone(), &model, &ckpt)?;
            (model, trainer)
        }
        None => {
            let model = initial_model(cfg, backbone)?;
            let trainer = Trainer::new(train_cfg.clone(), &model)?;
            (model, trainer)
        }
    };
    let data = prepare_speech(&model, &manifest.records, manifest.header.sigma, exec)?;
    let mut log = TrainLog::new(cfg.seed);
    trainer.run(&mut model, &data, exec, &mut log)?;
    let ckpt = trainer.checkpoint(
        &model,
        CheckpointMeta {
            seed: cfg.seed,
            train_ids: Some(manifest.id_range()),
            recipe: recipe.to_string(),
            ..CheckpointMeta::default()
        },
    );
    write_checkpoint(&out.join(MODEL_FILE), &ckpt)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut csv = log.to_csv();
    if resume.is_some() && log_path.exists() {
        // Keep the earlier rows so the log still has one row per step overall.
        let rows: String = csv.lines().skip(2).map(|l| format!("{l}\n")).collect();
        csv = read_file(&log_path)? + &rows;
    }
    write_file(&log_path, csv)?;
    Ok((model, ckpt, log))
}

/// Which analyses to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisKind {
    Flow,
    Alignment,
}

pub struct AnalysisOutput {
    pub flow: Option<FlowReport>,
    pub alignment: Option<AlignmentReport>,
}

pub fn analyze(
    cfg: &ExperimentConfig,
    model: &Lsm,
    manifest: &CorpusManifest,
    kinds: &[AnalysisKind],
    out: &Path,
    exec: Exec,
) -> Result<AnalysisOutput, ExperimentError> {
    let mut result = AnalysisOutput {
        flow: None,
        alignment: None,
    };
    let sigma = manifest.header.sigma;
    if kinds.contains(&AnalysisKind::Flow) {
        let report = flow_report(model, &manifest.records, sigma, cfg.seed, &cfg.flow_options(), exec)?;
        write_file(&out.join(FLOW_LAYERS_FILE), report.layers_csv())?;
        write_file(&out.join(FLOW_BINS_FILE), report.bins_csv())?;
        result.flow = Some(report);
    }
    if kinds.contains(&AnalysisKind::Alignment) {
        let report = repr_alignment(model, &manifest.records, sigma, cfg.seed, cfg.projection, exec)?;
        write_file(&out.join(ALIGNMENT_FILE), report.to_csv())?;
        if let Some(p) = report.projection_csv() {
            write_file(&out.join(PROJECTION_FILE), p)?;
        }
        result.alignment = Some(report);
    }
    Ok(result)
}

pub fn run_eval(
    model: &Lsm,
    train_ids: Option<(u64, u64)>,
    manifest: &CorpusManifest,
    pool: &InstructionPool,
    tasks: Option<&[String]>,
    out: &Path,
    exec: Exec,
) -> Result<EvalReport, ExperimentError> {
    let mut report = evaluate(model, train_ids, manifest, pool, tasks, exec)?;
    // Headers carry the root seed, not the derived test-corpus seed.
    report.seed = model.config().seed;
    write_file(&out.join(EVAL_FILE), report.to_csv())?;
    Ok(report)
}

/// Headline numbers of one recipe run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeSummary {
    pub recipe: String,
    pub seed: u64,
    pub train_examples: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub encoder_checksum: String,
    pub asr_accuracy: f64,
    pub asr_wer: f64,
    pub instruction_following: f64,
    pub instruction_following_distinct: f64,
    pub task_accuracy: std::collections::BTreeMap<String, f64>,
    pub layer_eta: Vec<f64>,
    pub bin_eta: Vec<f64>,
    pub final_bin_eta: f64,
    pub mean_bin_eta: f64,
    pub alignment_paired: f64,
    pub alignment_control: f64,
    pub alignment_gap: f64,
}

impl RecipeSummary {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        toml::from_str(&read_file(path)?).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }
}

/// Runs one recipe end to end into `root/<recipe>/`, then refreshes the comparison file.
pub fn repro(cfg: &ExperimentConfig, recipe: Recipe, root: &Path, exec: Exec) -> Result<RecipeSummary, ExperimentError> {
    let dir = root.join(recipe.name());
    let mix = match recipe {
        Recipe::VanillaBias => 1.0,
        Recipe::SelfPowered => cfg.mix,
    };
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let data = gen_data(cfg, mix, &dir, exec)?;
    let backbone = dir.join(BACKBONE_FILE);
    let (model, ckpt, log) = train_model(cfg, &data.train, Some(&backbone), None, recipe.name(), &dir, exec)?;
    let analysis = analyze(
        cfg,
        &model,
        &data.test,
        &[AnalysisKind::Flow, AnalysisKind::Alignment],
        &dir,
        exec,
    )?;
    let report = run_eval(&model, ckpt.meta.train_ids, &data.test, &data.pool, None, &dir, exec)?;
    let flow = analysis.flow.expect("flow requested");
    let alignment = analysis.alignment.expect("alignment requested");
    let asr = data.pool.ground_truth_tasks().first().map(|&i| data.pool.tasks[i].name.clone());
    let summary = RecipeSummary {
        recipe: recipe.name().into(),
        seed: cfg.seed,
        train_examples: data.train.records.len(),
        steps: ckpt.meta.step,
        final_loss: log.epoch_loss.last().copied().unwrap_or(f64::NAN),
        encoder_checksum: model.encoder_checksum(),
        asr_accuracy: asr.as_deref().and_then(|t| report.metric(t, "accuracy")).unwrap_or(0.0),
        asr_wer: asr.as_deref().and_then(|t| report.metric(t, "wer")).unwrap_or(0.0),
        instruction_following: report.instruction_following,
        instruction_following_distinct: report.instruction_following_distinct,
        task_accuracy: report
            .metrics
            .iter()
            .filter(|m| m.metric == "accuracy")
            .map(|m| (m.task.clone(), m.value))
            .collect(),
        layer_eta: flow.layer_eta.clone(),
        bin_eta: flow.bin_eta.clone(),
        final_bin_eta: flow.final_bin_eta(),
        mean_bin_eta: flow.mean_bin_eta(),
        alignment_paired: alignment.mean_paired,
        alignment_control: alignment.mean_control,
        alignment_gap: alignment.gap,
    };
    write_file(
        &dir.join(SUMMARY_FILE),
        toml::to_string(&summary).expect("summary serializes"),
    )?;
    write_comparison(root)?;
    Ok(summary)
}

/// Writes `root/comparison.csv` when both recipes have summaries; returns whether it did.
pub fn write_comparison(root: &Path) -> Result<bool, ExperimentError> {
    let vanilla = root.join(Recipe::VanillaBias.name()).join(SUMMARY_FILE);
    let selfp = root.join(Recipe::SelfPowered.name()).join(SUMMARY_FILE);
    if !vanilla.exists() || !selfp.exists() {
        return Ok(false);
    }
    let (v, s) = (RecipeSummary::load(&vanilla)?, RecipeSummary::load(&selfp)?);
    let mut csv = format!(
        "# seed={}\nmetric,vanilla_bias,self_powered,delta\n",
        s.seed
    );
    let mut row = |name: &str, a: f64, b: f64| {
        writeln!(csv, "{name},{a},{b},{}", b - a).expect("string write");
    };
    row("final_bin_eta", v.final_bin_eta, s.final_bin_eta);
    row("mean_bin_eta", v.mean_bin_eta, s.mean_bin_eta);
    for (b, (a, c)) in v.bin_eta.iter().zip(&s.bin_eta).enumerate() {
        row(&format!("eta_bin_{b}"), *a, *c);
    }
    row("asr_accuracy", v.asr_accuracy, s.asr_accuracy);
    row("asr_wer", v.asr_wer, s.asr_wer);
    row("instruction_following", v.instruction_following, s.instruction_following);
    row(
        "instruction_following_distinct",
        v.instruction_following_distinct,
        s.instruction_following_distinct,
    );
    for (task, acc) in &s.task_accuracy {
        if let Some(va) = v.task_accuracy.get(task) {
            row(&format!("accuracy_{task}"), *va, *acc);
        }
    }
    row("alignment_gap", v.alignment_gap, s.alignment_gap);
    write_file(&root.join(COMPARISON_FILE), csv)?;
    Ok(true)
}
