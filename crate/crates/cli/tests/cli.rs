use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anchorlab::datagen::{CorpusManifest, Provenance};
use anchorlab::experiment::ExperimentConfig;
use anchorlab::model::{Checkpoint, CheckpointMeta, Lsm};

const TINY: &str = r#"
seed = 3
train_size = 60
test_size = 28
d_model = 16
n_heads = 2
d_ff = 32
n_layers_lm = 2
n_layers_encoder = 1
n_qformer_blocks = 1
window = 4
frames_per_token = 3
feat_dim = 6
max_seq = 24
init_std = 0.3
batch_size = 8
warmup_steps = 2
epochs = 1
bins = 2
backbone_epochs = 0
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("tiny.toml")
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_anchorlab"))
            .arg("--config")
            .arg(self.config())
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .env_remove("ANCHORLAB_OUT")
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> Output {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        o
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest(p: &Path) -> CorpusManifest {
    CorpusManifest::read_jsonl(bytes(p).as_slice()).unwrap()
}

#[test]
fn gen_data_is_byte_stable() {
    let sb = Sandbox::new();
    sb.ok("a", &["gen-data"]);
    sb.ok("b", &["gen-data"]);
    for f in ["pool.toml", "train.jsonl", "test.jsonl"] {
        assert_eq!(bytes(&sb.path("a").join(f)), bytes(&sb.path("b").join(f)), "{f}");
    }
    let train = manifest(&sb.path("a/train.jsonl"));
    assert_eq!(train.records.len(), 60);
    assert_eq!(train.header.seed, 3);
}

#[test]
fn mix_flag_overrides_config_file() {
    let sb = Sandbox::new();
    fs::write(sb.config(), format!("{TINY}mix = 0.0\n")).unwrap();
    sb.ok("file", &["gen-data"]);
    let from_file = manifest(&sb.path("file/train.jsonl"));
    assert_eq!(from_file.header.mix, 0.0);
    assert!(from_file.records.iter().all(|r| r.provenance == Provenance::SelfPowered));

    sb.ok("flag", &["gen-data", "--mix", "1.0"]);
    let from_flag = manifest(&sb.path("flag/train.jsonl"));
    assert_eq!(from_flag.header.mix, 1.0);
    assert!(from_flag.records.iter().all(|r| r.provenance == Provenance::GroundTruth));
}

#[test]
fn unknown_task_in_pool_is_a_usage_error() {
    let sb = Sandbox::new();
    let pool = sb.path("pool.toml");
    fs::write(
        &pool,
        "[[tasks]]\nname = \"asr\"\noracle = \"transcribe\"\n\n[[tasks]]\nname = \"t2\"\noracle = \"translate\"\n",
    )
    .unwrap();
    let o = sb.run("x", &["gen-data", "--pool", pool.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("translate"), "{err}");
}

#[test]
fn malformed_config_reports_its_line() {
    let sb = Sandbox::new();
    fs::write(sb.config(), "seed = 1\ntrain_size = \"many\"\n").unwrap();
    let o = sb.run("x", &["gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");

    fs::write(sb.config(), "seed = 1\nlearning_rat = 0.1\n").unwrap();
    let o = sb.run("x", &["gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let sb = Sandbox::new();
    assert_eq!(sb.run("x", &["gen-data", "--mix", "lots"]).status.code(), Some(2));
    assert_eq!(sb.run("x", &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let sb = Sandbox::new();
    sb.ok("run", &["gen-data"]);
    sb.ok("run", &["train", "--epochs", "0"]);
    let ckpt = Checkpoint::read(&sb.path("run/model.ckpt")).unwrap();
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let init = Lsm::new(cfg.model_config()).unwrap().to_checkpoint(CheckpointMeta::default());
    assert_eq!(ckpt.meta.step, 0);
    assert_eq!(ckpt.arrays, init.arrays);
    let log = fs::read_to_string(sb.path("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn backbone_seeds_training_and_model_targets() {
    let sb = Sandbox::new();
    fs::write(
        sb.config(),
        TINY.replace("backbone_epochs = 0", "backbone_epochs = 1\nbackbone_size = 40\ntargets = \"model\""),
    )
    .unwrap();
    sb.ok("run", &["gen-data"]);
    let backbone = Checkpoint::read(&sb.path("run/backbone.ckpt")).unwrap();
    assert_eq!(backbone.meta.recipe, "backbone");
    let train = manifest(&sb.path("run/train.jsonl"));
    assert_eq!(train.header.target_mode, "model");

    sb.ok("run", &["train", "--epochs", "0"]);
    let ckpt = Checkpoint::read(&sb.path("run/model.ckpt")).unwrap();
    assert_eq!(ckpt.arrays, backbone.arrays);
}

#[test]
fn model_targets_need_a_backbone() {
    let sb = Sandbox::new();
    fs::write(sb.config(), format!("{TINY}targets = \"model\"\n")).unwrap();
    let o = sb.run("run", &["gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("backbone_epochs"));
}

#[test]
fn resumed_training_matches_one_shot() {
    let sb = Sandbox::new();
    sb.ok("one", &["gen-data"]);
    sb.ok("one", &["train", "--epochs", "2"]);

    sb.ok("two", &["gen-data"]);
    sb.ok("two", &["train", "--epochs", "1"]);
    let first = sb.path("two/first.ckpt");
    fs::rename(sb.path("two/model.ckpt"), &first).unwrap();
    sb.ok("two", &["train", "--epochs", "2", "--resume", first.to_str().unwrap()]);

    assert_eq!(bytes(&sb.path("one/model.ckpt")), bytes(&sb.path("two/model.ckpt")));
    // 60 examples in batches of 8: 8 steps per epoch.
    for run in ["one", "two"] {
        let log = fs::read_to_string(sb.path(&format!("{run}/train_log.csv"))).unwrap();
        assert_eq!(log.lines().count() - 2, 16, "{run}");
    }
    assert_eq!(bytes(&sb.path("one/train_log.csv")), bytes(&sb.path("two/train_log.csv")));
}

#[test]
fn analyze_untrained_model_covers_every_layer_and_bin() {
    let sb = Sandbox::new();
    sb.ok("run", &["gen-data"]);
    sb.ok("run", &["train", "--epochs", "0"]);
    sb.ok("run", &["analyze", "--kind", "flow"]);
    let layers = fs::read_to_string(sb.path("run/flow_layers.csv")).unwrap();
    let bins = fs::read_to_string(sb.path("run/flow_bins.csv")).unwrap();
    assert!(layers.starts_with("# seed=3\n"));
    let rows: Vec<&str> = layers.lines().skip(2).collect();
    // Two layers per test example.
    assert_eq!(rows.len(), 2 * 28);
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap().is_finite()));
    assert!(bins.contains("bin,0,") && bins.contains("bin,1,"), "{bins}");
    assert!(!sb.path("run/alignment.csv").exists());

    let first = bytes(&sb.path("run/flow_layers.csv"));
    sb.ok("run", &["analyze"]);
    assert_eq!(first, bytes(&sb.path("run/flow_layers.csv")));
    assert!(sb.path("run/alignment.csv").exists());
}

#[test]
fn analyze_without_checkpoint_fails_at_runtime() {
    let sb = Sandbox::new();
    sb.ok("run", &["gen-data"]);
    let o = sb.run("run", &["analyze"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.ckpt"));
}

#[test]
fn eval_reports_every_task_and_honours_the_filter() {
    let sb = Sandbox::new();
    sb.ok("run", &["gen-data"]);
    sb.ok("run", &["train", "--epochs", "0"]);
    let o = sb.ok("run", &["eval"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv, fs::read_to_string(sb.path("run/eval.csv")).unwrap());
    let test = manifest(&sb.path("run/test.jsonl"));
    for r in &test.records {
        assert!(csv.lines().any(|l| l.split(',').next() == Some(r.task.as_str())), "{}", r.task);
    }

    let o = sb.ok("run", &["eval", "--tasks", "asr,cipher"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    let tasks: std::collections::BTreeSet<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("task,"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(tasks.into_iter().collect::<Vec<_>>(), ["asr", "cipher"]);

    let o = sb.run("run", &["eval", "--tasks", "poetry"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("poetry"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let sb = Sandbox::new();
    let o = Command::new(env!("CARGO_BIN_EXE_anchorlab"))
        .arg("--config")
        .arg(sb.config())
        .arg("gen-data")
        .env("ANCHORLAB_OUT", sb.path("envout"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(sb.path("envout/train.jsonl").exists());
}

#[test]
fn non_finite_loss_exits_nonzero() {
    let sb = Sandbox::new();
    sb.ok("run", &["gen-data"]);
    let o = sb.run("run", &["train", "--learning-rate", "1e300", "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn repro_writes_summaries_and_comparison() {
    let sb = Sandbox::new();
    sb.ok("root", &["repro", "vanilla-bias"]);
    assert!(sb.path("root/vanilla-bias/summary.toml").exists());
    assert!(!sb.path("root/comparison.csv").exists());
    let vanilla = manifest(&sb.path("root/vanilla-bias/train.jsonl"));
    assert!(vanilla.records.iter().all(|r| r.provenance == Provenance::GroundTruth));

    sb.ok("root", &["repro", "self-powered"]);
    let cmp = fs::read_to_string(sb.path("root/comparison.csv")).unwrap();
    assert!(cmp.contains("metric,vanilla_bias,self_powered,delta"));
    assert!(cmp.contains("\nfinal_bin_eta,"));
    assert!(cmp.contains("\nasr_accuracy,"));
    for f in [
        "model.ckpt",
        "train_log.csv",
        "flow_layers.csv",
        "flow_bins.csv",
        "alignment.csv",
        "eval.csv",
    ] {
        assert!(sb.path("root/self-powered").join(f).exists(), "{f}");
    }
}
