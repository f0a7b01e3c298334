use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorlab::exec::Exec;
use anchorlab::experiment::{
    self, AnalysisKind, ExperimentConfig, ExperimentError, Recipe, BACKBONE_FILE, MODEL_FILE, POOL_FILE, TEST_FILE,
    TRAIN_FILE,
};
use anchorlab::model::Lsm;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "anchorlab", version, about = "Speech anchor bias lab: data, training, attention flow, evaluation")]
struct Cli {
    /// Experiment config (TOML, flat keys); flags given here override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ANCHORLAB_OUT", default_value = "anchorlab-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on one thread even when the parallel feature is built in.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the instruction pool and the train/test manifests.
    GenData(GenDataArgs),
    /// Train on the training manifest and write a checkpoint plus step log.
    Train(TrainArgs),
    /// Attention flow and representation alignment reports.
    Analyze(AnalyzeArgs),
    /// Per-task WER / accuracy on the test manifest.
    Eval(EvalArgs),
    /// Run gen-data, train, analyze and eval for one recipe (or both).
    Repro(ReproArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Fraction of ground-truth ASR examples in the training corpus.
    #[arg(long)]
    mix: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Pool description (TOML).
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Total epochs (a resumed run continues until this many are done).
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training manifest [default: <out>/train.jsonl].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Continue from this checkpoint, optimizer state included.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Flow,
    Alignment,
    All,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, value_enum, default_value = "all")]
    kind: Kind,
    /// [default: <out>/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// [default: <out>/test.jsonl]
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Count prompt markers as instruction positions.
    #[arg(long)]
    include_template: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Comma-separated task names to keep.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// [default: <out>/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// [default: <out>/test.jsonl]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// [default: <out>/pool.toml]
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RecipeArg {
    VanillaBias,
    SelfPowered,
    All,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(value_enum)]
    recipe: RecipeArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn or_out(flag: &Option<PathBuf>, out: &Path, file: &str) -> PathBuf {
    flag.clone().unwrap_or_else(|| out.join(file))
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData(a) => {
            set(&mut cfg.mix, a.mix);
            set(&mut cfg.train_size, a.train_size);
            set(&mut cfg.test_size, a.test_size);
            set(&mut cfg.sigma, a.sigma);
            if a.pool.is_some() {
                cfg.pool = a.pool.clone();
            }
            let data = experiment::gen_data(&cfg, cfg.mix, out, exec)?;
            println!(
                "pool {} ({} tasks), train {} examples, test {} examples -> {}",
                data.pool.checksum(),
                data.pool.tasks.len(),
                data.train.records.len(),
                data.test.records.len(),
                out.display()
            );
        }
        Command::Train(a) => {
            set(&mut cfg.epochs, a.epochs);
            set(&mut cfg.learning_rate, a.learning_rate);
            set(&mut cfg.batch_size, a.batch_size);
            let manifest = experiment::load_manifest(&or_out(&a.manifest, out, TRAIN_FILE))?;
            let backbone = out.join(BACKBONE_FILE);
            let (_, ckpt, log) =
                experiment::train_model(&cfg, &manifest, Some(&backbone), a.resume.as_deref(), "train", out, exec)?;
            println!(
                "step {} epoch {} final epoch loss {} -> {}",
                ckpt.meta.step,
                ckpt.meta.epochs,
                log.epoch_loss.last().map_or("n/a".to_string(), |l| format!("{l:.4}")),
                out.join(MODEL_FILE).display()
            );
        }
        Command::Analyze(a) => {
            set(&mut cfg.bins, a.bins);
            cfg.include_template |= a.include_template;
            let ckpt = experiment::load_checkpoint(&or_out(&a.checkpoint, out, MODEL_FILE))?;
            let model = Lsm::from_checkpoint(&ckpt)?;
            let manifest = experiment::load_manifest(&or_out(&a.manifest, out, TEST_FILE))?;
            let kinds: &[AnalysisKind] = match a.kind {
                Kind::Flow => &[AnalysisKind::Flow],
                Kind::Alignment => &[AnalysisKind::Alignment],
                Kind::All => &[AnalysisKind::Flow, AnalysisKind::Alignment],
            };
            let res = experiment::analyze(&cfg, &model, &manifest, kinds, out, exec)?;
            if let Some(f) = &res.flow {
                println!("eta by bin {:?}", f.bin_eta);
            }
            if let Some(al) = &res.alignment {
                println!(
                    "alignment paired {:.4} control {:.4} gap {:.4}",
                    al.mean_paired, al.mean_control, al.gap
                );
            }
        }
        Command::Eval(a) => {
            let ckpt = experiment::load_checkpoint(&or_out(&a.checkpoint, out, MODEL_FILE))?;
            let model = Lsm::from_checkpoint(&ckpt)?;
            let manifest = experiment::load_manifest(&or_out(&a.manifest, out, TEST_FILE))?;
            let pool = experiment::load_pool(&or_out(&a.pool, out, POOL_FILE))?;
            let report =
                experiment::run_eval(&model, ckpt.meta.train_ids, &manifest, &pool, a.tasks.as_deref(), out, exec)?;
            print!("{}", report.to_csv());
        }
        Command::Repro(a) => {
            let recipes: &[Recipe] = match a.recipe {
                RecipeArg::VanillaBias => &[Recipe::VanillaBias],
                RecipeArg::SelfPowered => &[Recipe::SelfPowered],
                RecipeArg::All => &[Recipe::VanillaBias, Recipe::SelfPowered],
            };
            for &r in recipes {
                let s = experiment::repro(&cfg, r, out, exec)?;
                println!(
                    "{}: asr accuracy {:.3}, instruction following {:.3}, final-bin eta {:.3} (mean {:.3}), alignment gap {:.4}",
                    s.recipe, s.asr_accuracy, s.instruction_following_distinct, s.final_bin_eta, s.mean_bin_eta, s.alignment_gap
                );
            }
        }
    }
    Ok(())
}
