use anchorlab::datagen::{build_corpus, build_pool, CorpusConfig, PoolSpec, TargetMode};
use anchorlab::exec::Exec;
use anchorlab::model::{Lsm, ModelConfig};
use anchorlab::training::{batch_gradient, prepare_speech, TrainExample};
use anchorlab::vocab::Vocab;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_batch_gradient(c: &mut Criterion) {
    let pool = build_pool(&PoolSpec::default(), &Vocab::toy()).unwrap();
    let corpus = build_corpus(
        &CorpusConfig {
            size: 32,
            ..CorpusConfig::default()
        },
        &pool,
        TargetMode::Oracle,
        Exec::Sequential,
    )
    .unwrap();
    let model = Lsm::new(ModelConfig::default()).unwrap();
    let data = prepare_speech(&model, &corpus.records, corpus.header.sigma, Exec::Sequential).unwrap();
    let batch: Vec<&TrainExample> = data.iter().collect();
    let mut group = c.benchmark_group("batch_gradient_32");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradient(&model, &batch, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_corpus(c: &mut Criterion) {
    let pool = build_pool(&PoolSpec::default(), &Vocab::toy()).unwrap();
    let cfg = CorpusConfig {
        size: 2000,
        ..CorpusConfig::default()
    };
    let mut group = c.benchmark_group("build_corpus_2000");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| build_corpus(&cfg, &pool, TargetMode::Oracle, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let pool = build_pool(&PoolSpec::default(), &Vocab::toy()).unwrap();
    let corpus = build_corpus(
        &CorpusConfig {
            size: 64,
            ..CorpusConfig::default()
        },
        &pool,
        TargetMode::Oracle,
        Exec::Sequential,
    )
    .unwrap();
    let model = Lsm::new(ModelConfig::default()).unwrap();
    let mut group = c.benchmark_group("encode_speech_64");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| prepare_speech(&model, &corpus.records, corpus.header.sigma, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batch_gradient, bench_corpus, bench_encode);
criterion_main!(benches);
