use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crossview_bench::{dataset, embeddings};
use crossview_core::eval::{cmc, distance_matrix, mean_ap};
use crossview_core::losses::{cv_cl, cv_ec, init_centers};
use crossview_core::network::NetShape;
use crossview_core::trainer::{init_pair, train_phase_cvec, PairModel, TrainingData};
use crossview_core::{Matrix, SeededRng, TrainConfig, TrainLog, ViewLabel, ViewNetwork};

fn network(c: &mut Criterion) {
    let shape = NetShape::new(32, 20);
    let net = ViewNetwork::init(ViewLabel::View(0), &shape, 1).unwrap();
    let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let ge = vec![0.1; shape.embed_dim];
    let gl = vec![0.05; shape.classes];
    c.bench_function("forward", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    c.bench_function("forward_backward", |b| {
        b.iter(|| {
            let f = net.forward(black_box(&x)).unwrap();
            net.backward(&f.tape, &ge, &gl).unwrap()
        })
    });
}

fn losses(c: &mut Criterion) {
    let mut group = c.benchmark_group("constraints");
    for m in [8, 32, 128] {
        let (emb, groups) = embeddings(m, 2, 32);
        // rows follow the layout of `embeddings` with k = 2
        let views: Vec<usize> = (0..emb.rows()).map(|r| (r / 2) % 2).collect();
        let identities: Vec<usize> = (0..emb.rows()).map(|r| r / 4).collect();
        let bank = init_centers(&emb, &identities, &views, m, 2).unwrap();
        group.bench_with_input(BenchmarkId::new("cv_ec", m), &m, |b, _| b.iter(|| cv_ec(black_box(&emb), &groups).unwrap()));
        group.bench_with_input(BenchmarkId::new("cv_cl", m), &m, |b, _| {
            b.iter(|| cv_cl(black_box(&emb), &groups, &bank, [0, 1]).unwrap())
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut rng = SeededRng::new(3);
    let (p, g, d) = (100, 100, 32);
    let probes = Matrix::new(p, d, (0..p * d).map(|_| rng.normal()).collect()).unwrap();
    let gallery = Matrix::new(g, d, (0..g * d).map(|_| rng.normal()).collect()).unwrap();
    let probe_ids: Vec<usize> = (0..p).collect();
    let gallery_ids: Vec<usize> = (0..g).collect();
    c.bench_function("distance_matrix_100x100", |b| b.iter(|| distance_matrix(black_box(&probes), &gallery).unwrap()));
    let dist = distance_matrix(&probes, &gallery).unwrap();
    c.bench_function("cmc_100x100", |b| b.iter(|| cmc(black_box(&dist), &probe_ids, &gallery_ids).unwrap()));
    c.bench_function("map_100x100", |b| b.iter(|| mean_ap(black_box(&dist), &probe_ids, &gallery_ids).unwrap()));
}

fn training(c: &mut Criterion) {
    let ds = dataset(20);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs_per_phase: 1,
        ..TrainConfig::default()
    };
    let data = TrainingData::new(&ds, None).unwrap();
    let nets = init_pair(&cfg.net_shape(ds.dim(), ds.num_identities()), 0).unwrap();
    c.bench_function("cvec_epoch_20_identities", |b| {
        b.iter(|| {
            let mut model = PairModel::new(nets.clone(), "bench").unwrap();
            let mut log = TrainLog::default();
            train_phase_cvec(&mut model, &data, &cfg, 0, &mut log).unwrap();
            model
        })
    });
}

criterion_group!(benches, network, losses, retrieval, training);
criterion_main!(benches);
