use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use slotlog_bench::{bench_model, bench_scene, compiled};
use slotlog_core::perception::perceive;
use slotlog_core::tensor::Tape;
use slotlog_core::train::composite_gradients;

fn bench_perceive(c: &mut Criterion) {
    let (config, params) = bench_model();
    let scene = bench_scene(&config);
    c.bench_function("perceive", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let leaves: BTreeMap<String, _> =
                params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
            perceive(&mut tape, &leaves, black_box(&config), black_box(&scene.tokens))
        })
    });
}

fn bench_training_step(c: &mut Criterion) {
    let (config, params) = bench_model();
    let scene = bench_scene(&config);
    let circuit = compiled(config.slots, config.classes);
    c.bench_function("scene_gradients", |b| {
        b.iter(|| {
            composite_gradients(
                black_box(&params),
                &config,
                &circuit,
                black_box(&scene),
                1.0,
                0.2,
                0.001,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_perceive, bench_training_step);
criterion_main!(benches);
