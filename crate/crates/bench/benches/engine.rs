use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use slotlog_bench::{addition_program, compiled, grounded, uniform_table};
use slotlog_core::circuit::{compile, enumerate_query_probs, DEFAULT_WORLD_CAP};
use slotlog_core::ground::ground_declared_queries;

fn bench_grounding(c: &mut Criterion) {
    let mut group = c.benchmark_group("ground");
    for (slots, classes) in [(2, 2), (3, 5), (5, 5)] {
        let program = addition_program(slots, classes);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("add{slots}_k{classes}")),
            &program,
            |b, program| b.iter(|| ground_declared_queries(black_box(program)).unwrap()),
        );
    }
    group.finish();
}

fn bench_compile(c: &mut Criterion) {
    let mut group = c.benchmark_group("compile");
    for (slots, classes) in [(2, 2), (3, 5), (5, 5)] {
        let ground = grounded(slots, classes);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("add{slots}_k{classes}")),
            &ground,
            |b, ground| b.iter(|| compile(black_box(ground), DEFAULT_WORLD_CAP).unwrap()),
        );
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    for (slots, classes) in [(2, 2), (3, 5), (5, 5)] {
        let circuit = compiled(slots, classes);
        let table = uniform_table(slots, classes);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("add{slots}_k{classes}")),
            &(circuit, table),
            |b, (circuit, table)| b.iter(|| circuit.evaluate(black_box(table)).unwrap()),
        );
    }
    group.finish();
}

fn bench_backprop(c: &mut Criterion) {
    let mut group = c.benchmark_group("backprop");
    for (slots, classes) in [(2, 2), (3, 5), (5, 5)] {
        let circuit = compiled(slots, classes);
        let table = uniform_table(slots, classes);
        let eval = circuit.evaluate(&table).unwrap();
        let seeds: BTreeMap<_, _> =
            circuit.queries().map(|atom| (atom.clone(), 1.0)).collect();
        group.bench_function(BenchmarkId::from_parameter(format!("add{slots}_k{classes}")), |b| {
            b.iter(|| circuit.backprop(black_box(&eval), black_box(&seeds)).unwrap())
        });
    }
    group.finish();
}

fn bench_enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate");
    for (slots, classes) in [(2, 2), (3, 5)] {
        let ground = grounded(slots, classes);
        let table = uniform_table(slots, classes);
        group.bench_function(BenchmarkId::from_parameter(format!("add{slots}_k{classes}")), |b| {
            b.iter(|| {
                enumerate_query_probs(black_box(&ground), black_box(&table), DEFAULT_WORLD_CAP)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_grounding,
    bench_compile,
    bench_evaluate,
    bench_backprop,
    bench_enumeration
);
criterion_main!(benches);
