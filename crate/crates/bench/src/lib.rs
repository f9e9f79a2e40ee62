//! Shared fixtures for the criterion benches.

use std::collections::BTreeMap;

use slotlog_core::circuit::{compile, CompiledCircuit, FactParamTable, DEFAULT_WORLD_CAP};
use slotlog_core::ground::{ground_declared_queries, GroundProgram};
use slotlog_core::logic::{parse_program, Program};
use slotlog_core::perception::{init_params, PerceptionConfig};
use slotlog_core::programs;
use slotlog_core::rng::stream;
use slotlog_core::tensor::Tensor;
use slotlog_core::train::Example;

pub fn addition_program(slots: usize, classes: usize) -> Program {
    parse_program(&programs::addition(slots, classes)).expect("template parses")
}

pub fn grounded(slots: usize, classes: usize) -> GroundProgram {
    ground_declared_queries(&addition_program(slots, classes)).expect("template grounds")
}

pub fn compiled(slots: usize, classes: usize) -> CompiledCircuit {
    compile(&grounded(slots, classes), DEFAULT_WORLD_CAP).expect("template compiles")
}

pub fn uniform_table(slots: usize, classes: usize) -> FactParamTable {
    let mut table = FactParamTable::new();
    for i in 1..=slots {
        table.insert(format!("object/{i}"), 0.5);
        for k in 0..classes {
            table.insert(format!("class/{i}/{k}"), 1.0 / classes as f64);
        }
    }
    table
}

pub fn bench_perception_config() -> PerceptionConfig {
    PerceptionConfig::default()
}

pub fn bench_model() -> (PerceptionConfig, BTreeMap<String, Tensor>) {
    let config = bench_perception_config();
    let mut rng = stream(7, "init");
    let params = init_params(&config, &mut rng);
    (config, params)
}

pub fn bench_scene(config: &PerceptionConfig) -> Example {
    let mut rng = stream(11, "data");
    use rand::Rng;
    Example {
        tokens: Tensor::from_fn(config.tokens, config.token_dim, |_, _| {
            rng.random_range(-1.0..1.0)
        }),
        label: 4,
        hidden: None,
    }
}
