use super::*;

use rand::prelude::*;

use crate::perception::PerceptionConfig;
use crate::programs;
use crate::rng;
use crate::train::{SceneCounts, SceneSpec, SplitSpec, Task};

const WORKED_PARAMS: &str = "\
# two-slot instance
object/1 0.8
object/2 0.6
class/1 0.3 0.7
class/2 0.3 0.7
";

#[test]
fn a_literal_fact_query_reports_its_probability() {
    let outcome = run_query("0.5::f.", "", "f", false, DEFAULT_WORLD_CAP).unwrap();
    assert!(outcome.single);
    assert_eq!(outcome.results, vec![("f".to_string(), 0.5)]);
    assert!(outcome.gradient.is_none());
}

#[test]
fn the_worked_instance_answers_through_both_routes() {
    let program = programs::addition(2, 2);
    let query = run_query(&program, WORKED_PARAMS, "add(1)", false, DEFAULT_WORLD_CAP).unwrap();
    assert!(query.single);
    assert!((query.results[0].1 - 0.5096).abs() < 1e-12);

    let oracle = run_oracle(&program, WORKED_PARAMS, "add(1)", DEFAULT_WORLD_CAP).unwrap();
    assert!((oracle.results[0].1 - 0.5096).abs() < 1e-12);

    let family = run_query(&program, WORKED_PARAMS, "add(Z)", false, DEFAULT_WORLD_CAP).unwrap();
    assert!(!family.single);
    let expected = [("add(0)", 0.2552), ("add(1)", 0.5096), ("add(2)", 0.2352)];
    assert_eq!(family.results.len(), 3);
    for ((atom, p), (want_atom, want_p)) in family.results.iter().zip(expected) {
        assert_eq!(atom, want_atom);
        assert!((p - want_p).abs() < 1e-12);
    }
}

#[test]
fn gradient_lines_cover_every_external_key() {
    let program = programs::addition(2, 2);
    let outcome = run_query(&program, WORKED_PARAMS, "add(2)", true, DEFAULT_WORLD_CAP).unwrap();
    let gradient = outcome.gradient.unwrap();
    let keys: Vec<&str> = gradient.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(
        keys,
        ["class/1/0", "class/1/1", "class/2/0", "class/2/1", "object/1", "object/2"]
    );
    let get = |key: &str| gradient.iter().find(|(k, _)| k == key).unwrap().1;
    assert!((get("object/1") - 0.294).abs() < 1e-12);
    assert!((get("object/2") - 0.392).abs() < 1e-12);
    assert!((get("class/1/1") - 0.336).abs() < 1e-12);
}

#[test]
fn query_and_oracle_agree_on_randomized_tables() {
    let mut rng = rng::stream(23, "pipeline-agreement");
    let programs = [programs::addition(2, 3), programs::pair(2, 2), programs::count(3)];
    for program in &programs {
        for _ in 0..8 {
            let mut params = String::new();
            for slot in 1..=3 {
                params.push_str(&format!("object/{slot} {}\n", rng.random_range(0.05..0.95)));
                let a: f64 = rng.random_range(0.1..1.0);
                let b: f64 = rng.random_range(0.1..1.0);
                let c: f64 = rng.random_range(0.1..1.0);
                let z = a + b + c;
                params.push_str(&format!("class/{slot} {} {} {}\n", a / z, b / z, c / z));
            }
            for query in ["add(Z)", "haspair(Y)", "count(Z)"] {
                let by_query = match run_query(program, &params, query, false, DEFAULT_WORLD_CAP) {
                    Ok(outcome) => outcome,
                    Err(PipelineError::Validation(_)) => continue,
                    Err(e) => panic!("{e}"),
                };
                let by_oracle = run_oracle(program, &params, query, DEFAULT_WORLD_CAP).unwrap();
                assert_eq!(by_query.results.len(), by_oracle.results.len());
                for ((qa, qp), (oa, op)) in
                    by_query.results.iter().zip(by_oracle.results.iter())
                {
                    assert_eq!(qa, oa);
                    assert!((qp - op).abs() < 1e-9, "{qa}: circuit {qp}, oracle {op}");
                }
            }
        }
    }
}

#[test]
fn a_ground_query_with_no_derivation_answers_zero() {
    let program = programs::addition(2, 2);
    let outcome = run_query(&program, WORKED_PARAMS, "add(9)", false, DEFAULT_WORLD_CAP).unwrap();
    assert_eq!(outcome.results, vec![("add(9)".to_string(), 0.0)]);
    let oracle = run_oracle(&program, WORKED_PARAMS, "add(9)", DEFAULT_WORLD_CAP).unwrap();
    assert_eq!(oracle.results, vec![("add(9)".to_string(), 0.0)]);
}

#[test]
fn failures_carry_their_exit_codes() {
    let program = programs::addition(2, 2);

    let parse = run_query("0.5::f", "", "f", false, DEFAULT_WORLD_CAP).unwrap_err();
    assert_eq!(parse.exit_code(), 2);

    let bad_params = "object/1 0.8\nobject/2 0.6\nclass/1 0.5 0.9\nclass/2 0.3 0.7\n";
    let validation =
        run_query(&program, bad_params, "add(1)", false, DEFAULT_WORLD_CAP).unwrap_err();
    assert_eq!(validation.exit_code(), 3);

    let missing = "object/1 0.8\nclass/1 0.3 0.7\nclass/2 0.3 0.7\n";
    let missing_err =
        run_query(&program, missing, "add(1)", false, DEFAULT_WORLD_CAP).unwrap_err();
    assert!(matches!(missing_err, PipelineError::MissingParameter(ref k) if k == "object/2"));
    assert_eq!(missing_err.exit_code(), 4);

    let capacity = run_query(&program, WORKED_PARAMS, "add(1)", false, 2).unwrap_err();
    assert_eq!(capacity.exit_code(), 5);

    let grad_on_pattern =
        run_query(&program, WORKED_PARAMS, "add(Z)", true, DEFAULT_WORLD_CAP).unwrap_err();
    assert_eq!(grad_on_pattern.exit_code(), 3);

    let bad_query = run_query(&program, WORKED_PARAMS, "add(", false, DEFAULT_WORLD_CAP)
        .unwrap_err();
    assert_eq!(bad_query.exit_code(), 2);
}

#[test]
fn circuit_stats_report_the_compiled_shape() {
    let stats = run_circuit_stats(&programs::addition(2, 2)).unwrap();
    assert_eq!(stats.variables, 4);
    assert_eq!(stats.worlds, 16);
    assert_eq!(stats.queries, 3);
    assert!(stats.decision_nodes > 0);
}

#[test]
fn train_configs_round_trip_through_toml() {
    let config = TrainConfig::default();
    let rendered = render_train_config(&config);
    let parsed = parse_train_config(&rendered).unwrap();
    assert_eq!(render_train_config(&parsed), rendered);

    let sparse = parse_train_config("epochs = 3\n[split]\nkind = \"interpolation\"\n").unwrap();
    assert_eq!(sparse.epochs, 3);
    assert!(matches!(sparse.split, SplitSpec::Interpolation));

    assert!(parse_train_config("epochs = \"many\"").is_err());
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        lambda_task: 1.0,
        lambda_rec: 0.05,
        lambda_prior: 0.01,
        seed: 5,
        program_path: String::new(),
        task: Task::Sum,
        counts: SceneCounts { train: 16, val: 8, test: 8 },
        split: SplitSpec::default(),
        scene: SceneSpec {
            min_objects: 0,
            max_objects: 2,
            classes: 2,
            tokens_per_object: 1,
            background_tokens: 1,
            token_dim: 4,
            noise: 0.1,
            prototype_scale: 1.0,
        },
        perception: PerceptionConfig {
            tokens: 3,
            token_dim: 4,
            latent_dim: 6,
            slot_dim: 6,
            slots: 2,
            classes: 2,
            hidden_dim: 8,
            attention_iterations: 1,
            position_dim: 2,
        },
    }
}

#[test]
fn training_and_evaluation_run_end_to_end() {
    let config = tiny_config();
    let program = programs::addition(2, 2);
    let (output, _bundle) = run_training(&config, &program).unwrap();
    assert_eq!(output.history.len(), config.epochs);

    let capacity = config.perception.slots;
    let summary = run_eval(
        &config,
        &output.best_params,
        &program,
        Task::Sum,
        SceneRole::Test,
        capacity,
    )
    .unwrap();
    assert_eq!(summary.scenes, config.counts.test);
    assert!(summary.metrics.task_acc.is_finite());
    assert!(summary.metrics.count_mae.is_finite());

    let again = run_eval(
        &config,
        &output.best_params,
        &program,
        Task::Sum,
        SceneRole::Test,
        capacity,
    )
    .unwrap();
    assert_eq!(summary, again);

    let swapped = run_eval(
        &config,
        &output.best_params,
        &programs::pair(2, 2),
        Task::HasPair,
        SceneRole::Test,
        capacity,
    )
    .unwrap();
    assert!(swapped.balanced_accuracy.is_finite());
    assert!((0.0..=1.0).contains(&swapped.balanced_accuracy));
}
