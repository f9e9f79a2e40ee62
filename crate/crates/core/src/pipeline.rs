//! End-to-end entry points shared by the command-line binary and the
//! integration suites: parse → validate → ground → compile → run, with
//! every failure classified by the exit code it must produce.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::circuit::{
    compile, enumerate_query_probs, CircuitError, CircuitStats, CompiledCircuit, FactParamTable,
    ParamsError, DEFAULT_WORLD_CAP,
};
use crate::ground::{ground_declared_queries, ground_query, GroundAtom, GroundError, GroundTerm};
use crate::logic::{parse_program, parse_query_atom, validate, Atom, Program, Term};
use crate::perception::CheckpointError;
use crate::tensor::Tensor;
use crate::train::{
    balanced_accuracy, evaluate, generate_dataset, train_with_progress, DataBundle, DataError,
    EpochRecord, Metrics, TrainConfig, TrainError, TrainOutput,
};

/// Failure classified by its process exit code: 2 parse, 3 validation,
/// 4 missing parameter, 5 capacity, 6 divergence, 7 unsatisfiable split;
/// plain i/o trouble exits 1.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("unsatisfiable split: {0}")]
    UnsatisfiableSplit(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io(_) => 1,
            PipelineError::Parse(_) => 2,
            PipelineError::Validation(_) => 3,
            PipelineError::MissingParameter(_) => 4,
            PipelineError::Capacity(_) => 5,
            PipelineError::Divergence(_) => 6,
            PipelineError::UnsatisfiableSplit(_) => 7,
        }
    }
}

impl From<GroundError> for PipelineError {
    fn from(e: GroundError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<CircuitError> for PipelineError {
    fn from(e: CircuitError) -> Self {
        match e {
            CircuitError::CapacityExceeded { .. } => PipelineError::Capacity(e.to_string()),
            CircuitError::MissingParameter { key } => PipelineError::MissingParameter(key),
            CircuitError::UnknownQuery(_) => PipelineError::Validation(e.to_string()),
        }
    }
}

impl From<ParamsError> for PipelineError {
    fn from(e: ParamsError) -> Self {
        match e {
            ParamsError::Parse { .. } => PipelineError::Parse(e.to_string()),
            ParamsError::Missing { key } => PipelineError::MissingParameter(key),
            ParamsError::Invalid(msg) => PipelineError::Validation(msg),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => PipelineError::Divergence(e.to_string()),
            TrainError::LabelOutsideFamily { .. } | TrainError::BadParams(_) => {
                PipelineError::Validation(e.to_string())
            }
            TrainError::Circuit(inner) => inner.into(),
            TrainError::Ground(inner) => inner.into(),
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnsatisfiableSplit(msg) => PipelineError::UnsatisfiableSplit(msg),
            DataError::Io(inner) => PipelineError::Io(inner),
            DataError::Malformed { .. } => PipelineError::Parse(e.to_string()),
        }
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(inner) => PipelineError::Io(inner),
            CheckpointError::Version(_) | CheckpointError::Malformed { .. } => {
                PipelineError::Parse(e.to_string())
            }
        }
    }
}

/// Parses and validates program source.
pub fn parse_valid_program(src: &str) -> Result<Program, PipelineError> {
    let program = parse_program(src).map_err(|e| PipelineError::Parse(e.to_string()))?;
    let report = validate(&program);
    if !report.is_ok() {
        return Err(PipelineError::Validation(report.to_string()));
    }
    Ok(program)
}

/// Parses a TOML training configuration.
pub fn parse_train_config(src: &str) -> Result<TrainConfig, PipelineError> {
    toml::from_str(src).map_err(|e| PipelineError::Parse(e.to_string()))
}

/// Renders a configuration back to TOML for resolved-config logs.
pub fn render_train_config(config: &TrainConfig) -> String {
    toml::to_string_pretty(config).expect("train configs serialize")
}

fn ground_atom_of(atom: &Atom) -> GroundAtom {
    GroundAtom {
        pred: atom.pred.clone(),
        args: atom
            .args
            .iter()
            .map(|t| match t {
                Term::Int(n) => GroundTerm::Int(*n),
                Term::Const(c) => GroundTerm::Const(c.clone()),
                Term::Var(_) => unreachable!("pattern checked ground"),
            })
            .collect(),
    }
}

/// Answer to a query command: one `(atom, probability)` row per reachable
/// instance of the pattern, plus the gradient table when requested.
/// `single` marks a ground pattern, answered by exactly one row.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub results: Vec<(String, f64)>,
    pub gradient: Option<Vec<(String, f64)>>,
    pub single: bool,
}

fn prepare(
    program_src: &str,
    query_src: &str,
) -> Result<(crate::ground::GroundProgram, Atom), PipelineError> {
    let program = parse_valid_program(program_src)?;
    let pattern = parse_query_atom(query_src).map_err(|e| PipelineError::Parse(e.to_string()))?;
    let gp = ground_query(&program, &pattern)?;
    Ok((gp, pattern))
}

/// Evaluates a query through the compiled circuit. A ground pattern with no
/// derivation answers zero; gradients are defined for ground patterns only.
pub fn run_query(
    program_src: &str,
    params_src: &str,
    query_src: &str,
    want_grad: bool,
    world_cap: u64,
) -> Result<QueryOutcome, PipelineError> {
    let (gp, pattern) = prepare(program_src, query_src)?;
    let table = FactParamTable::parse(params_src)?;
    table.validate_against(&gp)?;
    if want_grad && !pattern.is_ground() {
        return Err(PipelineError::Validation(format!(
            "gradients need a ground query, got pattern {pattern}"
        )));
    }

    let circuit = compile(&gp, world_cap)?;
    let eval = circuit.evaluate(&table)?;
    let mut results = Vec::new();
    for atom in circuit.queries() {
        results.push((atom.to_string(), circuit.query_prob(&eval, atom)?));
    }
    if results.is_empty() && pattern.is_ground() {
        results.push((ground_atom_of(&pattern).to_string(), 0.0));
    }

    let gradient = if want_grad {
        let target = ground_atom_of(&pattern);
        let rows = if circuit.queries().any(|q| *q == target) {
            let seeds = BTreeMap::from([(target, 1.0)]);
            let grads = circuit.backprop(&eval, &seeds)?;
            grads.iter().map(|(k, v)| (k.clone(), *v)).collect()
        } else {
            Vec::new()
        };
        Some(rows)
    } else {
        None
    };

    Ok(QueryOutcome { results, gradient, single: pattern.is_ground() })
}

/// Evaluates a query by brute-force world enumeration; shares only the
/// grounding with [`run_query`].
pub fn run_oracle(
    program_src: &str,
    params_src: &str,
    query_src: &str,
    world_cap: u64,
) -> Result<QueryOutcome, PipelineError> {
    let (gp, pattern) = prepare(program_src, query_src)?;
    let table = FactParamTable::parse(params_src)?;
    table.validate_against(&gp)?;

    let probs = enumerate_query_probs(&gp, &table, world_cap)?;
    let mut results: Vec<(String, f64)> =
        probs.into_iter().map(|(atom, p)| (atom.to_string(), p)).collect();
    if results.is_empty() && pattern.is_ground() {
        results.push((ground_atom_of(&pattern).to_string(), 0.0));
    }
    Ok(QueryOutcome { results, gradient: None, single: pattern.is_ground() })
}

/// Grounds the declared queries and compiles, reporting circuit shape.
pub fn run_circuit_stats(program_src: &str) -> Result<CircuitStats, PipelineError> {
    let program = parse_valid_program(program_src)?;
    let gp = ground_declared_queries(&program)?;
    let circuit = compile(&gp, DEFAULT_WORLD_CAP)?;
    Ok(circuit.stats())
}

/// Grounds a program's declared queries and compiles it at the default cap.
pub fn compile_program(program: &Program) -> Result<CompiledCircuit, PipelineError> {
    let gp = ground_declared_queries(program)?;
    Ok(compile(&gp, DEFAULT_WORLD_CAP)?)
}

/// Generates the dataset named by the config and runs the training loop.
pub fn run_training(
    config: &TrainConfig,
    program_src: &str,
) -> Result<(TrainOutput, DataBundle), PipelineError> {
    run_training_with_progress(config, program_src, |_| {})
}

/// [`run_training`] with a per-epoch observer.
pub fn run_training_with_progress(
    config: &TrainConfig,
    program_src: &str,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainOutput, DataBundle), PipelineError> {
    let program = parse_valid_program(program_src)?;
    let bundle =
        generate_dataset(&config.scene, &config.counts, &config.split, config.task, config.seed)?;
    let output = train_with_progress(config, &bundle, &program, on_epoch)?;
    Ok((output, bundle))
}

/// Which generated split an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneRole {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SceneRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SceneRole::Train),
            "val" => Ok(SceneRole::Val),
            "test" => Ok(SceneRole::Test),
            other => Err(format!("unknown scene role '{other}', expected train|val|test")),
        }
    }
}

/// Metrics of one evaluation pass, with the label-balanced view needed by
/// binary swap tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub metrics: Metrics,
    pub balanced_accuracy: f64,
    pub implication_violations: usize,
    pub scenes: usize,
}

/// Scores a frozen checkpoint on regenerated scenes. The program and task
/// may differ from the training ones — that is the swap-evaluation path —
/// and `capacity` may exceed the trained slot count.
pub fn run_eval(
    config: &TrainConfig,
    params: &BTreeMap<String, Tensor>,
    program_src: &str,
    task: crate::train::Task,
    role: SceneRole,
    capacity: usize,
) -> Result<EvalSummary, PipelineError> {
    let program = parse_valid_program(program_src)?;
    let circuit = compile_program(&program)?;
    config
        .perception
        .validate_params(params)
        .map_err(PipelineError::Validation)?;
    let bundle =
        generate_dataset(&config.scene, &config.counts, &config.split, task, config.seed)?;
    let examples = match role {
        SceneRole::Train => &bundle.train,
        SceneRole::Val => &bundle.val,
        SceneRole::Test => &bundle.test,
    };
    let report = evaluate(params, &config.perception, &circuit, examples, capacity)?;
    Ok(EvalSummary {
        metrics: report.metrics,
        balanced_accuracy: balanced_accuracy(&report.outcomes),
        implication_violations: report.implication_violations,
        scenes: examples.len(),
    })
}

#[cfg(test)]
mod tests;
