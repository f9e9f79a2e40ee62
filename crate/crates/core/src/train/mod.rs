//! Distant-supervision training: the three-term objective, the epoch loop,
//! and the evaluation metrics.
//!
//! Per scene, the perception stack runs on a tape, the compiled circuit
//! turns head outputs into the label probability, and the task term's
//! gradient re-enters the tape by injection at the head output nodes. The
//! reconstruction and prior terms live on the tape directly, so one
//! backward sweep accumulates the full gradient.

use std::collections::BTreeMap;
use std::io::Write;

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{compile, CircuitError, CompiledCircuit, Evaluation, FactParamTable, DEFAULT_WORLD_CAP};
use crate::ground::{ground_declared_queries, GroundAtom, GroundError, GroundTerm};
use crate::logic::Program;
use crate::perception::{
    extended_slot_init, init_params, perceive, reconstruct, PerceptionConfig, Perceived,
};
use crate::rng;
use crate::tensor::{collect_gradients, leaf_params, AdamW, NodeId, Tape, Tensor};

pub mod data;
pub use data::{
    generate_dataset, load_dataset, save_dataset, DataBundle, DataError, Example, SceneCounts,
    SceneSpec, SplitSpec, Task,
};

/// Probability floor applied to p(y) before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Full description of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_task: f64,
    pub lambda_rec: f64,
    pub lambda_prior: f64,
    pub seed: u64,
    pub program_path: String,
    pub task: Task,
    pub counts: SceneCounts,
    pub split: SplitSpec,
    pub scene: SceneSpec,
    pub perception: PerceptionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            lambda_task: 1.0,
            lambda_rec: 1.0,
            lambda_prior: 1.0,
            seed: 0,
            program_path: String::new(),
            task: Task::Sum,
            counts: SceneCounts::default(),
            split: SplitSpec::default(),
            scene: SceneSpec::default(),
            perception: PerceptionConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("label {label} has no query in the grounded program")]
    LabelOutsideFamily { label: i64 },
    #[error("invalid model parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Ground(#[from] GroundError),
}

/// Accuracy-style summary of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub task_acc: f64,
    pub concept_acc: f64,
    pub count_mae: f64,
}

/// Evaluation outcome plus per-example (label, prediction) pairs.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub outcomes: Vec<(i64, i64)>,
    /// Scenes whose concept prediction was exactly right but whose task
    /// argmax still missed the label.
    pub implication_violations: usize,
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_acc: f64,
    pub concept_acc: f64,
    pub count_mae: f64,
    pub loss_task: f64,
    pub loss_rec: f64,
    pub loss_prior: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Parameters at the best validation task accuracy.
    pub best_params: BTreeMap<String, Tensor>,
    /// Parameters after the final epoch.
    pub final_params: BTreeMap<String, Tensor>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// The label encoded in a query atom's final argument.
fn query_label(atom: &GroundAtom) -> Option<i64> {
    match atom.args.last() {
        Some(GroundTerm::Int(v)) => Some(*v),
        _ => None,
    }
}

fn label_query(circuit: &CompiledCircuit, label: i64) -> Option<GroundAtom> {
    circuit.queries().find(|atom| query_label(atom) == Some(label)).cloned()
}

/// Marginal task distribution keyed by label value.
pub fn label_distribution(circuit: &CompiledCircuit, eval: &Evaluation) -> BTreeMap<i64, f64> {
    circuit
        .task_distribution(eval)
        .into_iter()
        .filter_map(|(atom, p)| query_label(&atom).map(|label| (label, p)))
        .collect()
}

fn argmax_label(dist: &BTreeMap<i64, f64>) -> Option<i64> {
    let mut best: Option<(i64, f64)> = None;
    for (&label, &p) in dist {
        if best.map_or(true, |(_, bp)| p > bp) {
            best = Some((label, p));
        }
    }
    best.map(|(label, _)| label)
}

/// Circuit parameters read off the head output nodes: `object/<slot>` from
/// the betas, `class/<slot>/<value>` from the class rows; slots are
/// numbered from 1.
fn head_param_table(tape: &Tape, perceived: &Perceived) -> FactParamTable {
    let betas = tape.value(perceived.betas);
    let classes = tape.value(perceived.class_dists);
    let mut table = FactParamTable::new();
    for slot in 0..betas.rows() {
        table.insert(format!("object/{}", slot + 1), betas.get(slot, 0));
        for k in 0..classes.cols() {
            table.insert(format!("class/{}/{k}", slot + 1), classes.get(slot, k));
        }
    }
    table
}

/// Hard circuit parameters encoding a known concept assignment: the first
/// `classes.len()` slots hold the objects one-hot, the rest are absent.
pub fn hard_params(classes: &[u32], capacity: usize, class_count: usize) -> FactParamTable {
    let mut table = FactParamTable::new();
    for slot in 1..=capacity {
        let class = classes.get(slot - 1);
        table.insert(format!("object/{slot}"), if class.is_some() { 1.0 } else { 0.0 });
        for k in 0..class_count {
            let hot = class.map_or(k == 0, |&c| c as usize == k);
            table.insert(format!("class/{slot}/{k}"), if hot { 1.0 } else { 0.0 });
        }
    }
    table
}

struct SceneOutcome {
    nll_task: f64,
    rec_loglik: f64,
    prior_logp: f64,
    tape_term: Option<NodeId>,
}

/// Runs one scene end to end on the shared tape: perception, circuit
/// evaluation, task-gradient injection, and the on-tape loss terms.
fn scene_loss(
    tape: &mut Tape,
    leaves: &BTreeMap<String, NodeId>,
    config: &PerceptionConfig,
    circuit: &CompiledCircuit,
    example: &Example,
    lambda_task: f64,
    lambda_rec: f64,
    lambda_prior: f64,
) -> Result<SceneOutcome, TrainError> {
    let perceived = perceive(tape, leaves, config, &example.tokens);

    let mut nll_task = 0.0;
    if lambda_task != 0.0 {
        let table = head_param_table(tape, &perceived);
        let eval = circuit.evaluate(&table)?;
        let query = label_query(circuit, example.label)
            .ok_or(TrainError::LabelOutsideFamily { label: example.label })?;
        let p = circuit.query_prob(&eval, &query)?;
        let clamped = p.max(PROB_FLOOR);
        nll_task = -clamped.ln();

        let seeds = BTreeMap::from([(query, 1.0)]);
        let grads = circuit.backprop(&eval, &seeds)?;
        let scale = -lambda_task / clamped;
        let capacity = tape.value(perceived.betas).rows();
        let classes = tape.value(perceived.class_dists).cols();
        let beta_seed = Tensor::from_fn(capacity, 1, |slot, _| {
            scale * grads.get(&format!("object/{}", slot + 1)).unwrap_or(0.0)
        });
        let class_seed = Tensor::from_fn(capacity, classes, |slot, k| {
            scale * grads.get(&format!("class/{}/{k}", slot + 1)).unwrap_or(0.0)
        });
        tape.inject_gradient(perceived.betas, beta_seed);
        tape.inject_gradient(perceived.class_dists, class_seed);
    }

    let mut tape_term = None;
    let mut rec_loglik = 0.0;
    if lambda_rec != 0.0 {
        let reconstruction = reconstruct(tape, leaves, config, &perceived);
        rec_loglik = tape.value(reconstruction.loglik).get(0, 0);
        tape_term = Some(tape.scale(reconstruction.loglik, -lambda_rec));
    }
    let prior_logp = tape.value(perceived.prior_logp).get(0, 0);
    if lambda_prior != 0.0 {
        let weighted = tape.scale(perceived.prior_logp, -lambda_prior);
        tape_term = Some(match tape_term {
            Some(term) => tape.add(term, weighted),
            None => weighted,
        });
    }

    Ok(SceneOutcome { nll_task, rec_loglik, prior_logp, tape_term })
}

fn scalar_loss(outcome: &SceneOutcome, lambda_task: f64, lambda_rec: f64, lambda_prior: f64) -> f64 {
    lambda_task * outcome.nll_task - lambda_rec * outcome.rec_loglik
        - lambda_prior * outcome.prior_logp
}

/// The full composite loss of one scene at the given parameters.
pub fn composite_loss(
    params: &BTreeMap<String, Tensor>,
    config: &PerceptionConfig,
    circuit: &CompiledCircuit,
    example: &Example,
    lambda_task: f64,
    lambda_rec: f64,
    lambda_prior: f64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let leaves = leaf_params(&mut tape, params);
    let outcome = scene_loss(
        &mut tape, &leaves, config, circuit, example, lambda_task, lambda_rec, lambda_prior,
    )?;
    Ok(scalar_loss(&outcome, lambda_task, lambda_rec, lambda_prior))
}

/// The composite loss and its gradient with respect to every parameter.
pub fn composite_gradients(
    params: &BTreeMap<String, Tensor>,
    config: &PerceptionConfig,
    circuit: &CompiledCircuit,
    example: &Example,
    lambda_task: f64,
    lambda_rec: f64,
    lambda_prior: f64,
) -> Result<(f64, BTreeMap<String, Tensor>), TrainError> {
    let mut tape = Tape::new();
    let leaves = leaf_params(&mut tape, params);
    let outcome = scene_loss(
        &mut tape, &leaves, config, circuit, example, lambda_task, lambda_rec, lambda_prior,
    )?;
    let root = outcome
        .tape_term
        .unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
    tape.backward(root);
    let grads = collect_gradients(&tape, &leaves);
    Ok((scalar_loss(&outcome, lambda_task, lambda_rec, lambda_prior), grads))
}

/// Scores a model on labeled scenes; `capacity` may exceed the trained slot
/// count, in which case the learned slot inits are tiled.
pub fn evaluate(
    params: &BTreeMap<String, Tensor>,
    config: &PerceptionConfig,
    circuit: &CompiledCircuit,
    examples: &[Example],
    capacity: usize,
) -> Result<EvalReport, TrainError> {
    let override_init = (capacity != config.slots)
        .then(|| extended_slot_init(&params["attn/init"], capacity));

    let mut task_hits = 0usize;
    let mut concept_hits = 0usize;
    let mut concept_total = 0usize;
    let mut count_error = 0.0;
    let mut implication_violations = 0usize;
    let mut outcomes = Vec::with_capacity(examples.len());

    for example in examples {
        let mut tape = Tape::new();
        let mut leaves = leaf_params(&mut tape, params);
        if let Some(init) = &override_init {
            leaves.insert("attn/init".into(), tape.leaf(init.clone()));
        }
        let perceived = perceive(&mut tape, &leaves, config, &example.tokens);
        let table = head_param_table(&tape, &perceived);
        let eval = circuit.evaluate(&table)?;
        let dist = label_distribution(circuit, &eval);
        let predicted = argmax_label(&dist)
            .ok_or(TrainError::LabelOutsideFamily { label: example.label })?;
        let task_correct = predicted == example.label;
        task_hits += usize::from(task_correct);
        outcomes.push((example.label, predicted));

        if let Some(truth) = &example.hidden {
            let betas: Vec<f64> = tape.value(perceived.betas).data().to_vec();
            let classes = tape.value(perceived.class_dists);
            let predicted_classes: Vec<usize> = (0..classes.rows())
                .map(|slot| {
                    let row = classes.row(slot);
                    let mut best = 0;
                    for (k, &p) in row.iter().enumerate() {
                        if p > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect();
            let concept_correct = concept_match(&betas, &predicted_classes, truth);
            concept_hits += usize::from(concept_correct);
            concept_total += 1;
            if concept_correct && !task_correct {
                implication_violations += 1;
            }
            let predicted_count = betas.iter().filter(|&&b| b > 0.5).count();
            count_error += (predicted_count as f64 - truth.len() as f64).abs();
        }
    }

    let n = examples.len().max(1);
    let metrics = Metrics {
        task_acc: task_hits as f64 / n as f64,
        concept_acc: concept_hits as f64 / concept_total.max(1) as f64,
        count_mae: count_error / concept_total.max(1) as f64,
    };
    Ok(EvalReport { metrics, outcomes, implication_violations })
}

/// Exact slot-to-object matching by permutation enumeration: true when
/// some assignment pairs every true object with a slot predicting
/// (present, its class) and leaves every other slot predicting absent.
fn concept_match(betas: &[f64], predicted_classes: &[usize], truth: &[u32]) -> bool {
    let n = betas.len();
    if truth.len() > n {
        return false;
    }
    let mut slots: Vec<usize> = (0..n).collect();
    permutations(&mut slots, 0, &mut |perm| {
        for (j, &slot) in perm.iter().enumerate() {
            let ok = if j < truth.len() {
                betas[slot] > 0.5 && predicted_classes[slot] == truth[j] as usize
            } else {
                betas[slot] <= 0.5
            };
            if !ok {
                return false;
            }
        }
        true
    })
}

/// Calls `accept` on every permutation of `items`; stops early on success.
fn permutations(items: &mut Vec<usize>, at: usize, accept: &mut impl FnMut(&[usize]) -> bool) -> bool {
    if at == items.len() {
        return accept(items);
    }
    for i in at..items.len() {
        items.swap(at, i);
        if permutations(items, at + 1, accept) {
            items.swap(at, i);
            return true;
        }
        items.swap(at, i);
    }
    false
}

/// Balanced accuracy over (label, prediction) pairs: the unweighted mean
/// of per-label recalls.
pub fn balanced_accuracy(outcomes: &[(i64, i64)]) -> f64 {
    let mut per_label: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for &(label, predicted) in outcomes {
        let entry = per_label.entry(label).or_insert((0, 0));
        entry.1 += 1;
        entry.0 += usize::from(predicted == label);
    }
    if per_label.is_empty() {
        return 0.0;
    }
    per_label.values().map(|&(hit, total)| hit as f64 / total as f64).sum::<f64>()
        / per_label.len() as f64
}

/// Runs the optimization loop. Scene order reshuffles every epoch, the
/// validation set picks the checkpoint, and hidden annotations are never
/// read.
pub fn train(
    config: &TrainConfig,
    bundle: &DataBundle,
    program: &Program,
) -> Result<TrainOutput, TrainError> {
    train_with_progress(config, bundle, program, |_| {})
}

/// [`train`] with a per-epoch observer for progress reporting.
pub fn train_with_progress(
    config: &TrainConfig,
    bundle: &DataBundle,
    program: &Program,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput, TrainError> {
    let pcfg = &config.perception;
    let grounded = ground_declared_queries(program)?;
    let circuit = compile(&grounded, DEFAULT_WORLD_CAP)?;

    let mut params = init_params(pcfg, &mut rng::stream(config.seed, "init"));
    pcfg.validate_params(&params).map_err(TrainError::BadParams)?;
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = rng::stream(config.seed, "shuffle");

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..bundle.train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let (mut task_sum, mut rec_sum, mut prior_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut tape = Tape::new();
            let leaves = leaf_params(&mut tape, &params);
            let mut root: Option<NodeId> = None;
            let mut batch_loss = 0.0;
            for &index in batch {
                let outcome = scene_loss(
                    &mut tape,
                    &leaves,
                    pcfg,
                    &circuit,
                    &bundle.train[index],
                    config.lambda_task,
                    config.lambda_rec,
                    config.lambda_prior,
                )?;
                task_sum += outcome.nll_task;
                rec_sum -= outcome.rec_loglik;
                prior_sum -= outcome.prior_logp;
                batch_loss +=
                    scalar_loss(&outcome, config.lambda_task, config.lambda_rec, config.lambda_prior);
                root = match (root, outcome.tape_term) {
                    (Some(a), Some(b)) => Some(tape.add(a, b)),
                    (a, b) => a.or(b),
                };
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            let root = root.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
            tape.backward(root);
            let grads = collect_gradients(&tape, &leaves);
            optimizer.step(&mut params, &grads);
        }

        let scenes = bundle.train.len().max(1) as f64;
        let report = evaluate(&params, pcfg, &circuit, &bundle.val, pcfg.slots)?;
        let record = EpochRecord {
            epoch,
            task_acc: report.metrics.task_acc,
            concept_acc: report.metrics.concept_acc,
            count_mae: report.metrics.count_mae,
            loss_task: task_sum / scenes,
            loss_rec: rec_sum / scenes,
            loss_prior: prior_sum / scenes,
        };
        history.push(record);
        on_epoch(&record);
        // Ties go to the later epoch: validation task accuracy saturates
        // early while the reconstruction term keeps refining objectness.
        if best.as_ref().map_or(true, |(acc, _, _)| report.metrics.task_acc >= *acc) {
            best = Some((report.metrics.task_acc, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) =
        best.unwrap_or((0.0, 0, params.clone()));
    Ok(TrainOutput { best_params, final_params: params, best_epoch, history })
}

/// Writes the per-epoch history as CSV.
pub fn write_metrics_csv(mut w: impl Write, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,task_acc,concept_acc,count_mae,loss_task,loss_rec,loss_prior")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.task_acc, r.concept_acc, r.count_mae, r.loss_task, r.loss_rec, r.loss_prior
        )?;
    }
    Ok(())
}

/// Writes the per-epoch history as JSON lines.
pub fn write_metrics_jsonl(mut w: impl Write, history: &[EpochRecord]) -> std::io::Result<()> {
    for r in history {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        writeln!(w, "{line}")?;
    }
    Ok(())
}
