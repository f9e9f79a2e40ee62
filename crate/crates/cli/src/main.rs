//! `slotlog` command-line binary: circuit and oracle inference, dataset
//! generation, training, and frozen-checkpoint evaluation. Every command
//! logs its resolved configuration to standard error and keeps standard
//! output machine-readable; failures exit with the code of their class
//! (2 parse, 3 validation, 4 missing parameter, 5 capacity, 6 divergence,
//! 7 unsatisfiable split, 1 i/o).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use slotlog_core::circuit::{DEFAULT_ORACLE_WORLD_CAP, DEFAULT_WORLD_CAP};
use slotlog_core::perception::{load_checkpoint, save_checkpoint};
use slotlog_core::pipeline::{
    parse_train_config, render_train_config, run_circuit_stats, run_eval, run_oracle, run_query,
    run_training_with_progress, PipelineError, QueryOutcome, SceneRole,
};
use slotlog_core::train::{
    generate_dataset, save_dataset, write_metrics_csv, write_metrics_jsonl, Task, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "slotlog",
    version,
    about = "Differentiable probabilistic-logic engine with an object-centric perception stack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a query through the compiled circuit.
    Query(QueryArgs),
    /// Evaluate a query by brute-force world enumeration.
    Oracle(OracleArgs),
    /// Generate scene datasets from a training config.
    GenData(GenDataArgs),
    /// Train a model as described by a config file.
    Train(TrainArgs),
    /// Score a trained checkpoint on regenerated scenes.
    Eval(EvalArgs),
    /// Score a frozen checkpoint under a different program and task.
    SwapEval(EvalArgs),
    /// Report the compiled circuit's shape for a program.
    CircuitStats(CircuitStatsArgs),
}

#[derive(Args)]
struct QueryArgs {
    /// Program file.
    #[arg(long)]
    program: PathBuf,
    /// Parameter table (`key value` or `key v0 .. vK-1` lines, `#` comments).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Query atom or pattern, e.g. `add(1)` or `add(Z)`.
    #[arg(long)]
    query: String,
    /// Also print the gradient, one `key value` line per parameter.
    #[arg(long)]
    grad: bool,
    /// World-count limit for compilation.
    #[arg(long, default_value_t = DEFAULT_WORLD_CAP)]
    world_cap: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Program file.
    #[arg(long)]
    program: PathBuf,
    /// Parameter table (`key value` or `key v0 .. vK-1` lines, `#` comments).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Query atom or pattern, e.g. `add(1)` or `add(Z)`.
    #[arg(long)]
    query: String,
    /// World-count limit for enumeration.
    #[arg(long, default_value_t = DEFAULT_ORACLE_WORLD_CAP)]
    world_cap: u64,
}

#[derive(Args)]
struct GenDataArgs {
    /// Training config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for dataset files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint and metrics.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Training config (TOML) describing the scenes and the model shape.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint file to score.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Program file; defaults to the config's program.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Task labeling the scenes (sum | has-pair); defaults to the config's.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Slot capacity; defaults to the trained slot count.
    #[arg(long)]
    capacity: Option<usize>,
    /// Which generated split to score (train | val | test).
    #[arg(long, default_value = "test", value_parser = parse_role)]
    scenes: SceneRole,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional directory for a metrics file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CircuitStatsArgs {
    /// Program file.
    #[arg(long)]
    program: PathBuf,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "sum" => Ok(Task::Sum),
        "has-pair" => Ok(Task::HasPair),
        other => Err(format!("unknown task '{other}', expected sum|has-pair")),
    }
}

fn parse_role(s: &str) -> Result<SceneRole, String> {
    s.parse()
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Sum => "sum",
        Task::HasPair => "has-pair",
    }
}

fn role_name(role: SceneRole) -> &'static str {
    match role {
        SceneRole::Train => "train",
        SceneRole::Val => "val",
        SceneRole::Test => "test",
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Query(args) => cmd_query(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args, false),
        Command::SwapEval(args) => cmd_eval(args, true),
        Command::CircuitStats(args) => cmd_circuit_stats(args),
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    Ok(fs::read_to_string(path)?)
}

/// Loads a config, applies the seed override, and resolves a relative
/// program path against the config file's directory.
fn load_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig, PipelineError> {
    let mut config = parse_train_config(&read(path)?)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if !config.program_path.is_empty() && Path::new(&config.program_path).is_relative() {
        if let Some(dir) = path.parent() {
            config.program_path = dir.join(&config.program_path).to_string_lossy().into_owned();
        }
    }
    Ok(config)
}

fn log_resolved(parts: &[(&str, String)]) {
    let line: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("# resolved {}", line.join(" "));
}

fn log_resolved_config(config: &TrainConfig) {
    eprintln!("# resolved config");
    for line in render_train_config(config).lines() {
        eprintln!("# {line}");
    }
}

fn print_outcome(outcome: &QueryOutcome) {
    if outcome.single {
        println!("{:.12}", outcome.results[0].1);
    } else {
        for (atom, p) in &outcome.results {
            println!("{atom} {p:.12}");
        }
    }
    if let Some(gradient) = &outcome.gradient {
        for (key, value) in gradient {
            println!("{key} {value:.12}");
        }
    }
}

fn cmd_query(args: QueryArgs) -> Result<(), PipelineError> {
    log_resolved(&[
        ("command", "query".into()),
        ("program", args.program.display().to_string()),
        ("params", args.params.as_deref().unwrap_or(Path::new("")).display().to_string()),
        ("query", args.query.clone()),
        ("grad", args.grad.to_string()),
        ("world_cap", args.world_cap.to_string()),
    ]);
    let program = read(&args.program)?;
    let params = match &args.params {
        Some(path) => read(path)?,
        None => String::new(),
    };
    let outcome = run_query(&program, &params, &args.query, args.grad, args.world_cap)?;
    print_outcome(&outcome);
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), PipelineError> {
    log_resolved(&[
        ("command", "oracle".into()),
        ("program", args.program.display().to_string()),
        ("params", args.params.as_deref().unwrap_or(Path::new("")).display().to_string()),
        ("query", args.query.clone()),
        ("world_cap", args.world_cap.to_string()),
    ]);
    let program = read(&args.program)?;
    let params = match &args.params {
        Some(path) => read(path)?,
        None => String::new(),
    };
    let outcome = run_oracle(&program, &params, &args.query, args.world_cap)?;
    print_outcome(&outcome);
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), PipelineError> {
    let config = load_config(&args.config, args.seed)?;
    log_resolved(&[
        ("command", "gen-data".into()),
        ("config", args.config.display().to_string()),
        ("out", args.out.display().to_string()),
    ]);
    log_resolved_config(&config);
    let bundle = generate_dataset(
        &config.scene,
        &config.counts,
        &config.split,
        config.task,
        config.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    for (role, examples) in
        [("train", &bundle.train), ("val", &bundle.val), ("test", &bundle.test)]
    {
        save_dataset(
            args.out.join(format!("{role}.txt")),
            args.out.join(format!("{role}.hidden.txt")),
            examples,
        )?;
    }
    fs::write(args.out.join("config.resolved.toml"), render_train_config(&config))?;
    println!(
        "wrote {} train, {} val, {} test scenes under {}",
        bundle.train.len(),
        bundle.val.len(),
        bundle.test.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), PipelineError> {
    let config = load_config(&args.config, args.seed)?;
    log_resolved(&[
        ("command", "train".into()),
        ("config", args.config.display().to_string()),
        ("out", args.out.display().to_string()),
    ]);
    log_resolved_config(&config);
    let program = read(Path::new(&config.program_path))?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("config.resolved.toml"), render_train_config(&config))?;

    let (output, _) = run_training_with_progress(&config, &program, |r| {
        eprintln!(
            "epoch {} task_acc {:.4} concept_acc {:.4} count_mae {:.4} \
             loss_task {:.4} loss_rec {:.4} loss_prior {:.4}",
            r.epoch, r.task_acc, r.concept_acc, r.count_mae, r.loss_task, r.loss_rec, r.loss_prior
        );
    })?;

    save_checkpoint(args.out.join("checkpoint.txt"), &output.best_params)?;
    save_checkpoint(args.out.join("final.txt"), &output.final_params)?;
    write_metrics_csv(fs::File::create(args.out.join("metrics.csv"))?, &output.history)?;
    write_metrics_jsonl(fs::File::create(args.out.join("metrics.jsonl"))?, &output.history)?;

    println!("best_epoch {}", output.best_epoch);
    if let Some(record) = output.history.get(output.best_epoch.wrapping_sub(1)) {
        println!("val_task_acc {:.6}", record.task_acc);
    }
    println!("checkpoint {}", args.out.join("checkpoint.txt").display());
    Ok(())
}

fn cmd_eval(args: EvalArgs, swap: bool) -> Result<(), PipelineError> {
    let config = load_config(&args.config, args.seed)?;
    let program_path = match &args.program {
        Some(path) => path.clone(),
        None => PathBuf::from(&config.program_path),
    };
    let task = args.task.unwrap_or(config.task);
    let capacity = args.capacity.unwrap_or(config.perception.slots);
    log_resolved(&[
        ("command", if swap { "swap-eval".into() } else { "eval".into() }),
        ("config", args.config.display().to_string()),
        ("checkpoint", args.checkpoint.display().to_string()),
        ("program", program_path.display().to_string()),
        ("task", task_name(task).into()),
        ("capacity", capacity.to_string()),
        ("scenes", role_name(args.scenes).into()),
    ]);
    log_resolved_config(&config);

    let params = load_checkpoint(&args.checkpoint)?;
    let program = read(&program_path)?;
    let summary = run_eval(&config, &params, &program, task, args.scenes, capacity)?;

    println!("scenes {}", summary.scenes);
    println!("task_acc {:.6}", summary.metrics.task_acc);
    println!("concept_acc {:.6}", summary.metrics.concept_acc);
    println!("count_mae {:.6}", summary.metrics.count_mae);
    println!("balanced_acc {:.6}", summary.balanced_accuracy);
    println!("implication_violations {}", summary.implication_violations);

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        let name = if swap { "swap-eval.csv" } else { "eval.csv" };
        let csv = format!(
            "scenes,task_acc,concept_acc,count_mae,balanced_acc,implication_violations\n\
             {},{},{},{},{},{}\n",
            summary.scenes,
            summary.metrics.task_acc,
            summary.metrics.concept_acc,
            summary.metrics.count_mae,
            summary.balanced_accuracy,
            summary.implication_violations
        );
        fs::write(out.join(name), csv)?;
    }
    Ok(())
}

fn cmd_circuit_stats(args: CircuitStatsArgs) -> Result<(), PipelineError> {
    log_resolved(&[
        ("command", "circuit-stats".into()),
        ("program", args.program.display().to_string()),
    ]);
    let stats = run_circuit_stats(&read(&args.program)?)?;
    println!("variables {}", stats.variables);
    println!("worlds {}", stats.worlds);
    println!("nodes {}", stats.nodes);
    println!("decision_nodes {}", stats.decision_nodes);
    println!("queries {}", stats.queries);
    Ok(())
}
