use std::collections::BTreeMap;

use slotlog_core::circuit::{compile, FactParamTable};
use slotlog_core::ground::ground_declared_queries;
use slotlog_core::logic::parse_program;
use slotlog_core::perception::{load_checkpoint, perceive};
use slotlog_core::pipeline::parse_train_config;
use slotlog_core::programs;
use slotlog_core::tensor::Tape;
use slotlog_core::train::{evaluate, generate_dataset, label_distribution};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let config_path = args.get(1).map(String::as_str).unwrap_or("/tmp/recB.toml");
    let checkpoint_path = args.get(2).map(String::as_str).unwrap_or("/tmp/runB/final.txt");

    let toml = std::fs::read_to_string(config_path).unwrap();
    let config = parse_train_config(&toml).unwrap();
    let bundle = generate_dataset(&config.scene, &config.counts, &config.split, config.task, config.seed).unwrap();
    let params = load_checkpoint(checkpoint_path).unwrap();

    let program = parse_program(&programs::addition(3, 5)).unwrap();
    let ground = ground_declared_queries(&program).unwrap();
    let circuit = compile(&ground, 1 << 24).unwrap();

    let report = evaluate(&params, &config.perception, &circuit, &bundle.test, 3).unwrap();
    println!(
        "ood task {:.4} concept {:.4} mae {:.4}",
        report.metrics.task_acc, report.metrics.concept_acc, report.metrics.count_mae
    );

    let mut histogram: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut shown = 0usize;
    for example in &bundle.test {
        let mut tape = Tape::new();
        let leaves: BTreeMap<String, _> =
            params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
        let out = perceive(&mut tape, &leaves, &config.perception, &example.tokens);
        let betas = tape.value(out.betas).clone();
        let classes = tape.value(out.class_dists).clone();
        let mut table = FactParamTable::new();
        for s in 0..betas.rows() {
            table.insert(format!("object/{}", s + 1), betas.get(s, 0));
            for k in 0..classes.cols() {
                table.insert(format!("class/{}/{k}", s + 1), classes.get(s, k));
            }
        }
        let eval = circuit.evaluate(&table).unwrap();
        let dist = label_distribution(&circuit, &eval);
        let (pred, _) = dist
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
            .unwrap();
        if *pred == example.label {
            continue;
        }
        let mut truth = example.hidden.clone().unwrap();
        truth.sort_unstable();
        let predicted: Vec<String> = (0..3)
            .map(|s| {
                let beta = betas.get(s, 0);
                let k = (0..5)
                    .max_by(|&a, &b| classes.get(s, a).partial_cmp(&classes.get(s, b)).unwrap())
                    .unwrap();
                if beta > 0.5 {
                    format!("{k}({beta:.2})")
                } else {
                    format!("-({beta:.2})")
                }
            })
            .collect();
        let mut predicted_sorted = predicted.clone();
        predicted_sorted.sort();
        *histogram
            .entry((format!("{truth:?}"), predicted_sorted.join(" ")))
            .or_insert(0) += 1;
        if shown < 15 {
            println!(
                "true {truth:?} label {} -> pred {} slots [{}]",
                example.label,
                pred,
                predicted.join(", ")
            );
            shown += 1;
        }
    }
    let mut rows: Vec<_> = histogram.into_iter().collect();
    rows.sort_by_key(|(_, n)| std::cmp::Reverse(*n));
    println!("-- most common error patterns --");
    for ((truth, pred), n) in rows.into_iter().take(12) {
        println!("{n:4}  true {truth}  pred {pred}");
    }
}
