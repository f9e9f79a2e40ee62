use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ground::{ground_declared_queries, GroundProgram, GroundTerm};
use crate::logic::parse_program;
use crate::programs;

fn gp_of(src: &str) -> GroundProgram {
    ground_declared_queries(&parse_program(src).unwrap()).unwrap()
}

fn atom(pred: &str, args: &[i64]) -> GroundAtom {
    GroundAtom { pred: pred.into(), args: args.iter().map(|&n| GroundTerm::Int(n)).collect() }
}

/// The two-slot, two-class addition instance whose numbers are simple to
/// verify by hand:
///   P(d1 = 0) = 0.2 + 0.8 * 0.3 = 0.44     P(d1 = 1) = 0.8 * 0.7 = 0.56
///   P(d2 = 0) = 0.4 + 0.6 * 0.3 = 0.58     P(d2 = 1) = 0.6 * 0.7 = 0.42
fn worked_table() -> FactParamTable {
    FactParamTable::parse("object/1 0.8\nobject/2 0.6\nclass/1 0.3 0.7\nclass/2 0.3 0.7\n")
        .unwrap()
}

const P_ADD0: f64 = 0.44 * 0.58; // 0.2552
const P_ADD1: f64 = 0.44 * 0.42 + 0.56 * 0.58; // 0.5096
const P_ADD2: f64 = 0.56 * 0.42; // 0.2352

fn random_table(gp: &GroundProgram, rng: &mut ChaCha8Rng) -> FactParamTable {
    let mut table = FactParamTable::new();
    let mut cells: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for f in &gp.facts {
        if let crate::logic::FactParam::External(key) = &f.param {
            match &f.group {
                None => table.insert(key.clone(), rng.random_range(0.05..0.95)),
                Some(g) => cells
                    .entry((g.name.clone(), g.cell.clone()))
                    .or_default()
                    .push(key.clone()),
            }
        }
    }
    for keys in cells.into_values() {
        let raw: Vec<f64> = keys.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (key, r) in keys.iter().zip(raw) {
            table.insert(key.clone(), r / total);
        }
    }
    table
}

fn random_instance(rng: &mut ChaCha8Rng) -> (GroundProgram, FactParamTable) {
    let n = rng.random_range(1..=4);
    let k = rng.random_range(2..=5);
    let src = match rng.random_range(0..4) {
        0 => programs::addition(n, k),
        1 => programs::addition_conditioned(n, k),
        2 => programs::count(n),
        _ => programs::pair(n.max(2), k),
    };
    let gp = gp_of(&src);
    let table = random_table(&gp, rng);
    (gp, table)
}

#[test]
fn oracle_matches_hand_computed_values() {
    let gp = gp_of(&programs::addition(2, 2));
    let dist = enumerate_query_probs(&gp, &worked_table(), DEFAULT_ORACLE_WORLD_CAP).unwrap();
    assert!((dist[&atom("add", &[0])] - P_ADD0).abs() < 1e-12);
    assert!((dist[&atom("add", &[1])] - P_ADD1).abs() < 1e-12);
    assert!((dist[&atom("add", &[2])] - P_ADD2).abs() < 1e-12);
    assert!((P_ADD0 - 0.2552).abs() < 1e-15);
    assert!((P_ADD1 - 0.5096).abs() < 1e-15);
    assert!((P_ADD2 - 0.2352).abs() < 1e-15);
}

#[test]
fn compiled_circuit_matches_hand_computed_values() {
    let gp = gp_of(&programs::addition(2, 2));
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let eval = circuit.evaluate(&worked_table()).unwrap();
    let dist = circuit.task_distribution(&eval);
    assert!((dist[&atom("add", &[0])] - P_ADD0).abs() < 1e-12);
    assert!((dist[&atom("add", &[1])] - P_ADD1).abs() < 1e-12);
    assert!((dist[&atom("add", &[2])] - P_ADD2).abs() < 1e-12);
    let total: f64 = dist.values().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn gradients_match_hand_computed_values() {
    let gp = gp_of(&programs::addition(2, 2));
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let table = worked_table();
    let eval = circuit.evaluate(&table).unwrap();

    // p(add(2)) = b1 * c1[1] * b2 * c2[1].
    let mut seeds = BTreeMap::new();
    seeds.insert(atom("add", &[2]), 1.0);
    let grads = circuit.backprop(&eval, &seeds).unwrap();
    assert!((grads.get("object/1").unwrap() - 0.294).abs() < 1e-12);
    assert!((grads.get("object/2").unwrap() - 0.392).abs() < 1e-12);
    assert!((grads.get("class/1/1").unwrap() - 0.336).abs() < 1e-12);
    assert!((grads.get("class/2/1").unwrap() - 0.336).abs() < 1e-12);
    assert_eq!(grads.get("class/1/0").unwrap(), 0.0);

    // p(add(0)) = (1 - b1 + b1 c1[0]) (1 - b2 + b2 c2[0]); d/db1 = -0.7 * 0.58.
    let mut seeds = BTreeMap::new();
    seeds.insert(atom("add", &[0]), 1.0);
    let grads = circuit.backprop(&eval, &seeds).unwrap();
    assert!((grads.get("object/1").unwrap() - (-0.406)).abs() < 1e-12);

    // Seeds combine linearly across roots.
    let mut seeds = BTreeMap::new();
    seeds.insert(atom("add", &[0]), 2.0);
    seeds.insert(atom("add", &[2]), -1.0);
    let grads = circuit.backprop(&eval, &seeds).unwrap();
    assert!((grads.get("object/1").unwrap() - (2.0 * -0.406 - 0.294)).abs() < 1e-12);
}

#[test]
fn both_routes_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..30 {
        let (gp, table) = random_instance(&mut rng);
        let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
        let eval = circuit.evaluate(&table).unwrap();
        let compiled = circuit.task_distribution(&eval);
        let oracle = enumerate_query_probs(&gp, &table, DEFAULT_ORACLE_WORLD_CAP).unwrap();
        assert_eq!(compiled.len(), oracle.len());
        for (q, p) in &compiled {
            let o = oracle[q];
            assert!((p - o).abs() <= 1e-9, "round {round}: {q}: compiled {p} oracle {o}");
        }
    }
}

#[test]
fn distribution_sums_to_one_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (gp, table) = random_instance(&mut rng);
        let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
        let eval = circuit.evaluate(&table).unwrap();
        let total: f64 = circuit.task_distribution(&eval).values().sum();
        assert!((total - 1.0).abs() <= 1e-9, "total {total}");
    }
}

#[test]
fn backprop_matches_central_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = 1e-5;
    for _ in 0..10 {
        let (gp, table) = random_instance(&mut rng);
        let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
        let eval = circuit.evaluate(&table).unwrap();
        let queries: Vec<GroundAtom> = circuit.queries().cloned().collect();
        let target = queries[rng.random_range(0..queries.len())].clone();
        let mut seeds = BTreeMap::new();
        seeds.insert(target.clone(), 1.0);
        let grads = circuit.backprop(&eval, &seeds).unwrap();
        for key in gp.external_keys() {
            let base = table.get(&key).unwrap();
            let mut plus = table.clone();
            plus.insert(key.clone(), base + h);
            let mut minus = table.clone();
            minus.insert(key.clone(), base - h);
            let f_plus = circuit.query_prob(&circuit.evaluate(&plus).unwrap(), &target).unwrap();
            let f_minus =
                circuit.query_prob(&circuit.evaluate(&minus).unwrap(), &target).unwrap();
            let fd = (f_plus - f_minus) / (2.0 * h);
            let g = grads.get(&key).unwrap();
            assert!(
                (g - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "{target} d/d{key}: backprop {g} fd {fd}"
            );
        }
    }
}

#[test]
fn evaluation_is_multilinear_in_each_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (gp, table) = random_instance(&mut rng);
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let target = circuit.queries().next().unwrap().clone();
    for key in gp.external_keys() {
        let f_at = |v: f64| -> f64 {
            let mut t = table.clone();
            t.insert(key.clone(), v);
            circuit.query_prob(&circuit.evaluate(&t).unwrap(), &target).unwrap()
        };
        let (lo, hi) = (0.125, 0.875);
        let mid = f_at(0.5 * (lo + hi));
        let interp = 0.5 * (f_at(lo) + f_at(hi));
        assert!((mid - interp).abs() < 1e-12, "{key}: {mid} vs {interp}");
    }
}

#[test]
fn relabeling_slots_preserves_the_distribution() {
    let gp = gp_of(&programs::addition(3, 4));
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let table = random_table(&gp, &mut rng);

    // Send slot i's parameters to slot (i mod 3) + 1.
    let mut permuted = FactParamTable::new();
    for (key, &v) in table.iter() {
        let mut parts: Vec<String> = key.split('/').map(str::to_string).collect();
        let slot: usize = parts[1].parse().unwrap();
        parts[1] = ((slot % 3) + 1).to_string();
        permuted.insert(parts.join("/"), v);
    }

    let base = circuit.task_distribution(&circuit.evaluate(&table).unwrap());
    let swapped = circuit.task_distribution(&circuit.evaluate(&permuted).unwrap());
    for (q, p) in &base {
        assert!((p - swapped[q]).abs() < 1e-12, "{q}");
    }
}

#[test]
fn conditioned_and_default_encodings_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for (n, k) in [(1, 3), (2, 4), (3, 5)] {
        let gp_d = gp_of(&programs::addition(n, k));
        let gp_c = gp_of(&programs::addition_conditioned(n, k));
        let table = random_table(&gp_d, &mut rng);

        let dist_d = {
            let c = compile(&gp_d, DEFAULT_WORLD_CAP).unwrap();
            c.task_distribution(&c.evaluate(&table).unwrap())
        };
        let dist_c = {
            let c = compile(&gp_c, DEFAULT_WORLD_CAP).unwrap();
            c.task_distribution(&c.evaluate(&table).unwrap())
        };
        assert_eq!(dist_d.len(), dist_c.len());
        for (q, p) in &dist_d {
            let z = match &q.args[0] {
                GroundTerm::Int(z) => *z,
                other => panic!("unexpected argument {other}"),
            };
            let cond_q = GroundAtom {
                pred: "add".into(),
                args: vec![GroundTerm::Const("input".into()), GroundTerm::Int(z)],
            };
            assert!((p - dist_c[&cond_q]).abs() < 1e-12, "n={n} k={k} z={z}");
        }
    }
}

#[test]
fn count_distribution_matches_hand_computed_values() {
    let gp = gp_of(&programs::count(3));
    let table =
        FactParamTable::parse("object/1 0.9\nobject/2 0.5\nobject/3 0.2\n").unwrap();
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let dist = circuit.task_distribution(&circuit.evaluate(&table).unwrap());
    assert!((dist[&atom("count", &[0])] - 0.04).abs() < 1e-12);
    assert!((dist[&atom("count", &[1])] - 0.41).abs() < 1e-12);
    assert!((dist[&atom("count", &[2])] - 0.46).abs() < 1e-12);
    assert!((dist[&atom("count", &[3])] - 0.09).abs() < 1e-12);
}

#[test]
fn pair_probability_matches_hand_computed_value() {
    let gp = gp_of(&programs::pair(3, 2));
    let table = FactParamTable::parse(
        "object/1 1.0\nobject/2 1.0\nobject/3 0.0\nclass/1 0.3 0.7\nclass/2 0.4 0.6\nclass/3 0.5 0.5\n",
    )
    .unwrap();
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let dist = circuit.task_distribution(&circuit.evaluate(&table).unwrap());
    // Only slots 1 and 2 exist; they collide with prob 0.3*0.4 + 0.7*0.6.
    assert!((dist[&atom("haspair", &[1])] - 0.54).abs() < 1e-12);
    assert!((dist[&atom("haspair", &[0])] - 0.46).abs() < 1e-12);
}

#[test]
fn deterministic_query_is_certain() {
    let gp = gp_of("sure.\nquery(sure).\n");
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let eval = circuit.evaluate(&FactParamTable::new()).unwrap();
    let q = GroundAtom { pred: "sure".into(), args: vec![] };
    assert_eq!(circuit.query_prob(&eval, &q).unwrap(), 1.0);
    let mut seeds = BTreeMap::new();
    seeds.insert(q, 1.0);
    assert!(circuit.backprop(&eval, &seeds).unwrap().is_empty());
}

#[test]
fn query_on_a_bare_fact() {
    let gp = gp_of("beta/1 :: coin.\nquery(coin).\n");
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let mut table = FactParamTable::new();
    table.insert("beta/1", 0.3);
    let eval = circuit.evaluate(&table).unwrap();
    let q = GroundAtom { pred: "coin".into(), args: vec![] };
    assert_eq!(circuit.query_prob(&eval, &q).unwrap(), 0.3);
    let mut seeds = BTreeMap::new();
    seeds.insert(q, 1.0);
    let grads = circuit.backprop(&eval, &seeds).unwrap();
    assert_eq!(grads.get("beta/1").unwrap(), 1.0);
}

#[test]
fn capacity_limit_is_enforced() {
    let mut src = String::new();
    for i in 1..=25 {
        src.push_str(&format!("object/{i} :: o({i}).\n"));
    }
    src.push_str("c1 :- o(1).\n");
    for i in 2..=25 {
        src.push_str(&format!("c{i} :- c{}, o({i}).\n", i - 1));
    }
    src.push_str("query(c25).\n");
    let gp = gp_of(&src);
    let err = compile(&gp, DEFAULT_WORLD_CAP).unwrap_err();
    assert!(matches!(err, CircuitError::CapacityExceeded { .. }), "{err}");

    let gp_small = gp_of(&programs::addition(3, 3));
    let table = FactParamTable::new();
    let err = enumerate_query_probs(&gp_small, &table, 10).unwrap_err();
    assert!(matches!(err, CircuitError::CapacityExceeded { .. }), "{err}");
}

#[test]
fn missing_parameter_is_reported() {
    let gp = gp_of(&programs::addition(2, 2));
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let table =
        FactParamTable::parse("object/1 0.8\nobject/2 0.6\nclass/1 0.3 0.7\nclass/2/0 0.3\n")
            .unwrap();
    let err = circuit.evaluate(&table).unwrap_err();
    assert_eq!(err, CircuitError::MissingParameter { key: "class/2/1".into() });
}

#[test]
fn table_validation_reports_missing_keys_and_bad_groups() {
    let gp = gp_of(&programs::addition(2, 2));
    let incomplete = FactParamTable::parse("object/1 0.8\n").unwrap();
    assert!(matches!(
        incomplete.validate_against(&gp).unwrap_err(),
        ParamsError::Missing { .. }
    ));

    let unnormalized = FactParamTable::parse(
        "object/1 0.8\nobject/2 0.6\nclass/1 0.3 0.6\nclass/2 0.3 0.7\n",
    )
    .unwrap();
    assert!(matches!(unnormalized.validate_against(&gp).unwrap_err(), ParamsError::Invalid(_)));

    let out_of_range = FactParamTable::parse(
        "object/1 1.5\nobject/2 0.6\nclass/1 0.3 0.7\nclass/2 0.3 0.7\n",
    )
    .unwrap();
    assert!(matches!(out_of_range.validate_against(&gp).unwrap_err(), ParamsError::Invalid(_)));

    worked_table().validate_against(&gp).unwrap();
}

#[test]
fn compilation_is_deterministic() {
    let gp = gp_of(&programs::addition(3, 4));
    let c1 = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let c2 = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(c1.stats(), c2.stats());
}

#[test]
fn cache_shares_compiled_circuits() {
    let gp = gp_of(&programs::addition(2, 3));
    let mut cache = CircuitCache::new();
    let a = cache.get_or_compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let b = cache.get_or_compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    assert!(Rc::ptr_eq(&a, &b));
    assert_eq!(cache.len(), 1);
}

#[test]
fn stats_reflect_program_shape() {
    let gp = gp_of(&programs::addition(2, 2));
    let circuit = compile(&gp, DEFAULT_WORLD_CAP).unwrap();
    let stats = circuit.stats();
    assert_eq!(stats.variables, 4);
    assert_eq!(stats.worlds, 16);
    assert_eq!(stats.queries, 3);
    assert!(stats.decision_nodes > 0);
    assert_eq!(stats.nodes, stats.decision_nodes + 2);
}
