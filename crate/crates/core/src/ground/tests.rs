use std::collections::HashMap;

use super::*;
use crate::logic::{parse_program, parse_query_atom, validate};

const ADD2_K2: &str = "\
object/1 :: object(1).
object/2 :: object(2).
@group(class/1) class/1/0 :: class(1, 0).
@group(class/1) class/1/1 :: class(1, 1).
@group(class/2) class/2/0 :: class(2, 0).
@group(class/2) class/2/1 :: class(2, 1).
digit(ID, V) :- object(ID), class(ID, V).
digit(ID, 0) :- \\+ object(ID).
add(Z) :- digit(1, Y1), digit(2, Y2), Z is Y1 + Y2.
query(add(Z)).
";

fn ground(src: &str, query: &str) -> GroundProgram {
    let prog = parse_program(src).unwrap();
    let pattern = parse_query_atom(query).unwrap();
    ground_query(&prog, &pattern).unwrap()
}

fn conditioned_addition(k: i64) -> String {
    let mut s = String::new();
    s.push_str("object/0 :: isobj(X, 0).\nobject/1 :: isobj(X, 1).\n");
    for id in 0..2 {
        for v in 0..k {
            s.push_str(&format!(
                "@group(class/{id}) class/{id}/{v} :: digit_tmp(X, {id}, {v}).\n"
            ));
        }
    }
    s.push_str("digit(X, ID, V) :- isobj(X, ID), digit_tmp(X, ID, V).\n");
    s.push_str("addit0(X, SIn, SOut) :- isobj(X, 0), digit(X, 0, C), SOut is SIn + C.\n");
    s.push_str("addit0(X, SIn, SIn) :- \\+ isobj(X, 0).\n");
    s.push_str(
        "addit1(X, SIn, SOut) :- isobj(X, 1), digit(X, 1, C), Y is SIn + C, addit0(X, Y, SOut).\n",
    );
    s.push_str("addit1(X, SIn, SOut) :- \\+ isobj(X, 1), addit0(X, SIn, SOut).\n");
    s.push_str("add(X, Z) :- addit1(X, 0, Z).\n");
    s.push_str("query(add(input, Z)).\n");
    s
}

#[test]
fn grounds_two_slot_addition() {
    let gp = ground(ADD2_K2, "add(Z)");

    assert_eq!(gp.facts.len(), 6);
    let objectness: Vec<_> = gp.facts.iter().filter(|f| f.atom.pred == "object").collect();
    assert_eq!(objectness.len(), 2);
    assert!(objectness.iter().all(|f| f.group.is_none()));

    let class: Vec<_> = gp.facts.iter().filter(|f| f.atom.pred == "class").collect();
    assert_eq!(class.len(), 4);
    for f in &class {
        let g = f.group.as_ref().unwrap();
        assert_eq!(GroundTerm::Int(g.index as i64), *f.atom.args.last().unwrap());
        assert!(g.cell.ends_with(", _)"), "class argument masked in {}", g.cell);
    }

    let mut queries = gp.queries.clone();
    queries.sort();
    let expected: Vec<GroundAtom> = (0..=2)
        .map(|z| GroundAtom { pred: "add".into(), args: vec![GroundTerm::Int(z)] })
        .collect();
    assert_eq!(queries, expected);

    assert_eq!(
        gp.external_keys(),
        vec!["object/1", "class/1/0", "class/1/1", "object/2", "class/2/0", "class/2/1"]
    );

    // Three digit rules per slot, one addition rule per (Y1, Y2) pair.
    assert_eq!(gp.rules.len(), 10);
    assert!(gp
        .rules
        .iter()
        .any(|r| r.head.pred == "digit" && r.body.iter().any(|(s, _)| *s == Sign::Neg)));
}

#[test]
fn grounds_conditioned_chain_with_ten_classes() {
    let src = conditioned_addition(10);
    let prog = parse_program(&src).unwrap();
    assert!(validate(&prog).is_ok());

    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.facts.iter().filter(|f| f.atom.pred == "isobj").count(), 2);
    assert_eq!(gp.facts.iter().filter(|f| f.atom.pred == "digit_tmp").count(), 20);
    assert_eq!(gp.facts.len(), 22);

    assert_eq!(gp.queries.len(), 19);
    let mut sums: Vec<i64> = gp
        .queries
        .iter()
        .map(|q| match &q.args[1] {
            GroundTerm::Int(n) => *n,
            other => panic!("expected integer sum, got {other}"),
        })
        .collect();
    sums.sort();
    assert_eq!(sums, (0..=18).collect::<Vec<_>>());
    assert!(gp.queries.iter().all(|q| q.args[0] == GroundTerm::Const("input".into())));
}

#[test]
fn repeated_grounding_is_identical() {
    let src = conditioned_addition(5);
    let prog = parse_program(&src).unwrap();
    let g1 = ground_declared_queries(&prog).unwrap();
    let g2 = ground_declared_queries(&prog).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1.dump(), g2.dump());

    let g3 = ground_declared_queries(&parse_program(&src).unwrap()).unwrap();
    assert_eq!(g1.dump(), g3.dump());
}

#[test]
fn rejects_cyclic_programs() {
    let prog = parse_program("p :- q.\nq :- p.\n").unwrap();
    let err = ground_query(&prog, &parse_query_atom("p").unwrap()).unwrap_err();
    assert!(matches!(err, GroundError::Cycle(_)), "{err}");
}

#[test]
fn builtin_evaluation() {
    use crate::logic::{ArithExpr as E, Builtin as B, CmpOp, Term};
    let empty = HashMap::new();

    let is = B::Is(Term::Var("Z".into()), E::Add(Box::new(E::Int(4)), Box::new(E::Int(5))));
    assert_eq!(
        evaluate_builtin(&is, &empty).unwrap(),
        BuiltinEval::Bindings(vec![("Z".into(), GroundTerm::Int(9))])
    );

    let between = B::Between(Term::Int(0), Term::Int(9), Term::Var("N".into()));
    match evaluate_builtin(&between, &empty).unwrap() {
        BuiltinEval::Bindings(b) => {
            assert_eq!(b.len(), 10);
            assert_eq!(b[0], ("N".into(), GroundTerm::Int(0)));
            assert_eq!(b[9], ("N".into(), GroundTerm::Int(9)));
        }
        other => panic!("expected bindings, got {other:?}"),
    }

    let lt = B::Cmp(CmpOp::Lt, E::Int(3), E::Int(3));
    assert_eq!(evaluate_builtin(&lt, &empty).unwrap(), BuiltinEval::Bool(false));

    let unify = B::Unify(Term::Var("X".into()), Term::Const("red".into()));
    assert_eq!(
        evaluate_builtin(&unify, &empty).unwrap(),
        BuiltinEval::Bindings(vec![("X".into(), GroundTerm::Const("red".into()))])
    );

    let neq = B::NotUnify(Term::Var("A".into()), Term::Int(2));
    let mut env = HashMap::new();
    env.insert("A".to_string(), GroundTerm::Int(1));
    assert_eq!(evaluate_builtin(&neq, &env).unwrap(), BuiltinEval::Bool(true));

    let overflow =
        B::Is(Term::Var("Z".into()), E::Add(Box::new(E::Int(i64::MAX)), Box::new(E::Int(1))));
    assert_eq!(evaluate_builtin(&overflow, &empty).unwrap_err(), GroundError::ArithOverflow);
}

#[test]
fn unprovable_query_has_no_instances() {
    let prog = parse_program("0.5 :: obj(1).\np(X) :- obj(X), X > 5.\n").unwrap();
    let gp = ground_query(&prog, &parse_query_atom("p(X)").unwrap()).unwrap();
    assert!(gp.queries.is_empty());
    assert!(gp.facts.is_empty(), "facts from failed branches must be pruned");
    assert!(gp.rules.is_empty());
}

#[test]
fn rejects_unknown_query_predicate() {
    let prog = parse_program("0.5 :: obj(1).\n").unwrap();
    let err = ground_query(&prog, &parse_query_atom("nope(X)").unwrap()).unwrap_err();
    assert!(matches!(err, GroundError::UnknownQueryPredicate(p) if p == "nope"));
}

#[test]
fn negation_without_support_is_dropped() {
    let prog = parse_program(
        "0.5 :: obj(1).\nmark(ID) :- obj(ID), \\+ blocked(ID).\nblocked(9).\nquery(mark(ID)).\n",
    )
    .unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.queries.len(), 1);
    assert_eq!(gp.rules.len(), 1);
    assert_eq!(
        gp.rules[0].body,
        vec![(Sign::Pos, GroundAtom { pred: "obj".into(), args: vec![GroundTerm::Int(1)] })]
    );
}

#[test]
fn negation_with_support_is_kept() {
    let prog =
        parse_program("0.5 :: obj(2).\nempty :- \\+ obj(2).\nquery(empty).\n").unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.rules.len(), 1);
    assert_eq!(
        gp.rules[0].body,
        vec![(Sign::Neg, GroundAtom { pred: "obj".into(), args: vec![GroundTerm::Int(2)] })]
    );
    assert_eq!(gp.rules[0].stratum, 1);
    assert_eq!(gp.max_stratum, 1);
}

#[test]
fn rejects_conflicting_fact_declarations() {
    let prog = parse_program("0.5 :: p(X).\n0.4 :: p(1).\nq :- p(1).\nquery(q).\n").unwrap();
    let err = ground_declared_queries(&prog).unwrap_err();
    assert!(matches!(err, GroundError::DuplicateFact(_)), "{err}");
}

#[test]
fn shared_fact_template_grounds_once_per_instance() {
    let prog = parse_program("0.5 :: p(X).\nq :- p(1), r.\nr :- p(1).\nquery(q).\n").unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.facts.len(), 1);
    assert_eq!(gp.facts[0].atom.to_string(), "p(1)");
}

#[test]
fn rejects_unbound_fact_template() {
    let prog = parse_program("0.5 :: p(X).\nq(Y) :- p(Y).\nquery(q(Y)).\n").unwrap();
    let err = ground_declared_queries(&prog).unwrap_err();
    assert!(matches!(err, GroundError::NonGroundFact { .. }), "{err}");
}

#[test]
fn prunes_rules_from_failed_branches() {
    let prog =
        parse_program("0.5 :: a.\nmid :- a.\ntop :- mid, 1 > 2.\ntop :- a.\nquery(top).\n")
            .unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.rules.len(), 1);
    assert_eq!(gp.rules[0].head.pred, "top");
    assert_eq!(gp.facts.len(), 1);
}

#[test]
fn grounds_count_program() {
    let src = "\
object/0 :: object(0).
object/1 :: object(1).
object/2 :: object(2).
bit(ID, 1) :- object(ID).
bit(ID, 0) :- \\+ object(ID).
count(Z) :- bit(0, B0), bit(1, B1), bit(2, B2), Z is B0 + B1 + B2.
query(count(Z)).
";
    let prog = parse_program(src).unwrap();
    assert!(validate(&prog).is_ok());
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.facts.len(), 3);
    assert_eq!(gp.queries.len(), 4);
    // Two bit rules per slot plus one count rule per objectness pattern.
    assert_eq!(gp.rules.len(), 14);
}

#[test]
fn dump_is_stably_ordered() {
    let gp = ground(ADD2_K2, "add(Z)");
    let dump = gp.dump();
    let lines: Vec<&str> = dump.lines().collect();

    let fact_lines: Vec<&&str> = lines.iter().filter(|l| l.starts_with("fact ")).collect();
    assert_eq!(fact_lines.len(), 6);
    for (i, l) in fact_lines.iter().enumerate() {
        assert!(l.starts_with(&format!("fact {i} ")), "unexpected id order: {l}");
    }

    let rule_lines: Vec<String> =
        lines.iter().filter(|l| l.starts_with("rule ")).map(|s| s.to_string()).collect();
    let mut sorted = rule_lines.clone();
    sorted.sort();
    assert_eq!(rule_lines, sorted);

    assert_eq!(lines.iter().filter(|l| l.starts_with("query ")).count(), 3);
    let last_fact = lines.iter().rposition(|l| l.starts_with("fact ")).unwrap();
    let first_rule = lines.iter().position(|l| l.starts_with("rule ")).unwrap();
    let first_query = lines.iter().position(|l| l.starts_with("query ")).unwrap();
    assert!(last_fact < first_rule && first_rule < first_query);
}

#[test]
fn grounding_respects_strata() {
    let gp = ground(ADD2_K2, "add(Z)");
    for r in &gp.rules {
        match r.head.pred.as_str() {
            "digit" => assert_eq!(r.stratum, 1),
            "add" => assert_eq!(r.stratum, 1),
            other => panic!("unexpected head {other}"),
        }
    }
}

#[test]
fn touching_one_group_member_grounds_the_whole_cell() {
    let prog = parse_program(
        "@group(g) 0.2 :: c(0).\n@group(g) 0.3 :: c(1).\n@group(g) 0.5 :: c(2).\nzero :- c(0).\nquery(zero).\n",
    )
    .unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    assert_eq!(gp.facts.len(), 3, "the full cell must survive grounding and pruning");
    for (i, f) in gp.facts.iter().enumerate() {
        let g = f.group.as_ref().unwrap();
        assert_eq!(g.index, i);
        assert_eq!(g.cell, "c(_)");
    }
    assert_eq!(gp.rules.len(), 1);
}

#[test]
fn between_enumerates_in_rule_bodies() {
    let prog = parse_program(
        "0.5 :: obj(1).\npick(N) :- obj(1), between(2, 4, N).\nquery(pick(N)).\n",
    )
    .unwrap();
    let gp = ground_declared_queries(&prog).unwrap();
    let mut queries = gp.queries.clone();
    queries.sort();
    let expected: Vec<GroundAtom> = (2..=4)
        .map(|n| GroundAtom { pred: "pick".into(), args: vec![GroundTerm::Int(n)] })
        .collect();
    assert_eq!(queries, expected);
}
