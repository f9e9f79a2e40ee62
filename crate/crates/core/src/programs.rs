//! Builders for the program families used by the data generator, the test
//! suites, and the benchmarks. Slots are numbered from 1; parameter keys
//! follow the `object/<slot>` and `class/<slot>/<value>` convention.

use std::fmt::Write;

/// Sum of per-slot class values, where an absent slot contributes zero:
/// per-slot digits are collected and added in one rule.
pub fn addition(n_slots: usize, k_classes: usize) -> String {
    assert!(n_slots >= 1 && k_classes >= 1);
    let mut s = String::new();
    for i in 1..=n_slots {
        writeln!(s, "object/{i} :: object({i}).").unwrap();
    }
    for i in 1..=n_slots {
        for v in 0..k_classes {
            writeln!(s, "@group(class/{i}) class/{i}/{v} :: class({i}, {v}).").unwrap();
        }
    }
    writeln!(s, "digit(ID, V) :- object(ID), class(ID, V).").unwrap();
    writeln!(s, "digit(ID, 0) :- \\+ object(ID).").unwrap();
    let atoms: Vec<String> = (1..=n_slots).map(|i| format!("digit({i}, Y{i})")).collect();
    let sum: Vec<String> = (1..=n_slots).map(|i| format!("Y{i}")).collect();
    writeln!(s, "add(Z) :- {}, Z is {}.", atoms.join(", "), sum.join(" + ")).unwrap();
    writeln!(s, "query(add(Z)).").unwrap();
    s
}

/// Same task as [`addition`] in the conditioned encoding: a fold over slots
/// threads the running sum through one auxiliary predicate per slot, and
/// absent slots pass the sum through unchanged.
pub fn addition_conditioned(n_slots: usize, k_classes: usize) -> String {
    assert!(n_slots >= 1 && k_classes >= 1);
    let mut s = String::new();
    for i in 1..=n_slots {
        writeln!(s, "object/{i} :: isobj(X, {i}).").unwrap();
    }
    for i in 1..=n_slots {
        for v in 0..k_classes {
            writeln!(s, "@group(class/{i}) class/{i}/{v} :: digit_tmp(X, {i}, {v}).").unwrap();
        }
    }
    writeln!(s, "digit(X, ID, V) :- isobj(X, ID), digit_tmp(X, ID, V).").unwrap();
    writeln!(s, "addit0(X, S, S).").unwrap();
    for i in 1..=n_slots {
        let prev = i - 1;
        writeln!(
            s,
            "addit{i}(X, SIn, SOut) :- isobj(X, {i}), digit(X, {i}, C), Y is SIn + C, addit{prev}(X, Y, SOut)."
        )
        .unwrap();
        writeln!(s, "addit{i}(X, SIn, SOut) :- \\+ isobj(X, {i}), addit{prev}(X, SIn, SOut).")
            .unwrap();
    }
    writeln!(s, "add(X, Z) :- addit{n_slots}(X, 0, Z).").unwrap();
    writeln!(s, "query(add(input, Z)).").unwrap();
    s
}

/// Number of present objects.
pub fn count(n_slots: usize) -> String {
    assert!(n_slots >= 1);
    let mut s = String::new();
    for i in 1..=n_slots {
        writeln!(s, "object/{i} :: object({i}).").unwrap();
    }
    writeln!(s, "bit(ID, 1) :- object(ID).").unwrap();
    writeln!(s, "bit(ID, 0) :- \\+ object(ID).").unwrap();
    let atoms: Vec<String> = (1..=n_slots).map(|i| format!("bit({i}, B{i})")).collect();
    let sum: Vec<String> = (1..=n_slots).map(|i| format!("B{i}")).collect();
    writeln!(s, "count(Z) :- {}, Z is {}.", atoms.join(", "), sum.join(" + ")).unwrap();
    writeln!(s, "query(count(Z)).").unwrap();
    s
}

/// Whether two present objects share a class.
pub fn pair(n_slots: usize, k_classes: usize) -> String {
    assert!(n_slots >= 2 && k_classes >= 1);
    let mut s = String::new();
    for i in 1..=n_slots {
        writeln!(s, "object/{i} :: object({i}).").unwrap();
    }
    for i in 1..=n_slots {
        for v in 0..k_classes {
            writeln!(s, "@group(class/{i}) class/{i}/{v} :: class({i}, {v}).").unwrap();
        }
    }
    writeln!(s, "samepair :- object(I), object(J), I < J, class(I, C), class(J, C).").unwrap();
    writeln!(s, "haspair(1) :- samepair.").unwrap();
    writeln!(s, "haspair(0) :- \\+ samepair.").unwrap();
    writeln!(s, "query(haspair(Y)).").unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse_program, validate};

    #[test]
    fn all_templates_parse_and_validate() {
        for src in [
            addition(1, 2),
            addition(3, 5),
            addition_conditioned(1, 2),
            addition_conditioned(3, 5),
            count(1),
            count(4),
            pair(2, 2),
            pair(3, 5),
        ] {
            let prog = parse_program(&src).expect(&src);
            let report = validate(&prog);
            assert!(report.is_ok(), "{src}\n{report}");
        }
    }

    #[test]
    fn templates_share_parameter_keys() {
        use crate::ground::ground_declared_queries;
        let a = ground_declared_queries(&parse_program(&addition(2, 3)).unwrap()).unwrap();
        let c =
            ground_declared_queries(&parse_program(&addition_conditioned(2, 3)).unwrap()).unwrap();
        let mut ka = a.external_keys();
        let mut kc = c.external_keys();
        ka.sort();
        kc.sort();
        assert_eq!(ka, kc);
    }
}
