//! Whole-program checks that run between parsing and grounding.
//!
//! A program is accepted when it is stratified, safe for top-down
//! evaluation, and its categorical groups are well-formed. All violations
//! are collected rather than stopping at the first.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use super::ast::*;

/// One validation failure, tied to a source line where possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.msg)
        } else {
            write!(f, "{}", self.msg)
        }
    }
}

/// Outcome of `validate`, listing every violation found.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Stratum per predicate, present when the program is stratified.
    pub strata: HashMap<String, usize>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "program accepted")
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

fn term_var(t: &Term) -> Option<&String> {
    match t {
        Term::Var(v) => Some(v),
        _ => None,
    }
}

/// Safety check for one rule under top-down evaluation: scanning the body
/// left to right with head variables assumed bound by the caller, every
/// negated literal and every builtin input position must be bound by then.
/// `is` binds its left term, `between` its third, and `=` whichever side is
/// still free.
fn check_rule_safety(rule: &Rule, out: &mut Vec<Violation>) {
    let mut bound: HashSet<String> = rule.head_vars().into_iter().collect();
    let complain = |line: usize, what: &str, var: &str, out: &mut Vec<Violation>| {
        out.push(Violation {
            line,
            msg: format!("variable {var} in {what} is not bound by the head or an earlier literal"),
        });
    };
    for lit in &rule.body {
        match lit {
            BodyLit::Pos(atom) => {
                for t in &atom.args {
                    if let Some(v) = term_var(t) {
                        bound.insert(v.clone());
                    }
                }
            }
            BodyLit::Neg(atom) => {
                for t in &atom.args {
                    if let Some(v) = term_var(t) {
                        if !bound.contains(v) {
                            complain(rule.line, "negated literal", v, out);
                        }
                    }
                }
            }
            BodyLit::Builtin(b) => match b {
                Builtin::Is(lhs, rhs) => {
                    let mut vars = Vec::new();
                    rhs.vars(&mut vars);
                    for v in vars {
                        if !bound.contains(&v) {
                            complain(rule.line, "'is' expression", &v, out);
                        }
                    }
                    if let Some(v) = term_var(lhs) {
                        bound.insert(v.clone());
                    }
                }
                Builtin::Cmp(_, a, b) => {
                    let mut vars = Vec::new();
                    a.vars(&mut vars);
                    b.vars(&mut vars);
                    for v in vars {
                        if !bound.contains(&v) {
                            complain(rule.line, "comparison", &v, out);
                        }
                    }
                }
                Builtin::Between(lo, hi, x) => {
                    for t in [lo, hi] {
                        if let Some(v) = term_var(t) {
                            if !bound.contains(v) {
                                complain(rule.line, "'between' bound", v, out);
                            }
                        }
                    }
                    if let Some(v) = term_var(x) {
                        bound.insert(v.clone());
                    }
                }
                Builtin::Unify(a, b) => {
                    for t in [a, b] {
                        if let Some(v) = term_var(t) {
                            bound.insert(v.clone());
                        }
                    }
                }
                Builtin::NotUnify(a, b) => {
                    for t in [a, b] {
                        if let Some(v) = term_var(t) {
                            if !bound.contains(v) {
                                complain(rule.line, "'\\=' disequality", v, out);
                            }
                        }
                    }
                }
            },
        }
    }
}

/// Compute predicate strata: positive dependencies must not increase the
/// stratum, negative dependencies must strictly increase it. Returns `None`
/// when negation occurs inside a dependency cycle.
pub(crate) fn stratify(program: &Program) -> Option<HashMap<String, usize>> {
    let mut preds: BTreeSet<String> = BTreeSet::new();
    for fd in &program.facts {
        preds.insert(fd.atom.pred.clone());
    }
    for r in &program.rules {
        preds.insert(r.head.pred.clone());
        for lit in &r.body {
            match lit {
                BodyLit::Pos(a) | BodyLit::Neg(a) => {
                    preds.insert(a.pred.clone());
                }
                BodyLit::Builtin(_) => {}
            }
        }
    }
    let mut stratum: HashMap<String, usize> =
        preds.iter().map(|p| (p.clone(), 0)).collect();
    let n = preds.len().max(1);
    // Bellman-Ford style relaxation; a stratum exceeding the predicate count
    // certifies a negative cycle.
    for _ in 0..=n {
        let mut changed = false;
        for r in &program.rules {
            let head_s = stratum[&r.head.pred];
            let mut need = head_s;
            for lit in &r.body {
                match lit {
                    BodyLit::Pos(a) => need = need.max(stratum[&a.pred]),
                    BodyLit::Neg(a) => need = need.max(stratum[&a.pred] + 1),
                    BodyLit::Builtin(_) => {}
                }
            }
            if need > head_s {
                stratum.insert(r.head.pred.clone(), need);
                changed = true;
            }
        }
        if !changed {
            return Some(stratum);
        }
    }
    None
}

fn check_groups(program: &Program, out: &mut Vec<Violation>) {
    let mut groups: BTreeMap<String, Vec<&FactDecl>> = BTreeMap::new();
    for fd in &program.facts {
        if let Some(g) = &fd.group {
            groups.entry(g.clone()).or_default().push(fd);
        }
    }
    for (name, members) in &groups {
        let line = members[0].line;
        if members.len() < 2 {
            out.push(Violation {
                line,
                msg: format!("categorical group '{name}' has fewer than 2 members"),
            });
            continue;
        }
        let key = members[0].atom.key();
        if members.iter().any(|m| m.atom.key() != key) {
            out.push(Violation {
                line,
                msg: format!(
                    "categorical group '{name}' mixes predicates or arities"
                ),
            });
            continue;
        }
        // Exactly one argument position may vary across the group — the
        // class argument — and it must hold distinct ground constants.
        let arity = members[0].atom.arity();
        let mut varying: Vec<usize> = Vec::new();
        for pos in 0..arity {
            let first = &members[0].atom.args[pos];
            if members.iter().any(|m| &m.atom.args[pos] != first) {
                varying.push(pos);
            }
        }
        if varying.len() != 1 {
            out.push(Violation {
                line,
                msg: format!(
                    "categorical group '{name}' must vary in exactly one argument position, found {}",
                    varying.len()
                ),
            });
            continue;
        }
        let pos = varying[0];
        let mut seen = BTreeSet::new();
        for m in members {
            match &m.atom.args[pos] {
                Term::Var(_) => out.push(Violation {
                    line: m.line,
                    msg: format!(
                        "class argument of group '{name}' must be a ground constant"
                    ),
                }),
                t => {
                    if !seen.insert(t.clone()) {
                        out.push(Violation {
                            line: m.line,
                            msg: format!(
                                "duplicate class value {t} in group '{name}'"
                            ),
                        });
                    }
                }
            }
        }
        // A group with only literal probabilities is a fixed distribution
        // and must already sum to one.
        let probs: Vec<f64> = members
            .iter()
            .filter_map(|m| match m.param {
                FactParam::Prob(p) => Some(p),
                FactParam::External(_) => None,
            })
            .collect();
        if probs.len() == members.len() {
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                out.push(Violation {
                    line,
                    msg: format!(
                        "literal probabilities of group '{name}' sum to {total}, expected 1"
                    ),
                });
            }
        }
    }
}

/// Validate a parsed program, collecting all violations.
pub fn validate(program: &Program) -> ValidationReport {
    let mut violations = Vec::new();

    let fact_preds: HashSet<(String, usize)> =
        program.facts.iter().map(|f| f.atom.key()).collect();
    for r in &program.rules {
        if fact_preds.contains(&r.head.key()) {
            violations.push(Violation {
                line: r.line,
                msg: format!(
                    "predicate '{}' is declared as a fact and used as a rule head",
                    r.head.pred
                ),
            });
        }
    }

    for r in &program.rules {
        check_rule_safety(r, &mut violations);
    }

    check_groups(program, &mut violations);

    let strata = match stratify(program) {
        Some(s) => s,
        None => {
            violations.push(Violation {
                line: 0,
                msg: "program is not stratified: negation occurs in a dependency cycle".into(),
            });
            HashMap::new()
        }
    };

    ValidationReport { violations, strata }
}
