//! Backward-chaining grounder.
//!
//! `ground_query` reduces a validated program and a query pattern to a
//! [`GroundProgram`]: the probabilistic facts the query can touch, the
//! ground rules connecting them, and every reachable ground instance of the
//! query. Builtins are evaluated away during grounding, negated literals
//! whose atom has no possible proof are dropped, and goals are memoized by
//! their canonicalized pattern so shared subgoals ground once.
//!
//! The resulting ground rule set is acyclic; genuinely cyclic programs are
//! rejected with an error instead of falling back to well-founded
//! semantics. Grounding is deterministic: repeated calls produce identical
//! programs, including fact-id assignment and rule order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::logic::{
    stratify, ArithExpr, Atom, BodyLit, Builtin, CmpOp, FactParam, Program, Rule, Term,
};

/// A ground (variable-free) term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundTerm {
    Int(i64),
    Const(String),
}

impl fmt::Display for GroundTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundTerm::Int(n) => write!(f, "{n}"),
            GroundTerm::Const(c) => write!(f, "{c}"),
        }
    }
}

impl GroundTerm {
    fn to_term(&self) -> Term {
        match self {
            GroundTerm::Int(n) => Term::Int(*n),
            GroundTerm::Const(c) => Term::Const(c.clone()),
        }
    }
}

/// A ground atom. Ordering is lexicographic on predicate then arguments,
/// which downstream code relies on for stable output and tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub pred: String,
    pub args: Vec<GroundTerm>,
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl GroundAtom {
    fn from_atom(atom: &Atom) -> Option<GroundAtom> {
        let mut args = Vec::with_capacity(atom.args.len());
        for t in &atom.args {
            match t {
                Term::Int(n) => args.push(GroundTerm::Int(*n)),
                Term::Const(c) => args.push(GroundTerm::Const(c.clone())),
                Term::Var(_) => return None,
            }
        }
        Some(GroundAtom { pred: atom.pred.clone(), args })
    }
}

/// Identifier of a ground probabilistic fact, assigned in discovery order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactId(pub usize);

/// Membership of a ground fact in a categorical group instance. Facts with
/// the same `name` and `cell` form one categorical variable; `index` is the
/// member's position in the group's declaration order and doubles as the
/// value index of that variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupRef {
    pub name: String,
    /// The ground atom with the class argument masked, rendered as text;
    /// identifies which instance of the group this fact belongs to.
    pub cell: String,
    pub index: usize,
}

/// A ground probabilistic fact.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundFact {
    pub id: FactId,
    pub atom: GroundAtom,
    pub param: FactParam,
    pub group: Option<GroupRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

/// A ground rule; builtins have been evaluated away and deterministically
/// true negations dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundRule {
    pub head: GroundAtom,
    pub body: Vec<(Sign, GroundAtom)>,
    /// Stratum of the head predicate; bottom-up evaluation proceeds stratum
    /// by stratum.
    pub stratum: usize,
}

impl fmt::Display for GroundRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            for (i, (sign, atom)) in self.body.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                if *sign == Sign::Neg {
                    write!(f, "\\+ ")?;
                }
                write!(f, "{atom}")?;
            }
        }
        write!(f, ".")
    }
}

/// Result of grounding: everything exact inference needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundProgram {
    pub facts: Vec<GroundFact>,
    pub rules: Vec<GroundRule>,
    /// Ground instances of the query pattern, in discovery order.
    pub queries: Vec<GroundAtom>,
    pub max_stratum: usize,
}

impl GroundProgram {
    pub fn fact(&self, id: FactId) -> &GroundFact {
        &self.facts[id.0]
    }

    /// External parameter keys in fact-id order, without duplicates.
    pub fn external_keys(&self) -> Vec<String> {
        let mut keys = Vec::new();
        for f in &self.facts {
            if let FactParam::External(k) = &f.param {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys
    }

    /// Debug dump: facts by ascending id, then rules sorted by head and
    /// body, then query instances sorted. One ground clause per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for f in &self.facts {
            out.push_str(&format!("fact {} {} {}", f.id.0, f.param, f.atom));
            if let Some(g) = &f.group {
                out.push_str(&format!(" group={}#{}", g.name, g.index));
            }
            out.push('\n');
        }
        let mut rules: Vec<String> = self.rules.iter().map(|r| r.to_string()).collect();
        rules.sort();
        for r in rules {
            out.push_str("rule ");
            out.push_str(&r);
            out.push('\n');
        }
        let mut queries: Vec<&GroundAtom> = self.queries.iter().collect();
        queries.sort();
        for q in queries {
            out.push_str(&format!("query {q}\n"));
        }
        out
    }
}

/// Grounding failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GroundError {
    #[error("program is not stratified")]
    NotStratified,
    #[error("query predicate '{0}' does not occur in the program")]
    UnknownQueryPredicate(String),
    #[error("ground-level cycle detected at goal {0}")]
    Cycle(String),
    #[error("goal nesting exceeds {0} levels; the program likely does not terminate")]
    DepthLimit(usize),
    #[error("line {line}: builtin applied to unbound variable in {context}")]
    UnboundBuiltin { line: usize, context: String },
    #[error("line {line}: between/3 requires constant integer bounds")]
    NonConstantBounds { line: usize },
    #[error("line {line}: fact instance {atom} is not ground")]
    NonGroundFact { line: usize, atom: String },
    #[error("line {line}: rule head {atom} is not ground after body instantiation")]
    NonGroundHead { line: usize, atom: String },
    #[error("line {line}: negated literal {atom} is not ground")]
    NonGroundNegation { line: usize, atom: String },
    #[error("ground fact {0} produced by more than one declaration")]
    DuplicateFact(String),
    #[error("integer overflow while evaluating arithmetic")]
    ArithOverflow,
    #[error("ground rule graph contains a cycle through {0}")]
    GroundCycle(String),
}

/// Outcome of evaluating a single builtin literal.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinEval {
    Bool(bool),
    /// Candidate values for the single variable the builtin may bind.
    Bindings(Vec<(String, GroundTerm)>),
}

// ---------------------------------------------------------------------------
// Substitutions

#[derive(Debug, Clone)]
enum Binding {
    Ground(GroundTerm),
    Link(String),
}

#[derive(Debug, Clone, Default)]
struct Subst {
    map: HashMap<String, Binding>,
}

impl Subst {
    /// Follow link chains; returns either a ground term or the
    /// representative variable name.
    fn resolve_var(&self, var: &str) -> Result<GroundTerm, String> {
        let mut cur = var.to_string();
        loop {
            match self.map.get(&cur) {
                Some(Binding::Ground(g)) => return Ok(g.clone()),
                Some(Binding::Link(next)) => cur = next.clone(),
                None => return Err(cur),
            }
        }
    }

    fn resolve_term(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => match self.resolve_var(v) {
                Ok(g) => g.to_term(),
                Err(root) => Term::Var(root),
            },
            other => other.clone(),
        }
    }

    fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let ra = self.resolve_term(a);
        let rb = self.resolve_term(b);
        match (ra, rb) {
            (Term::Var(x), Term::Var(y)) => {
                if x != y {
                    self.map.insert(x, Binding::Link(y));
                }
                true
            }
            (Term::Var(x), g) | (g, Term::Var(x)) => {
                let gt = match g {
                    Term::Int(n) => GroundTerm::Int(n),
                    Term::Const(c) => GroundTerm::Const(c),
                    Term::Var(_) => unreachable!(),
                };
                self.map.insert(x, Binding::Ground(gt));
                true
            }
            (ga, gb) => ga == gb,
        }
    }

    fn apply(&self, atom: &Atom) -> Atom {
        Atom {
            pred: atom.pred.clone(),
            args: atom.args.iter().map(|t| self.resolve_term(t)).collect(),
        }
    }
}

fn rename_atom(atom: &Atom, tag: usize) -> Atom {
    Atom {
        pred: atom.pred.clone(),
        args: atom
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => Term::Var(format!("{v}#{tag}")),
                other => other.clone(),
            })
            .collect(),
    }
}

fn rename_body(body: &[BodyLit], tag: usize) -> Vec<BodyLit> {
    fn rn_term(t: &Term, tag: usize) -> Term {
        match t {
            Term::Var(v) => Term::Var(format!("{v}#{tag}")),
            other => other.clone(),
        }
    }
    fn rn_expr(e: &ArithExpr, tag: usize) -> ArithExpr {
        match e {
            ArithExpr::Int(n) => ArithExpr::Int(*n),
            ArithExpr::Var(v) => ArithExpr::Var(format!("{v}#{tag}")),
            ArithExpr::Add(a, b) => {
                ArithExpr::Add(Box::new(rn_expr(a, tag)), Box::new(rn_expr(b, tag)))
            }
            ArithExpr::Sub(a, b) => {
                ArithExpr::Sub(Box::new(rn_expr(a, tag)), Box::new(rn_expr(b, tag)))
            }
            ArithExpr::Mul(a, b) => {
                ArithExpr::Mul(Box::new(rn_expr(a, tag)), Box::new(rn_expr(b, tag)))
            }
            ArithExpr::Neg(a) => ArithExpr::Neg(Box::new(rn_expr(a, tag))),
        }
    }
    body.iter()
        .map(|lit| match lit {
            BodyLit::Pos(a) => BodyLit::Pos(rename_atom(a, tag)),
            BodyLit::Neg(a) => BodyLit::Neg(rename_atom(a, tag)),
            BodyLit::Builtin(b) => BodyLit::Builtin(match b {
                Builtin::Is(t, e) => Builtin::Is(rn_term(t, tag), rn_expr(e, tag)),
                Builtin::Cmp(op, x, y) => Builtin::Cmp(*op, rn_expr(x, tag), rn_expr(y, tag)),
                Builtin::Between(lo, hi, x) => {
                    Builtin::Between(rn_term(lo, tag), rn_term(hi, tag), rn_term(x, tag))
                }
                Builtin::Unify(x, y) => Builtin::Unify(rn_term(x, tag), rn_term(y, tag)),
                Builtin::NotUnify(x, y) => Builtin::NotUnify(rn_term(x, tag), rn_term(y, tag)),
            }),
        })
        .collect()
}

/// Canonical memo key: pattern text with variables renamed `_0, _1, ...`
/// in first-occurrence order.
fn canonical_key(atom: &Atom) -> String {
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut out = atom.pred.clone();
    if atom.args.is_empty() {
        return out;
    }
    out.push('(');
    for (i, t) in atom.args.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        match t {
            Term::Var(v) => {
                let n = names.len();
                let id = *names.entry(v.clone()).or_insert(n);
                out.push_str(&format!("_{id}"));
            }
            Term::Int(n) => out.push_str(&n.to_string()),
            Term::Const(c) => out.push_str(c),
        }
    }
    out.push(')');
    out
}

// ---------------------------------------------------------------------------
// Builtin evaluation

fn eval_arith(e: &ArithExpr, subst: &Subst, line: usize) -> Result<i64, GroundError> {
    match e {
        ArithExpr::Int(n) => Ok(*n),
        ArithExpr::Var(v) => match subst.resolve_var(v) {
            Ok(GroundTerm::Int(n)) => Ok(n),
            Ok(GroundTerm::Const(c)) => Err(GroundError::UnboundBuiltin {
                line,
                context: format!("arithmetic over symbolic constant '{c}'"),
            }),
            Err(root) => Err(GroundError::UnboundBuiltin {
                line,
                context: format!("arithmetic expression (variable {})", strip_tag(&root)),
            }),
        },
        ArithExpr::Add(a, b) => eval_arith(a, subst, line)?
            .checked_add(eval_arith(b, subst, line)?)
            .ok_or(GroundError::ArithOverflow),
        ArithExpr::Sub(a, b) => eval_arith(a, subst, line)?
            .checked_sub(eval_arith(b, subst, line)?)
            .ok_or(GroundError::ArithOverflow),
        ArithExpr::Mul(a, b) => eval_arith(a, subst, line)?
            .checked_mul(eval_arith(b, subst, line)?)
            .ok_or(GroundError::ArithOverflow),
        ArithExpr::Neg(a) => eval_arith(a, subst, line)?
            .checked_neg()
            .ok_or(GroundError::ArithOverflow),
    }
}

fn strip_tag(var: &str) -> &str {
    var.split('#').next().unwrap_or(var)
}

/// Evaluate one builtin under the given substitution, shared between the
/// grounder and the public [`evaluate_builtin`] entry point.
fn eval_builtin(b: &Builtin, subst: &Subst, line: usize) -> Result<BuiltinEval, GroundError> {
    match b {
        Builtin::Is(lhs, rhs) => {
            let val = eval_arith(rhs, subst, line)?;
            match subst.resolve_term(lhs) {
                Term::Var(root) => Ok(BuiltinEval::Bindings(vec![(root, GroundTerm::Int(val))])),
                Term::Int(n) => Ok(BuiltinEval::Bool(n == val)),
                Term::Const(c) => Err(GroundError::UnboundBuiltin {
                    line,
                    context: format!("'is' with symbolic constant '{c}'"),
                }),
            }
        }
        Builtin::Cmp(op, a, b) => {
            let x = eval_arith(a, subst, line)?;
            let y = eval_arith(b, subst, line)?;
            let res = match op {
                CmpOp::Lt => x < y,
                CmpOp::Gt => x > y,
                CmpOp::Le => x <= y,
                CmpOp::Ge => x >= y,
            };
            Ok(BuiltinEval::Bool(res))
        }
        Builtin::Between(lo, hi, x) => {
            let bound = |t: &Term| -> Result<i64, GroundError> {
                match subst.resolve_term(t) {
                    Term::Int(n) => Ok(n),
                    _ => Err(GroundError::NonConstantBounds { line }),
                }
            };
            let lo = bound(lo)?;
            let hi = bound(hi)?;
            match subst.resolve_term(x) {
                Term::Int(n) => Ok(BuiltinEval::Bool(lo <= n && n <= hi)),
                Term::Const(_) => Ok(BuiltinEval::Bool(false)),
                Term::Var(root) => Ok(BuiltinEval::Bindings(
                    (lo..=hi).map(|n| (root.clone(), GroundTerm::Int(n))).collect(),
                )),
            }
        }
        Builtin::Unify(a, b) => {
            let ra = subst.resolve_term(a);
            let rb = subst.resolve_term(b);
            match (ra, rb) {
                (Term::Var(x), Term::Int(n)) | (Term::Int(n), Term::Var(x)) => {
                    Ok(BuiltinEval::Bindings(vec![(x, GroundTerm::Int(n))]))
                }
                (Term::Var(x), Term::Const(c)) | (Term::Const(c), Term::Var(x)) => {
                    Ok(BuiltinEval::Bindings(vec![(x, GroundTerm::Const(c))]))
                }
                (Term::Var(_), Term::Var(_)) => Err(GroundError::UnboundBuiltin {
                    line,
                    context: "'=' with both sides unbound".into(),
                }),
                (ga, gb) => Ok(BuiltinEval::Bool(ga == gb)),
            }
        }
        Builtin::NotUnify(a, b) => {
            let ra = subst.resolve_term(a);
            let rb = subst.resolve_term(b);
            if ra.is_var() || rb.is_var() {
                return Err(GroundError::UnboundBuiltin {
                    line,
                    context: "'\\=' with an unbound side".into(),
                });
            }
            Ok(BuiltinEval::Bool(ra != rb))
        }
    }
}

/// Evaluate a builtin under explicit variable bindings. Used directly by
/// tests and diagnostics; the grounder calls the same evaluation internally.
pub fn evaluate_builtin(
    b: &Builtin,
    bindings: &HashMap<String, GroundTerm>,
) -> Result<BuiltinEval, GroundError> {
    let mut subst = Subst::default();
    for (k, v) in bindings {
        subst.map.insert(k.clone(), Binding::Ground(v.clone()));
    }
    eval_builtin(b, &subst, 0)
}

// ---------------------------------------------------------------------------
// The grounder

const DEPTH_LIMIT: usize = 10_000;

struct Grounder<'p> {
    rules_by_pred: HashMap<(String, usize), Vec<&'p Rule>>,
    facts_by_pred: HashMap<(String, usize), Vec<&'p crate::logic::FactDecl>>,
    /// Group name -> class argument position and member declarations in
    /// declaration order.
    group_layout: HashMap<String, (usize, Vec<&'p crate::logic::FactDecl>)>,
    strata: HashMap<String, usize>,
    memo: HashMap<String, Rc<Vec<GroundAtom>>>,
    in_stack: HashSet<String>,
    depth: usize,
    rename_counter: usize,
    fact_ids: HashMap<GroundAtom, FactId>,
    facts_out: Vec<GroundFact>,
    rules_seen: HashSet<(GroundAtom, Vec<(Sign, GroundAtom)>)>,
    rules_out: Vec<GroundRule>,
}

impl<'p> Grounder<'p> {
    fn new(program: &'p Program) -> Result<Self, GroundError> {
        let strata = stratify(program).ok_or(GroundError::NotStratified)?;
        let mut rules_by_pred: HashMap<(String, usize), Vec<&Rule>> = HashMap::new();
        for r in &program.rules {
            rules_by_pred.entry(r.head.key()).or_default().push(r);
        }
        let mut facts_by_pred: HashMap<(String, usize), Vec<&crate::logic::FactDecl>> =
            HashMap::new();
        let mut group_members: HashMap<String, Vec<&crate::logic::FactDecl>> = HashMap::new();
        for fd in &program.facts {
            facts_by_pred.entry(fd.atom.key()).or_default().push(fd);
            if let Some(g) = &fd.group {
                group_members.entry(g.clone()).or_default().push(fd);
            }
        }
        let mut group_layout = HashMap::new();
        for (name, members) in group_members {
            // The validator guarantees exactly one varying argument position.
            let arity = members[0].atom.arity();
            let mut class_pos = 0;
            for pos in 0..arity {
                let first = &members[0].atom.args[pos];
                if members.iter().any(|m| &m.atom.args[pos] != first) {
                    class_pos = pos;
                    break;
                }
            }
            group_layout.insert(name, (class_pos, members));
        }
        Ok(Grounder {
            rules_by_pred,
            facts_by_pred,
            group_layout,
            strata,
            memo: HashMap::new(),
            in_stack: HashSet::new(),
            depth: 0,
            rename_counter: 0,
            fact_ids: HashMap::new(),
            facts_out: Vec::new(),
            rules_seen: HashSet::new(),
            rules_out: Vec::new(),
        })
    }

    fn fresh_tag(&mut self) -> usize {
        self.rename_counter += 1;
        self.rename_counter
    }

    /// Register the ground instance of a fact declaration. Touching any
    /// member of a categorical group registers the group's entire cell, so
    /// the downstream variable always carries its full distribution.
    fn register_fact(
        &mut self,
        decl: &crate::logic::FactDecl,
        atom: GroundAtom,
    ) -> Result<(), GroundError> {
        let Some(name) = decl.group.clone() else {
            return self.register_one(decl, atom, None);
        };
        let (class_pos, members) = self.group_layout[&name].clone();
        let mut cell_atom = atom.clone();
        cell_atom.args[class_pos] = GroundTerm::Const("_".into());
        let cell = cell_atom.to_string();
        for (index, member) in members.iter().enumerate() {
            let value = match &member.atom.args[class_pos] {
                Term::Int(n) => GroundTerm::Int(*n),
                Term::Const(c) => GroundTerm::Const(c.clone()),
                Term::Var(_) => {
                    return Err(GroundError::NonGroundFact {
                        line: member.line,
                        atom: member.atom.to_string(),
                    })
                }
            };
            let mut member_atom = atom.clone();
            member_atom.args[class_pos] = value;
            let group = GroupRef { name: name.clone(), cell: cell.clone(), index };
            self.register_one(member, member_atom, Some(group))?;
        }
        Ok(())
    }

    fn register_one(
        &mut self,
        decl: &crate::logic::FactDecl,
        atom: GroundAtom,
        group: Option<GroupRef>,
    ) -> Result<(), GroundError> {
        if let Some(existing) = self.fact_ids.get(&atom) {
            // Re-derivation of the same instance from the same declaration
            // is fine; two distinct declarations producing one ground atom
            // would make its probability ill-defined.
            let prev = &self.facts_out[existing.0];
            if prev.param != decl.param || prev.group != group {
                return Err(GroundError::DuplicateFact(atom.to_string()));
            }
            return Ok(());
        }
        let id = FactId(self.facts_out.len());
        self.fact_ids.insert(atom.clone(), id);
        self.facts_out.push(GroundFact { id, atom, param: decl.param.clone(), group });
        Ok(())
    }

    /// All ground instances of `goal` that have at least one possible
    /// derivation. Probabilistic facts count as possible regardless of
    /// their parameter value.
    fn solve(&mut self, goal: &Atom) -> Result<Rc<Vec<GroundAtom>>, GroundError> {
        let key = canonical_key(goal);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        if self.in_stack.contains(&key) {
            return Err(GroundError::Cycle(key));
        }
        if self.depth >= DEPTH_LIMIT {
            return Err(GroundError::DepthLimit(DEPTH_LIMIT));
        }
        self.in_stack.insert(key.clone());
        self.depth += 1;

        let result = self.solve_uncached(goal);

        self.depth -= 1;
        self.in_stack.remove(&key);
        let answers = result?;
        let rc = Rc::new(answers);
        self.memo.insert(key, rc.clone());
        Ok(rc)
    }

    fn solve_uncached(&mut self, goal: &Atom) -> Result<Vec<GroundAtom>, GroundError> {
        let mut answers: Vec<GroundAtom> = Vec::new();
        let mut seen: HashSet<GroundAtom> = HashSet::new();

        if let Some(decls) = self.facts_by_pred.get(&goal.key()).cloned() {
            for decl in decls {
                let tag = self.fresh_tag();
                let decl_atom = rename_atom(&decl.atom, tag);
                let mut subst = Subst::default();
                let mut ok = true;
                for (g, d) in goal.args.iter().zip(decl_atom.args.iter()) {
                    if !subst.unify(g, d) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let inst = subst.apply(&decl_atom);
                let ground = GroundAtom::from_atom(&inst).ok_or_else(|| {
                    GroundError::NonGroundFact { line: decl.line, atom: inst.to_string() }
                })?;
                self.register_fact(decl, ground.clone())?;
                if seen.insert(ground.clone()) {
                    answers.push(ground);
                }
            }
        }

        if let Some(rules) = self.rules_by_pred.get(&goal.key()).cloned() {
            for rule in rules {
                let tag = self.fresh_tag();
                let head = rename_atom(&rule.head, tag);
                let body = rename_body(&rule.body, tag);
                let mut subst = Subst::default();
                let mut ok = true;
                for (g, h) in goal.args.iter().zip(head.args.iter()) {
                    if !subst.unify(g, h) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                self.expand_body(
                    rule,
                    &head,
                    &body,
                    0,
                    subst,
                    &mut Vec::new(),
                    &mut |this, head_ground, body_lits| {
                        let rule_key = (head_ground.clone(), body_lits.to_vec());
                        if this.rules_seen.insert(rule_key) {
                            let stratum = this.strata.get(&head_ground.pred).copied().unwrap_or(0);
                            this.rules_out.push(GroundRule {
                                head: head_ground.clone(),
                                body: body_lits.to_vec(),
                                stratum,
                            });
                        }
                        if seen.insert(head_ground.clone()) {
                            answers.push(head_ground.clone());
                        }
                    },
                )?;
            }
        }

        Ok(answers)
    }

    /// Depth-first instantiation of a rule body, left to right. `emit` is
    /// called once per complete ground instantiation.
    #[allow(clippy::too_many_arguments)]
    fn expand_body(
        &mut self,
        rule: &Rule,
        head: &Atom,
        body: &[BodyLit],
        at: usize,
        subst: Subst,
        acc: &mut Vec<(Sign, GroundAtom)>,
        emit: &mut dyn FnMut(&mut Self, &GroundAtom, &[(Sign, GroundAtom)]),
    ) -> Result<(), GroundError> {
        if at == body.len() {
            let inst = subst.apply(head);
            let ground = GroundAtom::from_atom(&inst).ok_or_else(|| {
                GroundError::NonGroundHead { line: rule.line, atom: inst.to_string() }
            })?;
            emit(self, &ground, acc);
            return Ok(());
        }
        match &body[at] {
            BodyLit::Pos(atom) => {
                let pattern = subst.apply(atom);
                let sub_answers = self.solve(&pattern)?;
                for ans in sub_answers.iter() {
                    let mut s2 = subst.clone();
                    let mut ok = true;
                    for (p, a) in pattern.args.iter().zip(ans.args.iter()) {
                        if !s2.unify(p, &a.to_term()) {
                            ok = false;
                            break;
                        }
                    }
                    if !ok {
                        continue;
                    }
                    acc.push((Sign::Pos, ans.clone()));
                    self.expand_body(rule, head, body, at + 1, s2, acc, emit)?;
                    acc.pop();
                }
                Ok(())
            }
            BodyLit::Neg(atom) => {
                let pattern = subst.apply(atom);
                let ground = GroundAtom::from_atom(&pattern).ok_or_else(|| {
                    GroundError::NonGroundNegation { line: rule.line, atom: pattern.to_string() }
                })?;
                let sub_answers = self.solve(&pattern)?;
                if sub_answers.is_empty() {
                    // No possible proof: the negation holds in every world.
                    self.expand_body(rule, head, body, at + 1, subst, acc, emit)
                } else {
                    acc.push((Sign::Neg, ground));
                    self.expand_body(rule, head, body, at + 1, subst, acc, emit)?;
                    acc.pop();
                    Ok(())
                }
            }
            BodyLit::Builtin(b) => match eval_builtin(b, &subst, rule.line)? {
                BuiltinEval::Bool(false) => Ok(()),
                BuiltinEval::Bool(true) => {
                    self.expand_body(rule, head, body, at + 1, subst, acc, emit)
                }
                BuiltinEval::Bindings(cands) => {
                    for (var, val) in cands {
                        let mut s2 = subst.clone();
                        s2.map.insert(var.clone(), Binding::Ground(val));
                        self.expand_body(rule, head, body, at + 1, s2, acc, emit)?;
                    }
                    Ok(())
                }
            },
        }
    }
}

/// Verify the ground rule graph is acyclic via Kahn's algorithm (defense in
/// depth; the goal stack already rejects cycles reachable top-down). Each
/// head's in-degree is the total number of body literals across its rules.
fn check_acyclic(gp: &GroundProgram) -> Result<(), GroundError> {
    let mut dependents: HashMap<&GroundAtom, Vec<&GroundAtom>> = HashMap::new();
    let mut indegree: HashMap<&GroundAtom, usize> = HashMap::new();
    for r in &gp.rules {
        *indegree.entry(&r.head).or_insert(0) += r.body.len();
        for (_, b) in &r.body {
            indegree.entry(b).or_insert(0);
            dependents.entry(b).or_default().push(&r.head);
        }
    }
    let mut queue: Vec<&GroundAtom> =
        indegree.iter().filter(|(_, &d)| d == 0).map(|(&a, _)| a).collect();
    let mut remaining = indegree.clone();
    let mut removed = 0usize;
    while let Some(atom) = queue.pop() {
        removed += 1;
        if let Some(heads) = dependents.get(atom) {
            for h in heads {
                let d = remaining.get_mut(*h).expect("head tracked in degree map");
                *d -= 1;
                if *d == 0 {
                    queue.push(h);
                }
            }
        }
    }
    if removed != indegree.len() {
        let stuck = remaining
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(a, _)| a.to_string())
            .min()
            .unwrap_or_default();
        return Err(GroundError::GroundCycle(stuck));
    }
    Ok(())
}

/// Drop facts and rules that cannot influence any query instance. Subgoals
/// explored during grounding may register facts or rules and then fail a
/// later body literal; those leftovers would otherwise bloat the variable
/// space of downstream inference.
fn prune_to_queries(gp: GroundProgram) -> GroundProgram {
    let mut rules_by_head: HashMap<&GroundAtom, Vec<usize>> = HashMap::new();
    for (i, r) in gp.rules.iter().enumerate() {
        rules_by_head.entry(&r.head).or_default().push(i);
    }
    let mut reachable: HashSet<&GroundAtom> = HashSet::new();
    let mut frontier: Vec<&GroundAtom> = Vec::new();
    for q in &gp.queries {
        if reachable.insert(q) {
            frontier.push(q);
        }
    }
    while let Some(atom) = frontier.pop() {
        if let Some(rule_ids) = rules_by_head.get(atom) {
            for &i in rule_ids {
                for (_, b) in &gp.rules[i].body {
                    if reachable.insert(b) {
                        frontier.push(b);
                    }
                }
            }
        }
    }
    // A categorical cell stays or goes as a whole: if any member is
    // reachable the variable keeps its full distribution.
    let mut live_cells: HashSet<(&String, &String)> = HashSet::new();
    for f in &gp.facts {
        if reachable.contains(&f.atom) {
            if let Some(g) = &f.group {
                live_cells.insert((&g.name, &g.cell));
            }
        }
    }
    let keep_fact: Vec<bool> = gp
        .facts
        .iter()
        .map(|f| {
            reachable.contains(&f.atom)
                || f.group.as_ref().is_some_and(|g| live_cells.contains(&(&g.name, &g.cell)))
        })
        .collect();
    let keep_rule: Vec<bool> = gp.rules.iter().map(|r| reachable.contains(&r.head)).collect();
    let mut facts = Vec::new();
    for (f, keep) in gp.facts.into_iter().zip(keep_fact) {
        if keep {
            let mut f = f;
            f.id = FactId(facts.len());
            facts.push(f);
        }
    }
    let rules = gp
        .rules
        .into_iter()
        .zip(keep_rule)
        .filter_map(|(r, keep)| keep.then_some(r))
        .collect();
    GroundProgram { facts, rules, queries: gp.queries, max_stratum: gp.max_stratum }
}

/// Ground a validated program against a query pattern. The pattern may
/// contain variables; every reachable ground instance becomes a query of
/// the resulting program.
pub fn ground_query(program: &Program, pattern: &Atom) -> Result<GroundProgram, GroundError> {
    let mut grounder = Grounder::new(program)?;
    let known = grounder.rules_by_pred.contains_key(&pattern.key())
        || grounder.facts_by_pred.contains_key(&pattern.key());
    if !known {
        return Err(GroundError::UnknownQueryPredicate(pattern.pred.clone()));
    }
    let tag = grounder.fresh_tag();
    let goal = rename_atom(pattern, tag);
    let answers = grounder.solve(&goal)?;
    let max_stratum = grounder.strata.values().copied().max().unwrap_or(0);
    let gp = prune_to_queries(GroundProgram {
        facts: grounder.facts_out,
        rules: grounder.rules_out,
        queries: answers.as_ref().clone(),
        max_stratum,
    });
    check_acyclic(&gp)?;
    Ok(gp)
}

/// Ground every `query(...)` declaration of the program into one combined
/// ground program.
pub fn ground_declared_queries(program: &Program) -> Result<GroundProgram, GroundError> {
    let mut grounder = Grounder::new(program)?;
    let mut queries = Vec::new();
    for pattern in &program.queries {
        let known = grounder.rules_by_pred.contains_key(&pattern.key())
            || grounder.facts_by_pred.contains_key(&pattern.key());
        if !known {
            return Err(GroundError::UnknownQueryPredicate(pattern.pred.clone()));
        }
        let tag = grounder.fresh_tag();
        let goal = rename_atom(pattern, tag);
        let answers = grounder.solve(&goal)?;
        for a in answers.iter() {
            if !queries.contains(a) {
                queries.push(a.clone());
            }
        }
    }
    let max_stratum = grounder.strata.values().copied().max().unwrap_or(0);
    let gp = prune_to_queries(GroundProgram {
        facts: grounder.facts_out,
        rules: grounder.rules_out,
        queries,
        max_stratum,
    });
    check_acyclic(&gp)?;
    Ok(gp)
}

#[cfg(test)]
mod tests;
