//! Syntax tree for the probabilistic logic language.
//!
//! A program is a flat list of fact declarations, rules, and query
//! declarations. Facts carry either a literal probability or an external
//! parameter key (`name/0/3`-style) that is bound at evaluation time, and
//! may be tagged with a categorical group annotation. Rules are definite
//! clauses extended with negated literals and a small set of arithmetic
//! builtins.

use std::fmt;

/// A first-order term: integer constant, symbolic constant, or variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Int(i64),
    Const(String),
    Var(String),
}

impl Term {
    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(n) => write!(f, "{n}"),
            Term::Const(c) => write!(f, "{c}"),
            Term::Var(v) => write!(f, "{v}"),
        }
    }
}

/// A predicate applied to a (possibly empty) argument list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: impl Into<String>, args: Vec<Term>) -> Self {
        Atom { pred: pred.into(), args }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Predicate name together with arity, the unit of most whole-program
    /// checks.
    pub fn key(&self) -> (String, usize) {
        (self.pred.clone(), self.args.len())
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }
}

impl fmt::Display for Atom {
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

/// Integer arithmetic expression, used on the right of `is` and on both
/// sides of comparison builtins.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArithExpr {
    Int(i64),
    Var(String),
    Add(Box<ArithExpr>, Box<ArithExpr>),
    Sub(Box<ArithExpr>, Box<ArithExpr>),
    Mul(Box<ArithExpr>, Box<ArithExpr>),
    Neg(Box<ArithExpr>),
}

impl ArithExpr {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            ArithExpr::Int(_) => {}
            ArithExpr::Var(v) => out.push(v.clone()),
            ArithExpr::Add(a, b) | ArithExpr::Sub(a, b) | ArithExpr::Mul(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            ArithExpr::Neg(a) => a.vars(out),
        }
    }
}

impl fmt::Display for ArithExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Parenthesize every compound subexpression; round-tripping matters
        // more than minimal output.
        match self {
            ArithExpr::Int(n) => write!(f, "{n}"),
            ArithExpr::Var(v) => write!(f, "{v}"),
            ArithExpr::Add(a, b) => write!(f, "({a} + {b})"),
            ArithExpr::Sub(a, b) => write!(f, "({a} - {b})"),
            ArithExpr::Mul(a, b) => write!(f, "({a} * {b})"),
            ArithExpr::Neg(a) => write!(f, "(-{a})"),
        }
    }
}

/// Comparison operators usable as body builtins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "=<",
            CmpOp::Ge => ">=",
        };
        write!(f, "{s}")
    }
}

/// Builtin body literals, evaluated away during grounding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// `X is Expr` — evaluates the expression; binds or checks the left term.
    Is(Term, ArithExpr),
    /// Arithmetic comparison of two fully bound expressions.
    Cmp(CmpOp, ArithExpr, ArithExpr),
    /// `between(Lo, Hi, X)` — enumerates or checks `Lo =< X =< Hi`.
    Between(Term, Term, Term),
    /// `A = B` — unification of two terms.
    Unify(Term, Term),
    /// `A \= B` — disequality of two bound terms.
    NotUnify(Term, Term),
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::Is(t, e) => write!(f, "{t} is {e}"),
            Builtin::Cmp(op, a, b) => write!(f, "{a} {op} {b}"),
            Builtin::Between(lo, hi, x) => write!(f, "between({lo}, {hi}, {x})"),
            Builtin::Unify(a, b) => write!(f, "{a} = {b}"),
            Builtin::NotUnify(a, b) => write!(f, "{a} \\= {b}"),
        }
    }
}

/// A single body literal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BodyLit {
    Pos(Atom),
    Neg(Atom),
    Builtin(Builtin),
}

impl fmt::Display for BodyLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyLit::Pos(a) => write!(f, "{a}"),
            BodyLit::Neg(a) => write!(f, "\\+ {a}"),
            BodyLit::Builtin(b) => write!(f, "{b}"),
        }
    }
}

/// The probability annotation on a fact declaration.
#[derive(Debug, Clone, PartialEq)]
pub enum FactParam {
    /// Literal probability in `[0, 1]`.
    Prob(f64),
    /// External parameter key such as `object/0` or `class/1/3`, bound
    /// through a parameter table at evaluation time.
    External(String),
}

impl fmt::Display for FactParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactParam::Prob(p) => write!(f, "{p:?}"),
            FactParam::External(k) => write!(f, "{k}"),
        }
    }
}

/// A probabilistic fact declaration, optionally annotated with the
/// categorical group it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FactDecl {
    pub group: Option<String>,
    pub param: FactParam,
    pub atom: Atom,
    /// 1-based source line, for diagnostics.
    pub line: usize,
}

impl fmt::Display for FactDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = &self.group {
            write!(f, "@group({g}) ")?;
        }
        write!(f, "{} :: {}.", self.param, self.atom)
    }
}

/// A rule `head :- body.`; a body-less rule is a deterministic fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<BodyLit>,
    pub line: usize,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            for (i, lit) in self.body.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{lit}")?;
            }
        }
        write!(f, ".")
    }
}

impl Rule {
    /// Variables appearing anywhere in the rule head.
    pub fn head_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.head.args {
            if let Term::Var(v) = t {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

/// A parsed program: facts, rules, and query patterns, in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub facts: Vec<FactDecl>,
    pub rules: Vec<Rule>,
    pub queries: Vec<Atom>,
}

impl Program {
    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.rules.is_empty() && self.queries.is_empty()
    }

    /// All external parameter keys declared by facts, in declaration order,
    /// without duplicates.
    pub fn external_keys(&self) -> Vec<String> {
        let mut keys = Vec::new();
        for fd in &self.facts {
            if let FactParam::External(k) = &fd.param {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fd in &self.facts {
            writeln!(f, "{fd}")?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        for q in &self.queries {
            writeln!(f, "query({q}).")?;
        }
        Ok(())
    }
}
