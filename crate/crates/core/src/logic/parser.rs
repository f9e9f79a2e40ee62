//! Recursive-descent parser for the logic language.
//!
//! One clause per `.`-terminated statement. Statement forms:
//!
//! ```text
//! 0.3 :: fact(1).                      % fact with literal probability
//! object/0 :: object(0).               % fact bound to an external parameter
//! @group(class/0) class/0/1 :: c(0,1). % member of a categorical group
//! head(X) :- body(X), X < 3.           % rule
//! head(2).                             % body-less rule (deterministic)
//! query(add(Z)).                       % query declaration
//! ```
//!
//! `query` is reserved for query declarations and cannot be used as a
//! predicate. Predicate arity is fixed program-wide; a clash is reported as
//! a parse error at the offending line.

use std::collections::HashMap;
use std::fmt;

use super::ast::*;
use super::lexer::{lex, Pos, Spanned, Tok};

/// Parse failure with 1-based source position.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

struct Parser {
    toks: Vec<Spanned>,
    at: usize,
    /// name -> (arity, line of first use)
    arities: HashMap<String, (usize, usize)>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.at + 1).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let p = self.pos();
        Err(ParseError { line: p.line, col: p.col, msg: msg.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}, found {}", self.peek()))
        }
    }

    fn note_arity(&mut self, atom: &Atom, line: usize) -> Result<(), ParseError> {
        match self.arities.get(&atom.pred) {
            Some(&(arity, first_line)) if arity != atom.arity() => {
                Err(ParseError {
                    line,
                    col: 1,
                    msg: format!(
                        "arity clash for '{}': used with {} args here but {} args at line {}",
                        atom.pred,
                        atom.arity(),
                        arity,
                        first_line
                    ),
                })
            }
            Some(_) => Ok(()),
            None => {
                self.arities.insert(atom.pred.clone(), (atom.arity(), line));
                Ok(())
            }
        }
    }

    /// `name` or `name/0/3` — an external parameter or group key.
    fn parse_key(&mut self) -> Result<String, ParseError> {
        let name = match self.bump() {
            Tok::Ident(s) => s,
            other => return self.err(format!("expected key, found {other}")),
        };
        let mut key = name;
        while *self.peek() == Tok::Slash {
            self.bump();
            match self.bump() {
                Tok::Int(n) if n >= 0 => {
                    key.push('/');
                    key.push_str(&n.to_string());
                }
                other => return self.err(format!("expected index after '/', found {other}")),
            }
        }
        Ok(key)
    }

    fn parse_term(&mut self) -> Result<Term, ParseError> {
        match self.bump() {
            Tok::Int(n) => Ok(Term::Int(n)),
            Tok::Minus => match self.bump() {
                Tok::Int(n) => Ok(Term::Int(-n)),
                other => self.err(format!("expected integer after '-', found {other}")),
            },
            Tok::Var(v) => Ok(Term::Var(v)),
            Tok::Ident(c) => {
                if *self.peek() == Tok::LParen {
                    self.err(format!("compound term '{c}(...)' is not supported here"))
                } else {
                    Ok(Term::Const(c))
                }
            }
            other => self.err(format!("expected term, found {other}")),
        }
    }

    fn parse_atom_args(&mut self, pred: String, line: usize) -> Result<Atom, ParseError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            loop {
                args.push(self.parse_term()?);
                match self.bump() {
                    Tok::Comma => continue,
                    Tok::RParen => break,
                    other => return self.err(format!("expected ',' or ')', found {other}")),
                }
            }
        }
        let atom = Atom::new(pred, args);
        self.note_arity(&atom, line)?;
        Ok(atom)
    }

    fn parse_atom(&mut self) -> Result<Atom, ParseError> {
        let line = self.pos().line;
        match self.bump() {
            Tok::Ident(p) => self.parse_atom_args(p, line),
            other => self.err(format!("expected atom, found {other}")),
        }
    }

    // expr := product (('+'|'-') product)*
    // product := primary ('*' primary)*
    fn parse_expr(&mut self) -> Result<ArithExpr, ParseError> {
        let mut lhs = self.parse_product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.parse_product()?;
                    lhs = ArithExpr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.parse_product()?;
                    lhs = ArithExpr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_product(&mut self) -> Result<ArithExpr, ParseError> {
        let mut lhs = self.parse_primary()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.parse_primary()?;
            lhs = ArithExpr::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_primary(&mut self) -> Result<ArithExpr, ParseError> {
        match self.bump() {
            Tok::Int(n) => Ok(ArithExpr::Int(n)),
            Tok::Var(v) => Ok(ArithExpr::Var(v)),
            Tok::Minus => Ok(ArithExpr::Neg(Box::new(self.parse_primary()?))),
            Tok::LParen => {
                let e = self.parse_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            other => self.err(format!("expected arithmetic expression, found {other}")),
        }
    }

    /// Convert a trivial expression back to a term for `is`/`=` left sides.
    fn expr_to_term(&self, e: &ArithExpr) -> Result<Term, ParseError> {
        match e {
            ArithExpr::Int(n) => Ok(Term::Int(*n)),
            ArithExpr::Var(v) => Ok(Term::Var(v.clone())),
            ArithExpr::Neg(inner) => {
                if let ArithExpr::Int(n) = **inner {
                    Ok(Term::Int(-n))
                } else {
                    self.err("expected a variable or integer on this side")
                }
            }
            _ => self.err("expected a variable or integer on this side"),
        }
    }

    fn parse_body_literal(&mut self) -> Result<BodyLit, ParseError> {
        match self.peek().clone() {
            Tok::NegOp => {
                self.bump();
                Ok(BodyLit::Neg(self.parse_atom()?))
            }
            Tok::Ident(name) if name == "not" && *self.peek2() == Tok::LParen => {
                self.bump();
                self.bump();
                let atom = self.parse_atom()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(BodyLit::Neg(atom))
            }
            Tok::Ident(name) if name == "between" && *self.peek2() == Tok::LParen => {
                self.bump();
                self.bump();
                let lo = self.parse_term()?;
                self.expect(Tok::Comma, "','")?;
                let hi = self.parse_term()?;
                self.expect(Tok::Comma, "','")?;
                let x = self.parse_term()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(BodyLit::Builtin(Builtin::Between(lo, hi, x)))
            }
            Tok::Ident(_) => {
                let atom = self.parse_atom()?;
                // A 0-ary atom followed by an operator is really a constant
                // term in a builtin, e.g. `X = red`.
                match self.peek() {
                    Tok::Eq | Tok::NotEq | Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge
                        if atom.args.is_empty() =>
                    {
                        let lhs = Term::Const(atom.pred);
                        self.parse_builtin_after_term(lhs)
                    }
                    _ => Ok(BodyLit::Pos(atom)),
                }
            }
            _ => {
                let expr = self.parse_expr()?;
                match self.peek().clone() {
                    Tok::Ident(kw) if kw == "is" => {
                        self.bump();
                        let lhs = self.expr_to_term(&expr)?;
                        let rhs = self.parse_expr()?;
                        Ok(BodyLit::Builtin(Builtin::Is(lhs, rhs)))
                    }
                    Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge => {
                        let op = match self.bump() {
                            Tok::Lt => CmpOp::Lt,
                            Tok::Gt => CmpOp::Gt,
                            Tok::Le => CmpOp::Le,
                            Tok::Ge => CmpOp::Ge,
                            _ => unreachable!(),
                        };
                        let rhs = self.parse_expr()?;
                        Ok(BodyLit::Builtin(Builtin::Cmp(op, expr, rhs)))
                    }
                    Tok::Eq => {
                        self.bump();
                        let lhs = self.expr_to_term(&expr)?;
                        let rhs = self.parse_term()?;
                        Ok(BodyLit::Builtin(Builtin::Unify(lhs, rhs)))
                    }
                    Tok::NotEq => {
                        self.bump();
                        let lhs = self.expr_to_term(&expr)?;
                        let rhs = self.parse_term()?;
                        Ok(BodyLit::Builtin(Builtin::NotUnify(lhs, rhs)))
                    }
                    other => self.err(format!(
                        "expected 'is' or comparison after expression, found {other}"
                    )),
                }
            }
        }
    }

    fn parse_builtin_after_term(&mut self, lhs: Term) -> Result<BodyLit, ParseError> {
        match self.bump() {
            Tok::Eq => Ok(BodyLit::Builtin(Builtin::Unify(lhs, self.parse_term()?))),
            Tok::NotEq => Ok(BodyLit::Builtin(Builtin::NotUnify(lhs, self.parse_term()?))),
            op @ (Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge) => {
                let cmp = match op {
                    Tok::Lt => CmpOp::Lt,
                    Tok::Gt => CmpOp::Gt,
                    Tok::Le => CmpOp::Le,
                    Tok::Ge => CmpOp::Ge,
                    _ => unreachable!(),
                };
                let lhs_expr = match &lhs {
                    Term::Int(n) => ArithExpr::Int(*n),
                    Term::Var(v) => ArithExpr::Var(v.clone()),
                    Term::Const(_) => {
                        return self.err("symbolic constants cannot be compared arithmetically")
                    }
                };
                let rhs = self.parse_expr()?;
                Ok(BodyLit::Builtin(Builtin::Cmp(cmp, lhs_expr, rhs)))
            }
            other => self.err(format!("unexpected {other} in body literal")),
        }
    }

    fn parse_body(&mut self) -> Result<Vec<BodyLit>, ParseError> {
        let mut body = vec![self.parse_body_literal()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            body.push(self.parse_body_literal()?);
        }
        Ok(body)
    }

    fn parse_fact(
        &mut self,
        group: Option<String>,
        param: FactParam,
        line: usize,
    ) -> Result<FactDecl, ParseError> {
        self.expect(Tok::ColonColon, "'::'")?;
        let atom = self.parse_atom()?;
        self.expect(Tok::Dot, "'.'")?;
        Ok(FactDecl { group, param, atom, line })
    }

    fn check_prob(&self, p: f64) -> Result<f64, ParseError> {
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            self.err(format!("probability {p} outside [0, 1]"))
        }
    }

    fn parse_statement(&mut self, prog: &mut Program) -> Result<(), ParseError> {
        let line = self.pos().line;
        match self.peek().clone() {
            Tok::AtGroup => {
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let group = self.parse_key()?;
                self.expect(Tok::RParen, "')'")?;
                let param = match self.peek().clone() {
                    Tok::Float(p) => {
                        self.bump();
                        FactParam::Prob(self.check_prob(p)?)
                    }
                    Tok::Int(n) => {
                        self.bump();
                        FactParam::Prob(self.check_prob(n as f64)?)
                    }
                    Tok::Ident(_) => FactParam::External(self.parse_key()?),
                    other => return self.err(format!("expected fact parameter, found {other}")),
                };
                let fact = self.parse_fact(Some(group), param, line)?;
                prog.facts.push(fact);
                Ok(())
            }
            Tok::Float(p) => {
                self.bump();
                let param = FactParam::Prob(self.check_prob(p)?);
                let fact = self.parse_fact(None, param, line)?;
                prog.facts.push(fact);
                Ok(())
            }
            Tok::Int(n) if *self.peek2() == Tok::ColonColon => {
                self.bump();
                let param = FactParam::Prob(self.check_prob(n as f64)?);
                let fact = self.parse_fact(None, param, line)?;
                prog.facts.push(fact);
                Ok(())
            }
            Tok::Ident(name) => {
                if name == "query" && *self.peek2() == Tok::LParen {
                    self.bump();
                    self.bump();
                    let atom = self.parse_atom()?;
                    self.expect(Tok::RParen, "')'")?;
                    self.expect(Tok::Dot, "'.'")?;
                    prog.queries.push(atom);
                    return Ok(());
                }
                // Lookahead decides between an external-parameter fact
                // (`key :: atom.`) and a clause head.
                if *self.peek2() == Tok::Slash || *self.peek2() == Tok::ColonColon {
                    let key = self.parse_key()?;
                    let fact = self.parse_fact(None, FactParam::External(key), line)?;
                    prog.facts.push(fact);
                    return Ok(());
                }
                let head = self.parse_atom()?;
                match self.bump() {
                    Tok::Dot => {
                        prog.rules.push(Rule { head, body: Vec::new(), line });
                        Ok(())
                    }
                    Tok::ColonDash => {
                        let body = self.parse_body()?;
                        self.expect(Tok::Dot, "'.'")?;
                        prog.rules.push(Rule { head, body, line });
                        Ok(())
                    }
                    other => self.err(format!("expected '.' or ':-', found {other}")),
                }
            }
            other => self.err(format!("expected statement, found {other}")),
        }
    }
}

/// Parse a complete program from source text.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src).map_err(|e| ParseError {
        line: e.pos.line,
        col: e.pos.col,
        msg: e.msg,
    })?;
    let mut parser = Parser { toks, at: 0, arities: HashMap::new() };
    let mut prog = Program::default();
    while *parser.peek() != Tok::Eof {
        parser.parse_statement(&mut prog)?;
    }
    // Reserve `query` and fix arities across fact atoms, rule heads, body
    // atoms, and query patterns; note_arity already ran on each.
    Ok(prog)
}

/// Parse a single atom pattern, as used for query strings on the command
/// line. Variables are permitted.
pub fn parse_query_atom(src: &str) -> Result<Atom, ParseError> {
    let toks = lex(src).map_err(|e| ParseError {
        line: e.pos.line,
        col: e.pos.col,
        msg: e.msg,
    })?;
    let mut parser = Parser { toks, at: 0, arities: HashMap::new() };
    let atom = parser.parse_atom()?;
    if *parser.peek() == Tok::Dot {
        parser.bump();
    }
    if *parser.peek() != Tok::Eof {
        return parser.err("trailing input after atom");
    }
    Ok(atom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_probabilistic_fact() {
        let prog = parse_program("0.1::alarm.").unwrap();
        assert_eq!(prog.facts.len(), 1);
        assert_eq!(prog.facts[0].param, FactParam::Prob(0.1));
        assert_eq!(prog.facts[0].atom, Atom::new("alarm", vec![]));
    }

    #[test]
    fn parses_external_fact_and_group() {
        let prog = parse_program(
            "object/0 :: object(0).\n@group(class/0) class/0/1 :: class(0, 1).\n",
        )
        .unwrap();
        assert_eq!(prog.facts[0].param, FactParam::External("object/0".into()));
        assert_eq!(prog.facts[1].group.as_deref(), Some("class/0"));
        assert_eq!(prog.facts[1].param, FactParam::External("class/0/1".into()));
    }

    #[test]
    fn parses_negated_rule() {
        let prog = parse_program("digit(ID, 0) :- \\+ object(ID).").unwrap();
        assert_eq!(prog.rules.len(), 1);
        assert_eq!(
            prog.rules[0].body,
            vec![BodyLit::Neg(Atom::new("object", vec![Term::Var("ID".into())]))]
        );
    }

    #[test]
    fn not_call_is_negation() {
        let a = parse_program("p :- not(q).").unwrap();
        let b = parse_program("p :- \\+ q.").unwrap();
        assert_eq!(a.rules[0].body, b.rules[0].body);
    }

    #[test]
    fn parses_arithmetic_and_queries() {
        let prog = parse_program(
            "add(Z) :- digit(1, Y1), digit(2, Y2), Z is Y1 + Y2.\nquery(add(Z)).\n",
        )
        .unwrap();
        assert_eq!(prog.rules[0].body.len(), 3);
        assert_eq!(prog.queries, vec![Atom::new("add", vec![Term::Var("Z".into())])]);
        match &prog.rules[0].body[2] {
            BodyLit::Builtin(Builtin::Is(Term::Var(z), e)) => {
                assert_eq!(z, "Z");
                assert_eq!(
                    *e,
                    ArithExpr::Add(
                        Box::new(ArithExpr::Var("Y1".into())),
                        Box::new(ArithExpr::Var("Y2".into()))
                    )
                );
            }
            other => panic!("unexpected literal {other:?}"),
        }
    }

    #[test]
    fn empty_program_is_valid() {
        let prog = parse_program("% only a comment\n").unwrap();
        assert!(prog.is_empty());
    }

    #[test]
    fn rejects_probability_out_of_range() {
        let err = parse_program("1.5::f.").unwrap_err();
        assert!(err.msg.contains("probability"), "{err}");
        assert_eq!(err.line, 1);
    }

    #[test]
    fn rejects_arity_clash() {
        let err = parse_program("f(1).\nf(1, 2).\n").unwrap_err();
        assert!(err.msg.contains("arity clash"), "{err}");
        assert_eq!(err.line, 2);
    }

    #[test]
    fn error_position_is_reported() {
        let err = parse_program("p :- q r.").unwrap_err();
        assert_eq!((err.line, err.col), (1, 8));
    }

    #[test]
    fn between_and_comparisons() {
        let prog =
            parse_program("p(N) :- between(0, 9, N), N < 5, N \\= 3.").unwrap();
        assert_eq!(prog.rules[0].body.len(), 3);
    }

    #[test]
    fn integer_probability_literals() {
        let prog = parse_program("1::f.\n0::g.\n").unwrap();
        assert_eq!(prog.facts[0].param, FactParam::Prob(1.0));
        assert_eq!(prog.facts[1].param, FactParam::Prob(0.0));
    }

    #[test]
    fn display_round_trips() {
        let src = "\
object/1 :: object(1).
object/2 :: object(2).
@group(class/1) class/1/0 :: class(1, 0).
@group(class/1) class/1/1 :: class(1, 1).
digit(ID, V) :- object(ID), class(ID, V).
digit(ID, 0) :- \\+ object(ID).
add(Z) :- digit(1, Y1), digit(2, Y2), Z is Y1 + Y2.
query(add(Z)).
";
        let prog = parse_program(src).unwrap();
        let printed = prog.to_string();
        let reparsed = parse_program(&printed).unwrap();
        assert_eq!(prog, reparsed);
    }

    #[test]
    fn query_atom_helper() {
        let atom = parse_query_atom("add(2)").unwrap();
        assert_eq!(atom, Atom::new("add", vec![Term::Int(2)]));
        assert!(parse_query_atom("add(2) extra").is_err());
    }
}
