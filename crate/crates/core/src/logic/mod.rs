//! Probabilistic logic language: syntax tree, parser, and validator.

mod ast;
mod lexer;
mod parser;
mod validate;

pub use ast::{
    ArithExpr, Atom, BodyLit, Builtin, CmpOp, FactDecl, FactParam, Program, Rule, Term,
};
pub use parser::{parse_program, parse_query_atom, ParseError};
pub use validate::{validate, ValidationReport, Violation};

pub(crate) use validate::stratify;
