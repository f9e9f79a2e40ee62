//! Hand-rolled lexer with line/column tracking.
//!
//! `%` starts a comment that runs to end of line. Numbers lex as integers
//! unless a fractional part follows; the statement-terminating dot is only
//! consumed as part of a number when a digit comes directly after it, so
//! `f(1).` tokenizes as `f ( 1 ) .`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Lower-case identifier (predicate, constant, or keyword like `is`).
    Ident(String),
    /// Upper-case or `_`-leading identifier.
    Var(String),
    Int(i64),
    Float(f64),
    /// `@group`
    AtGroup,
    ColonColon,
    ColonDash,
    LParen,
    RParen,
    Comma,
    Dot,
    Slash,
    Plus,
    Minus,
    Star,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    NotEq,
    NegOp,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Var(s) => write!(f, "'{s}'"),
            Tok::Int(n) => write!(f, "'{n}'"),
            Tok::Float(x) => write!(f, "'{x}'"),
            Tok::AtGroup => write!(f, "'@group'"),
            Tok::ColonColon => write!(f, "'::'"),
            Tok::ColonDash => write!(f, "':-'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Comma => write!(f, "','"),
            Tok::Dot => write!(f, "'.'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Lt => write!(f, "'<'"),
            Tok::Gt => write!(f, "'>'"),
            Tok::Le => write!(f, "'=<'"),
            Tok::Ge => write!(f, "'>='"),
            Tok::Eq => write!(f, "'='"),
            Tok::NotEq => write!(f, "'\\='"),
            Tok::NegOp => write!(f, "'\\+'"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub pos: Pos,
    pub msg: String,
}

pub fn lex(src: &str) -> Result<Vec<Spanned>, LexError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! push {
        ($tok:expr, $pos:expr) => {
            out.push(Spanned { tok: $tok, pos: $pos })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                push!(Tok::LParen, pos);
                i += 1;
                col += 1;
            }
            ')' => {
                push!(Tok::RParen, pos);
                i += 1;
                col += 1;
            }
            ',' => {
                push!(Tok::Comma, pos);
                i += 1;
                col += 1;
            }
            '/' => {
                push!(Tok::Slash, pos);
                i += 1;
                col += 1;
            }
            '+' => {
                push!(Tok::Plus, pos);
                i += 1;
                col += 1;
            }
            '-' => {
                push!(Tok::Minus, pos);
                i += 1;
                col += 1;
            }
            '*' => {
                push!(Tok::Star, pos);
                i += 1;
                col += 1;
            }
            '<' => {
                push!(Tok::Lt, pos);
                i += 1;
                col += 1;
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    push!(Tok::Ge, pos);
                    i += 2;
                col += 2;
                } else {
                    push!(Tok::Gt, pos);
                    i += 1;
                col += 1;
                }
            }
            '=' => {
                if chars.get(i + 1) == Some(&'<') {
                    push!(Tok::Le, pos);
                    i += 2;
                col += 2;
                } else {
                    push!(Tok::Eq, pos);
                    i += 1;
                col += 1;
                }
            }
            '\\' => match chars.get(i + 1) {
                Some('+') => {
                    push!(Tok::NegOp, pos);
                    i += 2;
                col += 2;
                }
                Some('=') => {
                    push!(Tok::NotEq, pos);
                    i += 2;
                col += 2;
                }
                _ => {
                    return Err(LexError { pos, msg: "expected '\\+' or '\\='".into() });
                }
            },
            ':' => match chars.get(i + 1) {
                Some(':') => {
                    push!(Tok::ColonColon, pos);
                    i += 2;
                col += 2;
                }
                Some('-') => {
                    push!(Tok::ColonDash, pos);
                    i += 2;
                col += 2;
                }
                _ => {
                    return Err(LexError { pos, msg: "expected '::' or ':-'".into() });
                }
            },
            '@' => {
                let word: String = chars[i + 1..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                if word == "group" {
                    push!(Tok::AtGroup, pos);
                    i += 1 + word.len();
                col += 1 + word.len();
                } else {
                    return Err(LexError {
                        pos,
                        msg: format!("unknown annotation '@{word}'"),
                    });
                }
            }
            '.' => {
                push!(Tok::Dot, pos);
                i += 1;
                col += 1;
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let is_float = j + 1 < chars.len()
                    && chars[j] == '.'
                    && chars[j + 1].is_ascii_digit();
                if is_float {
                    let mut k = j + 1;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    let text: String = chars[i..k].iter().collect();
                    let val: f64 = text.parse().map_err(|_| LexError {
                        pos,
                        msg: format!("bad float literal '{text}'"),
                    })?;
                    push!(Tok::Float(val), pos);
                    let n = k - i;
                    i += n;
                    col += n;
                } else {
                    let text: String = chars[i..j].iter().collect();
                    let val: i64 = text.parse().map_err(|_| LexError {
                        pos,
                        msg: format!("integer literal out of range '{text}'"),
                    })?;
                    push!(Tok::Int(val), pos);
                    let n = j - i;
                    i += n;
                    col += n;
                }
            }
            c if c.is_ascii_lowercase() => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_ascii_alphanumeric() || chars[j] == '_')
                {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                push!(Tok::Ident(text), pos);
                let n = j - i;
                i += n;
                col += n;
            }
            c if c.is_ascii_uppercase() || c == '_' => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_ascii_alphanumeric() || chars[j] == '_')
                {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                push!(Tok::Var(text), pos);
                let n = j - i;
                i += n;
                col += n;
            }
            other => {
                return Err(LexError { pos, msg: format!("unexpected character '{other}'") });
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(out)
}
