//! Parameter tables binding external fact keys to probabilities, and
//! gradient tables reporting sensitivities per key.

use std::collections::BTreeMap;
use std::fmt;

use crate::ground::{FactId, GroundProgram};
use crate::logic::FactParam;

/// Failure while reading or checking a parameter table.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing parameter '{key}'")]
    Missing { key: String },
    #[error("{0}")]
    Invalid(String),
}

/// Probability bound to each external fact key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactParamTable {
    values: BTreeMap<String, f64>,
}

impl FactParamTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.values.iter()
    }

    /// Parse the `key value...` line format. A line holding a single value
    /// binds the key directly; a line holding `key v0 v1 ... vK-1` expands
    /// to `key/0 .. key/K-1`. `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let mut table = FactParamTable::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let key = parts.next().expect("non-empty line has a first token");
            let values: Vec<f64> = parts
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| ParamsError::Parse {
                        line,
                        msg: format!("'{tok}' is not a number"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(ParamsError::Parse {
                    line,
                    msg: format!("key '{key}' has no value"),
                });
            }
            let mut bind = |k: String, v: f64| -> Result<(), ParamsError> {
                if table.values.insert(k.clone(), v).is_some() {
                    return Err(ParamsError::Parse {
                        line,
                        msg: format!("key '{k}' bound more than once"),
                    });
                }
                Ok(())
            };
            if values.len() == 1 {
                bind(key.to_string(), values[0])?;
            } else {
                for (k, v) in values.iter().enumerate() {
                    bind(format!("{key}/{k}"), *v)?;
                }
            }
        }
        Ok(table)
    }

    /// Check the table against a ground program: every external key must be
    /// bound to a probability in `[0, 1]`, and the entries of each
    /// categorical group instance must sum to one.
    pub fn validate_against(&self, gp: &GroundProgram) -> Result<(), ParamsError> {
        let prob_of = |id: FactId| -> Result<f64, ParamsError> {
            let fact = gp.fact(id);
            match &fact.param {
                FactParam::Prob(p) => Ok(*p),
                FactParam::External(key) => {
                    self.get(key).ok_or_else(|| ParamsError::Missing { key: key.clone() })
                }
            }
        };
        let mut cells: BTreeMap<String, f64> = BTreeMap::new();
        for fact in &gp.facts {
            let p = prob_of(fact.id)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(ParamsError::Invalid(format!(
                    "probability {p} for {} is outside [0, 1]",
                    fact.param
                )));
            }
            if let Some(group) = &fact.group {
                *cells.entry(group.cell.clone()).or_insert(0.0) += p;
            }
        }
        for (cell, total) in cells {
            if (total - 1.0).abs() > 1e-9 {
                return Err(ParamsError::Invalid(format!(
                    "group instance {cell} sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FactParamTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} {v:?}")?;
        }
        Ok(())
    }
}

impl FromIterator<(String, f64)> for FactParamTable {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        FactParamTable { values: iter.into_iter().collect() }
    }
}

/// Gradient of a scalar with respect to every external key of a program.
/// Keys untouched by the computation stay at zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientTable {
    values: BTreeMap<String, f64>,
}

impl GradientTable {
    pub fn zeros<I: IntoIterator<Item = String>>(keys: I) -> Self {
        GradientTable { values: keys.into_iter().map(|k| (k, 0.0)).collect() }
    }

    pub fn accumulate(&mut self, key: &str, delta: f64) {
        *self.values.entry(key.to_string()).or_insert(0.0) += delta;
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
