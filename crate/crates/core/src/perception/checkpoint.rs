//! Versioned flat-text serialization of named parameter tensors.
//!
//! Layout: a header line, then one `tensor <name> <rows> <cols>` record per
//! tensor followed by its rows, one space-separated line each. Values are
//! written in shortest round-trip form, so a save/load cycle is
//! bit-identical.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const HEADER: &str = "# slotlog-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint header `{0}`")]
    Version(String),
    #[error("malformed checkpoint at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

pub fn write_checkpoint(
    mut w: impl Write,
    params: &BTreeMap<String, Tensor>,
) -> Result<(), CheckpointError> {
    writeln!(w, "{HEADER}")?;
    for (name, tensor) in params {
        writeln!(w, "tensor {name} {} {}", tensor.rows(), tensor.cols())?;
        for r in 0..tensor.rows() {
            let row: Vec<String> = tensor.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<BTreeMap<String, Tensor>, CheckpointError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();

    let header = loop {
        match lines.next() {
            None => return Err(CheckpointError::Version(String::new())),
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    if header.trim() != HEADER {
        return Err(CheckpointError::Version(header.trim().to_string()));
    }

    let mut params = BTreeMap::new();
    while let Some((idx, line)) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: &str| CheckpointError::Malformed { line: idx + 1, msg: msg.into() };
        let mut fields = line.split_whitespace();
        if fields.next() != Some("tensor") {
            return Err(malformed("expected a `tensor` record"));
        }
        let name = fields.next().ok_or_else(|| malformed("missing tensor name"))?.to_string();
        let rows: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed("missing or invalid row count"))?;
        let cols: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed("missing or invalid column count"))?;
        if fields.next().is_some() {
            return Err(malformed("trailing fields after tensor record"));
        }

        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (row_idx, row_line) = lines
                .next()
                .ok_or(CheckpointError::Malformed {
                    line: idx + 1,
                    msg: format!("tensor `{name}` is truncated"),
                })?;
            let row_line = row_line?;
            let row_malformed = |msg: String| CheckpointError::Malformed { line: row_idx + 1, msg };
            let mut count = 0;
            for field in row_line.split_whitespace() {
                let value: f64 = field
                    .parse()
                    .map_err(|_| row_malformed(format!("invalid value `{field}`")))?;
                data.push(value);
                count += 1;
            }
            if count != cols {
                return Err(row_malformed(format!(
                    "tensor `{name}` row has {count} values, expected {cols}"
                )));
            }
        }
        if params.insert(name.clone(), Tensor::from_vec(rows, cols, data)).is_some() {
            return Err(CheckpointError::Malformed {
                line: idx + 1,
                msg: format!("duplicate tensor `{name}`"),
            });
        }
    }
    Ok(params)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &BTreeMap<String, Tensor>,
) -> Result<(), CheckpointError> {
    let mut buffer = Vec::new();
    write_checkpoint(&mut buffer, params)?;
    std::fs::write(path, buffer)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>, CheckpointError> {
    read_checkpoint(std::fs::File::open(path)?)
}
