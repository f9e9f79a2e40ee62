//! Synthetic token scenes with distant supervision.
//!
//! A scene is a fixed-size stack of feature tokens: each object contributes
//! a small cluster of noisy copies of its class prototype, the rest of the
//! rows are near-zero background, and row order is shuffled. The only
//! training label is the task value of the hidden class multiset; the
//! multiset itself rides along in a sidecar that evaluation alone may read.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tensor::Tensor;

/// Shape and noise model of generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub min_objects: usize,
    pub max_objects: usize,
    pub classes: usize,
    pub tokens_per_object: usize,
    pub background_tokens: usize,
    pub token_dim: usize,
    pub noise: f64,
    pub prototype_scale: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            min_objects: 0,
            max_objects: 3,
            classes: 5,
            tokens_per_object: 3,
            background_tokens: 3,
            token_dim: 16,
            noise: 0.1,
            prototype_scale: 1.0,
        }
    }
}

impl SceneSpec {
    /// Total tokens per scene: every scene is padded with background rows
    /// up to the capacity implied by `max_objects`.
    pub fn tokens(&self) -> usize {
        self.tokens_per_object * self.max_objects + self.background_tokens
    }
}

/// How many scenes to generate per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SceneCounts {
    fn default() -> Self {
        SceneCounts { train: 6000, val: 600, test: 1500 }
    }
}

/// The distant-supervision label attached to a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Label is the sum of the object class values.
    Sum,
    /// Label is 1 when at least two objects share a class, else 0.
    HasPair,
}

impl Task {
    pub fn label(self, classes: &[u32]) -> i64 {
        match self {
            Task::Sum => classes.iter().map(|&c| c as i64).sum(),
            Task::HasPair => {
                let mut seen = BTreeSet::new();
                i64::from(classes.iter().any(|c| !seen.insert(c)))
            }
        }
    }
}

/// How class combinations are divided between train and test scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitSpec {
    /// Random disjoint partition of class multisets; the train side must
    /// still realize every achievable sum and every class.
    Compositional { train_fraction: f64 },
    /// Scenes with 0, 1, or 3 objects in train; exactly 2 in test.
    Interpolation,
    /// Standard train set; test scenes hold exactly `objects` objects,
    /// exceeding the training range.
    Extrapolation { objects: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Compositional { train_fraction: 0.75 }
    }
}

/// One scene: observed tokens, its task label, and the hidden concept
/// annotation that only evaluation may read.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Tensor,
    pub label: i64,
    pub hidden: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unsatisfiable split: {0}")]
    UnsatisfiableSplit(String),
    #[error("dataset i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// All non-decreasing class sequences with sizes in `min..=max`.
fn multisets(classes: usize, min: usize, max: usize) -> Vec<Vec<u32>> {
    fn extend(classes: u32, size: usize, from: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for c in from..classes {
            current.push(c);
            extend(classes, size, c, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    for size in min..=max {
        extend(classes as u32, size, 0, &mut Vec::new(), &mut out);
    }
    out
}

fn achievable_sums(combos: &[Vec<u32>]) -> BTreeSet<i64> {
    combos.iter().map(|c| Task::Sum.label(c)).collect()
}

fn classes_used(combos: &[Vec<u32>]) -> BTreeSet<u32> {
    combos.iter().flatten().copied().collect()
}

/// Draws disjoint train/test combination sets whose train side realizes
/// every achievable sum and every class.
fn compositional_partition(
    all: &[Vec<u32>],
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>), DataError> {
    if !(0.0..1.0).contains(&train_fraction) || all.len() < 2 {
        return Err(DataError::UnsatisfiableSplit(format!(
            "{} combinations at train fraction {train_fraction}",
            all.len()
        )));
    }
    let take = ((all.len() as f64 * train_fraction).ceil() as usize).clamp(1, all.len() - 1);
    let required_sums = achievable_sums(all);
    let required_classes = classes_used(all);
    for _ in 0..1000 {
        let mut shuffled = all.to_vec();
        shuffled.shuffle(rng);
        let (train, test) = shuffled.split_at(take);
        if achievable_sums(train) == required_sums && classes_used(train) == required_classes {
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort();
            test.sort();
            return Ok((train, test));
        }
    }
    Err(DataError::UnsatisfiableSplit(
        "no sampled partition kept every sum and class in the train side".into(),
    ))
}

fn split_combos(
    spec: &SceneSpec,
    split: &SplitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>), DataError> {
    let all = multisets(spec.classes, spec.min_objects, spec.max_objects);
    match split {
        SplitSpec::Compositional { train_fraction } => {
            compositional_partition(&all, *train_fraction, rng)
        }
        SplitSpec::Interpolation => {
            let train_sizes = [0usize, 1, 3];
            let train: Vec<Vec<u32>> = all
                .iter()
                .filter(|c| train_sizes.contains(&c.len()))
                .cloned()
                .collect();
            let test: Vec<Vec<u32>> = all.iter().filter(|c| c.len() == 2).cloned().collect();
            if train.is_empty() || test.is_empty() {
                return Err(DataError::UnsatisfiableSplit(format!(
                    "interpolation needs object counts spanning 0-3 and 2; range is {}..={}",
                    spec.min_objects, spec.max_objects
                )));
            }
            Ok((train, test))
        }
        SplitSpec::Extrapolation { objects } => {
            if *objects <= spec.max_objects {
                return Err(DataError::UnsatisfiableSplit(format!(
                    "extrapolation to {objects} objects does not exceed the training range \
                     {}..={}",
                    spec.min_objects, spec.max_objects
                )));
            }
            let test = multisets(spec.classes, *objects, *objects);
            Ok((all, test))
        }
    }
}

fn sample_scene(
    spec: &SceneSpec,
    combos: &[Vec<u32>],
    prototypes: &Tensor,
    task: Task,
    rng: &mut ChaCha8Rng,
) -> Example {
    let classes = combos[rng.random_range(0..combos.len())].clone();
    let total = spec.tokens();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    for &class in &classes {
        // Each object is an instance of its class prototype displaced by a
        // per-object center, so two objects of the same class form two
        // distinct token clusters rather than one merged cluster.
        let center: Vec<f64> = (0..spec.token_dim)
            .map(|f| {
                prototypes.get(class as usize, f)
                    + spec.noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        for _ in 0..spec.tokens_per_object {
            let row: Vec<f64> = center
                .iter()
                .map(|&v| v + 0.5 * spec.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push(row);
        }
    }
    while rows.len() < total {
        rows.push(
            (0..spec.token_dim)
                .map(|_| spec.noise * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    rows.shuffle(rng);
    let tokens = Tensor::from_fn(total, spec.token_dim, |r, c| rows[r][c]);
    Example { tokens, label: task.label(&classes), hidden: Some(classes) }
}

/// Class prototypes shared by every split of one experiment seed.
pub fn prototypes(spec: &SceneSpec, seed: u64) -> Tensor {
    let mut rng = rng::stream(seed, "prototypes");
    Tensor::from_fn(spec.classes, spec.token_dim, |_, _| {
        spec.prototype_scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Generates train, validation, and test scenes. Validation scenes are
/// drawn from the train-side combinations; test scenes from the held-out
/// side (or the enlarged scenes of an extrapolation split).
pub fn generate_dataset(
    spec: &SceneSpec,
    counts: &SceneCounts,
    split: &SplitSpec,
    task: Task,
    seed: u64,
) -> Result<DataBundle, DataError> {
    if spec.classes == 0 || spec.token_dim == 0 || spec.tokens_per_object == 0 {
        return Err(DataError::UnsatisfiableSplit("degenerate scene spec".into()));
    }
    if spec.min_objects > spec.max_objects {
        return Err(DataError::UnsatisfiableSplit(format!(
            "object count range {}..={} is empty",
            spec.min_objects, spec.max_objects
        )));
    }
    let prototypes = prototypes(spec, seed);
    let mut split_rng = rng::stream(seed, "split");
    let (train_combos, test_combos) = split_combos(spec, split, &mut split_rng)?;

    let test_spec = match split {
        SplitSpec::Extrapolation { objects } => {
            SceneSpec { min_objects: *objects, max_objects: *objects, ..spec.clone() }
        }
        _ => spec.clone(),
    };

    let draw = |role: &str, n: usize, combos: &[Vec<u32>], scene_spec: &SceneSpec| {
        let mut rng = rng::stream(seed, role);
        (0..n).map(|_| sample_scene(scene_spec, combos, &prototypes, task, &mut rng)).collect()
    };
    Ok(DataBundle {
        train: draw("data/train", counts.train, &train_combos, spec),
        val: draw("data/val", counts.val, &train_combos, spec),
        test: draw("data/test", counts.test, &test_combos, &test_spec),
    })
}

const DATASET_HEADER: &str = "# slotlog-dataset v1";
const HIDDEN_HEADER: &str = "# slotlog-hidden v1";

/// Writes scenes and labels; hidden annotations are never included here.
pub fn write_dataset(mut w: impl Write, examples: &[Example]) -> Result<(), DataError> {
    writeln!(w, "{DATASET_HEADER}")?;
    for example in examples {
        writeln!(
            w,
            "scene {} {} {}",
            example.label,
            example.tokens.rows(),
            example.tokens.cols()
        )?;
        for r in 0..example.tokens.rows() {
            let row: Vec<String> =
                example.tokens.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

/// Writes the eval-only concept annotations, aligned by scene order.
pub fn write_hidden(mut w: impl Write, examples: &[Example]) -> Result<(), DataError> {
    writeln!(w, "{HIDDEN_HEADER}")?;
    for example in examples {
        let classes = example.hidden.as_deref().unwrap_or(&[]);
        if classes.is_empty() {
            writeln!(w, "scene")?;
        } else {
            let values: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
            writeln!(w, "scene {}", values.join(" "))?;
        }
    }
    Ok(())
}

fn expect_header(
    lines: &mut impl Iterator<Item = (usize, std::io::Result<String>)>,
    header: &str,
) -> Result<(), DataError> {
    for (idx, line) in lines.by_ref() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line.trim() == header {
            return Ok(());
        }
        return Err(DataError::Malformed {
            line: idx + 1,
            msg: format!("expected header `{header}`"),
        });
    }
    Err(DataError::Malformed { line: 1, msg: format!("missing header `{header}`") })
}

/// Reads scenes written by [`write_dataset`]; hidden labels stay `None`.
pub fn read_dataset(r: impl Read) -> Result<Vec<Example>, DataError> {
    let mut lines = BufReader::new(r).lines().enumerate();
    expect_header(&mut lines, DATASET_HEADER)?;
    let mut examples = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: String| DataError::Malformed { line: idx + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "scene" {
            return Err(malformed("expected `scene <label> <rows> <cols>`".into()));
        }
        let label: i64 =
            fields[1].parse().map_err(|_| malformed(format!("bad label `{}`", fields[1])))?;
        let rows: usize =
            fields[2].parse().map_err(|_| malformed(format!("bad row count `{}`", fields[2])))?;
        let cols: usize =
            fields[3].parse().map_err(|_| malformed(format!("bad col count `{}`", fields[3])))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (row_idx, row_line) = lines.next().ok_or(DataError::Malformed {
                line: idx + 1,
                msg: "scene is truncated".into(),
            })?;
            let row_line = row_line?;
            let values: Result<Vec<f64>, _> =
                row_line.split_whitespace().map(str::parse).collect();
            let values = values.map_err(|_| DataError::Malformed {
                line: row_idx + 1,
                msg: "invalid token value".into(),
            })?;
            if values.len() != cols {
                return Err(DataError::Malformed {
                    line: row_idx + 1,
                    msg: format!("row has {} values, expected {cols}", values.len()),
                });
            }
            data.extend(values);
        }
        examples.push(Example { tokens: Tensor::from_vec(rows, cols, data), label, hidden: None });
    }
    Ok(examples)
}

/// Reads a hidden-annotation sidecar written by [`write_hidden`].
pub fn read_hidden(r: impl Read) -> Result<Vec<Vec<u32>>, DataError> {
    let mut lines = BufReader::new(r).lines().enumerate();
    expect_header(&mut lines, HIDDEN_HEADER)?;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        if fields.next() != Some("scene") {
            return Err(DataError::Malformed {
                line: idx + 1,
                msg: "expected a `scene` record".into(),
            });
        }
        let classes: Result<Vec<u32>, _> = fields.map(str::parse).collect();
        records.push(classes.map_err(|_| DataError::Malformed {
            line: idx + 1,
            msg: "invalid class value".into(),
        })?);
    }
    Ok(records)
}

/// Joins a dataset with its sidecar.
pub fn attach_hidden(examples: &mut [Example], hidden: Vec<Vec<u32>>) -> Result<(), DataError> {
    if examples.len() != hidden.len() {
        return Err(DataError::Malformed {
            line: 0,
            msg: format!(
                "{} scenes but {} hidden records",
                examples.len(),
                hidden.len()
            ),
        });
    }
    for (example, classes) in examples.iter_mut().zip(hidden) {
        example.hidden = Some(classes);
    }
    Ok(())
}

pub fn save_dataset(
    data_path: impl AsRef<Path>,
    hidden_path: impl AsRef<Path>,
    examples: &[Example],
) -> Result<(), DataError> {
    let mut data = Vec::new();
    write_dataset(&mut data, examples)?;
    std::fs::write(data_path, data)?;
    let mut hidden = Vec::new();
    write_hidden(&mut hidden, examples)?;
    std::fs::write(hidden_path, hidden)?;
    Ok(())
}

pub fn load_dataset(
    data_path: impl AsRef<Path>,
    hidden_path: Option<&Path>,
) -> Result<Vec<Example>, DataError> {
    let mut examples = read_dataset(std::fs::File::open(data_path)?)?;
    if let Some(path) = hidden_path {
        let hidden = read_hidden(std::fs::File::open(path)?)?;
        attach_hidden(&mut examples, hidden)?;
    }
    Ok(examples)
}
