//! The neural half of the model: a per-token encoder, a simplified slot
//! attention extractor, objectness and class heads whose outputs become
//! circuit parameters, and a mixture-of-Gaussians token decoder.
//!
//! All forward passes are recorded on a [`Tape`], so the training loop can
//! combine tape gradients with externally injected circuit gradients.
//!
//! Slot computations are strictly row-wise and the only cross-slot
//! reductions (attention softmax, decoder log-sum-exp) sum in sorted order,
//! so permuting the learned slot-init rows permutes slots, betas, and class
//! rows bit-exactly.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::tensor::{NodeId, Tape, Tensor};

mod checkpoint;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};

/// Static shape of the perception stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Tokens per scene (T).
    pub tokens: usize,
    /// Features per token (D).
    pub token_dim: usize,
    /// Width of the encoded latent tokens.
    pub latent_dim: usize,
    /// Width of each slot vector.
    pub slot_dim: usize,
    /// Slot capacity (N): an upper bound, not an object count.
    pub slots: usize,
    /// Number of object classes (K).
    pub classes: usize,
    /// Hidden width of every MLP.
    pub hidden_dim: usize,
    /// Slot attention refinement iterations.
    pub attention_iterations: usize,
    /// Width of the learned decoder position embeddings.
    pub position_dim: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            tokens: 12,
            token_dim: 16,
            latent_dim: 32,
            slot_dim: 32,
            slots: 3,
            classes: 5,
            hidden_dim: 64,
            attention_iterations: 2,
            position_dim: 8,
        }
    }
}

impl PerceptionConfig {
    /// Names and shapes of every tensor the stack expects.
    pub fn parameter_shapes(&self) -> Vec<(String, usize, usize)> {
        let (d, dz, ds, n, k, h, t, p) = (
            self.token_dim,
            self.latent_dim,
            self.slot_dim,
            self.slots,
            self.classes,
            self.hidden_dim,
            self.tokens,
            self.position_dim,
        );
        vec![
            ("enc/w1".into(), d, h),
            ("enc/b1".into(), 1, h),
            ("enc/w2".into(), h, dz),
            ("enc/b2".into(), 1, dz),
            ("attn/init".into(), n, ds),
            ("attn/wq".into(), ds, ds),
            ("attn/wk".into(), dz, ds),
            ("attn/wv".into(), dz, ds),
            ("attn/mlp_w1".into(), ds, h),
            ("attn/mlp_b1".into(), 1, h),
            ("attn/mlp_w2".into(), h, ds),
            ("attn/mlp_b2".into(), 1, ds),
            ("beta/w1".into(), ds, h),
            ("beta/b1".into(), 1, h),
            ("beta/w2".into(), h, 1),
            ("beta/b2".into(), 1, 1),
            ("class/w1".into(), ds, h),
            ("class/b1".into(), 1, h),
            ("class/w2".into(), h, k),
            ("class/b2".into(), 1, k),
            ("dec/pos".into(), t, p),
            ("dec/x_w1".into(), ds + p, h),
            ("dec/x_b1".into(), 1, h),
            ("dec/x_w2".into(), h, d),
            ("dec/x_b2".into(), 1, d),
            ("dec/w_w1".into(), ds + p, h),
            ("dec/w_b1".into(), 1, h),
            ("dec/w_w2".into(), h, 1),
            ("dec/w_b2".into(), 1, 1),
        ]
    }

    /// Checks a parameter map against the expected names and shapes.
    pub fn validate_params(&self, params: &BTreeMap<String, Tensor>) -> Result<(), String> {
        for (name, rows, cols) in self.parameter_shapes() {
            match params.get(&name) {
                None => return Err(format!("missing parameter tensor `{name}`")),
                Some(t) if (t.rows(), t.cols()) != (rows, cols) => {
                    return Err(format!(
                        "parameter `{name}` has shape {}x{}, expected {rows}x{cols}",
                        t.rows(),
                        t.cols()
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Heads whose final layer starts at zero, so betas begin at 1/2 and class
/// rows begin uniform.
const ZERO_INIT: [&str; 4] = ["beta/w2", "beta/b2", "class/w2", "class/b2"];

/// Fresh parameters: uniform Xavier weights, zero biases, and zeroed final
/// prediction layers.
pub fn init_params(config: &PerceptionConfig, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let mut params = BTreeMap::new();
    for (name, rows, cols) in config.parameter_shapes() {
        let tensor = if ZERO_INIT.contains(&name.as_str()) || name.ends_with("b1") || name.ends_with("b2") {
            Tensor::zeros(rows, cols)
        } else {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };
        params.insert(name, tensor);
    }
    params
}

/// Slot-init rows for an evaluation capacity that may exceed the trained
/// one. Extra rows tile the learned rows with a deterministic offset;
/// exact copies would share every query and stay locked onto the same
/// object through all attention rounds, so the offset has to be large
/// enough for the cross-slot softmax to separate them.
pub const TILE_JITTER: f64 = 0.5;

pub fn extended_slot_init(init: &Tensor, capacity: usize) -> Tensor {
    let (n, d) = (init.rows(), init.cols());
    Tensor::from_fn(capacity, d, |r, c| {
        let base = init.get(r % n, c);
        if r < n {
            base
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5107 + (r * d + c) as u64);
            base + rng.random_range(-TILE_JITTER..TILE_JITTER)
        }
    })
}

/// Tape handles for one scene's perception pass.
#[derive(Debug, Clone, Copy)]
pub struct Perceived {
    /// Input tokens, T x D.
    pub x: NodeId,
    /// Encoded latent tokens, T x latent_dim.
    pub latent: NodeId,
    /// Slot vectors, N x slot_dim.
    pub slots: NodeId,
    /// Objectness probabilities, N x 1.
    pub betas: NodeId,
    /// Beta-gated slots, N x slot_dim.
    pub gated: NodeId,
    /// Class distributions, N x K.
    pub class_dists: NodeId,
    /// Scalar activation prior, -1/2 * sum(latent^2).
    pub prior_logp: NodeId,
}

/// Tape handles for one scene's decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct Reconstruction {
    /// Component means, (N*T) x D in slot-major row order.
    pub means: NodeId,
    /// Mixture logits over slots, N x T.
    pub mix_logits: NodeId,
    /// Scalar mixture log-likelihood of the scene.
    pub loglik: NodeId,
}

fn mlp(
    tape: &mut Tape,
    leaves: &BTreeMap<String, NodeId>,
    prefix: &str,
    input: NodeId,
) -> NodeId {
    let pre1 = tape.matmul(input, leaves[&format!("{prefix}w1")]);
    let act1 = tape.add_bias(pre1, leaves[&format!("{prefix}b1")]);
    let hidden = tape.relu(act1);
    let pre2 = tape.matmul(hidden, leaves[&format!("{prefix}w2")]);
    tape.add_bias(pre2, leaves[&format!("{prefix}b2")])
}

/// Runs encoder, slot attention, and both heads for one scene. The slot
/// capacity is the row count of the `attn/init` leaf.
pub fn perceive(
    tape: &mut Tape,
    leaves: &BTreeMap<String, NodeId>,
    config: &PerceptionConfig,
    x: &Tensor,
) -> Perceived {
    assert_eq!(x.cols(), config.token_dim, "token width mismatch");
    let x = tape.leaf(x.clone());

    let latent = mlp(tape, leaves, "enc/", x);
    let prior_sq = tape.l2_norm_sq(latent);
    let prior_logp = tape.scale(prior_sq, -0.5);

    let keys = tape.matmul(latent, leaves["attn/wk"]);
    let values = tape.matmul(latent, leaves["attn/wv"]);
    let temperature = 1.0 / (config.slot_dim as f64).sqrt();

    let mut slots = leaves["attn/init"];
    for _ in 0..config.attention_iterations {
        let queries = tape.matmul(slots, leaves["attn/wq"]);
        let raw_logits = tape.matmul_nt(queries, keys);
        let logits = tape.scale(raw_logits, temperature);
        let attention = tape.softmax_axis0(logits);
        let slot_totals = tape.sum_axis1(attention);
        let safe_totals = tape.add_scalar(slot_totals, 1e-8);
        let weights = tape.div_cols(attention, safe_totals);
        let updates = tape.matmul(weights, values);
        let refined = mlp(tape, leaves, "attn/mlp_", updates);
        slots = tape.add(slots, refined);
    }

    let beta_logits = mlp(tape, leaves, "beta/", slots);
    let betas = tape.sigmoid(beta_logits);
    let gated = tape.mul_cols(slots, betas);
    let class_logits = mlp(tape, leaves, "class/", gated);
    let class_dists = tape.softmax_axis1(class_logits);

    Perceived { x, latent, slots, betas, gated, class_dists, prior_logp }
}

/// Decodes beta-gated slots back to token space and scores the scene under
/// the slot mixture with unit covariance.
pub fn reconstruct(
    tape: &mut Tape,
    leaves: &BTreeMap<String, NodeId>,
    config: &PerceptionConfig,
    perceived: &Perceived,
) -> Reconstruction {
    let (t, d) = (config.tokens, config.token_dim);
    let capacity = tape.value(perceived.gated).rows();
    assert_eq!(
        tape.value(perceived.x).rows(),
        t,
        "decoder position embeddings cover exactly the configured token count"
    );

    let slot_rows = tape.repeat_rows(perceived.gated, t);
    let position_rows = tape.tile_rows(leaves["dec/pos"], capacity);
    let decoder_in = tape.concat_cols(slot_rows, position_rows);
    let means = mlp(tape, leaves, "dec/x_", decoder_in);
    let logit_col = mlp(tape, leaves, "dec/w_", decoder_in);
    let mix_logits = tape.reshape(logit_col, capacity, t);

    let x_rows = tape.tile_rows(perceived.x, capacity);
    let diff = tape.sub(means, x_rows);
    let squared = tape.mul(diff, diff);
    let residual_col = tape.sum_axis1(squared);
    let residual = tape.reshape(residual_col, capacity, t);
    let quadratic = tape.scale(residual, -0.5);

    let log_denom = tape.logsumexp_axis0(mix_logits);
    let log_weights = tape.sub_row(mix_logits, log_denom);
    let scores = tape.add(log_weights, quadratic);
    let per_token = tape.logsumexp_axis0(scores);
    let total = tape.sum_all(per_token);
    let constant = -(t as f64) * (d as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln();
    let loglik = tape.add_scalar(total, constant);

    Reconstruction { means, mix_logits, loglik }
}
