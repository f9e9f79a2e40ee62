//! Differentiable probabilistic-logic engine with an object-centric
//! perception stack.
//!
//! The crate is organized bottom-up:
//!
//! - [`logic`] — a ProbLog-style language: probabilistic facts bound to
//!   external parameters, categorical groups, stratified negation, and
//!   arithmetic builtins.
//! - [`ground`] — backward-chaining grounder that reduces a program and a
//!   query pattern to an acyclic ground program over probabilistic facts.
//! - [`circuit`] — exact inference. Ground programs compile to ordered
//!   decision diagrams whose weighted path sums give query probabilities
//!   and exact gradients with respect to fact parameters.
//! - [`tensor`] — a small tape-based reverse-mode autodiff over dense f64
//!   tensors, plus the AdamW update rule.
//! - [`perception`] — token encoder, slot attention, objectness and class
//!   heads, and a mixture decoder, built on the tape.
//! - [`train`] — synthetic token-scene datasets with distant supervision,
//!   the composite loss that stitches circuit gradients into the tape, the
//!   training loop, and evaluation metrics.
//! - [`pipeline`] — thin composition functions shared by the command-line
//!   interface and the test suites.

pub mod circuit;
pub mod ground;
pub mod logic;
pub mod pipeline;
pub mod programs;
pub mod perception;
pub mod rng;
pub mod tensor;
pub mod train;
