//! Bespoke MLP circuit co-design toolkit.
//!
//! This crate implements the full flow from a labelled CSV dataset to a
//! combinational Verilog netlist of a multilayer perceptron classifier in
//! which every weight is hardwired into the logic:
//!
//! 1. [`dataio`]: CSV ingestion, label mapping, min/max normalization,
//!    stratified train/test splitting and k-fold cross validation.
//! 2. [`model`]: a small hand-rolled float MLP (one hidden layer, ReLU,
//!    softmax cross-entropy with optional L1) plus a hardware-aware
//!    architecture search over training hyperparameters.
//! 3. [`quant`]: fixed-point formats, stochastic/nearest/truncating
//!    rounding, the saturating `QRelu` activation, whole-model
//!    quantization and quantization-aware retraining.
//! 4. [`compress`]: magnitude pruning and per-input k-means weight
//!    sharing, both of which shrink the set of distinct multipliers.
//! 5. [`hwcost`]: gate-level area estimation for bespoke arithmetic
//!    (CSD shift-add multipliers, adder trees, QRelu gates), a fitted
//!    accumulator regression, critical-path delay and minimum-voltage
//!    selection.
//! 6. [`optsearch`]: NSGA-II search over quantization formats and
//!    sparsity, plus a weight-sharing sweep, producing an
//!    accuracy/area Pareto front.
//! 7. [`codegen`]: netlist planning, a bit-exact plan interpreter,
//!    Verilog emission and golden test vectors.
//! 8. [`fixtures`]: synthetic datasets and a tiny hand-built quantized
//!    network with known costs, used by tests and examples.
//!
//! The examples directory is the best starting point; each example is a
//! runnable walkthrough of one stage:
//!
//! ```text
//! cargo run --example train_and_evaluate
//! cargo run --example architecture_search
//! cargo run --example fixed_point_inference
//! cargo run --example prune_and_share
//! cargo run --example area_estimation
//! cargo run --example pareto_search
//! cargo run --example emit_verilog
//! cargo run --example full_pipeline
//! ```
//!
//! A thin CLI (`bespoke-mlp`) wraps the same library calls for scripted
//! use; see [`cli`] and the README.
//!
//! All randomized stages take explicit `u64` seeds and use a counter-based
//! generator, so every artifact (JSON reports, Verilog, golden vectors) is
//! byte-reproducible for a given seed and input.

pub mod cli;
pub mod codegen;
pub mod compress;
pub mod dataio;
mod error;
pub mod fixtures;
pub mod hwcost;
pub mod model;
pub mod optsearch;
pub mod quant;
mod seeds;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
