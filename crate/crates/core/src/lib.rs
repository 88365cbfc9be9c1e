//! Synthetic image detection toolkit.
//!
//! The crate covers the whole experimental loop for detecting generated
//! images under social-platform impairments:
//!
//! - [`dataset`]: class taxonomy (real, one class per seen generator, and a
//!   single unseen-fake class) and the tab-separated manifest format.
//! - [`impair`]: seeded crop → bilinear resize → JPEG chain, parallel and
//!   byte-reproducible.
//! - [`split`]: hybrid cross-validation (K-fold per class, group K-fold by
//!   generator for the unseen-fake class).
//! - [`model`]: a ConvNeXt-style detector with an optional filter-stride
//!   reduced stem and binary or multi-class head.
//! - [`train`]: label-smoothed cross-entropy, Adam with exponential decay,
//!   and the augmentation menu.
//! - [`eval`]: binary conversion, balanced accuracy, per-fold reports and the
//!   six-row ablation harness.
//! - [`forge`]: a procedural dataset whose pseudo-generators stamp faint
//!   periodic artifacts, for end-to-end runs on a laptop.
//! - [`cli`]: layered configuration and the `synthdetect` subcommands.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod forge;
pub mod impair;
pub mod model;
pub mod rng;
pub mod split;
pub mod train;

/// Tool version embedded in every artifact header.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
