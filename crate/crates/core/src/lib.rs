//! Core of a desk-scale temporal-contrastive language-audio trainer.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std` (only `alloc`). File formats, the training driver and the
//! command line live in the companion `tclap` crate.
//!
//! Module map:
//!
//! - [`corpus`]: synthetic event catalog, clip composition, the caption
//!   grammar and temporal negation.
//! - [`tensor`]: dense matrices with a reverse-mode gradient tape and a
//!   finite-difference checker.
//! - [`encoders`]: order-sensitive text and audio towers projecting into a
//!   shared embedding space.
//! - [`losses`]: cosine similarity matrix, symmetric contrastive loss, the
//!   temporal two-way loss and their weighted combination.
//! - [`trainer`]: batch composition, warm-up schedule, Adam and the
//!   single-step training state machine.
//! - [`eval`]: recall@k, T-Classify in both directions and zero-shot
//!   classification.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod encoders;
mod error;
pub mod eval;
pub mod losses;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
