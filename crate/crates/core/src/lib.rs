//! Allocation-only core of the embedding distillation lab.
//!
//! Everything in this crate is pure computation over owned buffers: dense
//! tensors with a reverse-mode tape, the word-level tokenizer and student
//! encoder, distillation losses and the AdamW training loop, passage
//! deduplication and splitting, simulated teachers, and exact-search
//! retrieval metrics. File formats, HTTP clients and the CLI live in the
//! `embsteal` companion crate.

#![no_std]
// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod record;
pub mod retrieval;
pub mod rng;
pub mod tape;
pub mod teacher;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
pub use record::{Kind, TextRecord};
pub use tensor::Tensor;
