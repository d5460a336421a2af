//! Core of an encrypted federated averaging engine.
//!
//! Clients train a small classifier, encrypt their weights under a
//! BFV-style somewhat homomorphic scheme, and a server averages the
//! ciphertexts without decrypting. This crate is `no_std` (with `alloc`)
//! and contains everything that does not touch IO or a clock:
//!
//! - [`ring`]: exact arithmetic in `Z_q[x]/(x^n + 1)` with NTT and samplers
//! - [`bfv`]: keys, encryption, homomorphic add / plaintext multiply
//! - [`encoder`]: fixed-point packing of real vectors into plaintexts
//! - [`model`]: MLP with SGD and classification metrics
//! - [`protocol`]: client/server round state machines and the wire format
#![no_std]

extern crate alloc;

pub mod arith;
pub mod bfv;
pub mod encoder;
pub mod error;
pub mod model;
pub mod protocol;
pub mod random;
pub mod ring;

pub use error::{Error, ProtocolError, Result};
