//! Federated rounds over `c` clients and one aggregation server.
//!
//! Each round: clients train locally, encrypt their flattened weights and
//! send `MANIFEST` + `CHUNKS`; once all `c` submissions are in, the server
//! sums chunk-wise and multiplies by an encoding of `1/c`, replying with
//! `AGGREGATE`; clients decrypt and load the averaged model.
//!
//! A trusted dealer hands every client the same [`KeyPair`] and the server
//! only the [`PublicKey`](crate::bfv::PublicKey).
//!
//! [`KeyPair`]: crate::bfv::KeyPair

mod client;
mod message;
mod server;

pub use client::{ClientCrypto, ClientPhase, ClientState};
pub use message::{encode_frame, Body, FrameReader, Message, MAX_FRAME_LEN, PROTOCOL_VERSION};
pub use server::{ServerPhase, ServerState};

use alloc::vec::Vec;

use crate::bfv::SecurityLevel;
use crate::encoder::EncodingConfig;
use crate::error::{Error, Result};
use crate::model::{Mlp, TrainConfig};
use crate::random::hash_words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Plain,
    Encrypted(SecurityLevel),
}

impl Mode {
    pub const ALL: [Mode; 3] = [
        Mode::Plain,
        Mode::Encrypted(SecurityLevel::Sec128),
        Mode::Encrypted(SecurityLevel::Sec192),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Plain => "PLAIN",
            Mode::Encrypted(l) => l.label(),
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_uppercase().as_str() {
            "PLAIN" => Some(Mode::Plain),
            "SEC128" | "128" => Some(Mode::Encrypted(SecurityLevel::Sec128)),
            "SEC192" | "192" => Some(Mode::Encrypted(SecurityLevel::Sec192)),
            _ => None,
        }
    }
}

/// Where the division by the client count happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Division {
    /// Server multiplies the encrypted sum by an encoding of `1/c`.
    Server,
    /// Server returns the sum; clients divide after decryption.
    Client,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: u32,
    pub mode: Mode,
    /// Drives model init, partitioning and training.
    pub seed: u64,
    /// Drives key generation and encryption randomness.
    pub crypto_seed: u64,
    pub frac_bits: u32,
    pub division: Division,
    /// Largest weight magnitude the encoder accepts.
    pub value_bound: f64,
    /// Hidden layer widths of the classifier.
    pub hidden: Vec<usize>,
    /// Per-round local training; `seed` is replaced per client and round.
    pub train: TrainConfig,
    /// Per-client dataset shares; `None` splits evenly.
    pub partition: Option<Vec<f64>>,
    pub timeout_ms: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 3,
            rounds: 5,
            mode: Mode::Encrypted(SecurityLevel::Sec128),
            seed: 0,
            crypto_seed: 1,
            frac_bits: 16,
            division: Division::Server,
            value_bound: 8.0,
            hidden: alloc::vec![16],
            train: TrainConfig::default(),
            partition: None,
            timeout_ms: 60_000,
        }
    }
}

impl FederationConfig {
    /// `c >= 2`; a single client is accepted only with `allow_single`.
    pub fn validate_with(&self, allow_single: bool) -> Result<()> {
        if self.clients == 0 || (self.clients == 1 && !allow_single) {
            return Err(Error::InvalidParams("client count must be at least 2"));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParams("rounds must be at least 1"));
        }
        if let Some(p) = &self.partition {
            if p.len() != self.clients || p.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
                return Err(Error::InvalidParams(
                    "partition needs one positive share per client",
                ));
            }
        }
        self.train.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(false)
    }

    /// Encoder settings for a ring with `slots` coefficients and plaintext
    /// modulus `t`, sized for this config's aggregation path.
    pub fn encoding(&self, slots: usize, t: u128) -> Result<EncodingConfig> {
        let headroom = match self.division {
            Division::Server => libm::ldexp(1.0, self.frac_bits as i32).max(self.clients as f64),
            Division::Client => self.clients as f64,
        };
        EncodingConfig::new(self.frac_bits, t, slots, self.value_bound, headroom)
    }

    /// Shared initial global model.
    pub fn initial_model(&self, input_width: usize) -> Result<Mlp> {
        let mut sizes = alloc::vec![input_width];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        Mlp::new(&sizes, hash_words(&[self.seed, 0x1417]))
    }

    /// Training settings for one client in one round.
    pub fn train_config(&self, round: u32, client_id: u32) -> TrainConfig {
        TrainConfig {
            seed: hash_words(&[self.seed, 0x7a11, round as u64, client_id as u64]),
            ..self.train
        }
    }
}
