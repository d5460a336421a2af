use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::message::{Body, Message, PROTOCOL_VERSION};
use super::{Division, FederationConfig, Mode};
use crate::bfv::{Bfv, Ciphertext, PublicKey};
use crate::encoder::{encode_scalar, EncodingConfig, WeightManifest};
use crate::error::{Error, ProtocolError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerPhase {
    Collecting,
    Aggregated,
}

#[derive(Debug, Clone, Default)]
struct Submission {
    manifest: Option<WeightManifest>,
    payload: Option<Payload>,
}

#[derive(Debug, Clone)]
enum Payload {
    Cipher(Vec<Ciphertext>),
    Plain(Vec<f64>),
}

impl Submission {
    fn complete(&self) -> bool {
        self.manifest.is_some() && self.payload.is_some()
    }
}

/// Aggregation server.
///
/// Holds the public key and the scheme context, and nothing that can hold
/// a secret key. There is no constructor that accepts one:
///
/// ```compile_fail
/// use std::sync::Arc;
/// use hefl_core::bfv::{Bfv, SecurityLevel};
/// use hefl_core::protocol::{FederationConfig, ServerState};
/// use hefl_core::random::RandomSource;
///
/// let bfv = Arc::new(Bfv::with_level(SecurityLevel::Sec128));
/// let keys = bfv.keygen(&mut RandomSource::new(1));
/// let cfg = FederationConfig::default();
/// // A SecretKey is not a PublicKey.
/// let _ = ServerState::new(&cfg, Some((bfv, keys.secret)));
/// ```
#[derive(Debug, Clone)]
pub struct ServerState {
    expected: usize,
    round: u32,
    phase: ServerPhase,
    mode: Mode,
    division: Division,
    frac_bits: u32,
    crypto: Option<(Arc<Bfv>, PublicKey)>,
    received: BTreeMap<u32, Submission>,
}

impl ServerState {
    /// `crypto` must be present exactly when the federation is encrypted.
    pub fn new(cfg: &FederationConfig, crypto: Option<(Arc<Bfv>, PublicKey)>) -> Result<Self> {
        cfg.validate_with(true)?;
        match (cfg.mode, &crypto) {
            (Mode::Plain, None) => {}
            (Mode::Encrypted(level), Some((bfv, pk)))
                if bfv.level_id() == level.id() && pk.level_id() == level.id() => {}
            _ => {
                return Err(Error::ParamMismatch(
                    "server crypto does not match federation mode",
                ))
            }
        }
        Ok(ServerState {
            expected: cfg.clients,
            round: 0,
            phase: ServerPhase::Collecting,
            mode: cfg.mode,
            division: cfg.division,
            frac_bits: cfg.frac_bits,
            crypto,
            received: BTreeMap::new(),
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> ServerPhase {
        self.phase
    }

    pub fn expected(&self) -> usize {
        self.expected
    }

    pub fn public_key(&self) -> Option<&PublicKey> {
        self.crypto.as_ref().map(|(_, pk)| pk)
    }

    pub fn bfv(&self) -> Option<&Arc<Bfv>> {
        self.crypto.as_ref().map(|(b, _)| b)
    }

    /// Clients with both manifest and payload in.
    pub fn complete_count(&self) -> usize {
        self.received.values().filter(|s| s.complete()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.complete_count() == self.expected
    }

    /// Validates a handshake.
    pub fn hello(&self, msg: &Message) -> Result<u32> {
        match msg.body {
            Body::Hello { client_id, version } => {
                if version != PROTOCOL_VERSION {
                    return Err(ProtocolError::VersionMismatch {
                        ours: PROTOCOL_VERSION,
                        theirs: version,
                    }
                    .into());
                }
                if client_id as usize >= self.expected {
                    return Err(ProtocolError::UnknownClient.into());
                }
                Ok(client_id)
            }
            _ => Err(ProtocolError::UnexpectedMessage.into()),
        }
    }

    /// Records one client message for the current round.
    pub fn receive(&mut self, client_id: u32, msg: Message) -> Result<()> {
        if self.phase != ServerPhase::Collecting {
            return Err(ProtocolError::BadPhase.into());
        }
        if client_id as usize >= self.expected {
            return Err(ProtocolError::UnknownClient.into());
        }
        msg.expect_round(self.round)?;
        let sub = self.received.entry(client_id).or_default();
        match (msg.body, self.mode) {
            (Body::Manifest(m), _) => {
                if sub.manifest.is_some() {
                    return Err(ProtocolError::DuplicateSubmission.into());
                }
                sub.manifest = Some(m);
            }
            (Body::Chunks(cts), Mode::Encrypted(_)) => {
                if sub.payload.is_some() {
                    return Err(ProtocolError::DuplicateSubmission.into());
                }
                sub.payload = Some(Payload::Cipher(cts));
            }
            (Body::PlainChunks(v), Mode::Plain) => {
                if sub.payload.is_some() {
                    return Err(ProtocolError::DuplicateSubmission.into());
                }
                sub.payload = Some(Payload::Plain(v));
            }
            _ => return Err(ProtocolError::UnexpectedMessage.into()),
        }
        Ok(())
    }

    /// Encrypted FedAvg over the collected submissions. Fires only once
    /// all `c` clients are in; folds in ascending client id.
    pub fn aggregate(&mut self) -> Result<Message> {
        if self.phase != ServerPhase::Collecting {
            return Err(ProtocolError::BadPhase.into());
        }
        if !self.is_complete() {
            return Err(ProtocolError::IncompleteRound.into());
        }
        let subs: Vec<&Submission> = self.received.values().collect();
        let manifest = subs[0].manifest.as_ref().unwrap();
        if subs.iter().any(|s| s.manifest.as_ref() != Some(manifest)) {
            return Err(ProtocolError::ManifestDivergence.into());
        }
        let body = match &self.crypto {
            Some((bfv, _)) => {
                let cts: Vec<&Vec<Ciphertext>> = subs
                    .iter()
                    .map(|s| match &s.payload {
                        Some(Payload::Cipher(c)) => Ok(c),
                        _ => Err(Error::from(ProtocolError::UnexpectedMessage)),
                    })
                    .collect::<Result<_>>()?;
                let chunks = manifest.chunk_count();
                if cts.iter().any(|c| c.len() != chunks) {
                    return Err(ProtocolError::ManifestDivergence.into());
                }
                let inv_c = match self.division {
                    Division::Server => Some(inverse_count(bfv, self.frac_bits, self.expected)?),
                    Division::Client => None,
                };
                let mut out = Vec::with_capacity(chunks);
                for i in 0..chunks {
                    let mut acc = cts[0][i].clone();
                    for c in &cts[1..] {
                        acc = bfv.add(&acc, &c[i])?;
                    }
                    if let Some(p) = &inv_c {
                        acc = bfv.mul_plain(&acc, p)?;
                    }
                    out.push(acc);
                }
                Body::Aggregate(out)
            }
            None => {
                let vals: Vec<&Vec<f64>> = subs
                    .iter()
                    .map(|s| match &s.payload {
                        Some(Payload::Plain(v)) => Ok(v),
                        _ => Err(Error::from(ProtocolError::UnexpectedMessage)),
                    })
                    .collect::<Result<_>>()?;
                let len = manifest.total_len();
                if vals.iter().any(|v| v.len() != len) {
                    return Err(ProtocolError::ManifestDivergence.into());
                }
                Body::PlainChunks(plain_mean(&vals))
            }
        };
        self.phase = ServerPhase::Aggregated;
        Ok(Message::new(self.round, body))
    }

    /// Clears submissions and opens the next round.
    pub fn next_round(&mut self) -> Result<()> {
        if self.phase != ServerPhase::Aggregated {
            return Err(ProtocolError::BadPhase.into());
        }
        self.received.clear();
        self.round += 1;
        self.phase = ServerPhase::Collecting;
        Ok(())
    }

    /// Drops a round that cannot complete (straggler timeout).
    pub fn abort_round(&mut self) {
        self.received.clear();
        self.phase = ServerPhase::Collecting;
    }
}

/// Element-wise arithmetic mean, summed in the given order then divided.
pub(crate) fn plain_mean(vals: &[&Vec<f64>]) -> Vec<f64> {
    let c = vals.len() as f64;
    (0..vals[0].len())
        .map(|j| vals.iter().fold(0.0, |acc, v| acc + v[j]) / c)
        .collect()
}

/// Plaintext encoding `1/c` at scale exponent 1.
fn inverse_count(bfv: &Bfv, frac_bits: u32, c: usize) -> Result<crate::bfv::Plaintext> {
    let enc = EncodingConfig::new(frac_bits, bfv.plain_modulus(), bfv.degree(), 1.0, 1.0)?;
    encode_scalar(1.0 / c as f64, &enc)
}
