use alloc::sync::Arc;
use alloc::vec::Vec;

use super::message::{Body, Message};
use super::{Division, FederationConfig, Mode};
use crate::bfv::{Bfv, KeyPair};
use crate::encoder::{decode_fractional, encode_fractional, WeightManifest};
use crate::error::{Error, ProtocolError, Result};
use crate::model::{train_local, Dataset, Mlp};
use crate::random::RandomSource;

/// Client phases: `Idle -> Trained -> Sent -> Updated -> Idle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Idle,
    Trained,
    Sent,
    Updated,
}

/// Key material and encryption randomness held by an encrypting client.
#[derive(Debug, Clone)]
pub struct ClientCrypto {
    pub bfv: Arc<Bfv>,
    pub keys: KeyPair,
    pub rng: RandomSource,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: u32,
    round: u32,
    phase: ClientPhase,
    model: Mlp,
    data: Dataset,
    crypto: Option<ClientCrypto>,
    manifest: Option<WeightManifest>,
}

impl ClientState {
    /// `crypto` must be present exactly when the federation is encrypted.
    pub fn new(id: u32, model: Mlp, data: Dataset, crypto: Option<ClientCrypto>) -> Self {
        ClientState {
            id,
            round: 0,
            phase: ClientPhase::Idle,
            model,
            data,
            crypto,
            manifest: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn require(&self, phase: ClientPhase) -> Result<()> {
        if self.phase != phase {
            return Err(ProtocolError::BadPhase.into());
        }
        Ok(())
    }

    fn check_mode(&self, cfg: &FederationConfig) -> Result<()> {
        match (cfg.mode, &self.crypto) {
            (Mode::Plain, None) => Ok(()),
            (Mode::Encrypted(level), Some(c)) if c.bfv.level_id() == level.id() => Ok(()),
            _ => Err(Error::ParamMismatch(
                "client crypto does not match federation mode",
            )),
        }
    }

    /// Local training on the client's shard: `Idle -> Trained`.
    pub fn train(&mut self, cfg: &FederationConfig) -> Result<()> {
        self.require(ClientPhase::Idle)?;
        let tc = cfg.train_config(self.round, self.id);
        self.model = train_local(&self.model, &self.data, &tc)?;
        self.phase = ClientPhase::Trained;
        Ok(())
    }

    /// Flattens, encodes and encrypts the trained weights: `Trained -> Sent`.
    /// Returns the `MANIFEST` and `CHUNKS` (or `PLAIN_CHUNKS`) messages.
    ///
    /// On an encoding error the phase stays `Trained`; callers report it
    /// with [`Message::error`].
    pub fn submit(&mut self, cfg: &FederationConfig) -> Result<Vec<Message>> {
        self.require(ClientPhase::Trained)?;
        self.check_mode(cfg)?;
        let (values, manifest) = self.model.flatten();
        let (manifest, payload) = match &mut self.crypto {
            None => (manifest, Body::PlainChunks(values)),
            Some(c) => {
                let enc = cfg.encoding(c.bfv.degree(), c.bfv.plain_modulus())?;
                let chunks = encode_fractional(&values, &enc)?
                    .iter()
                    .map(|p| c.bfv.encrypt(p, &c.keys.public, &mut c.rng))
                    .collect::<Result<Vec<_>>>()?;
                (manifest.with_slots(enc.slots()), Body::Chunks(chunks))
            }
        };
        self.manifest = Some(manifest.clone());
        self.phase = ClientPhase::Sent;
        Ok(alloc::vec![
            Message::new(self.round, Body::Manifest(manifest)),
            Message::new(self.round, payload),
        ])
    }

    /// Local training followed by [`ClientState::submit`].
    pub fn client_round(&mut self, cfg: &FederationConfig) -> Result<Vec<Message>> {
        self.train(cfg)?;
        self.submit(cfg)
    }

    /// Decrypts and loads the aggregate: `Sent -> Updated`. On any error
    /// the state is left unchanged.
    pub fn apply(&mut self, msg: &Message, cfg: &FederationConfig) -> Result<()> {
        self.require(ClientPhase::Sent)?;
        msg.expect_round(self.round)?;
        let manifest = self.manifest.as_ref().ok_or(ProtocolError::BadPhase)?;
        let count = manifest.total_len();
        let mut values = match (&msg.body, &self.crypto) {
            (Body::Aggregate(chunks), Some(c)) => {
                if chunks.len() != manifest.chunk_count() {
                    return Err(Error::Shape(alloc::format!(
                        "aggregate has {} chunks, manifest needs {}",
                        chunks.len(),
                        manifest.chunk_count()
                    )));
                }
                let enc = cfg.encoding(c.bfv.degree(), c.bfv.plain_modulus())?;
                let plain = chunks
                    .iter()
                    .map(|ct| c.bfv.decrypt(ct, &c.keys.secret))
                    .collect::<Result<Vec<_>>>()?;
                decode_fractional(&plain, count, &enc)?
            }
            (Body::PlainChunks(v), None) => {
                if v.len() != count {
                    return Err(Error::Shape(alloc::format!(
                        "aggregate has {} values, manifest needs {count}",
                        v.len()
                    )));
                }
                v.clone()
            }
            _ => return Err(ProtocolError::UnexpectedMessage.into()),
        };
        if self.crypto.is_some() && cfg.division == Division::Client {
            let c = cfg.clients as f64;
            values.iter_mut().for_each(|v| *v /= c);
        }
        self.model = self.model.load_weights(&values, manifest)?;
        self.phase = ClientPhase::Updated;
        Ok(())
    }

    /// `Updated -> Idle` and advance the round counter.
    pub fn finish_round(&mut self) -> Result<()> {
        self.require(ClientPhase::Updated)?;
        self.round += 1;
        self.phase = ClientPhase::Idle;
        self.manifest = None;
        Ok(())
    }
}
