//! In-process federation: `c` clients and one server in a single thread,
//! every message round-tripped through the wire codec.

use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use hefl_core::bfv::{Bfv, KeyPair, PublicKey, SecurityLevel};
use hefl_core::model::{compute_metrics, Dataset, MetricsReport, Mlp};
use hefl_core::protocol::{
    ClientCrypto, ClientState, FederationConfig, Message, Mode, ServerState,
};
use hefl_core::random::{hash_words, RandomSource};

use crate::data::{partition, partition_weighted};

pub const PHASES: [&str; 5] = ["train", "encrypt", "transfer", "aggregate", "decrypt"];

/// Wall-clock time per phase, summed over clients and rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub train: Duration,
    pub encrypt: Duration,
    pub transfer: Duration,
    pub aggregate: Duration,
    pub decrypt: Duration,
}

impl PhaseTimings {
    pub fn get(&self, phase: &str) -> Option<Duration> {
        Some(match phase {
            "train" => self.train,
            "encrypt" => self.encrypt,
            "transfer" => self.transfer,
            "aggregate" => self.aggregate,
            "decrypt" => self.decrypt,
            _ => return None,
        })
    }

    pub fn accumulate(&mut self, other: &PhaseTimings) {
        self.train += other.train;
        self.encrypt += other.encrypt;
        self.transfer += other.transfer;
        self.aggregate += other.aggregate;
        self.decrypt += other.decrypt;
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub clients: usize,
    pub mode: Mode,
    /// Test-set metrics of the global model after each round.
    pub per_round: Vec<MetricsReport>,
    pub metrics: MetricsReport,
    pub timings: PhaseTimings,
    /// Serialized bytes exchanged, both directions.
    pub bytes: usize,
    /// Final global model.
    pub model: Mlp,
}

/// Trusted dealer: one key pair for the whole federation, derived from
/// `crypto_seed`.
pub fn deal_keys(level: SecurityLevel, crypto_seed: u64) -> (Arc<Bfv>, KeyPair) {
    let bfv = Arc::new(Bfv::with_level(level));
    let keys = bfv.keygen(&mut RandomSource::with_stream(crypto_seed, 0));
    (bfv, keys)
}

/// Shards of `train`, one per client, following `cfg.partition`.
pub fn client_shards(cfg: &FederationConfig, train: &Dataset) -> Result<Vec<Dataset>> {
    let seed = hash_words(&[cfg.seed, 0x5a4d]);
    match &cfg.partition {
        Some(w) => partition_weighted(train, w, seed),
        None => partition(train, cfg.clients, seed),
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Builds the server with only the public half of the dealt keys.
fn make_server(cfg: &FederationConfig, dealt: Option<&(Arc<Bfv>, KeyPair)>) -> Result<ServerState> {
    let public: Option<(Arc<Bfv>, PublicKey)> =
        dealt.map(|(bfv, keys)| (bfv.clone(), keys.public.clone()));
    Ok(ServerState::new(cfg, public)?)
}

pub fn run_federation(
    cfg: &FederationConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<RunReport> {
    cfg.validate()?;
    let dealt = match cfg.mode {
        Mode::Plain => None,
        Mode::Encrypted(level) => Some(deal_keys(level, cfg.crypto_seed)),
    };
    let bfv = dealt.as_ref().map(|(b, _)| b.as_ref());
    let init = cfg.initial_model(train.width())?;
    let mut clients: Vec<ClientState> = client_shards(cfg, train)?
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let crypto = dealt.as_ref().map(|(b, keys)| ClientCrypto {
                bfv: b.clone(),
                keys: keys.clone(),
                rng: RandomSource::with_stream(cfg.crypto_seed, id as u64 + 1),
            });
            ClientState::new(id as u32, init.clone(), shard, crypto)
        })
        .collect();
    let mut server = make_server(cfg, dealt.as_ref())?;

    let mut t = PhaseTimings::default();
    let mut bytes = 0usize;
    let mut per_round = Vec::with_capacity(cfg.rounds as usize);
    for round in 0..cfg.rounds {
        for c in clients.iter_mut() {
            timed(&mut t.train, || c.train(cfg))?;
            let msgs = timed(&mut t.encrypt, || c.submit(cfg))?;
            for msg in msgs {
                let wire = timed(&mut t.transfer, || -> Result<Message> {
                    let b = msg.encode(bfv)?;
                    bytes += b.len();
                    Ok(Message::decode(&b, bfv)?)
                })?;
                server.receive(c.id(), wire)?;
            }
        }
        let agg = timed(&mut t.aggregate, || server.aggregate())
            .with_context(|| format!("aggregating round {round}"))?;
        let payload = timed(&mut t.transfer, || agg.encode(bfv))?;
        for c in clients.iter_mut() {
            let msg = timed(&mut t.transfer, || Message::decode(&payload, bfv))?;
            bytes += payload.len();
            timed(&mut t.decrypt, || c.apply(&msg, cfg))
                .with_context(|| format!("client {} applying round {round}", c.id()))?;
            c.finish_round()?;
        }
        server.next_round()?;
        per_round.push(evaluate(clients[0].model(), test)?);
    }
    let model = clients[0].model().clone();
    Ok(RunReport {
        clients: cfg.clients,
        mode: cfg.mode,
        metrics: *per_round.last().expect("at least one round"),
        per_round,
        timings: t,
        bytes,
        model,
    })
}

pub fn evaluate(model: &Mlp, test: &Dataset) -> Result<MetricsReport> {
    let pred = model.predict(test.features(), test.width())?;
    Ok(compute_metrics(&pred, test.labels())?)
}
