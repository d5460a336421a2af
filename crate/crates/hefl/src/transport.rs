//! Blocking TCP transport: one connection per client, length-prefixed
//! frames carrying the same message encoding as the in-process runner.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use hefl_core::bfv::{Bfv, PublicKey};
use hefl_core::protocol::{
    encode_frame, Body, ClientState, FederationConfig, Message, ServerState, MAX_FRAME_LEN,
};
use hefl_core::{Error as CoreError, ProtocolError};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(usize),
    #[error("round {round} timed out with {have} of {want} submissions")]
    Timeout {
        round: u32,
        have: usize,
        want: usize,
    },
    #[error("client {0} disconnected")]
    Disconnected(u32),
    #[error("every client connection closed")]
    AllDisconnected,
    #[error("peer reported error {code}: {text}")]
    Peer { code: u16, text: String },
}

pub type Result<T> = std::result::Result<T, TransportError>;

pub fn write_message(w: &mut impl Write, msg: &Message, bfv: Option<&Bfv>) -> Result<usize> {
    let frame = encode_frame(&msg.encode(bfv)?)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len())
}

pub fn read_message(r: &mut impl Read, bfv: Option<&Bfv>) -> Result<Message> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(TransportError::Oversized(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Message::decode(&payload, bfv)?)
}

fn timeout(cfg: &FederationConfig) -> Duration {
    Duration::from_millis(cfg.timeout_ms.max(1))
}

/// Result of a completed serve loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeSummary {
    pub rounds: u32,
    pub bytes_sent: usize,
}

type Inbox = mpsc::Receiver<(u32, Result<Message>)>;

/// Accepts `cfg.clients` connections and runs `cfg.rounds` rounds. The
/// server side never sees more than the public key.
pub fn serve(
    listener: &TcpListener,
    cfg: &FederationConfig,
    crypto: Option<(Arc<Bfv>, PublicKey)>,
) -> Result<ServeSummary> {
    let bfv = crypto.as_ref().map(|(b, _)| b.clone());
    let mut server = ServerState::new(cfg, crypto)?;
    let (tx, inbox) = mpsc::channel();
    let mut writers: BTreeMap<u32, TcpStream> = BTreeMap::new();

    while writers.len() < cfg.clients {
        let (mut stream, peer) = listener.accept()?;
        stream.set_read_timeout(Some(timeout(cfg)))?;
        let hello = read_message(&mut stream, bfv.as_deref()).and_then(|m| {
            let id = server.hello(&m)?;
            if writers.contains_key(&id) {
                return Err(CoreError::from(ProtocolError::DuplicateSubmission).into());
            }
            Ok(id)
        });
        let id = match hello {
            Ok(id) => id,
            Err(e) => {
                log::warn!("rejecting {peer}: {e}");
                if let TransportError::Core(ce) = &e {
                    let _ = write_message(&mut stream, &Message::error(0, ce), None);
                }
                continue;
            }
        };
        log::info!("client {id} connected from {peer}");
        stream.set_read_timeout(None)?;
        let mut reader = stream.try_clone()?;
        let tx = tx.clone();
        let b = bfv.clone();
        thread::spawn(move || loop {
            let msg = read_message(&mut reader, b.as_deref());
            let stop = msg.is_err();
            if tx.send((id, msg)).is_err() || stop {
                break;
            }
        });
        writers.insert(id, stream);
    }
    drop(tx);

    let mut bytes_sent = 0;
    for round in 0..cfg.rounds {
        collect_round(&mut server, &inbox, &mut writers, cfg, round)?;
        let agg = server.aggregate()?;
        for w in writers.values_mut() {
            bytes_sent += write_message(w, &agg, bfv.as_deref())?;
        }
        log::info!("round {round} aggregated");
        server.next_round()?;
    }
    Ok(ServeSummary {
        rounds: cfg.rounds,
        bytes_sent,
    })
}

fn broadcast_error(writers: &mut BTreeMap<u32, TcpStream>, round: u32, e: &CoreError) {
    for w in writers.values_mut() {
        let _ = write_message(w, &Message::error(round, e), None);
    }
}

/// Waits for every submission of `round` or the timeout, whichever first.
fn collect_round(
    server: &mut ServerState,
    inbox: &Inbox,
    writers: &mut BTreeMap<u32, TcpStream>,
    cfg: &FederationConfig,
    round: u32,
) -> Result<()> {
    let deadline = Instant::now() + timeout(cfg);
    while !server.is_complete() {
        let left = deadline.saturating_duration_since(Instant::now());
        let (id, msg) = match inbox.recv_timeout(left) {
            Ok(item) => item,
            Err(RecvTimeoutError::Timeout) => {
                let have = server.complete_count();
                server.abort_round();
                broadcast_error(writers, round, &ProtocolError::IncompleteRound.into());
                return Err(TransportError::Timeout {
                    round,
                    have,
                    want: cfg.clients,
                });
            }
            Err(RecvTimeoutError::Disconnected) => return Err(TransportError::AllDisconnected),
        };
        let msg = match msg {
            Ok(m) => m,
            Err(e) => {
                log::warn!("client {id}: {e}");
                server.abort_round();
                broadcast_error(writers, round, &ProtocolError::IncompleteRound.into());
                return Err(TransportError::Disconnected(id));
            }
        };
        if let Body::Error { code, text } = msg.body {
            server.abort_round();
            broadcast_error(writers, round, &ProtocolError::IncompleteRound.into());
            return Err(TransportError::Peer { code, text });
        }
        if let Err(e) = server.receive(id, msg) {
            // stale or duplicate traffic is refused but does not end the round
            log::warn!("client {id}: {e}");
            if let Some(w) = writers.get_mut(&id) {
                let _ = write_message(w, &Message::error(round, &e), None);
            }
        }
    }
    Ok(())
}

/// Connects to the server and runs all rounds for one client.
pub fn run_client(
    addr: impl ToSocketAddrs,
    mut state: ClientState,
    cfg: &FederationConfig,
    bfv: Option<&Bfv>,
) -> Result<ClientState> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(timeout(cfg)))?;
    write_message(&mut stream, &Message::hello(state.id()), bfv)?;
    for _ in 0..cfg.rounds {
        let round = state.round();
        match state.client_round(cfg) {
            Ok(msgs) => {
                for m in &msgs {
                    write_message(&mut stream, m, bfv)?;
                }
            }
            Err(e) => {
                let _ = write_message(&mut stream, &Message::error(round, &e), bfv);
                return Err(e.into());
            }
        }
        loop {
            let reply = read_message(&mut stream, bfv)?;
            match reply.body {
                Body::Error { code, text } if reply.round == round => {
                    return Err(TransportError::Peer { code, text });
                }
                Body::Error { .. } => log::warn!("ignoring error for round {}", reply.round),
                _ => {
                    state.apply(&reply, cfg)?;
                    state.finish_round()?;
                    break;
                }
            }
        }
        log::info!("client {} finished round {round}", state.id());
    }
    Ok(state)
}
