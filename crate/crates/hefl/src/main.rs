use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hefl::config::RunConfig;
use hefl::data::{generate_dataset, read_csv, write_csv};
use hefl::federation::{client_shards, deal_keys, evaluate};
use hefl::harness::{run_grid, write_artifacts};
use hefl::keys::{read_key_pair, read_public_key, write_keys, PUBLIC_KEY_FILE};
use hefl::transport::{run_client, serve};
use hefl_core::bfv::Bfv;
use hefl_core::protocol::{ClientCrypto, ClientState, Mode};
use hefl_core::random::RandomSource;

#[derive(Parser)]
#[command(name = "hefl", version, about = "Encrypted federated averaging")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the client-count by mode grid and write CSV results.
    RunGrid {
        #[arg(long, short, default_value = "results")]
        out: PathBuf,
        /// Overrides the grid base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run cells concurrently (timings become non-comparable).
        #[arg(long)]
        parallel: bool,
    },
    /// Write the synthetic train/test split and per-client shards as CSV.
    GenData {
        #[arg(long, short, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the federation key pair (trusted dealer).
    Keygen {
        #[arg(long, short, default_value = "keys")]
        out: PathBuf,
        /// Overrides the configured crypto seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregation server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Directory holding the public key (encrypted modes).
        #[arg(long, default_value = "keys")]
        keys: PathBuf,
    },
    /// One federation client.
    Client {
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        id: u32,
        /// CSV shard with feature columns and a trailing label.
        #[arg(long)]
        data: PathBuf,
        /// Model and training seed; must match across clients.
        #[arg(long)]
        seed: Option<u64>,
        /// Secret key file (encrypted modes).
        #[arg(long, default_value = "keys/secret.key")]
        key: PathBuf,
        /// Optional held-out CSV to report metrics on at the end.
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::RunGrid {
            out,
            seed,
            parallel,
        } => {
            if let Some(s) = seed {
                cfg.grid.base_seed = s;
            }
            cfg.grid.parallel |= parallel;
            let report = run_grid(&cfg.grid, &cfg.federation, &cfg.data)?;
            write_artifacts(&report, &cfg.federation, &cfg.data, &out)?;
            for cell in &report.cells {
                if let Some(m) = cell.mean_metrics() {
                    println!(
                        "clients {} {:>6}: accuracy {:.4} f1 {:.4} aggregate {:.6}s",
                        cell.clients,
                        cell.mode.label(),
                        m.accuracy,
                        m.f1,
                        cell.mean_seconds("aggregate").unwrap_or(f64::NAN)
                    );
                }
                for (rep, e) in &cell.failures {
                    println!(
                        "clients {} {:>6}: repetition {rep} failed: {e}",
                        cell.clients,
                        cell.mode.label()
                    );
                }
            }
            println!("wrote results to {}", out.display());
        }
        Command::GenData { out, seed } => {
            let seed = seed.unwrap_or(cfg.federation.seed);
            let (train, test) = generate_dataset(&cfg.data, seed)?;
            std::fs::create_dir_all(&out)?;
            write_csv(&train, &out.join("train.csv"))?;
            write_csv(&test, &out.join("test.csv"))?;
            for (i, shard) in client_shards(&cfg.federation, &train)?.iter().enumerate() {
                write_csv(shard, &out.join(format!("shard-{i}.csv")))?;
            }
            println!(
                "wrote {} train and {} test rows to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
        Command::Keygen { out, seed } => {
            let Mode::Encrypted(level) = cfg.federation.mode else {
                bail!("plain mode needs no keys");
            };
            let (bfv, keys) = deal_keys(level, seed.unwrap_or(cfg.federation.crypto_seed));
            let (p, s) = write_keys(&bfv, &keys, &out)?;
            println!(
                "public key {} (server), secret key {} (clients)",
                p.display(),
                s.display()
            );
        }
        Command::Serve { listen, keys } => {
            let crypto = match cfg.federation.mode {
                Mode::Plain => None,
                Mode::Encrypted(level) => {
                    let bfv = Arc::new(Bfv::with_level(level));
                    let pk = read_public_key(&bfv, &keys.join(PUBLIC_KEY_FILE))?;
                    Some((bfv, pk))
                }
            };
            let listener =
                TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            log::info!("waiting for {} clients on {listen}", cfg.federation.clients);
            let summary = serve(&listener, &cfg.federation, crypto)?;
            println!(
                "completed {} rounds, sent {} bytes",
                summary.rounds, summary.bytes_sent
            );
        }
        Command::Client {
            server,
            id,
            data,
            seed,
            key,
            test,
        } => {
            if let Some(s) = seed {
                cfg.federation.seed = s;
            }
            let f = &cfg.federation;
            let shard = read_csv(&data)?;
            let crypto = match f.mode {
                Mode::Plain => None,
                Mode::Encrypted(level) => {
                    let bfv = Arc::new(Bfv::with_level(level));
                    let keys = read_key_pair(&bfv, &key)?;
                    Some(ClientCrypto {
                        bfv,
                        keys,
                        rng: RandomSource::with_stream(f.crypto_seed, id as u64 + 1),
                    })
                }
            };
            let bfv = crypto.as_ref().map(|c| c.bfv.clone());
            let state = ClientState::new(id, f.initial_model(shard.width())?, shard, crypto);
            let state = run_client(server.as_str(), state, f, bfv.as_deref())?;
            println!("client {id} finished {} rounds", state.round());
            if let Some(path) = test {
                let m = evaluate(state.model(), &read_csv(&path)?)?;
                println!(
                    "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                    m.accuracy, m.precision, m.recall, m.f1
                );
            }
        }
    }
    Ok(())
}
