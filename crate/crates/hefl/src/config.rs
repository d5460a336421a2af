//! TOML run configuration.
//!
//! Every key is optional; missing keys take the library defaults.
//!
//! ```toml
//! clients = 3
//! rounds = 5
//! mode = "sec128"          # plain | sec128 | sec192
//! division = "server"      # server | client
//! partition = [0.5, 0.25, 0.25]
//!
//! [train]
//! learning_rate = 0.1
//!
//! [data]
//! feature_dim = 8
//!
//! [grid]
//! client_counts = [2, 3, 5, 7]
//! ```

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hefl_core::model::TrainConfig;
use hefl_core::protocol::{Division, FederationConfig, Mode};
use serde::Deserialize;

use crate::data::SyntheticSpec;
use crate::harness::ExperimentGrid;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    clients: Option<usize>,
    rounds: Option<u32>,
    mode: Option<String>,
    seed: Option<u64>,
    crypto_seed: Option<u64>,
    frac_bits: Option<u32>,
    division: Option<String>,
    value_bound: Option<f64>,
    hidden: Option<Vec<usize>>,
    partition: Option<Vec<f64>>,
    timeout_ms: Option<u64>,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    grid: RawGrid,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    feature_dim: Option<usize>,
    separation: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    client_counts: Option<Vec<usize>>,
    modes: Option<Vec<String>>,
    repetitions: Option<usize>,
    base_seed: Option<u64>,
    parallel: Option<bool>,
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub data: SyntheticSpec,
    pub grid: ExperimentGrid,
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    Mode::parse(s).ok_or_else(|| anyhow!("unknown mode `{s}` (expected plain, sec128 or sec192)"))
}

pub fn parse_division(s: &str) -> Result<Division> {
    match s.to_ascii_lowercase().as_str() {
        "server" => Ok(Division::Server),
        "client" => Ok(Division::Client),
        _ => bail!("unknown division `{s}` (expected server or client)"),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut cfg = RunConfig::default();
        let f = &mut cfg.federation;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(f.clients, raw.clients);
        set!(f.rounds, raw.rounds);
        set!(f.seed, raw.seed);
        set!(f.crypto_seed, raw.crypto_seed);
        set!(f.frac_bits, raw.frac_bits);
        set!(f.value_bound, raw.value_bound);
        set!(f.hidden, raw.hidden);
        set!(f.timeout_ms, raw.timeout_ms);
        f.partition = raw.partition;
        if let Some(m) = raw.mode {
            f.mode = parse_mode(&m)?;
        }
        if let Some(d) = raw.division {
            f.division = parse_division(&d)?;
        }
        let t: &mut TrainConfig = &mut f.train;
        set!(t.learning_rate, raw.train.learning_rate);
        set!(t.epochs, raw.train.epochs);
        set!(t.batch_size, raw.train.batch_size);

        let d = &mut cfg.data;
        set!(d.train_per_class, raw.data.train_per_class);
        set!(d.test_per_class, raw.data.test_per_class);
        set!(d.feature_dim, raw.data.feature_dim);
        set!(d.separation, raw.data.separation);

        let g = &mut cfg.grid;
        set!(g.client_counts, raw.grid.client_counts);
        set!(g.repetitions, raw.grid.repetitions);
        set!(g.base_seed, raw.grid.base_seed);
        set!(g.parallel, raw.grid.parallel);
        if let Some(modes) = raw.grid.modes {
            g.modes = modes.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        self.data.validate()?;
        self.grid.validate()?;
        Ok(())
    }
}
