//! Experiment grid over client counts and modes with CSV output.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{ensure, Context, Result};
use hefl_core::bfv::{SecurityLevel, ERROR_SIGMA, PLAIN_MODULUS};
use hefl_core::model::{Dataset, MetricsReport};
use hefl_core::protocol::{FederationConfig, Mode, PROTOCOL_VERSION};
use hefl_core::random::hash_words;
use serde::Serialize;

use crate::data::{generate_dataset, SyntheticSpec};
use crate::federation::{run_federation, PhaseTimings, RunReport, PHASES};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub client_counts: Vec<usize>,
    pub modes: Vec<Mode>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Run cells on all cores. Timings are then not comparable.
    pub parallel: bool,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            client_counts: vec![2, 3, 5, 7],
            modes: Mode::ALL.to_vec(),
            repetitions: 3,
            base_seed: 0,
            parallel: false,
        }
    }
}

fn mode_tag(m: Mode) -> u64 {
    match m {
        Mode::Plain => 0,
        Mode::Encrypted(l) => l.id() as u64,
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.client_counts.is_empty(),
            "grid needs at least one client count"
        );
        ensure!(!self.modes.is_empty(), "grid needs at least one mode");
        ensure!(self.repetitions > 0, "grid needs at least one repetition");
        ensure!(
            self.client_counts.iter().all(|&c| c >= 2),
            "client counts must be at least 2"
        );
        Ok(())
    }

    /// Model, partition and training seed of a cell. Shared by all modes so
    /// plain and encrypted runs of one cell see identical data and updates.
    pub fn training_seed(&self, clients: usize, rep: usize) -> u64 {
        self.base_seed ^ hash_words(&[0x7e11, clients as u64, rep as u64])
    }

    /// Key generation and encryption seed of a cell.
    pub fn crypto_seed(&self, clients: usize, mode: Mode, rep: usize) -> u64 {
        self.base_seed ^ hash_words(&[0xc0de, clients as u64, mode_tag(mode), rep as u64])
    }

    pub fn data_seed(&self, rep: usize) -> u64 {
        self.base_seed ^ hash_words(&[0xda7a, rep as u64])
    }

    /// `(clients, mode, repetition)` in output order.
    pub fn cells(&self) -> Vec<(usize, Mode, usize)> {
        let mut out = Vec::new();
        for &c in &self.client_counts {
            for &m in &self.modes {
                for rep in 0..self.repetitions {
                    out.push((c, m, rep));
                }
            }
        }
        out
    }

    pub fn cell_config(
        &self,
        template: &FederationConfig,
        clients: usize,
        mode: Mode,
        rep: usize,
    ) -> FederationConfig {
        FederationConfig {
            clients,
            mode,
            seed: self.training_seed(clients, rep),
            crypto_seed: self.crypto_seed(clients, mode, rep),
            partition: None,
            ..template.clone()
        }
    }
}

/// Outcome of one `(clients, mode)` cell across repetitions.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub clients: usize,
    pub mode: Mode,
    pub runs: Vec<RunReport>,
    pub failures: Vec<(usize, String)>,
}

impl CellSummary {
    /// Mean metrics over successful repetitions.
    pub fn mean_metrics(&self) -> Option<MetricsReport> {
        let k = self.runs.len();
        if k == 0 {
            return None;
        }
        let mut m = MetricsReport::default();
        for r in &self.runs {
            m.accuracy += r.metrics.accuracy;
            m.f1 += r.metrics.f1;
            m.precision += r.metrics.precision;
            m.recall += r.metrics.recall;
        }
        let k = k as f64;
        Some(MetricsReport {
            accuracy: m.accuracy / k,
            f1: m.f1 / k,
            precision: m.precision / k,
            recall: m.recall / k,
        })
    }

    /// Per-phase seconds, averaged over successful repetitions.
    pub fn mean_seconds(&self, phase: &str) -> Option<f64> {
        if self.runs.is_empty() {
            return None;
        }
        let total: f64 = self
            .runs
            .iter()
            .map(|r| r.timings.get(phase).map_or(0.0, |d| d.as_secs_f64()))
            .sum();
        Some(total / self.runs.len() as f64)
    }

    pub fn total_timings(&self) -> PhaseTimings {
        let mut t = PhaseTimings::default();
        self.runs.iter().for_each(|r| t.accumulate(&r.timings));
        t
    }
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub grid: ExperimentGrid,
    pub cells: Vec<CellSummary>,
}

impl GridReport {
    pub fn cell(&self, clients: usize, mode: Mode) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.clients == clients && c.mode == mode)
    }
}

type CellOutcome = (usize, Mode, usize, Result<RunReport>);

fn run_cell(
    grid: &ExperimentGrid,
    template: &FederationConfig,
    datasets: &[(Dataset, Dataset)],
    (c, mode, rep): (usize, Mode, usize),
) -> CellOutcome {
    let cfg = grid.cell_config(template, c, mode, rep);
    let (train, test) = &datasets[rep];
    log::info!("cell clients={c} mode={} rep={rep}", mode.label());
    let res = run_federation(&cfg, train, test);
    if let Err(e) = &res {
        log::warn!(
            "cell clients={c} mode={} rep={rep} failed: {e:#}",
            mode.label()
        );
    }
    (c, mode, rep, res)
}

/// Runs every cell. A failing cell is recorded and the grid continues.
pub fn run_grid(
    grid: &ExperimentGrid,
    template: &FederationConfig,
    spec: &SyntheticSpec,
) -> Result<GridReport> {
    grid.validate()?;
    let datasets = (0..grid.repetitions)
        .map(|rep| generate_dataset(spec, grid.data_seed(rep)))
        .collect::<Result<Vec<_>>>()?;
    let cells = grid.cells();
    let outcomes: Vec<CellOutcome> = if grid.parallel {
        let next = AtomicUsize::new(0);
        let done = Mutex::new(Vec::with_capacity(cells.len()));
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(cells.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&cell) = cells.get(i) else { break };
                    let out = run_cell(grid, template, &datasets, cell);
                    done.lock().unwrap().push((i, out));
                });
            }
        });
        let mut done = done.into_inner().unwrap();
        done.sort_by_key(|(i, _)| *i);
        done.into_iter().map(|(_, o)| o).collect()
    } else {
        cells
            .iter()
            .map(|&cell| run_cell(grid, template, &datasets, cell))
            .collect()
    };

    let mut summaries: Vec<CellSummary> = Vec::new();
    for (clients, mode, rep, res) in outcomes {
        if summaries
            .last()
            .is_none_or(|s| s.clients != clients || s.mode != mode)
        {
            summaries.push(CellSummary {
                clients,
                mode,
                runs: Vec::new(),
                failures: Vec::new(),
            });
        }
        let s = summaries.last_mut().unwrap();
        match res {
            Ok(r) => s.runs.push(r),
            Err(e) => s.failures.push((rep, format!("{e:#}"))),
        }
    }
    Ok(GridReport {
        grid: grid.clone(),
        cells: summaries,
    })
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    clients: usize,
    mode: &'a str,
    accuracy: f64,
    f1: f64,
    precision: f64,
    recall: f64,
}

#[derive(Serialize)]
struct RunRow<'a> {
    clients: usize,
    mode: &'a str,
    repetition: usize,
    round: usize,
    accuracy: f64,
    f1: f64,
    precision: f64,
    recall: f64,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    clients: usize,
    mode: &'a str,
    phase: &'a str,
    seconds: f64,
}

/// Writes `metrics.csv`, `rounds.csv`, `timings.csv`, `timings.dat` and
/// `run-meta.txt` into `dir`.
pub fn write_artifacts(
    report: &GridReport,
    template: &FederationConfig,
    spec: &SyntheticSpec,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut rounds = csv::Writer::from_path(dir.join("rounds.csv"))?;
    let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
    for cell in &report.cells {
        let mode = cell.mode.label();
        if let Some(m) = cell.mean_metrics() {
            metrics.serialize(MetricsRow {
                clients: cell.clients,
                mode,
                accuracy: m.accuracy,
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
            })?;
        }
        for (rep, run) in cell.runs.iter().enumerate() {
            for (round, m) in run.per_round.iter().enumerate() {
                rounds.serialize(RunRow {
                    clients: cell.clients,
                    mode,
                    repetition: rep,
                    round,
                    accuracy: m.accuracy,
                    f1: m.f1,
                    precision: m.precision,
                    recall: m.recall,
                })?;
            }
        }
        for phase in PHASES {
            if let Some(seconds) = cell.mean_seconds(phase) {
                timings.serialize(TimingRow {
                    clients: cell.clients,
                    mode,
                    phase,
                    seconds,
                })?;
            }
        }
    }
    metrics.flush()?;
    rounds.flush()?;
    timings.flush()?;

    std::fs::write(dir.join("timings.dat"), plot_data(report))?;
    std::fs::write(dir.join("run-meta.txt"), run_meta(report, template, spec))?;
    Ok(())
}

/// Gnuplot columns: client count, then mean aggregate seconds per mode.
pub fn plot_data(report: &GridReport) -> String {
    let mut out = String::from("# clients");
    for m in &report.grid.modes {
        let _ = write!(out, " {}", m.label());
    }
    out.push('\n');
    for &c in &report.grid.client_counts {
        let _ = write!(out, "{c}");
        for &m in &report.grid.modes {
            match report.cell(c, m).and_then(|s| s.mean_seconds("aggregate")) {
                Some(s) => {
                    let _ = write!(out, " {s:.9}");
                }
                None => out.push_str(" NaN"),
            }
        }
        out.push('\n');
    }
    out
}

fn run_meta(report: &GridReport, cfg: &FederationConfig, spec: &SyntheticSpec) -> String {
    let g = &report.grid;
    let mut s = String::new();
    let _ = writeln!(s, "protocol_version = {PROTOCOL_VERSION}");
    let _ = writeln!(s, "frac_bits = {}", cfg.frac_bits);
    let _ = writeln!(s, "division = {:?}", cfg.division);
    let _ = writeln!(s, "plain_modulus = {PLAIN_MODULUS}");
    let _ = writeln!(s, "error_sigma = {ERROR_SIGMA}");
    for level in SecurityLevel::ALL {
        let p = level.params();
        let _ = writeln!(
            s,
            "{} = n {} q {} ({} bits)",
            level.label(),
            p.ring.n,
            p.ring.q,
            128 - p.ring.q.leading_zeros()
        );
    }
    let _ = writeln!(s, "rounds = {}", cfg.rounds);
    let _ = writeln!(s, "hidden = {:?}", cfg.hidden);
    let _ = writeln!(
        s,
        "train = lr {} epochs {} batch {}",
        cfg.train.learning_rate, cfg.train.epochs, cfg.train.batch_size
    );
    let _ = writeln!(
        s,
        "data = {} train / {} test per class, dim {}, separation {}",
        spec.train_per_class, spec.test_per_class, spec.feature_dim, spec.separation
    );
    let _ = writeln!(s, "client_counts = {:?}", g.client_counts);
    let modes: Vec<&str> = g.modes.iter().map(|m| m.label()).collect();
    let _ = writeln!(s, "modes = {modes:?}");
    let _ = writeln!(s, "repetitions = {}", g.repetitions);
    let _ = writeln!(s, "base_seed = {}", g.base_seed);
    let _ = writeln!(
        s,
        "parallel = {}{}",
        g.parallel,
        if g.parallel {
            " (timings not comparable)"
        } else {
            ""
        }
    );
    for cell in &report.cells {
        for (rep, err) in &cell.failures {
            let _ = writeln!(
                s,
                "failed: clients {} mode {} rep {rep}: {err}",
                cell.clients,
                cell.mode.label()
            );
        }
    }
    s
}
