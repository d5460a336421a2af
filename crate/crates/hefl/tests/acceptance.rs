//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use hefl::data::SyntheticSpec;
use hefl::federation::{client_shards, deal_keys, run_federation};
use hefl::harness::{run_grid, ExperimentGrid, GridReport};
use hefl_core::bfv::{Bfv, Plaintext, SecurityLevel, SEC128_Q, SEC192_Q};
use hefl_core::encoder::{decode_fractional, encode_fractional, WeightManifest};
use hefl_core::model::{compute_metrics, train_local, Dataset, Mlp};
use hefl_core::protocol::{Body, FederationConfig, Message, Mode, ServerState};
use hefl_core::random::RandomSource;
use hefl_core::ring::{Ring, RingParams};
use num_bigint::BigInt;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn check(ok: bool, pass: String, fail: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail())
    }
}

fn random_plaintext(bfv: &Bfv, r: &mut RandomSource) -> Plaintext {
    let t = bfv.plain_modulus();
    Plaintext::new((0..bfv.degree()).map(|_| r.below(t)).collect(), t, 0).unwrap()
}

fn roundtrips() -> Outcome {
    let start = Instant::now();
    let mut bad = Vec::new();
    for level in SecurityLevel::ALL {
        let bfv = Bfv::with_level(level);
        let mut r = RandomSource::new(0xacc1 + level.id() as u64);
        let keys = bfv.keygen(&mut r);
        for trial in 0..1000 {
            let m = random_plaintext(&bfv, &mut r);
            let ct = bfv.encrypt(&m, &keys.public, &mut r).unwrap();
            if bfv
                .decrypt(&ct, &keys.secret)
                .map(|d| d.coeffs() == m.coeffs())
                != Ok(true)
            {
                bad.push(format!("{} trial {trial}", level.label()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad.is_empty() && secs < 120.0,
        format!("2 x 1000 roundtrips exact in {secs:.1}s"),
        || format!("{} mismatches {:?}, {secs:.1}s", bad.len(), bad.first()),
    )
}

/// `m * p mod (x^n + 1, t)` summed over the nonzero terms of `p`.
fn negacyclic_mod_t(m: &[u128], p: &[u128], t: u128) -> Vec<u128> {
    let n = m.len();
    let mut out = vec![0u128; n];
    for (j, &pj) in p.iter().enumerate().filter(|(_, c)| **c != 0) {
        for (i, &mi) in m.iter().enumerate() {
            let prod = (mi * pj) % t;
            let k = (i + j) % n;
            out[k] = if i + j < n {
                (out[k] + prod) % t
            } else {
                (out[k] + t - prod) % t
            };
        }
    }
    out
}

fn homomorphism() -> Outcome {
    let mut failures = 0;
    let mut trials = 0;
    for level in SecurityLevel::ALL {
        let bfv = Bfv::with_level(level);
        let t = bfv.plain_modulus();
        let n = bfv.degree();
        let mut r = RandomSource::new(0xacc2 + level.id() as u64);
        let keys = bfv.keygen(&mut r);
        for _ in 0..500 {
            let m1 = random_plaintext(&bfv, &mut r);
            let m2 = random_plaintext(&bfv, &mut r);
            let c1 = bfv.encrypt(&m1, &keys.public, &mut r).unwrap();
            let c2 = bfv.encrypt(&m2, &keys.public, &mut r).unwrap();
            let sum = bfv
                .decrypt(&bfv.add(&c1, &c2).unwrap(), &keys.secret)
                .unwrap();
            let want: Vec<u128> = m1
                .coeffs()
                .iter()
                .zip(m2.coeffs())
                .map(|(a, b)| (a + b) % t)
                .collect();
            failures += usize::from(sum.coeffs() != want.as_slice());

            let mut p = vec![0u128; n];
            for _ in 0..16 {
                p[r.below(n as u128) as usize] = r.below(t);
            }
            let p = Plaintext::new(p, t, 0).unwrap();
            let prod = bfv
                .decrypt(&bfv.mul_plain(&c1, &p).unwrap(), &keys.secret)
                .unwrap();
            failures += usize::from(prod.coeffs() != negacyclic_mod_t(m1.coeffs(), p.coeffs(), t));
            trials += 2;
        }
    }
    check(
        failures == 0,
        format!("{trials} add/multiply trials exact at both levels"),
        || format!("{failures} of {trials} trials wrong"),
    )
}

fn aggregation_equivalence() -> Outcome {
    let start = Instant::now();
    let (bfv, keys) = deal_keys(SecurityLevel::Sec128, 0xacc3);
    let len = 10_000;
    let f = 16;
    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    for c in [2usize, 3, 5, 7] {
        let cfg = FederationConfig {
            clients: c,
            frac_bits: f,
            ..FederationConfig::default()
        };
        let enc = cfg.encoding(bfv.degree(), bfv.plain_modulus()).unwrap();
        let manifest =
            WeightManifest::from_shapes([("w", vec![len as u32])]).with_slots(bfv.degree());
        let mut server = ServerState::new(&cfg, Some((bfv.clone(), keys.public.clone()))).unwrap();
        let mut r = RandomSource::new(c as u64);
        let vectors: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..len).map(|_| r.uniform_f64(-1.0, 1.0)).collect())
            .collect();
        for (id, v) in vectors.iter().enumerate() {
            let chunks = encode_fractional(v, &enc)
                .unwrap()
                .iter()
                .map(|p| bfv.encrypt(p, &keys.public, &mut r).unwrap())
                .collect();
            server
                .receive(id as u32, Message::new(0, Body::Manifest(manifest.clone())))
                .unwrap();
            server
                .receive(id as u32, Message::new(0, Body::Chunks(chunks)))
                .unwrap();
        }
        let Body::Aggregate(agg) = server.aggregate().unwrap().body else {
            return Err("server did not return an aggregate".into());
        };
        let plain: Vec<_> = agg
            .iter()
            .map(|ct| bfv.decrypt(ct, &keys.secret).unwrap())
            .collect();
        let out = decode_fractional(&plain, len, &enc).unwrap();
        let tol = c as f64 * 2f64.powi(-(f as i32 + 1)) + 2f64.powi(-(f as i32));
        for j in 0..len {
            let mut mean = 0.0;
            for v in &vectors {
                mean += v[j];
            }
            mean /= c as f64;
            let err = (out[j] - mean).abs();
            worst = worst.max(err / tol);
            if err > tol {
                violations.push(format!("c={c} index {j}: {err:e} > {tol:e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        violations.is_empty() && secs < 300.0,
        format!(
            "c in {{2,3,5,7}}, worst error {:.0}% of tolerance, {secs:.1}s",
            worst * 100.0
        ),
        || {
            format!(
                "{} violations {:?}, {secs:.1}s",
                violations.len(),
                violations.first()
            )
        },
    )
}

fn default_grid() -> GridReport {
    run_grid(
        &ExperimentGrid::default(),
        &FederationConfig::default(),
        &SyntheticSpec::default(),
    )
    .unwrap()
}

/// Plain FedAvg written out directly: train every shard from the global
/// model, average element-wise in client order.
fn fedavg_oracle(cfg: &FederationConfig, train: &Dataset) -> Mlp {
    let shards = client_shards(cfg, train).unwrap();
    let mut global = cfg.initial_model(train.width()).unwrap();
    for round in 0..cfg.rounds {
        let locals: Vec<Vec<f64>> = shards
            .iter()
            .enumerate()
            .map(|(id, s)| {
                train_local(&global, s, &cfg.train_config(round, id as u32))
                    .unwrap()
                    .flatten()
                    .0
            })
            .collect();
        let (_, manifest) = global.flatten();
        let mut mean = vec![0.0; locals[0].len()];
        for w in &locals {
            for (m, x) in mean.iter_mut().zip(w) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cfg.clients as f64);
        global = global.load_weights(&mean, &manifest).unwrap();
    }
    global
}

fn parity(report: &GridReport) -> Outcome {
    let mut problems = Vec::new();
    let mut max_gap = 0.0f64;
    let mut spread = Vec::new();
    for level in SecurityLevel::ALL {
        let mode = Mode::Encrypted(level);
        let mut accs = Vec::new();
        for &c in &report.grid.client_counts {
            let plain = report.cell(c, Mode::Plain).and_then(|s| s.mean_metrics());
            let enc = report.cell(c, mode).and_then(|s| s.mean_metrics());
            let (Some(p), Some(e)) = (plain, enc) else {
                problems.push(format!("missing cell c={c} {}", level.label()));
                continue;
            };
            let gap = (p.accuracy - e.accuracy).abs();
            max_gap = max_gap.max(gap);
            if gap > 0.02 {
                problems.push(format!("c={c} {} gap {gap:.4}", level.label()));
            }
            accs.push(e.accuracy);
        }
        let s = accs.iter().cloned().fold(f64::MIN, f64::max)
            - accs.iter().cloned().fold(f64::MAX, f64::min);
        if s > 0.05 {
            problems.push(format!("{} spread {s:.4}", level.label()));
        }
        spread.push(s);
    }

    // twin-seed weight parity on one cell, against an independent FedAvg
    let (train, test) = hefl::data::generate_dataset(&SyntheticSpec::default(), 0xacc4).unwrap();
    let plain_cfg = FederationConfig {
        mode: Mode::Plain,
        ..FederationConfig::default()
    };
    let plain = run_federation(&plain_cfg, &train, &test).unwrap();
    if plain.model != fedavg_oracle(&plain_cfg, &train) {
        problems.push("plain run differs from the FedAvg oracle".into());
    }
    let enc = run_federation(&FederationConfig::default(), &train, &test).unwrap();
    let weight_gap = plain
        .model
        .flatten()
        .0
        .iter()
        .zip(enc.model.flatten().0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if weight_gap > 1e-3 {
        problems.push(format!("SEC128 vs plain weights differ by {weight_gap:e}"));
    }
    let acc = |m: &Mlp| {
        compute_metrics(
            &m.predict(test.features(), test.width()).unwrap(),
            test.labels(),
        )
        .unwrap()
        .accuracy
    };
    check(
        problems.is_empty(),
        format!(
            "max accuracy gap {max_gap:.4}, encrypted spread {:.4}/{:.4}, weight gap {weight_gap:.1e}, plain run equals FedAvg oracle (accuracy {:.4})",
            spread[0],
            spread[1],
            acc(&plain.model)
        ),
        || problems.join("; "),
    )
}

fn timing(report: &GridReport) -> Outcome {
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for &c in &report.grid.client_counts {
        let secs = |m: Mode| report.cell(c, m).and_then(|s| s.mean_seconds("aggregate"));
        let (Some(p), Some(a), Some(b)) = (
            secs(Mode::Plain),
            secs(Mode::Encrypted(SecurityLevel::Sec128)),
            secs(Mode::Encrypted(SecurityLevel::Sec192)),
        ) else {
            bad.push(format!("c={c} missing"));
            continue;
        };
        lines.push(format!("c={c} {p:.2e}/{a:.2e}/{b:.2e}s"));
        if !(p < a && a <= b) {
            bad.push(format!("c={c} plain {p:e} sec128 {a:e} sec192 {b:e}"));
        }
    }
    check(
        bad.is_empty(),
        format!("aggregate PLAIN < SEC128 <= SEC192: {}", lines.join(", ")),
        || bad.join("; "),
    )
}

fn bigint_negacyclic(a: &[u128], b: &[u128], q: u128) -> Vec<u128> {
    let n = a.len();
    let mut acc = vec![BigInt::from(0); n];
    for i in 0..n {
        for j in 0..n {
            let p = BigInt::from(a[i]) * BigInt::from(b[j]);
            if i + j < n {
                acc[i + j] += p;
            } else {
                acc[i + j - n] -= p;
            }
        }
    }
    let qb = BigInt::from(q);
    acc.into_iter()
        .map(|c| u128::try_from(((c % &qb) + &qb) % &qb).unwrap())
        .collect()
}

fn ntt_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut pairs = 0;
    let mut r = RandomSource::new(0xacc6);
    for q in [SEC128_Q, SEC192_Q] {
        for n in [4usize, 8, 16, 64] {
            let ring = Ring::new(RingParams::new(n, q, 2).unwrap());
            if !ring.has_ntt() {
                return Err(format!("no NTT for n={n}"));
            }
            for _ in 0..500 {
                let a = ring.sample_uniform(&mut r);
                let b = ring.sample_uniform(&mut r);
                let fast = ring.mul_ntt(&a, &b).unwrap();
                mismatches +=
                    usize::from(fast.coeffs() != bigint_negacyclic(a.coeffs(), b.coeffs(), q));
                pairs += 1;
            }
        }
    }
    check(
        mismatches == 0,
        format!("{pairs} NTT products equal the schoolbook big-integer oracle"),
        || format!("{mismatches} of {pairs} products differ"),
    )
}

fn key_isolation() -> Outcome {
    // ServerState::new accepts only (Arc<Bfv>, PublicKey); passing a secret
    // key is a compile error (see the compile_fail doctest on ServerState).
    let (bfv, keys) = deal_keys(SecurityLevel::Sec128, 0xacc7);
    let cfg = FederationConfig {
        clients: 3,
        rounds: 1,
        ..FederationConfig::default()
    };
    let public_only: (Arc<Bfv>, _) = (bfv.clone(), keys.public.clone());
    let server = ServerState::new(&cfg, Some(public_only));
    let spec = SyntheticSpec {
        train_per_class: 100,
        test_per_class: 50,
        ..SyntheticSpec::default()
    };
    let (train, test) = hefl::data::generate_dataset(&spec, 7).unwrap();
    let run = run_federation(&cfg, &train, &test);

    // a stranger's secret key cannot read a ciphertext under the dealt key
    let stranger = bfv.keygen(&mut RandomSource::new(0xbad));
    let mut r = RandomSource::new(1);
    let m = random_plaintext(&bfv, &mut r);
    let ct = bfv.encrypt(&m, &keys.public, &mut r).unwrap();
    let leaked = bfv
        .decrypt_unchecked(&ct, &stranger.secret)
        .map(|p| p.coeffs() == m.coeffs())
        .unwrap_or(false);
    check(
        server.is_ok() && run.is_ok() && !leaked,
        "server built from the public key alone; a full encrypted round completed".into(),
        || {
            format!(
                "server {:?}, run {:?}, leaked {leaked}",
                server.err(),
                run.err()
            )
        },
    )
}

fn gradient_check() -> Outcome {
    let mut r = RandomSource::new(0xacc8);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, sizes) in [
        vec![3, 4, 1],
        vec![5, 4, 1],
        vec![4, 3, 2, 1],
        vec![2, 6, 1],
    ]
    .iter()
    .enumerate()
    {
        let width = sizes[0];
        let rows = 12;
        let x: Vec<f64> = (0..rows * width)
            .map(|_| r.uniform_f64(-2.0, 2.0))
            .collect();
        let y: Vec<u8> = (0..rows).map(|_| r.below(2) as u8).collect();
        let data = Dataset::new(x, width, y).unwrap();
        let idx: Vec<usize> = (0..rows).collect();
        let m = Mlp::new(sizes, k as u64 + 100).unwrap();
        let (_, grad) = m.loss_and_gradient(&data, &idx).unwrap();
        let (w, manifest) = m.flatten();
        let h = 1e-6;
        for i in 0..w.len() {
            let loss_at = |delta: f64| {
                let mut v = w.clone();
                v[i] += delta;
                m.load_weights(&v, &manifest)
                    .unwrap()
                    .loss_and_gradient(&data, &idx)
                    .unwrap()
                    .0
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let scale = numeric.abs().max(grad[i].abs());
            let diff = (numeric - grad[i]).abs();
            // coordinates whose gradient is numerically zero are compared absolutely
            let rel = if scale < 1e-7 { diff } else { diff / scale };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    check(
        worst <= 1e-4,
        format!("{checked} coordinates, worst relative error {worst:.1e}"),
        || format!("worst relative error {worst:e}"),
    )
}

fn metrics_identity() -> Outcome {
    let mut r = RandomSource::new(0xacc9);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = 1 + r.below(100) as usize;
        let pred: Vec<u8> = (0..len).map(|_| r.below(2) as u8).collect();
        let actual: Vec<u8> = (0..len).map(|_| r.below(2) as u8).collect();
        let m = compute_metrics(&pred, &actual).unwrap();
        worst = worst.max((m.recall - m.accuracy).abs());
    }
    check(
        worst < 1e-12,
        format!("200 random pairs, max |recall - accuracy| = {worst:.1e}"),
        || format!("recall differs from accuracy by {worst:e}"),
    )
}

fn main() {
    let grid_start = Instant::now();
    let report = default_grid();
    let grid_time = grid_start.elapsed();

    let criteria: Vec<Criterion> = vec![
        ("HE correctness", Box::new(roundtrips)),
        ("homomorphism", Box::new(homomorphism)),
        ("aggregation equivalence", Box::new(aggregation_equivalence)),
        ("end-to-end parity", Box::new(|| parity(&report))),
        ("timing ordering", Box::new(|| timing(&report))),
        ("ring arithmetic oracle", Box::new(ntt_oracle)),
        ("key isolation", Box::new(key_isolation)),
        ("gradient check", Box::new(gradient_check)),
        ("metrics identity", Box::new(metrics_identity)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed() + if i == 3 { grid_time } else { Duration::ZERO };
        match outcome {
            Ok(detail) => println!(
                "PASS {} {name}: {detail} [{:.1}s]",
                i + 1,
                took.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "FAIL {} {name}: {detail} [{:.1}s]",
                    i + 1,
                    took.as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
