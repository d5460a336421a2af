use hefl_core::bfv::{SEC128_Q, SEC192_Q};
use hefl_core::random::RandomSource;
use hefl_core::ring::{Ring, RingParams, RingPoly};
use num_bigint::{BigInt, BigUint};
use proptest::prelude::*;

fn ring(n: usize, q: u128) -> Ring {
    Ring::new(RingParams::new(n, q, 2).unwrap())
}

fn big(x: u128) -> BigUint {
    BigUint::from(x)
}

/// Negacyclic schoolbook product over arbitrary-precision integers.
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
        .map(|c| {
            let r = ((c % &qb) + &qb) % &qb;
            u128::try_from(r).unwrap()
        })
        .collect()
}

#[test]
fn add_matches_bigint_oracle() {
    let r = ring(64, SEC128_Q);
    let mut src = RandomSource::new(11);
    for _ in 0..500 {
        let a = r.sample_uniform(&mut src);
        let b = r.sample_uniform(&mut src);
        let sum = r.add(&a, &b).unwrap();
        for ((&x, &y), &s) in a.coeffs().iter().zip(b.coeffs()).zip(sum.coeffs()) {
            assert_eq!(big(s), (big(x) + big(y)) % big(SEC128_Q));
        }
    }
}

#[test]
fn ntt_matches_schoolbook_and_bigint() {
    let mut src = RandomSource::new(12);
    for n in [4usize, 8, 16, 64] {
        for q in [SEC128_Q, SEC192_Q] {
            let r = ring(n, q);
            assert!(r.has_ntt());
            for trial in 0..500 {
                let a = r.sample_uniform(&mut src);
                let b = r.sample_uniform(&mut src);
                let fast = r.mul_ntt(&a, &b).unwrap();
                let slow = r.mul_schoolbook(&a, &b).unwrap();
                assert_eq!(fast, slow, "n={n} trial={trial}");
                if trial < 20 {
                    assert_eq!(fast.coeffs(), bigint_negacyclic(a.coeffs(), b.coeffs(), q));
                }
            }
        }
    }
}

#[test]
fn schoolbook_matches_bigint_on_small_modulus() {
    let r = ring(8, 97);
    let mut src = RandomSource::new(13);
    for _ in 0..200 {
        let a = r.sample_uniform(&mut src);
        let b = r.sample_uniform(&mut src);
        assert_eq!(
            r.mul_schoolbook(&a, &b).unwrap().coeffs(),
            bigint_negacyclic(a.coeffs(), b.coeffs(), 97)
        );
    }
}

#[test]
fn full_degree_ntt_matches_schoolbook() {
    for (n, q) in [(4096usize, SEC128_Q), (8192, SEC192_Q)] {
        let r = ring(n, q);
        let mut src = RandomSource::new(n as u64);
        let a = r.sample_uniform(&mut src);
        let b = r.sample_ternary(&mut src);
        assert_eq!(
            r.mul_ntt(&a, &b).unwrap(),
            r.mul_schoolbook(&a, &b).unwrap()
        );
    }
}

#[test]
fn uniform_sampler_is_deterministic_and_flat() {
    let r = ring(4, 17);
    let a = r.sample_uniform(&mut RandomSource::new(42));
    let b = r.sample_uniform(&mut RandomSource::new(42));
    assert_eq!(a, b);
    let wide = ring(64, SEC128_Q);
    assert_ne!(
        wide.sample_uniform(&mut RandomSource::new(1)),
        wide.sample_uniform(&mut RandomSource::new(2))
    );

    // 10^4 polynomial draws, 4 coefficients each
    let mut counts = [0u64; 17];
    let mut src = RandomSource::new(7);
    for _ in 0..10_000 {
        for &c in r.sample_uniform(&mut src).coeffs() {
            counts[c as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let p = 1.0 / 17.0;
    let expected = total as f64 * p;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    for (v, &k) in counts.iter().enumerate() {
        assert!(
            (k as f64 - expected).abs() < 5.0 * sigma,
            "residue {v}: {k} vs {expected}"
        );
    }
}

#[test]
fn ternary_frequencies() {
    let r = ring(1024, SEC128_Q);
    let mut src = RandomSource::new(3);
    let p = r.sample_ternary(&mut src);
    assert_eq!(p, r.sample_ternary(&mut RandomSource::new(3)));
    let mut counts = [0usize; 3];
    let mut total = 0;
    while total < 10_000 {
        for &c in r.sample_ternary(&mut src).coeffs() {
            let idx = match c {
                0 => 0,
                1 => 1,
                c if c == SEC128_Q - 1 => 2,
                _ => panic!("coefficient {c} outside {{-1,0,1}}"),
            };
            counts[idx] += 1;
            total += 1;
        }
    }
    for k in counts {
        let f = k as f64 / total as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.02, "frequency {f}");
    }
}

#[test]
fn error_sampler_moments() {
    let r = ring(4096, SEC128_Q);
    let mut src = RandomSource::new(5);
    let sigma = 3.2;
    assert_eq!(
        r.sample_error(sigma, &mut RandomSource::new(9)),
        r.sample_error(sigma, &mut RandomSource::new(9))
    );
    let mut values = Vec::new();
    while values.len() < 100_000 {
        let p = r.sample_error(sigma, &mut src);
        values.extend(p.coeffs().iter().map(|&c| r.centered(c) as f64));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!(
        (var - sigma * sigma).abs() < 0.15 * sigma * sigma,
        "variance {var}"
    );
}

fn poly_strategy(r: &'static Ring) -> impl Strategy<Value = RingPoly> {
    any::<u64>().prop_map(move |seed| r.sample_uniform(&mut RandomSource::new(seed)))
}

fn shared_ring() -> &'static Ring {
    use std::sync::OnceLock;
    static RING: OnceLock<Ring> = OnceLock::new();
    RING.get_or_init(|| ring(16, SEC128_Q))
}

proptest! {
    #[test]
    fn additive_group_laws(a in poly_strategy(shared_ring()), b in poly_strategy(shared_ring()), c in poly_strategy(shared_ring())) {
        let r = shared_ring();
        prop_assert_eq!(r.add(&a, &b).unwrap(), r.add(&b, &a).unwrap());
        prop_assert_eq!(
            r.add(&r.add(&a, &b).unwrap(), &c).unwrap(),
            r.add(&a, &r.add(&b, &c).unwrap()).unwrap()
        );
        prop_assert_eq!(r.add(&a, &r.zero()).unwrap(), a.clone());
        prop_assert_eq!(r.add(&a, &r.neg(&a)).unwrap(), r.zero());
    }

    #[test]
    fn multiplication_distributes(a in poly_strategy(shared_ring()), b in poly_strategy(shared_ring()), c in poly_strategy(shared_ring())) {
        let r = shared_ring();
        let lhs = r.mul(&a, &r.add(&b, &c).unwrap()).unwrap();
        let rhs = r.add(&r.mul(&a, &b).unwrap(), &r.mul(&a, &c).unwrap()).unwrap();
        prop_assert_eq!(&lhs, &rhs);
        prop_assert_eq!(r.mul(&a, &r.one()).unwrap(), a.clone());
        prop_assert!(lhs.coeffs().iter().all(|&x| x < SEC128_Q));
        prop_assert_eq!(lhs.len(), 16);
    }
}
