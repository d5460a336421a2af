//! Polynomial arithmetic in `R_q = Z_q[x] / (x^n + 1)`.
//!
//! Coefficients are exact residues in `[0, q)`; negative values are stored as
//! `q - |v|` and read back with [`Ring::centered`].

use alloc::vec;
use alloc::vec::Vec;

use crate::arith::Modulus;
use crate::error::{Error, Result};
use crate::random::RandomSource;

/// Ring degree `n`, ciphertext modulus `q` and plaintext modulus `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingParams {
    pub n: usize,
    pub q: u128,
    pub t: u128,
}

impl RingParams {
    pub fn new(n: usize, q: u128, t: u128) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidParams("n must be a power of two >= 4"));
        }
        if q & 1 == 0 || q >= (1u128 << 127) {
            return Err(Error::InvalidParams("q must be odd and below 2^127"));
        }
        if t <= 1 || t >= q {
            return Err(Error::InvalidParams("need 1 < t < q"));
        }
        Ok(RingParams { n, q, t })
    }

    /// Bytes needed to store one coefficient in [0, q).
    pub fn q_bytes(&self) -> usize {
        let bits = 128 - self.q.leading_zeros() as usize;
        bits.div_ceil(8)
    }
}

/// An element of `R_q`: exactly `n` residues below `q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RingPoly {
    coeffs: Vec<u128>,
}

impl RingPoly {
    pub fn coeffs(&self) -> &[u128] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn into_coeffs(self) -> Vec<u128> {
        self.coeffs
    }
}

struct NttTables {
    /// psi^bitrev(i), with Shoup companions
    fwd: Vec<(u128, u128)>,
    /// psi^-bitrev(i), with Shoup companions
    inv: Vec<(u128, u128)>,
    n_inv: (u128, u128),
}

/// Arithmetic context for one parameter set.
pub struct Ring {
    params: RingParams,
    modulus: Modulus,
    ntt: Option<NttTables>,
}

impl core::fmt::Debug for Ring {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Ring")
            .field("params", &self.params)
            .field("ntt", &self.ntt.is_some())
            .finish()
    }
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl Ring {
    /// Builds the context. The NTT path is enabled when `q` is prime and
    /// `q = 1 mod 2n`; otherwise multiplication is schoolbook.
    pub fn new(params: RingParams) -> Self {
        let modulus = Modulus::new(params.q).expect("RingParams validated q");
        let ntt = Self::build_ntt(&params, &modulus);
        Ring {
            params,
            modulus,
            ntt,
        }
    }

    fn build_ntt(params: &RingParams, m: &Modulus) -> Option<NttTables> {
        let q = params.q;
        let two_n = 2 * params.n as u128;
        if !(q - 1).is_multiple_of(two_n) || !m.is_prime() {
            return None;
        }
        let exp = (q - 1) / two_n;
        let psi = (2..)
            .map(|g| m.pow(g, exp))
            .find(|&c| m.pow(c, params.n as u128) == q - 1)?;
        let psi_inv = m.inv_prime(psi);
        let bits = params.n.trailing_zeros();
        let table = |root: u128| -> Vec<(u128, u128)> {
            let mut powers = vec![0u128; params.n];
            let mut acc = 1u128;
            for i in 0..params.n {
                powers[bit_reverse(i, bits)] = acc;
                acc = m.mul(acc, root);
            }
            powers.into_iter().map(|w| (w, m.shoup(w))).collect()
        };
        let n_inv = m.inv_prime(params.n as u128);
        Some(NttTables {
            fwd: table(psi),
            inv: table(psi_inv),
            n_inv: (n_inv, m.shoup(n_inv)),
        })
    }

    pub fn params(&self) -> &RingParams {
        &self.params
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn has_ntt(&self) -> bool {
        self.ntt.is_some()
    }

    pub fn zero(&self) -> RingPoly {
        RingPoly {
            coeffs: vec![0; self.params.n],
        }
    }

    /// The constant polynomial 1.
    pub fn one(&self) -> RingPoly {
        let mut p = self.zero();
        p.coeffs[0] = 1;
        p
    }

    /// Validates length and range.
    pub fn from_coeffs(&self, coeffs: Vec<u128>) -> Result<RingPoly> {
        if coeffs.len() != self.params.n {
            return Err(Error::ParamMismatch(
                "coefficient count differs from ring degree",
            ));
        }
        if coeffs.iter().any(|&c| c >= self.params.q) {
            return Err(Error::Domain("coefficient not below q"));
        }
        Ok(RingPoly { coeffs })
    }

    /// Lifts signed integers into `[0, q)`; the slice is zero-padded to `n`.
    pub fn from_signed(&self, values: &[i128]) -> Result<RingPoly> {
        if values.len() > self.params.n {
            return Err(Error::ParamMismatch("more values than ring degree"));
        }
        let mut p = self.zero();
        for (c, &v) in p.coeffs.iter_mut().zip(values) {
            *c = self.lift(v);
        }
        Ok(p)
    }

    /// Residue of a signed integer.
    pub fn lift(&self, v: i128) -> u128 {
        let q = self.params.q;
        let r = v.unsigned_abs() % q;
        if v < 0 {
            self.modulus.neg(r)
        } else {
            r
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    pub fn centered(&self, c: u128) -> i128 {
        if c > self.params.q / 2 {
            -((self.params.q - c) as i128)
        } else {
            c as i128
        }
    }

    fn check(&self, a: &RingPoly) -> Result<()> {
        if a.coeffs.len() != self.params.n {
            return Err(Error::ParamMismatch("ring degree mismatch"));
        }
        Ok(())
    }

    pub fn add(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
        self.check(a)?;
        self.check(b)?;
        let m = &self.modulus;
        Ok(RingPoly {
            coeffs: a
                .coeffs
                .iter()
                .zip(&b.coeffs)
                .map(|(&x, &y)| m.add(x, y))
                .collect(),
        })
    }

    pub fn sub(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
        self.check(a)?;
        self.check(b)?;
        let m = &self.modulus;
        Ok(RingPoly {
            coeffs: a
                .coeffs
                .iter()
                .zip(&b.coeffs)
                .map(|(&x, &y)| m.sub(x, y))
                .collect(),
        })
    }

    pub fn neg(&self, a: &RingPoly) -> RingPoly {
        RingPoly {
            coeffs: a.coeffs.iter().map(|&x| self.modulus.neg(x)).collect(),
        }
    }

    /// Multiplies every coefficient by a residue `k < q`.
    pub fn scalar_mul(&self, a: &RingPoly, k: u128) -> RingPoly {
        let k = self.modulus.reduce(k);
        let ks = self.modulus.shoup(k);
        RingPoly {
            coeffs: a
                .coeffs
                .iter()
                .map(|&x| self.modulus.mul_shoup(x, k, ks))
                .collect(),
        }
    }

    /// Negacyclic product; NTT when available, schoolbook otherwise.
    pub fn mul(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
        if self.ntt.is_some() {
            self.mul_ntt(a, b)
        } else {
            self.mul_schoolbook(a, b)
        }
    }

    /// O(n^2) negacyclic convolution: `x^n = -1`.
    pub fn mul_schoolbook(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
        self.check(a)?;
        self.check(b)?;
        let m = &self.modulus;
        let n = self.params.n;
        // Accumulate in Montgomery form: mont_mul(a, b) = ab/R, one final
        // multiply by R^2 / R restores the plain residue.
        let mut acc = vec![0u128; n];
        for (i, &ai) in a.coeffs.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            for (j, &bj) in b.coeffs.iter().enumerate() {
                let p = m.mont_mul(ai, bj);
                let k = i + j;
                if k < n {
                    acc[k] = m.add(acc[k], p);
                } else {
                    acc[k - n] = m.sub(acc[k - n], p);
                }
            }
        }
        Ok(RingPoly {
            coeffs: acc.into_iter().map(|c| m.to_mont(c)).collect(),
        })
    }

    /// NTT-based negacyclic product. Errors if the ring has no NTT.
    pub fn mul_ntt(&self, a: &RingPoly, b: &RingPoly) -> Result<RingPoly> {
        self.check(a)?;
        self.check(b)?;
        let mut fa = a.coeffs.clone();
        let mut fb = b.coeffs.clone();
        self.forward(&mut fa)?;
        self.forward(&mut fb)?;
        self.pointwise_assign(&mut fa, &fb);
        self.inverse(&mut fa)?;
        Ok(RingPoly { coeffs: fa })
    }

    pub(crate) fn pointwise_assign(&self, a: &mut [u128], b: &[u128]) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x = self.modulus.mul(*x, y);
        }
    }

    /// In-place forward negacyclic NTT (Cooley-Tukey, bit-reversed output).
    pub(crate) fn forward(&self, a: &mut [u128]) -> Result<()> {
        let tables = self.ntt.as_ref().ok_or(Error::InvalidParams(
            "q does not support an NTT of this degree",
        ))?;
        let m = &self.modulus;
        let n = self.params.n;
        let mut t = n;
        let mut groups = 1;
        while groups < n {
            t >>= 1;
            for i in 0..groups {
                let (w, ws) = tables.fwd[groups + i];
                let start = 2 * i * t;
                let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = m.mul_shoup(*y, w, ws);
                    *x = m.add(u, v);
                    *y = m.sub(u, v);
                }
            }
            groups <<= 1;
        }
        Ok(())
    }

    /// In-place inverse negacyclic NTT (Gentleman-Sande), including `n^-1`.
    pub(crate) fn inverse(&self, a: &mut [u128]) -> Result<()> {
        let tables = self.ntt.as_ref().ok_or(Error::InvalidParams(
            "q does not support an NTT of this degree",
        ))?;
        let m = &self.modulus;
        let n = self.params.n;
        let mut t = 1;
        let mut groups = n;
        while groups > 1 {
            let half = groups >> 1;
            for i in 0..half {
                let (w, ws) = tables.inv[half + i];
                let start = 2 * i * t;
                let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    *x = m.add(u, v);
                    *y = m.mul_shoup(m.sub(u, v), w, ws);
                }
            }
            t <<= 1;
            groups = half;
        }
        let (ni, nis) = tables.n_inv;
        for x in a.iter_mut() {
            *x = m.mul_shoup(*x, ni, nis);
        }
        Ok(())
    }

    /// Wraps raw residues already known to satisfy the invariants.
    pub(crate) fn wrap(&self, coeffs: Vec<u128>) -> RingPoly {
        debug_assert_eq!(coeffs.len(), self.params.n);
        RingPoly { coeffs }
    }

    /// Coefficients i.i.d. uniform in `[0, q)`.
    pub fn sample_uniform(&self, r: &mut RandomSource) -> RingPoly {
        RingPoly {
            coeffs: (0..self.params.n).map(|_| r.below(self.params.q)).collect(),
        }
    }

    /// Coefficients i.i.d. uniform over `{-1, 0, 1}`.
    pub fn sample_ternary(&self, r: &mut RandomSource) -> RingPoly {
        let q = self.params.q;
        RingPoly {
            coeffs: (0..self.params.n)
                .map(|_| match r.below(3) {
                    0 => 0,
                    1 => 1,
                    _ => q - 1,
                })
                .collect(),
        }
    }

    /// Centered binomial noise with `eta = round(2 sigma^2)` coin pairs,
    /// giving variance `eta / 2`. `eta` is clamped to `[1, 64]`.
    ///
    /// Panics if `sigma` is not positive.
    pub fn sample_error(&self, sigma: f64, r: &mut RandomSource) -> RingPoly {
        assert!(sigma > 0.0, "sigma must be positive");
        let eta = cbd_eta(sigma);
        let mask = if eta == 64 {
            u64::MAX
        } else {
            (1u64 << eta) - 1
        };
        RingPoly {
            coeffs: (0..self.params.n)
                .map(|_| {
                    use rand::RngCore;
                    let a = (r.next_u64() & mask).count_ones() as i128;
                    let b = (r.next_u64() & mask).count_ones() as i128;
                    self.lift(a - b)
                })
                .collect(),
        }
    }

    /// Infinity norm of the centered representative.
    pub fn norm_inf(&self, a: &RingPoly) -> u128 {
        a.coeffs
            .iter()
            .map(|&c| self.centered(c).unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

/// Number of coin pairs used by the error sampler for a given stddev.
pub fn cbd_eta(sigma: f64) -> u32 {
    let eta = libm::round(2.0 * sigma * sigma);
    eta.clamp(1.0, 64.0) as u32
}
