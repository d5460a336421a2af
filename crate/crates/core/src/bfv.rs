//! Textbook RLWE-BFV restricted to what encrypted averaging needs:
//! ciphertext addition and ciphertext-plaintext multiplication.
//!
//! Parameter sets (ternary secret, centered-binomial error with sigma ~ 3.2,
//! plaintext modulus `t = 2^40`):
//!
//! | level  | n    | q                                         | log2 q |
//! |--------|------|-------------------------------------------|--------|
//! | SEC128 | 4096 | 324518553658426726822738439176193         | 109    |
//! | SEC192 | 8192 | 166153499473114484112984678628065281      | 118    |
//!
//! Both moduli are primes with `q = 1 mod 2^40`, so the NTT exists for every
//! supported degree and `q mod t = 1`, which keeps the plaintext-wrap term
//! out of the noise after additions.
//!
//! Operations that only need public material ([`Bfv::add`],
//! [`Bfv::mul_plain`], [`Bfv::encrypt`]) never accept a [`SecretKey`].

use alloc::vec::Vec;

use crate::arith::{div_wide, mul_wide};
use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::ring::{Ring, RingParams, RingPoly};

pub const SEC128_Q: u128 = 324_518_553_658_426_726_822_738_439_176_193;
pub const SEC192_Q: u128 = 166_153_499_473_114_484_112_984_678_628_065_281;
pub const PLAIN_MODULUS: u128 = 1 << 40;
pub const ERROR_SIGMA: f64 = 3.2;

pub const CIPHERTEXT_MAGIC: &[u8; 4] = b"HEFV";
pub const KEY_MAGIC: &[u8; 4] = b"HEFK";
pub const FORMAT_VERSION: u8 = 1;

/// Parameter-set identifier written into ciphertext headers.
pub const CUSTOM_LEVEL_ID: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecurityLevel {
    Sec128,
    Sec192,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 2] = [SecurityLevel::Sec128, SecurityLevel::Sec192];

    pub fn id(self) -> u8 {
        match self {
            SecurityLevel::Sec128 => 1,
            SecurityLevel::Sec192 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(SecurityLevel::Sec128),
            2 => Some(SecurityLevel::Sec192),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SecurityLevel::Sec128 => "SEC128",
            SecurityLevel::Sec192 => "SEC192",
        }
    }

    pub fn params(self) -> BfvParams {
        let (n, q) = match self {
            SecurityLevel::Sec128 => (4096, SEC128_Q),
            SecurityLevel::Sec192 => (8192, SEC192_Q),
        };
        BfvParams {
            level_id: self.id(),
            ring: RingParams::new(n, q, PLAIN_MODULUS).expect("static parameter set"),
            sigma: ERROR_SIGMA,
        }
    }
}

/// A ring plus error width, tagged with the id that goes on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfvParams {
    pub level_id: u8,
    pub ring: RingParams,
    pub sigma: f64,
}

impl BfvParams {
    /// Test-sized parameters; serialized with level id 0.
    pub fn custom(ring: RingParams, sigma: f64) -> Self {
        BfvParams {
            level_id: CUSTOM_LEVEL_ID,
            ring,
            sigma,
        }
    }
}

/// Public key `(pk0, pk1)` with `pk0 = -(pk1 * s + e)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) level_id: u8,
    pub(crate) pk0: RingPoly,
    pub(crate) pk1: RingPoly,
}

impl PublicKey {
    pub fn level_id(&self) -> u8 {
        self.level_id
    }

    pub fn parts(&self) -> (&RingPoly, &RingPoly) {
        (&self.pk0, &self.pk1)
    }
}

/// Ternary secret `s`. Only clients hold one.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) level_id: u8,
    pub(crate) s: RingPoly,
}

impl core::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SecretKey")
            .field("level_id", &self.level_id)
            .finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn poly(&self) -> &RingPoly {
        &self.s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Message polynomial with coefficients in `[0, t)` and a fixed-point scale
/// exponent (number of `2^f` factors baked in).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plaintext {
    coeffs: Vec<u128>,
    scale_exp: u8,
}

impl Plaintext {
    pub fn new(coeffs: Vec<u128>, t: u128, scale_exp: u8) -> Result<Self> {
        if coeffs.iter().any(|&c| c >= t) {
            return Err(Error::Domain("plaintext coefficient not below t"));
        }
        Ok(Plaintext { coeffs, scale_exp })
    }

    pub fn zero(n: usize, scale_exp: u8) -> Self {
        Plaintext {
            coeffs: alloc::vec![0; n],
            scale_exp,
        }
    }

    pub fn coeffs(&self) -> &[u128] {
        &self.coeffs
    }

    pub fn scale_exp(&self) -> u8 {
        self.scale_exp
    }
}

/// BFV ciphertext `(c0, c1)` with `c0 + c1 s = floor(q/t) m + v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub(crate) level_id: u8,
    pub(crate) scale_exp: u8,
    pub(crate) c0: RingPoly,
    pub(crate) c1: RingPoly,
}

impl Ciphertext {
    pub fn level_id(&self) -> u8 {
        self.level_id
    }

    pub fn scale_exp(&self) -> u8 {
        self.scale_exp
    }

    pub fn parts(&self) -> (&RingPoly, &RingPoly) {
        (&self.c0, &self.c1)
    }
}

/// Per-coefficient decryption detail: the unreduced rounded message
/// `k = round(t w / q)` and invariant noise `nu = t w - q k`.
struct Decryption {
    k: Vec<i128>,
    nu: Vec<i128>,
}

/// Scheme context for one parameter set.
#[derive(Debug)]
pub struct Bfv {
    params: BfvParams,
    ring: Ring,
    delta: u128,
}

impl Bfv {
    pub fn new(params: BfvParams) -> Self {
        let ring = Ring::new(params.ring);
        Bfv {
            delta: params.ring.q / params.ring.t,
            params,
            ring,
        }
    }

    pub fn with_level(level: SecurityLevel) -> Self {
        Bfv::new(level.params())
    }

    pub fn params(&self) -> &BfvParams {
        &self.params
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn degree(&self) -> usize {
        self.params.ring.n
    }

    pub fn plain_modulus(&self) -> u128 {
        self.params.ring.t
    }

    /// `floor(q / t)`.
    pub fn delta(&self) -> u128 {
        self.delta
    }

    pub fn level_id(&self) -> u8 {
        self.params.level_id
    }

    pub fn keygen(&self, r: &mut RandomSource) -> KeyPair {
        self.keygen_with_error(r).0
    }

    /// Key generation that also returns the error term `e`, for diagnostics.
    pub fn keygen_with_error(&self, r: &mut RandomSource) -> (KeyPair, RingPoly) {
        let ring = &self.ring;
        let s = ring.sample_ternary(r);
        let pk1 = ring.sample_uniform(r);
        let e = ring.sample_error(self.params.sigma, r);
        let pk1s = ring.mul(&pk1, &s).expect("same ring");
        let pk0 = ring.neg(&ring.add(&pk1s, &e).expect("same ring"));
        debug_assert_eq!(
            ring.add(&pk0, &ring.mul(&pk1, &s).unwrap()).unwrap(),
            ring.neg(&e)
        );
        let id = self.params.level_id;
        (
            KeyPair {
                public: PublicKey {
                    level_id: id,
                    pk0,
                    pk1,
                },
                secret: SecretKey { level_id: id, s },
            },
            e,
        )
    }

    fn check_level(&self, id: u8) -> Result<()> {
        if id != self.params.level_id {
            return Err(Error::ParamMismatch("security level"));
        }
        Ok(())
    }

    fn check_plaintext(&self, m: &Plaintext) -> Result<()> {
        if m.coeffs.len() != self.params.ring.n {
            return Err(Error::ParamMismatch(
                "plaintext length differs from ring degree",
            ));
        }
        if m.coeffs.iter().any(|&c| c >= self.params.ring.t) {
            return Err(Error::Domain("plaintext coefficient not below t"));
        }
        Ok(())
    }

    /// Products `a * b` for every `b` in `bs`, sharing the transform of `a`.
    fn mul_shared(&self, a: &RingPoly, bs: [&RingPoly; 2]) -> Result<[RingPoly; 2]> {
        let ring = &self.ring;
        if !ring.has_ntt() {
            return Ok([ring.mul(a, bs[0])?, ring.mul(a, bs[1])?]);
        }
        let mut fa = a.coeffs().to_vec();
        ring.forward(&mut fa)?;
        let mut out = bs.map(|b| b.coeffs().to_vec());
        for o in out.iter_mut() {
            ring.forward(o)?;
            ring.pointwise_assign(o, &fa);
            ring.inverse(o)?;
        }
        let [x, y] = out;
        Ok([ring.wrap(x), ring.wrap(y)])
    }

    /// `c0 = pk0 u + e1 + floor(q/t) m`, `c1 = pk1 u + e2`.
    pub fn encrypt(
        &self,
        m: &Plaintext,
        pk: &PublicKey,
        r: &mut RandomSource,
    ) -> Result<Ciphertext> {
        self.check_level(pk.level_id)?;
        self.check_plaintext(m)?;
        let ring = &self.ring;
        let u = ring.sample_ternary(r);
        let e1 = ring.sample_error(self.params.sigma, r);
        let e2 = ring.sample_error(self.params.sigma, r);
        let [p0u, p1u] = self.mul_shared(&u, [&pk.pk0, &pk.pk1])?;
        let scaled = ring.wrap(
            m.coeffs
                .iter()
                .map(|&c| ring.modulus().mul(c, self.delta))
                .collect(),
        );
        let c0 = ring.add(&ring.add(&p0u, &e1)?, &scaled)?;
        let c1 = ring.add(&p1u, &e2)?;
        Ok(Ciphertext {
            level_id: self.params.level_id,
            scale_exp: m.scale_exp.max(1),
            c0,
            c1,
        })
    }

    fn raw_decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Decryption> {
        self.check_level(ct.level_id)?;
        self.check_level(sk.level_id)?;
        let ring = &self.ring;
        let w = ring.add(&ct.c0, &ring.mul(&ct.c1, &sk.s)?)?;
        let (q, t) = (self.params.ring.q, self.params.ring.t);
        let mut k = Vec::with_capacity(w.len());
        let mut nu = Vec::with_capacity(w.len());
        for &c in w.coeffs() {
            let wc = ring.centered(c);
            let (lo, hi) = mul_wide(t, wc.unsigned_abs());
            let (quot, rem) = div_wide(hi, lo, q);
            // q is odd, so rem/q is never exactly one half
            let (mag, noise) = if 2 * rem >= q {
                (quot + 1, rem as i128 - q as i128)
            } else {
                (quot, rem as i128)
            };
            if wc < 0 {
                k.push(-(mag as i128));
                nu.push(-noise);
            } else {
                k.push(mag as i128);
                nu.push(noise);
            }
        }
        Ok(Decryption { k, nu })
    }

    fn reduce_t(&self, k: i128) -> u128 {
        k.rem_euclid(self.params.ring.t as i128) as u128
    }

    /// `m = round(t/q * [c0 + c1 s]_q) mod t`, rejecting results whose
    /// invariant noise exceeds `q/4` on any coefficient.
    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
        let d = self.raw_decrypt(ct, sk)?;
        let limit = (self.params.ring.q / 4) as i128;
        if d.nu.iter().any(|v| v.abs() > limit) {
            return Err(Error::NoiseOverflow);
        }
        Ok(Plaintext {
            coeffs: d.k.iter().map(|&k| self.reduce_t(k)).collect(),
            scale_exp: ct.scale_exp,
        })
    }

    /// Decryption without the noise consistency check.
    pub fn decrypt_unchecked(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
        let d = self.raw_decrypt(ct, sk)?;
        Ok(Plaintext {
            coeffs: d.k.iter().map(|&k| self.reduce_t(k)).collect(),
            scale_exp: ct.scale_exp,
        })
    }

    /// Remaining noise budget in bits, `log2(q / (2 ||nu||_inf))`, measured
    /// against the decrypted message. Requires the secret key.
    pub fn noise_budget(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<f64> {
        let d = self.raw_decrypt(ct, sk)?;
        let worst =
            d.nu.iter()
                .map(|v| v.unsigned_abs())
                .max()
                .unwrap_or(0)
                .max(1);
        let q = self.params.ring.q as f64;
        Ok(libm::log2(q / (2.0 * worst as f64)))
    }

    /// Noise budget measured against the intended plaintext. Non-positive
    /// exactly when decryption disagrees with `expected`.
    pub fn noise_budget_against(
        &self,
        ct: &Ciphertext,
        sk: &SecretKey,
        expected: &Plaintext,
    ) -> Result<f64> {
        self.check_plaintext(expected)?;
        let d = self.raw_decrypt(ct, sk)?;
        let t = self.params.ring.t as i128;
        let q = self.params.ring.q as f64;
        let mut worst = 0.0f64;
        for ((&k, &nu), &m) in d.k.iter().zip(&d.nu).zip(&expected.coeffs) {
            let mut diff = (k - m as i128).rem_euclid(t);
            if diff > t / 2 {
                diff -= t;
            }
            let rel = libm::fabs(diff as f64 + nu as f64 / q);
            worst = worst.max(rel);
        }
        if worst == 0.0 {
            worst = 1.0 / q;
        }
        Ok(-libm::log2(2.0 * worst))
    }

    /// Homomorphic addition.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check_level(a.level_id)?;
        self.check_level(b.level_id)?;
        if a.scale_exp != b.scale_exp {
            return Err(Error::ParamMismatch("scale exponent"));
        }
        Ok(Ciphertext {
            level_id: a.level_id,
            scale_exp: a.scale_exp,
            c0: self.ring.add(&a.c0, &b.c0)?,
            c1: self.ring.add(&a.c1, &b.c1)?,
        })
    }

    /// Ciphertext-plaintext multiplication; scale exponents add.
    ///
    /// Plaintext coefficients are lifted from their centered representative
    /// mod `t`, which keeps the noise growth proportional to `|p|`.
    pub fn mul_plain(&self, a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext> {
        self.check_level(a.level_id)?;
        self.check_plaintext(p)?;
        let t = self.params.ring.t;
        let ring = &self.ring;
        let lifted = ring.wrap(
            p.coeffs
                .iter()
                .map(|&c| {
                    if c > t / 2 {
                        ring.lift(c as i128 - t as i128)
                    } else {
                        c
                    }
                })
                .collect(),
        );
        let scale_exp = a
            .scale_exp
            .checked_add(p.scale_exp)
            .ok_or(Error::Domain("scale exponent overflow"))?;
        let [c0, c1] = self.mul_shared(&lifted, [&a.c0, &a.c1])?;
        Ok(Ciphertext {
            level_id: a.level_id,
            scale_exp,
            c0,
            c1,
        })
    }

    /// Size in bytes of a serialized ciphertext.
    pub fn ciphertext_len(&self) -> usize {
        CT_HEADER_LEN + 2 * self.params.ring.n * self.params.ring.q_bytes()
    }

    /// `"HEFV" | version u8 | level u8 | scale_exp u8 | n u32 LE | q bytes u16 LE`,
    /// then `c0` and `c1` coefficients, little-endian, `q bytes` wide each.
    pub fn serialize_ciphertext(&self, ct: &Ciphertext) -> Vec<u8> {
        let width = self.params.ring.q_bytes();
        let mut out = Vec::with_capacity(self.ciphertext_len());
        out.extend_from_slice(CIPHERTEXT_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(ct.level_id);
        out.push(ct.scale_exp);
        out.extend_from_slice(&(self.params.ring.n as u32).to_le_bytes());
        out.extend_from_slice(&(width as u16).to_le_bytes());
        write_poly(&mut out, &ct.c0, width);
        write_poly(&mut out, &ct.c1, width);
        out
    }

    /// Parses one ciphertext from the front of `bytes`; returns it and the
    /// number of bytes consumed.
    pub fn deserialize_ciphertext(&self, bytes: &[u8]) -> Result<(Ciphertext, usize)> {
        if bytes.len() < CT_HEADER_LEN {
            return Err(Error::Decode("truncated ciphertext header"));
        }
        if &bytes[..4] != CIPHERTEXT_MAGIC {
            return Err(Error::Decode("bad ciphertext magic"));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Decode("unsupported ciphertext version"));
        }
        let level_id = bytes[5];
        let scale_exp = bytes[6];
        let n = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let width = u16::from_le_bytes(bytes[11..13].try_into().unwrap()) as usize;
        self.check_level(level_id)?;
        if n != self.params.ring.n || width != self.params.ring.q_bytes() {
            return Err(Error::ParamMismatch(
                "ciphertext header does not match parameters",
            ));
        }
        let total = self.ciphertext_len();
        if bytes.len() < total {
            return Err(Error::Decode("truncated ciphertext body"));
        }
        let mut pos = CT_HEADER_LEN;
        let c0 = read_poly(&self.ring, &bytes[pos..], width)?;
        pos += n * width;
        let c1 = read_poly(&self.ring, &bytes[pos..], width)?;
        Ok((
            Ciphertext {
                level_id,
                scale_exp,
                c0,
                c1,
            },
            total,
        ))
    }

    /// Key file body: `"HEFK" | version | kind (0 public, 1 secret) | level |
    /// n u32 LE | q bytes u16 LE | polys`.
    pub fn serialize_public_key(&self, pk: &PublicKey) -> Vec<u8> {
        let mut out = self.key_header(0, pk.level_id);
        let w = self.params.ring.q_bytes();
        write_poly(&mut out, &pk.pk0, w);
        write_poly(&mut out, &pk.pk1, w);
        out
    }

    pub fn serialize_secret_key(&self, sk: &SecretKey) -> Vec<u8> {
        let mut out = self.key_header(1, sk.level_id);
        write_poly(&mut out, &sk.s, self.params.ring.q_bytes());
        out
    }

    fn key_header(&self, kind: u8, level_id: u8) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(KEY_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(kind);
        out.push(level_id);
        out.extend_from_slice(&(self.params.ring.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.ring.q_bytes() as u16).to_le_bytes());
        out
    }

    fn parse_key<'a>(&self, bytes: &'a [u8], kind: u8) -> Result<&'a [u8]> {
        if bytes.len() < KEY_HEADER_LEN || &bytes[..4] != KEY_MAGIC {
            return Err(Error::Decode("bad key header"));
        }
        if bytes[4] != FORMAT_VERSION || bytes[5] != kind {
            return Err(Error::Decode("unexpected key version or kind"));
        }
        self.check_level(bytes[6])?;
        let n = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let width = u16::from_le_bytes(bytes[11..13].try_into().unwrap()) as usize;
        if n != self.params.ring.n || width != self.params.ring.q_bytes() {
            return Err(Error::ParamMismatch("key header does not match parameters"));
        }
        Ok(&bytes[KEY_HEADER_LEN..])
    }

    pub fn deserialize_public_key(&self, bytes: &[u8]) -> Result<PublicKey> {
        let body = self.parse_key(bytes, 0)?;
        let w = self.params.ring.q_bytes();
        let step = self.params.ring.n * w;
        if body.len() != 2 * step {
            return Err(Error::Decode("public key length"));
        }
        Ok(PublicKey {
            level_id: self.params.level_id,
            pk0: read_poly(&self.ring, body, w)?,
            pk1: read_poly(&self.ring, &body[step..], w)?,
        })
    }

    pub fn deserialize_secret_key(&self, bytes: &[u8]) -> Result<SecretKey> {
        let body = self.parse_key(bytes, 1)?;
        let w = self.params.ring.q_bytes();
        if body.len() != self.params.ring.n * w {
            return Err(Error::Decode("secret key length"));
        }
        Ok(SecretKey {
            level_id: self.params.level_id,
            s: read_poly(&self.ring, body, w)?,
        })
    }
}

pub const CT_HEADER_LEN: usize = 13;
const KEY_HEADER_LEN: usize = 13;

/// Reads the level id from a serialized ciphertext header.
pub fn peek_level(bytes: &[u8]) -> Result<u8> {
    if bytes.len() < CT_HEADER_LEN || &bytes[..4] != CIPHERTEXT_MAGIC {
        return Err(Error::Decode("bad ciphertext header"));
    }
    Ok(bytes[5])
}

fn write_poly(out: &mut Vec<u8>, p: &RingPoly, width: usize) {
    for &c in p.coeffs() {
        out.extend_from_slice(&c.to_le_bytes()[..width]);
    }
}

fn read_poly(ring: &Ring, bytes: &[u8], width: usize) -> Result<RingPoly> {
    let n = ring.params().n;
    if bytes.len() < n * width {
        return Err(Error::Decode("truncated polynomial"));
    }
    let coeffs = bytes[..n * width]
        .chunks_exact(width)
        .map(|c| {
            let mut buf = [0u8; 16];
            buf[..width].copy_from_slice(c);
            u128::from_le_bytes(buf)
        })
        .collect();
    ring.from_coeffs(coeffs)
        .map_err(|_| Error::Decode("coefficient not below q"))
}
