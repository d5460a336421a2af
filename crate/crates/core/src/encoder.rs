//! Fixed-point packing of real weight vectors into plaintext polynomials.
//!
//! A value `x` becomes the coefficient `round(2^f x) mod t`, negatives in
//! their `t`-complement form. Values are packed `slots` per plaintext in
//! order; the last chunk is zero-padded and the true length travels in the
//! [`WeightManifest`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::bfv::Plaintext;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    frac_bits: u32,
    t: u128,
    slots: usize,
    value_bound: f64,
}

impl EncodingConfig {
    /// `headroom` is the largest factor an encoded value is multiplied by
    /// after encoding (client count for plain sums, `2^f` for the
    /// multiply-by-`1/c` path). The constructor enforces
    /// `2^f * value_bound * headroom < t / 2`.
    pub fn new(
        frac_bits: u32,
        t: u128,
        slots: usize,
        value_bound: f64,
        headroom: f64,
    ) -> Result<Self> {
        if slots == 0 {
            return Err(Error::InvalidParams("slots must be positive"));
        }
        if frac_bits == 0 || frac_bits > 60 {
            return Err(Error::InvalidParams("frac_bits must be in 1..=60"));
        }
        if !(value_bound.is_finite() && value_bound > 0.0 && headroom >= 1.0) {
            return Err(Error::InvalidParams("value bound and headroom"));
        }
        let scale = pow2(frac_bits as i32);
        if scale * value_bound * headroom >= t as f64 / 2.0 {
            return Err(Error::InvalidParams(
                "2^f * value_bound * headroom must stay below t/2",
            ));
        }
        Ok(EncodingConfig {
            frac_bits,
            t,
            slots,
            value_bound,
        })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn plain_modulus(&self) -> u128 {
        self.t
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }

    /// `2^f`.
    pub fn scale(&self) -> f64 {
        pow2(self.frac_bits as i32)
    }

    /// Number of plaintexts needed for `len` values.
    pub fn chunk_count(&self, len: usize) -> usize {
        len.div_ceil(self.slots)
    }

    fn residue(&self, v: i128) -> u128 {
        v.rem_euclid(self.t as i128) as u128
    }

    fn centered(&self, c: u128) -> i128 {
        if c > self.t / 2 {
            c as i128 - self.t as i128
        } else {
            c as i128
        }
    }
}

/// Exact power of two as f64.
fn pow2(e: i32) -> f64 {
    libm::ldexp(1.0, e)
}

/// Flat real-valued weights plus the tensor shape they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub layer_shape: Vec<usize>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        let len = values.len();
        WeightVector {
            values,
            layer_shape: vec![len],
        }
    }
}

fn quantize(x: f64, cfg: &EncodingConfig) -> Result<i128> {
    if !x.is_finite() {
        return Err(Error::Domain("non-finite weight"));
    }
    if libm::fabs(x) > cfg.value_bound {
        return Err(Error::Range {
            value: x,
            bound: cfg.value_bound,
        });
    }
    Ok(libm::round(x * cfg.scale()) as i128)
}

/// Packs `values` into `ceil(len / slots)` plaintexts with scale exponent 1.
pub fn encode_fractional(values: &[f64], cfg: &EncodingConfig) -> Result<Vec<Plaintext>> {
    let mut out = Vec::with_capacity(cfg.chunk_count(values.len()));
    for chunk in values.chunks(cfg.slots) {
        let mut coeffs = vec![0u128; cfg.slots];
        for (c, &x) in coeffs.iter_mut().zip(chunk) {
            *c = cfg.residue(quantize(x, cfg)?);
        }
        out.push(Plaintext::new(coeffs, cfg.t, 1)?);
    }
    Ok(out)
}

/// Constant polynomial `round(2^f x)`, scale exponent 1.
pub fn encode_scalar(x: f64, cfg: &EncodingConfig) -> Result<Plaintext> {
    let mut coeffs = vec![0u128; cfg.slots];
    coeffs[0] = cfg.residue(quantize(x, cfg)?);
    Plaintext::new(coeffs, cfg.t, 1)
}

/// Centered lift mod `t`, division by `2^(f * scale_exp)`, padding dropped.
pub fn decode_fractional(
    chunks: &[Plaintext],
    count: usize,
    cfg: &EncodingConfig,
) -> Result<Vec<f64>> {
    let Some(first) = chunks.first() else {
        return if count == 0 {
            Ok(Vec::new())
        } else {
            Err(Error::Shape(String::from("no chunks to decode")))
        };
    };
    let scale_exp = first.scale_exp();
    if let Some(bad) = chunks.iter().find(|p| p.scale_exp() != scale_exp) {
        return Err(Error::ScaleMismatch {
            expected: scale_exp,
            found: bad.scale_exp(),
        });
    }
    if chunks.iter().map(|p| p.coeffs().len()).sum::<usize>() < count {
        return Err(Error::Shape(String::from(
            "fewer coefficients than requested values",
        )));
    }
    let divisor = pow2(-((cfg.frac_bits * scale_exp as u32) as i32));
    Ok(chunks
        .iter()
        .flat_map(|p| p.coeffs().iter())
        .take(count)
        .map(|&c| cfg.centered(c) as f64 * divisor)
        .collect())
}

/// One tensor in the flattened weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<u32>,
    /// Start index in the flat vector.
    pub offset: u32,
    pub count: u32,
}

/// Cleartext description of how a model was flattened and chunked.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightManifest {
    pub entries: Vec<ManifestEntry>,
    /// Values per chunk; 0 when the vector is sent unpacked (plain mode).
    pub slots: u32,
}

impl WeightManifest {
    /// Builds consecutive entries from `(name, shape)` pairs.
    pub fn from_shapes<I, S>(tensors: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<u32>)>,
        S: Into<String>,
    {
        let mut offset = 0u32;
        let entries = tensors
            .into_iter()
            .map(|(name, shape)| {
                let count = shape.iter().product::<u32>();
                let e = ManifestEntry {
                    name: name.into(),
                    shape,
                    offset,
                    count,
                };
                offset += count;
                e
            })
            .collect();
        WeightManifest { entries, slots: 0 }
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots = slots as u32;
        self
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.count as usize).sum()
    }

    pub fn chunk_count(&self) -> usize {
        if self.slots == 0 {
            return 0;
        }
        self.total_len().div_ceil(self.slots as usize)
    }

    /// Chunk index range `[start, end)` holding an entry's values.
    pub fn chunk_range(&self, entry: &ManifestEntry) -> (u32, u32) {
        if self.slots == 0 || entry.count == 0 {
            return (0, 0);
        }
        let start = entry.offset / self.slots;
        let end = (entry.offset + entry.count - 1) / self.slots + 1;
        (start, end)
    }

    /// Entries must tile `[0, total_len)` in order.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0u32;
        for e in &self.entries {
            if e.offset != next || e.shape.iter().product::<u32>() != e.count {
                return Err(Error::Shape(alloc::format!(
                    "manifest entry {} is inconsistent",
                    e.name
                )));
            }
            next += e.count;
        }
        Ok(())
    }
}
