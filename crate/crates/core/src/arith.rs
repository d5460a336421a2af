//! Exact arithmetic on residues modulo an odd `q < 2^127`.
//!
//! Products of two residues need 256 bits; they are formed from four 64-bit
//! limb products and reduced either by Montgomery reduction (general
//! products) or by Shoup's precomputed-quotient trick (products with a fixed
//! operand, i.e. NTT twiddles).

/// Full 256-bit product as `(lo, hi)`.
#[inline]
pub fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 as u64 as u128) + (p10 as u64 as u128);
    let lo = (p00 as u64 as u128) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (lo, hi)
}

/// Divides the 256-bit value `hi:lo` by `d`, returning `(quotient, remainder)`.
///
/// Requires `hi < d < 2^127`, so the quotient fits in 128 bits.
pub fn div_wide(hi: u128, lo: u128, d: u128) -> (u128, u128) {
    debug_assert!(hi < d && d < (1u128 << 127));
    let mut rem = hi;
    let mut quot = 0u128;
    for i in (0..128).rev() {
        rem = (rem << 1) | ((lo >> i) & 1);
        quot <<= 1;
        if rem >= d {
            rem -= d;
            quot |= 1;
        }
    }
    (quot, rem)
}

/// A fixed odd modulus with precomputed Montgomery constants (R = 2^128).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modulus {
    q: u128,
    /// -q^{-1} mod 2^128
    q_neg_inv: u128,
    /// R^2 mod q
    r2: u128,
}

impl Modulus {
    /// `q` must be odd, greater than 1 and below 2^127.
    pub fn new(q: u128) -> Option<Self> {
        if q < 3 || q & 1 == 0 || q >= (1u128 << 127) {
            return None;
        }
        // Newton iteration doubles correct low bits each step; q*q = 1 mod 8.
        let mut inv = q;
        for _ in 0..7 {
            inv = inv.wrapping_mul(2u128.wrapping_sub(q.wrapping_mul(inv)));
        }
        debug_assert_eq!(q.wrapping_mul(inv), 1);
        let r1 = (u128::MAX % q + 1) % q;
        let (lo, hi) = mul_wide(r1, r1);
        let r2 = div_wide(hi, lo, q).1;
        Some(Modulus {
            q,
            q_neg_inv: inv.wrapping_neg(),
            r2,
        })
    }

    #[inline]
    pub fn value(&self) -> u128 {
        self.q
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        // a, b < q < 2^127: no overflow
        let s = a + b;
        if s >= self.q {
            s - self.q
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            a + self.q - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    /// Montgomery reduction of `hi:lo < q * 2^128`.
    #[inline]
    fn redc(&self, lo: u128, hi: u128) -> u128 {
        let m = lo.wrapping_mul(self.q_neg_inv);
        let (mlo, mhi) = mul_wide(m, self.q);
        let carry = lo.overflowing_add(mlo).1 as u128;
        let t = hi + mhi + carry;
        if t >= self.q {
            t - self.q
        } else {
            t
        }
    }

    /// `a * b * 2^-128 mod q`.
    #[inline]
    pub fn mont_mul(&self, a: u128, b: u128) -> u128 {
        let (lo, hi) = mul_wide(a, b);
        self.redc(lo, hi)
    }

    #[inline]
    pub fn to_mont(&self, a: u128) -> u128 {
        self.mont_mul(a, self.r2)
    }

    #[inline]
    pub fn from_mont(&self, a: u128) -> u128 {
        self.redc(a, 0)
    }

    /// `a * b mod q` for reduced operands.
    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        self.mont_mul(self.mont_mul(a, b), self.r2)
    }

    /// Reduces an arbitrary 128-bit value.
    #[inline]
    pub fn reduce(&self, a: u128) -> u128 {
        a % self.q
    }

    pub fn pow(&self, base: u128, mut exp: u128) -> u128 {
        let mut acc = self.to_mont(1);
        let mut b = self.to_mont(self.reduce(base));
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mont_mul(acc, b);
            }
            b = self.mont_mul(b, b);
            exp >>= 1;
        }
        self.from_mont(acc)
    }

    /// Multiplicative inverse for prime `q` (Fermat).
    pub fn inv_prime(&self, a: u128) -> u128 {
        self.pow(a, self.q - 2)
    }

    /// Shoup companion `floor(w * 2^128 / q)` for a fixed multiplier `w < q`.
    pub fn shoup(&self, w: u128) -> u128 {
        div_wide(w, 0, self.q).0
    }

    /// `a * w mod q` using the precomputed Shoup companion of `w`.
    #[inline]
    pub fn mul_shoup(&self, a: u128, w: u128, w_shoup: u128) -> u128 {
        let quot = mul_wide(a, w_shoup).1;
        let r = a.wrapping_mul(w).wrapping_sub(quot.wrapping_mul(self.q));
        if r >= self.q {
            r - self.q
        } else {
            r
        }
    }

    /// Miller-Rabin with the first 24 prime bases.
    pub fn is_prime(&self) -> bool {
        const BASES: [u128; 24] = [
            2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83,
            89,
        ];
        let q = self.q;
        if BASES.contains(&q) {
            return true;
        }
        if BASES.iter().any(|&b| q.is_multiple_of(b)) {
            return false;
        }
        let d_shift = (q - 1).trailing_zeros();
        let d = (q - 1) >> d_shift;
        'witness: for &a in BASES.iter() {
            let mut x = self.pow(a, d);
            if x == 1 || x == q - 1 {
                continue;
            }
            for _ in 1..d_shift {
                x = self.mul(x, x);
                if x == q - 1 {
                    continue 'witness;
                }
            }
            return false;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_product_matches_split_check() {
        let a = u128::MAX;
        let b = u128::MAX;
        // (2^128-1)^2 = 2^256 - 2^129 + 1
        assert_eq!(mul_wide(a, b), (1, u128::MAX - 1));
        assert_eq!(mul_wide(1 << 64, 1 << 64), (0, 1));
    }

    #[test]
    fn small_modulus_arithmetic() {
        let m = Modulus::new(17).unwrap();
        assert_eq!(m.add(16, 5), 4);
        assert_eq!(m.sub(3, 5), 15);
        assert_eq!(m.mul(16, 16), 1);
        assert_eq!(m.mul(5, 7), 1);
        assert_eq!(m.inv_prime(3), 6);
        assert!(m.is_prime());
        assert!(!Modulus::new(21).unwrap().is_prime());
    }

    #[test]
    fn rejects_even_and_oversized() {
        assert!(Modulus::new(16).is_none());
        assert!(Modulus::new(1).is_none());
        assert!(Modulus::new((1u128 << 127) + 1).is_none());
    }

    #[test]
    fn shoup_matches_montgomery() {
        let q = 324518553658426726822738439176193u128;
        let m = Modulus::new(q).unwrap();
        let w = q / 3 + 12345;
        let ws = m.shoup(w);
        for a in [0u128, 1, 2, q - 1, q / 2, 987654321987654321] {
            assert_eq!(m.mul_shoup(a, w, ws), m.mul(a, w));
        }
    }

    #[test]
    fn division_recovers_product() {
        let q = 166153499473114484112984678628065281u128;
        let a = q - 7;
        let b = 1u128 << 100;
        let (lo, hi) = mul_wide(a, b);
        let (quot, rem) = div_wide(hi, lo, q);
        let (plo, phi) = mul_wide(quot, q);
        let (sum, c) = plo.overflowing_add(rem);
        assert_eq!((sum, phi + c as u128), (lo, hi));
        assert!(rem < q);
    }
}
