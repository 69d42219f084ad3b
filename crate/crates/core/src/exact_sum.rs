//! Order-independent summation of nonnegative doubles.
//!
//! Every addend is split into its integer significand and binary exponent and
//! added into a per-exponent `u128` bin, so accumulation is exact. The final
//! value is the correctly rounded (round-half-even) double of the exact sum. As a
//! consequence the result does not depend on the order in which terms are
//! added or on how partial accumulators are merged, which is what makes the
//! energy reproducible across thread counts and point orderings.

const BINS: usize = 2048;
const LIMBS: usize = 36;

#[derive(Clone)]
pub struct ExactSum {
    bins: Box<[u128]>,
    count: u64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactSum")
            .field("value", &self.value())
            .field("count", &self.count)
            .finish()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum {
            bins: vec![0u128; BINS].into_boxed_slice(),
            count: 0,
        }
    }

    /// Adds a nonnegative finite value.
    #[inline]
    pub fn add(&mut self, x: f64) {
        debug_assert!(x >= 0.0 && x.is_finite(), "ExactSum::add({x})");
        let bits = x.to_bits();
        let exp = (bits >> 52) as usize;
        let frac = bits & ((1u64 << 52) - 1);
        let (idx, mant) = if exp == 0 {
            (1, frac)
        } else {
            (exp, frac | (1u64 << 52))
        };
        self.bins[idx] += mant as u128;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += *b;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Correctly rounded value of the exact sum.
    pub fn value(&self) -> f64 {
        // big integer N with sum = N * 2^-1074
        let mut limbs = [0u64; LIMBS];
        for (idx, &v) in self.bins.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let shift = idx - 1;
            let (li, off) = (shift / 64, shift % 64);
            let parts = [
                (v << off) as u64,
                if off == 0 {
                    (v >> 64) as u64
                } else {
                    ((v >> (64 - off)) & u64::MAX as u128) as u64
                },
                if off == 0 {
                    0
                } else {
                    (v >> (128 - off)) as u64
                },
            ];
            let mut carry = 0u64;
            for (k, &p) in parts.iter().enumerate() {
                let (s1, c1) = limbs[li + k].overflowing_add(p);
                let (s2, c2) = s1.overflowing_add(carry);
                limbs[li + k] = s2;
                carry = (c1 as u64) + (c2 as u64);
            }
            let mut k = li + 3;
            while carry != 0 {
                let (s, c) = limbs[k].overflowing_add(carry);
                limbs[k] = s;
                carry = c as u64;
                k += 1;
            }
        }
        let Some(top) = (0..LIMBS).rev().find(|&i| limbs[i] != 0) else {
            return 0.0;
        };
        let p = top * 64 + 63 - limbs[top].leading_zeros() as usize;
        let bit = |i: usize| (limbs[i / 64] >> (i % 64)) & 1;
        if p < 53 {
            let v = limbs[0];
            return v as f64 * f64::from_bits(1);
        }
        let mut mant = 0u64;
        for i in (p - 52..=p).rev() {
            mant = (mant << 1) | bit(i);
        }
        let round = bit(p - 53);
        let sticky = if p >= 54 {
            let below = p - 53;
            let full = below / 64;
            (0..full).any(|i| limbs[i] != 0)
                || (below % 64 != 0 && limbs[full] & ((1u64 << (below % 64)) - 1) != 0)
        } else {
            false
        };
        let mut biased = (p - 51) as u64;
        if round == 1 && (sticky || mant & 1 == 1) {
            mant += 1;
            if mant == 1u64 << 53 {
                mant >>= 1;
                biased += 1;
            }
        }
        if biased >= 2047 {
            return f64::INFINITY;
        }
        f64::from_bits((biased << 52) | (mant & ((1u64 << 52) - 1)))
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}
