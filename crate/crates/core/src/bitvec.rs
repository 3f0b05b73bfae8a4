//! Packed binary vectors, the storage behind bit planes.
//!
//! A `BitVec` holds one bit per logical element, packed 64 to a word. All
//! contracts elsewhere in the crate are stated on logical bits; packing is an
//! internal detail.

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A fixed-length packed bit vector. Bits beyond `len` are kept zero so that
/// word-level popcounts are exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec {
            words: vec![0; len.div_ceil(WORD_BITS)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = BitVec::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    /// Number of ones over the whole vector.
    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of ones in the half-open logical range `[start, end)`.
    pub fn count_ones_range(&self, start: usize, end: usize) -> u32 {
        debug_assert!(start <= end && end <= self.len);
        if start == end {
            return 0;
        }
        let (fw, fb) = (start / WORD_BITS, start % WORD_BITS);
        let (lw, lb) = ((end - 1) / WORD_BITS, (end - 1) % WORD_BITS);
        let head_mask = !0u64 << fb;
        let tail_mask = !0u64 >> (WORD_BITS - 1 - lb);
        if fw == lw {
            return (self.words[fw] & head_mask & tail_mask).count_ones();
        }
        let mut total = (self.words[fw] & head_mask).count_ones();
        for w in &self.words[fw + 1..lw] {
            total += w.count_ones();
        }
        total + (self.words[lw] & tail_mask).count_ones()
    }

    /// Popcount of the elementwise AND with `other`; the binary MAC kernel.
    pub fn and_count(&self, other: &BitVec) -> Result<u32> {
        if self.len != other.len {
            return Err(Error::LengthMismatch(self.len, other.len));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum())
    }

    /// Cyclic rotation: bit `i` of the result is bit `(i + k) mod len` of self.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.len;
        if n == 0 {
            return self.clone();
        }
        let k = k % n;
        let mut out = BitVec::zeros(n);
        for i in 0..n {
            if self.get((i + k) % n) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_popcount_matches_loop() {
        let mut v = BitVec::zeros(200);
        for i in (0..200).step_by(3) {
            v.set(i, true);
        }
        for (start, end) in [(0, 200), (0, 64), (63, 65), (5, 191), (128, 128), (70, 130)] {
            let naive: u32 = (start..end).map(|i| v.get(i) as u32).sum();
            assert_eq!(v.count_ones_range(start, end), naive, "[{start}, {end})");
        }
    }

    #[test]
    fn and_count_rejects_mismatched_lengths() {
        let a = BitVec::zeros(10);
        let b = BitVec::zeros(11);
        assert!(a.and_count(&b).is_err());
    }

    #[test]
    fn rotation_is_cyclic() {
        let v = BitVec::from_bools(&[true, false, false, true, true]);
        let r = v.rotated(2);
        // result[i] = v[(i + 2) mod 5]
        let expect = [false, true, true, true, false];
        assert_eq!(r.iter().collect::<Vec<_>>(), expect);
        assert_eq!(v.rotated(5), v);
        assert_eq!(v.rotated(7), v.rotated(2));
    }
}
