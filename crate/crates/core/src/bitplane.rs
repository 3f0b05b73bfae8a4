//! Quantized tensors, bit-plane decomposition and per-bit sparsity counting.
//!
//! Everything downstream operates on this substrate: a `QuantTensor` stores
//! unsigned codes with affine quantization parameters, `decompose` splits the
//! codes into per-bit binary planes, and `count_sparsity` reduces a plane
//! group to the count of ones per bit index.

use crate::bitvec::BitVec;
use crate::error::{Error, Result};

pub const MAX_BIT_WIDTH: u8 = 8;

fn check_bit_width(bit_width: u8) -> Result<()> {
    if bit_width == 0 || bit_width > MAX_BIT_WIDTH {
        return Err(Error::BitWidth(bit_width));
    }
    Ok(())
}

/// Unsigned affine-quantized tensor: `real = scale * (code - zero_point)`.
///
/// Codes are stored row-major. Convolution activations use channel-last
/// layout (H x W x C); weights use one filter per row with the reduction
/// ordered kernel-row x kernel-col x input-channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    values: Vec<u8>,
    bit_width: u8,
    scale: f64,
    zero_point: u8,
}

impl QuantTensor {
    pub fn new(
        shape: Vec<usize>,
        values: Vec<u8>,
        bit_width: u8,
        scale: f64,
        zero_point: u8,
    ) -> Result<Self> {
        check_bit_width(bit_width)?;
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("expected {numel} values, got {}", values.len()),
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        let max_code = max_code(bit_width);
        if zero_point > max_code {
            return Err(Error::ValueOutOfRange {
                value: zero_point as u32,
                bits: bit_width,
            });
        }
        if let Some(&bad) = values.iter().find(|&&v| v > max_code) {
            return Err(Error::ValueOutOfRange {
                value: bad as u32,
                bits: bit_width,
            });
        }
        Ok(QuantTensor {
            shape,
            values,
            bit_width,
            scale,
            zero_point,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> u8 {
        self.zero_point
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dequantize(&self, index: usize) -> f64 {
        self.scale * (self.values[index] as f64 - self.zero_point as f64)
    }
}

/// Highest representable code for a bit width.
pub fn max_code(bit_width: u8) -> u8 {
    ((1u16 << bit_width) - 1) as u8
}

/// Per-bit binary planes of a code vector: plane `p` holds bit `p` of every
/// element, so `sum_p 2^p * plane_p[i]` reconstructs element `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlanes {
    bit_width: u8,
    planes: Vec<BitVec>,
    group_len: usize,
}

impl BitPlanes {
    pub fn from_values(values: &[u8], bit_width: u8) -> Result<Self> {
        check_bit_width(bit_width)?;
        let max = max_code(bit_width);
        let mut planes = vec![BitVec::zeros(values.len()); bit_width as usize];
        for (i, &v) in values.iter().enumerate() {
            if v > max {
                return Err(Error::ValueOutOfRange {
                    value: v as u32,
                    bits: bit_width,
                });
            }
            for (p, plane) in planes.iter_mut().enumerate() {
                if v >> p & 1 == 1 {
                    plane.set(i, true);
                }
            }
        }
        Ok(BitPlanes {
            bit_width,
            planes,
            group_len: values.len(),
        })
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    /// Length of the reduction dimension this plane set spans.
    pub fn group_len(&self) -> usize {
        self.group_len
    }

    pub fn plane(&self, p: u8) -> &BitVec {
        &self.planes[p as usize]
    }

    pub fn planes(&self) -> &[BitVec] {
        &self.planes
    }
}

/// Splits a tensor's codes into bit planes (row-major element order).
pub fn decompose(t: &QuantTensor) -> BitPlanes {
    // QuantTensor validated its codes on construction, so this cannot fail.
    BitPlanes::from_values(t.values(), t.bit_width()).expect("validated tensor")
}

/// Exact inverse of `decompose`.
pub fn recompose(b: &BitPlanes) -> Vec<u8> {
    let mut out = vec![0u8; b.group_len()];
    for p in 0..b.bit_width() {
        let plane = b.plane(p);
        for (i, v) in out.iter_mut().enumerate() {
            *v |= (plane.get(i) as u8) << p;
        }
    }
    out
}

/// Per-bit counts of ones over a reduction group of length N.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityVector {
    bit_width: u8,
    counts: Vec<u32>,
    group_len: usize,
}

impl SparsityVector {
    pub fn new(bit_width: u8, counts: Vec<u32>, group_len: usize) -> Result<Self> {
        check_bit_width(bit_width)?;
        if counts.len() != bit_width as usize {
            return Err(Error::LengthMismatch(counts.len(), bit_width as usize));
        }
        if group_len == 0 {
            return Err(Error::EmptyGroup);
        }
        if let Some(&bad) = counts.iter().find(|&&c| c as usize > group_len) {
            return Err(Error::CountOutOfRange {
                count: bad as u64,
                n: group_len,
            });
        }
        Ok(SparsityVector {
            bit_width,
            counts,
            group_len,
        })
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn group_len(&self) -> usize {
        self.group_len
    }

    pub fn count(&self, p: u8) -> u32 {
        self.counts[p as usize]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// `sum_p 2^p * S[p]`; equals the sum of the raw codes in the group.
    pub fn weighted_sum(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(p, &c)| (c as u64) << p)
            .sum()
    }
}

/// Counts ones per plane over the full vector (one group of length N).
pub fn count_sparsity(b: &BitPlanes) -> Result<SparsityVector> {
    if b.group_len() == 0 {
        return Err(Error::EmptyGroup);
    }
    let counts = b.planes().iter().map(|p| p.count_ones()).collect();
    SparsityVector::new(b.bit_width(), counts, b.group_len())
}

/// Counts ones per plane over consecutive groups of `group_len` elements.
///
/// With channel-last layout the channel axis is contiguous, so pixel-wise
/// grouping is exactly this chunking.
pub fn count_sparsity_groups(b: &BitPlanes, group_len: usize) -> Result<Vec<SparsityVector>> {
    if group_len == 0 {
        return Err(Error::EmptyGroup);
    }
    if !b.group_len().is_multiple_of(group_len) {
        return Err(Error::GroupMismatch {
            len: b.group_len(),
            group: group_len,
        });
    }
    (0..b.group_len() / group_len)
        .map(|g| {
            let start = g * group_len;
            let counts = b
                .planes()
                .iter()
                .map(|p| p.count_ones_range(start, start + group_len))
                .collect();
            SparsityVector::new(b.bit_width(), counts, group_len)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decompose_zero_and_all_ones() {
        let zero = BitPlanes::from_values(&[0], 8).unwrap();
        let ones = BitPlanes::from_values(&[255], 8).unwrap();
        for p in 0..8 {
            assert!(!zero.plane(p).get(0));
            assert!(ones.plane(p).get(0));
        }
    }

    #[test]
    fn decompose_178() {
        // 178 = 0b10110010, listed p7..p0: 1,0,1,1,0,0,1,0
        let b = BitPlanes::from_values(&[178], 8).unwrap();
        let msb_first: Vec<u8> = (0..8).rev().map(|p| b.plane(p).get(0) as u8).collect();
        assert_eq!(msb_first, vec![1, 0, 1, 1, 0, 0, 1, 0]);
        assert_eq!(recompose(&b), vec![178]);
    }

    #[test]
    fn roundtrip_exhaustive_u8() {
        // Exhaustive oracle: every 8-bit code decomposes and recomposes to itself.
        let all: Vec<u8> = (0..=255).collect();
        let b = BitPlanes::from_values(&all, 8).unwrap();
        assert_eq!(recompose(&b), all);
    }

    #[test]
    fn value_out_of_range_rejected() {
        assert!(matches!(
            BitPlanes::from_values(&[4], 2),
            Err(Error::ValueOutOfRange { .. })
        ));
        assert!(QuantTensor::new(vec![1], vec![16], 4, 1.0, 0).is_err());
    }

    #[test]
    fn hand_counted_sparsity() {
        // group [0b11, 0b01, 0b10] at 2 bits: S[0]=2, S[1]=2
        let b = BitPlanes::from_values(&[0b11, 0b01, 0b10], 2).unwrap();
        let s = count_sparsity(&b).unwrap();
        assert_eq!(s.counts(), &[2, 2]);
        assert_eq!(s.weighted_sum(), 3 + 1 + 2);
    }

    #[test]
    fn saturated_group_counts_full() {
        let vals = vec![255u8; 17];
        let s = count_sparsity(&BitPlanes::from_values(&vals, 8).unwrap()).unwrap();
        assert!(s.counts().iter().all(|&c| c == 17));
    }

    #[test]
    fn random_group_matches_popcount_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<u8> = (0..128).map(|_| rng.random()).collect();
        let s = count_sparsity(&BitPlanes::from_values(&vals, 8).unwrap()).unwrap();
        // Independent oracle: per-bit popcount straight off the codes.
        for p in 0..8 {
            let expect: u32 = vals.iter().map(|&v| (v >> p & 1) as u32).sum();
            assert_eq!(s.count(p), expect, "bit {p}");
        }
        assert_eq!(
            s.weighted_sum(),
            vals.iter().map(|&v| v as u64).sum::<u64>()
        );
    }

    #[test]
    fn grouped_counts_match_per_group_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let vals: Vec<u8> = (0..6 * 37).map(|_| rng.random()).collect();
        let b = BitPlanes::from_values(&vals, 8).unwrap();
        let groups = count_sparsity_groups(&b, 37).unwrap();
        assert_eq!(groups.len(), 6);
        for (g, s) in groups.iter().enumerate() {
            let chunk = &vals[g * 37..(g + 1) * 37];
            for p in 0..8 {
                let expect: u32 = chunk.iter().map(|&v| (v >> p & 1) as u32).sum();
                assert_eq!(s.count(p), expect);
            }
        }
    }

    #[test]
    fn empty_group_rejected() {
        let b = BitPlanes::from_values(&[], 8).unwrap();
        assert!(matches!(count_sparsity(&b), Err(Error::EmptyGroup)));
    }

    #[test]
    fn quant_roundtrip_on_representable_reals() {
        let t = QuantTensor::new(vec![4], vec![0, 3, 128, 255], 8, 0.25, 3).unwrap();
        for (i, &code) in t.values().iter().enumerate() {
            let real = t.dequantize(i);
            let back = (real / t.scale()).round() + t.zero_point() as f64;
            assert_eq!(back as u8, code);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_random_tensors(vals in proptest::collection::vec(0u8..=255, 0..300)) {
            let b = BitPlanes::from_values(&vals, 8).unwrap();
            prop_assert_eq!(recompose(&b), vals);
        }

        #[test]
        fn weighted_count_identity(vals in proptest::collection::vec(0u8..=255, 1..300)) {
            let s = count_sparsity(&BitPlanes::from_values(&vals, 8).unwrap()).unwrap();
            prop_assert_eq!(s.weighted_sum(), vals.iter().map(|&v| v as u64).sum::<u64>());
        }

        #[test]
        fn masking_linearity(vals in proptest::collection::vec(0u8..=255, 1..100), p in 0u8..8) {
            // plane p of (v AND 2^p) equals plane p of v
            let full = BitPlanes::from_values(&vals, 8).unwrap();
            let masked: Vec<u8> = vals.iter().map(|&v| v & (1 << p)).collect();
            let m = BitPlanes::from_values(&masked, 8).unwrap();
            prop_assert_eq!(m.plane(p), full.plane(p));
        }
    }
}
