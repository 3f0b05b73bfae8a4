//! On-die sparsity encoder model.
//!
//! Activations are reduced to per-bit counter states: pixel-wise across
//! channels for CONV layers, layer-wise for LINEAR layers. Encoding may be
//! chunked and resumed through a serializable counter state, which models the
//! intermediate encoding buffer of a single-bank system. Compression
//! statistics quantify what the counter representation saves over raw bits.

use crate::bitplane::{
    count_sparsity, count_sparsity_groups, decompose, max_code, QuantTensor, SparsityVector,
};
use crate::error::{Error, Result};
use std::io::{Read, Write};

/// Running per-bit counters while a reduction group streams through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderState {
    bit_width: u8,
    counters: Vec<u32>,
    counted: usize,
    group_target: usize,
}

impl EncoderState {
    pub fn new(bit_width: u8, group_target: usize) -> Result<Self> {
        if bit_width == 0 || bit_width > 8 {
            return Err(Error::BitWidth(bit_width));
        }
        if group_target == 0 {
            return Err(Error::EmptyGroup);
        }
        Ok(EncoderState {
            bit_width,
            counters: vec![0; bit_width as usize],
            counted: 0,
            group_target,
        })
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn counted(&self) -> usize {
        self.counted
    }

    pub fn group_target(&self) -> usize {
        self.group_target
    }

    /// Streams one chunk of codes into the counters.
    pub fn absorb(&mut self, values: &[u8]) -> Result<()> {
        if self.counted + values.len() > self.group_target {
            return Err(Error::Encoder(format!(
                "group overflow: {} + {} values exceeds target {}",
                self.counted,
                values.len(),
                self.group_target
            )));
        }
        let max = max_code(self.bit_width);
        for &v in values {
            if v > max {
                return Err(Error::ValueOutOfRange {
                    value: v as u32,
                    bits: self.bit_width,
                });
            }
            for (p, c) in self.counters.iter_mut().enumerate() {
                *c += (v >> p & 1) as u32;
            }
        }
        self.counted += values.len();
        Ok(())
    }

    /// Finalizes a fully absorbed group.
    pub fn finish(self) -> Result<SparsityVector> {
        if self.counted != self.group_target {
            return Err(Error::Encoder(format!(
                "group underflow: absorbed {} of {} values",
                self.counted, self.group_target
            )));
        }
        SparsityVector::new(self.bit_width, self.counters, self.group_target)
    }

    /// Serializes the counter state: bit width, counted, target, then one
    /// fixed-width little-endian u32 per counter.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 16 + 4 * self.counters.len());
        out.push(self.bit_width);
        out.extend_from_slice(&(self.counted as u64).to_le_bytes());
        out.extend_from_slice(&(self.group_target as u64).to_le_bytes());
        for c in &self.counters {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::Encoder(format!("state decode: {msg}"));
        if bytes.is_empty() {
            return Err(fail("empty buffer"));
        }
        let bit_width = bytes[0];
        if bit_width == 0 || bit_width > 8 {
            return Err(Error::BitWidth(bit_width));
        }
        let expect = 1 + 16 + 4 * bit_width as usize;
        if bytes.len() != expect {
            return Err(fail(&format!(
                "expected {expect} bytes for width {bit_width}, got {}",
                bytes.len()
            )));
        }
        let counted = u64::from_le_bytes(bytes[1..9].try_into().unwrap()) as usize;
        let group_target = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        let counters: Vec<u32> = bytes[17..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if counted > group_target || counters.iter().any(|&c| c as usize > counted) {
            return Err(fail("counter invariants violated"));
        }
        Ok(EncoderState {
            bit_width,
            counters,
            counted,
            group_target,
        })
    }
}

/// Pixel-wise encoding for CONV activations (H x W x C layout): one sparsity
/// vector per pixel, counted across the channel axis.
pub fn encode_conv(act: &QuantTensor) -> Result<Vec<SparsityVector>> {
    let shape = act.shape();
    if shape.len() != 3 {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "CONV encoding expects H x W x C".into(),
        });
    }
    let channels = shape[2];
    if channels == 0 {
        return Err(Error::EmptyGroup);
    }
    count_sparsity_groups(&decompose(act), channels)
}

/// Layer-wise encoding for LINEAR activations: one sparsity vector over the
/// whole vector.
pub fn encode_linear(act: &QuantTensor) -> Result<SparsityVector> {
    if act.shape().len() != 1 {
        return Err(Error::Shape {
            shape: act.shape().to_vec(),
            reason: "LINEAR encoding expects a 1-D vector".into(),
        });
    }
    count_sparsity(&decompose(act))
}

/// Runs chunked encoding to completion; equivalent to one-shot encoding of
/// the concatenated chunks.
pub fn encode_chunked(mut state: EncoderState, chunks: &[&[u8]]) -> Result<SparsityVector> {
    for chunk in chunks {
        state.absorb(chunk)?;
    }
    state.finish()
}

/// Bits needed for one counter that must represent every count in 0..=n.
pub fn counter_width(n: usize) -> u32 {
    usize::BITS - n.leading_zeros()
}

/// Width of a counter that stops one short of the all-ones count (covers
/// 0..n only). Published byte counts for the encoder use this narrower
/// width; it is reported alongside the canonical one for comparison.
pub fn counter_width_excl_full(n: usize) -> u32 {
    counter_width(n.saturating_sub(1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionStats {
    pub bit_width: u8,
    pub group_len: usize,
    pub raw_bits: u64,
    pub encoded_bits: u64,
    /// 1 - encoded / raw.
    pub ratio: f64,
}

/// Raw-vs-encoded footprint of one group: P*N raw bits against P counters of
/// ceil(log2(N+1)) bits each.
pub fn compression_stats(bit_width: u8, n: usize) -> Result<CompressionStats> {
    if bit_width == 0 || bit_width > 8 {
        return Err(Error::BitWidth(bit_width));
    }
    if n == 0 {
        return Err(Error::EmptyGroup);
    }
    let raw_bits = bit_width as u64 * n as u64;
    let encoded_bits = bit_width as u64 * counter_width(n) as u64;
    Ok(CompressionStats {
        bit_width,
        group_len: n,
        raw_bits,
        encoded_bits,
        ratio: 1.0 - encoded_bits as f64 / raw_bits as f64,
    })
}

const DUMP_MAGIC: &[u8; 4] = b"PAC1";

/// Writes a sparsity dump: 16-byte header (magic, P, N, group count), then
/// per group `bit_width` little-endian u32 counters.
pub fn write_sparsity_dump<W: Write>(mut w: W, groups: &[SparsityVector]) -> Result<()> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Dump("no groups to write".into()))?;
    let (p, n) = (first.bit_width(), first.group_len());
    for g in groups {
        if g.bit_width() != p || g.group_len() != n {
            return Err(Error::Dump(format!(
                "inconsistent group: width {} len {} vs {} / {}",
                g.bit_width(),
                g.group_len(),
                p,
                n
            )));
        }
    }
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(p as u32).to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(groups.len() as u32).to_le_bytes())?;
    for g in groups {
        for bit in 0..p {
            w.write_all(&g.count(bit).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads back a sparsity dump written by `write_sparsity_dump`.
pub fn read_sparsity_dump<R: Read>(mut r: R) -> Result<Vec<SparsityVector>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(Error::Dump("bad magic".into()));
    }
    let p = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if p == 0 || p > 8 {
        return Err(Error::Dump(format!("bad bit width {p}")));
    }
    let mut groups = Vec::with_capacity(count as usize);
    let mut buf = vec![0u8; 4 * p as usize];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let counts: Vec<u32> = buf
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push(SparsityVector::new(p as u8, counts, n)?);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_shot(values: &[u8]) -> SparsityVector {
        let mut st = EncoderState::new(8, values.len()).unwrap();
        st.absorb(values).unwrap();
        st.finish().unwrap()
    }

    #[test]
    fn conv_pixelwise_counts() {
        let t = QuantTensor::new(vec![1, 1, 4], vec![1, 1, 1, 1], 8, 1.0, 0).unwrap();
        let per_pixel = encode_conv(&t).unwrap();
        assert_eq!(per_pixel.len(), 1);
        assert_eq!(per_pixel[0].count(0), 4);
        assert!(per_pixel[0].counts()[1..].iter().all(|&c| c == 0));

        let zeros = QuantTensor::new(vec![2, 2, 3], vec![0; 12], 8, 1.0, 0).unwrap();
        for s in encode_conv(&zeros).unwrap() {
            assert!(s.counts().iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn conv_random_matches_popcount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<u8> = (0..4 * 4 * 128).map(|_| rng.random()).collect();
        let t = QuantTensor::new(vec![4, 4, 128], vals.clone(), 8, 1.0, 0).unwrap();
        let pixels = encode_conv(&t).unwrap();
        assert_eq!(pixels.len(), 16);
        for (i, s) in pixels.iter().enumerate() {
            let chunk = &vals[i * 128..(i + 1) * 128];
            for p in 0..8 {
                let expect: u32 = chunk.iter().map(|&v| (v >> p & 1) as u32).sum();
                assert_eq!(s.count(p), expect);
            }
        }
    }

    #[test]
    fn conv_rejects_zero_channels() {
        let t = QuantTensor::new(vec![2, 2, 0], vec![], 8, 1.0, 0).unwrap();
        assert!(encode_conv(&t).is_err());
    }

    #[test]
    fn linear_layerwise() {
        let zero = QuantTensor::new(vec![16], vec![0; 16], 8, 1.0, 0).unwrap();
        assert!(encode_linear(&zero)
            .unwrap()
            .counts()
            .iter()
            .all(|&c| c == 0));
        let ones = QuantTensor::new(vec![16], vec![255; 16], 8, 1.0, 0).unwrap();
        assert!(encode_linear(&ones)
            .unwrap()
            .counts()
            .iter()
            .all(|&c| c == 16));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<u8> = (0..512).map(|_| rng.random()).collect();
        let t = QuantTensor::new(vec![512], vals.clone(), 8, 1.0, 0).unwrap();
        let s = encode_linear(&t).unwrap();
        for p in 0..8 {
            let expect: u32 = vals.iter().map(|&v| (v >> p & 1) as u32).sum();
            assert_eq!(s.count(p), expect);
        }
    }

    #[test]
    fn chunked_simple_split() {
        // {178, 3} split into {178},{3}: both carry bit 1.
        let st = EncoderState::new(8, 2).unwrap();
        let s = encode_chunked(st, &[&[178], &[3]]).unwrap();
        assert_eq!(s.count(1), 2);
        assert_eq!(s, one_shot(&[178, 3]));
    }

    #[test]
    fn chunk_overflow_and_underflow() {
        let mut st = EncoderState::new(8, 2).unwrap();
        assert!(st.absorb(&[1, 2, 3]).is_err());
        st.absorb(&[1]).unwrap();
        assert!(st.finish().is_err());
    }

    #[test]
    fn state_roundtrips_through_bytes() {
        let mut st = EncoderState::new(8, 100).unwrap();
        st.absorb(&[200, 17, 3]).unwrap();
        let bytes = st.to_bytes();
        assert_eq!(EncoderState::from_bytes(&bytes).unwrap(), st);
        assert!(EncoderState::from_bytes(&bytes[..5]).is_err());
        assert!(EncoderState::from_bytes(&[]).is_err());
    }

    #[test]
    fn compression_reference_points() {
        let s = compression_stats(8, 128).unwrap();
        assert_eq!((s.raw_bits, s.encoded_bits), (1024, 64));
        assert!((s.ratio - 0.9375).abs() < 1e-12);

        let s1 = compression_stats(8, 1).unwrap();
        assert_eq!((s1.raw_bits, s1.encoded_bits), (8, 8));
        assert_eq!(s1.ratio, 0.0);

        let s512 = compression_stats(8, 512).unwrap();
        assert_eq!((s512.raw_bits, s512.encoded_bits), (4096, 80));
        assert!((s512.ratio - (1.0 - 80.0 / 4096.0)).abs() < 1e-12);
    }

    #[test]
    fn ratio_monotone_in_group_len() {
        let mut last = -1.0;
        for k in 0..=12 {
            let s = compression_stats(8, 1 << k).unwrap();
            assert!(s.ratio >= last);
            last = s.ratio;
        }
    }

    #[test]
    fn dump_roundtrip() {
        let groups: Vec<SparsityVector> = (0..5)
            .map(|g| {
                let vals: Vec<u8> = (0..64).map(|i| (i * (g + 1)) as u8).collect();
                one_shot(&vals)
            })
            .collect();
        let mut bytes = Vec::new();
        write_sparsity_dump(&mut bytes, &groups).unwrap();
        assert_eq!(bytes.len(), 16 + 5 * 8 * 4);
        let back = read_sparsity_dump(bytes.as_slice()).unwrap();
        assert_eq!(back, groups);

        bytes[0] = b'X';
        assert!(read_sparsity_dump(bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn chunked_equals_one_shot(vals in proptest::collection::vec(0u8..=255, 1..400),
                                   cuts in proptest::collection::vec(any::<u16>(), 0..8)) {
            // Derive a partition from the random cut points.
            let n = vals.len();
            let mut idx: Vec<usize> = cuts.iter().map(|&c| c as usize % (n + 1)).collect();
            idx.push(0);
            idx.push(n);
            idx.sort_unstable();
            let chunks: Vec<&[u8]> = idx.windows(2).map(|w| &vals[w[0]..w[1]]).collect();
            let st = EncoderState::new(8, n).unwrap();
            prop_assert_eq!(encode_chunked(st, &chunks).unwrap(), one_shot(&vals));
        }

        #[test]
        fn encoding_is_permutation_invariant(vals in proptest::collection::vec(0u8..=255, 1..200),
                                             seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = vals.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(one_shot(&vals), one_shot(&shuffled));
        }
    }
}
