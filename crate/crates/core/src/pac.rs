//! Exact bit-serial MAC, the sparsity-domain point estimator, hybrid
//! deterministic/approximate MACs, output speculation and dynamic cycle
//! configuration.
//!
//! A multi-bit MAC is evaluated one `(p, q)` bit pair per cycle:
//! `O = sum_{p,q} 2^(p+q) * sum_n x_n[p] * w_n[q]`. The inner vector sum for a
//! cycle can either be computed exactly (AND + popcount) or replaced by the
//! point estimate `S_x[p] * S_w[q] / n` built from bit-level sparsity counts.

use crate::bitplane::{count_sparsity, BitPlanes, SparsityVector};
use crate::bitvec::BitVec;
use crate::error::{Error, Result};
use num_rational::Ratio;

/// Domain tag of one `(p, q)` bit-serial cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Deterministic,
    Approximate,
}

/// Partition of the P x Q grid of (activation-bit, weight-bit) cycles into a
/// deterministic set and an approximate set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleMap {
    p_bits: u8,
    q_bits: u8,
    // Bit (p * q_bits + q) set means cycle (p, q) runs in the digital domain.
    det: u64,
}

impl CycleMap {
    /// Operand-based approximation: cycle (p, q) stays digital iff both bit
    /// indices are at or above `approx_bits`. With P = Q = 8 and 4-bit
    /// approximation this leaves the 16 MSB x MSB cycles digital.
    pub fn operand_approx(p_bits: u8, q_bits: u8, approx_bits: u8) -> Result<Self> {
        if p_bits == 0 || p_bits > 8 {
            return Err(Error::BitWidth(p_bits));
        }
        if q_bits == 0 || q_bits > 8 {
            return Err(Error::BitWidth(q_bits));
        }
        if approx_bits > p_bits.min(q_bits) {
            return Err(Error::BadApproxBits {
                approx: approx_bits,
                width: p_bits.min(q_bits),
            });
        }
        let mut det = 0u64;
        for p in approx_bits..p_bits {
            for q in approx_bits..q_bits {
                det |= 1 << (p * q_bits + q);
            }
        }
        Ok(CycleMap {
            p_bits,
            q_bits,
            det,
        })
    }

    pub fn all_deterministic(p_bits: u8, q_bits: u8) -> Result<Self> {
        CycleMap::operand_approx(p_bits, q_bits, 0)
    }

    pub fn p_bits(&self) -> u8 {
        self.p_bits
    }

    pub fn q_bits(&self) -> u8 {
        self.q_bits
    }

    pub fn domain(&self, p: u8, q: u8) -> Domain {
        debug_assert!(p < self.p_bits && q < self.q_bits);
        if self.det >> (p * self.q_bits + q) & 1 == 1 {
            Domain::Deterministic
        } else {
            Domain::Approximate
        }
    }

    pub fn deterministic_count(&self) -> u32 {
        self.det.count_ones()
    }

    pub fn approximate_count(&self) -> u32 {
        self.p_bits as u32 * self.q_bits as u32 - self.deterministic_count()
    }

    /// Iterates all cycles with their domain tags.
    pub fn cells(&self) -> impl Iterator<Item = (u8, u8, Domain)> + '_ {
        (0..self.p_bits).flat_map(move |p| (0..self.q_bits).map(move |q| (p, q, self.domain(p, q))))
    }

    /// Returns a copy with `count` deterministic cells demoted to the
    /// approximate domain, taken in ascending `(p + q)` order with ties broken
    /// by smaller `q`, i.e. growing out of the low-significance corner.
    pub fn demote(&self, count: u32) -> Self {
        let mut order: Vec<(u8, u8)> = self
            .cells()
            .filter(|&(_, _, d)| d == Domain::Deterministic)
            .map(|(p, q, _)| (p, q))
            .collect();
        order.sort_by_key(|&(p, q)| (p + q, q));
        let mut det = self.det;
        for &(p, q) in order.iter().take(count as usize) {
            det &= !(1 << (p * self.q_bits + q));
        }
        CycleMap { det, ..*self }
    }

    fn check_operands(&self, x: &BitPlanes, w: &BitPlanes) -> Result<()> {
        if x.bit_width() != self.p_bits || w.bit_width() != self.q_bits {
            return Err(Error::MapDimMismatch {
                map_p: self.p_bits,
                map_q: self.q_bits,
                p: x.bit_width(),
                q: w.bit_width(),
            });
        }
        Ok(())
    }
}

/// Threshold set steering the dynamic digital/sparsity boundary.
///
/// Degenerate (equal) thresholds are allowed; they collapse bands, e.g.
/// (0, 0, 0) forces the full static map for any positive speculation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    th0: f64,
    th1: f64,
    th2: f64,
}

impl Thresholds {
    pub fn new(th0: f64, th1: f64, th2: f64) -> Result<Self> {
        let ordered = 0.0 <= th0 && th0 <= th1 && th1 <= th2 && th2 <= 1.0;
        if !ordered || !(th0.is_finite() && th1.is_finite() && th2.is_finite()) {
            return Err(Error::BadThresholds(th0, th1, th2));
        }
        Ok(Thresholds { th0, th1, th2 })
    }

    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.th0, self.th1, self.th2)
    }
}

/// One bit-serial cycle computed exactly: `sum_n x_n[p] * w_n[q]`, the
/// popcount of the elementwise AND.
pub fn exact_binary_mac(x_plane: &BitVec, w_plane: &BitVec) -> Result<u32> {
    if x_plane.is_empty() {
        return Err(Error::EmptyGroup);
    }
    x_plane.and_count(w_plane)
}

/// Full-precision bit-serial MAC; equals the plain integer dot product.
pub fn exact_mac(x: &BitPlanes, w: &BitPlanes) -> Result<u64> {
    if x.group_len() != w.group_len() {
        return Err(Error::LengthMismatch(x.group_len(), w.group_len()));
    }
    let mut acc = 0u64;
    for p in 0..x.bit_width() {
        for q in 0..w.bit_width() {
            let ones = exact_binary_mac(x.plane(p), w.plane(q))? as u64;
            acc += ones << (p + q);
        }
    }
    Ok(acc)
}

/// Point estimate of one cycle's vector sum from bit-level sparsity:
/// `S_x * S_w / n`, kept as an exact rational.
pub fn pac_estimate(s_x: u32, s_w: u32, n: usize) -> Result<Ratio<u64>> {
    if n == 0 {
        return Err(Error::EmptyGroup);
    }
    for count in [s_x, s_w] {
        if count as usize > n {
            return Err(Error::CountOutOfRange {
                count: count as u64,
                n,
            });
        }
    }
    Ok(Ratio::new(s_x as u64 * s_w as u64, n as u64))
}

/// Deterministic half of the hybrid MAC: exact cycles only.
pub fn deterministic_partial(x: &BitPlanes, w: &BitPlanes, map: &CycleMap) -> Result<u64> {
    map.check_operands(x, w)?;
    if x.group_len() != w.group_len() {
        return Err(Error::LengthMismatch(x.group_len(), w.group_len()));
    }
    let mut acc = 0u64;
    for (p, q, domain) in map.cells() {
        if domain == Domain::Deterministic {
            let ones = exact_binary_mac(x.plane(p), w.plane(q))? as u64;
            acc += ones << (p + q);
        }
    }
    Ok(acc)
}

/// Approximate half of the hybrid MAC as an exact rational over n:
/// `sum_{(p,q) in A} 2^(p+q) * S_x[p] * S_w[q] / n`.
pub fn approximate_partial(
    s_x: &SparsityVector,
    s_w: &SparsityVector,
    map: &CycleMap,
) -> Result<Ratio<u128>> {
    if s_x.bit_width() != map.p_bits() || s_w.bit_width() != map.q_bits() {
        return Err(Error::MapDimMismatch {
            map_p: map.p_bits(),
            map_q: map.q_bits(),
            p: s_x.bit_width(),
            q: s_w.bit_width(),
        });
    }
    if s_x.group_len() != s_w.group_len() {
        return Err(Error::LengthMismatch(s_x.group_len(), s_w.group_len()));
    }
    let n = s_x.group_len() as u128;
    let mut numer = 0u128;
    for (p, q, domain) in map.cells() {
        if domain == Domain::Approximate {
            numer += (s_x.count(p) as u128 * s_w.count(q) as u128) << (p + q);
        }
    }
    Ok(Ratio::new(numer, n))
}

/// Rounds a non-negative rational to the nearest integer, ties away from zero.
fn round_ratio(r: Ratio<u128>) -> u64 {
    let (num, den) = (r.numer(), r.denom());
    ((2 * num + den) / (2 * den)) as u64
}

/// Hybrid MAC: exact cycles in the deterministic set, point estimates in the
/// approximate set. Accumulation stays in exact rational arithmetic; the one
/// rounding (nearest, ties away from zero) happens at return.
pub fn hybrid_mac(x: &BitPlanes, w: &BitPlanes, map: &CycleMap) -> Result<u64> {
    let s_x = count_sparsity(x)?;
    let s_w = count_sparsity(w)?;
    hybrid_mac_with(x, w, map, &s_x, &s_w)
}

/// `hybrid_mac` with caller-provided sparsity vectors, so per-filter loops can
/// reuse counts already produced by the encoder. The vectors must describe
/// the same groups as the operand planes.
pub fn hybrid_mac_with(
    x: &BitPlanes,
    w: &BitPlanes,
    map: &CycleMap,
    s_x: &SparsityVector,
    s_w: &SparsityVector,
) -> Result<u64> {
    if s_x.group_len() != x.group_len() {
        return Err(Error::LengthMismatch(s_x.group_len(), x.group_len()));
    }
    if s_w.group_len() != w.group_len() {
        return Err(Error::LengthMismatch(s_w.group_len(), w.group_len()));
    }
    let det = deterministic_partial(x, w, map)?;
    let approx = approximate_partial(s_x, s_w, map)?;
    Ok(det + round_ratio(approx))
}

/// Normalized output-magnitude speculation:
/// `sum_p 2^p * S_x[p] / (N * (2^P - 1))`, i.e. mean code over max code.
pub fn speculate(s_x: &SparsityVector) -> f64 {
    let max_total = s_x.group_len() as f64 * (((1u32 << s_x.bit_width()) - 1) as f64);
    s_x.weighted_sum() as f64 / max_total
}

/// Picks the cycle budget for one output from its speculation value.
///
/// Speculations at or above TH2 keep the full base map; each lower band
/// demotes two more deterministic cells into the sparsity domain, so the
/// 16-cell static map steps through 16 / 14 / 12 / 10 digital cycles. A
/// speculation sitting exactly on a threshold takes the higher band, so a
/// full-scale speculation always gets the full computation.
pub fn configure_cycles(spec: f64, th: &Thresholds, base: &CycleMap) -> Result<CycleMap> {
    if !(0.0..=1.0).contains(&spec) || spec.is_nan() {
        return Err(Error::SpecOutOfRange(spec));
    }
    let demote = if spec >= th.th2 {
        0
    } else if spec >= th.th1 {
        2
    } else if spec >= th.th0 {
        4
    } else {
        6
    };
    Ok(base.demote(demote.min(base.deterministic_count())))
}
