//! Cycle, memory-traffic and energy accounting for a baseline all-digital
//! bit-serial scheme versus the hybrid digital/sparsity scheme.
//!
//! All energy constants live in an overridable parameter set; the defaults
//! are derived from published figures (1b/1b efficiencies of 235.01 and
//! 2945.92 TOPS/W for the digital array and the sparsity unit, 30.375 pJ per
//! 512 KB cache access, 200 pJ per DRAM access).

use crate::encoder::counter_width;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Energy constants. Units: femtojoules per 1-bit operation, picojoules per
/// memory access.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Energy of one 1-bit digital MAC (one cell's AND + its adder-tree
    /// share), in fJ.
    pub dcim_1b_op_fj: f64,
    /// Energy of one sparsity-domain scalar operation, in fJ.
    pub pcu_op_fj: f64,
    /// Energy of one cache access, in pJ.
    pub sram_access_pj: f64,
    /// Energy of one DRAM access, in pJ.
    pub dram_access_pj: f64,
    /// Bits moved per cache/DRAM access.
    pub access_width_bits: u32,
}

pub const DCIM_TOPS_PER_WATT: f64 = 235.01;
pub const PCU_TOPS_PER_WATT: f64 = 2945.92;

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            // 1 / (TOPS/W) = 1e-12 J per op = 1e3 / (TOPS/W) fJ per op.
            dcim_1b_op_fj: 1e3 / DCIM_TOPS_PER_WATT,
            pcu_op_fj: 1e3 / PCU_TOPS_PER_WATT,
            sram_access_pj: 30.375,
            dram_access_pj: 200.0,
            access_width_bits: 64,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dcim_1b_op_fj,
            self.pcu_op_fj,
            self.sram_access_pj,
            self.dram_access_pj,
            self.access_width_bits as f64,
        ];
        if all.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidArgument(
                "all energy parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Cache energy per bit in fJ.
    pub fn sram_bit_fj(&self) -> f64 {
        self.sram_access_pj * 1e3 / self.access_width_bits as f64
    }

    /// DRAM energy per bit in fJ.
    pub fn dram_bit_fj(&self) -> f64 {
        self.dram_access_pj * 1e3 / self.access_width_bits as f64
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let params: EnergyParams = serde_json::from_reader(std::fs::File::open(path)?)?;
        params.validate()?;
        Ok(params)
    }
}

/// Bit-serial cycle budget per output MAC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleCounts {
    /// All-digital baseline: P * Q cycles.
    pub baseline_digital: u32,
    /// Digital cycles under the hybrid scheme (fractional when a dynamic
    /// average is supplied).
    pub digital: f64,
    /// Cycles moved into the sparsity domain, one scalar op each.
    pub sparsity_ops: f64,
}

impl CycleCounts {
    pub fn reduction_pct(&self) -> f64 {
        100.0 * (1.0 - self.digital / self.baseline_digital as f64)
    }
}

/// Cycle accounting for one output MAC at the given operand widths.
///
/// `dynamic_avg` replaces the static digital-cycle count with the average
/// realized under dynamic workload configuration.
pub fn count_cycles(
    p: u8,
    q: u8,
    approx_bits: u8,
    dynamic_avg: Option<f64>,
) -> Result<CycleCounts> {
    if p == 0 || p > 8 {
        return Err(Error::BitWidth(p));
    }
    if q == 0 || q > 8 {
        return Err(Error::BitWidth(q));
    }
    if approx_bits > p.min(q) {
        return Err(Error::BadApproxBits {
            approx: approx_bits,
            width: p.min(q),
        });
    }
    let baseline = p as u32 * q as u32;
    let static_digital = ((p - approx_bits) as u32 * (q - approx_bits) as u32) as f64;
    let digital = match dynamic_avg {
        Some(avg) => {
            if !(avg >= 0.0 && avg <= baseline as f64) {
                return Err(Error::InvalidArgument(format!(
                    "dynamic average {avg} outside [0, {baseline}]"
                )));
            }
            avg
        }
        None => static_digital,
    };
    Ok(CycleCounts {
        baseline_digital: baseline,
        digital,
        sparsity_ops: baseline as f64 - digital,
    })
}

/// Activation cache traffic for a layer's values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryTraffic {
    pub traffic_bits_baseline: u64,
    pub traffic_bits_hybrid: u64,
    pub reduction_pct: f64,
}

/// Per-direction activation traffic (writes and later reads are symmetric):
/// the baseline moves all `bit_width` bits per value, the hybrid scheme moves
/// only the MSB nibble plus one sparsity word per group of N values.
pub fn memory_traffic(
    num_values: u64,
    n: usize,
    bit_width: u8,
    msb_bits: u8,
) -> Result<MemoryTraffic> {
    if n == 0 {
        return Err(Error::EmptyGroup);
    }
    if bit_width == 0 || bit_width > 8 {
        return Err(Error::BitWidth(bit_width));
    }
    if msb_bits > bit_width {
        return Err(Error::BadApproxBits {
            approx: msb_bits,
            width: bit_width,
        });
    }
    if num_values == 0 {
        return Err(Error::InvalidArgument("no values to account".into()));
    }
    let groups = num_values.div_ceil(n as u64);
    let baseline = bit_width as u64 * num_values;
    let hybrid = msb_bits as u64 * num_values + groups * bit_width as u64 * counter_width(n) as u64;
    Ok(MemoryTraffic {
        traffic_bits_baseline: baseline,
        traffic_bits_hybrid: hybrid,
        reduction_pct: 100.0 * (1.0 - hybrid as f64 / baseline as f64),
    })
}

/// Energy grouped by where it is spent, in femtojoules.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub dcim_fj: f64,
    pub pcu_fj: f64,
    pub sram_fj: f64,
    pub dram_fj: f64,
}

impl EnergyBreakdown {
    pub fn total_fj(&self) -> f64 {
        self.dcim_fj + self.pcu_fj + self.sram_fj + self.dram_fj
    }
}

/// Operation counts feeding the energy model. Each digital cycle spans the
/// whole DP length (`n_effective` 1-bit MACs); each sparsity op is a single
/// scalar operation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpCounts {
    pub digital_cycles: f64,
    pub n_effective: u64,
    pub sparsity_ops: f64,
    pub sram_bits: f64,
    pub dram_bits: f64,
}

pub fn energy_estimate(ops: &OpCounts, params: &EnergyParams) -> Result<EnergyBreakdown> {
    params.validate()?;
    Ok(EnergyBreakdown {
        dcim_fj: ops.digital_cycles * ops.n_effective as f64 * params.dcim_1b_op_fj,
        pcu_fj: ops.sparsity_ops * params.pcu_op_fj,
        sram_fj: ops.sram_bits * params.sram_bit_fj(),
        dram_fj: ops.dram_bits * params.dram_bit_fj(),
    })
}

/// Full accounting of one layer-shaped workload under both schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostReport {
    pub outputs: u64,
    pub dp_length: u64,
    pub cycles: CycleCounts,
    pub traffic: MemoryTraffic,
    pub energy_baseline: EnergyBreakdown,
    pub energy_hybrid: EnergyBreakdown,
}

impl CostReport {
    pub fn energy_improvement(&self) -> f64 {
        self.energy_baseline.total_fj() / self.energy_hybrid.total_fj()
    }
}

/// Workload description for `layer_cost`: `outputs` MACs of DP length `n`,
/// moving `activation_values` activation codes through the cache, plus an
/// optional DRAM weight-loading term (charged to both schemes).
#[derive(Clone, Copy, Debug)]
pub struct Workload {
    pub outputs: u64,
    pub n: usize,
    pub p: u8,
    pub q: u8,
    pub approx_bits: u8,
    pub dynamic_avg: Option<f64>,
    pub activation_values: u64,
    pub weight_dram_bits: u64,
}

pub fn layer_cost(w: &Workload, params: &EnergyParams) -> Result<CostReport> {
    if w.outputs == 0 || w.n == 0 {
        return Err(Error::InvalidArgument(
            "workload needs outputs >= 1 and n >= 1".into(),
        ));
    }
    let cycles = count_cycles(w.p, w.q, w.approx_bits, w.dynamic_avg)?;
    let traffic = memory_traffic(w.activation_values, w.n, w.p, w.p - w.approx_bits)?;
    let outputs = w.outputs as f64;
    let energy_baseline = energy_estimate(
        &OpCounts {
            digital_cycles: cycles.baseline_digital as f64 * outputs,
            n_effective: w.n as u64,
            sparsity_ops: 0.0,
            sram_bits: traffic.traffic_bits_baseline as f64,
            dram_bits: w.weight_dram_bits as f64,
        },
        params,
    )?;
    let energy_hybrid = energy_estimate(
        &OpCounts {
            digital_cycles: cycles.digital * outputs,
            n_effective: w.n as u64,
            sparsity_ops: cycles.sparsity_ops * outputs,
            sram_bits: traffic.traffic_bits_hybrid as f64,
            dram_bits: w.weight_dram_bits as f64,
        },
        params,
    )?;
    Ok(CostReport {
        outputs: w.outputs,
        dp_length: w.n as u64,
        cycles,
        traffic,
        energy_baseline,
        energy_hybrid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_baseline_and_static_reduction() {
        let base = count_cycles(8, 8, 0, None).unwrap();
        assert_eq!(base.baseline_digital, 64);
        assert_eq!(base.digital, 64.0);
        assert_eq!(base.sparsity_ops, 0.0);

        let four = count_cycles(8, 8, 4, None).unwrap();
        assert_eq!(four.digital, 16.0);
        assert_eq!(four.sparsity_ops, 48.0);
        assert_eq!(four.reduction_pct(), 75.0);
    }

    #[test]
    fn dynamic_average_reduction() {
        let dyn12 = count_cycles(8, 8, 4, Some(12.0)).unwrap();
        assert_eq!(dyn12.digital, 12.0);
        assert_eq!(dyn12.sparsity_ops, 52.0);
        assert_eq!(dyn12.reduction_pct(), 81.25);
        assert!(count_cycles(8, 8, 4, Some(65.0)).is_err());
    }

    #[test]
    fn cycle_conservation() {
        for a in 0..=8u8 {
            let c = count_cycles(8, 8, a, None).unwrap();
            assert_eq!(c.digital + c.sparsity_ops, c.baseline_digital as f64);
        }
    }

    #[test]
    fn traffic_reference_points() {
        // N=64: 4 + 56/64 = 4.875 bits per value -> 39.06% off 8.
        let t64 = memory_traffic(64, 64, 8, 4).unwrap();
        assert_eq!(t64.traffic_bits_baseline, 512);
        assert_eq!(t64.traffic_bits_hybrid, 64 * 4 + 56);
        assert!((t64.reduction_pct - 39.0625).abs() < 1e-12);

        // N=512: 4 + 80/512 bits per value -> 48.05%.
        let t512 = memory_traffic(512, 512, 8, 4).unwrap();
        assert_eq!(t512.traffic_bits_hybrid, 512 * 4 + 80);
        assert!((t512.reduction_pct - 100.0 * (1.0 - 4.15625 / 8.0)).abs() < 1e-12);
        assert!(t512.reduction_pct >= 47.5 && t512.reduction_pct < 50.0);
    }

    #[test]
    fn traffic_monotone_toward_half() {
        let mut last = 0.0;
        for k in 4..=16 {
            let n = 1usize << k;
            let t = memory_traffic(n as u64, n, 8, 4).unwrap();
            assert!(t.reduction_pct > last, "n={n}");
            assert!(t.reduction_pct < 50.0);
            last = t.reduction_pct;
        }
        assert!(last > 49.9);
    }

    #[test]
    fn traffic_reduction_never_reaches_half() {
        // The 50% bound holds for every group length, including tiny groups
        // where the sparsity word dominates and the reduction goes negative.
        for n in 1..=5000usize {
            let t = memory_traffic(n as u64, n, 8, 4).unwrap();
            assert!(t.reduction_pct < 50.0, "n={n}: {}", t.reduction_pct);
        }
        assert!(memory_traffic(1, 1, 8, 4).unwrap().reduction_pct < 0.0);
    }

    #[test]
    fn default_params_hit_published_ratio() {
        let p = EnergyParams::default();
        let ratio = p.dcim_1b_op_fj / p.pcu_op_fj;
        assert!((ratio - PCU_TOPS_PER_WATT / DCIM_TOPS_PER_WATT).abs() < 1e-9);
        assert!((ratio - 12.535).abs() < 1e-2);
        assert!((p.sram_bit_fj() - 30.375e3 / 64.0).abs() < 1e-9);
    }

    #[test]
    fn energy_is_linear_in_counts() {
        let params = EnergyParams::default();
        let ops = OpCounts {
            digital_cycles: 16.0,
            n_effective: 1024,
            sparsity_ops: 48.0,
            sram_bits: 4096.0,
            dram_bits: 512.0,
        };
        let one = energy_estimate(&ops, &params).unwrap();
        let scaled = energy_estimate(
            &OpCounts {
                digital_cycles: ops.digital_cycles * 7.0,
                sparsity_ops: ops.sparsity_ops * 7.0,
                sram_bits: ops.sram_bits * 7.0,
                dram_bits: ops.dram_bits * 7.0,
                ..ops
            },
            &params,
        )
        .unwrap();
        assert!((scaled.total_fj() - 7.0 * one.total_fj()).abs() < 1e-6 * one.total_fj());

        let zero = energy_estimate(
            &OpCounts {
                digital_cycles: 0.0,
                n_effective: 1024,
                sparsity_ops: 0.0,
                sram_bits: 0.0,
                dram_bits: 0.0,
            },
            &params,
        )
        .unwrap();
        assert_eq!(zero.total_fj(), 0.0);
    }

    #[test]
    fn hybrid_improvement_near_five_with_dynamic_average() {
        // 64 -> 12 average digital cycles on 1024-long MACs composes to
        // roughly a fivefold energy gain once activations are reused across
        // a bank's worth of outputs (weight-stationary dataflow).
        let report = layer_cost(
            &Workload {
                outputs: 256,
                n: 1024,
                p: 8,
                q: 8,
                approx_bits: 4,
                dynamic_avg: Some(12.0),
                activation_values: 1024,
                weight_dram_bits: 0,
            },
            &EnergyParams::default(),
        )
        .unwrap();
        let gain = report.energy_improvement();
        assert!((4.5..6.0).contains(&gain), "gain {gain}");
    }

    #[test]
    fn params_json_roundtrip() {
        let p = EnergyParams::default();
        let s = serde_json::to_string(&p).unwrap();
        let back: EnergyParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let bad: EnergyParams = serde_json::from_str(r#"{"pcu_op_fj": -1.0}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
