//! Monte-Carlo and analytic error characterization of the sparsity-domain
//! estimator, plus bit-level sparsity profiling of model tensors.
//!
//! The default vector model draws binary vectors with an exact, fixed number
//! of ones, so the estimator error has a closed-form standard deviation
//! (`hypergeometric_std`) to test against. An i.i.d. Bernoulli model is
//! available for sensitivity analysis.
//!
//! Trials are embarrassingly parallel. Each trial seeds its own counter-based
//! RNG stream and error sums are accumulated in exact integers, so results
//! are bit-identical for any worker count.

use crate::bitvec::BitVec;
use crate::error::{Error, Result};
use crate::inference::{Network, QuantTensor, RunOptions};
use crate::pac::exact_binary_mac;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// How random binary vectors are drawn for an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparsityModel {
    /// Exactly `round(ratio * n)` ones, uniformly placed.
    FixedCount,
    /// Each bit independently one with probability `ratio`.
    Bernoulli,
}

/// Outcome of one RMSE experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmseResult {
    pub n: usize,
    pub s_x: f64,
    pub s_w: f64,
    pub trials: u64,
    /// Root-mean-square error in output-code units.
    pub rmse_lsb: f64,
    /// 100 * rmse_lsb / n.
    pub rmse_pct: f64,
    /// Mean signed error (exact minus estimate).
    pub bias: f64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) || ratio.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "sparsity ratio {ratio} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Draws a binary vector with exactly `round(ratio * n)` ones.
pub fn random_bitvec(n: usize, ratio: f64, seed: u64) -> Result<BitVec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_bitvec_with(n, ratio, &mut rng)
}

/// Fixed-count draw from a caller-provided RNG.
pub fn random_bitvec_with<R: Rng>(n: usize, ratio: f64, rng: &mut R) -> Result<BitVec> {
    check_ratio(ratio)?;
    let ones = (ratio * n as f64).round() as usize;
    let mut v = BitVec::zeros(n);
    for i in rand::seq::index::sample(rng, n, ones) {
        v.set(i, true);
    }
    Ok(v)
}

/// i.i.d. Bernoulli draw from a caller-provided RNG.
pub fn random_bitvec_iid_with<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<BitVec> {
    check_ratio(p)?;
    let mut v = BitVec::zeros(n);
    for i in 0..n {
        if rng.random_bool(p) {
            v.set(i, true);
        }
    }
    Ok(v)
}

/// Runs the fixed-count estimator-error experiment.
pub fn rmse_experiment(n: usize, s_x: f64, s_w: f64, trials: u64, seed: u64) -> Result<RmseResult> {
    rmse_experiment_with_model(n, s_x, s_w, trials, seed, SparsityModel::FixedCount)
}

/// Per trial: draw an activation and a weight plane, compare the exact binary
/// MAC against the point estimate `S_x * S_w / n`, and aggregate the error in
/// exact integer arithmetic (error numerators are integers over denominator n).
pub fn rmse_experiment_with_model(
    n: usize,
    s_x: f64,
    s_w: f64,
    trials: u64,
    seed: u64,
    model: SparsityModel,
) -> Result<RmseResult> {
    if n == 0 {
        return Err(Error::EmptyGroup);
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    check_ratio(s_x)?;
    check_ratio(s_w)?;

    let (sum_sq, sum) = (0..trials)
        .into_par_iter()
        .map(|trial| {
            // Stream-per-trial keeps the draw independent of scheduling.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let (x, w) = match model {
                SparsityModel::FixedCount => (
                    random_bitvec_with(n, s_x, &mut rng).expect("ratio validated"),
                    random_bitvec_with(n, s_w, &mut rng).expect("ratio validated"),
                ),
                SparsityModel::Bernoulli => (
                    random_bitvec_iid_with(n, s_x, &mut rng).expect("ratio validated"),
                    random_bitvec_iid_with(n, s_w, &mut rng).expect("ratio validated"),
                ),
            };
            let overlap = exact_binary_mac(&x, &w).expect("matching lengths") as i128;
            // n * error = n * overlap - S_x * S_w, an exact integer.
            let err_num = overlap * n as i128 - x.count_ones() as i128 * w.count_ones() as i128;
            let mag = err_num.unsigned_abs();
            (mag * mag, err_num)
        })
        .reduce(
            || (0u128, 0i128),
            |(sq_a, s_a), (sq_b, s_b)| (sq_a + sq_b, s_a + s_b),
        );

    let nf = n as f64;
    let tf = trials as f64;
    let rmse_lsb = (sum_sq as f64 / tf).sqrt() / nf;
    Ok(RmseResult {
        n,
        s_x,
        s_w,
        trials,
        rmse_lsb,
        rmse_pct: 100.0 * rmse_lsb / nf,
        bias: sum as f64 / (nf * tf),
    })
}

/// Exact standard deviation of the overlap count between two fixed-popcount
/// binary vectors under a uniformly random relative permutation:
/// `sqrt(S_x S_w (n - S_x)(n - S_w) / (n^2 (n - 1)))`.
pub fn hypergeometric_std(n: usize, s_x: u32, s_w: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "hypergeometric oracle needs n >= 2, got {n}"
        )));
    }
    for count in [s_x, s_w] {
        if count as usize > n {
            return Err(Error::CountOutOfRange {
                count: count as u64,
                n,
            });
        }
    }
    let nf = n as f64;
    let (sx, sw) = (s_x as f64, s_w as f64);
    Ok((sx * sw * (nf - sx) * (nf - sw) / (nf * nf * (nf - 1.0))).sqrt())
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<RmseResult>,
    /// Log-log regression slope of rmse_pct against n; `None` when fewer than
    /// two usable points exist.
    pub slope: Option<f64>,
}

/// RMSE across a list of DP lengths at fixed sparsity ratios.
pub fn rmse_sweep(
    n_list: &[usize],
    s_x: f64,
    s_w: f64,
    trials: u64,
    seed: u64,
) -> Result<SweepResult> {
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("empty DP length list".into()));
    }
    let rows: Vec<RmseResult> = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| rmse_experiment(n, s_x, s_w, trials, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let slope = loglog_slope(
        &rows
            .iter()
            .map(|r| (r.n as f64, r.rmse_pct))
            .collect::<Vec<_>>(),
    );
    Ok(SweepResult { rows, slope })
}

/// Least-squares slope in log-log space; points with non-positive coordinates
/// are unusable.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Some(sxy / sxx)
}

/// Fraction of ones at each bit index of a code slice.
pub fn profile_bit_sparsity(values: &[u8], bit_width: u8) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if bit_width == 0 || bit_width > 8 {
        return Err(Error::BitWidth(bit_width));
    }
    Ok((0..bit_width)
        .map(|p| {
            values.iter().map(|&v| (v >> p & 1) as u64).sum::<u64>() as f64 / values.len() as f64
        })
        .collect())
}

/// Per-layer, per-bit sparsity of a network's weights and, when an input is
/// supplied, of each layer's input activations during an exact forward pass.
#[derive(Clone, Debug)]
pub struct LayerSparsityProfile {
    pub layer: usize,
    pub name: String,
    pub weight_ratios: Vec<f64>,
    pub activation_ratios: Option<Vec<f64>>,
}

pub fn profile_network_sparsity(
    net: &Network,
    input: Option<&QuantTensor>,
) -> Result<Vec<LayerSparsityProfile>> {
    let layer_inputs = match input {
        Some(t) => {
            let opts = RunOptions {
                record_layer_inputs: true,
                ..RunOptions::default()
            };
            Some(net.run_exact(t, &opts)?.layer_inputs)
        }
        None => None,
    };
    net.layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let weights = layer.weights();
            Ok(LayerSparsityProfile {
                layer: i,
                name: layer.name().to_string(),
                weight_ratios: profile_bit_sparsity(weights.values(), weights.bit_width())?,
                activation_ratios: match &layer_inputs {
                    Some(inputs) => Some(profile_bit_sparsity(
                        inputs[i].values(),
                        inputs[i].bit_width(),
                    )?),
                    None => None,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_count_construction() {
        assert_eq!(random_bitvec(100, 0.0, 1).unwrap().count_ones(), 0);
        assert_eq!(random_bitvec(100, 1.0, 1).unwrap().count_ones(), 100);
        assert_eq!(random_bitvec(1024, 0.5, 9).unwrap().count_ones(), 512);
        // round(0.2 * 1024) = 205
        assert_eq!(random_bitvec(1024, 0.2, 9).unwrap().count_ones(), 205);
        assert!(random_bitvec(10, 1.5, 0).is_err());
    }

    #[test]
    fn zero_sparsity_gives_zero_rmse() {
        let r = rmse_experiment(256, 0.0, 0.6, 500, 3).unwrap();
        assert_eq!(r.rmse_lsb, 0.0);
        assert_eq!(r.bias, 0.0);
    }

    #[test]
    fn experiment_matches_hypergeometric_oracle() {
        // 20K trials keep this quick; the 100K-trial check lives in the
        // acceptance suite.
        for (n, sx, sw) in [(256usize, 0.2, 0.4), (1024, 0.3, 0.5), (4096, 0.3, 0.5)] {
            let r = rmse_experiment(n, sx, sw, 20_000, 42).unwrap();
            let kx = (sx * n as f64).round() as u32;
            let kw = (sw * n as f64).round() as u32;
            let oracle = hypergeometric_std(n, kx, kw).unwrap();
            let rel = (r.rmse_lsb - oracle).abs() / oracle;
            assert!(rel < 0.05, "n={n}: {} vs {oracle} ({rel})", r.rmse_lsb);
            assert!(r.bias.abs() < 3.0 * r.rmse_lsb / (r.trials as f64).sqrt());
            assert!(r.rmse_lsb >= r.bias.abs());
        }
    }

    #[test]
    fn hypergeometric_reference_values() {
        assert_eq!(hypergeometric_std(100, 0, 50).unwrap(), 0.0);
        let v = hypergeometric_std(1024, 205, 410).unwrap();
        assert!((v - 6.2771).abs() < 1e-3, "{v}");
        let big = hypergeometric_std(4096, 1229, 2048).unwrap();
        assert!((big - 14.667).abs() < 1e-2, "{big}");
        assert!((100.0 * big / 4096.0 - 0.358).abs() < 1e-2);
        assert!(hypergeometric_std(1, 0, 0).is_err());
        assert!(hypergeometric_std(10, 11, 0).is_err());
    }

    #[test]
    fn rmse_pct_formula_at_512() {
        let v = hypergeometric_std(512, 154, 256).unwrap();
        assert!((100.0 * v / 512.0 - 1.0143).abs() < 1e-3);
    }

    #[test]
    fn sweep_slope_near_minus_half() {
        let sweep = rmse_sweep(&[256, 512, 1024], 0.3, 0.5, 8_000, 7).unwrap();
        let slope = sweep.slope.unwrap();
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
        // Monotone non-increasing rmse_pct across n.
        for pair in sweep.rows.windows(2) {
            assert!(pair[1].rmse_pct <= pair[0].rmse_pct * 1.02);
        }
    }

    #[test]
    fn single_point_sweep_has_no_slope() {
        let sweep = rmse_sweep(&[512], 0.3, 0.5, 200, 7).unwrap();
        assert!(sweep.slope.is_none());
    }

    #[test]
    fn experiments_are_deterministic_across_worker_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| rmse_experiment(512, 0.25, 0.5, 5_000, 99).unwrap())
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.rmse_lsb.to_bits(), b.rmse_lsb.to_bits());
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
        let again = run(1);
        assert_eq!(a.rmse_lsb.to_bits(), again.rmse_lsb.to_bits());
    }

    #[test]
    fn bernoulli_model_close_to_fixed_count_at_scale() {
        let fixed =
            rmse_experiment_with_model(1024, 0.3, 0.5, 10_000, 5, SparsityModel::FixedCount)
                .unwrap();
        let iid = rmse_experiment_with_model(1024, 0.3, 0.5, 10_000, 5, SparsityModel::Bernoulli)
            .unwrap();
        let rel = (fixed.rmse_lsb - iid.rmse_lsb).abs() / fixed.rmse_lsb;
        assert!(
            rel < 0.1,
            "fixed {} vs iid {}",
            fixed.rmse_lsb,
            iid.rmse_lsb
        );
    }

    #[test]
    fn bit_profile_bounds() {
        assert!(profile_bit_sparsity(&[0; 32], 8)
            .unwrap()
            .iter()
            .all(|&r| r == 0.0));
        assert!(profile_bit_sparsity(&[255; 32], 8)
            .unwrap()
            .iter()
            .all(|&r| r == 1.0));

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let vals: Vec<u8> = (0..20_000).map(|_| rng.random()).collect();
        // Binomial 3-sigma band around 0.5 for uniform codes.
        let bound = 3.0 * (0.25f64 / vals.len() as f64).sqrt();
        for r in profile_bit_sparsity(&vals, 8).unwrap() {
            assert!((r - 0.5).abs() < bound, "{r} vs {bound}");
        }
    }
}
