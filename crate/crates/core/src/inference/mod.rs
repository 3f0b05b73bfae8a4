//! Desk-scale quantized integer inference through exact or hybrid MACs.
//!
//! Layers run on unsigned 8-bit codes. Every output MAC is evaluated over an
//! im2col-ordered reduction window (kernel-row x kernel-col x input-channel
//! for CONV, the flattened input for LINEAR), either exactly or through the
//! hybrid digital/sparsity path, followed by affine zero-point correction and
//! a BN / activation / requantization pipeline.

pub mod generator;
mod manifest;

pub use crate::bitplane::QuantTensor;
pub use manifest::{load_network, read_input_tensor, save_network, ManifestDoc};

use crate::bitplane::{count_sparsity, BitPlanes, SparsityVector};
use crate::error::{Error, Result};
use crate::pac::{configure_cycles, exact_mac, hybrid_mac_with, speculate, CycleMap, Thresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const ACT_BITS: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Hybrid,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Exact => "EXACT",
            Mode::Hybrid => "HYBRID",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Max2,
    GlobalAvg,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerKind {
    /// DP length of one output MAC: k*k*C_in for CONV, fan-in for LINEAR.
    pub fn reduction_len(&self) -> usize {
        match *self {
            LayerKind::Conv2d {
                kernel,
                in_channels,
                ..
            } => kernel * kernel * in_channels,
            LayerKind::Linear { in_features, .. } => in_features,
        }
    }

    pub fn out_features(&self) -> usize {
        match *self {
            LayerKind::Conv2d { out_channels, .. } => out_channels,
            LayerKind::Linear { out_features, .. } => out_features,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "CONV2D",
            LayerKind::Linear { .. } => "LINEAR",
        }
    }
}

/// Static description of one layer: geometry, MAC mode, and the folded
/// BN / activation / requantization parameters.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub mode: Mode,
    pub approx_bits: u8,
    pub thresholds: Option<Thresholds>,
    pub activation: Activation,
    pub pool: Option<Pool>,
    pub weight_scale: f64,
    pub weight_zero_point: u8,
    pub bn_scale: Vec<f64>,
    pub bn_bias: Vec<f64>,
    pub out_scale: f64,
    pub out_zero_point: u8,
}

/// A layer with its weights prepared for bit-serial execution: per-filter bit
/// planes, per-filter sparsity, and the offline code sums used by the
/// zero-point correction.
#[derive(Clone, Debug)]
pub struct Layer {
    spec: LayerSpec,
    weights: QuantTensor,
    filter_planes: Vec<BitPlanes>,
    filter_sparsity: Vec<SparsityVector>,
    filter_code_sum: Vec<u64>,
}

impl Layer {
    /// `weights` holds one filter per row: shape [out_features, reduction_len].
    pub fn new(spec: LayerSpec, weights: QuantTensor) -> Result<Self> {
        let n = spec.kind.reduction_len();
        let outs = spec.kind.out_features();
        if n == 0 || outs == 0 {
            return Err(Error::Manifest(format!(
                "layer {:?} has an empty dimension",
                spec.name
            )));
        }
        if weights.shape() != [outs, n] {
            return Err(Error::Shape {
                shape: weights.shape().to_vec(),
                reason: format!("expected weights [{outs}, {n}]"),
            });
        }
        if spec.bn_scale.len() != outs || spec.bn_bias.len() != outs {
            return Err(Error::Manifest(format!(
                "BN parameter length {} / {} does not match {} outputs",
                spec.bn_scale.len(),
                spec.bn_bias.len(),
                outs
            )));
        }
        if spec.approx_bits > ACT_BITS.min(weights.bit_width()) {
            return Err(Error::BadApproxBits {
                approx: spec.approx_bits,
                width: ACT_BITS.min(weights.bit_width()),
            });
        }
        if !(spec.out_scale.is_finite() && spec.out_scale > 0.0) {
            return Err(Error::Manifest(format!(
                "output scale {} must be positive",
                spec.out_scale
            )));
        }
        if spec.weight_scale != weights.scale() || spec.weight_zero_point != weights.zero_point() {
            return Err(Error::Manifest(format!(
                "weight quantization ({}, {}) disagrees with tensor ({}, {})",
                spec.weight_scale,
                spec.weight_zero_point,
                weights.scale(),
                weights.zero_point()
            )));
        }
        let mut filter_planes = Vec::with_capacity(outs);
        let mut filter_sparsity = Vec::with_capacity(outs);
        let mut filter_code_sum = Vec::with_capacity(outs);
        for f in 0..outs {
            let row = &weights.values()[f * n..(f + 1) * n];
            let planes = BitPlanes::from_values(row, weights.bit_width())?;
            let sparsity = count_sparsity(&planes)?;
            filter_code_sum.push(sparsity.weighted_sum());
            filter_sparsity.push(sparsity);
            filter_planes.push(planes);
        }
        Ok(Layer {
            spec,
            weights,
            filter_planes,
            filter_sparsity,
            filter_code_sum,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn weights(&self) -> &QuantTensor {
        &self.weights
    }

    pub fn reduction_len(&self) -> usize {
        self.spec.kind.reduction_len()
    }

    /// Raw exact accumulators for one input, zero-point correction included.
    /// Used for calibration and as the paired reference in comparisons.
    pub fn accumulate_exact(&self, input: &QuantTensor, input_zero_point: u8) -> Result<Vec<i64>> {
        let run = self.accumulate(
            input,
            input_zero_point,
            &EffectiveConfig {
                mode: Mode::Exact,
                base_map: None,
                thresholds: None,
                paired_exact: false,
            },
        )?;
        Ok(run.acc)
    }

    fn accumulate(
        &self,
        input: &QuantTensor,
        input_zero_point: u8,
        cfg: &EffectiveConfig,
    ) -> Result<LayerRun> {
        let n = self.reduction_len();
        let outs = self.spec.kind.out_features();
        let windows: Vec<Vec<u8>> = match self.spec.kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                in_channels,
                ..
            } => {
                let (h, w) = (input.shape()[0], input.shape()[1]);
                let (oh, ow) = conv_output_dims(h, w, kernel, stride, padding)?;
                (0..oh * ow)
                    .map(|i| {
                        conv_window(
                            input,
                            i / ow,
                            i % ow,
                            kernel,
                            stride,
                            padding,
                            in_channels,
                            input_zero_point,
                        )
                    })
                    .collect()
            }
            LayerKind::Linear { .. } => vec![input.values().to_vec()],
        };

        let per_window: Vec<WindowRun> = windows
            .par_iter()
            .map(|codes| self.window_run(codes, n, input_zero_point, cfg))
            .collect::<Result<_>>()?;

        let mut run = LayerRun {
            acc: Vec::with_capacity(per_window.len() * outs),
            exact_acc: cfg.paired_exact.then(Vec::new),
            cells_total: 0,
            spec_sum: 0.0,
        };
        for w in per_window {
            run.acc.extend(w.acc);
            if let Some(exact) = &mut run.exact_acc {
                exact.extend(w.exact_acc);
            }
            run.cells_total += w.cells as u64 * outs as u64;
            run.spec_sum += w.spec_value * outs as f64;
        }
        Ok(run)
    }

    fn window_run(
        &self,
        codes: &[u8],
        n: usize,
        input_zero_point: u8,
        cfg: &EffectiveConfig,
    ) -> Result<WindowRun> {
        let planes = BitPlanes::from_values(codes, ACT_BITS)?;
        let s_x = count_sparsity(&planes)?;
        let sum_x = s_x.weighted_sum() as i64;
        let spec_value = speculate(&s_x);
        let z_x = input_zero_point as i64;
        let z_w = self.spec.weight_zero_point as i64;
        let correction_base = n as i64 * z_x * z_w;

        let map = match (cfg.mode, &cfg.base_map) {
            (Mode::Hybrid, Some(base)) => Some(match &cfg.thresholds {
                Some(th) => configure_cycles(spec_value, th, base)?,
                None => base.clone(),
            }),
            _ => None,
        };
        let cells = map
            .as_ref()
            .map(|m| m.deterministic_count())
            .unwrap_or(ACT_BITS as u32 * self.weights.bit_width() as u32);

        let outs = self.spec.kind.out_features();
        let mut acc = Vec::with_capacity(outs);
        let mut exact_acc = Vec::with_capacity(if cfg.paired_exact { outs } else { 0 });
        for f in 0..outs {
            let correction = correction_base - z_w * sum_x - z_x * self.filter_code_sum[f] as i64;
            let mac = match &map {
                Some(m) => hybrid_mac_with(
                    &planes,
                    &self.filter_planes[f],
                    m,
                    &s_x,
                    &self.filter_sparsity[f],
                )?,
                None => exact_mac(&planes, &self.filter_planes[f])?,
            };
            acc.push(mac as i64 + correction);
            if cfg.paired_exact {
                let exact = exact_mac(&planes, &self.filter_planes[f])?;
                exact_acc.push(exact as i64 + correction);
            }
        }
        Ok(WindowRun {
            acc,
            exact_acc,
            cells,
            spec_value,
        })
    }
}

struct EffectiveConfig {
    mode: Mode,
    base_map: Option<CycleMap>,
    thresholds: Option<Thresholds>,
    paired_exact: bool,
}

struct WindowRun {
    acc: Vec<i64>,
    exact_acc: Vec<i64>,
    cells: u32,
    spec_value: f64,
}

struct LayerRun {
    acc: Vec<i64>,
    exact_acc: Option<Vec<i64>>,
    cells_total: u64,
    spec_sum: f64,
}

fn conv_output_dims(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let span_h = h + 2 * padding;
    let span_w = w + 2 * padding;
    if kernel == 0 || span_h < kernel || span_w < kernel {
        return Err(Error::Shape {
            shape: vec![h, w],
            reason: format!("kernel {kernel} with padding {padding} does not fit"),
        });
    }
    Ok((
        (span_h - kernel) / stride + 1,
        (span_w - kernel) / stride + 1,
    ))
}

/// Gathers one padded reduction window in kernel-row x kernel-col x channel
/// order. Padding positions carry the input zero point (real value zero).
#[allow(clippy::too_many_arguments)]
fn conv_window(
    input: &QuantTensor,
    oh: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    channels: usize,
    zero_point: u8,
) -> Vec<u8> {
    let (h, w) = (input.shape()[0], input.shape()[1]);
    let vals = input.values();
    let mut window = Vec::with_capacity(kernel * kernel * channels);
    for kr in 0..kernel {
        let ih = (oh * stride + kr) as isize - padding as isize;
        for kc in 0..kernel {
            let iw = (ow * stride + kc) as isize - padding as isize;
            if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                let base = (ih as usize * w + iw as usize) * channels;
                window.extend_from_slice(&vals[base..base + channels]);
            } else {
                window.resize(window.len() + channels, zero_point);
            }
        }
    }
    window
}

/// BN, activation and requantization applied to raw accumulators.
/// `acc_scale` is the dequantization step of the accumulator
/// (input scale x weight scale).
pub fn postprocess(
    acc: &[i64],
    acc_scale: f64,
    spec: &LayerSpec,
    out_shape: Vec<usize>,
) -> Result<QuantTensor> {
    let outs = spec.kind.out_features();
    let mut codes = Vec::with_capacity(acc.len());
    for (i, &a) in acc.iter().enumerate() {
        let ch = i % outs;
        let mut real = a as f64 * acc_scale * spec.bn_scale[ch] + spec.bn_bias[ch];
        if !real.is_finite() {
            return Err(Error::NonFinite);
        }
        if spec.activation == Activation::Relu {
            real = real.max(0.0);
        }
        // round() is round-half-away-from-zero.
        let q = (real / spec.out_scale).round() + spec.out_zero_point as f64;
        codes.push(q.clamp(0.0, 255.0) as u8);
    }
    QuantTensor::new(
        out_shape,
        codes,
        ACT_BITS,
        spec.out_scale,
        spec.out_zero_point,
    )
}

fn apply_pool(t: &QuantTensor, pool: Pool) -> Result<QuantTensor> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "pooling expects H x W x C".into(),
        });
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    match pool {
        Pool::Max2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Shape {
                    shape: shape.to_vec(),
                    reason: "2x2 max pool needs even spatial dims".into(),
                });
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut out = vec![0u8; oh * ow * c];
            for y in 0..oh {
                for x in 0..ow {
                    for ch in 0..c {
                        let mut best = 0u8;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                                best = best.max(t.values()[idx]);
                            }
                        }
                        out[(y * ow + x) * c + ch] = best;
                    }
                }
            }
            QuantTensor::new(
                vec![oh, ow, c],
                out,
                t.bit_width(),
                t.scale(),
                t.zero_point(),
            )
        }
        Pool::GlobalAvg => {
            let count = (h * w) as u64;
            let out: Vec<u8> = (0..c)
                .map(|ch| {
                    let sum: u64 = (0..h * w).map(|i| t.values()[i * c + ch] as u64).sum();
                    // Nearest, ties away from zero.
                    ((2 * sum + count) / (2 * count)) as u8
                })
                .collect();
            QuantTensor::new(vec![1, 1, c], out, t.bit_width(), t.scale(), t.zero_point())
        }
    }
}

fn pooled_shape(shape: &[usize], pool: Option<Pool>) -> Vec<usize> {
    match pool {
        Some(Pool::Max2) => vec![shape[0] / 2, shape[1] / 2, shape[2]],
        Some(Pool::GlobalAvg) => vec![1, 1, shape[2]],
        None => shape.to_vec(),
    }
}

/// Per-run execution knobs; all default off.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Run every layer in EXACT mode regardless of its manifest mode.
    pub force_exact: bool,
    /// Override the approximation width of HYBRID layers.
    pub approx_bits: Option<u8>,
    /// Override (or install) dynamic thresholds on HYBRID layers.
    pub thresholds: Option<Thresholds>,
    /// Also compute exact accumulators per layer and a fully exact forward
    /// pass for paired comparison.
    pub compare_exact: bool,
    /// Keep a copy of each layer's input tensor.
    pub record_layer_inputs: bool,
}

/// Per-layer counters aggregated over one forward pass.
#[derive(Clone, Debug)]
pub struct LayerStats {
    pub index: usize,
    pub name: String,
    pub kind: &'static str,
    pub mode: &'static str,
    pub n: usize,
    pub outputs: u64,
    /// Sum over outputs of the digital (deterministic) cell count.
    pub digital_cells_total: u64,
    /// Sum over outputs of the speculation value.
    pub spec_sum: f64,
    /// Sum of squared hybrid-vs-exact accumulator deviations.
    pub dev_sum_sq: u128,
    pub dev_count: u64,
}

impl LayerStats {
    pub fn avg_digital_cells(&self) -> f64 {
        self.digital_cells_total as f64 / self.outputs as f64
    }

    pub fn avg_spec(&self) -> f64 {
        self.spec_sum / self.outputs as f64
    }

    pub fn dev_rmse(&self) -> Option<f64> {
        (self.dev_count > 0).then(|| (self.dev_sum_sq as f64 / self.dev_count as f64).sqrt())
    }

    /// Theoretical accumulator dynamic range: n * (2^P - 1) * (2^Q - 1).
    pub fn acc_range(&self) -> f64 {
        self.n as f64 * 255.0 * 255.0
    }

    pub fn dev_rmse_pct_of_range(&self) -> Option<f64> {
        self.dev_rmse().map(|r| 100.0 * r / self.acc_range())
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Final-layer output codes.
    pub logits: Vec<u8>,
    pub argmax: usize,
    /// Present when `compare_exact` is set.
    pub exact_logits: Option<Vec<u8>>,
    pub exact_argmax: Option<usize>,
    pub layer_stats: Vec<LayerStats>,
    /// Present when `record_layer_inputs` is set; entry i is layer i's input.
    pub layer_inputs: Vec<QuantTensor>,
}

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    input_scale: f64,
    input_zero_point: u8,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(
        input_shape: Vec<usize>,
        input_scale: f64,
        input_zero_point: u8,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Manifest("network has no layers".into()));
        }
        if !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(Error::Manifest(format!(
                "input scale {input_scale} must be positive"
            )));
        }
        // Shape adjacency walk.
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            let err = |reason: String| Error::Layer {
                index: i,
                name: layer.name().to_string(),
                reason,
            };
            match layer.spec.kind {
                LayerKind::Conv2d {
                    kernel,
                    stride,
                    padding,
                    in_channels,
                    out_channels,
                } => {
                    if shape.len() != 3 {
                        return Err(err(format!("expects H x W x C input, got {shape:?}")));
                    }
                    if shape[2] != in_channels {
                        return Err(err(format!(
                            "input has {} channels, layer expects {in_channels}",
                            shape[2]
                        )));
                    }
                    let (oh, ow) = conv_output_dims(shape[0], shape[1], kernel, stride, padding)
                        .map_err(|e| err(e.to_string()))?;
                    shape = vec![oh, ow, out_channels];
                    if let Some(Pool::Max2) = layer.spec.pool {
                        if oh % 2 != 0 || ow % 2 != 0 {
                            return Err(err(format!(
                                "2x2 max pool needs even dims, got {oh}x{ow}"
                            )));
                        }
                    }
                    shape = pooled_shape(&shape, layer.spec.pool);
                }
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => {
                    let numel: usize = shape.iter().product();
                    if numel != in_features {
                        return Err(err(format!(
                            "input {shape:?} flattens to {numel}, layer expects {in_features}"
                        )));
                    }
                    if layer.spec.pool.is_some() {
                        return Err(err("pooling after LINEAR is unsupported".into()));
                    }
                    shape = vec![out_features];
                }
            }
        }
        Ok(Network {
            input_shape,
            input_scale,
            input_zero_point,
            layers,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn input_zero_point(&self) -> u8 {
        self.input_zero_point
    }

    /// Wraps raw codes in a tensor carrying the network's input quantization.
    pub fn input_tensor(&self, codes: Vec<u8>) -> Result<QuantTensor> {
        QuantTensor::new(
            self.input_shape.clone(),
            codes,
            ACT_BITS,
            self.input_scale,
            self.input_zero_point,
        )
    }

    /// Uniform random input codes, deterministic per seed.
    pub fn random_input(&self, seed: u64) -> QuantTensor {
        let numel: usize = self.input_shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<u8> = (0..numel).map(|_| rng.random()).collect();
        self.input_tensor(codes).expect("codes are in range")
    }

    /// Full forward pass under the layer modes (plus any overrides).
    pub fn run(&self, input: &QuantTensor, opts: &RunOptions) -> Result<RunResult> {
        let mut result = self.forward(input, opts, opts.force_exact)?;
        if opts.compare_exact && !opts.force_exact {
            let exact = self.forward(input, &RunOptions::default(), true)?;
            result.exact_argmax = Some(exact.argmax);
            result.exact_logits = Some(exact.logits);
        }
        Ok(result)
    }

    /// Forward pass with every layer forced EXACT.
    pub fn run_exact(&self, input: &QuantTensor, opts: &RunOptions) -> Result<RunResult> {
        let opts = RunOptions {
            force_exact: true,
            ..opts.clone()
        };
        self.forward(input, &opts, true)
    }

    fn forward(
        &self,
        input: &QuantTensor,
        opts: &RunOptions,
        force_exact: bool,
    ) -> Result<RunResult> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape {
                shape: input.shape().to_vec(),
                reason: format!("network input is {:?}", self.input_shape),
            });
        }
        if input.scale() != self.input_scale || input.zero_point() != self.input_zero_point {
            return Err(Error::InvalidArgument(format!(
                "input quantization ({}, {}) does not match network ({}, {})",
                input.scale(),
                input.zero_point(),
                self.input_scale,
                self.input_zero_point
            )));
        }

        let mut current = input.clone();
        let mut in_scale = self.input_scale;
        let mut in_zp = self.input_zero_point;
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut layer_inputs = Vec::new();

        for (i, layer) in self.layers.iter().enumerate() {
            if opts.record_layer_inputs {
                layer_inputs.push(current.clone());
            }
            let spec = layer.spec();
            let mode = if force_exact { Mode::Exact } else { spec.mode };
            let approx_bits = opts.approx_bits.unwrap_or(spec.approx_bits);
            let base_map = match mode {
                Mode::Hybrid => Some(
                    CycleMap::operand_approx(ACT_BITS, layer.weights.bit_width(), approx_bits)
                        .map_err(|e| e.in_layer(i, layer.name()))?,
                ),
                Mode::Exact => None,
            };
            let cfg = EffectiveConfig {
                mode,
                base_map,
                thresholds: opts.thresholds.or(spec.thresholds),
                paired_exact: opts.compare_exact && mode == Mode::Hybrid,
            };
            let run = layer
                .accumulate(&current, in_zp, &cfg)
                .map_err(|e| e.in_layer(i, layer.name()))?;

            let outs = spec.kind.out_features();
            let out_shape = match spec.kind {
                LayerKind::Conv2d { .. } => {
                    let pixels = run.acc.len() / outs;
                    // conv_output_dims already validated; recover oh x ow.
                    let (oh, ow) = conv_dims_for(layer, &current)?;
                    debug_assert_eq!(oh * ow, pixels);
                    vec![oh, ow, outs]
                }
                LayerKind::Linear { .. } => vec![outs],
            };

            let mut dev_sum_sq = 0u128;
            let mut dev_count = 0u64;
            if let Some(exact) = &run.exact_acc {
                for (&h, &e) in run.acc.iter().zip(exact) {
                    let d = (h - e).unsigned_abs() as u128;
                    dev_sum_sq += d * d;
                }
                dev_count = exact.len() as u64;
            }
            stats.push(LayerStats {
                index: i,
                name: layer.name().to_string(),
                kind: spec.kind.as_str(),
                mode: mode.as_str(),
                n: layer.reduction_len(),
                outputs: run.acc.len() as u64,
                digital_cells_total: run.cells_total,
                spec_sum: run.spec_sum,
                dev_sum_sq,
                dev_count,
            });

            let mut out = postprocess(&run.acc, in_scale * spec.weight_scale, spec, out_shape)
                .map_err(|e| e.in_layer(i, layer.name()))?;
            if let Some(pool) = spec.pool {
                out = apply_pool(&out, pool).map_err(|e| e.in_layer(i, layer.name()))?;
            }
            in_scale = spec.out_scale;
            in_zp = spec.out_zero_point;
            current = out;
        }

        let logits = current.values().to_vec();
        let argmax = argmax_first(&logits);
        Ok(RunResult {
            logits,
            argmax,
            exact_logits: None,
            exact_argmax: None,
            layer_stats: stats,
            layer_inputs,
        })
    }
}

fn conv_dims_for(layer: &Layer, input: &QuantTensor) -> Result<(usize, usize)> {
    conv_output_dims_of(&layer.spec.kind, input.shape())
}

pub(crate) fn conv_output_dims_of(
    kind: &LayerKind,
    input_shape: &[usize],
) -> Result<(usize, usize)> {
    match *kind {
        LayerKind::Conv2d {
            kernel,
            stride,
            padding,
            ..
        } => conv_output_dims(input_shape[0], input_shape[1], kernel, stride, padding),
        LayerKind::Linear { .. } => Err(Error::InvalidArgument(
            "linear layers have no spatial dims".into(),
        )),
    }
}

/// First index of the maximum value.
pub fn argmax_first(values: &[u8]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_layer(kind: LayerKind, mode: Mode, weights: QuantTensor) -> Layer {
        let outs = kind.out_features();
        Layer::new(
            LayerSpec {
                name: "t".into(),
                kind,
                mode,
                approx_bits: 4,
                thresholds: None,
                activation: Activation::None,
                pool: None,
                weight_scale: weights.scale(),
                weight_zero_point: weights.zero_point(),
                bn_scale: vec![1.0; outs],
                bn_bias: vec![0.0; outs],
                out_scale: 1.0,
                out_zero_point: 0,
            },
            weights,
        )
        .unwrap()
    }

    #[test]
    fn identity_conv_passes_codes_through() {
        // 1x1 kernel, one input channel, single weight of code 1 with scale 1:
        // the raw accumulator is the input code itself.
        let w = QuantTensor::new(vec![1, 1], vec![1], 8, 1.0, 0).unwrap();
        let layer = simple_layer(
            LayerKind::Conv2d {
                kernel: 1,
                stride: 1,
                padding: 0,
                in_channels: 1,
                out_channels: 1,
            },
            Mode::Exact,
            w,
        );
        let input = QuantTensor::new(vec![2, 2, 1], vec![7, 0, 255, 13], 8, 0.5, 0).unwrap();
        let acc = layer.accumulate_exact(&input, 0).unwrap();
        assert_eq!(acc, vec![7, 0, 255, 13]);
    }

    #[test]
    fn zero_weight_filter_reduces_to_correction() {
        let w = QuantTensor::new(vec![1, 4], vec![0; 4], 8, 1.0, 9).unwrap();
        let layer = simple_layer(
            LayerKind::Linear {
                in_features: 4,
                out_features: 1,
            },
            Mode::Exact,
            w,
        );
        let input = QuantTensor::new(vec![4], vec![10, 20, 30, 40], 8, 1.0, 5).unwrap();
        let acc = layer.accumulate_exact(&input, 5).unwrap();
        // sum (x - 5)(0 - 9) = -9 * (100 - 20) = -720
        assert_eq!(acc, vec![-720]);
    }

    #[test]
    fn linear_matches_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 64;
        let w_codes: Vec<u8> = (0..3 * n).map(|_| rng.random()).collect();
        let x_codes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
        let (z_w, z_x) = (128u8, 3u8);
        let w = QuantTensor::new(vec![3, n], w_codes.clone(), 8, 1.0, z_w).unwrap();
        let layer = simple_layer(
            LayerKind::Linear {
                in_features: n,
                out_features: 3,
            },
            Mode::Exact,
            w,
        );
        let input = QuantTensor::new(vec![n], x_codes.clone(), 8, 1.0, z_x).unwrap();
        let acc = layer.accumulate_exact(&input, z_x).unwrap();
        for f in 0..3 {
            let oracle: i64 = (0..n)
                .map(|i| {
                    (x_codes[i] as i64 - z_x as i64) * (w_codes[f * n + i] as i64 - z_w as i64)
                })
                .sum();
            assert_eq!(acc[f], oracle, "filter {f}");
        }
    }

    #[test]
    fn one_hot_linear_selects_input() {
        let mut w_codes = vec![0u8; 8];
        w_codes[5] = 1;
        let w = QuantTensor::new(vec![1, 8], w_codes, 8, 1.0, 0).unwrap();
        let layer = simple_layer(
            LayerKind::Linear {
                in_features: 8,
                out_features: 1,
            },
            Mode::Exact,
            w,
        );
        let input = QuantTensor::new(vec![8], vec![9, 8, 7, 6, 5, 44, 3, 2], 8, 1.0, 0).unwrap();
        assert_eq!(layer.accumulate_exact(&input, 0).unwrap(), vec![44]);
    }

    #[test]
    fn postprocess_reference_pipeline() {
        let spec = LayerSpec {
            name: "pp".into(),
            kind: LayerKind::Linear {
                in_features: 1,
                out_features: 2,
            },
            mode: Mode::Exact,
            approx_bits: 0,
            thresholds: None,
            activation: Activation::Relu,
            pool: None,
            weight_scale: 0.5,
            weight_zero_point: 0,
            bn_scale: vec![2.0, 1.0],
            bn_bias: vec![0.25, -10.0],
            out_scale: 0.5,
            out_zero_point: 3,
        };
        // acc 0 with bias 0.25 -> 0.25 / 0.5 = 0.5 -> rounds away to 1 -> code 4
        // negative real under RELU -> clamps at zero -> code zp = 3
        let t = postprocess(&[0, 0], 1.0, &spec, vec![2]).unwrap();
        assert_eq!(t.values(), &[4, 3]);

        // Scalar straight-line oracle on random accumulators.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let acc: Vec<i64> = (0..64).map(|_| rng.random_range(-5000..5000)).collect();
        let got = postprocess(&acc, 0.01, &spec, vec![32, 2]).unwrap();
        for (i, &a) in acc.iter().enumerate() {
            let ch = i % 2;
            let mut real = a as f64 * 0.01 * spec.bn_scale[ch] + spec.bn_bias[ch];
            real = real.max(0.0);
            let q = (real / 0.5).round() + 3.0;
            assert_eq!(got.values()[i], q.clamp(0.0, 255.0) as u8);
        }
    }

    #[test]
    fn postprocess_rejects_non_finite() {
        let mut spec = LayerSpec {
            name: "pp".into(),
            kind: LayerKind::Linear {
                in_features: 1,
                out_features: 1,
            },
            mode: Mode::Exact,
            approx_bits: 0,
            thresholds: None,
            activation: Activation::None,
            pool: None,
            weight_scale: 1.0,
            weight_zero_point: 0,
            bn_scale: vec![f64::INFINITY],
            bn_bias: vec![0.0],
            out_scale: 1.0,
            out_zero_point: 0,
        };
        assert!(matches!(
            postprocess(&[1], 1.0, &spec, vec![1]),
            Err(Error::NonFinite)
        ));
        spec.bn_scale = vec![1.0];
        assert!(postprocess(&[1], 1.0, &spec, vec![1]).is_ok());
    }

    #[test]
    fn max_pool_and_global_avg() {
        let t =
            QuantTensor::new(vec![2, 2, 2], vec![1, 10, 2, 20, 3, 30, 4, 41], 8, 1.0, 0).unwrap();
        let m = apply_pool(&t, Pool::Max2).unwrap();
        assert_eq!(m.shape(), &[1, 1, 2]);
        assert_eq!(m.values(), &[4, 41]);
        let g = apply_pool(&t, Pool::GlobalAvg).unwrap();
        // channel 0: (1+2+3+4)/4 = 2.5 -> 3 (ties away); channel 1: 101/4 -> 25
        assert_eq!(g.values(), &[3, 25]);
    }
}
