//! Seeded desk-scale model generator.
//!
//! Emits a small CNN plus a matching evaluation batch. Quantization is
//! calibrated the way a post-training quantizer would: BN folded to
//! normalize each channel's accumulator to unit RMS and output scales picked
//! from the observed real range over seeded calibration inputs.
//!
//! A purely random network has no class structure: its ten logits are
//! i.i.d., so near-ties are common and argmax is fragile under any
//! perturbation, approximate computing included. To make the model behave
//! like a classifier with meaningful margins, the head is built as a
//! training-free prototype matcher: one seeded prototype image per class is
//! pushed through the CONV stage exactly, and each classifier row is the
//! binary signature of its class's feature vector. The evaluation batch
//! draws jittered copies of the prototypes, giving inputs the margin
//! structure real data has while leaving the bit-level statistics (and so
//! the hybrid path's approximation error) fully exercised.

use super::{
    postprocess, Activation, Layer, LayerKind, LayerSpec, Mode, Network, QuantTensor, ACT_BITS,
};
use crate::error::Result;
use crate::inference::manifest::save_network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// File next to `manifest.json` holding the seeded evaluation inputs,
/// concatenated raw u8 tensors.
pub const EVAL_INPUTS_FILE: &str = "eval.u8";

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub seed: u64,
    /// Feature channels of the CONV stage.
    pub channels: usize,
    /// Classifier width.
    pub classes: usize,
    /// Input height and width.
    pub input_hw: usize,
    /// Approximation width of the hybrid layers.
    pub approx_bits: u8,
    /// Size of the emitted evaluation batch.
    pub eval_count: usize,
    /// Uniform per-pixel jitter (in codes) applied to prototypes when
    /// drawing evaluation inputs.
    pub eval_jitter: u8,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 42,
            channels: 64,
            classes: 10,
            input_hw: 8,
            approx_bits: 4,
            eval_count: 500,
            eval_jitter: 96,
        }
    }
}

const CALIBRATION_INPUTS: usize = 6;

// RNG stream layout (all on the model seed).
const STREAM_WEIGHTS: u64 = 1;
const STREAM_BIASES: u64 = 2;
const STREAM_PROTOTYPES: u64 = 200;
const STREAM_EVAL: u64 = 300;
const STREAM_CALIB: u64 = 10_000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Weight code distributions the generator draws from.
#[derive(Clone, Copy, Debug)]
enum WeightStyle {
    /// Uniform codes over the full range, zero point 128.
    Uniform,
    /// Binary-connect style codes {0, 240} around zero point 120: maximum
    /// template contrast, and an empty weight LSB nibble so the hybrid
    /// path's approximate set carries only activation LSB cycles.
    BinaryHigh,
    /// Binary signature of a class prototype's feature vector.
    PrototypeSignature,
}

impl WeightStyle {
    fn zero_point(&self) -> u8 {
        match self {
            WeightStyle::Uniform => 128,
            _ => 120,
        }
    }

    fn scale(&self) -> f64 {
        match self {
            WeightStyle::Uniform => 1.0 / 128.0,
            _ => 1.0 / 120.0,
        }
    }
}

struct StageDraft {
    name: String,
    kind: LayerKind,
    mode: Mode,
    activation: Activation,
    weight_style: WeightStyle,
    /// Uniform pre-activation bias range; a positive shift keeps ReLU from
    /// zeroing too much of the feature map.
    bias_range: (f64, f64),
    out_zero_point: u8,
    /// Fraction of the code range the largest calibration value maps to.
    headroom: f64,
}

/// The seeded prototype image for one class.
fn prototype_codes(cfg: &GenConfig, class: usize) -> Vec<u8> {
    let mut rng = stream_rng(cfg.seed, STREAM_PROTOTYPES + class as u64);
    (0..cfg.input_hw * cfg.input_hw * 3)
        .map(|_| rng.random())
        .collect()
}

fn jittered(codes: &[u8], jitter: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let j = jitter as i16;
    codes
        .iter()
        .map(|&v| {
            let shifted = v as i16 + rng.random_range(-j..=j);
            shifted.clamp(0, 255) as u8
        })
        .collect()
}

/// Evaluation input `index`: a jittered copy of prototype `index % classes`.
pub fn eval_input_codes(cfg: &GenConfig, index: usize) -> Vec<u8> {
    let proto = prototype_codes(cfg, index % cfg.classes);
    let mut rng = stream_rng(cfg.seed, STREAM_EVAL + index as u64);
    jittered(&proto, cfg.eval_jitter, &mut rng)
}

/// Binary class signature: 240 where the feature beats the class median.
fn signature_row(features: &[u8]) -> Vec<u8> {
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let strict: usize = features.iter().filter(|&&f| f > median).count();
    // Fall back to >= when the median value is heavily tied (e.g. many
    // ReLU zeros), keeping the signature reasonably dense.
    let keep_equal = strict * 4 < features.len();
    features
        .iter()
        .map(|&f| {
            if f > median || (keep_equal && f == median) {
                240
            } else {
                0
            }
        })
        .collect()
}

/// Builds the network in memory; `generate_model` persists it.
pub fn generate_network(cfg: &GenConfig) -> Result<Network> {
    let hw = cfg.input_hw;
    let ch = cfg.channels;
    let input_shape = vec![hw, hw, 3];
    let input_scale = 1.0 / 32.0;
    let input_zero_point = 0u8;

    let mut weight_rng = stream_rng(cfg.seed, STREAM_WEIGHTS);
    let mut bias_rng = stream_rng(cfg.seed, STREAM_BIASES);

    let make_input = |codes: Vec<u8>| {
        QuantTensor::new(
            input_shape.clone(),
            codes,
            ACT_BITS,
            input_scale,
            input_zero_point,
        )
    };

    // Calibration set: jittered prototypes, so scales are calibrated on the
    // distribution the model is evaluated on.
    let mut calib: Vec<QuantTensor> = (0..CALIBRATION_INPUTS)
        .map(|i| {
            let proto = prototype_codes(cfg, i % cfg.classes);
            let mut rng = stream_rng(cfg.seed, STREAM_CALIB + i as u64);
            make_input(jittered(&proto, cfg.eval_jitter, &mut rng))
        })
        .collect::<Result<_>>()?;
    // Class prototypes ride along to become feature signatures at the head.
    let mut protos: Vec<QuantTensor> = (0..cfg.classes)
        .map(|c| make_input(prototype_codes(cfg, c)))
        .collect::<Result<_>>()?;

    let stages = [
        StageDraft {
            name: "conv1".into(),
            kind: LayerKind::Conv2d {
                kernel: 3,
                stride: 1,
                padding: 1,
                in_channels: 3,
                out_channels: ch,
            },
            mode: Mode::Exact,
            activation: Activation::Relu,
            weight_style: WeightStyle::Uniform,
            bias_range: (0.0, 0.5),
            out_zero_point: 0,
            headroom: 250.0 / 255.0,
        },
        StageDraft {
            name: "conv2".into(),
            kind: LayerKind::Conv2d {
                kernel: 3,
                stride: 1,
                padding: 1,
                in_channels: ch,
                out_channels: ch,
            },
            mode: Mode::Hybrid,
            activation: Activation::Relu,
            weight_style: WeightStyle::BinaryHigh,
            bias_range: (0.0, 0.5),
            out_zero_point: 0,
            headroom: 250.0 / 255.0,
        },
        StageDraft {
            name: "fc".into(),
            kind: LayerKind::Linear {
                in_features: hw * hw * ch,
                out_features: cfg.classes,
            },
            mode: Mode::Hybrid,
            activation: Activation::None,
            weight_style: WeightStyle::PrototypeSignature,
            bias_range: (0.0, 0.0),
            out_zero_point: 128,
            headroom: 120.0 / 255.0,
        },
    ];

    let mut in_scale = input_scale;
    let mut in_zp = input_zero_point;
    let mut layers = Vec::with_capacity(stages.len());

    for stage in stages {
        let n = stage.kind.reduction_len();
        let outs = stage.kind.out_features();
        let codes: Vec<u8> = match stage.weight_style {
            WeightStyle::Uniform => (0..outs * n).map(|_| weight_rng.random()).collect(),
            WeightStyle::BinaryHigh => (0..outs * n)
                .map(|_| if weight_rng.random_bool(0.5) { 240 } else { 0 })
                .collect(),
            WeightStyle::PrototypeSignature => protos
                .iter()
                .flat_map(|p| signature_row(p.values()))
                .collect(),
        };
        let w_scale = stage.weight_style.scale();
        let w_zero = stage.weight_style.zero_point();
        let weights = QuantTensor::new(vec![outs, n], codes, ACT_BITS, w_scale, w_zero)?;

        // Pass 1: raw accumulators over the calibration set with identity BN.
        let draft_spec = LayerSpec {
            name: stage.name.clone(),
            kind: stage.kind.clone(),
            mode: stage.mode,
            approx_bits: cfg.approx_bits,
            thresholds: None,
            activation: stage.activation,
            pool: None,
            weight_scale: w_scale,
            weight_zero_point: w_zero,
            bn_scale: vec![1.0; outs],
            bn_bias: vec![0.0; outs],
            out_scale: 1.0,
            out_zero_point: stage.out_zero_point,
        };
        let draft = Layer::new(draft_spec.clone(), weights.clone())?;
        let acc_scale = in_scale * w_scale;
        let all_accs: Vec<Vec<i64>> = calib
            .iter()
            .map(|t| draft.accumulate_exact(t, in_zp))
            .collect::<Result<_>>()?;

        // Fold BN: unit accumulator RMS per channel, plus a small bias.
        let mut sum_sq = vec![0.0f64; outs];
        let mut count = vec![0u64; outs];
        for accs in &all_accs {
            for (i, &a) in accs.iter().enumerate() {
                let real = a as f64 * acc_scale;
                sum_sq[i % outs] += real * real;
                count[i % outs] += 1;
            }
        }
        // BN parameters are persisted as f32; quantize them now so the
        // in-memory network and the saved model compute identically.
        let bn_scale: Vec<f64> = (0..outs)
            .map(|c| {
                let rms = (sum_sq[c] / count[c].max(1) as f64).sqrt();
                let scale = if rms > 1e-12 { 1.0 / rms } else { 1.0 };
                scale as f32 as f64
            })
            .collect();
        let (bias_lo, bias_hi) = stage.bias_range;
        let bn_bias: Vec<f64> = (0..outs)
            .map(|_| {
                let bias = if bias_hi > bias_lo {
                    bias_rng.random_range(bias_lo..bias_hi)
                } else {
                    bias_lo
                };
                bias as f32 as f64
            })
            .collect();

        // Pick the output scale from the post-BN real range.
        let mut max_mag = 0.0f64;
        for accs in &all_accs {
            for (i, &a) in accs.iter().enumerate() {
                let c = i % outs;
                let mut real = a as f64 * acc_scale * bn_scale[c] + bn_bias[c];
                if stage.activation == Activation::Relu {
                    real = real.max(0.0);
                }
                max_mag = max_mag.max(real.abs());
            }
        }
        if max_mag <= 0.0 {
            max_mag = 1.0;
        }
        let out_scale = max_mag / (255.0 * stage.headroom);

        let spec = LayerSpec {
            bn_scale,
            bn_bias,
            out_scale,
            ..draft_spec
        };
        let layer = Layer::new(spec.clone(), weights)?;

        // Propagate calibration inputs and prototypes through the layer.
        let out_shape = match spec.kind {
            LayerKind::Conv2d { out_channels, .. } => {
                let (oh, ow) = super::conv_output_dims_of(&spec.kind, calib[0].shape())?;
                vec![oh, ow, out_channels]
            }
            LayerKind::Linear { out_features, .. } => vec![out_features],
        };
        calib = all_accs
            .iter()
            .map(|accs| postprocess(accs, acc_scale, &spec, out_shape.clone()))
            .collect::<Result<_>>()?;
        protos = protos
            .iter()
            .map(|p| {
                let accs = layer.accumulate_exact(p, in_zp)?;
                postprocess(&accs, acc_scale, &spec, out_shape.clone())
            })
            .collect::<Result<_>>()?;

        in_scale = spec.out_scale;
        in_zp = spec.out_zero_point;
        layers.push(layer);
    }

    Network::new(input_shape, input_scale, input_zero_point, layers)
}

/// Generates a model directory: manifest, tensor files and the evaluation
/// batch.
pub fn generate_model(dir: &Path, cfg: &GenConfig) -> Result<()> {
    let net = generate_network(cfg)?;
    save_network(dir, &net)?;
    let mut batch = Vec::with_capacity(cfg.eval_count * cfg.input_hw * cfg.input_hw * 3);
    for i in 0..cfg.eval_count {
        batch.extend_from_slice(&eval_input_codes(cfg, i));
    }
    std::fs::write(dir.join(EVAL_INPUTS_FILE), batch)?;
    Ok(())
}
