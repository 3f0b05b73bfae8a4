//! Model directory format: `manifest.json` describing the layer list and
//! quantization parameters in decimal, next to raw little-endian tensor
//! files (u8 codes for weights, f32 for the folded BN scale/bias pairs).

use super::{Activation, Layer, LayerKind, LayerSpec, Mode, Network, Pool, QuantTensor, ACT_BITS};
use crate::error::{Error, Result};
use crate::pac::Thresholds;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub input: InputDoc,
    pub layers: Vec<LayerDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputDoc {
    pub shape: Vec<usize>,
    pub scale: f64,
    pub zero_point: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerDoc {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_features: Option<usize>,
    pub weight_file: String,
    pub weight_scale: f64,
    pub weight_zero_point: u8,
    pub mode: String,
    pub approx_bits: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<[f64; 3]>,
    pub bn_file: String,
    pub activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    pub out_scale: f64,
    pub out_zero_point: u8,
}

fn layer_err(index: usize, name: &str, reason: impl Into<String>) -> Error {
    Error::Layer {
        index,
        name: name.to_string(),
        reason: reason.into(),
    }
}

fn parse_kind(doc: &LayerDoc, index: usize) -> Result<LayerKind> {
    let need = |field: Option<usize>, what: &str| {
        field.ok_or_else(|| layer_err(index, &doc.name, format!("missing field `{what}`")))
    };
    match doc.kind.as_str() {
        "CONV2D" => Ok(LayerKind::Conv2d {
            kernel: need(doc.kernel, "kernel")?,
            stride: need(doc.stride, "stride")?,
            padding: need(doc.padding, "padding")?,
            in_channels: need(doc.in_channels, "in_channels")?,
            out_channels: need(doc.out_channels, "out_channels")?,
        }),
        "LINEAR" => Ok(LayerKind::Linear {
            in_features: need(doc.in_features, "in_features")?,
            out_features: need(doc.out_features, "out_features")?,
        }),
        other => Err(layer_err(
            index,
            &doc.name,
            format!("unknown kind `{other}`"),
        )),
    }
}

fn parse_mode(s: &str, index: usize, name: &str) -> Result<Mode> {
    match s {
        "EXACT" => Ok(Mode::Exact),
        "HYBRID" => Ok(Mode::Hybrid),
        other => Err(layer_err(index, name, format!("unknown mode `{other}`"))),
    }
}

fn parse_activation(s: &str, index: usize, name: &str) -> Result<Activation> {
    match s {
        "RELU" => Ok(Activation::Relu),
        "NONE" => Ok(Activation::None),
        other => Err(layer_err(
            index,
            name,
            format!("unknown activation `{other}`"),
        )),
    }
}

fn parse_pool(s: Option<&str>, index: usize, name: &str) -> Result<Option<Pool>> {
    match s {
        None | Some("NONE") => Ok(None),
        Some("MAX2") => Ok(Some(Pool::Max2)),
        Some("GLOBAL_AVG") => Ok(Some(Pool::GlobalAvg)),
        Some(other) => Err(layer_err(index, name, format!("unknown pool `{other}`"))),
    }
}

/// Loads a model directory into an executable network, validating file sizes
/// and layer adjacency. Failures name the offending layer.
pub fn load_network(dir: &Path) -> Result<Network> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let doc: ManifestDoc = serde_json::from_reader(
        fs::File::open(&manifest_path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?,
    )?;

    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, ld) in doc.layers.iter().enumerate() {
        let kind = parse_kind(ld, i)?;
        let n = kind.reduction_len();
        let outs = kind.out_features();

        let weight_path = dir.join(&ld.weight_file);
        let weight_bytes = fs::read(&weight_path)
            .map_err(|e| layer_err(i, &ld.name, format!("{}: {e}", weight_path.display())))?;
        if weight_bytes.len() != outs * n {
            return Err(layer_err(
                i,
                &ld.name,
                format!(
                    "weight file holds {} codes, expected {} x {}",
                    weight_bytes.len(),
                    outs,
                    n
                ),
            ));
        }
        let weights = QuantTensor::new(
            vec![outs, n],
            weight_bytes,
            ACT_BITS,
            ld.weight_scale,
            ld.weight_zero_point,
        )
        .map_err(|e| e.in_layer(i, &ld.name))?;

        let bn_path = dir.join(&ld.bn_file);
        let bn_bytes = fs::read(&bn_path)
            .map_err(|e| layer_err(i, &ld.name, format!("{}: {e}", bn_path.display())))?;
        if bn_bytes.len() != 2 * outs * 4 {
            return Err(layer_err(
                i,
                &ld.name,
                format!(
                    "BN file holds {} bytes, expected {} (scale+bias f32 per output)",
                    bn_bytes.len(),
                    8 * outs
                ),
            ));
        }
        let bn: Vec<f64> = bn_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (bn_scale, bn_bias) = bn.split_at(outs);

        let thresholds = match ld.thresholds {
            Some([a, b, c]) => Some(Thresholds::new(a, b, c).map_err(|e| e.in_layer(i, &ld.name))?),
            None => None,
        };
        let spec = LayerSpec {
            name: ld.name.clone(),
            kind,
            mode: parse_mode(&ld.mode, i, &ld.name)?,
            approx_bits: ld.approx_bits,
            thresholds,
            activation: parse_activation(&ld.activation, i, &ld.name)?,
            pool: parse_pool(ld.pool.as_deref(), i, &ld.name)?,
            weight_scale: ld.weight_scale,
            weight_zero_point: ld.weight_zero_point,
            bn_scale: bn_scale.to_vec(),
            bn_bias: bn_bias.to_vec(),
            out_scale: ld.out_scale,
            out_zero_point: ld.out_zero_point,
        };
        layers.push(Layer::new(spec, weights).map_err(|e| e.in_layer(i, &ld.name))?);
    }

    Network::new(
        doc.input.shape,
        doc.input.scale,
        doc.input.zero_point,
        layers,
    )
}

/// Writes a network back out as a model directory.
pub fn save_network(dir: &Path, net: &Network) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut docs = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let spec = layer.spec();
        let weight_file = format!("layer{i}.w.u8");
        let bn_file = format!("layer{i}.bn.f32");
        fs::write(dir.join(&weight_file), layer.weights().values())?;
        let mut bn_bytes = Vec::with_capacity(8 * spec.bn_scale.len());
        for v in spec.bn_scale.iter().chain(&spec.bn_bias) {
            bn_bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(dir.join(&bn_file), bn_bytes)?;

        let (kernel, stride, padding, in_ch, out_ch, in_f, out_f) = match spec.kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
            } => (
                Some(kernel),
                Some(stride),
                Some(padding),
                Some(in_channels),
                Some(out_channels),
                None,
                None,
            ),
            LayerKind::Linear {
                in_features,
                out_features,
            } => (
                None,
                None,
                None,
                None,
                None,
                Some(in_features),
                Some(out_features),
            ),
        };
        docs.push(LayerDoc {
            name: spec.name.clone(),
            kind: spec.kind.as_str().to_string(),
            kernel,
            stride,
            padding,
            in_channels: in_ch,
            out_channels: out_ch,
            in_features: in_f,
            out_features: out_f,
            weight_file,
            weight_scale: spec.weight_scale,
            weight_zero_point: spec.weight_zero_point,
            mode: spec.mode.as_str().to_string(),
            approx_bits: spec.approx_bits,
            thresholds: spec.thresholds.map(|t| {
                let (a, b, c) = t.as_tuple();
                [a, b, c]
            }),
            bn_file,
            activation: match spec.activation {
                Activation::Relu => "RELU".to_string(),
                Activation::None => "NONE".to_string(),
            },
            pool: spec.pool.map(|p| {
                match p {
                    Pool::Max2 => "MAX2",
                    Pool::GlobalAvg => "GLOBAL_AVG",
                }
                .to_string()
            }),
            out_scale: spec.out_scale,
            out_zero_point: spec.out_zero_point,
        });
    }
    let doc = ManifestDoc {
        input: InputDoc {
            shape: net.input_shape().to_vec(),
            scale: net.input_scale(),
            zero_point: net.input_zero_point(),
        },
        layers: docs,
    };
    let file = fs::File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(file, &doc)?;
    Ok(())
}

/// Reads a raw u8 input tensor file shaped per the network manifest.
pub fn read_input_tensor(path: &Path, net: &Network) -> Result<QuantTensor> {
    let bytes = fs::read(path)?;
    let numel: usize = net.input_shape().iter().product();
    if bytes.len() != numel {
        return Err(Error::InvalidArgument(format!(
            "input file holds {} bytes, network expects {numel}",
            bytes.len()
        )));
    }
    net.input_tensor(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_geometry_is_layer_indexed() {
        let doc = LayerDoc {
            name: "c0".into(),
            kind: "CONV2D".into(),
            kernel: None,
            stride: Some(1),
            padding: Some(0),
            in_channels: Some(3),
            out_channels: Some(8),
            in_features: None,
            out_features: None,
            weight_file: "w".into(),
            weight_scale: 1.0,
            weight_zero_point: 0,
            mode: "EXACT".into(),
            approx_bits: 0,
            thresholds: None,
            bn_file: "b".into(),
            activation: "NONE".into(),
            pool: None,
            out_scale: 1.0,
            out_zero_point: 0,
        };
        let err = parse_kind(&doc, 3).unwrap_err().to_string();
        assert!(err.contains("layer 3"), "{err}");
        assert!(err.contains("kernel"), "{err}");
    }

    #[test]
    fn unknown_enums_rejected() {
        assert!(parse_mode("FAST", 0, "x").is_err());
        assert!(parse_activation("GELU", 0, "x").is_err());
        assert!(parse_pool(Some("AVG3"), 0, "x").is_err());
        assert!(parse_pool(Some("NONE"), 0, "x").unwrap().is_none());
    }
}
