//! Network manifest, weight blob, float reference weights and dataset
//! loading.
//!
//! A network ships as a JSON manifest describing layers, shapes and
//! QuantSpecs, plus byte offsets into a weight blob that concatenates
//! one `GVT1` record per weight/bias tensor. Datasets are directories
//! of `GVT1` image tensors with a `labels.csv` index. The original
//! floating-point weights ride along in a JSON sidecar for provenance
//! checks against the float executor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_tensor, read_tensor};
use crate::matrix::IntMatrix;
use crate::nn::{Layer, NetworkModel, QuantSpec, QuantTensor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ManifestLayer {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        w_spec: QuantSpec,
        out_spec: Option<QuantSpec>,
        weight_offset: u64,
        bias_offset: Option<u64>,
    },
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
        w_spec: QuantSpec,
        out_spec: Option<QuantSpec>,
        weight_offset: u64,
        bias_offset: Option<u64>,
    },
    Relu,
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    Avgpool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    ResidualAdd {
        from: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestInput {
    shape: [usize; 3],
    spec: QuantSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input: ManifestInput,
    classes: usize,
    weights_file: String,
    layers: Vec<ManifestLayer>,
}

fn read_tensor_at(file: &mut BufReader<File>, offset: u64) -> Result<crate::io::Tensor> {
    file.seek(SeekFrom::Start(offset))?;
    read_tensor(file)
}

fn read_weight_matrix(
    file: &mut BufReader<File>,
    offset: u64,
    rows: usize,
    cols: usize,
    spec: &QuantSpec,
    name: &str,
) -> Result<IntMatrix> {
    let t = read_tensor_at(file, offset)?;
    let n: usize = t.dims.iter().product();
    if n != rows * cols {
        return Err(Error::format(format!(
            "weights for {name}: {n} elements, expected {rows}x{cols}"
        )));
    }
    if t.bits != spec.bits {
        return Err(Error::format(format!(
            "weights for {name}: container bits {} vs spec bits {}",
            t.bits, spec.bits
        )));
    }
    IntMatrix::new(rows, cols, t.data, spec.bits, spec.signedness)
}

fn read_bias(
    file: &mut BufReader<File>,
    offset: Option<u64>,
    len: usize,
    name: &str,
) -> Result<Option<Vec<i32>>> {
    match offset {
        None => Ok(None),
        Some(off) => {
            let t = read_tensor_at(file, off)?;
            if t.data.len() != len {
                return Err(Error::format(format!(
                    "bias for {name}: {} elements, expected {len}",
                    t.data.len()
                )));
            }
            Ok(Some(t.data))
        }
    }
}

/// Load a network from its manifest; the weight blob resolves
/// relative to the manifest's directory.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<NetworkModel> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::config(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let weights_path = dir.join(&manifest.weights_file);
    let mut blob = BufReader::new(File::open(&weights_path)?);

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for ml in &manifest.layers {
        layers.push(match ml {
            ManifestLayer::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                w_spec,
                out_spec,
                weight_offset,
                bias_offset,
            } => Layer::Conv2d {
                name: name.clone(),
                in_channels: *in_channels,
                out_channels: *out_channels,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
                weights: read_weight_matrix(
                    &mut blob,
                    *weight_offset,
                    *out_channels,
                    in_channels * kernel * kernel,
                    w_spec,
                    name,
                )?,
                bias: read_bias(&mut blob, *bias_offset, *out_channels, name)?,
                w_spec: *w_spec,
                out_spec: *out_spec,
            },
            ManifestLayer::Linear {
                name,
                in_features,
                out_features,
                w_spec,
                out_spec,
                weight_offset,
                bias_offset,
            } => Layer::Linear {
                name: name.clone(),
                in_features: *in_features,
                out_features: *out_features,
                weights: read_weight_matrix(
                    &mut blob,
                    *weight_offset,
                    *out_features,
                    *in_features,
                    w_spec,
                    name,
                )?,
                bias: read_bias(&mut blob, *bias_offset, *out_features, name)?,
                w_spec: *w_spec,
                out_spec: *out_spec,
            },
            ManifestLayer::Relu => Layer::Relu,
            ManifestLayer::Maxpool { kernel, stride } => {
                Layer::MaxPool { kernel: *kernel, stride: *stride }
            }
            ManifestLayer::Avgpool { kernel, stride } => {
                Layer::AvgPool { kernel: *kernel, stride: *stride }
            }
            ManifestLayer::Flatten => Layer::Flatten,
            ManifestLayer::ResidualAdd { from } => Layer::ResidualAdd { from: *from },
        });
    }
    let model = NetworkModel {
        input_shape: manifest.input.shape,
        input_spec: manifest.input.spec,
        layers,
        classes: manifest.classes,
    };
    // validate shape consistency once at load
    model.gemm_layer_info()?;
    Ok(model)
}

/// Original float weights, keyed by layer name.
#[derive(Debug, Serialize, Deserialize)]
pub struct FloatWeights {
    pub layers: BTreeMap<String, FloatLayerWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FloatLayerWeights {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

pub fn load_float_weights(path: impl AsRef<Path>) -> Result<FloatWeights> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Float reference forward pass over the original weights; provenance
/// check for the quantized fixture, not an execution path.
pub fn infer_float(
    model: &NetworkModel,
    weights: &FloatWeights,
    input: &[f64],
) -> Result<Vec<f64>> {
    let [c0, h0, w0] = model.input_shape;
    if input.len() != c0 * h0 * w0 {
        return Err(Error::DimensionMismatch("float input size".into()));
    }
    let mut act = input.to_vec();
    let mut shape = vec![c0, h0, w0];
    let mut saved: Vec<Option<(Vec<f64>, Vec<usize>)>> = vec![None; model.layers.len()];
    for (li, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Conv2d {
                name, in_channels, out_channels, kernel, stride, padding, ..
            } => {
                let fw = weights
                    .layers
                    .get(name)
                    .ok_or_else(|| Error::config(format!("no float weights for {name}")))?;
                let (h, w) = (shape[1], shape[2]);
                let h_out = (h + 2 * padding - kernel) / stride + 1;
                let w_out = (w + 2 * padding - kernel) / stride + 1;
                let mut out = vec![0.0f64; out_channels * h_out * w_out];
                for oc in 0..*out_channels {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let mut s = fw.bias.as_ref().map_or(0.0, |b| b[oc]);
                            for ic in 0..*in_channels {
                                for ky in 0..*kernel {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy as usize >= h {
                                        continue;
                                    }
                                    for kx in 0..*kernel {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix as usize >= w {
                                            continue;
                                        }
                                        let xv = act[(ic * h + iy as usize) * w + ix as usize];
                                        let wv = fw.data
                                            [((oc * in_channels + ic) * kernel + ky) * kernel + kx];
                                        s += xv * wv;
                                    }
                                }
                            }
                            out[(oc * h_out + oy) * w_out + ox] = s;
                        }
                    }
                }
                act = out;
                shape = vec![*out_channels, h_out, w_out];
            }
            Layer::Linear { name, in_features, out_features, .. } => {
                let fw = weights
                    .layers
                    .get(name)
                    .ok_or_else(|| Error::config(format!("no float weights for {name}")))?;
                let mut out = vec![0.0f64; *out_features];
                for (of, slot) in out.iter_mut().enumerate() {
                    let mut s = fw.bias.as_ref().map_or(0.0, |b| b[of]);
                    for i in 0..*in_features {
                        s += act[i] * fw.data[of * in_features + i];
                    }
                    *slot = s;
                }
                act = out;
                shape = vec![*out_features];
            }
            Layer::Relu => {
                for v in act.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            Layer::MaxPool { kernel, stride } | Layer::AvgPool { kernel, stride } => {
                let is_max = matches!(layer, Layer::MaxPool { .. });
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let h_out = (h - kernel) / stride + 1;
                let w_out = (w - kernel) / stride + 1;
                let mut out = vec![0.0f64; c * h_out * w_out];
                for ch in 0..c {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let mut best = f64::NEG_INFINITY;
                            let mut sum = 0.0;
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let v =
                                        act[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                                    best = best.max(v);
                                    sum += v;
                                }
                            }
                            out[(ch * h_out + oy) * w_out + ox] = if is_max {
                                best
                            } else {
                                sum / (kernel * kernel) as f64
                            };
                        }
                    }
                }
                act = out;
                shape = vec![c, h_out, w_out];
            }
            Layer::Flatten => {
                shape = vec![act.len()];
            }
            Layer::ResidualAdd { from } => {
                let (skip, _) = saved
                    .get(*from)
                    .and_then(|s| s.as_ref())
                    .ok_or_else(|| Error::invalid(format!("no saved output for layer {from}")))?;
                for (v, s) in act.iter_mut().zip(skip) {
                    *v += s;
                }
            }
        }
        saved[li] = Some((act.clone(), shape.clone()));
    }
    Ok(act)
}

/// One labeled image: the raw container plus its label.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub label: usize,
    /// Raw pixel tensor (`[C, H, W]`, values 0..255).
    pub image: crate::io::Tensor,
}

/// Load a dataset directory: `labels.csv` rows of `filename,label`,
/// images as `GVT1` tensors next to it.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    let dir = dir.as_ref();
    let labels_path = dir.join("labels.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&labels_path)
        .map_err(|e| Error::format(format!("labels.csv: {e}")))?;
    let mut items = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("labels.csv: {e}")))?;
        if record.len() != 2 {
            return Err(Error::format("labels.csv rows must be filename,label"));
        }
        let name = record[0].to_string();
        let label: usize = record[1]
            .parse()
            .map_err(|_| Error::format(format!("bad label {:?}", &record[1])))?;
        let image = load_tensor(dir.join(&name))?;
        items.push(DatasetItem { name, label, image });
    }
    if items.is_empty() {
        return Err(Error::format("dataset has no items"));
    }
    Ok(items)
}

/// Map raw pixels (0..255) to the float range `[-1, 1]`.
pub fn to_float_input(item: &DatasetItem) -> Vec<f64> {
    item.image.data.iter().map(|&p| p as f64 / 127.5 - 1.0).collect()
}

/// Quantize an image to the model's input spec.
pub fn to_model_input(item: &DatasetItem, model: &NetworkModel) -> Result<QuantTensor> {
    if item.image.dims != model.input_shape.to_vec() {
        return Err(Error::DimensionMismatch(format!(
            "image dims {:?} vs model input {:?}",
            item.image.dims, model.input_shape
        )));
    }
    QuantTensor::from_float(
        model.input_shape.to_vec(),
        &to_float_input(item),
        model.input_spec,
    )
}

/// Items quantized for the model, paired with labels.
pub fn quantized_dataset(
    items: &[DatasetItem],
    model: &NetworkModel,
) -> Result<Vec<(QuantTensor, usize)>> {
    items
        .iter()
        .map(|it| to_model_input(it, model).map(|t| (t, it.label)))
        .collect()
}
