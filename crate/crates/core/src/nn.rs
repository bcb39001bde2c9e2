//! Uniform symmetric quantization and a small quantized-network
//! executor whose GEMMs run on the bit-serial engine.
//!
//! Convolutions lower to GEMM via im2col; activations requantize
//! between layers with per-tensor scales. A fully guarded plan runs
//! bit-identically to a plain integer reference executor, which keeps
//! the engine path checkable; a float executor over the original
//! weights documents the fixture's provenance.


use serde::{Deserialize, Serialize};

use crate::engine::{gemm_exact, gemm_gav, GemmJob, GemmResult};
use crate::errmodel::ErrorLut;
use crate::error::{Error, Result};
use crate::matrix::{IntMatrix, Signedness};
use crate::power::PowerModel;
use crate::rng::substream_u64;
use crate::schedule::{ArrayShape, GavSchedule};

/// Uniform symmetric quantization: `q = clamp(round(x / scale))` with
/// the signed range restricted to `+/-(2^(bits-1) - 1)` so negation is
/// closed; `dequant(q) = q * scale`. Rounding is half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub scale: f64,
    pub signedness: Signedness,
}

impl QuantSpec {
    pub fn new(bits: u8, scale: f64, signedness: Signedness) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::invalid("quantization scale must be positive"));
        }
        if !(2..=8).contains(&bits) {
            return Err(Error::invalid("quantized tensors use 2..=8 bits"));
        }
        Ok(Self { bits, scale, signedness })
    }

    /// Inclusive integer bounds of the symmetric range.
    pub fn bounds(&self) -> (i32, i32) {
        match self.signedness {
            Signedness::Signed => {
                let m = (1i32 << (self.bits - 1)) - 1;
                (-m, m)
            }
            Signedness::Unsigned => (0, (1i32 << self.bits) - 1),
        }
    }

    pub fn quantize_value(&self, x: f64) -> i32 {
        let (lo, hi) = self.bounds();
        let q = (x / self.scale).round();
        (q as i64).clamp(lo as i64, hi as i64) as i32
    }

    pub fn dequantize_value(&self, q: i32) -> f64 {
        q as f64 * self.scale
    }
}

/// Quantize a float tensor elementwise.
pub fn quantize(values: &[f64], spec: &QuantSpec) -> Result<Vec<i32>> {
    if spec.scale <= 0.0 {
        return Err(Error::invalid("quantization scale must be positive"));
    }
    Ok(values.iter().map(|&x| spec.quantize_value(x)).collect())
}

/// Integer tensor with its quantization spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
    pub spec: QuantSpec,
}

impl QuantTensor {
    pub fn from_float(shape: Vec<usize>, values: &[f64], spec: QuantSpec) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::DimensionMismatch("tensor shape vs data".into()));
        }
        Ok(Self { shape, data: quantize(values, &spec)?, spec })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Network layers. Convolutions and linear layers carry integer
/// weights inside their weight QuantSpec range; `out_spec = None`
/// leaves the layer output dequantized (float logits).
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// `[out_channels, in_channels * kernel * kernel]`
        weights: IntMatrix,
        /// Accumulator-unit bias (scale `in.scale * w.scale`).
        bias: Option<Vec<i32>>,
        w_spec: QuantSpec,
        out_spec: Option<QuantSpec>,
    },
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
        /// `[out_features, in_features]`
        weights: IntMatrix,
        bias: Option<Vec<i32>>,
        w_spec: QuantSpec,
        out_spec: Option<QuantSpec>,
    },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    AvgPool { kernel: usize, stride: usize },
    Flatten,
    /// Add the saved output of an earlier layer (rescaled to the
    /// current spec) to the running activation.
    ResidualAdd { from: usize },
}

impl Layer {
    fn is_gemm(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Linear { .. })
    }
}

/// A shape-consistent quantized network.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    /// Input activation tensor shape `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub input_spec: QuantSpec,
    pub layers: Vec<Layer>,
    pub classes: usize,
}

/// Shape and cost summary of one GEMM-bearing layer.
#[derive(Debug, Clone)]
pub struct GemmLayerInfo {
    /// Index into `NetworkModel::layers`.
    pub layer_index: usize,
    pub name: String,
    /// Mathematical MACs of the layer.
    pub macs: u64,
    pub a_bits: u8,
    pub b_bits: u8,
    pub max_g: u8,
}

impl NetworkModel {
    pub fn gemm_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_gemm()).count()
    }

    /// Per-GEMM-layer shape info, via shape propagation from the input.
    pub fn gemm_layer_info(&self) -> Result<Vec<GemmLayerInfo>> {
        let mut infos = Vec::new();
        let mut shape = self.input_shape.to_vec();
        let mut bits = self.input_spec.bits;
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    w_spec,
                    out_spec,
                    ..
                } => {
                    if shape.len() != 3 || shape[0] != *in_channels {
                        return Err(Error::DimensionMismatch(format!(
                            "conv {name}: input shape {shape:?} vs {in_channels} channels"
                        )));
                    }
                    let h_out = conv_out(shape[1], *kernel, *stride, *padding)?;
                    let w_out = conv_out(shape[2], *kernel, *stride, *padding)?;
                    let c_inner = in_channels * kernel * kernel;
                    infos.push(GemmLayerInfo {
                        layer_index: li,
                        name: name.clone(),
                        macs: (c_inner * h_out * w_out * out_channels) as u64,
                        a_bits: bits,
                        b_bits: w_spec.bits,
                        max_g: GavSchedule::max_g_for(bits, w_spec.bits),
                    });
                    shape = vec![*out_channels, h_out, w_out];
                    bits = out_spec.map_or(bits, |s| s.bits);
                }
                Layer::Linear { name, in_features, out_features, w_spec, out_spec, .. } => {
                    let flat: usize = shape.iter().product();
                    if flat != *in_features {
                        return Err(Error::DimensionMismatch(format!(
                            "linear {name}: input {flat} vs {in_features} features"
                        )));
                    }
                    infos.push(GemmLayerInfo {
                        layer_index: li,
                        name: name.clone(),
                        macs: (in_features * out_features) as u64,
                        a_bits: bits,
                        b_bits: w_spec.bits,
                        max_g: GavSchedule::max_g_for(bits, w_spec.bits),
                    });
                    shape = vec![*out_features];
                    bits = out_spec.map_or(bits, |s| s.bits);
                }
                Layer::MaxPool { kernel, stride } | Layer::AvgPool { kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(Error::DimensionMismatch("pool needs a CHW input".into()));
                    }
                    shape = vec![
                        shape[0],
                        pool_out(shape[1], *kernel, *stride)?,
                        pool_out(shape[2], *kernel, *stride)?,
                    ];
                }
                Layer::Flatten => {
                    shape = vec![shape.iter().product()];
                }
                Layer::Relu | Layer::ResidualAdd { .. } => {}
            }
        }
        Ok(infos)
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return Err(Error::DimensionMismatch("kernel larger than padded input".into()));
    }
    Ok((padded - kernel) / stride + 1)
}

fn pool_out(size: usize, kernel: usize, stride: usize) -> Result<usize> {
    if size < kernel || stride == 0 {
        return Err(Error::DimensionMismatch("pool window larger than input".into()));
    }
    Ok((size - kernel) / stride + 1)
}

/// Per-layer undervolting schedules, one per GEMM-bearing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GavPlan {
    pub schedules: Vec<GavSchedule>,
}

impl GavPlan {
    /// Same protection level on every GEMM layer.
    pub fn uniform(model: &NetworkModel, g: u8) -> Result<Self> {
        let infos = model.gemm_layer_info()?;
        let levels: Vec<u8> = infos.iter().map(|i| g.min(i.max_g)).collect();
        Self::from_levels(model, &levels)
    }

    /// Maximum protection everywhere (exact execution).
    pub fn fully_guarded(model: &NetworkModel) -> Result<Self> {
        let infos = model.gemm_layer_info()?;
        let levels: Vec<u8> = infos.iter().map(|i| i.max_g).collect();
        Self::from_levels(model, &levels)
    }

    /// Per-layer levels in GEMM-layer order.
    pub fn from_levels(model: &NetworkModel, levels: &[u8]) -> Result<Self> {
        let infos = model.gemm_layer_info()?;
        if levels.len() != infos.len() {
            return Err(Error::invalid(format!(
                "{} levels for {} GEMM layers",
                levels.len(),
                infos.len()
            )));
        }
        let schedules = infos
            .iter()
            .zip(levels)
            .map(|(info, &g)| GavSchedule::new(info.a_bits, info.b_bits, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { schedules })
    }

    pub fn levels(&self) -> Vec<u8> {
        self.schedules.iter().map(|s| s.g).collect()
    }

    /// True when no pass anywhere runs approximate.
    pub fn is_fully_guarded(&self) -> bool {
        self.schedules.iter().all(|s| s.approx_pass_count() == 0)
    }
}

/// im2col lowering: `[C_in, H, W]` activations to a
/// `[C_in * k * k, H_out * W_out]` operand whose GEMM against the
/// `[out_c, C_in * k * k]` weight matrix equals the convolution.
pub fn im2col(
    x: &QuantTensor,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<IntMatrix> {
    if x.shape.len() != 3 {
        return Err(Error::DimensionMismatch("im2col needs a CHW tensor".into()));
    }
    let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let h_out = conv_out(h, kernel, stride, padding)?;
    let w_out = conv_out(w, kernel, stride, padding)?;
    let rows = c_in * kernel * kernel;
    let cols = h_out * w_out;
    let mut data = vec![0i32; rows * cols];
    for ic in 0..c_in {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let r = (ic * kernel + ky) * kernel + kx;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        let v = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            x.data[(ic * h + iy as usize) * w + ix as usize]
                        } else {
                            0
                        };
                        data[r * cols + oy * w_out + ox] = v;
                    }
                }
            }
        }
    }
    IntMatrix::new(rows, cols, data, x.spec.bits, x.spec.signedness)
}

/// Round half away from zero; the fixed requantization rounding.
fn round_haz(x: f64) -> i64 {
    x.round() as i64
}

fn requantize(acc: i64, in_scale: f64, w_scale: f64, out: &QuantSpec) -> i32 {
    let (lo, hi) = out.bounds();
    let y = acc as f64 * (in_scale * w_scale) / out.scale;
    round_haz(y).clamp(lo as i64, hi as i64) as i32
}

/// Cycle/energy accounting of one GEMM layer execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub g: u8,
    pub a_bits: u8,
    pub b_bits: u8,
    pub cycles: u64,
    pub approx_cycles: u64,
    pub tiles: u64,
}

/// Output of one inference.
#[derive(Debug, Clone)]
pub struct InferOutput {
    /// Dequantized final-layer outputs.
    pub logits: Vec<f64>,
    pub layer_stats: Vec<LayerStats>,
    pub total_cycles: u64,
}

impl InferOutput {
    pub fn argmax(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Modeled energy of the recorded layer executions (uJ).
pub fn stats_energy_uj(stats: &[LayerStats], power: &PowerModel) -> Result<f64> {
    let mut total = 0.0;
    for s in stats {
        let schedule = GavSchedule::new(s.a_bits, s.b_bits, s.g)?;
        total += power.energy_uj(&schedule, s.cycles)?;
    }
    Ok(total)
}

/// Modeled per-inference energy of a plan without running data (uJ).
pub fn plan_energy_uj(
    model: &NetworkModel,
    plan: &GavPlan,
    shape: ArrayShape,
    power: &PowerModel,
) -> Result<f64> {
    let stats = plan_layer_stats(model, plan, shape)?;
    stats_energy_uj(&stats, power)
}

/// Cycle accounting of a plan from shapes alone.
pub fn plan_layer_stats(
    model: &NetworkModel,
    plan: &GavPlan,
    shape: ArrayShape,
) -> Result<Vec<LayerStats>> {
    let infos = model.gemm_layer_info()?;
    if plan.schedules.len() != infos.len() {
        return Err(Error::invalid("plan does not match the model"));
    }
    let mut cur = model.input_shape.to_vec();
    let mut stats = Vec::new();
    let mut gi = 0;
    for layer in &model.layers {
        match layer {
            Layer::Conv2d { name, in_channels, out_channels, kernel, stride, padding, .. } => {
                let h_out = conv_out(cur[1], *kernel, *stride, *padding)?;
                let w_out = conv_out(cur[2], *kernel, *stride, *padding)?;
                let sched = plan.schedules[gi];
                let tiles = crate::engine::tile_iterator(
                    in_channels * kernel * kernel,
                    h_out * w_out,
                    *out_channels,
                    shape,
                )
                .len() as u64;
                let passes = sched.total_passes() as u64;
                stats.push(LayerStats {
                    name: name.clone(),
                    g: sched.g,
                    a_bits: sched.a_bits,
                    b_bits: sched.b_bits,
                    cycles: tiles * passes,
                    approx_cycles: tiles * sched.approx_pass_count() as u64,
                    tiles,
                });
                cur = vec![*out_channels, h_out, w_out];
                gi += 1;
            }
            Layer::Linear { name, in_features, out_features, .. } => {
                let sched = plan.schedules[gi];
                let tiles =
                    crate::engine::tile_iterator(*in_features, 1, *out_features, shape).len()
                        as u64;
                let passes = sched.total_passes() as u64;
                stats.push(LayerStats {
                    name: name.clone(),
                    g: sched.g,
                    a_bits: sched.a_bits,
                    b_bits: sched.b_bits,
                    cycles: tiles * passes,
                    approx_cycles: tiles * sched.approx_pass_count() as u64,
                    tiles,
                });
                cur = vec![*out_features];
                gi += 1;
            }
            Layer::MaxPool { kernel, stride } | Layer::AvgPool { kernel, stride } => {
                cur = vec![cur[0], pool_out(cur[1], *kernel, *stride)?, pool_out(cur[2], *kernel, *stride)?];
            }
            Layer::Flatten => cur = vec![cur.iter().product()],
            Layer::Relu | Layer::ResidualAdd { .. } => {}
        }
    }
    Ok(stats)
}

enum Activation {
    Quant(QuantTensor),
    Float(Vec<f64>),
}

/// Run one input through the network on the bit-serial engine.
///
/// Every GEMM executes with its layer's schedule; layers whose
/// schedule contains approximate passes require the error model. A
/// fully guarded plan reproduces [`infer_reference`] bit-identically.
pub fn infer(
    model: &NetworkModel,
    plan: &GavPlan,
    input: &QuantTensor,
    lut: Option<&ErrorLut>,
    shape: ArrayShape,
    seed: u64,
) -> Result<InferOutput> {
    if input.shape != model.input_shape.to_vec() {
        return Err(Error::DimensionMismatch(format!(
            "input shape {:?} vs model {:?}",
            input.shape, model.input_shape
        )));
    }
    if plan.schedules.len() != model.gemm_layer_count() {
        return Err(Error::invalid("plan does not match the model"));
    }
    let mut act = Activation::Quant(input.clone());
    let mut saved: Vec<Option<QuantTensor>> = vec![None; model.layers.len()];
    let mut stats = Vec::new();
    let mut gi = 0usize;

    for (li, layer) in model.layers.iter().enumerate() {
        act = match layer {
            Layer::Conv2d {
                name,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
                w_spec,
                out_spec,
                ..
            } => {
                let x = as_quant(&act, name)?;
                let a_mat = im2col(x, *kernel, *stride, *padding)?;
                let h_out = conv_out(x.shape[1], *kernel, *stride, *padding)?;
                let w_out = conv_out(x.shape[2], *kernel, *stride, *padding)?;
                let sched = plan.schedules[gi];
                let r = run_gemm(&a_mat, weights, shape, sched, lut, seed, gi, name)?;
                stats.push(layer_stats(name, &sched, &r));
                gi += 1;
                finish_gemm(
                    &r,
                    bias.as_deref(),
                    x.spec.scale,
                    w_spec.scale,
                    out_spec,
                    vec![*out_channels, h_out, w_out],
                    name,
                )?
            }
            Layer::Linear { name, out_features, weights, bias, w_spec, out_spec, .. } => {
                let x = as_quant(&act, name)?;
                let flat: usize = x.shape.iter().product();
                let a_mat =
                    IntMatrix::new(flat, 1, x.data.clone(), x.spec.bits, x.spec.signedness)?;
                let sched = plan.schedules[gi];
                let r = run_gemm(&a_mat, weights, shape, sched, lut, seed, gi, name)?;
                stats.push(layer_stats(name, &sched, &r));
                gi += 1;
                finish_gemm(
                    &r,
                    bias.as_deref(),
                    x.spec.scale,
                    w_spec.scale,
                    out_spec,
                    vec![*out_features],
                    name,
                )?
            }
            Layer::Relu => {
                let x = as_quant(&act, "relu")?;
                let mut y = x.clone();
                for v in y.data.iter_mut() {
                    *v = (*v).max(0);
                }
                Activation::Quant(y)
            }
            Layer::MaxPool { kernel, stride } => {
                Activation::Quant(pool(as_quant(&act, "maxpool")?, *kernel, *stride, true)?)
            }
            Layer::AvgPool { kernel, stride } => {
                Activation::Quant(pool(as_quant(&act, "avgpool")?, *kernel, *stride, false)?)
            }
            Layer::Flatten => {
                let x = as_quant(&act, "flatten")?;
                let mut y = x.clone();
                y.shape = vec![x.data.len()];
                Activation::Quant(y)
            }
            Layer::ResidualAdd { from } => {
                let x = as_quant(&act, "residual-add")?;
                let skip = saved
                    .get(*from)
                    .and_then(|s| s.as_ref())
                    .ok_or_else(|| Error::invalid(format!("no saved output for layer {from}")))?;
                Activation::Quant(residual_add(x, skip)?)
            }
        };
        if let Activation::Quant(q) = &act {
            saved[li] = Some(q.clone());
        }
    }

    let logits = match act {
        Activation::Float(v) => v,
        Activation::Quant(q) => q.data.iter().map(|&v| q.spec.dequantize_value(v)).collect(),
    };
    let total_cycles = stats.iter().map(|s| s.cycles).sum();
    Ok(InferOutput { logits, layer_stats: stats, total_cycles })
}

fn as_quant<'a>(act: &'a Activation, what: &str) -> Result<&'a QuantTensor> {
    match act {
        Activation::Quant(q) => Ok(q),
        Activation::Float(_) => Err(Error::invalid(format!(
            "{what} cannot follow a dequantized (float) layer output"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_gemm(
    a: &IntMatrix,
    b: &IntMatrix,
    shape: ArrayShape,
    sched: GavSchedule,
    lut: Option<&ErrorLut>,
    seed: u64,
    gemm_index: usize,
    name: &str,
) -> Result<GemmResult> {
    let mut job = GemmJob { a, b, shape, schedule: sched, error_model: None, seed: 0 };
    if sched.approx_pass_count() == 0 {
        gemm_exact(&job)
    } else {
        let lut = lut.ok_or_else(|| {
            Error::config(format!(
                "layer {name} has approximate passes but no error model was supplied"
            ))
        })?;
        job.error_model = Some(lut);
        job.seed = substream_u64(seed, "layer-gemm", gemm_index as u64);
        gemm_gav(&job)
    }
}

fn layer_stats(name: &str, sched: &GavSchedule, r: &GemmResult) -> LayerStats {
    LayerStats {
        name: name.to_string(),
        g: sched.g,
        a_bits: sched.a_bits,
        b_bits: sched.b_bits,
        cycles: r.cycles,
        approx_cycles: r.approx_cycles,
        tiles: r.tile_count,
    }
}

/// Bias add plus requantization (or dequantization for the final
/// layer). `P[k][l]` has `k` = output channel, `l` = spatial index.
fn finish_gemm(
    r: &GemmResult,
    bias: Option<&[i32]>,
    in_scale: f64,
    w_scale: f64,
    out_spec: &Option<QuantSpec>,
    out_shape: Vec<usize>,
    name: &str,
) -> Result<Activation> {
    let rows = r.p.rows();
    let cols = r.p.cols();
    if let Some(b) = bias {
        if b.len() != rows {
            return Err(Error::DimensionMismatch(format!("bias length in {name}")));
        }
    }
    let mut acc = vec![0i64; rows * cols];
    for k in 0..rows {
        let b = bias.map_or(0i64, |b| b[k] as i64);
        for l in 0..cols {
            acc[k * cols + l] = r.p.get(k, l) as i64 + b;
        }
    }
    match out_spec {
        Some(spec) => {
            let data: Vec<i32> =
                acc.iter().map(|&v| requantize(v, in_scale, w_scale, spec)).collect();
            Ok(Activation::Quant(QuantTensor { shape: out_shape, data, spec: *spec }))
        }
        None => Ok(Activation::Float(
            acc.iter().map(|&v| v as f64 * in_scale * w_scale).collect(),
        )),
    }
}

fn pool(x: &QuantTensor, kernel: usize, stride: usize, max: bool) -> Result<QuantTensor> {
    if x.shape.len() != 3 {
        return Err(Error::DimensionMismatch("pool needs a CHW tensor".into()));
    }
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let h_out = pool_out(h, kernel, stride)?;
    let w_out = pool_out(w, kernel, stride)?;
    let mut data = vec![0i32; c * h_out * w_out];
    for ch in 0..c {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best = i64::MIN;
                let mut sum = 0i64;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = x.data[(ch * h + oy * stride + ky) * w + ox * stride + kx] as i64;
                        best = best.max(v);
                        sum += v;
                    }
                }
                let v = if max {
                    best
                } else {
                    // round half away from zero on the window mean
                    round_haz(sum as f64 / (kernel * kernel) as f64)
                };
                data[(ch * h_out + oy) * w_out + ox] = v as i32;
            }
        }
    }
    Ok(QuantTensor { shape: vec![c, h_out, w_out], data, spec: x.spec })
}

fn residual_add(x: &QuantTensor, skip: &QuantTensor) -> Result<QuantTensor> {
    if x.shape != skip.shape {
        return Err(Error::DimensionMismatch("residual shapes differ".into()));
    }
    let (lo, hi) = x.spec.bounds();
    let rescale = skip.spec.scale / x.spec.scale;
    let data = x
        .data
        .iter()
        .zip(&skip.data)
        .map(|(&a, &s)| {
            let v = a as i64 + round_haz(s as f64 * rescale);
            v.clamp(lo as i64, hi as i64) as i32
        })
        .collect();
    Ok(QuantTensor { shape: x.shape.clone(), data, spec: x.spec })
}

/// Straightforward integer reference executor (no engine, no bit
/// slicing): the oracle for the exact quantized forward pass.
pub fn infer_reference(model: &NetworkModel, input: &QuantTensor) -> Result<Vec<f64>> {
    let mut act = Activation::Quant(input.clone());
    let mut saved: Vec<Option<QuantTensor>> = vec![None; model.layers.len()];
    for (li, layer) in model.layers.iter().enumerate() {
        act = match layer {
            Layer::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
                w_spec,
                out_spec,
                ..
            } => {
                let x = as_quant(&act, name)?;
                let (h, w) = (x.shape[1], x.shape[2]);
                let h_out = conv_out(h, *kernel, *stride, *padding)?;
                let w_out = conv_out(w, *kernel, *stride, *padding)?;
                let mut acc = vec![0i64; out_channels * h_out * w_out];
                for oc in 0..*out_channels {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let mut s = bias.as_ref().map_or(0i64, |b| b[oc] as i64);
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
                                        let xv = x.data
                                            [(ic * h + iy as usize) * w + ix as usize]
                                            as i64;
                                        let wv = weights
                                            .get(oc, (ic * kernel + ky) * kernel + kx)
                                            as i64;
                                        s += xv * wv;
                                    }
                                }
                            }
                            acc[(oc * h_out + oy) * w_out + ox] = s;
                        }
                    }
                }
                quant_or_float(acc, x.spec.scale, w_spec.scale, out_spec, vec![
                    *out_channels,
                    h_out,
                    w_out,
                ])
            }
            Layer::Linear { name, in_features, out_features, weights, bias, w_spec, out_spec } => {
                let x = as_quant(&act, name)?;
                let flat: usize = x.shape.iter().product();
                if flat != *in_features {
                    return Err(Error::DimensionMismatch(format!("linear {name} input")));
                }
                let mut acc = vec![0i64; *out_features];
                for (of, slot) in acc.iter_mut().enumerate() {
                    let mut s = bias.as_ref().map_or(0i64, |b| b[of] as i64);
                    for (i, &xv) in x.data.iter().enumerate() {
                        s += xv as i64 * weights.get(of, i) as i64;
                    }
                    *slot = s;
                }
                quant_or_float(acc, x.spec.scale, w_spec.scale, out_spec, vec![*out_features])
            }
            Layer::Relu => {
                let x = as_quant(&act, "relu")?;
                let mut y = x.clone();
                for v in y.data.iter_mut() {
                    *v = (*v).max(0);
                }
                Activation::Quant(y)
            }
            Layer::MaxPool { kernel, stride } => {
                Activation::Quant(pool(as_quant(&act, "maxpool")?, *kernel, *stride, true)?)
            }
            Layer::AvgPool { kernel, stride } => {
                Activation::Quant(pool(as_quant(&act, "avgpool")?, *kernel, *stride, false)?)
            }
            Layer::Flatten => {
                let x = as_quant(&act, "flatten")?;
                let mut y = x.clone();
                y.shape = vec![x.data.len()];
                Activation::Quant(y)
            }
            Layer::ResidualAdd { from } => {
                let x = as_quant(&act, "residual-add")?;
                let skip = saved
                    .get(*from)
                    .and_then(|s| s.as_ref())
                    .ok_or_else(|| Error::invalid(format!("no saved output for layer {from}")))?;
                Activation::Quant(residual_add(x, skip)?)
            }
        };
        if let Activation::Quant(q) = &act {
            saved[li] = Some(q.clone());
        }
    }
    Ok(match act {
        Activation::Float(v) => v,
        Activation::Quant(q) => q.data.iter().map(|&v| q.spec.dequantize_value(v)).collect(),
    })
}

fn quant_or_float(
    acc: Vec<i64>,
    in_scale: f64,
    w_scale: f64,
    out_spec: &Option<QuantSpec>,
    shape: Vec<usize>,
) -> Activation {
    match out_spec {
        Some(spec) => {
            let data = acc.iter().map(|&v| requantize(v, in_scale, w_scale, spec)).collect();
            Activation::Quant(QuantTensor { shape, data, spec: *spec })
        }
        None => Activation::Float(acc.iter().map(|&v| v as f64 * in_scale * w_scale).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn quantize_examples() {
        let spec = QuantSpec::new(4, 1.0, Signedness::Signed).unwrap();
        assert_eq!(spec.quantize_value(0.0), 0);
        assert_eq!(spec.quantize_value(9.4), 7); // clamp at 2^3 - 1
        assert_eq!(spec.quantize_value(-9.4), -7); // symmetric clamp
        assert_eq!(spec.quantize_value(2.5), 3); // half away from zero
        assert_eq!(spec.quantize_value(-2.5), -3);
        assert!(QuantSpec::new(4, 0.0, Signedness::Signed).is_err());
        assert!(QuantSpec::new(4, -1.0, Signedness::Signed).is_err());
    }

    #[test]
    fn dequantization_error_bound() {
        let spec = QuantSpec::new(6, 0.37, Signedness::Signed).unwrap();
        let mut rng = crate::rng::substream(31, "quant", 0);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let q = spec.quantize_value(x);
            let (lo, hi) = spec.bounds();
            if q > lo && q < hi {
                // interior of the range: reconstruction within scale/2
                assert!(
                    (spec.dequantize_value(q) - x).abs() <= spec.scale / 2.0 + 1e-12,
                    "x={x} q={q}"
                );
            }
        }
    }

    fn rand_weights(rows: usize, cols: usize, bits: u8, rng: &mut impl Rng) -> IntMatrix {
        let bound = (1i32 << (bits - 1)) - 1;
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        IntMatrix::new(rows, cols, data, bits, Signedness::Signed).unwrap()
    }

    fn rand_activations(shape: Vec<usize>, spec: QuantSpec, rng: &mut impl Rng) -> QuantTensor {
        let (lo, hi) = spec.bounds();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
        QuantTensor { shape, data, spec }
    }

    /// Small conv-pool-linear network with random quantized weights.
    fn synthetic_model(rng: &mut impl Rng) -> NetworkModel {
        let act = |scale: f64| QuantSpec::new(4, scale, Signedness::Signed).unwrap();
        let w_spec = QuantSpec::new(4, 0.05, Signedness::Signed).unwrap();
        NetworkModel {
            input_shape: [2, 6, 6],
            input_spec: act(0.15),
            classes: 4,
            layers: vec![
                Layer::Conv2d {
                    name: "conv1".into(),
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    weights: rand_weights(3, 18, 4, rng),
                    bias: Some((0..3).map(|_| rng.gen_range(-40..40)).collect()),
                    w_spec,
                    out_spec: Some(act(0.2)),
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear {
                    name: "fc".into(),
                    in_features: 27,
                    out_features: 4,
                    weights: rand_weights(4, 27, 4, rng),
                    bias: Some((0..4).map(|_| rng.gen_range(-40..40)).collect()),
                    w_spec,
                    out_spec: None,
                },
            ],
        }
    }

    #[test]
    fn one_by_one_conv_is_plain_matmul() {
        let mut rng = crate::rng::substream(32, "conv1x1", 0);
        let spec = QuantSpec::new(4, 1.0, Signedness::Signed).unwrap();
        let x = rand_activations(vec![3, 4, 4], spec, &mut rng);
        let a = im2col(&x, 1, 1, 0).unwrap();
        assert_eq!((a.rows(), a.cols()), (3, 16));
        // columns are just the channel vectors per pixel
        for ic in 0..3 {
            for p in 0..16 {
                assert_eq!(a.get(ic, p), x.data[ic * 16 + p]);
            }
        }
    }

    #[test]
    fn im2col_inner_dim() {
        let spec = QuantSpec::new(4, 1.0, Signedness::Signed).unwrap();
        let x = QuantTensor { shape: vec![4, 8, 8], data: vec![0; 256], spec };
        let a = im2col(&x, 3, 1, 1).unwrap();
        assert_eq!(a.rows(), 36); // 9 * 4
        assert_eq!(a.cols(), 64);
    }

    #[test]
    fn engine_conv_matches_direct_convolution() {
        // im2col + engine GEMM vs the nested-loop integer reference
        let mut rng = crate::rng::substream(33, "convref", 0);
        for trial in 0..10 {
            let model = synthetic_model(&mut rng);
            let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
            let plan = GavPlan::fully_guarded(&model).unwrap();
            let shape = ArrayShape::new(9, 4, 4).unwrap();
            let engine_out = infer(&model, &plan, &x, None, shape, 0).unwrap();
            let reference = infer_reference(&model, &x).unwrap();
            assert_eq!(engine_out.logits, reference, "trial {trial}");
        }
    }

    #[test]
    fn tiling_does_not_change_inference() {
        let mut rng = crate::rng::substream(34, "tile-inference", 0);
        let model = synthetic_model(&mut rng);
        let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
        let plan = GavPlan::fully_guarded(&model).unwrap();
        let big = infer(&model, &plan, &x, None, ArrayShape::new(32, 36, 8).unwrap(), 0).unwrap();
        let small = infer(&model, &plan, &x, None, ArrayShape::new(5, 3, 2).unwrap(), 0).unwrap();
        assert_eq!(big.logits, small.logits);
        assert!(small.total_cycles > big.total_cycles);
    }

    #[test]
    fn missing_lut_with_approx_passes_is_config_error() {
        let mut rng = crate::rng::substream(35, "nolut", 0);
        let model = synthetic_model(&mut rng);
        let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
        let plan = GavPlan::uniform(&model, 0).unwrap();
        let shape = ArrayShape::new(9, 4, 4).unwrap();
        assert!(matches!(
            infer(&model, &plan, &x, None, shape, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_lut_plan_matches_exact() {
        let mut rng = crate::rng::substream(36, "zerolut-nn", 0);
        let model = synthetic_model(&mut rng);
        let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
        let shape = ArrayShape::new(9, 4, 4).unwrap();
        let lut = crate::errmodel::ErrorLut::zeros(crate::errmodel::LutParams::defaults(9));
        let plan = GavPlan::uniform(&model, 0).unwrap();
        let out = infer(&model, &plan, &x, Some(&lut), shape, 7).unwrap();
        let reference = infer_reference(&model, &x).unwrap();
        assert_eq!(out.logits, reference);
        // every cycle ran approximate
        for s in &out.layer_stats {
            assert_eq!(s.cycles, s.approx_cycles);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = crate::rng::substream(37, "det-nn", 0);
        let model = synthetic_model(&mut rng);
        let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
        let shape = ArrayShape::new(9, 4, 4).unwrap();
        let lut =
            crate::errmodel::ErrorLut::constant_flip_prob(crate::errmodel::LutParams::defaults(9), 0.08);
        let plan = GavPlan::uniform(&model, 2).unwrap();
        let o1 = infer(&model, &plan, &x, Some(&lut), shape, 55).unwrap();
        let o2 = infer(&model, &plan, &x, Some(&lut), shape, 55).unwrap();
        assert_eq!(o1.logits, o2.logits);
        let o3 = infer(&model, &plan, &x, Some(&lut), shape, 56).unwrap();
        assert_ne!(o1.logits, o3.logits);
    }

    #[test]
    fn plan_stats_match_executed_stats() {
        let mut rng = crate::rng::substream(38, "planstats", 0);
        let model = synthetic_model(&mut rng);
        let x = rand_activations(vec![2, 6, 6], model.input_spec, &mut rng);
        let shape = ArrayShape::new(9, 4, 4).unwrap();
        let plan = GavPlan::fully_guarded(&model).unwrap();
        let out = infer(&model, &plan, &x, None, shape, 0).unwrap();
        let predicted = plan_layer_stats(&model, &plan, shape).unwrap();
        assert_eq!(out.layer_stats.len(), predicted.len());
        for (a, b) in out.layer_stats.iter().zip(&predicted) {
            assert_eq!(a.cycles, b.cycles);
            assert_eq!(a.tiles, b.tiles);
            assert_eq!(a.approx_cycles, b.approx_cycles);
        }
    }

    #[test]
    fn residual_add_rescales_and_saturates() {
        let spec_a = QuantSpec::new(4, 0.5, Signedness::Signed).unwrap();
        let spec_b = QuantSpec::new(4, 1.0, Signedness::Signed).unwrap();
        let x = QuantTensor { shape: vec![1, 1, 2], data: vec![3, 7], spec: spec_a };
        let skip = QuantTensor { shape: vec![1, 1, 2], data: vec![2, 4], spec: spec_b };
        let y = residual_add(&x, &skip).unwrap();
        // skip rescales by 1.0/0.5 = 2x; 3+4=7, 7+8=15 -> clamp 7
        assert_eq!(y.data, vec![7, 7]);
    }

    #[test]
    fn gemm_layer_info_reports_macs() {
        let mut rng = crate::rng::substream(39, "macs", 0);
        let model = synthetic_model(&mut rng);
        let infos = model.gemm_layer_info().unwrap();
        assert_eq!(infos.len(), 2);
        // conv: 18 * 36 outputs * 3 channels
        assert_eq!(infos[0].macs, 18 * 36 * 3);
        assert_eq!(infos[1].macs, 27 * 4);
        assert_eq!(infos[0].max_g, 7);
    }
}
