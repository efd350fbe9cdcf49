//! Batch-norm folding, 8-bit weight quantization and the inference runtime.

use std::collections::HashMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::autodiff::Tape;
use crate::codec::{read_file, write_file};
use crate::error::{Error, Result};
use crate::model::{probability_to_masks, SegmentationModel};
use crate::nn::{BatchNorm2d, Conv2d, ConvLayerBlock, BN_EPS, LEAKY_SLOPE};
use crate::scalar::{DType, Float};
use crate::sonar::{MaskImage, SonarImage};
use crate::tensor::Tensor;
use crate::weights::{decode_records, encode_records, Payload, WeightRecord};

pub const SSG8_MAGIC: [u8; 4] = *b"SSG8";
pub const SSG8_VERSION: u16 = 1;

const LEVELS: usize = 4;

/// Affine map between `u8` codes and reals: `w ≈ scale · (q − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: u8,
}

impl QuantParams {
    /// Per-tensor parameters from the value range, widened to contain zero.
    /// A constant tensor `c` uses the range `[−|c|−1, |c|+1]`.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot quantize an empty tensor".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Data(format!("cannot quantize non-finite value {v}")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            let c = lo.abs() + 1.0;
            lo = -c;
            hi = c;
        }
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        let exact = (hi - lo) / 255.0;
        let mut scale = exact as f32;
        if (scale as f64) < exact {
            scale = scale.next_up();
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Data(format!("value range [{lo}, {hi}] not representable")));
        }
        let zero_point = (-lo / exact).round().clamp(0.0, 255.0) as u8;
        Ok(Self { scale, zero_point })
    }

    pub fn quantize(&self, v: f64) -> u8 {
        (v / self.scale as f64 + self.zero_point as f64).round().clamp(0.0, 255.0) as u8
    }

    pub fn dequantize(&self, q: u8) -> f64 {
        self.scale as f64 * (q as f64 - self.zero_point as f64)
    }
}

/// Quantize a whole tensor with its own parameters.
pub fn quantize_values(values: &[f64]) -> Result<(QuantParams, Vec<u8>)> {
    let p = QuantParams::fit(values)?;
    Ok((p, values.iter().map(|&v| p.quantize(v)).collect()))
}

pub fn dequantize_values(params: QuantParams, codes: &[u8]) -> Vec<f64> {
    codes.iter().map(|&q| params.dequantize(q)).collect()
}

/// Storage width for a compact model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantMode {
    #[default]
    Int8,
    Float16,
}

impl QuantMode {
    fn encode(self, values: &[f64]) -> Result<Payload> {
        match self {
            QuantMode::Int8 => {
                let (p, data) = quantize_values(values)?;
                Ok(Payload::Q8 {
                    scale: p.scale,
                    zero_point: p.zero_point,
                    data,
                })
            }
            QuantMode::Float16 => {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("cannot store non-finite value {v}")));
                }
                Payload::encode_float(values, DType::F16)
            }
        }
    }
}

fn fold_conv<T: Float>(conv: &Conv2d<T>, bn: Option<&BatchNorm2d<T>>) -> (Vec<f64>, Vec<f64>) {
    let mut w: Vec<f64> = conv.weight.data().iter().map(|v| v.as_f64()).collect();
    let mut b: Vec<f64> = conv.bias.data().iter().map(|v| v.as_f64()).collect();
    if let Some(bn) = bn {
        let per = w.len() / b.len();
        for o in 0..b.len() {
            let g = bn.gamma.data()[o].as_f64();
            let beta = bn.beta.data()[o].as_f64();
            let mean = bn.stats.mean[o].as_f64();
            let k = g / (bn.stats.var[o].as_f64() + BN_EPS).sqrt();
            w[o * per..(o + 1) * per].iter_mut().for_each(|x| *x *= k);
            b[o] = (b[o] - mean) * k + beta;
        }
    }
    (w, b)
}

fn push_conv(out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, prefix: &str, shape: &[usize], (w, b): (Vec<f64>, Vec<f64>)) {
    out.push((format!("{prefix}.weight"), shape.to_vec(), w));
    out.push((format!("{prefix}.bias"), vec![shape[0]], b));
}

fn push_block<T: Float>(out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, prefix: &str, block: &ConvLayerBlock<T>) {
    push_conv(
        out,
        &format!("{prefix}.conv1"),
        block.conv1.weight.shape(),
        fold_conv(&block.conv1, block.bn1.as_ref()),
    );
    push_conv(
        out,
        &format!("{prefix}.conv2"),
        block.conv2.weight.shape(),
        fold_conv(&block.conv2, block.bn2.as_ref()),
    );
}

/// Evaluation-mode network with batch norm folded into the convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceModel<T> {
    tensors: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Float> InferenceModel<T> {
    /// Fold a trained model. Folding is done in f64.
    pub fn from_model<U: Float>(model: &SegmentationModel<U>) -> Self {
        let mut raw = Vec::new();
        for (i, b) in model.encoder.iter().enumerate() {
            push_block(&mut raw, &format!("conv{}", i + 1), b);
        }
        push_block(&mut raw, "bottleneck", &model.bottleneck);
        for (i, (u, d)) in model.up.iter().zip(&model.decoder).enumerate() {
            let w = u.weight.data().iter().map(|v| v.as_f64()).collect();
            let b = u.bias.data().iter().map(|v| v.as_f64()).collect();
            out_tconv(&mut raw, &format!("up{}", i + 1), u.weight.shape(), w, b);
            push_block(&mut raw, &format!("conv{}", i + 5), d);
        }
        push_conv(&mut raw, "head", model.head.conv.weight.shape(), fold_conv(&model.head.conv, None));
        let tensors = raw
            .into_iter()
            .map(|(n, s, v)| (n, Tensor::from_vec(s, v.into_iter().map(T::from_f64).collect()).expect("shape from model")))
            .collect();
        Self::from_tensors(tensors).expect("folded model is complete")
    }

    /// Build from named folded tensors; every layer must be present.
    pub fn from_tensors(tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let index: HashMap<String, usize> = tensors.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        if index.len() != tensors.len() {
            return Err(Error::Data("duplicate tensor names in folded model".into()));
        }
        let out = Self { tensors, index };
        for name in Self::layer_names() {
            out.tensor(&name)?;
        }
        if out.tensors.len() != Self::layer_names().len() {
            return Err(Error::Data("folded model has extra tensors".into()));
        }
        Ok(out)
    }

    /// Tensor names in serialization order.
    pub fn layer_names() -> Vec<String> {
        let mut names = Vec::new();
        let conv = |names: &mut Vec<String>, p: String| {
            names.push(format!("{p}.weight"));
            names.push(format!("{p}.bias"));
        };
        for i in 1..=LEVELS {
            conv(&mut names, format!("conv{i}.conv1"));
            conv(&mut names, format!("conv{i}.conv2"));
        }
        conv(&mut names, "bottleneck.conv1".into());
        conv(&mut names, "bottleneck.conv2".into());
        for i in 1..=LEVELS {
            conv(&mut names, format!("up{i}"));
            conv(&mut names, format!("conv{}.conv1", i + LEVELS));
            conv(&mut names, format!("conv{}.conv2", i + LEVELS));
        }
        conv(&mut names, "head".into());
        names
    }

    pub fn tensors(&self) -> &[(String, Tensor<T>)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i].1)
            .ok_or_else(|| Error::Data(format!("folded model lacks `{name}`")))
    }

    pub fn cast<U: Float>(&self) -> InferenceModel<U> {
        InferenceModel {
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn count_values(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    fn conv(&self, tape: &mut Tape<T>, x: crate::Var, prefix: &str, pad: usize) -> Result<crate::Var> {
        let w = tape.leaf(self.tensor(&format!("{prefix}.weight"))?);
        let b = tape.leaf(self.tensor(&format!("{prefix}.bias"))?);
        tape.conv2d(x, w, Some(b), pad, 1)
    }

    fn block(&self, tape: &mut Tape<T>, x: crate::Var, prefix: &str) -> Result<crate::Var> {
        let h = self.conv(tape, x, &format!("{prefix}.conv1"), 1)?;
        let h = self.conv(tape, h, &format!("{prefix}.conv2"), 1)?;
        Ok(tape.leaky_relu(h, LEAKY_SLOPE))
    }

    /// Probabilities for a batch `[N, 1, W, H]`; both spatial sizes must be
    /// divisible by 16.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.dims4()?;
        let div = 1 << LEVELS;
        if c != 1 || h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "inference input must be one channel with sides divisible by {div}, got {:?}",
                x.shape()
            )));
        }
        let mut tape = Tape::inference();
        let mut h = tape.leaf(x);
        let mut skips = Vec::with_capacity(LEVELS);
        for i in 1..=LEVELS {
            h = self.block(&mut tape, h, &format!("conv{i}"))?;
            skips.push(h);
            h = tape.max_pool2x2(h)?;
        }
        h = self.block(&mut tape, h, "bottleneck")?;
        for i in 1..=LEVELS {
            let w = tape.leaf(self.tensor(&format!("up{i}.weight"))?);
            let b = tape.leaf(self.tensor(&format!("up{i}.bias"))?);
            let up = tape.conv_transpose2x2(h, w, Some(b))?;
            h = tape.concat_channels(up, skips.pop().expect("one skip per level"))?;
            h = self.block(&mut tape, h, &format!("conv{}", i + LEVELS))?;
        }
        let logits = self.conv(&mut tape, h, "head", 0)?;
        let out = tape.sigmoid(logits);
        Ok(tape.take_value(out))
    }

    /// Probability map `[1, W, H]` for one image.
    pub fn predict_image(&self, image: &SonarImage) -> Result<Tensor<T>> {
        let x = image.to_tensor::<T>();
        let shape = x.shape().to_vec();
        let x = x.reshape([1, shape[0], shape[1], shape[2]])?;
        self.predict(&x)?.reshape(shape)
    }

    pub fn predict_mask(&self, image: &SonarImage, threshold: f64) -> Result<MaskImage> {
        let p = self.predict_image(image)?;
        let shape = p.shape().to_vec();
        let p = p.reshape([1, shape[0], shape[1], shape[2]])?;
        Ok(probability_to_masks(&p, threshold)?.pop().expect("one image"))
    }
}

fn out_tconv(out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, prefix: &str, shape: &[usize], w: Vec<f64>, b: Vec<f64>) {
    out.push((format!("{prefix}.weight"), shape.to_vec(), w));
    out.push((format!("{prefix}.bias"), vec![shape[1]], b));
}

/// Compact model: folded tensors stored as 8-bit codes (or f16), plus the
/// float runtime rebuilt from them.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    records: Vec<WeightRecord>,
    runtime: InferenceModel<f32>,
}

impl QuantizedModel {
    pub fn from_model<U: Float>(model: &SegmentationModel<U>, mode: QuantMode) -> Result<Self> {
        Self::from_inference(&InferenceModel::<f64>::from_model(model), mode)
    }

    pub fn from_inference<U: Float>(model: &InferenceModel<U>, mode: QuantMode) -> Result<Self> {
        let records = model
            .tensors()
            .iter()
            .map(|(name, t)| {
                let values: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
                WeightRecord::new(name.clone(), t.shape().to_vec(), mode.encode(&values)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(records)
    }

    pub fn from_records(records: Vec<WeightRecord>) -> Result<Self> {
        let tensors = records.iter().map(|r| (r.name.clone(), r.to_tensor::<f32>())).collect();
        let runtime = InferenceModel::from_tensors(tensors)?;
        Ok(Self { records, runtime })
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    pub fn runtime(&self) -> &InferenceModel<f32> {
        &self.runtime
    }

    pub fn mode(&self) -> QuantMode {
        match self.records.first().map(|r| r.payload.dtype()) {
            Some(DType::F16) => QuantMode::Float16,
            _ => QuantMode::Int8,
        }
    }

    pub fn to_bytes_with<B: ByteOrder>(&self) -> Vec<u8> {
        encode_records::<B>(SSG8_MAGIC, SSG8_VERSION, &self.records)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with::<LittleEndian>()
    }

    pub fn from_bytes_with<B: ByteOrder>(bytes: &[u8]) -> Result<Self> {
        let records = decode_records::<B>(bytes, SSG8_MAGIC, SSG8_VERSION, "quantized model", None)?;
        if let Some(r) = records.iter().find(|r| !matches!(r.payload.dtype(), DType::Q8 | DType::F16)) {
            return Err(Error::Data(format!("quantized record `{}` stored as {:?}", r.name, r.payload.dtype())));
        }
        Self::from_records(records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_with::<LittleEndian>(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Probability map `[1, W, H]` from the compact model.
pub fn quantized_forward(model: &QuantizedModel, image: &SonarImage) -> Result<Tensor<f32>> {
    model.runtime.predict_image(image)
}
