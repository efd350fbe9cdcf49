//! Named-tensor weight files.
//!
//! Layout (little-endian): magic, `u16` version, `u32` record count, then per
//! record `u16` name length, UTF-8 name, `u8` dtype tag, `u8` rank, `u32` dims
//! and the raw payload. Quantized payloads carry an `f32` scale and `u8` zero
//! point ahead of the bytes.

use std::collections::HashSet;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use half::f16;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SegmentationModel};
use crate::scalar::{DType, Float};
use crate::tensor::Tensor;

pub const SSEG_MAGIC: [u8; 4] = *b"SSEG";
pub const SSEG_VERSION: u16 = 1;

/// Element storage for one record.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    F16(Vec<f16>),
    Q8 { scale: f32, zero_point: u8, data: Vec<u8> },
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F64(_) => DType::F64,
            Payload::F32(_) => DType::F32,
            Payload::F16(_) => DType::F16,
            Payload::Q8 { .. } => DType::Q8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F16(v) => v.len(),
            Payload::Q8 { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64 (dequantized for Q8).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F16(v) => v.iter().map(|x| x.to_f64()).collect(),
            Payload::Q8 { scale, zero_point, data } => {
                let s = *scale as f64;
                let z = *zero_point as f64;
                data.iter().map(|&q| s * (q as f64 - z)).collect()
            }
        }
    }

    /// Encode `values` at a float width.
    pub fn encode_float(values: &[f64], dtype: DType) -> Result<Self> {
        Ok(match dtype {
            DType::F64 => Payload::F64(values.to_vec()),
            DType::F32 => Payload::F32(values.iter().map(|&x| x as f32).collect()),
            DType::F16 => Payload::F16(values.iter().map(|&x| f16::from_f64(x)).collect()),
            DType::Q8 => return Err(Error::Parameter("Q8 payloads need quantization parameters".into())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl WeightRecord {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, payload: Payload) -> Result<Self> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != payload.len() {
            return Err(Error::Data(format!(
                "record `{name}` has shape {shape:?} but {} values",
                payload.len()
            )));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Parameter(format!("record `{name}` header does not fit the format")));
        }
        Ok(Self { name, shape, payload })
    }

    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let data = self.payload.to_f64().into_iter().map(T::from_f64).collect();
        Tensor::from_vec(self.shape.clone(), data).expect("record length checked at construction")
    }

    fn encode<B: ByteOrder>(&self, w: &mut Writer<B>) {
        w.u16(self.name.len() as u16);
        w.bytes(self.name.as_bytes());
        w.u8(self.payload.dtype().tag());
        w.u8(self.shape.len() as u8);
        for &d in &self.shape {
            w.u32(d as u32);
        }
        match &self.payload {
            Payload::F64(v) => w.f64_slice(v),
            Payload::F32(v) => w.f32_slice(v),
            Payload::F16(v) => {
                let bits: Vec<u16> = v.iter().map(|x| x.to_bits()).collect();
                w.u16_slice(&bits)
            }
            Payload::Q8 { scale, zero_point, data } => {
                w.f32(*scale);
                w.u8(*zero_point);
                w.bytes(data);
            }
        }
    }
}

/// Expected record shapes, checked as each header is read.
pub type ShapeTable = [(String, Vec<usize>)];

fn decode_record<B: ByteOrder>(r: &mut Reader<'_, B>, expected: Option<&ShapeTable>) -> Result<WeightRecord> {
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.bytes(name_len)?)
        .map_err(|_| Error::Data("record name is not UTF-8".into()))?
        .to_string();
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Data(format!("record `{name}` has unknown dtype tag {tag}")))?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    if let Some(table) = expected {
        let want = table
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Data(format!("unexpected record `{name}`")))?;
        if want.1 != shape {
            return Err(Error::ShapeMismatch {
                name,
                expected: want.1.clone(),
                found: shape,
            });
        }
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Data(format!("record `{name}` shape overflows")))?;
    let payload = match dtype {
        DType::F64 => Payload::F64(r.f64_vec(n)?),
        DType::F32 => Payload::F32(r.f32_vec(n)?),
        DType::F16 => Payload::F16(r.u16_vec(n)?.into_iter().map(f16::from_bits).collect()),
        DType::Q8 => {
            let scale = r.f32()?;
            let zero_point = r.u8()?;
            Payload::Q8 {
                scale,
                zero_point,
                data: r.bytes(n)?.to_vec(),
            }
        }
    };
    WeightRecord::new(name, shape, payload)
}

pub(crate) fn encode_records<B: ByteOrder>(magic: [u8; 4], version: u16, records: &[WeightRecord]) -> Vec<u8> {
    let mut w = Writer::<B>::new();
    w.bytes(&magic);
    w.u16(version);
    w.u32(records.len() as u32);
    for rec in records {
        rec.encode(&mut w);
    }
    w.into_bytes()
}

pub(crate) fn decode_records<B: ByteOrder>(
    bytes: &[u8],
    magic: [u8; 4],
    version: u16,
    context: &'static str,
    expected: Option<&ShapeTable>,
) -> Result<Vec<WeightRecord>> {
    let mut r = Reader::<B>::new(bytes, context);
    r.magic(magic)?;
    r.version(version)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let rec = decode_record(&mut r, expected)?;
        if !seen.insert(rec.name.clone()) {
            return Err(Error::Data(format!("duplicate record `{}`", rec.name)));
        }
        records.push(rec);
    }
    r.finish()?;
    Ok(records)
}

/// Full model state as stored in a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub records: Vec<WeightRecord>,
}

impl ModelWeights {
    /// Snapshot every tensor of `model` at the given float width.
    pub fn from_model<T: Float>(model: &SegmentationModel<T>, dtype: DType) -> Result<Self> {
        let records = model
            .state()
            .into_iter()
            .map(|(name, t)| {
                let values: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
                WeightRecord::new(name, t.shape().to_vec(), Payload::encode_float(&values, dtype)?)
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_state<T: Float>(&self) -> Vec<(String, Tensor<T>)> {
        self.records.iter().map(|r| (r.name.clone(), r.to_tensor())).collect()
    }

    /// Architecture implied by the stored tensors, for a given input raster.
    pub fn config(&self, height: usize, width: usize) -> Result<ModelConfig> {
        let first = self
            .get("conv1.conv1.weight")
            .ok_or_else(|| Error::Data("weight file lacks `conv1.conv1.weight`".into()))?;
        let cfg = ModelConfig {
            height,
            width,
            base_channels: first.shape[0],
            batch_norm: self.get("conv1.bn1.gamma").is_some(),
            ..ModelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fresh model of the implied architecture holding these weights.
    pub fn build_model<T: Float>(&self, height: usize, width: usize) -> Result<SegmentationModel<T>> {
        let mut model = SegmentationModel::with_seed(self.config(height, width)?, 0)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    /// Load into `model`, validating names and shapes.
    pub fn apply_to<T: Float>(&self, model: &mut SegmentationModel<T>) -> Result<()> {
        model.load_state(&self.to_state::<f64>())
    }

    pub fn to_bytes_with<B: ByteOrder>(&self) -> Vec<u8> {
        encode_records::<B>(SSEG_MAGIC, SSEG_VERSION, &self.records)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with::<LittleEndian>()
    }

    pub fn from_bytes_with<B: ByteOrder>(bytes: &[u8], expected: Option<&ShapeTable>) -> Result<Self> {
        let records = decode_records::<B>(bytes, SSEG_MAGIC, SSEG_VERSION, "weight", expected)?;
        Ok(Self { records })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_with::<LittleEndian>(bytes, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl<T: Float> SegmentationModel<T> {
    /// Shapes every weight file for this architecture must match.
    pub fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        self.state().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect()
    }

    /// Write the full state at 64-bit precision.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        ModelWeights::from_model(self, DType::F64)?.save(path)
    }

    /// Replace the state from a weight file, rejecting any record whose
    /// shape differs from this architecture.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let bytes = read_file(path)?;
        let weights = ModelWeights::from_bytes_with::<LittleEndian>(&bytes, Some(&self.shape_table()))?;
        weights.apply_to(self)
    }
}
