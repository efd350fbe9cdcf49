use crate::error::{Error, Result};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Raster width in pixels (across-track).
pub const RASTER_WIDTH: usize = 320;
/// Raster height in pixels (range).
pub const RASTER_HEIGHT: usize = 128;

/// Rasters are stored column-major (`x * height + y`) so that a `width×height`
/// raster is exactly a `1×width×height` tensor.
#[inline]
pub fn raster_index(height: usize, x: usize, y: usize) -> usize {
    x * height + y
}

/// A Cartesian sonar image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SonarImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    fan: Vec<bool>,
}

impl SonarImage {
    /// Pixels outside `fan` are forced to zero; values are checked for range.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f32>, fan: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if n == 0 || pixels.len() != n || fan.len() != n {
            return Err(Error::dim(format!(
                "image buffers must hold {width}×{height} pixels (got {} and {})",
                pixels.len(),
                fan.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        for (p, &inside) in pixels.iter_mut().zip(&fan) {
            if !inside {
                *p = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            fan,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Column-major pixels, see [`raster_index`].
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn fan(&self) -> &[bool] {
        &self.fan
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[raster_index(self.height, x, y)]
    }

    pub fn in_fan(&self, x: usize, y: usize) -> bool {
        self.fan[raster_index(self.height, x, y)]
    }

    /// `1×width×height` tensor view of the pixels.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec([1, self.width, self.height], data).expect("sized by construction")
    }

    /// Round every pixel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.pixels {
            *p = quantize_u8(*p) as f32 / 255.0;
        }
        out
    }
}

pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary fish mask; 1 marks fish.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl MaskImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    /// Column-major binary pixels.
    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height == 0 || pixels.len() != width * height {
            return Err(Error::dim(format!("mask buffer must hold {width}×{height} pixels, got {}", pixels.len())));
        }
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryMask(format!("value {v}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[raster_index(self.height, x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[raster_index(self.height, x, y)] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    /// Zero every pixel outside `fan`.
    pub fn restrict_to(&mut self, fan: &[bool]) {
        for (p, &inside) in self.pixels.iter_mut().zip(fan) {
            if !inside {
                *p = 0;
            }
        }
    }

    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec([1, self.width, self.height], data).expect("sized by construction")
    }

    /// Intersection over union; two empty masks give 1.
    pub fn iou(&self, other: &MaskImage) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::dim("mask extents differ"));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.pixels.iter().zip(&other.pixels) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// An image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: SonarImage,
    pub mask: MaskImage,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, image: SonarImage, mask: MaskImage) -> Result<Self> {
        let id = id.into();
        if (image.width, image.height) != (mask.width, mask.height) {
            return Err(Error::dim(format!("sample `{id}`: image and mask extents differ")));
        }
        Ok(Self { id, image, mask })
    }
}
