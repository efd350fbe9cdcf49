//! Joint geometric augmentation of an image and its mask.
//!
//! Rotation, shift and crop compose into a single inverse map sampled
//! bilinearly; flips are exact index permutations applied afterwards.
//! Vacated regions are zero and the fan indicator moves with the content.

use rand::Rng;

use super::image::{raster_index, MaskImage, SamplePair, SonarImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Chance that each transform is applied.
    pub probability: f64,
    pub max_rotation_deg: f64,
    /// Maximum shift as a fraction of each raster dimension.
    pub max_shift: f64,
    /// Smallest crop window as a fraction of each raster dimension.
    pub min_crop_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_rotation_deg: 20.0,
            max_shift: 0.2,
            min_crop_scale: 0.8,
        }
    }
}

/// Crop window `[x0, x0 + scale·W] × [y0, y0 + scale·H]`, resized back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crop {
    pub scale: f64,
    pub x0: f64,
    pub y0: f64,
}

/// One concrete draw of the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: Option<f64>,
    /// `(dx, dy)` as fractions of width and height.
    pub shift: Option<(f64, f64)>,
    pub crop: Option<Crop>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Draw every coin and parameter in a fixed order.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let p = cfg.probability.clamp(0.0, 1.0);
        let coin = |rng: &mut R| rng.gen::<f64>() < p;
        let hflip = coin(rng);
        let vflip = coin(rng);
        let rotation_deg = coin(rng).then(|| rng.gen_range(-1.0..=1.0) * cfg.max_rotation_deg);
        let shift = coin(rng).then(|| {
            let dx = rng.gen_range(-1.0..=1.0) * cfg.max_shift;
            let dy = rng.gen_range(-1.0..=1.0) * cfg.max_shift;
            (dx, dy)
        });
        let crop = coin(rng).then(|| {
            let scale = rng.gen_range(cfg.min_crop_scale.min(1.0)..=1.0);
            Crop {
                scale,
                x0: rng.gen::<f64>() * (1.0 - scale) * width as f64,
                y0: rng.gen::<f64>() * (1.0 - scale) * height as f64,
            }
        });
        Self {
            hflip,
            vflip,
            rotation_deg,
            shift,
            crop,
        }
    }

    fn resamples(&self) -> bool {
        self.rotation_deg.is_some() || self.shift.is_some() || self.crop.is_some()
    }

    /// Source position of output point `(x, y)` (continuous coordinates).
    fn source_of(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        let (w, h) = (width as f64, height as f64);
        let (mut x, mut y) = (x, y);
        if let Some((dx, dy)) = self.shift {
            x -= dx * w;
            y -= dy * h;
        }
        if let Some(deg) = self.rotation_deg {
            let (s, c) = (-deg.to_radians()).sin_cos();
            let (cx, cy) = (w / 2.0, h / 2.0);
            let (ux, uy) = (x - cx, y - cy);
            x = cx + c * ux - s * uy;
            y = cy + s * ux + c * uy;
        }
        if let Some(cr) = self.crop {
            x = cr.x0 + cr.scale * x;
            y = cr.y0 + cr.scale * y;
        }
        (x, y)
    }
}

/// Bilinear sample of a column-major raster at a continuous point; zero
/// outside the raster.
fn sample(src: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            src[raster_index(height, xi as usize, yi as usize)]
        }
    };
    (1.0 - tx) * ((1.0 - ty) * at(x0, y0) + ty * at(x0, y0 + 1.0))
        + tx * ((1.0 - ty) * at(x0 + 1.0, y0) + ty * at(x0 + 1.0, y0 + 1.0))
}

fn warp(src: &[f32], width: usize, height: usize, p: &AugmentParams) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for x in 0..width {
        for y in 0..height {
            let (sx, sy) = p.source_of(x as f64 + 0.5, y as f64 + 0.5, width, height);
            out[raster_index(height, x, y)] = sample(src, width, height, sx, sy);
        }
    }
    out
}

fn flip<T: Copy>(data: &mut [T], width: usize, height: usize, h: bool, v: bool) {
    if !(h || v) {
        return;
    }
    let src = data.to_vec();
    for x in 0..width {
        for y in 0..height {
            let sx = if h { width - 1 - x } else { x };
            let sy = if v { height - 1 - y } else { y };
            data[raster_index(height, x, y)] = src[raster_index(height, sx, sy)];
        }
    }
}

/// Apply a fixed parameter draw to a sample.
pub fn apply(sample: &SamplePair, p: &AugmentParams) -> SamplePair {
    let (w, h) = (sample.image.width(), sample.image.height());
    let to_f = |v: &[u8]| v.iter().map(|&b| b as f32).collect::<Vec<f32>>();
    let fan_f: Vec<f32> = sample.image.fan().iter().map(|&b| f32::from(u8::from(b))).collect();
    let (mut pixels, mut mask, mut fan) = if p.resamples() {
        let px = warp(sample.image.pixels(), w, h, p)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let m = warp(&to_f(sample.mask.pixels()), w, h, p)
            .into_iter()
            .map(|v| u8::from(v > 0.5))
            .collect();
        let f = warp(&fan_f, w, h, p).into_iter().map(|v| v > 0.5).collect();
        (px, m, f)
    } else {
        (
            sample.image.pixels().to_vec(),
            sample.mask.pixels().to_vec(),
            sample.image.fan().to_vec(),
        )
    };
    flip(&mut pixels, w, h, p.hflip, p.vflip);
    flip(&mut mask, w, h, p.hflip, p.vflip);
    flip(&mut fan, w, h, p.hflip, p.vflip);
    for (m, &f) in mask.iter_mut().zip(&fan) {
        if !f {
            *m = 0;
        }
    }
    let image = SonarImage::new(w, h, pixels, fan).expect("values clamped to [0, 1]");
    let mask = MaskImage::from_raw(w, h, mask).expect("binary by construction");
    SamplePair {
        id: sample.id.clone(),
        image,
        mask,
    }
}

/// Draw parameters and apply them.
pub fn augment<R: Rng + ?Sized>(sample: &SamplePair, cfg: &AugmentConfig, rng: &mut R) -> SamplePair {
    let p = AugmentParams::sample(cfg, sample.image.width(), sample.image.height(), rng);
    apply(sample, &p)
}
