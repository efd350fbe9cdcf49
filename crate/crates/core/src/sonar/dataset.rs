//! Paired image/mask directories: `images/<id>.pgm` and `masks/<id>.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use super::geometry::{FanGeometry, DEFAULT_APERTURE_DEG};
use super::image::{quantize_u8, MaskImage, SamplePair, SonarImage};
use super::pgm::Gray8;
use crate::error::{Error, Result};
use crate::kv::KvMap;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(IMAGES_DIR).join(format!("{id}.pgm"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(MASKS_DIR).join(format!("{id}.pgm"))
}

pub fn image_to_gray(image: &SonarImage) -> Gray8 {
    Gray8 {
        width: image.width(),
        height: image.height(),
        data: image.pixels().iter().map(|&p| quantize_u8(p)).collect(),
    }
}

pub fn mask_to_gray(mask: &MaskImage) -> Gray8 {
    Gray8 {
        width: mask.width(),
        height: mask.height(),
        data: mask.pixels().iter().map(|&p| p * 255).collect(),
    }
}

pub fn gray_to_image(g: &Gray8, aperture_deg: f64) -> Result<SonarImage> {
    let geom = FanGeometry::new(g.width, g.height, aperture_deg)?;
    let pixels = g.data.iter().map(|&v| v as f32 / 255.0).collect();
    SonarImage::new(g.width, g.height, pixels, geom.fan_mask())
}

pub fn gray_to_mask(g: &Gray8, id: &str) -> Result<MaskImage> {
    let px = g
        .data
        .iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            _ => Err(Error::NonBinaryMask(id.to_string())),
        })
        .collect::<Result<Vec<u8>>>()?;
    MaskImage::from_raw(g.width, g.height, px)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write one pair; images are quantized to 8 bits.
pub fn write_sample(sample: &SamplePair, dir: &Path) -> Result<()> {
    if sample.id.is_empty() || sample.id.contains(['/', '\\']) {
        return Err(Error::Parameter(format!("invalid sample id `{}`", sample.id)));
    }
    create_dir(&dir.join(IMAGES_DIR))?;
    create_dir(&dir.join(MASKS_DIR))?;
    image_to_gray(&sample.image).save(&image_path(dir, &sample.id))?;
    mask_to_gray(&sample.mask).save(&mask_path(dir, &sample.id))
}

fn stems(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Aperture recorded in the directory's manifest, if any.
fn manifest_aperture(dir: &Path) -> Result<f64> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(DEFAULT_APERTURE_DEG);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(KvMap::parse(&text)?.get("aperture_deg")?.unwrap_or(DEFAULT_APERTURE_DEG))
}

/// Load every pair sorted by id. All samples must share one raster size.
pub fn load_dataset(dir: &Path) -> Result<Vec<SamplePair>> {
    let aperture = manifest_aperture(dir)?;
    let images = stems(&dir.join(IMAGES_DIR))?;
    let masks = stems(&dir.join(MASKS_DIR))?;
    if let Some(orphan) = masks.iter().find(|m| images.binary_search(m).is_err()) {
        return Err(Error::Data(format!("mask `{orphan}` has no image")));
    }
    let mut out = Vec::with_capacity(images.len());
    for id in images {
        if masks.binary_search(&id).is_err() {
            return Err(Error::MissingMask(id));
        }
        let image = gray_to_image(&Gray8::load(&image_path(dir, &id))?, aperture)?;
        let mask = gray_to_mask(&Gray8::load(&mask_path(dir, &id))?, &id)?;
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(Error::dim(format!("sample `{id}`: mask and image sizes differ")));
        }
        if mask.pixels().iter().zip(image.fan()).any(|(&m, &f)| m == 1 && !f) {
            return Err(Error::Data(format!("mask `{id}` marks pixels outside the fan")));
        }
        if let Some(first) = out.first() {
            let first: &SamplePair = first;
            if (first.image.width(), first.image.height()) != (image.width(), image.height()) {
                return Err(Error::dim(format!("sample `{id}` differs in size from `{}`", first.id)));
            }
        }
        out.push(SamplePair::new(id, image, mask)?);
    }
    Ok(out)
}
