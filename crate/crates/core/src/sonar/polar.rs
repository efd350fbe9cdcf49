//! Raw beam × bin frames, their binary format, and projection onto the
//! Cartesian raster.

use std::path::Path;

use byteorder::LittleEndian;

use super::geometry::{FanGeometry, DEFAULT_APERTURE_DEG, DEFAULT_FREQUENCY_HZ, DEFAULT_RANGE_M};
use super::image::{raster_index, SonarImage};
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const MBES_MAGIC: [u8; 4] = *b"MBES";
pub const MBES_VERSION: u16 = 1;

/// One sonar ping: intensity per (beam, range bin), beam-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    beams: usize,
    bins: usize,
    pub range_max: f64,
    pub aperture_deg: f64,
    pub frequency_hz: f64,
    intensities: Vec<f32>,
}

impl PolarFrame {
    pub fn new(beams: usize, bins: usize, intensities: Vec<f32>) -> Result<Self> {
        Self::with_geometry(beams, bins, DEFAULT_RANGE_M, DEFAULT_APERTURE_DEG, DEFAULT_FREQUENCY_HZ, intensities)
    }

    pub fn with_geometry(
        beams: usize,
        bins: usize,
        range_max: f64,
        aperture_deg: f64,
        frequency_hz: f64,
        intensities: Vec<f32>,
    ) -> Result<Self> {
        if beams < 2 || bins < 2 {
            return Err(Error::Parameter(format!("need at least 2 beams and 2 bins, got {beams}×{bins}")));
        }
        if intensities.len() != beams * bins {
            return Err(Error::dim(format!(
                "frame of {beams}×{bins} needs {} intensities, got {}",
                beams * bins,
                intensities.len()
            )));
        }
        if !(range_max > 0.0 && range_max.is_finite()) {
            return Err(Error::Parameter(format!("range {range_max} must be positive")));
        }
        if !(aperture_deg > 0.0 && aperture_deg <= 180.0) {
            return Err(Error::Parameter(format!("aperture {aperture_deg}° outside (0, 180]")));
        }
        if let Some(v) = intensities.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Data(format!("intensity {v} is not a finite non-negative value")));
        }
        Ok(Self {
            beams,
            bins,
            range_max,
            aperture_deg,
            frequency_hz,
            intensities,
        })
    }

    pub fn beams(&self) -> usize {
        self.beams
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn get(&self, beam: usize, bin: usize) -> f32 {
        self.intensities[beam * self.bins + bin]
    }

    /// Bearing of beam `b` in radians, beams spread evenly edge to edge.
    pub fn beam_angle(&self, b: f64) -> f64 {
        beam_angle(self.aperture_deg, self.beams, b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::<LittleEndian>::new();
        w.bytes(&MBES_MAGIC);
        w.u16(MBES_VERSION);
        w.u16(self.beams as u16);
        w.u32(self.bins as u32);
        w.f32(self.range_max as f32);
        w.f32(self.aperture_deg as f32);
        w.f32(self.frequency_hz as f32);
        w.f32_slice(&self.intensities);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::<LittleEndian>::new(bytes, "MBES");
        r.magic(MBES_MAGIC)?;
        r.version(MBES_VERSION)?;
        let beams = r.u16()? as usize;
        let bins = r.u32()? as usize;
        let range_max = r.f32()? as f64;
        let aperture = r.f32()? as f64;
        let freq = r.f32()? as f64;
        let data = r.f32_vec(beams * bins)?;
        r.finish()?;
        Self::with_geometry(beams, bins, range_max, aperture, freq, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.beams > u16::MAX as usize {
            return Err(Error::Parameter("MBES files hold at most 65535 beams".into()));
        }
        codec::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path)?)
    }
}

pub(crate) fn beam_angle(aperture_deg: f64, beams: usize, b: f64) -> f64 {
    let a = aperture_deg.to_radians();
    -a / 2.0 + b / (beams - 1) as f64 * a
}

/// Bilinear lookup into a beam-major `beams × bins` grid at fractional
/// indices (clamped to the grid).
pub fn sample_bilinear(grid: &[f64], beams: usize, bins: usize, fb: f64, fr: f64) -> f64 {
    let fb = fb.clamp(0.0, (beams - 1) as f64);
    let fr = fr.clamp(0.0, (bins - 1) as f64);
    let b0 = (fb.floor() as usize).min(beams - 2);
    let r0 = (fr.floor() as usize).min(bins - 2);
    let (tb, tr) = (fb - b0 as f64, fr - r0 as f64);
    let at = |b: usize, r: usize| grid[b * bins + r];
    (1.0 - tb) * ((1.0 - tr) * at(b0, r0) + tr * at(b0, r0 + 1))
        + tb * ((1.0 - tr) * at(b0 + 1, r0) + tr * at(b0 + 1, r0 + 1))
}

/// Resample a polar grid onto the raster; out-of-fan pixels are 0.
/// Returned column-major, unnormalized.
pub fn project_grid(grid: &[f64], beams: usize, bins: usize, geom: &FanGeometry) -> Vec<f64> {
    let half = geom.half_aperture();
    let mut out = vec![0.0; geom.width * geom.height];
    for x in 0..geom.width {
        for y in 0..geom.height {
            if let Some((r, theta)) = geom.pixel_polar(x, y) {
                let fb = (theta + half) / (2.0 * half) * (beams - 1) as f64;
                let fr = r * (bins - 1) as f64;
                out[raster_index(geom.height, x, y)] = sample_bilinear(grid, beams, bins, fb, fr);
            }
        }
    }
    out
}

/// Project onto the default 320×128 raster with per-frame max normalization.
pub fn polar_to_cartesian(frame: &PolarFrame) -> Result<SonarImage> {
    let geom = FanGeometry::new(super::RASTER_WIDTH, super::RASTER_HEIGHT, frame.aperture_deg)?;
    polar_to_raster(frame, &geom)
}

pub fn polar_to_raster(frame: &PolarFrame, geom: &FanGeometry) -> Result<SonarImage> {
    let grid: Vec<f64> = frame.intensities.iter().map(|&v| v as f64).collect();
    let max = grid.iter().copied().fold(0.0, f64::max);
    let raster = project_grid(&grid, frame.beams, frame.bins, geom);
    let pixels = raster
        .iter()
        .map(|&v| if max > 0.0 { (v / max).clamp(0.0, 1.0) as f32 } else { 0.0 })
        .collect();
    SonarImage::new(geom.width, geom.height, pixels, geom.fan_mask())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_beams() {
        assert!(matches!(PolarFrame::new(1, 4, vec![0.0; 4]), Err(Error::Parameter(_))));
        assert!(matches!(PolarFrame::new(4, 1, vec![0.0; 4]), Err(Error::Parameter(_))));
        assert!(PolarFrame::new(2, 2, vec![0.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn bilinear_reproduces_plane() {
        let (beams, bins) = (5, 7);
        let grid: Vec<f64> = (0..beams * bins)
            .map(|i| 2.0 * (i / bins) as f64 - 0.5 * (i % bins) as f64 + 1.0)
            .collect();
        for &(fb, fr) in &[(0.0, 0.0), (1.25, 3.5), (4.0, 6.0), (3.999, 0.001)] {
            let v = sample_bilinear(&grid, beams, bins, fb, fr);
            assert!((v - (2.0 * fb - 0.5 * fr + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mbes_round_trip() {
        let f = PolarFrame::new(3, 4, (0..12).map(|i| i as f32 * 0.5).collect()).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"MBES");
        assert_eq!(PolarFrame::from_bytes(&bytes).unwrap(), f);
        assert!(matches!(PolarFrame::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PolarFrame::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(PolarFrame::from_bytes(&bad), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn all_zero_frame_projects_to_zero() {
        let f = PolarFrame::new(8, 8, vec![0.0; 64]).unwrap();
        let img = polar_to_cartesian(&f).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0));
    }
}
