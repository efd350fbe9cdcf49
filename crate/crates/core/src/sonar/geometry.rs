//! Fan geometry of the Cartesian raster.
//!
//! The apex sits at the bottom-center of the raster; range grows upward and
//! bearing is measured from the vertical, positive to the right.

use super::image::{raster_index, RASTER_HEIGHT, RASTER_WIDTH};
use crate::error::{Error, Result};

/// Default maximum range in meters.
pub const DEFAULT_RANGE_M: f64 = 20.0;
/// Default horizontal aperture in degrees.
pub const DEFAULT_APERTURE_DEG: f64 = 130.0;
/// Default carrier frequency in hertz.
pub const DEFAULT_FREQUENCY_HZ: f64 = 750e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanGeometry {
    pub width: usize,
    pub height: usize,
    pub aperture_deg: f64,
}

impl Default for FanGeometry {
    fn default() -> Self {
        Self {
            width: RASTER_WIDTH,
            height: RASTER_HEIGHT,
            aperture_deg: DEFAULT_APERTURE_DEG,
        }
    }
}

impl FanGeometry {
    pub fn new(width: usize, height: usize, aperture_deg: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("raster must be non-empty".into()));
        }
        if !(aperture_deg > 0.0 && aperture_deg <= 180.0) {
            return Err(Error::Parameter(format!("aperture {aperture_deg}° outside (0, 180]")));
        }
        Ok(Self {
            width,
            height,
            aperture_deg,
        })
    }

    /// Apex position in continuous pixel coordinates.
    pub fn apex(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64)
    }

    /// Fan radius in pixels: the full raster height, or the half-width
    /// when a wide aperture would otherwise overflow the sides.
    pub fn radius_px(&self) -> f64 {
        let half = self.half_aperture();
        let side = if half.sin() > 0.0 {
            self.width as f64 / 2.0 / half.sin().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        };
        (self.height as f64).min(side)
    }

    pub fn half_aperture(&self) -> f64 {
        self.aperture_deg.to_radians() / 2.0
    }

    /// `(range fraction in [0,1], bearing in radians)` of a continuous point,
    /// or `None` outside the fan.
    pub fn polar_of(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let (ax, ay) = self.apex();
        let dx = px - ax;
        let dy = ay - py;
        let r = (dx * dx + dy * dy).sqrt() / self.radius_px();
        let theta = dx.atan2(dy);
        (r <= 1.0 && theta.abs() <= self.half_aperture()).then_some((r, theta))
    }

    /// Continuous pixel position of a `(range fraction, bearing)` point.
    pub fn point_of(&self, r: f64, theta: f64) -> (f64, f64) {
        let (ax, ay) = self.apex();
        let rp = r * self.radius_px();
        (ax + rp * theta.sin(), ay - rp * theta.cos())
    }

    /// Polar coordinates of the center of pixel `(x, y)`.
    pub fn pixel_polar(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        self.polar_of(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// In-fan indicator per pixel, column-major.
    pub fn fan_mask(&self) -> Vec<bool> {
        let mut out = vec![false; self.width * self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                out[raster_index(self.height, x, y)] = self.pixel_polar(x, y).is_some();
            }
        }
        out
    }

    /// Sector area over raster area.
    pub fn analytic_fan_fraction(&self) -> f64 {
        let r = self.radius_px();
        self.half_aperture() * r * r / (self.width * self.height) as f64
    }
}
