//! Sonar frames, rasters, masks and their file formats.

pub mod augment;
pub mod dataset;
pub mod geometry;
pub mod image;
pub mod pgm;
pub mod polar;

pub use dataset::{load_dataset, write_sample};
pub use geometry::FanGeometry;
pub use image::{raster_index, MaskImage, SamplePair, SonarImage, RASTER_HEIGHT, RASTER_WIDTH};
pub use polar::{polar_to_cartesian, PolarFrame};
