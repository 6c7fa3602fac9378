//! Synthetic LiDAR-to-image pipeline: a deterministic scene and sensor
//! simulator, spherical front-view projection of point clouds into
//! reflectance/distance rasters, a conditional adversarial image-to-image
//! model, and a car-presence evaluation metric.

pub mod error;
pub mod dataset;
pub mod eval;
pub mod lidar;
pub mod raster;
pub mod nn;
pub mod pix2pix;
pub mod scene;

pub use error::{Error, Result};
