//! Patch-level deep features for georeferenced rasters.
//!
//! The pipeline tiles a raster, encodes each tile with a patch-based vision
//! transformer, mosaics the patch tokens back into a coarser feature raster,
//! and analyzes the result with PCA, t-SNE, k-means, cosine similarity maps,
//! kNN and random forests.

pub mod analysis;
pub mod encoder;
pub mod error;
pub mod geoml;
pub mod mosaic;
pub mod raster_io;
pub mod tiler;

pub use error::{Error, Result};
