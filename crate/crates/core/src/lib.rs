//! Building heights and urban canopy parameters at desk scale.
//!
//! The crate turns coarse surface rasters, population density, building
//! footprints and labeled point clouds into 1-m flat-roof (LoD-1) building
//! heights, then aggregates those into gridded urban canopy parameters and
//! validates them against a reference.
//!
//! Modules follow the data flow:
//!
//! - [`raster`]: grids, cell-wise arithmetic, cubic resampling, I/O
//! - [`pointcloud`]: labeled points to DSM/DEM and the reference nDSM
//! - [`footprints`]: polygon geometry and binary mask rasterization
//! - [`tiler`]: 256×256 tiling and lossless stitching
//! - [`predictor`]: encoder–decoder height regressor and a baseline
//! - [`lod1`]: per-footprint flat-roof heights
//! - [`ucp`]: gridded canopy parameters
//! - [`validation`]: RMSE / MAPE and comparison exports
//! - [`synth`]: deterministic synthetic city generator

pub mod error;
pub mod footprints;
pub mod lod1;
pub mod pointcloud;
pub mod predictor;
pub mod raster;
pub mod synth;
pub mod tiler;
pub mod ucp;
pub mod validation;

pub use error::{Error, Result, Warning};
pub use footprints::{BuildingFootprint, FootprintMask};
pub use lod1::Lod1Building;
pub use raster::{NormalizationParams, Raster};
