//! Fisheye video synthesis, correction and temporal stabilization.
//!
//! The crate is organized bottom-up: [`distortion`] holds the radial lens
//! model, [`raster`] the resampling primitives, [`synthesis`] builds
//! benchmark datasets, [`flow`] and [`estimators`] measure motion and
//! per-frame lens parameters, [`dual_flow`] evaluates the deformation
//! identity between fisheye and corrected motion, [`temporal`] implements
//! progressive temporal weighting, and [`metrics`] scores the results.

pub mod distortion;
pub mod dual_flow;
pub mod error;
pub mod estimators;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod raster;
pub mod synthesis;
pub mod temporal;

pub use distortion::{DistortionParams, PixelCoord};
pub use error::{Error, Result};
pub use raster::{FlowField, Frame, ValidityMask};
