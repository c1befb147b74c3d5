//! Dense garment correspondence by blending mesh-induced vertex flow with
//! correlation-based pixel flow, plus the warping, compositing and cyclic
//! refinement built on top of it.
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

pub mod cycleopt;
pub mod error;
pub mod flowfield;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod pixelflow;
pub mod raster;
pub mod scalar;
pub mod synthdata;

pub use error::{Error, Result};
pub use flowfield::{FlowField, FlowGradient};
pub use geometry::{CorrespondenceMap, Mesh2D};
pub use raster::{Image, Mask, PartMap};
pub use scalar::Real;

pub type Image64 = Image<f64>;
pub type Image32 = Image<f32>;
pub type Mask64 = Mask<f64>;
pub type Mask32 = Mask<f32>;
pub type FlowField64 = FlowField<f64>;
pub type FlowField32 = FlowField<f32>;
pub type Mesh2D64 = Mesh2D<f64>;
pub type Mesh2D32 = Mesh2D<f32>;
