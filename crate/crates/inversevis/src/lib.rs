//! Surface rendering and view optimization for revealing scalar fields on
//! the occluded backsides of triangle meshes.
//!
//! The pipeline: load and normalize a mesh ([`mesh`]), build a signed
//! distance grid with surface payloads ([`sdf`]), cast per-pixel rays from a
//! spherical camera ([`camera`]) that either stop at the front surface or
//! continue as indirect probes ([`trace`], [`technique`]), score the result
//! with an importance-weighted image energy ([`energy`]), and maximize that
//! energy over technique parameters and viewpoints ([`optimize`]). [`render`]
//! ties the stages into images, reports, and benchmark tables.

pub mod error;
pub mod math;
pub mod mesh;
pub mod optimize;
pub mod render;
pub mod camera;
pub mod energy;
pub mod sdf;
pub mod shapes;
pub mod technique;
pub mod trace;

pub use error::{Error, Result};
