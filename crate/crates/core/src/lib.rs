//! Gaussian splatting surface reconstruction engine.
//!
//! Gaussians are rendered into color, normal, plane-offset and depth maps by
//! a tile-based CPU rasterizer with an analytic backward pass. Training adds
//! single-view and multi-view geometric losses, adaptive density control and
//! image-guided resampling of Gaussians.

pub mod density;
pub mod eval;
pub mod gaussians;
pub mod geometry;
pub mod image;
pub mod kv;
pub mod losses;
pub mod ply;
pub mod rasterizer;
pub mod sh;
pub mod synthdata;
pub mod trainer;
