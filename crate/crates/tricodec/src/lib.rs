//! Extreme thumbnail compression via color-interpolated Delaunay triangulations.
//!
//! An image is approximated by a small set of vertices on a fixed grid, each
//! carrying an index into a tiny quantized YCoCg color table. The Delaunay
//! triangulation of the vertices is reconstructed identically at the decoder
//! from the vertex coordinates alone, and each triangle is filled by linear
//! interpolation of its vertex colors. The whole representation serializes to
//! roughly 100-400 bytes using a rANS coder with adaptive probability models.

pub mod bitstream;
pub mod entropy;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod search;
pub mod synth;
pub mod triangulate;

pub use model::{ColorEntry, ColorTable, GridSpec, Raster, TriModel, VertexSet};
