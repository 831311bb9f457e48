//! Floor plan auto-completion toolkit.
//!
//! The pipeline turns a structural-wall raster and a room access graph into
//! room polygons:
//!
//! 1. [`raster`] loads the wall mask and thins it to one-pixel strokes.
//! 2. [`skeleton`] traces the strokes into a graph and splits the edge paths
//!    into straight wall segments ([`skeleton::WallSet`]).
//! 3. [`roomtype`] predicts a room type for every access-graph node with a
//!    small edge-aware graph attention network.
//! 4. [`denoiser`] samples four corners per room with a masked-attention
//!    denoiser that cross-attends to the structural wall corners.
//! 5. [`geometry`] approximates rooms by minimum rotated rectangles, refines
//!    them against the walls and paints them into a label map.
//! 6. [`eval`] scores label maps with per-class IoU and its five averages.

pub mod checkpoint;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod raster;
pub mod roomtype;
pub mod skeleton;

pub use error::{Error, Result};
