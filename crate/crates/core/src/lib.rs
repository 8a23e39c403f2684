//! Mesh geometry refinement against multi-view normal maps.
//!
//! A coarse surface is converted into a dense signed-distance grid whose
//! values stay frozen while the grid *points* move by bounded offsets
//! (`G + tau * cell * tanh(O)`). A differentiable dual-contouring step turns
//! the moved grid into a triangle mesh with fixed connectivity, a small
//! software rasterizer renders its normal maps, and the offsets are fitted to
//! target normal maps with an Adam loop plus Laplacian and normal-consistency
//! regularizers.
//!
//! Alongside the carving pipeline the crate ships a deterministic
//! interpolation diffusion scheduler ([`schedule`]) whose forward chain
//! blends a target map with a source map instead of Gaussian noise, and the
//! evaluation metrics ([`metrics`]) used to score refined surfaces.
//!
//! The accompanying book (`book/`) walks through each stage; its code
//! listings are compiled and run as doctests of this crate.

// `!(x < y)` is how inputs are checked so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod carve;
pub mod config;
pub mod contour;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod schedule;
pub mod sdf;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::Mesh;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Radius meshes are normalized to before gridding; keeps a shell of
/// exterior cells inside `[-1, 1]^3`.
pub const NORMALIZED_RADIUS: f64 = 0.9;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/distance_grid.md")]
    mod distance_grid {}
    #[doc = include_str!("../../../book/src/dual_contouring.md")]
    mod dual_contouring {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/carving.md")]
    mod carving {}
    #[doc = include_str!("../../../book/src/scheduler.md")]
    mod scheduler {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
