//! Dense signed-distance grids and the bounded grid-moving deformation.
//!
//! The lattice spans `[-1, 1]^3` with `r` points per axis. Point `(i, j, k)`
//! lives at flat index `(i * r + j) * r + k` (k fastest). Distances are
//! negative inside the surface and are written exactly once; afterwards only
//! the per-point offsets change, and the deformed position of a point is
//!
//! ```text
//! G_u = G + tau * cell_size * tanh(O)        (componentwise)
//! ```
//!
//! so no point ever leaves the box of half-width `tau * cell_size` around
//! its lattice site.

mod bvh;
mod checkpoint;
mod sign;

pub use bvh::{point_triangle_distance_squared, TriangleBvh};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use sign::{inside_by_ray_parity, InsideVotes};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::Vec3;

/// Default offset bound, in cell units.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    resolution: usize,
    tau: f64,
    distances: Option<Vec<f64>>,
    offsets: Vec<Vec3>,
}

/// A lattice point is inside the surface iff its distance is negative.
#[inline]
pub fn is_inside(distance: f64) -> bool {
    distance < 0.0
}

/// Lattice with zero offsets and no distances yet.
pub fn build_grid(resolution: usize) -> Result<SdfGrid> {
    SdfGrid::new(resolution, DEFAULT_TAU)
}

impl SdfGrid {
    pub fn new(resolution: usize, tau: f64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid(format!(
                "grid resolution must be at least 2 (got {resolution})"
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid("tau must be positive"));
        }
        Ok(SdfGrid {
            resolution,
            tau,
            distances: None,
            offsets: vec![Vec3::zeros(); resolution.pow(3)],
        })
    }

    /// Grid whose distances are sampled from an analytic field.
    pub fn from_fn(resolution: usize, tau: f64, field: impl Fn(&Vec3) -> f64 + Sync) -> Result<Self> {
        let grid = SdfGrid::new(resolution, tau)?;
        let distances = (0..grid.point_count())
            .into_par_iter()
            .map(|i| field(&grid.lattice_point(i)))
            .collect();
        grid.with_distances(distances)
    }

    /// Attaches distances. Fails if they were already set: distances are
    /// write-once.
    pub fn with_distances(mut self, distances: Vec<f64>) -> Result<Self> {
        if self.distances.is_some() {
            return Err(Error::invalid("grid distances are write-once"));
        }
        if distances.len() != self.point_count() {
            return Err(Error::SizeMismatch {
                what: "grid distances",
                expected: self.point_count(),
                actual: distances.len(),
            });
        }
        if distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("grid distances must be finite"));
        }
        self.distances = Some(distances);
        Ok(self)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cell_size(&self) -> f64 {
        2.0 / (self.resolution - 1) as f64
    }

    /// World-space bound on the per-component displacement.
    pub fn offset_scale(&self) -> f64 {
        self.tau * self.cell_size()
    }

    pub fn point_count(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn cells_per_axis(&self) -> usize {
        self.resolution - 1
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let r = self.resolution;
        [index / (r * r), (index / r) % r, index % r]
    }

    #[inline]
    pub fn lattice_point(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.coords(index);
        let h = self.cell_size();
        Vec3::new(-1.0 + i as f64 * h, -1.0 + j as f64 * h, -1.0 + k as f64 * h)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.point_count()).map(|i| self.lattice_point(i)).collect()
    }

    pub fn distances(&self) -> Option<&[f64]> {
        self.distances.as_deref()
    }

    pub fn require_distances(&self) -> Result<&[f64]> {
        self.distances().ok_or(Error::MissingDistances)
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn offsets_mut(&mut self) -> &mut [Vec3] {
        &mut self.offsets
    }

    /// Deformed position of one lattice point.
    #[inline]
    pub fn deformed_point(&self, index: usize) -> Vec3 {
        self.lattice_point(index) + deform_displacement(self.offset_scale(), &self.offsets[index])
    }

    /// Flat cell index of cell `(i, j, k)`, whose lowest corner is lattice point `(i, j, k)`.
    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        let c = self.resolution - 1;
        (i * c + j) * c + k
    }

    #[inline]
    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let c = self.resolution - 1;
        [cell / (c * c), (cell / c) % c, cell % c]
    }

    /// Lattice indices of the 8 corners of a cell; corner `b` has offset
    /// `(b >> 2 & 1, b >> 1 & 1, b & 1)`.
    pub fn cell_corners(&self, cell: usize) -> [usize; 8] {
        let [i, j, k] = self.cell_coords(cell);
        std::array::from_fn(|b| self.index(i + (b >> 2 & 1), j + (b >> 1 & 1), k + (b & 1)))
    }
}

/// `scale * tanh(o)` componentwise.
#[inline]
pub fn deform_displacement(scale: f64, offset: &Vec3) -> Vec3 {
    offset.map(|o| scale * o.tanh())
}

/// Componentwise derivative `scale * (1 - tanh^2(o))`.
#[inline]
pub fn deform_derivative(scale: f64, offset: &Vec3) -> Vec3 {
    offset.map(|o| {
        let t = o.tanh();
        scale * (1.0 - t * t)
    })
}

/// Deformed positions `G + tau * cell_size * tanh(O)` for every lattice point.
pub fn deform_grid(grid: &SdfGrid) -> Vec<Vec3> {
    (0..grid.point_count())
        .into_par_iter()
        .map(|i| grid.deformed_point(i))
        .collect()
}

/// Diagonal Jacobian `dG_u/dO` for every lattice point.
pub fn deform_jacobian(grid: &SdfGrid) -> Vec<Vec3> {
    let scale = grid.offset_scale();
    grid.offsets
        .par_iter()
        .map(|o| deform_derivative(scale, o))
        .collect()
}

/// Mesh-to-grid distance evaluator: exact unsigned distance through a BVH,
/// sign through three axis-aligned parity rays with a majority vote.
pub struct MeshDistance {
    bvh: TriangleBvh,
    triangles: Vec<[Vec3; 3]>,
}

impl MeshDistance {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::Empty("mesh has no faces"));
        }
        let triangles: Vec<[Vec3; 3]> = mesh
            .faces
            .iter()
            .map(|f| [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]])
            .collect();
        Ok(MeshDistance {
            bvh: TriangleBvh::new(triangles.clone()),
            triangles,
        })
    }

    pub fn unsigned(&self, p: &Vec3) -> f64 {
        self.bvh.nearest_squared(p, None).sqrt()
    }

    pub fn signed(&self, p: &Vec3) -> f64 {
        let d = self.unsigned(p);
        if inside_by_ray_parity(&self.triangles, p) {
            -d
        } else {
            d
        }
    }
}

/// Fills the grid's distances from a closed mesh.
pub fn compute_signed_distances(mesh: &Mesh, grid: SdfGrid) -> Result<SdfGrid> {
    if grid.distances.is_some() {
        return Err(Error::invalid("grid distances are write-once"));
    }
    let eval = MeshDistance::new(mesh)?;
    let r = grid.resolution;
    let h = grid.cell_size();
    let mut unsigned = vec![0.0; grid.point_count()];
    unsigned
        .par_chunks_mut(r)
        .enumerate()
        .for_each(|(line, out)| {
            let mut previous: Option<f64> = None;
            for (k, slot) in out.iter_mut().enumerate() {
                let p = grid.lattice_point(line * r + k);
                let d = eval.bvh.nearest_squared(&p, previous.map(|d| d + h)).sqrt();
                *slot = d;
                previous = Some(d);
            }
        });
    let votes = InsideVotes::compute(&eval.triangles, r);
    let disagreements = votes.disagreements();
    if disagreements as f64 > 1e-3 * grid.point_count() as f64 {
        log::warn!(
            "sign rays disagree at {disagreements} of {} grid points; is the mesh closed?",
            grid.point_count()
        );
    }
    let distances = unsigned
        .into_iter()
        .zip(votes.inside())
        .map(|(d, inside)| if inside { -d } else { d })
        .collect();
    grid.with_distances(distances)
}

/// Reference implementation: brute-force unsigned distances over all
/// triangles. Only sensible for small grids.
pub fn unsigned_distances_brute_force(mesh: &Mesh, grid: &SdfGrid) -> Vec<f64> {
    let triangles: Vec<[Vec3; 3]> = mesh
        .faces
        .iter()
        .map(|f| [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]])
        .collect();
    (0..grid.point_count())
        .map(|i| {
            let p = grid.lattice_point(i);
            triangles
                .iter()
                .map(|t| point_triangle_distance_squared(&p, t))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Cells whose 8 corner distances do not share one sign, in ascending
/// (lexicographic) cell order.
pub fn active_cells(grid: &SdfGrid) -> Result<Vec<usize>> {
    let x = grid.require_distances()?;
    let c = grid.cells_per_axis();
    let cells = (0..c * c * c)
        .into_par_iter()
        .filter(|&cell| {
            let corners = grid.cell_corners(cell);
            let first = is_inside(x[corners[0]]);
            corners[1..].iter().any(|&p| is_inside(x[p]) != first)
        })
        .collect();
    Ok(cells)
}
