//! Normal-map-driven surface refinement by moving grid points.
//!
//! The objective for offsets `O` (and, for the distance strategies, the
//! distances `X`) is
//!
//! ```text
//! L = sum_k sum_pixels |H_k(mesh) - T_k|^2 + w_s * L_s(mesh) + w_n * L_n(mesh)
//! ```
//!
//! where `mesh` is the dual-contouring surface of the deformed lattice,
//! `H_k` its camera-space normal render and `T_k` the target map (zero at
//! background). Summing over every pixel is the same as summing over the
//! union of the two masks, since both maps vanish outside it.
//!
//! Distances are parameterized as `X = X0 + cell * D` so that `D` is in cell
//! units, like `O`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::contour::{plan_extraction, plan_from_distances, ExtractionPlan};
use crate::error::{Error, Result};
use crate::mesh::{
    laplacian_energy, normal_consistency_energy, taubin_smooth, vertex_normals,
    vertex_normals_backward, AdjacencyIndex, Mesh, TaubinParams,
};
use crate::metrics::multi_view_mae;
use crate::optim::{Adam, AdamParams};
use crate::raster::{accumulate_backward, rasterize, Camera, NormalImage};
use crate::sdf::{compute_signed_distances, deform_derivative, is_inside, SdfGrid};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Offsets only; distances and connectivity stay fixed.
    GridsOnly,
    /// Distances only on the undeformed lattice; replans on sign flips.
    DistancesOnly,
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::GridsOnly, Strategy::DistancesOnly, Strategy::Joint];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::GridsOnly => "grids_only",
            Strategy::DistancesOnly => "distances_only",
            Strategy::Joint => "joint",
        }
    }

    fn moves_offsets(&self) -> bool {
        matches!(self, Strategy::GridsOnly | Strategy::Joint)
    }

    fn moves_distances(&self) -> bool {
        matches!(self, Strategy::DistancesOnly | Strategy::Joint)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}` (grids_only, distances_only, joint)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub smooth: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            smooth: 0.25,
            normal: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarveConfig {
    pub resolution: usize,
    /// Offset bound in cell units.
    pub tau: f64,
    pub weights: LossWeights,
    pub iterations: usize,
    pub adam: AdamParams,
    pub strategy: Strategy,
    pub post_smoothing: usize,
    pub taubin: TaubinParams,
}

impl Default for CarveConfig {
    fn default() -> Self {
        CarveConfig {
            resolution: 128,
            tau: 0.5,
            weights: LossWeights::default(),
            iterations: 200,
            adam: AdamParams::default(),
            strategy: Strategy::GridsOnly,
            post_smoothing: 5,
            taubin: TaubinParams::default(),
        }
    }
}

impl CarveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::invalid("resolution must be at least 2"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.weights.smooth >= 0.0 && self.weights.normal >= 0.0) {
            return Err(Error::invalid("regularizer weights must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        self.adam.validate()?;
        self.taubin.validate()
    }
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub data: f64,
    pub smooth: f64,
    pub normal: f64,
}

/// Loss plus its gradient with respect to the extracted mesh vertices.
#[derive(Debug, Clone)]
pub struct MeshLoss {
    pub terms: LossTerms,
    pub vertex_grads: Vec<Vec3>,
    pub renders: Vec<NormalImage>,
}

fn check_targets(cameras: &[Camera], targets: &[NormalImage]) -> Result<()> {
    if cameras.len() != targets.len() {
        return Err(Error::SizeMismatch {
            what: "targets per camera",
            expected: cameras.len(),
            actual: targets.len(),
        });
    }
    for (c, t) in cameras.iter().zip(targets) {
        if c.width != t.width || c.height != t.height || t.normals.len() != c.pixel_count() {
            return Err(Error::SizeMismatch {
                what: "target pixels",
                expected: c.pixel_count(),
                actual: t.normals.len(),
            });
        }
    }
    Ok(())
}

/// Loss and vertex gradient for a mesh with the given positions; vertex
/// normals are recomputed from the positions.
pub fn mesh_loss(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    adjacency: &AdjacencyIndex,
    face_pairs: &[(usize, usize)],
    cameras: &[Camera],
    targets: &[NormalImage],
    weights: LossWeights,
) -> Result<MeshLoss> {
    check_targets(cameras, targets)?;
    let (normals, _) = vertex_normals(positions, faces);
    let mesh = Mesh {
        vertices: positions.to_vec(),
        faces: faces.to_vec(),
        vertex_normals: Some(normals),
    };
    let n = positions.len();
    let per_view: Vec<(f64, Vec<Vec3>, Vec<Vec3>, NormalImage)> = cameras
        .par_iter()
        .zip(targets)
        .map(|(cam, target)| -> Result<_> {
            let maps = rasterize(&mesh, cam)?;
            let mut data = 0.0;
            let grads: Vec<Vec3> = maps
                .normals
                .iter()
                .zip(&target.normals)
                .map(|(h, t)| {
                    let d = h - t;
                    data += d.norm_squared();
                    d * 2.0
                })
                .collect();
            let mut pos = vec![Vec3::zeros(); n];
            let mut nrm = vec![Vec3::zeros(); n];
            accumulate_backward(&mesh, cam, &maps, &grads, &mut pos, &mut nrm)?;
            Ok((data, pos, nrm, maps.normal_image()))
        })
        .collect::<Result<_>>()?;
    // fixed camera-order reduction
    let mut data = 0.0;
    let mut vertex_grads = vec![Vec3::zeros(); n];
    let mut normal_grads = vec![Vec3::zeros(); n];
    let mut renders = Vec::with_capacity(cameras.len());
    for (d, pos, nrm, img) in per_view {
        data += d;
        for i in 0..n {
            vertex_grads[i] += pos[i];
            normal_grads[i] += nrm[i];
        }
        renders.push(img);
    }
    vertex_normals_backward(positions, faces, &normal_grads, &mut vertex_grads);

    let mut smooth = 0.0;
    if weights.smooth > 0.0 {
        let e = laplacian_energy(positions, adjacency);
        smooth = e.value;
        for (g, s) in vertex_grads.iter_mut().zip(&e.gradient) {
            *g += s * weights.smooth;
        }
    }
    let mut normal = 0.0;
    if weights.normal > 0.0 {
        let e = normal_consistency_energy(positions, faces, face_pairs);
        normal = e.value;
        for (g, s) in vertex_grads.iter_mut().zip(&e.gradient) {
            *g += s * weights.normal;
        }
    }
    Ok(MeshLoss {
        terms: LossTerms {
            total: data + weights.smooth * smooth + weights.normal * normal,
            data,
            smooth,
            normal,
        },
        vertex_grads,
        renders,
    })
}

/// Loss and its dense gradient with respect to the grid offsets `O`.
pub fn total_loss(
    grid: &SdfGrid,
    plan: &ExtractionPlan,
    cameras: &[Camera],
    targets: &[NormalImage],
    weights: LossWeights,
) -> Result<(LossTerms, Vec<Vec3>)> {
    let positions = plan.vertex_positions(|q| grid.deformed_point(q));
    let adjacency = AdjacencyIndex::from_faces(positions.len(), plan.faces());
    let pairs = adjacency.face_pairs();
    let loss = mesh_loss(&positions, plan.faces(), &adjacency, &pairs, cameras, targets, weights)?;
    let mut grad = vec![Vec3::zeros(); grid.point_count()];
    offsets_gradient(grid, plan, &loss.vertex_grads, &mut grad)?;
    Ok((loss.terms, grad))
}

/// Chains vertex gradients through extraction and the tanh deformation.
fn offsets_gradient(grid: &SdfGrid, plan: &ExtractionPlan, vertex_grads: &[Vec3], out: &mut [Vec3]) -> Result<()> {
    plan.accumulate_grid_gradient(vertex_grads, |q, g| out[q] += g)?;
    let scale = grid.offset_scale();
    out.par_iter_mut()
        .zip(grid.offsets())
        .filter(|(g, _)| **g != Vec3::zeros())
        .for_each(|(g, o)| *g = g.component_mul(&deform_derivative(scale, o)));
    Ok(())
}

/// What an observer sees once per evaluated iteration and once more for
/// the final mesh (`iteration == iterations`, `terms == None`).
pub struct IterationState<'a> {
    pub iteration: usize,
    pub mesh: &'a Mesh,
    pub terms: Option<LossTerms>,
    pub max_displacement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarveReport {
    pub strategy: Strategy,
    pub resolution: usize,
    pub cell_size: f64,
    pub total: Vec<f64>,
    pub data: Vec<f64>,
    pub smooth: Vec<f64>,
    pub normal: Vec<f64>,
    /// Mean over views of the rendered-normal MAE of the iteration-0 surface.
    pub initial_mae: f64,
    /// MAE of the optimized surface before post-smoothing.
    pub unsmoothed_mae: f64,
    /// MAE of the returned (post-smoothed) mesh, per view and mean.
    pub final_mae: f64,
    pub final_view_mae: Vec<f64>,
    /// Largest vertex displacement from the iteration-0 surface seen at any
    /// iteration (world units).
    pub max_displacement: f64,
    /// Mean vertex displacement of the optimized surface before post-smoothing.
    pub mean_displacement: f64,
    pub replans: usize,
    pub ambiguous_cells: usize,
    pub vertex_count: usize,
    pub face_count: usize,
    pub wall_time_secs: f64,
}

impl CarveReport {
    /// Per-iteration losses as CSV (`iteration,total,data,L_s,L_n`).
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "iteration,total,data,L_s,L_n")?;
        for i in 0..self.total.len() {
            writeln!(
                out,
                "{i},{},{},{},{}",
                self.total[i], self.data[i], self.smooth[i], self.normal[i]
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Scalar summary as `key=value` lines.
    pub fn summary(&self) -> String {
        let views: Vec<String> = self.final_view_mae.iter().map(|m| format!("{m:.4}")).collect();
        format!(
            "strategy={}\nresolution={}\ncell_size={}\niterations={}\ninitial_mae_degrees={:.6}\n\
             unsmoothed_mae_degrees={:.6}\nfinal_mae_degrees={:.6}\nfinal_view_mae_degrees={}\n\
             mae_reduction_percent={:.3}\nmax_displacement={:.8}\nmean_displacement={:.8}\n\
             mean_displacement_cells={:.5}\nreplans={}\nambiguous_cells={}\nvertices={}\nfaces={}\n\
             wall_time_secs={:.3}\n",
            self.strategy,
            self.resolution,
            self.cell_size,
            self.total.len(),
            self.initial_mae,
            self.unsmoothed_mae,
            self.final_mae,
            views.join(";"),
            100.0 * (1.0 - self.final_mae / self.initial_mae),
            self.max_displacement,
            self.mean_displacement,
            self.mean_displacement / self.cell_size,
            self.replans,
            self.ambiguous_cells,
            self.vertex_count,
            self.face_count,
            self.wall_time_secs,
        )
    }
}

/// Optimization state for one run.
pub struct Carver<'a> {
    config: CarveConfig,
    cameras: &'a [Camera],
    targets: &'a [NormalImage],
    grid: SdfGrid,
    base_distances: Vec<f64>,
    /// `D` in `X = X0 + cell * D`.
    distance_params: Vec<f64>,
    current_distances: Vec<f64>,
    plan: ExtractionPlan,
    adjacency: AdjacencyIndex,
    face_pairs: Vec<(usize, usize)>,
    offset_opt: Option<Adam>,
    distance_opt: Option<Adam>,
    initial: Vec<Vec3>,
    initial_faces: Vec<[usize; 3]>,
    initial_tree: Option<ImmutableKdTree<f64, 3>>,
    replans: usize,
}

impl<'a> Carver<'a> {
    /// Starts from a grid whose distances are filled; its offsets are kept.
    pub fn new(grid: SdfGrid, cameras: &'a [Camera], targets: &'a [NormalImage], config: CarveConfig) -> Result<Self> {
        config.validate()?;
        check_targets(cameras, targets)?;
        let plan = plan_extraction(&grid)?;
        let base_distances = grid.require_distances()?.to_vec();
        let n = grid.point_count();
        let adjacency = AdjacencyIndex::from_faces(plan.vertex_count(), plan.faces());
        let face_pairs = adjacency.face_pairs();
        let initial = plan.vertex_positions(|q| grid.deformed_point(q));
        Ok(Carver {
            offset_opt: config
                .strategy
                .moves_offsets()
                .then(|| Adam::new(config.adam, 3 * n))
                .transpose()?,
            distance_opt: config
                .strategy
                .moves_distances()
                .then(|| Adam::new(config.adam, n))
                .transpose()?,
            config,
            cameras,
            targets,
            distance_params: vec![0.0; n],
            current_distances: base_distances.clone(),
            base_distances,
            initial_faces: plan.faces().to_vec(),
            plan,
            adjacency,
            face_pairs,
            initial,
            initial_tree: None,
            grid,
            replans: 0,
        })
    }

    pub fn grid(&self) -> &SdfGrid {
        &self.grid
    }

    pub fn plan(&self) -> &ExtractionPlan {
        &self.plan
    }

    /// Distances currently used for extraction.
    pub fn distances(&self) -> &[f64] {
        &self.current_distances
    }

    pub fn current_positions(&self) -> Vec<Vec3> {
        self.plan.vertex_positions(|q| self.grid.deformed_point(q))
    }

    pub fn current_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.current_positions(),
            faces: self.plan.faces().to_vec(),
            vertex_normals: None,
        }
    }

    /// Distance of every current vertex to the iteration-0 surface vertices:
    /// the same vertex while connectivity is unchanged, else the nearest one.
    pub fn displacements(&mut self, positions: &[Vec3]) -> Vec<f64> {
        if self.plan.faces() == self.initial_faces.as_slice() {
            return positions.iter().zip(&self.initial).map(|(p, q)| (p - q).norm()).collect();
        }
        let initial = &self.initial;
        let tree = self.initial_tree.get_or_insert_with(|| {
            let coords: Vec<[f64; 3]> = initial.iter().map(|p| [p.x, p.y, p.z]).collect();
            ImmutableKdTree::new_from_slice(&coords)
        });
        positions
            .par_iter()
            .map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).distance.sqrt())
            .collect()
    }

    /// Loss and gradients at the current state, then one optimizer step.
    pub fn step(&mut self, iteration: usize) -> Result<(LossTerms, Mesh)> {
        let positions = self.current_positions();
        let faces = self.plan.faces().to_vec();
        let loss = mesh_loss(
            &positions,
            self.plan.faces(),
            &self.adjacency,
            &self.face_pairs,
            self.cameras,
            self.targets,
            self.config.weights,
        )?;
        let t = loss.terms;
        if ![t.total, t.data, t.smooth, t.normal].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration,
                data: t.data,
                smooth: t.smooth,
                normal: t.normal,
            });
        }
        let n = self.grid.point_count();
        if let Some(opt) = &mut self.offset_opt {
            let mut grad = vec![Vec3::zeros(); n];
            offsets_gradient(&self.grid, &self.plan, &loss.vertex_grads, &mut grad)?;
            opt.step_vec3(self.grid.offsets_mut(), &grad)?;
        }
        if self.distance_opt.is_some() {
            let mut grad = vec![0.0; n];
            let cell = self.grid.cell_size();
            let grid = &self.grid;
            self.plan.accumulate_distance_gradient(
                &loss.vertex_grads,
                |q| grid.deformed_point(q),
                |q, g| grad[q] += g * cell,
            )?;
            let opt = self.distance_opt.as_mut().unwrap();
            opt.step(&mut self.distance_params, &grad)?;
            self.update_distances()?;
        }
        let mesh = Mesh {
            vertices: positions,
            faces,
            vertex_normals: None,
        };
        Ok((t, mesh))
    }

    fn update_distances(&mut self) -> Result<()> {
        let cell = self.grid.cell_size();
        let mut flipped = false;
        for ((x, x0), d) in self
            .current_distances
            .iter_mut()
            .zip(&self.base_distances)
            .zip(&self.distance_params)
        {
            let new = x0 + cell * d;
            flipped |= is_inside(new) != is_inside(*x);
            *x = new;
        }
        if flipped {
            self.plan = plan_from_distances(self.grid.resolution(), &self.current_distances)?;
            self.adjacency = AdjacencyIndex::from_faces(self.plan.vertex_count(), self.plan.faces());
            self.face_pairs = self.adjacency.face_pairs();
            self.replans += 1;
        } else {
            self.plan.reweight(&self.current_distances)?;
        }
        Ok(())
    }

    /// Runs the configured iterations and post-processing.
    pub fn run(mut self, mut observer: impl FnMut(&IterationState)) -> Result<(Mesh, CarveReport)> {
        let start = Instant::now();
        let iterations = self.config.iterations;
        let mut report = CarveReport {
            strategy: self.config.strategy,
            resolution: self.grid.resolution(),
            cell_size: self.grid.cell_size(),
            total: Vec::with_capacity(iterations),
            data: Vec::with_capacity(iterations),
            smooth: Vec::with_capacity(iterations),
            normal: Vec::with_capacity(iterations),
            initial_mae: f64::NAN,
            unsmoothed_mae: f64::NAN,
            final_mae: f64::NAN,
            final_view_mae: Vec::new(),
            max_displacement: 0.0,
            mean_displacement: 0.0,
            replans: 0,
            ambiguous_cells: self.plan.ambiguous_cells(),
            vertex_count: 0,
            face_count: 0,
            wall_time_secs: 0.0,
        };
        for it in 0..iterations {
            let (terms, mesh) = self.step(it)?;
            if it == 0 {
                report.initial_mae = self.render_mae(&mesh)?.0;
            }
            let disp = self.displacements(&mesh.vertices);
            report.max_displacement = disp.iter().copied().fold(report.max_displacement, f64::max);
            report.total.push(terms.total);
            report.data.push(terms.data);
            report.smooth.push(terms.smooth);
            report.normal.push(terms.normal);
            log::debug!(
                "iteration {it}: total {:.6} data {:.6} L_s {:.6e} L_n {:.6}",
                terms.total,
                terms.data,
                terms.smooth,
                terms.normal
            );
            observer(&IterationState {
                iteration: it,
                mesh: &mesh,
                terms: Some(terms),
                max_displacement: report.max_displacement,
            });
        }
        let optimized = self.current_mesh();
        let disp = self.displacements(&optimized.vertices);
        report.max_displacement = disp.iter().copied().fold(report.max_displacement, f64::max);
        report.mean_displacement = disp.iter().sum::<f64>() / disp.len().max(1) as f64;
        observer(&IterationState {
            iteration: iterations,
            mesh: &optimized,
            terms: None,
            max_displacement: report.max_displacement,
        });
        report.unsmoothed_mae = self.render_mae(&optimized)?.0;
        let refined = taubin_smooth(
            &optimized,
            self.config.post_smoothing,
            self.config.taubin.lambda,
            self.config.taubin.mu,
        )?;
        let (mae, per_view) = self.render_mae(&refined)?;
        report.final_mae = mae;
        report.final_view_mae = per_view;
        report.replans = self.replans;
        report.vertex_count = refined.vertices.len();
        report.face_count = refined.faces.len();
        report.wall_time_secs = start.elapsed().as_secs_f64();
        Ok((refined, report))
    }

    fn render_mae(&self, mesh: &Mesh) -> Result<(f64, Vec<f64>)> {
        let (normals, _) = vertex_normals(&mesh.vertices, &mesh.faces);
        let mesh = Mesh {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            vertex_normals: Some(normals),
        };
        let renders: Vec<NormalImage> = self
            .cameras
            .par_iter()
            .map(|c| rasterize(&mesh, c).map(|m| m.normal_image()))
            .collect::<Result<_>>()?;
        multi_view_mae(&renders, self.targets)
    }
}

/// Grid with signed distances of a normalized mesh.
pub fn grid_for_mesh(mesh: &Mesh, resolution: usize, tau: f64) -> Result<SdfGrid> {
    if let Some((lo, hi)) = mesh.bounds() {
        if lo.min() < -1.0 || hi.max() > 1.0 {
            return Err(Error::invalid("mesh must lie inside [-1, 1]^3; normalize it first"));
        }
    }
    compute_signed_distances(mesh, SdfGrid::new(resolution, tau)?)
}

/// Refines `coarse` against per-camera target normal maps.
pub fn carve(
    coarse: &Mesh,
    targets: &[NormalImage],
    cameras: &[Camera],
    config: &CarveConfig,
) -> Result<(Mesh, CarveReport)> {
    carve_with_observer(coarse, targets, cameras, config, |_| {})
}

pub fn carve_with_observer(
    coarse: &Mesh,
    targets: &[NormalImage],
    cameras: &[Camera],
    config: &CarveConfig,
    observer: impl FnMut(&IterationState),
) -> Result<(Mesh, CarveReport)> {
    config.validate()?;
    let grid = grid_for_mesh(coarse, config.resolution, config.tau)?;
    Carver::new(grid, cameras, targets, config.clone())?.run(observer)
}

/// Renders the camera-space normal maps of a mesh (normals recomputed).
pub fn render_targets(mesh: &Mesh, cameras: &[Camera]) -> Result<Vec<NormalImage>> {
    let (normals, _) = vertex_normals(&mesh.vertices, &mesh.faces);
    let mesh = Mesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        vertex_normals: Some(normals),
    };
    cameras
        .par_iter()
        .map(|c| rasterize(&mesh, c).map(|m| m.normal_image()))
        .collect()
}

/// Rotates every foreground normal by a zero-mean Gaussian angle with
/// standard deviation `sigma_degrees` about a uniformly random axis
/// perpendicular to it. Deterministic per seed.
pub fn inject_target_noise(targets: &[NormalImage], sigma_degrees: f64, seed: u64) -> Result<Vec<NormalImage>> {
    if !(sigma_degrees >= 0.0 && sigma_degrees.is_finite()) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    if sigma_degrees == 0.0 {
        return Ok(targets.to_vec());
    }
    let normal = Normal::new(0.0, sigma_degrees.to_radians()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(targets
        .iter()
        .map(|t| {
            let normals = t
                .normals
                .iter()
                .map(|n| {
                    if *n == Vec3::zeros() {
                        return *n;
                    }
                    let n = n.normalize();
                    let theta = normal.sample(&mut rng);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                    let u = n.cross(&helper).normalize();
                    let v = n.cross(&u);
                    let axis = u * phi.cos() + v * phi.sin();
                    // axis is perpendicular to n, so Rodrigues reduces to two terms
                    (n * theta.cos() + axis.cross(&n) * theta.sin()).normalize()
                })
                .collect();
            NormalImage {
                width: t.width,
                height: t.height,
                normals,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::standard_rig;
    use crate::synth::icosphere;

    fn ellipsoid_grid(r: usize) -> SdfGrid {
        SdfGrid::from_fn(r, 0.5, |p| {
            Vec3::new(p.x / 0.6, p.y / 0.5, p.z / 0.55).norm() - 1.0
        })
        .unwrap()
    }

    fn one_view(size: usize) -> Vec<Camera> {
        vec![Camera::new(25.0, 15.0, 2.2, 40.0, size, size).unwrap()]
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("both".parse::<Strategy>().is_err());
    }

    #[test]
    fn self_targets_give_zero_data_term_and_gradient() {
        let grid = ellipsoid_grid(12);
        let plan = plan_extraction(&grid).unwrap();
        let cams = one_view(32);
        let targets = render_targets(
            &Mesh {
                vertices: plan.vertex_positions(|q| grid.deformed_point(q)),
                faces: plan.faces().to_vec(),
                vertex_normals: None,
            },
            &cams,
        )
        .unwrap();
        let zero = LossWeights { smooth: 0.0, normal: 0.0 };
        let (terms, grad) = total_loss(&grid, &plan, &cams, &targets, zero).unwrap();
        assert_eq!(terms.data, 0.0);
        assert!(grad.iter().all(|g| *g == Vec3::zeros()));
    }

    #[test]
    fn single_pixel_difference() {
        let grid = ellipsoid_grid(12);
        let plan = plan_extraction(&grid).unwrap();
        let cams = one_view(32);
        let mesh = Mesh {
            vertices: plan.vertex_positions(|q| grid.deformed_point(q)),
            faces: plan.faces().to_vec(),
            vertex_normals: None,
        };
        let mut targets = render_targets(&mesh, &cams).unwrap();
        let d = Vec3::new(0.1, -0.2, 0.05);
        targets[0].normals[16 * 32 + 16] += d;
        let zero = LossWeights { smooth: 0.0, normal: 0.0 };
        let (terms, _) = total_loss(&grid, &plan, &cams, &targets, zero).unwrap();
        assert!((terms.data - d.norm_squared()).abs() < 1e-12);
        assert!(total_loss(&grid, &plan, &cams, &targets[..0], zero).is_err());
    }

    #[test]
    fn offset_gradient_matches_finite_differences() {
        let mut grid = ellipsoid_grid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for o in grid.offsets_mut() {
            *o = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        }
        let plan = plan_extraction(&grid).unwrap();
        let cams = one_view(32);
        let mut rough = grid.clone();
        for o in rough.offsets_mut() {
            *o += Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let targets = render_targets(
            &Mesh {
                vertices: plan.vertex_positions(|q| rough.deformed_point(q)),
                faces: plan.faces().to_vec(),
                vertex_normals: None,
            },
            &cams,
        )
        .unwrap();
        let weights = LossWeights::default();
        let (_, grad) = total_loss(&grid, &plan, &cams, &targets, weights).unwrap();
        let involved = plan.involved_points();
        let h = 1e-6;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let dir: Vec<Vec3> = (0..grid.point_count())
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let shifted = |s: f64| {
                let mut g = grid.clone();
                for &q in &involved {
                    g.offsets_mut()[q] += dir[q] * s;
                }
                g
            };
            let (gp, gm) = (shifted(h), shifted(-h));
            let faces = |g: &SdfGrid| {
                let m = Mesh {
                    vertices: plan.vertex_positions(|q| g.deformed_point(q)),
                    faces: plan.faces().to_vec(),
                    vertex_normals: None,
                };
                let (normals, _) = vertex_normals(&m.vertices, &m.faces);
                rasterize(&Mesh { vertex_normals: Some(normals), ..m }, &cams[0]).unwrap().face
            };
            // skip directions that change pixel coverage (no silhouette gradients)
            let base = faces(&grid);
            if faces(&gp) != base || faces(&gm) != base {
                continue;
            }
            let lp = total_loss(&gp, &plan, &cams, &targets, weights).unwrap().0.total;
            let lm = total_loss(&gm, &plan, &cams, &targets, weights).unwrap().0.total;
            let fd = (lp - lm) / (2.0 * h);
            let an: f64 = involved.iter().map(|&q| grad[q].dot(&dir[q])).sum();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} directions kept coverage");
        assert!(worst < 5e-3, "relative error {worst}");
    }

    #[test]
    fn self_target_optimum_is_a_fixed_point() {
        let grid = ellipsoid_grid(16);
        let cams = standard_rig(32, 32);
        let plan = plan_extraction(&grid).unwrap();
        let mesh = Mesh {
            vertices: plan.vertex_positions(|q| grid.deformed_point(q)),
            faces: plan.faces().to_vec(),
            vertex_normals: None,
        };
        let targets = render_targets(&mesh, &cams).unwrap();
        let config = CarveConfig {
            resolution: 16,
            iterations: 5,
            weights: LossWeights { smooth: 0.0, normal: 0.0 },
            ..Default::default()
        };
        let mut carver = Carver::new(grid, &cams, &targets, config).unwrap();
        for it in 0..5 {
            let (terms, _) = carver.step(it).unwrap();
            assert_eq!(terms.total, 0.0);
        }
        assert!(carver.grid().offsets().iter().all(|o| *o == Vec3::zeros()));
    }

    #[test]
    fn grids_only_keeps_connectivity_and_bounds_displacement() {
        let grid = ellipsoid_grid(20);
        let cell = grid.cell_size();
        let cams = standard_rig(48, 48);
        let sphere = icosphere(4, 0.55);
        let targets = render_targets(&sphere, &cams).unwrap();
        let config = CarveConfig {
            resolution: 20,
            iterations: 30,
            adam: AdamParams {
                learning_rate: 0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let carver = Carver::new(grid, &cams, &targets, config).unwrap();
        let faces0 = carver.plan().faces().to_vec();
        let mut seen = 0;
        let (_, report) = carver
            .run(|s| {
                assert_eq!(s.mesh.faces, faces0);
                assert!(s.max_displacement < 2.0 * cell);
                seen += 1;
            })
            .unwrap();
        assert_eq!(seen, 31);
        assert_eq!(report.total.len(), 30);
        assert!(report.total.iter().all(|v| v.is_finite()));
        assert!(report.total[29] < report.total[0]);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.starts_with("iteration,total,data,L_s,L_n\n0,"));
        assert!(report.summary().contains("strategy=grids_only"));
    }

    #[test]
    fn distance_strategies_run_and_replan() {
        let grid = ellipsoid_grid(16);
        let cams = standard_rig(32, 32);
        let targets = render_targets(&icosphere(3, 0.5), &cams).unwrap();
        for strategy in [Strategy::DistancesOnly, Strategy::Joint] {
            let config = CarveConfig {
                resolution: 16,
                iterations: 15,
                strategy,
                adam: AdamParams {
                    learning_rate: 0.2,
                    ..Default::default()
                },
                ..Default::default()
            };
            let (mesh, report) = Carver::new(grid.clone(), &cams, &targets, config).unwrap().run(|_| {}).unwrap();
            assert_eq!(report.strategy, strategy);
            assert!(report.total.iter().all(|v| v.is_finite()));
            assert!(report.total[14] < report.total[0], "{strategy}");
            assert!(!mesh.is_empty());
        }
    }

    #[test]
    fn noise_injection_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normals: Vec<Vec3> = (0..100_000)
            .map(|i| {
                if i % 10 == 0 {
                    Vec3::zeros()
                } else {
                    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5).normalize()
                }
            })
            .collect();
        let img = vec![NormalImage {
            width: 1000,
            height: 100,
            normals,
        }];
        assert_eq!(inject_target_noise(&img, 0.0, 1).unwrap(), img);
        let noisy = inject_target_noise(&img, 10.0, 1).unwrap();
        assert_eq!(noisy, inject_target_noise(&img, 10.0, 1).unwrap());
        let angles: Vec<f64> = img[0]
            .normals
            .iter()
            .zip(&noisy[0].normals)
            .filter(|(a, _)| **a != Vec3::zeros())
            .map(|(a, b)| a.dot(b).clamp(-1.0, 1.0).acos().to_degrees())
            .collect();
        let rms = (angles.iter().map(|a| a * a).sum::<f64>() / angles.len() as f64).sqrt();
        assert!((rms - 10.0).abs() < 1.0, "{rms}");
        assert!(noisy[0].normals.iter().step_by(10).all(|n| *n == Vec3::zeros()));
        assert!(noisy[0]
            .normals
            .iter()
            .filter(|n| **n != Vec3::zeros())
            .all(|n| (n.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn config_validation() {
        assert!(CarveConfig::default().validate().is_ok());
        let bad = CarveConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CarveConfig {
            weights: LossWeights { smooth: -1.0, normal: 0.0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
