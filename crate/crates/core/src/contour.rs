//! Differentiable dual contouring on a (possibly deformed) lattice.
//!
//! Every lattice edge whose endpoint distances straddle zero carries a
//! crossing point `c = (1 - t) * g_a + t * g_b` with `t = x_a / (x_a - x_b)`.
//! Each active cell owns one vertex at the mean of its crossing points, and
//! every interior crossing edge emits the quad joining the vertices of its
//! four incident cells, split into two triangles.
//!
//! All weights depend only on the distances, so for frozen distances an
//! output vertex is a *fixed* convex combination of (at most 8) deformed
//! lattice points. Extraction is then a constant sparse linear map and its
//! adjoint is the transposed map.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sdf::{is_inside, SdfGrid};
use crate::Vec3;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEdge {
    /// Lattice index of the endpoint with the lower coordinate.
    pub lower: usize,
    pub upper: usize,
    pub axis: u8,
    /// Interpolation weight toward `upper`.
    pub t: f64,
    pub dt_dlower: f64,
    pub dt_dupper: f64,
}

impl CrossingEdge {
    fn new(lower: usize, upper: usize, axis: u8, xa: f64, xb: f64) -> Self {
        let denom = xa - xb;
        CrossingEdge {
            lower,
            upper,
            axis,
            t: xa / denom,
            dt_dlower: -xb / (denom * denom),
            dt_dupper: xa / (denom * denom),
        }
    }
}

/// One output vertex: a convex combination of its cell's 8 corners.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVertex {
    pub cell: usize,
    pub corners: [usize; 8],
    pub weights: [f64; 8],
    /// Crossing edges of this vertex, see [`ExtractionPlan::edges_of`].
    pub edges: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionPlan {
    resolution: usize,
    edges: Vec<CrossingEdge>,
    vertices: Vec<DualVertex>,
    cell_edges: Vec<usize>,
    faces: Vec<[usize; 3]>,
    ambiguous_cells: usize,
}

/// Builds the plan from a grid's (fixed) distances.
pub fn plan_extraction(grid: &SdfGrid) -> Result<ExtractionPlan> {
    plan_from_distances(grid.resolution(), grid.require_distances()?)
}

/// Builds a plan for an `r^3` lattice over `[-1, 1]^3` with the given distances.
pub fn plan_from_distances(r: usize, x: &[f64]) -> Result<ExtractionPlan> {
    if r < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    if x.len() != r * r * r {
        return Err(Error::SizeMismatch {
            what: "grid distances",
            expected: r * r * r,
            actual: x.len(),
        });
    }
    let c = r - 1;
    let stride = [r * r, r, 1];
    let coords = |p: usize| [p / (r * r), (p / r) % r, p % r];
    let cell_of = |i: usize, j: usize, k: usize| (i * c + j) * c + k;

    // crossing edges in lattice order, axis-minor
    let mut edges = Vec::new();
    let mut edge_id = vec![NONE; 3 * r * r * r];
    for p in 0..r * r * r {
        let pc = coords(p);
        for axis in 0..3 {
            if pc[axis] + 1 >= r {
                continue;
            }
            let q = p + stride[axis];
            if is_inside(x[p]) != is_inside(x[q]) {
                edge_id[3 * p + axis] = edges.len() as u32;
                edges.push(CrossingEdge::new(p, q, axis as u8, x[p], x[q]));
            }
        }
    }

    // active cells are exactly the cells touching a crossing edge
    let mut cells = Vec::new();
    for e in &edges {
        let pc = coords(e.lower);
        let a = e.axis as usize;
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for du in 0..2 {
            for dv in 0..2 {
                let mut cc = pc;
                if cc[u] + du < 1 || cc[v] + dv < 1 {
                    continue;
                }
                cc[u] = cc[u] + du - 1;
                cc[v] = cc[v] + dv - 1;
                if cc[u] < c && cc[v] < c && cc[a] < c {
                    cells.push(cell_of(cc[0], cc[1], cc[2]));
                }
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    if cells.is_empty() {
        return Err(Error::NoActiveCells);
    }

    let mut vertex_of_cell = vec![NONE; c * c * c];
    let mut vertices = Vec::with_capacity(cells.len());
    let mut cell_edges = Vec::with_capacity(cells.len() * 4);
    let mut ambiguous_cells = 0;
    for &cell in &cells {
        let [i, j, k] = [cell / (c * c), (cell / c) % c, cell % c];
        let corners: [usize; 8] = std::array::from_fn(|b| {
            (i + (b >> 2 & 1)) * stride[0] + (j + (b >> 1 & 1)) * stride[1] + (k + (b & 1))
        });
        let start = cell_edges.len();
        for axis in 0..3 {
            let bit = 2 - axis;
            for b in 0..8usize {
                if b >> bit & 1 == 0 {
                    let id = edge_id[3 * corners[b] + axis];
                    if id != NONE {
                        cell_edges.push(id as usize);
                    }
                }
            }
        }
        let edge_range = start..cell_edges.len();
        let n = edge_range.len() as f64;
        let mut weights = [0.0; 8];
        for &id in &cell_edges[edge_range.clone()] {
            let e = &edges[id];
            let lo = corners.iter().position(|&q| q == e.lower).unwrap();
            let hi = corners.iter().position(|&q| q == e.upper).unwrap();
            weights[lo] += (1.0 - e.t) / n;
            weights[hi] += e.t / n;
        }
        if is_ambiguous(&corners.map(|q| is_inside(x[q]))) {
            ambiguous_cells += 1;
        }
        vertex_of_cell[cell] = vertices.len() as u32;
        vertices.push(DualVertex {
            cell,
            corners,
            weights,
            edges: edge_range,
        });
    }

    let lattice = |p: usize| {
        let h = 2.0 / c as f64;
        let pc = coords(p);
        Vec3::new(
            -1.0 + pc[0] as f64 * h,
            -1.0 + pc[1] as f64 * h,
            -1.0 + pc[2] as f64 * h,
        )
    };
    let rest: Vec<Vec3> = vertices.iter().map(|v| combine(v, lattice)).collect();

    let mut faces = Vec::with_capacity(edges.len() * 2);
    for e in &edges {
        let pc = coords(e.lower);
        let a = e.axis as usize;
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        if pc[u] == 0 || pc[v] == 0 || pc[u] >= c || pc[v] >= c {
            continue;
        }
        let quad_cell = |du: usize, dv: usize| {
            let mut cc = pc;
            cc[u] = cc[u] + du - 1;
            cc[v] = cc[v] + dv - 1;
            vertex_of_cell[cell_of(cc[0], cc[1], cc[2])] as usize
        };
        // counter-clockwise around +axis
        let mut q = [quad_cell(0, 0), quad_cell(1, 0), quad_cell(1, 1), quad_cell(0, 1)];
        if !is_inside(x[e.lower]) {
            q.reverse();
        }
        let d02 = (rest[q[0]] - rest[q[2]]).norm_squared();
        let d13 = (rest[q[1]] - rest[q[3]]).norm_squared();
        if d13 < d02 {
            faces.push([q[0], q[1], q[3]]);
            faces.push([q[1], q[2], q[3]]);
        } else {
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
        }
    }
    if ambiguous_cells > 0 {
        log::debug!("{ambiguous_cells} active cells have ambiguous sign patterns");
    }
    Ok(ExtractionPlan {
        resolution: r,
        edges,
        vertices,
        cell_edges,
        faces,
        ambiguous_cells,
    })
}

fn combine(v: &DualVertex, position: impl Fn(usize) -> Vec3) -> Vec3 {
    let mut p = Vec3::zeros();
    for (&q, &w) in v.corners.iter().zip(&v.weights) {
        if w != 0.0 {
            p += position(q) * w;
        }
    }
    p
}

/// More than one connected component of inside or of outside corners.
fn is_ambiguous(inside: &[bool; 8]) -> bool {
    let mut parent: [usize; 8] = std::array::from_fn(|i| i);
    fn find(parent: &mut [usize; 8], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for b in 0..8 {
        for bit in 0..3 {
            let n = b ^ (1 << bit);
            if n > b && inside[b] == inside[n] {
                let (rb, rn) = (find(&mut parent, b), find(&mut parent, n));
                parent[rb] = rn;
            }
        }
    }
    let roots = (0..8).filter(|&b| find(&mut parent, b) == b).count();
    roots > 2
}

impl ExtractionPlan {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn edges(&self) -> &[CrossingEdge] {
        &self.edges
    }

    pub fn vertices(&self) -> &[DualVertex] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Crossing-edge ids of a vertex's cell.
    pub fn edges_of(&self, vertex: usize) -> &[usize] {
        &self.cell_edges[self.vertices[vertex].edges.clone()]
    }

    /// Active cells with more than one surface sheet collapsed into one vertex.
    pub fn ambiguous_cells(&self) -> usize {
        self.ambiguous_cells
    }

    /// Lattice points that carry nonzero weight in some vertex, ascending.
    pub fn involved_points(&self) -> Vec<usize> {
        let mut pts: Vec<usize> = self
            .vertices
            .iter()
            .flat_map(|v| {
                v.corners
                    .iter()
                    .zip(&v.weights)
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(&q, _)| q)
            })
            .collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }

    /// Vertex positions for arbitrary lattice-point positions.
    pub fn vertex_positions(&self, position: impl Fn(usize) -> Vec3) -> Vec<Vec3> {
        self.vertices.iter().map(|v| combine(v, &position)).collect()
    }

    /// True when `x` induces the same inside/outside pattern on every crossing
    /// edge endpoint and creates no new crossings on the plan's cells.
    pub fn signs_match(&self, x: &[f64]) -> bool {
        plan_signature(self.resolution, x) == self.signature()
    }

    fn signature(&self) -> Vec<(usize, u8)> {
        self.edges.iter().map(|e| (e.lower, e.axis)).collect()
    }

    /// Recomputes the interpolation weights for new distances with the same
    /// sign pattern. Connectivity is kept.
    pub fn reweight(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.resolution.pow(3) {
            return Err(Error::SizeMismatch {
                what: "grid distances",
                expected: self.resolution.pow(3),
                actual: x.len(),
            });
        }
        for e in &mut self.edges {
            if is_inside(x[e.lower]) == is_inside(x[e.upper]) {
                return Err(Error::invalid("reweight called after a sign change"));
            }
            *e = CrossingEdge::new(e.lower, e.upper, e.axis, x[e.lower], x[e.upper]);
        }
        for v in &mut self.vertices {
            let ids = &self.cell_edges[v.edges.clone()];
            let n = ids.len() as f64;
            v.weights = [0.0; 8];
            for &id in ids {
                let e = &self.edges[id];
                let lo = v.corners.iter().position(|&q| q == e.lower).unwrap();
                let hi = v.corners.iter().position(|&q| q == e.upper).unwrap();
                v.weights[lo] += (1.0 - e.t) / n;
                v.weights[hi] += e.t / n;
            }
        }
        Ok(())
    }

    /// Transposed extraction map: feeds `dL/dG_u` for each involved lattice
    /// point to `sink`, in vertex order.
    pub fn accumulate_grid_gradient(
        &self,
        vertex_grads: &[Vec3],
        mut sink: impl FnMut(usize, Vec3),
    ) -> Result<()> {
        self.check_len(vertex_grads.len())?;
        for (v, g) in self.vertices.iter().zip(vertex_grads) {
            for (&q, &w) in v.corners.iter().zip(&v.weights) {
                if w != 0.0 {
                    sink(q, g * w);
                }
            }
        }
        Ok(())
    }

    /// Gradient with respect to the distances at lattice points, through the
    /// interpolation weights; `position` gives the (deformed) lattice points.
    pub fn accumulate_distance_gradient(
        &self,
        vertex_grads: &[Vec3],
        position: impl Fn(usize) -> Vec3,
        mut sink: impl FnMut(usize, f64),
    ) -> Result<()> {
        self.check_len(vertex_grads.len())?;
        for (vi, g) in vertex_grads.iter().enumerate() {
            let ids = self.edges_of(vi);
            let n = ids.len() as f64;
            for &id in ids {
                let e = &self.edges[id];
                let dl_dt = g.dot(&(position(e.upper) - position(e.lower))) / n;
                sink(e.lower, dl_dt * e.dt_dlower);
                sink(e.upper, dl_dt * e.dt_dupper);
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.vertices.len() {
            return Err(Error::SizeMismatch {
                what: "vertex gradients",
                expected: self.vertices.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

fn plan_signature(r: usize, x: &[f64]) -> Vec<(usize, u8)> {
    let stride = [r * r, r, 1];
    let mut sig = Vec::new();
    for p in 0..x.len() {
        let pc = [p / (r * r), (p / r) % r, p % r];
        for axis in 0..3 {
            if pc[axis] + 1 < r && is_inside(x[p]) != is_inside(x[p + stride[axis]]) {
                sig.push((p, axis as u8));
            }
        }
    }
    sig
}

/// Mesh for the given deformed lattice positions (`r^3` entries).
pub fn extract_surface(plan: &ExtractionPlan, deformed: &[Vec3]) -> Result<Mesh> {
    let n = plan.resolution.pow(3);
    if deformed.len() != n {
        return Err(Error::SizeMismatch {
            what: "deformed grid positions",
            expected: n,
            actual: deformed.len(),
        });
    }
    Ok(Mesh {
        vertices: plan.vertex_positions(|q| deformed[q]),
        faces: plan.faces.clone(),
        vertex_normals: None,
    })
}

/// Dense adjoint of [`extract_surface`]: `dL/dG_u` for all `r^3` lattice points.
pub fn backpropagate_to_grid(plan: &ExtractionPlan, vertex_grads: &[Vec3]) -> Result<Vec<Vec3>> {
    let mut out = vec![Vec3::zeros(); plan.resolution.pow(3)];
    plan.accumulate_grid_gradient(vertex_grads, |q, g| out[q] += g)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::AdjacencyIndex;
    use crate::sdf::deform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(r: usize, radius: f64) -> SdfGrid {
        SdfGrid::from_fn(r, 0.5, |p| p.norm() - radius).unwrap()
    }

    #[test]
    fn interpolation_weight_formula() {
        let e = CrossingEdge::new(0, 1, 0, -1.0, 3.0);
        assert_eq!(e.t, 0.25);
        assert_eq!(CrossingEdge::new(0, 1, 0, -0.7, 0.7).t, 0.5);
    }

    #[test]
    fn near_plane_gives_flat_sheet() {
        let grid = SdfGrid::from_fn(3, 0.5, |p| p.z - 0.001).unwrap();
        let plan = plan_extraction(&grid).unwrap();
        assert_eq!(plan.vertex_count(), 4);
        assert_eq!(plan.edges().len(), 9);
        assert!(plan.edges().iter().all(|e| e.axis == 2));
        // only the centre vertical edge has four incident cells
        assert_eq!(plan.faces().len(), 2);
        let mesh = extract_surface(&plan, &grid.positions()).unwrap();
        for v in &mesh.vertices {
            assert!((v.z - 0.001).abs() < 1e-12);
        }
        for f in 0..mesh.faces.len() {
            assert!(mesh.face_cross(f).z > 0.0);
        }
    }

    #[test]
    fn plane_through_lattice_points_lands_on_zero_set() {
        let grid = SdfGrid::from_fn(5, 0.5, |p| p.z).unwrap();
        let plan = plan_extraction(&grid).unwrap();
        let mesh = extract_surface(&plan, &grid.positions()).unwrap();
        assert!(mesh.vertices.iter().all(|v| v.z == 0.0));
    }

    #[test]
    fn sphere_vertices_close_closed_and_outward() {
        let grid = sphere(64, 0.8);
        let plan = plan_extraction(&grid).unwrap();
        let mesh = extract_surface(&plan, &grid.positions()).unwrap();
        let h = grid.cell_size();
        for v in &mesh.vertices {
            assert!((v.norm() - 0.8).abs() < 1.5 * h);
        }
        assert!(AdjacencyIndex::build(&mesh).is_closed_manifold());
        assert!(mesh.signed_volume() > 0.0);
        assert_eq!(plan.ambiguous_cells(), 0);
    }

    #[test]
    fn translation_is_exact() {
        let grid = sphere(10, 0.6);
        let plan = plan_extraction(&grid).unwrap();
        let base = extract_surface(&plan, &grid.positions()).unwrap();
        let d = Vec3::new(0.1, -0.2, 0.05);
        let moved: Vec<Vec3> = grid.positions().iter().map(|p| p + d).collect();
        let shifted = extract_surface(&plan, &moved).unwrap();
        for (a, b) in base.vertices.iter().zip(&shifted.vertices) {
            assert!((b - a - d).amax() < 1e-12);
        }
    }

    #[test]
    fn affine_combination_of_deformations() {
        let mut grid = sphere(10, 0.6);
        let plan = plan_extraction(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g1 = grid.positions();
        for o in grid.offsets_mut() {
            *o = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        let g2 = deform_grid(&grid);
        let (a, b) = (1.7, -0.7);
        let mix: Vec<Vec3> = g1.iter().zip(&g2).map(|(p, q)| p * a + q * b).collect();
        let m1 = extract_surface(&plan, &g1).unwrap();
        let m2 = extract_surface(&plan, &g2).unwrap();
        let mm = extract_surface(&plan, &mix).unwrap();
        for i in 0..mm.vertices.len() {
            let expect = m1.vertices[i] * a + m2.vertices[i] * b;
            assert!((mm.vertices[i] - expect).amax() < 1e-12);
        }
        assert_eq!(m1.faces, m2.faces);
    }

    #[test]
    fn adjoint_of_a_single_vertex() {
        let grid = SdfGrid::from_fn(4, 0.5, |p| p.z - 0.1).unwrap();
        let plan = plan_extraction(&grid).unwrap();
        let v = plan
            .vertices()
            .iter()
            .position(|v| v.edges.len() == 4)
            .unwrap();
        let mut grads = vec![Vec3::zeros(); plan.vertex_count()];
        grads[v] = Vec3::new(1.0, 1.0, 1.0);
        let out = backpropagate_to_grid(&plan, &grads).unwrap();
        for &id in plan.edges_of(v) {
            let e = plan.edges()[id];
            assert!((out[e.lower].x - (1.0 - e.t) / 4.0).abs() < 1e-15);
            assert!((out[e.upper].x - e.t / 4.0).abs() < 1e-15);
        }
        let zero = backpropagate_to_grid(&plan, &vec![Vec3::zeros(); plan.vertex_count()]).unwrap();
        assert!(zero.iter().all(|g| *g == Vec3::zeros()));
        assert!(backpropagate_to_grid(&plan, &grads[1..]).is_err());
    }

    #[test]
    fn adjoint_is_the_transpose() {
        // <J^T g, d> = <g, J d> for random g and grid perturbation d
        let grid = sphere(12, 0.55);
        let plan = plan_extraction(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rv = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let g: Vec<Vec3> = (0..plan.vertex_count()).map(|_| rv()).collect();
        let d: Vec<Vec3> = (0..grid.point_count()).map(|_| rv()).collect();
        let jd = extract_surface(&plan, &d).unwrap().vertices;
        let lhs: f64 = backpropagate_to_grid(&plan, &g)
            .unwrap()
            .iter()
            .zip(&d)
            .map(|(a, b)| a.dot(b))
            .sum();
        let rhs: f64 = g.iter().zip(&jd).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        let grid = sphere(8, 0.55);
        let x = grid.distances().unwrap().to_vec();
        let plan = plan_from_distances(8, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w: Vec<Vec3> = (0..plan.vertex_count())
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let lattice = grid.positions();
        let loss = |x: &[f64]| {
            let mut p = plan.clone();
            p.reweight(x).unwrap();
            p.vertex_positions(|q| lattice[q])
                .iter()
                .zip(&w)
                .map(|(a, b)| a.dot(b))
                .sum::<f64>()
        };
        let mut grad = vec![0.0; x.len()];
        plan.accumulate_distance_gradient(&w, |q| lattice[q], |q, g| grad[q] += g)
            .unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for q in plan.involved_points() {
            let mut xp = x.clone();
            xp[q] += h;
            let mut xm = x.clone();
            xm[q] -= h;
            if !plan.signs_match(&xp) || !plan.signs_match(&xm) {
                continue;
            }
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - grad[q]).abs() <= 1e-5 * fd.abs().max(1e-2), "{q}: {fd} vs {}", grad[q]);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn no_active_cells_is_an_error() {
        let grid = SdfGrid::from_fn(4, 0.5, |_| 1.0).unwrap();
        assert!(matches!(plan_extraction(&grid), Err(Error::NoActiveCells)));
    }

    #[test]
    fn ambiguity_detection() {
        let mut diag = [false; 8];
        diag[0] = true;
        diag[7] = true;
        assert!(is_ambiguous(&diag));
        let mut half = [false; 8];
        for b in 0..4 {
            half[b] = true;
        }
        assert!(!is_ambiguous(&half));
    }
}
