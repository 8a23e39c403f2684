//! Randomized invariants across modules.

use nalgebra::{Rotation3, Vector3};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdf_carve::carve::{Carver, CarveConfig, LossWeights, render_targets};
use sdf_carve::config::RunConfig;
use sdf_carve::contour::{extract_surface, plan_extraction};
use sdf_carve::mesh::{
    compute_vertex_normals, laplacian_energy, make_coarse_pair, normal_consistency_energy, vertex_normals,
    AdjacencyIndex,
};
use sdf_carve::metrics::normal_mae;
use sdf_carve::raster::{rasterize, standard_rig, Camera, NormalImage};
use sdf_carve::schedule::{
    forward_interpolate, max_abs_difference, oracle_prediction, recover_source, recover_target, sample,
    step_schedule, v_target, MapPair, ScheduleParams,
};
use sdf_carve::sdf::{active_cells, deform_grid, SdfGrid};
use sdf_carve::synth::{icosphere, uv_sphere};
use sdf_carve::{Mesh, Vec3};

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn jittered(seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = uv_sphere(6, 13, 0.6);
    for v in &mut m.vertices {
        *v += random_vec(&mut rng, 0.04);
    }
    m
}

fn random_offsets(grid: &mut SdfGrid, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for o in grid.offsets_mut() {
        *o = random_vec(&mut rng, scale);
    }
}

fn ball(r: usize) -> SdfGrid {
    SdfGrid::from_fn(r, 0.5, |p| Vec3::new(p.x / 0.7, p.y / 0.5, p.z / 0.6).norm() - 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn vertex_normals_are_permutation_equivariant(seed in 0u64..1000) {
        let mesh = jittered(seed);
        let n = mesh.vertices.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // new index of old vertex i is perm[i]
        let mut verts = vec![Vec3::zeros(); n];
        for (i, v) in mesh.vertices.iter().enumerate() {
            verts[perm[i]] = *v;
        }
        let faces: Vec<[usize; 3]> = mesh.faces.iter().rev().map(|f| f.map(|i| perm[i])).collect();
        let (a, _) = vertex_normals(&mesh.vertices, &mesh.faces);
        let (b, _) = vertex_normals(&verts, &faces);
        for i in 0..n {
            prop_assert!((a[i] - b[perm[i]]).norm() < 1e-12);
        }
    }

    #[test]
    fn smoothing_keeps_counts_and_connectivity(seed in 0u64..1000, iterations in 0usize..20) {
        let mesh = jittered(seed);
        let (coarse, fine) = make_coarse_pair(&mesh, iterations).unwrap();
        prop_assert_eq!(coarse.vertices.len(), mesh.vertices.len());
        prop_assert_eq!(&coarse.faces, &mesh.faces);
        prop_assert_eq!(&fine.faces, &mesh.faces);
    }

    #[test]
    fn energies_are_nonnegative_and_rotation_invariant(seed in 0u64..1000, angle in -3.0f64..3.0) {
        let mesh = jittered(seed);
        let adj = AdjacencyIndex::build(&mesh);
        let pairs = adj.face_pairs();
        let axis = Vector3::new(0.3, -1.0, 0.5).normalize();
        let rot = Rotation3::new(axis * angle);
        let turned: Vec<Vec3> = mesh.vertices.iter().map(|v| rot * v).collect();
        let ls = laplacian_energy(&mesh.vertices, &adj).value;
        let ln = normal_consistency_energy(&mesh.vertices, &mesh.faces, &pairs).value;
        prop_assert!(ls >= 0.0 && ln >= 0.0);
        prop_assert!((laplacian_energy(&turned, &adj).value - ls).abs() < 1e-9);
        prop_assert!((normal_consistency_energy(&turned, &mesh.faces, &pairs).value - ln).abs() < 1e-9);
    }

    #[test]
    fn deformation_is_bounded_and_never_folds(seed in 0u64..1000, scale in 0.01f64..50.0) {
        let mut grid = SdfGrid::new(6, 0.5).unwrap();
        random_offsets(&mut grid, seed, scale);
        let cell = grid.cell_size();
        let moved = deform_grid(&grid);
        let r = grid.resolution();
        for q in 0..grid.point_count() {
            let shift = moved[q] - grid.lattice_point(q);
            prop_assert!(shift.norm() <= 3f64.sqrt() * 0.5 * cell + 1e-12);
            let [i, j, k] = grid.coords(q);
            let ijk = [i, j, k];
            for axis in 0..3 {
                if ijk[axis] + 1 < r {
                    let mut next = ijk;
                    next[axis] += 1;
                    let nq = grid.index(next[0], next[1], next[2]);
                    // tau = 0.5 lets neighbours meet once tanh saturates, never cross
                    prop_assert!(moved[nq][axis] >= moved[q][axis] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn offsets_change_neither_active_cells_nor_faces(seed in 0u64..1000, scale in 0.01f64..5.0) {
        let grid = ball(10);
        let plan = plan_extraction(&grid).unwrap();
        let base = extract_surface(&plan, &deform_grid(&grid)).unwrap();
        let mut moved = grid.clone();
        random_offsets(&mut moved, seed, scale);
        prop_assert_eq!(active_cells(&grid).unwrap(), active_cells(&moved).unwrap());
        let replanned = plan_extraction(&moved).unwrap();
        prop_assert_eq!(replanned.faces(), plan.faces());
        let mesh = extract_surface(&plan, &deform_grid(&moved)).unwrap();
        prop_assert_eq!(&mesh.faces, &base.faces);
        prop_assert!(AdjacencyIndex::build(&mesh).is_closed_manifold());
    }

    #[test]
    fn extraction_is_affine(seed in 0u64..1000, a in -2.0f64..3.0) {
        let grid = ball(9);
        let plan = plan_extraction(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1: Vec<Vec3> = (0..grid.point_count()).map(|_| random_vec(&mut rng, 1.0)).collect();
        let g2: Vec<Vec3> = (0..grid.point_count()).map(|_| random_vec(&mut rng, 1.0)).collect();
        let mix: Vec<Vec3> = g1.iter().zip(&g2).map(|(x, y)| x * a + y * (1.0 - a)).collect();
        let (m1, m2, m) = (
            extract_surface(&plan, &g1).unwrap(),
            extract_surface(&plan, &g2).unwrap(),
            extract_surface(&plan, &mix).unwrap(),
        );
        for i in 0..m.vertices.len() {
            let expect = m1.vertices[i] * a + m2.vertices[i] * (1.0 - a);
            prop_assert!((m.vertices[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn rendering_is_invariant_to_turning_mesh_and_camera_together(
        seed in 0u64..1000,
        azimuth in 0.0f64..360.0,
        elevation in -40.0f64..40.0,
        turn in -3.0f64..3.0,
    ) {
        let mesh = compute_vertex_normals(&jittered(seed));
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), turn);
        let turned = compute_vertex_normals(&Mesh {
            vertices: mesh.vertices.iter().map(|v| rot * v).collect(),
            faces: mesh.faces.clone(),
            vertex_normals: None,
        });
        let a = rasterize(&mesh, &Camera::new(azimuth, elevation, 2.2, 40.0, 32, 32).unwrap()).unwrap();
        let b = rasterize(&turned, &Camera::new(azimuth + turn.to_degrees(), elevation, 2.2, 40.0, 32, 32).unwrap()).unwrap();
        prop_assert_eq!(&a.mask, &b.mask);
        for (p, q) in a.normals.iter().zip(&b.normals) {
            prop_assert!((p - q).norm() < 1e-5);
        }
        // closed mesh: visible normals face the viewer on average
        let z: f64 = a.normals.iter().map(|n| n.z).sum();
        prop_assert!(z > 0.0);
    }

    #[test]
    fn scheduler_roundtrip_and_oracle_sampling(seed in 0u64..1000, t in 1usize..=1000, count in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = || ArrayD::from_shape_simple_fn(IxDyn(&[5, 4, 3]), || rng.random_range(-1.0..1.0));
        let pair = MapPair::new(map(), map()).unwrap();
        let params = ScheduleParams::default();
        let a = params.alpha_bar(t).unwrap();
        let h_t = forward_interpolate(&pair, t, &params).unwrap();
        let v = v_target(&pair, t, &params).unwrap();
        prop_assert!(max_abs_difference(&recover_target(&h_t, &v, a), &pair.target).unwrap() < 1e-6);
        prop_assert!(max_abs_difference(&recover_source(&h_t, &v, a), &pair.source).unwrap() < 1e-6);
        let steps = step_schedule(1000, count).unwrap();
        let oracle = |x: &ArrayD<f64>, t: usize| oracle_prediction(x, t, &pair.target, &params).unwrap();
        let out = sample(oracle, &pair.source, &params, &steps).unwrap();
        prop_assert!(max_abs_difference(&out, &pair.target).unwrap() < 1e-5);
    }

    #[test]
    fn mae_grows_with_rotation_angle(seed in 0u64..1000, small in 0.0f64..40.0, extra in 0.1f64..40.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<Vec3> = (0..256).map(|_| random_vec(&mut rng, 1.0).normalize()).collect();
        let axes: Vec<Vec3> = base.iter().map(|n| n.cross(&random_vec(&mut rng, 1.0)).normalize()).collect();
        let turned = |deg: f64| {
            let t = deg.to_radians();
            NormalImage {
                width: 16,
                height: 16,
                normals: base.iter().zip(&axes).map(|(n, k)| n * t.cos() + k.cross(n) * t.sin()).collect(),
            }
        };
        let reference = turned(0.0);
        let lo = normal_mae(&turned(small), &reference).unwrap();
        let hi = normal_mae(&turned(small + extra), &reference).unwrap();
        prop_assert!(hi > lo);
        prop_assert!((lo - small).abs() < 1e-6);
    }

    #[test]
    fn config_echo_roundtrips(resolution in 2usize..300, tau in 0.01f64..2.0, seed: u64, iterations in 1usize..500) {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            format!("resolution={resolution}"),
            format!("tau={tau}"),
            format!("seed={seed}"),
            format!("iterations={iterations}"),
        ])
        .unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

#[test]
fn distances_stay_frozen_and_self_targets_stay_put() {
    let grid = ball(14);
    let x0 = grid.distances().unwrap().to_vec();
    let cams = standard_rig(32, 32);
    let plan = plan_extraction(&grid).unwrap();
    let own = render_targets(&extract_surface(&plan, &deform_grid(&grid)).unwrap(), &cams).unwrap();
    let config = CarveConfig {
        resolution: 14,
        iterations: 8,
        weights: LossWeights { smooth: 0.0, normal: 0.0 },
        ..Default::default()
    };
    let mut carver = Carver::new(grid, &cams, &own, config).unwrap();
    for it in 0..8 {
        let (terms, _) = carver.step(it).unwrap();
        assert_eq!(terms.total, 0.0);
    }
    assert_eq!(carver.grid().distances().unwrap(), x0.as_slice());
    assert!(carver.grid().offsets().iter().all(|o| *o == Vec3::zeros()));
}

#[test]
fn moving_average_of_the_loss_does_not_increase() {
    let grid = ball(24);
    let cams = standard_rig(48, 48);
    let targets = render_targets(&icosphere(4, 0.62), &cams).unwrap();
    let config = CarveConfig {
        resolution: 24,
        iterations: 80,
        ..Default::default()
    };
    let (_, report) = Carver::new(grid, &cams, &targets, config).unwrap().run(|_| {}).unwrap();
    let avg: Vec<f64> = report.total.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] <= w[0], "moving average rose at window {i}: {} -> {}", w[0], w[1]);
    }
}
