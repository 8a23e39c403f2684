//! Procedural test shapes and coarse/fine fixture pairs.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{make_coarse_pair, normalize_to_unit_sphere, Mesh};
use crate::Vec3;

/// Geodesic sphere from a subdivided icosahedron; `10 * 4^n + 2` vertices.
pub fn icosphere(subdivisions: u32, radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    Mesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Axis-aligned cube of the given edge length centered at the origin.
pub fn cube(edge: f64) -> Mesh {
    let h = edge / 2.0;
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    Mesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Latitude/longitude sphere: `rings * segments + 2` vertices, outward winding.
pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> Mesh {
    let mut vertices = vec![Vec3::new(0.0, radius, 0.0)];
    for r in 1..=rings {
        let polar = PI * r as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let az = TAU * s as f64 / segments as f64;
            vertices.push(Vec3::new(polar.sin() * az.sin(), polar.cos(), polar.sin() * az.cos()) * radius);
        }
    }
    let south = vertices.len();
    vertices.push(Vec3::new(0.0, -radius, 0.0));
    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s), ring(0, s + 1)]);
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    Mesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Sphere whose radius is modulated by a product of three phase-shifted
/// sinusoids of the unit direction: `radius + amplitude * f(d)`, `|f| <= 1`.
pub fn bumpy_sphere(
    subdivisions: u32,
    amplitude: f64,
    radius: f64,
    frequency: f64,
    seed: u64,
) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let mut mesh = icosphere(subdivisions, 1.0);
    for v in &mut mesh.vertices {
        let d = *v;
        let f = (frequency * d.x + phase[0]).sin()
            * (frequency * d.y + phase[1]).sin()
            * (frequency * d.z + phase[2]).sin();
        *v = d * (radius + amplitude * f);
    }
    mesh
}

/// Torus whose tube radius carries `ridges` sinusoidal ridges around the
/// major circle.
pub fn ridged_torus(segments: usize, amplitude: f64, ridges: usize, seed: u64) -> Mesh {
    let (major, minor) = (0.6, 0.25);
    let rings = segments;
    let sides = (segments / 3).max(3);
    let phase = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..TAU);
    let mut vertices = Vec::with_capacity(rings * sides);
    for i in 0..rings {
        let u = TAU * i as f64 / rings as f64;
        let tube = minor + amplitude * (ridges as f64 * u + phase).sin();
        for j in 0..sides {
            let v = TAU * j as f64 / sides as f64;
            let ring = major + tube * v.cos();
            vertices.push(Vec3::new(ring * u.cos(), tube * v.sin(), ring * u.sin()));
        }
    }
    let mut faces = Vec::with_capacity(2 * rings * sides);
    for i in 0..rings {
        for j in 0..sides {
            let a = i * sides + j;
            let b = ((i + 1) % rings) * sides + j;
            let c = ((i + 1) % rings) * sides + (j + 1) % sides;
            let d = i * sides + (j + 1) % sides;
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    Mesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Subdivided cube surface with `n x n` quads per side; every vertex is
/// pushed along its radial direction by a product of sinusoids.
pub fn displaced_cube(n: usize, amplitude: f64, frequency: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let n = n.max(1) as i64;
    // (normal axis, side, u axis, v axis) with u x v along the outward normal
    let sides = [
        (0, 1, 1, 2),
        (0, -1, 2, 1),
        (1, 1, 2, 0),
        (1, -1, 0, 2),
        (2, 1, 0, 1),
        (2, -1, 1, 0),
    ];
    let mut id = |key: [i64; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push(Vec3::new(
                key[0] as f64 / n as f64 - 1.0,
                key[1] as f64 / n as f64 - 1.0,
                key[2] as f64 / n as f64 - 1.0,
            ) * 0.5);
            vertices.len() - 1
        })
    };
    for &(axis, side, ua, va) in &sides {
        let fixed = if side > 0 { 2 * n } else { 0 };
        for a in 0..2 * n {
            for b in 0..2 * n {
                let corner = |du: i64, dv: i64| {
                    let mut k = [0i64; 3];
                    k[axis] = fixed;
                    k[ua] = a + du;
                    k[va] = b + dv;
                    k
                };
                let q = [
                    id(corner(0, 0), &mut vertices),
                    id(corner(1, 0), &mut vertices),
                    id(corner(1, 1), &mut vertices),
                    id(corner(0, 1), &mut vertices),
                ];
                faces.push([q[0], q[1], q[2]]);
                faces.push([q[0], q[2], q[3]]);
            }
        }
    }
    for v in &mut vertices {
        let d = v.normalize();
        let f = (frequency * v.x * PI + phase[0]).sin()
            * (frequency * v.y * PI + phase[1]).sin()
            * (frequency * v.z * PI + phase[2]).sin();
        *v += d * (amplitude * f);
    }
    Mesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Named procedural fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    BumpySphere,
    RidgedTorus,
    DisplacedCube,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bumpy_sphere" => Ok(Preset::BumpySphere),
            "ridged_torus" => Ok(Preset::RidgedTorus),
            "displaced_cube" => Ok(Preset::DisplacedCube),
            other => Err(Error::invalid(format!(
                "unknown preset {other:?} (expected bumpy_sphere, ridged_torus or displaced_cube)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::BumpySphere => "bumpy_sphere",
            Preset::RidgedTorus => "ridged_torus",
            Preset::DisplacedCube => "displaced_cube",
        })
    }
}

/// Radius of the bumpy-sphere base surface before normalization.
pub const BUMPY_SPHERE_RADIUS: f64 = 0.8;
/// Angular frequency of the bumpy-sphere displacement pattern.
pub const BUMPY_SPHERE_FREQUENCY: f64 = 24.0;
/// Icosphere subdivision level used for the bumpy-sphere preset.
pub const BUMPY_SPHERE_SUBDIVISIONS: u32 = 5;

/// Fine mesh for a preset, before normalization.
pub fn preset_mesh(preset: Preset, amplitude: f64, seed: u64) -> Mesh {
    match preset {
        Preset::BumpySphere => bumpy_sphere(
            BUMPY_SPHERE_SUBDIVISIONS,
            amplitude,
            BUMPY_SPHERE_RADIUS,
            BUMPY_SPHERE_FREQUENCY,
            seed,
        ),
        Preset::RidgedTorus => ridged_torus(240, amplitude, 24, seed),
        Preset::DisplacedCube => displaced_cube(48, amplitude, 10.0, seed),
    }
}

/// `(coarse, fine)` pair: the fine preset normalized to radius 0.9, and its
/// Taubin-smoothed counterpart sharing the same connectivity.
pub fn synthesize(
    preset: Preset,
    amplitude: f64,
    smoothing_iterations: usize,
    seed: u64,
) -> Result<(Mesh, Mesh)> {
    if !(amplitude >= 0.0) {
        return Err(Error::invalid("detail amplitude must be non-negative"));
    }
    let raw = preset_mesh(preset, amplitude, seed);
    let (fine, _) = normalize_to_unit_sphere(&raw, crate::NORMALIZED_RADIUS)?;
    make_coarse_pair(&fine, smoothing_iterations)
}
