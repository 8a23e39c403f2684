//! Camera rig, z-buffered normal rasterizer and its adjoint.
//!
//! Conventions: the camera sits at `distance * (cos e sin a, sin e, cos e cos a)`
//! and looks at the origin with world up +Y. Camera space is right-handed
//! with x right, y up and z toward the viewer, so visible points have
//! negative z and the depth `d = -z` is positive. A camera-space point
//! projects to `(W/2 + f x / d, H/2 - f y / d)` with `f = (H/2) / tan(fov_y/2)`;
//! pixel `(i, j)` (column, row) has its centre at `(i + 0.5, j + 0.5)` and is
//! stored at `j * W + i`.
//!
//! Normals are interpolated with screen-space barycentrics and renormalized;
//! depth interpolates `1/d`. Coverage changes carry no gradient.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals_backward, Mesh};
use crate::Vec3;

pub const DEFAULT_FOV_Y: f64 = 40.0;
pub const DEFAULT_DISTANCE: f64 = 2.2;
/// Faces with a vertex closer than this to the camera plane are skipped.
const NEAR: f64 = 1e-3;
const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Degrees.
    pub azimuth: f64,
    /// Degrees, strictly between -90 and 90.
    pub elevation: f64,
    pub distance: f64,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        azimuth: f64,
        elevation: f64,
        distance: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera {
            azimuth,
            elevation,
            distance,
            fov_y,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(Error::invalid(format!("fov_y must be in (0, 180), got {}", self.fov_y)));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::invalid(format!("camera distance must be positive, got {}", self.distance)));
        }
        if !(self.elevation > -90.0 && self.elevation < 90.0) {
            return Err(Error::invalid(format!(
                "elevation must be in (-90, 90), got {}",
                self.elevation
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let (a, e) = (self.azimuth.to_radians(), self.elevation.to_radians());
        Vec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos()) * self.distance
    }

    /// World-to-camera rotation; its rows are the camera's right, up and
    /// backward axes in world coordinates.
    pub fn rotation(&self) -> Matrix3<f64> {
        let back = self.position().normalize();
        let right = Vec3::y().cross(&back).normalize();
        let up = back.cross(&right);
        Matrix3::from_rows(&[right.transpose(), up.transpose(), back.transpose()])
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * (p - self.position())
    }

    /// Screen position and depth of a camera-space point.
    pub fn project(&self, pc: &Vec3) -> (f64, f64, f64) {
        let f = self.focal();
        let d = -pc.z;
        (
            0.5 * self.width as f64 + f * pc.x / d,
            0.5 * self.height as f64 - f * pc.y / d,
            d,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// The fixed 12-view rig: eight horizontal views every 45 degrees and four
/// views elevated by 30 degrees at the diagonal azimuths.
pub fn standard_rig(width: usize, height: usize) -> Vec<Camera> {
    rig(width, height, DEFAULT_FOV_Y, DEFAULT_DISTANCE)
}

pub fn rig(width: usize, height: usize, fov_y: f64, distance: f64) -> Vec<Camera> {
    let horizontal = (0..8).map(|i| (45.0 * i as f64, 0.0));
    let elevated = [45.0, 135.0, 225.0, 315.0].into_iter().map(|a| (a, 30.0));
    horizontal
        .chain(elevated)
        .map(|(azimuth, elevation)| Camera {
            azimuth,
            elevation,
            distance,
            fov_y,
            width,
            height,
        })
        .collect()
}

/// Rendered geometry maps of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMaps {
    pub width: usize,
    pub height: usize,
    /// Camera-space unit normals; exactly zero at background.
    pub normals: Vec<Vec3>,
    /// Camera depth `-z`; `+inf` at background.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    /// Visible face per pixel (`u32::MAX` at background).
    pub face: Vec<u32>,
    /// Screen-space barycentrics of the pixel centre in the visible face.
    pub barycentrics: Vec<[f64; 3]>,
}

impl GeoMaps {
    fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        GeoMaps {
            width,
            height,
            normals: vec![Vec3::zeros(); n],
            depth: vec![f64::INFINITY; n],
            mask: vec![false; n],
            face: vec![NO_FACE; n],
            barycentrics: vec![[0.0; 3]; n],
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn normal_image(&self) -> NormalImage {
        NormalImage {
            width: self.width,
            height: self.height,
            normals: self.normals.clone(),
        }
    }
}

/// A normal map on its own (targets, noisy targets, scheduler inputs).
/// Background pixels hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalImage {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
}

impl NormalImage {
    pub fn mask(&self) -> Vec<bool> {
        self.normals.iter().map(|n| *n != Vec3::zeros()).collect()
    }

    pub fn to_raw(&self) -> RawMap {
        RawMap {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self
                .normals
                .iter()
                .flat_map(|n| [n.x as f32, n.y as f32, n.z as f32])
                .collect(),
        }
    }

    pub fn from_raw(raw: &RawMap) -> Result<Self> {
        if raw.channels != 3 {
            return Err(Error::Format {
                kind: "NMAP",
                message: format!("normal maps need 3 channels, found {}", raw.channels),
            });
        }
        Ok(NormalImage {
            width: raw.width,
            height: raw.height,
            normals: raw
                .data
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        })
    }

    /// 8-bit preview encoding `n * 0.5 + 0.5`; background stays black.
    pub fn save_preview(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (idx, n) in self.normals.iter().enumerate() {
            if *n == Vec3::zeros() {
                continue;
            }
            let enc = |c: f64| ((c * 0.5 + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(
                (idx % self.width) as u32,
                (idx / self.width) as u32,
                image::Rgb([enc(n.x), enc(n.y), enc(n.z)]),
            );
        }
        img.save(path).map_err(|e| Error::Format {
            kind: "PNG",
            message: e.to_string(),
        })
    }
}

/// Raw float map in the `NMAP` file layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub data: Vec<f32>,
}

const NMAP_MAGIC: &[u8; 4] = b"NMAP";

pub fn write_nmap(map: &RawMap, path: impl AsRef<Path>) -> Result<()> {
    if map.data.len() != map.height * map.width * map.channels {
        return Err(Error::SizeMismatch {
            what: "map payload",
            expected: map.height * map.width * map.channels,
            actual: map.data.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(NMAP_MAGIC)?;
    for v in [map.height, map.width, map.channels] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for x in &map.data {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_nmap(path: impl AsRef<Path>) -> Result<RawMap> {
    let mut input = BufReader::new(File::open(path)?);
    let bad = |m: String| Error::Format {
        kind: "NMAP",
        message: m,
    };
    let mut head = [0u8; 16];
    input
        .read_exact(&mut head)
        .map_err(|_| bad("file shorter than the header".into()))?;
    if &head[..4] != NMAP_MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    let (height, width, channels) = (word(4), word(8), word(12));
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if body.len() != expected {
        return Err(bad(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawMap {
        height,
        width,
        channels,
        data,
    })
}

/// Per-view projected vertex data.
struct Projected {
    screen: Vec<(f64, f64)>,
    depth: Vec<f64>,
    cam_normals: Vec<Vec3>,
}

fn project_mesh(mesh: &Mesh, camera: &Camera, normals: &[Vec3]) -> Projected {
    let rot = camera.rotation();
    let eye = camera.position();
    let mut screen = Vec::with_capacity(mesh.vertices.len());
    let mut depth = Vec::with_capacity(mesh.vertices.len());
    for p in &mesh.vertices {
        let (sx, sy, d) = camera.project(&(rot * (p - eye)));
        screen.push((sx, sy));
        depth.push(d);
    }
    Projected {
        screen,
        depth,
        cam_normals: normals.iter().map(|n| rot * n).collect(),
    }
}

fn cross2(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Renders normal, depth and mask maps. The mesh must carry vertex normals.
pub fn rasterize(mesh: &Mesh, camera: &Camera) -> Result<GeoMaps> {
    camera.validate()?;
    let normals = mesh.vertex_normals.as_ref().ok_or(Error::MissingNormals)?;
    if normals.len() != mesh.vertices.len() {
        return Err(Error::SizeMismatch {
            what: "vertex normals",
            expected: mesh.vertices.len(),
            actual: normals.len(),
        });
    }
    let (w, h) = (camera.width, camera.height);
    let mut maps = GeoMaps::background(w, h);
    if mesh.is_empty() {
        return Ok(maps);
    }
    let proj = project_mesh(mesh, camera, normals);
    // reciprocal depth; larger is nearer
    let mut inv_depth = vec![0.0f64; w * h];
    let mut skipped = 0usize;
    for (fi, &[a, b, c]) in mesh.faces.iter().enumerate() {
        if proj.depth[a] < NEAR || proj.depth[b] < NEAR || proj.depth[c] < NEAR {
            skipped += 1;
            continue;
        }
        let (sa, sb, sc) = (proj.screen[a], proj.screen[b], proj.screen[c]);
        let area = cross2((sb.0 - sa.0, sb.1 - sa.1), (sc.0 - sa.0, sc.1 - sa.1));
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let xmin = sa.0.min(sb.0).min(sc.0);
        let xmax = sa.0.max(sb.0).max(sc.0);
        let ymin = sa.1.min(sb.1).min(sc.1);
        let ymax = sa.1.max(sb.1).max(sc.1);
        // pixel centres i + 0.5 inside [min, max]
        let i0 = (xmin - 0.5).ceil().max(0.0);
        let i1 = (xmax - 0.5).floor().min(w as f64 - 1.0);
        let j0 = (ymin - 0.5).ceil().max(0.0);
        let j1 = (ymax - 0.5).floor().min(h as f64 - 1.0);
        if i0 > i1 || j0 > j1 {
            continue;
        }
        let inv = [1.0 / proj.depth[a], 1.0 / proj.depth[b], 1.0 / proj.depth[c]];
        for j in j0 as usize..=j1 as usize {
            let py = j as f64 + 0.5;
            for i in i0 as usize..=i1 as usize {
                let px = i as f64 + 0.5;
                let ba = cross2((sb.0 - px, sb.1 - py), (sc.0 - px, sc.1 - py)) / area;
                let bb = cross2((sc.0 - px, sc.1 - py), (sa.0 - px, sa.1 - py)) / area;
                let bc = 1.0 - ba - bb;
                if ba < 0.0 || bb < 0.0 || bc < 0.0 {
                    continue;
                }
                let z = ba * inv[0] + bb * inv[1] + bc * inv[2];
                let idx = j * w + i;
                // strict test in face order: the lower face index wins ties
                if z > inv_depth[idx] {
                    inv_depth[idx] = z;
                    maps.face[idx] = fi as u32;
                    maps.barycentrics[idx] = [ba, bb, bc];
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} faces lie behind the camera's near plane and were not drawn");
    }
    for idx in 0..w * h {
        let f = maps.face[idx];
        if f == NO_FACE {
            continue;
        }
        let [a, b, c] = mesh.faces[f as usize];
        let [ba, bb, bc] = maps.barycentrics[idx];
        let m = proj.cam_normals[a] * ba + proj.cam_normals[b] * bb + proj.cam_normals[c] * bc;
        let len = m.norm();
        maps.normals[idx] = if len > 0.0 { m / len } else { Vec3::z() };
        maps.depth[idx] = 1.0 / inv_depth[idx];
        maps.mask[idx] = true;
    }
    Ok(maps)
}

/// Adjoint of [`rasterize`] with respect to vertex positions, assuming the
/// mesh's vertex normals are the area-weighted normals of its positions.
pub fn rasterize_backward(mesh: &Mesh, camera: &Camera, pixel_grads: &[Vec3]) -> Result<Vec<Vec3>> {
    let maps = rasterize(mesh, camera)?;
    rasterize_backward_with(mesh, camera, &maps, pixel_grads)
}

/// [`rasterize_backward`] reusing maps already rendered for this mesh and camera.
pub fn rasterize_backward_with(
    mesh: &Mesh,
    camera: &Camera,
    maps: &GeoMaps,
    pixel_grads: &[Vec3],
) -> Result<Vec<Vec3>> {
    let mut out = vec![Vec3::zeros(); mesh.vertices.len()];
    let mut normal_grads = vec![Vec3::zeros(); mesh.vertices.len()];
    accumulate_backward(mesh, camera, maps, pixel_grads, &mut out, &mut normal_grads)?;
    vertex_normals_backward(&mesh.vertices, &mesh.faces, &normal_grads, &mut out);
    Ok(out)
}

/// Accumulates position gradients through projection into `pos_grads` and
/// world-space vertex-normal gradients into `normal_grads`.
pub(crate) fn accumulate_backward(
    mesh: &Mesh,
    camera: &Camera,
    maps: &GeoMaps,
    pixel_grads: &[Vec3],
    pos_grads: &mut [Vec3],
    normal_grads: &mut [Vec3],
) -> Result<()> {
    let n = camera.pixel_count();
    if pixel_grads.len() != n {
        return Err(Error::SizeMismatch {
            what: "pixel gradients",
            expected: n,
            actual: pixel_grads.len(),
        });
    }
    if maps.face.len() != n {
        return Err(Error::SizeMismatch {
            what: "rendered maps",
            expected: n,
            actual: maps.face.len(),
        });
    }
    let normals = mesh.vertex_normals.as_ref().ok_or(Error::MissingNormals)?;
    let proj = project_mesh(mesh, camera, normals);
    let mut screen_grads = vec![(0.0f64, 0.0f64); mesh.vertices.len()];
    let mut cam_normal_grads = vec![Vec3::zeros(); mesh.vertices.len()];
    for idx in 0..n {
        let f = maps.face[idx];
        let g = pixel_grads[idx];
        if f == NO_FACE || g == Vec3::zeros() {
            continue;
        }
        let tri = mesh.faces[f as usize];
        let bary = maps.barycentrics[idx];
        let m = proj.cam_normals[tri[0]] * bary[0]
            + proj.cam_normals[tri[1]] * bary[1]
            + proj.cam_normals[tri[2]] * bary[2];
        let len = m.norm();
        if len == 0.0 {
            continue;
        }
        let unit = m / len;
        let gm = (g - unit * unit.dot(&g)) / len;
        let s = tri.map(|v| proj.screen[v]);
        let area = cross2((s[1].0 - s[0].0, s[1].1 - s[0].1), (s[2].0 - s[0].0, s[2].1 - s[0].1));
        // q = sum_i (gm . n_i) grad_p b_i ; dL/ds_j = -b_j q
        let mut q = (0.0, 0.0);
        for k in 0..3 {
            let (p1, p2) = (s[(k + 1) % 3], s[(k + 2) % 3]);
            let gk = gm.dot(&proj.cam_normals[tri[k]]);
            q.0 += gk * (p1.1 - p2.1) / area;
            q.1 += gk * (p2.0 - p1.0) / area;
        }
        for k in 0..3 {
            cam_normal_grads[tri[k]] += gm * bary[k];
            screen_grads[tri[k]].0 -= bary[k] * q.0;
            screen_grads[tri[k]].1 -= bary[k] * q.1;
        }
    }
    let rot = camera.rotation();
    let rot_t = rot.transpose();
    let eye = camera.position();
    let f = camera.focal();
    for v in 0..mesh.vertices.len() {
        let (gx, gy) = screen_grads[v];
        if gx != 0.0 || gy != 0.0 {
            let pc = rot * (mesh.vertices[v] - eye);
            let d = -pc.z;
            let g_cam = Vec3::new(
                gx * f / d,
                -gy * f / d,
                (gx * pc.x - gy * pc.y) * f / (d * d),
            );
            pos_grads[v] += rot_t * g_cam;
        }
        if cam_normal_grads[v] != Vec3::zeros() {
            normal_grads[v] += rot_t * cam_normal_grads[v];
        }
    }
    Ok(())
}

/// Renders every camera in parallel; results follow camera order.
pub fn render_views(mesh: &Mesh, cameras: &[Camera]) -> Result<Vec<GeoMaps>> {
    cameras.par_iter().map(|c| rasterize(mesh, c)).collect()
}
