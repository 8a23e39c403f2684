//! Wavefront OBJ reading and writing (positions and faces only).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::Mesh;
use crate::error::{Error, Result};
use crate::Vec3;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_obj(BufReader::new(file), path)
}

/// Parses OBJ text. Polygons are fan-triangulated; texture and normal
/// references in face records are ignored, as are all other record types.
pub fn read_obj<R: BufRead>(reader: R, origin: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(lineno, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::from(coords));
            }
            Some("f") => {
                let mut polygon = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad face index {tok:?}")))?;
                    let index = match raw {
                        0 => return Err(parse_err(lineno, "face index 0 is invalid".into())),
                        r if r > 0 => (r - 1) as usize,
                        r => {
                            let back = (-r) as usize;
                            if back > vertices.len() {
                                return Err(parse_err(
                                    lineno,
                                    format!("relative index {r} before first vertex"),
                                ));
                            }
                            vertices.len() - back
                        }
                    };
                    polygon.push(index);
                }
                if polygon.len() < 3 {
                    return Err(parse_err(
                        lineno,
                        format!("face with {} indices cannot be triangulated", polygon.len()),
                    ));
                }
                for k in 1..polygon.len() - 1 {
                    faces.push([polygon[0], polygon[k], polygon[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_obj(mesh, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_obj<W: Write>(mesh: &Mesh, out: &mut W) -> Result<()> {
    for v in &mesh.vertices {
        writeln!(
            out,
            "v {} {} {}",
            significant(v.x),
            significant(v.y),
            significant(v.z)
        )?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Formats with 9 significant digits, like C's `%.9g`.
fn significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { format!("{x}") };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}
