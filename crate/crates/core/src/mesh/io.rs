//! Plain-text mesh format.
//!
//! ```text
//! trimesh 1
//! # comments and blank lines are ignored
//! v <x> <y> <z>                  one per vertex, in index order
//! f <a> <b> <c>                  0-based vertex indices
//! loop outer <v0> <v1> ...       the outer boundary cycle
//! loop obstacle <k> <v0> ...     obstacle k (0-based), one line each
//! s <value>                      optional scalar sample, one per vertex
//! ```
//!
//! Loops may be listed in either direction. The parser rejects meshes that
//! are non-manifold, inconsistently oriented, or whose Euler characteristic
//! differs from `1 - n`.

use std::fmt::Write as _;
use std::path::Path;

use super::{BoundaryLoop, LoopLabel, TriMesh, Vec3};
use crate::error::{Error, Result};

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

pub fn parse_mesh(text: &str) -> Result<TriMesh> {
    let mut header = false;
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut loops = Vec::new();
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or("");
        if !header {
            if head != "trimesh" || tok.next() != Some("1") {
                return Err(perr(ln, "expected header `trimesh 1`"));
            }
            header = true;
            continue;
        }
        match head {
            "v" => {
                let x = num(tok.next(), ln, "x")?;
                let y = num(tok.next(), ln, "y")?;
                let z = num(tok.next(), ln, "z")?;
                verts.push(Vec3::new(x, y, z));
            }
            "f" => {
                let a = num(tok.next(), ln, "vertex index")?;
                let b = num(tok.next(), ln, "vertex index")?;
                let c = num(tok.next(), ln, "vertex index")?;
                faces.push([a, b, c]);
            }
            "s" => samples.push(num::<f64>(tok.next(), ln, "sample")?),
            "loop" => {
                let label = match tok.next() {
                    Some("outer") => LoopLabel::Outer,
                    Some("obstacle") => LoopLabel::Obstacle(num(tok.next(), ln, "obstacle index")?),
                    _ => return Err(perr(ln, "loop label must be `outer` or `obstacle <k>`")),
                };
                let vertices = tok
                    .map(|t| t.parse().map_err(|_| perr(ln, "bad loop vertex")))
                    .collect::<Result<Vec<usize>>>()?;
                loops.push(BoundaryLoop { label, vertices });
            }
            other => return Err(perr(ln, format!("unknown record `{other}`"))),
        }
        if tok_rest_nonempty(head, line) {
            return Err(perr(ln, "trailing tokens"));
        }
    }
    if !header {
        return Err(perr(0, "empty mesh file"));
    }
    let samples = if samples.is_empty() {
        None
    } else {
        Some(samples)
    };
    TriMesh::new(verts, faces, loops, samples)
}

fn tok_rest_nonempty(head: &str, line: &str) -> bool {
    let n = line.split_whitespace().count();
    match head {
        "v" => n != 4,
        "f" => n != 4,
        "s" => n != 2,
        _ => false,
    }
}

pub fn write_mesh(mesh: &TriMesh) -> String {
    let mut s = String::from("trimesh 1\n");
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0], f[1], f[2]);
    }
    for l in mesh.loops() {
        match l.label {
            LoopLabel::Outer => s.push_str("loop outer"),
            LoopLabel::Obstacle(k) => {
                let _ = write!(s, "loop obstacle {k}");
            }
        }
        for v in &l.vertices {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    if let Some(samples) = mesh.samples() {
        for x in samples {
            let _ = writeln!(s, "s {x:.17e}");
        }
    }
    s
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;

    const SQUARE: &str = "trimesh 1
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 0 1 2
f 0 2 3
loop outer 0 1 2 3
";

    #[test]
    fn parses_square() {
        let m = parse_mesh(SQUARE).unwrap();
        assert_eq!(m.n_faces(), 2);
        assert_eq!(m.obstacle_count(), 0);
    }

    #[test]
    fn round_trip_annulus() {
        let m = gen::flat_annulus(0.3, 1.0, 3, 10, true);
        let back = parse_mesh(&write_mesh(&m)).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.loops(), m.loops());
    }

    #[test]
    fn rejects_wrong_euler_characteristic() {
        // two disjoint-loop labels on a disk: the loop line is not a boundary cycle
        let bad = SQUARE.replace("loop outer 0 1 2 3", "loop outer 0 1 2");
        assert!(parse_mesh(&bad).is_err());
        let nolabel = SQUARE.replace("loop outer 0 1 2 3\n", "");
        assert!(matches!(parse_mesh(&nolabel), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn reports_line_numbers() {
        let bad = SQUARE.replace("v 1 1 0", "v 1 x 0");
        match parse_mesh(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
