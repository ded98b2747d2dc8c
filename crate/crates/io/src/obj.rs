//! Wavefront OBJ reading and writing, restricted to triangle meshes.
//!
//! The writer emits nine significant digits per coordinate, enough to
//! reproduce an `f32` exactly and an `f64` to visual precision. The parser
//! accepts comments and blank lines, ignores attribute keywords it does not
//! model (normals, texture coordinates, groups), and reports malformed
//! geometry with its line number.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use weft_core::geom::Vec3;
use weft_core::mesh::{MeshError, TriMesh};

#[derive(Debug)]
pub enum ObjError {
    Io(io::Error),
    MalformedVertex { line: usize, detail: String },
    MalformedFace { line: usize, detail: String },
    QuadFace { line: usize },
    IndexOutOfRange { line: usize, index: isize, vertex_count: usize },
    Mesh(MeshError),
}

impl fmt::Display for ObjError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjError::Io(e) => write!(f, "obj io error: {e}"),
            ObjError::MalformedVertex { line, detail } => {
                write!(f, "line {line}: malformed vertex: {detail}")
            }
            ObjError::MalformedFace { line, detail } => {
                write!(f, "line {line}: malformed face: {detail}")
            }
            ObjError::QuadFace { line } => {
                write!(f, "line {line}: face has more than three corners; triangles only")
            }
            ObjError::IndexOutOfRange { line, index, vertex_count } => write!(
                f,
                "line {line}: vertex index {index} outside 1..={vertex_count}"
            ),
            ObjError::Mesh(e) => write!(f, "invalid mesh: {e}"),
        }
    }
}

impl std::error::Error for ObjError {}

impl From<io::Error> for ObjError {
    fn from(e: io::Error) -> Self {
        ObjError::Io(e)
    }
}

impl From<MeshError> for ObjError {
    fn from(e: MeshError) -> Self {
        ObjError::Mesh(e)
    }
}

pub fn format_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {:.8e} {:.8e} {:.8e}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<(), ObjError> {
    fs::write(path, format_obj(mesh))?;
    Ok(())
}

pub fn parse_obj(text: &str) -> Result<TriMesh, ObjError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let keyword = tokens.next().unwrap();
        match keyword {
            "v" => {
                let rest: Vec<&str> = tokens.collect();
                if rest.len() != 3 {
                    return Err(ObjError::MalformedVertex {
                        line,
                        detail: format!("expected 3 coordinates, got {}", rest.len()),
                    });
                }
                let mut coords = [0.0f64; 3];
                for (slot, tok) in coords.iter_mut().zip(&rest) {
                    *slot = tok.parse().map_err(|_| ObjError::MalformedVertex {
                        line,
                        detail: format!("cannot parse coordinate `{tok}`"),
                    })?;
                }
                vertices.push(Vec3::from_array(coords));
            }
            "f" => {
                let rest: Vec<&str> = tokens.collect();
                if rest.len() > 3 {
                    return Err(ObjError::QuadFace { line });
                }
                if rest.len() < 3 {
                    return Err(ObjError::MalformedFace {
                        line,
                        detail: format!("expected 3 corners, got {}", rest.len()),
                    });
                }
                let mut corners = [0usize; 3];
                for (slot, tok) in corners.iter_mut().zip(&rest) {
                    // Corner tokens may carry /texture/normal suffixes; the
                    // leading vertex index is all this mesh model keeps.
                    let index_part = tok.split('/').next().unwrap();
                    let index: isize =
                        index_part.parse().map_err(|_| ObjError::MalformedFace {
                            line,
                            detail: format!("cannot parse vertex index `{tok}`"),
                        })?;
                    if index < 1 || index as usize > vertices.len() {
                        return Err(ObjError::IndexOutOfRange {
                            line,
                            index,
                            vertex_count: vertices.len(),
                        });
                    }
                    *slot = index as usize - 1;
                }
                faces.push(corners);
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces)?)
}

pub fn read_obj(path: &Path) -> Result<TriMesh, ObjError> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text)
}
