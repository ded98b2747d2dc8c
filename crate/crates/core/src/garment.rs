//! Garment authoring: procedural tube templates around the stand-in body,
//! piecewise-linear width shaping, length and style cuts, tightness-driven
//! resizing against the body's shape space, and waist sewing.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;

use crate::body::{BodyError, BodyModel, Gender};
use crate::geom::Vec3;
use crate::mesh::{compact_faces, smooth_vertex_field, MeshError, SpatialIndex, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarmentKind {
    TShirt,
    Top,
    Trousers,
    Skirt,
}

impl GarmentKind {
    pub fn name(self) -> &'static str {
        match self {
            GarmentKind::TShirt => "t-shirt",
            GarmentKind::Top => "top",
            GarmentKind::Trousers => "trousers",
            GarmentKind::Skirt => "skirt",
        }
    }

    pub fn is_upper(self) -> bool {
        matches!(self, GarmentKind::TShirt | GarmentKind::Top)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GarmentError {
    ConstraintViolated { constraint: &'static str, value: f64 },
    WidthOutOfRange { x: f64, width: f64 },
    UnknownRegion { name: String },
    CutRemovesEverything,
    NoFacesListed,
    SewTooFar { distance: f64 },
    SewCountRatio { ratio: f64 },
    SewKindInvalid { upper: GarmentKind, lower: GarmentKind },
    SewSelf,
    Mesh(MeshError),
    Body(BodyError),
}

impl core::fmt::Display for GarmentError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GarmentError::ConstraintViolated { constraint, value } => {
                write!(f, "shaping constraint `{constraint}` violated by value {value}")
            }
            GarmentError::WidthOutOfRange { x, width } => {
                write!(f, "width {width} at coordinate {x} falls outside [0.05, 0.6]")
            }
            GarmentError::UnknownRegion { name } => write!(f, "garment has no region `{name}`"),
            GarmentError::CutRemovesEverything => write!(f, "cut would remove the entire garment"),
            GarmentError::NoFacesListed => write!(f, "style cut lists no faces"),
            GarmentError::SewTooFar { distance } => {
                write!(f, "rings are {distance:.4} m apart on average, over the 0.05 m limit")
            }
            GarmentError::SewCountRatio { ratio } => {
                write!(f, "ring vertex counts differ by a factor {ratio:.2}, over the 3x limit")
            }
            GarmentError::SewKindInvalid { upper, lower } => {
                write!(
                    f,
                    "cannot sew {} above {}; needs an upper-body over a lower-body garment",
                    upper.name(),
                    lower.name()
                )
            }
            GarmentError::SewSelf => write!(f, "cannot sew a garment to itself"),
            GarmentError::Mesh(e) => write!(f, "{e}"),
            GarmentError::Body(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GarmentError {}

impl From<MeshError> for GarmentError {
    fn from(e: MeshError) -> Self {
        GarmentError::Mesh(e)
    }
}

impl From<BodyError> for GarmentError {
    fn from(e: BodyError) -> Self {
        GarmentError::Body(e)
    }
}

/// Piecewise-linear width profile along a region axis:
/// `W(x) = alpha1 * x + alpha2 * max(0, x - x_offset) + base_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub x_offset: f64,
    pub base_width: f64,
}

pub fn shape_width(p: &ShapeParams, x: f64) -> f64 {
    p.alpha1 * x + p.alpha2 * (x - p.x_offset).max(0.0) + p.base_width
}

pub const WIDTH_MIN: f64 = 0.05;
pub const WIDTH_MAX: f64 = 0.6;

/// One cross-section of a tube region: its axis point, normalized
/// arc-length coordinate, and member vertices in angular order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRing {
    pub center: Vec3,
    pub x: f64,
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub rings: Vec<RegionRing>,
}

impl Region {
    pub fn vertex_ids(&self) -> Vec<usize> {
        self.rings.iter().flat_map(|r| r.vertices.iter().copied()).collect()
    }
}

/// A garment before simulation: open tube pieces with per-region axis
/// coordinates (arc length from the shoulder or hip end, normalized to
/// [0, 1]) and the ordered boundary loops.
#[derive(Debug, Clone, PartialEq)]
pub struct GarmentTemplate {
    pub mesh: TriMesh,
    pub kind: GarmentKind,
    pub regions: Vec<Region>,
    pub boundary_rings: Vec<Vec<usize>>,
}

impl GarmentTemplate {
    pub fn region(&self, name: &str) -> Result<&Region, GarmentError> {
        self.regions
            .iter()
            .find(|r| r.name == name)
            .ok_or(GarmentError::UnknownRegion { name: String::from(name) })
    }
}

/// Open tube (no caps) used as a garment piece. Ring 0 is the garment's
/// root end; x runs 0 to 1 along the accumulated center arc length.
pub fn tube_garment_piece(
    name: &str,
    centers: &[Vec3],
    radii: &[(f64, f64)],
    ring_size: usize,
    u: Vec3,
    v: Vec3,
    vertex_offset: usize,
) -> (Vec<Vec3>, Vec<[usize; 3]>, Region) {
    let rings = centers.len();
    let mut vertices = Vec::new();
    let mut ring_ids: Vec<Vec<usize>> = Vec::new();
    for r in 0..rings {
        let mut ids = Vec::with_capacity(ring_size);
        for k in 0..ring_size {
            let angle = core::f64::consts::TAU * k as f64 / ring_size as f64;
            let (ru, rv) = radii[r];
            let p = centers[r] + u * (ru * angle.cos()) + v * (rv * angle.sin());
            ids.push(vertex_offset + vertices.len());
            vertices.push(p);
        }
        ring_ids.push(ids);
    }
    let mut faces = Vec::new();
    for r in 0..rings - 1 {
        for k in 0..ring_size {
            let k1 = (k + 1) % ring_size;
            let a = ring_ids[r][k];
            let b = ring_ids[r][k1];
            let c = ring_ids[r + 1][k1];
            let d = ring_ids[r + 1][k];
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let mut arc = vec![0.0; rings];
    for r in 1..rings {
        arc[r] = arc[r - 1] + (centers[r] - centers[r - 1]).norm();
    }
    let total = arc[rings - 1].max(1e-12);
    let region = Region {
        name: String::from(name),
        rings: (0..rings)
            .map(|r| RegionRing {
                center: centers[r],
                x: arc[r] / total,
                vertices: ring_ids[r].clone(),
            })
            .collect(),
    };
    (vertices, faces, region)
}

fn assemble(kind: GarmentKind, pieces: Vec<(Vec<Vec3>, Vec<[usize; 3]>, Region)>) -> GarmentTemplate {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut regions = Vec::new();
    for (v, f, r) in pieces {
        vertices.extend(v);
        faces.extend(f);
        regions.push(r);
    }
    let mesh = TriMesh::new(vertices, faces).expect("template construction");
    let boundary_rings = mesh.boundary_loops().expect("template boundary");
    GarmentTemplate { mesh, kind, regions, boundary_rings }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

const X_AXIS: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
const Y_AXIS: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
const Z_AXIS: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

/// Body tube plus two sleeves; shoulder end is x = 0 everywhere.
pub fn tshirt_template() -> GarmentTemplate {
    let torso_y = linspace(1.40, 1.02, 10);
    let torso_centers: Vec<Vec3> = torso_y.iter().map(|&y| Vec3::new(0.0, y, 0.0)).collect();
    let torso_radii: Vec<(f64, f64)> = (0..10).map(|_| (0.19, 0.13)).collect();
    let torso = tube_garment_piece("torso", &torso_centers, &torso_radii, 16, X_AXIS, Z_AXIS, 0);

    let mut pieces = vec![torso];
    for (side, name) in [(1.0f64, "l_sleeve"), (-1.0, "r_sleeve")] {
        let xs = linspace(0.21, 0.48, 6);
        let centers: Vec<Vec3> = xs.iter().map(|&x| Vec3::new(side * x, 1.36, 0.0)).collect();
        let radii: Vec<(f64, f64)> = (0..6).map(|_| (0.065, 0.065)).collect();
        let offset: usize = pieces.iter().map(|p| p.0.len()).sum();
        pieces.push(tube_garment_piece(name, &centers, &radii, 10, Y_AXIS, Z_AXIS, offset));
    }
    assemble(GarmentKind::TShirt, pieces)
}

/// Sleeveless body tube ending just above the waist.
pub fn top_template() -> GarmentTemplate {
    let ys = linspace(1.40, 1.04, 9);
    let centers: Vec<Vec3> = ys.iter().map(|&y| Vec3::new(0.0, y, 0.0)).collect();
    let radii: Vec<(f64, f64)> = (0..9).map(|_| (0.185, 0.125)).collect();
    let torso = tube_garment_piece("torso", &centers, &radii, 16, X_AXIS, Z_AXIS, 0);
    assemble(GarmentKind::Top, vec![torso])
}

/// Hip tube plus two leg tubes; hip end is x = 0.
pub fn trousers_template() -> GarmentTemplate {
    let hip_y = linspace(1.00, 0.80, 5);
    let hip_centers: Vec<Vec3> = hip_y.iter().map(|&y| Vec3::new(0.0, y, 0.0)).collect();
    let hip_radii: Vec<(f64, f64)> = (0..5).map(|i| (0.18 - 0.004 * i as f64, 0.125)).collect();
    let hips = tube_garment_piece("hips", &hip_centers, &hip_radii, 16, X_AXIS, Z_AXIS, 0);

    let mut pieces = vec![hips];
    for (side, name) in [(1.0f64, "l_leg"), (-1.0, "r_leg")] {
        let ys = linspace(0.78, 0.18, 9);
        let xs = linspace(0.092, 0.112, 9);
        let centers: Vec<Vec3> = ys
            .iter()
            .zip(xs.iter())
            .map(|(&y, &x)| Vec3::new(side * x, y, 0.0))
            .collect();
        let radii: Vec<(f64, f64)> = (0..9).map(|i| (0.085 - 0.002 * i as f64, 0.085 - 0.002 * i as f64)).collect();
        let offset: usize = pieces.iter().map(|p| p.0.len()).sum();
        pieces.push(tube_garment_piece(name, &centers, &radii, 10, X_AXIS, Z_AXIS, offset));
    }
    assemble(GarmentKind::Trousers, pieces)
}

/// Single open cone from the waist down.
pub fn skirt_template() -> GarmentTemplate {
    let ys = linspace(1.00, 0.45, 10);
    let centers: Vec<Vec3> = ys.iter().map(|&y| Vec3::new(0.0, y, 0.0)).collect();
    let radii: Vec<(f64, f64)> = (0..10).map(|_| (0.17, 0.13)).collect();
    let cone = tube_garment_piece("skirt", &centers, &radii, 18, X_AXIS, Z_AXIS, 0);
    assemble(GarmentKind::Skirt, vec![cone])
}

pub fn template_for(kind: GarmentKind) -> GarmentTemplate {
    match kind {
        GarmentKind::TShirt => tshirt_template(),
        GarmentKind::Top => top_template(),
        GarmentKind::Trousers => trousers_template(),
        GarmentKind::Skirt => skirt_template(),
    }
}

fn check_shape_constraints(kind: GarmentKind, p: &ShapeParams) -> Result<(), GarmentError> {
    match kind {
        GarmentKind::TShirt | GarmentKind::Top | GarmentKind::Trousers => {
            if p.alpha1 >= 0.0 {
                return Err(GarmentError::ConstraintViolated {
                    constraint: "alpha1 < 0",
                    value: p.alpha1,
                });
            }
            if p.alpha2 <= 0.0 {
                return Err(GarmentError::ConstraintViolated {
                    constraint: "alpha2 > 0",
                    value: p.alpha2,
                });
            }
        }
        GarmentKind::Skirt => {
            if p.alpha1 <= 0.0 {
                return Err(GarmentError::ConstraintViolated {
                    constraint: "alpha1 > 0",
                    value: p.alpha1,
                });
            }
            if p.alpha2 != 0.0 {
                return Err(GarmentError::ConstraintViolated {
                    constraint: "alpha2 == 0",
                    value: p.alpha2,
                });
            }
        }
    }
    Ok(())
}

/// Scale each ring of `region` radially about its center so the ring's
/// mean radius equals the width profile at its axis coordinate. Vertices
/// outside the region are untouched.
pub fn apply_shaping(
    garment: &mut GarmentTemplate,
    region_name: &str,
    params: &ShapeParams,
) -> Result<(), GarmentError> {
    check_shape_constraints(garment.kind, params)?;
    let region = garment.region(region_name)?.clone();
    for ring in &region.rings {
        let w = shape_width(params, ring.x);
        if !(WIDTH_MIN..=WIDTH_MAX).contains(&w) {
            return Err(GarmentError::WidthOutOfRange { x: ring.x, width: w });
        }
    }
    for ring in &region.rings {
        let w = shape_width(params, ring.x);
        let mut mean_r = 0.0;
        for &vi in &ring.vertices {
            mean_r += (garment.mesh.vertices[vi] - ring.center).norm();
        }
        mean_r /= ring.vertices.len() as f64;
        if mean_r < 1e-12 {
            continue;
        }
        let s = w / mean_r;
        for &vi in &ring.vertices {
            let radial = garment.mesh.vertices[vi] - ring.center;
            garment.mesh.vertices[vi] = ring.center + radial * s;
        }
    }
    Ok(())
}

fn rebuild_after_face_removal(
    garment: &GarmentTemplate,
    kept_faces: Vec<[usize; 3]>,
) -> Result<GarmentTemplate, GarmentError> {
    if kept_faces.is_empty() {
        return Err(GarmentError::CutRemovesEverything);
    }
    let (vertices, faces, remap) = compact_faces(&garment.mesh.vertices, &kept_faces);
    let mesh = TriMesh::new(vertices, faces)?;
    let regions = garment
        .regions
        .iter()
        .map(|region| Region {
            name: region.name.clone(),
            rings: region
                .rings
                .iter()
                .filter_map(|ring| {
                    let vertices: Vec<usize> =
                        ring.vertices.iter().filter_map(|&v| remap[v]).collect();
                    if vertices.is_empty() {
                        None
                    } else {
                        Some(RegionRing { center: ring.center, x: ring.x, vertices })
                    }
                })
                .collect(),
        })
        .filter(|r| !r.rings.is_empty())
        .collect();
    let boundary_rings = mesh.boundary_loops()?;
    Ok(GarmentTemplate { mesh, kind: garment.kind, regions, boundary_rings })
}

/// Shorten a region: remove every face whose three vertices all lie past
/// `x_max` along the region axis. Faces touching other regions survive.
pub fn cut_region(
    garment: &GarmentTemplate,
    region_name: &str,
    x_max: f64,
) -> Result<GarmentTemplate, GarmentError> {
    let region = garment.region(region_name)?;
    let mut coord: Vec<Option<f64>> = vec![None; garment.mesh.vertex_count()];
    for ring in &region.rings {
        for &vi in &ring.vertices {
            coord[vi] = Some(ring.x);
        }
    }
    let kept: Vec<[usize; 3]> = garment
        .mesh
        .faces
        .iter()
        .copied()
        .filter(|f| {
            !f.iter().all(|&v| match coord[v] {
                Some(x) => x > x_max,
                None => false,
            })
        })
        .collect();
    rebuild_after_face_removal(garment, kept)
}

/// Style cut: remove an explicit strip of face indices.
pub fn remove_face_strip(
    garment: &GarmentTemplate,
    face_ids: &[usize],
) -> Result<GarmentTemplate, GarmentError> {
    if face_ids.is_empty() {
        return Err(GarmentError::NoFacesListed);
    }
    let drop: alloc::collections::BTreeSet<usize> = face_ids.iter().copied().collect();
    let kept: Vec<[usize; 3]> = garment
        .mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(fi, _)| !drop.contains(fi))
        .map(|(_, f)| *f)
        .collect();
    rebuild_after_face_removal(garment, kept)
}

fn quad_face_ids(mesh: &TriMesh, quad: [usize; 4]) -> Vec<usize> {
    let set: alloc::collections::BTreeSet<usize> = quad.iter().copied().collect();
    mesh.faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.iter().all(|v| set.contains(v)))
        .map(|(fi, _)| fi)
        .collect()
}

/// Open the garment front: two parallel interior slits flanking the
/// front center line of the first region, adding two boundary rings.
pub fn open_front(garment: &GarmentTemplate) -> Result<GarmentTemplate, GarmentError> {
    let region = garment
        .regions
        .first()
        .ok_or(GarmentError::UnknownRegion { name: String::from("front") })?;
    if region.rings.len() < 4 {
        return Err(GarmentError::CutRemovesEverything);
    }
    // Front = largest z in the second ring; slits sit one slot to each side.
    let ring1 = &region.rings[1];
    let n = ring1.vertices.len();
    let front_slot = (0..n)
        .max_by(|&a, &b| {
            let za = garment.mesh.vertices[ring1.vertices[a]].z;
            let zb = garment.mesh.vertices[ring1.vertices[b]].z;
            za.partial_cmp(&zb).unwrap()
        })
        .unwrap();
    let mut strip = Vec::new();
    for slit_slot in [(front_slot + n - 1) % n, (front_slot + 1) % n] {
        for r in 1..region.rings.len() - 2 {
            let ra = &region.rings[r].vertices;
            let rb = &region.rings[r + 1].vertices;
            if ra.len() != n || rb.len() != n {
                continue;
            }
            let k1 = (slit_slot + 1) % n;
            strip.extend(quad_face_ids(
                &garment.mesh,
                [ra[slit_slot], ra[k1], rb[k1], rb[slit_slot]],
            ));
        }
    }
    remove_face_strip(garment, &strip)
}

/// Refit a garment from the template body to `beta` plus the tightness
/// offsets (first offset gender-signed). Each garment vertex takes the
/// shape displacement of its nearest body vertex; the displacement field
/// is neighborhood-smoothed before application.
pub fn resize(
    garment: &mut GarmentTemplate,
    model: &BodyModel,
    beta: &[f64],
    gamma: [f64; 2],
    gender: Gender,
    iterations: usize,
) -> Result<(), GarmentError> {
    let mut target = beta.to_vec();
    if !target.is_empty() {
        target[0] += gamma[0] * gender.first_offset_sign();
    }
    if target.len() > 1 {
        target[1] += gamma[1];
    }
    let body_disp = model.shape_displacement(&target)?;
    let cell = model.template.mean_edge_length();
    let index = SpatialIndex::from_points(model.template.vertices.clone(), cell)?;
    let field: Vec<Vec3> = garment
        .mesh
        .vertices
        .iter()
        .map(|&p| body_disp[index.nearest(p).0])
        .collect();
    let all: Vec<usize> = (0..garment.mesh.vertex_count()).collect();
    let smoothed = smooth_vertex_field(&garment.mesh, &field, &all, iterations)?;
    for (v, d) in garment.mesh.vertices.iter_mut().zip(smoothed.iter()) {
        *v += *d;
    }
    Ok(())
}

pub const RESIZE_SMOOTH_ITERATIONS: usize = 20;
pub const SEW_MAX_MEAN_DISTANCE: f64 = 0.05;
pub const SEW_MAX_COUNT_RATIO: f64 = 3.0;

/// Two garments joined at the waist. Seam faces are appended after the
/// upper and lower face blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Outfit {
    pub mesh: TriMesh,
    pub upper_kind: GarmentKind,
    pub lower_kind: GarmentKind,
    pub upper_vertex_count: usize,
    pub seam_face_start: usize,
}

fn ring_centroid(mesh: &TriMesh, ring: &[usize]) -> Vec3 {
    let mut c = Vec3::ZERO;
    for &v in ring {
        c += mesh.vertices[v];
    }
    c / ring.len() as f64
}

fn angular_order(mesh: &TriMesh, ring: &[usize], axis: Vec3) -> Vec<usize> {
    let c = ring_centroid(mesh, ring);
    let a = if axis.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = axis.cross(a).try_normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
    let v = axis.cross(u);
    let mut order: Vec<usize> = ring.to_vec();
    order.sort_by(|&p, &q| {
        let dp = mesh.vertices[p] - c;
        let dq = mesh.vertices[q] - c;
        let ap = f64::atan2(dp.dot(v), dp.dot(u));
        let aq = f64::atan2(dq.dot(v), dq.dot(u));
        ap.partial_cmp(&aq).unwrap().then(p.cmp(&q))
    });
    order
}

/// Join an upper garment's hem to a lower garment's waist: the closest
/// boundary-ring pair is matched vertex-by-vertex in angular order and
/// bridged with a watertight triangle strip.
pub fn sew(upper: &GarmentTemplate, lower: &GarmentTemplate) -> Result<Outfit, GarmentError> {
    if core::ptr::eq(upper, lower) {
        return Err(GarmentError::SewSelf);
    }
    if !upper.kind.is_upper() || lower.kind.is_upper() {
        return Err(GarmentError::SewKindInvalid { upper: upper.kind, lower: lower.kind });
    }
    // Closest boundary-ring pair by centroid.
    let mut best: Option<(usize, usize, f64)> = None;
    for (iu, ru) in upper.boundary_rings.iter().enumerate() {
        let cu = ring_centroid(&upper.mesh, ru);
        for (il, rl) in lower.boundary_rings.iter().enumerate() {
            let cl = ring_centroid(&lower.mesh, rl);
            let d = (cu - cl).norm();
            if best.map(|(_, _, bd)| d < bd).unwrap_or(true) {
                best = Some((iu, il, d));
            }
        }
    }
    let (iu, il, _) = best.ok_or(GarmentError::SewTooFar { distance: f64::INFINITY })?;
    let ring_u = &upper.boundary_rings[iu];
    let ring_l = &lower.boundary_rings[il];

    let nu = ring_u.len();
    let nl = ring_l.len();
    let ratio = nu.max(nl) as f64 / nu.min(nl) as f64;
    if ratio > SEW_MAX_COUNT_RATIO {
        return Err(GarmentError::SewCountRatio { ratio });
    }

    // Mean nearest-vertex distance between the rings.
    let mut mean = 0.0;
    for &vu in ring_u {
        let pu = upper.mesh.vertices[vu];
        let d = ring_l
            .iter()
            .map(|&vl| (pu - lower.mesh.vertices[vl]).norm())
            .fold(f64::INFINITY, f64::min);
        mean += d;
    }
    mean /= nu as f64;
    if mean > SEW_MAX_MEAN_DISTANCE {
        return Err(GarmentError::SewTooFar { distance: mean });
    }

    let cu = ring_centroid(&upper.mesh, ring_u);
    let cl = ring_centroid(&lower.mesh, ring_l);
    let axis = (cu - cl).try_normalized().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
    let su = angular_order(&upper.mesh, ring_u, axis);
    let sl_raw = angular_order(&lower.mesh, ring_l, axis);

    // Phase-align the lower ring to the first upper vertex.
    let p0 = upper.mesh.vertices[su[0]];
    let start = (0..nl)
        .min_by(|&a, &b| {
            let da = (lower.mesh.vertices[sl_raw[a]] - p0).norm();
            let db = (lower.mesh.vertices[sl_raw[b]] - p0).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let sl: Vec<usize> = (0..nl).map(|k| sl_raw[(start + k) % nl]).collect();

    // Merge meshes; lower indices shift by the upper vertex count.
    let offset = upper.mesh.vertex_count();
    let mut vertices = upper.mesh.vertices.clone();
    vertices.extend(lower.mesh.vertices.iter().copied());
    let mut faces = upper.mesh.faces.clone();
    faces.extend(lower.mesh.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
    let seam_face_start = faces.len();

    // Zipper stitch: advance whichever ring lags in normalized progress.
    let (mut i, mut j) = (0usize, 0usize);
    while i < nu || j < nl {
        let tu = (i + 1) as f64 / nu as f64;
        let tl = (j + 1) as f64 / nl as f64;
        if j >= nl || (i < nu && tu <= tl) {
            faces.push([su[i], su[(i + 1) % nu], sl[j % nl] + offset]);
            i += 1;
        } else {
            faces.push([su[i % nu], sl[(j + 1) % nl] + offset, sl[j] + offset]);
            j += 1;
        }
    }

    let mesh = TriMesh::new(vertices, faces)?;
    Ok(Outfit {
        mesh,
        upper_kind: upper.kind,
        lower_kind: lower.kind,
        upper_vertex_count: offset,
        seam_face_start,
    })
}

/// Sampling ranges and probabilities for outfit generation. Parsed from
/// plain-text configuration by the companion crate.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub torso_alpha1: (f64, f64),
    pub torso_alpha2: (f64, f64),
    pub limb_alpha1: (f64, f64),
    pub limb_alpha2: (f64, f64),
    pub skirt_alpha1: (f64, f64),
    pub x_offset: (f64, f64),
    pub cut_probability: f64,
    pub open_front_probability: f64,
    pub sew_probability: f64,
    pub tightness: (f64, f64),
    pub elastic_probability: f64,
    pub upper_fabrics: Vec<String>,
    pub lower_fabrics: Vec<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            torso_alpha1: (-0.08, -0.01),
            torso_alpha2: (0.02, 0.12),
            limb_alpha1: (-0.012, -0.002),
            limb_alpha2: (0.002, 0.015),
            skirt_alpha1: (0.05, 0.35),
            x_offset: (0.3, 0.7),
            cut_probability: 0.3,
            open_front_probability: 0.2,
            sew_probability: 0.3,
            tightness: (-1.5, 0.5),
            elastic_probability: 0.5,
            upper_fabrics: vec![String::from("cotton"), String::from("silk")],
            lower_fabrics: vec![
                String::from("cotton"),
                String::from("leather"),
                String::from("silk"),
                String::from("denim"),
            ],
        }
    }
}

/// One sampled outfit: shaped, cut and resized garment pieces plus the
/// simulation-facing choices (fabrics, tightness, elastic waist).
#[derive(Debug, Clone)]
pub struct OutfitSample {
    pub upper: Option<GarmentTemplate>,
    pub lower: GarmentTemplate,
    pub sewn: Option<Outfit>,
    pub gender: Gender,
    pub tightness: [f64; 2],
    pub elastic_waist: bool,
    pub upper_fabric: String,
    pub lower_fabric: String,
    pub log: Vec<String>,
}

fn sample_range(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Draw an outfit: kinds, width profiles, optional cuts and open front,
/// tightness, fabrics; shapes and resizes every piece around the body.
/// Fully determined by the RNG state.
pub fn sample_outfit(
    model: &BodyModel,
    config: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<OutfitSample, GarmentError> {
    let mut log: Vec<String> = Vec::new();
    let gender = if rng.gen_bool(0.5) { Gender::Female } else { Gender::Male };
    log.push(alloc::format!("gender={:?}", gender));

    let upper_kind = if rng.gen_bool(0.5) { GarmentKind::TShirt } else { GarmentKind::Top };
    let lower_kind = if rng.gen_bool(0.5) { GarmentKind::Trousers } else { GarmentKind::Skirt };
    log.push(alloc::format!("upper={} lower={}", upper_kind.name(), lower_kind.name()));

    let tightness = [
        sample_range(rng, config.tightness),
        sample_range(rng, config.tightness),
    ];
    log.push(alloc::format!("tightness=({:.4},{:.4})", tightness[0], tightness[1]));

    let shape_upper_torso = ShapeParams {
        alpha1: sample_range(rng, config.torso_alpha1),
        alpha2: sample_range(rng, config.torso_alpha2),
        x_offset: sample_range(rng, config.x_offset),
        base_width: 0.19,
    };
    let shape_limb = ShapeParams {
        alpha1: sample_range(rng, config.limb_alpha1),
        alpha2: sample_range(rng, config.limb_alpha2),
        x_offset: sample_range(rng, config.x_offset),
        base_width: 0.0,
    };

    let mut upper = template_for(upper_kind);
    apply_shaping(
        &mut upper,
        "torso",
        &ShapeParams { base_width: 0.19, ..shape_upper_torso },
    )?;
    if upper_kind == GarmentKind::TShirt {
        for sleeve in ["l_sleeve", "r_sleeve"] {
            apply_shaping(&mut upper, sleeve, &ShapeParams { base_width: 0.065, ..shape_limb })?;
        }
    }
    if rng.gen_bool(config.cut_probability) {
        let x_max = rng.gen_range(0.55..0.95);
        upper = cut_region(&upper, "torso", x_max)?;
        log.push(alloc::format!("cut upper torso at {:.3}", x_max));
    }
    if rng.gen_bool(config.open_front_probability) {
        upper = open_front(&upper)?;
        log.push(String::from("open front"));
    }

    let mut lower = template_for(lower_kind);
    match lower_kind {
        GarmentKind::Trousers => {
            apply_shaping(
                &mut lower,
                "hips",
                &ShapeParams { base_width: 0.18, ..shape_upper_torso },
            )?;
            for leg in ["l_leg", "r_leg"] {
                apply_shaping(&mut lower, leg, &ShapeParams { base_width: 0.085, ..shape_limb })?;
            }
            if rng.gen_bool(config.cut_probability) {
                let x_max = rng.gen_range(0.4..0.9);
                lower = cut_region(&lower, "l_leg", x_max)?;
                lower = cut_region(&lower, "r_leg", x_max)?;
                log.push(alloc::format!("cut legs at {:.3}", x_max));
            }
        }
        GarmentKind::Skirt => {
            let skirt_shape = ShapeParams {
                alpha1: sample_range(rng, config.skirt_alpha1),
                alpha2: 0.0,
                x_offset: 0.0,
                base_width: 0.17,
            };
            apply_shaping(&mut lower, "skirt", &skirt_shape)?;
            if rng.gen_bool(config.cut_probability) {
                let x_max = rng.gen_range(0.5..0.9);
                lower = cut_region(&lower, "skirt", x_max)?;
                log.push(alloc::format!("cut skirt at {:.3}", x_max));
            }
        }
        _ => unreachable!(),
    }

    resize(&mut upper, model, &vec![0.0; model.shape_count()], tightness, gender, RESIZE_SMOOTH_ITERATIONS)?;
    resize(&mut lower, model, &vec![0.0; model.shape_count()], tightness, gender, RESIZE_SMOOTH_ITERATIONS)?;

    let sewn = if rng.gen_bool(config.sew_probability) {
        match sew(&upper, &lower) {
            Ok(outfit) => {
                log.push(String::from("sewn at waist"));
                Some(outfit)
            }
            Err(e) => {
                log.push(alloc::format!("sew skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    let elastic_waist = rng.gen_bool(config.elastic_probability);
    let upper_fabric = config.upper_fabrics
        [rng.gen_range(0..config.upper_fabrics.len())]
    .clone();
    let lower_fabric = config.lower_fabrics
        [rng.gen_range(0..config.lower_fabrics.len())]
    .clone();
    log.push(alloc::format!(
        "fabric upper={} lower={} elastic={}",
        upper_fabric,
        lower_fabric,
        elastic_waist
    ));

    Ok(OutfitSample {
        upper: Some(upper),
        lower,
        sewn,
        gender,
        tightness,
        elastic_waist,
        upper_fabric,
        lower_fabric,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::stand_in_body;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn width_profile_matches_hand_computation() {
        let p = ShapeParams { alpha1: -0.1, alpha2: 0.3, x_offset: 0.5, base_width: 0.2 };
        let w = shape_width(&p, 0.8);
        assert!((w - 0.21).abs() < 1e-12, "got {w}");
        assert!((shape_width(&p, 0.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn width_profile_is_continuous_at_the_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let p = ShapeParams {
                alpha1: rng.gen_range(-0.5..0.5),
                alpha2: rng.gen_range(-0.5..0.5),
                x_offset: rng.gen_range(0.1..0.9),
                base_width: rng.gen_range(0.05..0.6),
            };
            let eps = 1e-13;
            let below = shape_width(&p, p.x_offset - eps);
            let above = shape_width(&p, p.x_offset + eps);
            assert!((below - above).abs() < 1e-12);
        }
    }

    #[test]
    fn shaping_hits_target_width_and_spares_other_regions() {
        let mut g = tshirt_template();
        let sleeves_before: Vec<Vec3> = g
            .region("l_sleeve")
            .unwrap()
            .vertex_ids()
            .iter()
            .map(|&v| g.mesh.vertices[v])
            .collect();
        let p = ShapeParams { alpha1: -0.05, alpha2: 0.08, x_offset: 0.4, base_width: 0.2 };
        apply_shaping(&mut g, "torso", &p).unwrap();
        for ring in &g.region("torso").unwrap().rings {
            let mut mean_r = 0.0;
            for &vi in &ring.vertices {
                mean_r += (g.mesh.vertices[vi] - ring.center).norm();
            }
            mean_r /= ring.vertices.len() as f64;
            let target = shape_width(&p, ring.x);
            assert!((mean_r - target).abs() < 1e-9, "ring at x={}: {mean_r} vs {target}", ring.x);
        }
        let sleeves_after: Vec<Vec3> = g
            .region("l_sleeve")
            .unwrap()
            .vertex_ids()
            .iter()
            .map(|&v| g.mesh.vertices[v])
            .collect();
        assert_eq!(sleeves_before, sleeves_after);
    }

    #[test]
    fn shaping_constraints_are_enforced_by_kind() {
        let mut shirt = tshirt_template();
        let bad = ShapeParams { alpha1: 0.1, alpha2: 0.2, x_offset: 0.5, base_width: 0.2 };
        match apply_shaping(&mut shirt, "torso", &bad) {
            Err(GarmentError::ConstraintViolated { constraint, value }) => {
                assert_eq!(constraint, "alpha1 < 0");
                assert_eq!(value, 0.1);
            }
            other => panic!("expected constraint error, got {other:?}"),
        }
        let bad2 = ShapeParams { alpha1: -0.1, alpha2: -0.2, x_offset: 0.5, base_width: 0.2 };
        match apply_shaping(&mut shirt, "torso", &bad2) {
            Err(GarmentError::ConstraintViolated { constraint, .. }) => {
                assert_eq!(constraint, "alpha2 > 0");
            }
            other => panic!("expected constraint error, got {other:?}"),
        }
        let mut skirt = skirt_template();
        let bad3 = ShapeParams { alpha1: 0.2, alpha2: 0.1, x_offset: 0.5, base_width: 0.2 };
        match apply_shaping(&mut skirt, "skirt", &bad3) {
            Err(GarmentError::ConstraintViolated { constraint, .. }) => {
                assert_eq!(constraint, "alpha2 == 0");
            }
            other => panic!("expected constraint error, got {other:?}"),
        }
        let bad4 = ShapeParams { alpha1: -0.2, alpha2: 0.0, x_offset: 0.5, base_width: 0.2 };
        match apply_shaping(&mut skirt, "skirt", &bad4) {
            Err(GarmentError::ConstraintViolated { constraint, .. }) => {
                assert_eq!(constraint, "alpha1 > 0");
            }
            other => panic!("expected constraint error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_width_is_rejected() {
        let mut skirt = skirt_template();
        let p = ShapeParams { alpha1: 0.6, alpha2: 0.0, x_offset: 0.0, base_width: 0.17 };
        match apply_shaping(&mut skirt, "skirt", &p) {
            Err(GarmentError::WidthOutOfRange { width, .. }) => assert!(width > WIDTH_MAX),
            other => panic!("expected width error, got {other:?}"),
        }
    }

    #[test]
    fn cut_shortens_the_region_and_updates_boundaries() {
        let g = trousers_template();
        let before_rings = g.boundary_rings.len();
        let before_faces = g.mesh.face_count();
        let cut = cut_region(&g, "l_leg", 0.5).unwrap();
        assert!(cut.mesh.face_count() < before_faces);
        assert_eq!(cut.boundary_rings.len(), before_rings);
        // Remaining left-leg rings all sit at or below the cut coordinate,
        // except the hinge ring whose faces straddle the threshold.
        let region = cut.region("l_leg").unwrap();
        let past: Vec<f64> = region
            .rings
            .iter()
            .filter(|r| r.x > 0.5)
            .map(|r| r.x)
            .collect();
        assert!(past.len() <= 1, "rings past the cut: {past:?}");
        cut.mesh.validate().unwrap();
    }

    #[test]
    fn cut_that_removes_everything_errors() {
        let g = skirt_template();
        assert!(matches!(
            cut_region(&g, "skirt", -1.0),
            Err(GarmentError::CutRemovesEverything)
        ));
    }

    #[test]
    fn unknown_region_is_reported() {
        let g = skirt_template();
        assert!(matches!(
            cut_region(&g, "sleeve", 0.5),
            Err(GarmentError::UnknownRegion { .. })
        ));
    }

    #[test]
    fn open_front_adds_two_boundary_rings() {
        let g = top_template();
        let before = g.boundary_rings.len();
        let opened = open_front(&g).unwrap();
        assert_eq!(opened.boundary_rings.len(), before + 2);
        opened.mesh.validate().unwrap();
    }

    #[test]
    fn resize_with_zero_offsets_is_identity() {
        let model = stand_in_body();
        let mut g = skirt_template();
        let before = g.mesh.vertices.clone();
        resize(&mut g, &model, &vec![0.0; model.shape_count()], [0.0, 0.0], Gender::Female, 20)
            .unwrap();
        let max_err = g
            .mesh
            .vertices
            .iter()
            .zip(before.iter())
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "moved by {max_err}");
    }

    #[test]
    fn resize_follows_body_growth() {
        let model = stand_in_body();
        let mut g = skirt_template();
        let before = g.mesh.vertices.clone();
        let mut beta = vec![0.0; model.shape_count()];
        beta[0] = 2.0;
        resize(&mut g, &model, &beta, [0.0, 0.0], Gender::Female, 20).unwrap();
        // Direction 0 scales the body up around the pelvis; the skirt should
        // move with it by a comparable magnitude.
        let mean_move: f64 = g
            .mesh
            .vertices
            .iter()
            .zip(before.iter())
            .map(|(a, b)| (*a - *b).norm())
            .sum::<f64>()
            / before.len() as f64;
        assert!(mean_move > 0.005, "garment barely moved: {mean_move}");
    }

    #[test]
    fn resize_gender_sign_flips_first_offset() {
        let model = stand_in_body();
        let beta = vec![0.0; model.shape_count()];
        let mut female = skirt_template();
        resize(&mut female, &model, &beta, [0.8, -0.2], Gender::Female, 20).unwrap();
        let mut male = skirt_template();
        resize(&mut male, &model, &beta, [-0.8, -0.2], Gender::Male, 20).unwrap();
        for (a, b) in female.mesh.vertices.iter().zip(male.mesh.vertices.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sew_equal_rings_is_watertight_with_2n_faces() {
        let shirt = tshirt_template();
        let trousers = trousers_template();
        let outfit = sew(&shirt, &trousers).unwrap();
        let n = 16;
        assert_eq!(outfit.mesh.face_count() - outfit.seam_face_start, 2 * n);
        // Both sewn rings disappear from the boundary.
        let boundary = outfit.mesh.boundary_vertices();
        let shirt_hem = &shirt.boundary_rings[1];
        let hem_y = shirt.mesh.vertices[shirt_hem[0]].y;
        // Hem ring = the boundary ring around y = 1.02.
        let hem_ring = shirt
            .boundary_rings
            .iter()
            .find(|r| r.iter().all(|&v| (shirt.mesh.vertices[v].y - 1.02).abs() < 1e-9))
            .unwrap_or_else(|| panic!("no hem ring at y=1.02 (saw y={hem_y})"));
        for &v in hem_ring {
            assert!(!boundary.contains(&v), "hem vertex {v} still on boundary");
        }
        outfit.mesh.validate().unwrap();
    }

    #[test]
    fn sew_unequal_rings_bridges_proportionally() {
        let top = top_template();
        let skirt = skirt_template();
        let outfit = sew(&top, &skirt).unwrap();
        assert_eq!(outfit.mesh.face_count() - outfit.seam_face_start, 16 + 18);
        outfit.mesh.validate().unwrap();
    }

    #[test]
    fn sew_rejects_bad_inputs() {
        let shirt = tshirt_template();
        assert!(matches!(sew(&shirt, &shirt), Err(GarmentError::SewSelf)));
        let second_shirt = tshirt_template();
        assert!(matches!(
            sew(&shirt, &second_shirt),
            Err(GarmentError::SewKindInvalid { .. })
        ));

        // Far-away lower piece.
        let (v, f, region) = tube_garment_piece(
            "skirt",
            &[Vec3::new(0.0, 0.2, 0.0), Vec3::new(0.0, 0.0, 0.0)],
            &[(0.17, 0.17), (0.17, 0.17)],
            16,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            0,
        );
        let mesh = TriMesh::new(v, f).unwrap();
        let boundary_rings = mesh.boundary_loops().unwrap();
        let low = GarmentTemplate {
            mesh,
            kind: GarmentKind::Skirt,
            regions: vec![region],
            boundary_rings,
        };
        assert!(matches!(sew(&shirt, &low), Err(GarmentError::SewTooFar { .. })));

        // Too coarse a ring: 5 vertices against 16.
        let (v, f, region) = tube_garment_piece(
            "skirt",
            &[Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.6, 0.0)],
            &[(0.17, 0.17), (0.17, 0.17)],
            5,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            0,
        );
        let mesh = TriMesh::new(v, f).unwrap();
        let boundary_rings = mesh.boundary_loops().unwrap();
        let coarse = GarmentTemplate {
            mesh,
            kind: GarmentKind::Skirt,
            regions: vec![region],
            boundary_rings,
        };
        assert!(matches!(sew(&shirt, &coarse), Err(GarmentError::SewCountRatio { .. })));
    }

    #[test]
    fn outfit_sampling_is_deterministic_and_valid() {
        let model = stand_in_body();
        let config = GeneratorConfig::default();
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = sample_outfit(&model, &config, &mut rng_a).unwrap();
        let b = sample_outfit(&model, &config, &mut rng_b).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.lower.mesh.vertices, b.lower.mesh.vertices);
        assert!(a.tightness[0] >= config.tightness.0 && a.tightness[0] <= config.tightness.1);
        a.lower.mesh.validate().unwrap();
        if let Some(u) = &a.upper {
            u.mesh.validate().unwrap();
        }

        let mut rng_c = ChaCha8Rng::seed_from_u64(100);
        let c = sample_outfit(&model, &config, &mut rng_c).unwrap();
        assert!(a.log != c.log || a.lower.mesh.vertices != c.lower.mesh.vertices);
    }

    #[test]
    fn many_seeds_sample_without_errors() {
        let model = stand_in_body();
        let config = GeneratorConfig::default();
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = sample_outfit(&model, &config, &mut rng)
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            sample.lower.mesh.validate().unwrap();
        }
    }
}
