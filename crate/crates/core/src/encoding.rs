//! Garment-to-body registration and the offsets-plus-mask garment
//! encoding, with rest-pose wrinkle extraction and mask-boundary
//! smoothing.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::body::{segment, BodyError, BodyModel, BodyParams};
use crate::garment::GarmentKind;
use crate::geom::Vec3;
use crate::mesh::{compact_faces, MeshError, SpatialIndex, TriMesh};

/// Consecutive mean-residual rises tolerated before registration gives up.
pub const DIVERGENCE_RUN: usize = 3;

/// Mask values at or above this count as garment-covered.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Default sweep count for [`smooth_boundary`].
pub const SMOOTH_BOUNDARY_ITERATIONS: usize = 10;

/// Offsets are divided by this scale (m) to form network inputs.
pub const OFFSET_NORMALIZATION_SCALE: f64 = 0.3;

/// Template positions are divided by this scale (m) after root centering.
pub const TEMPLATE_NORMALIZATION_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum EncodingError {
    /// Mean residual rose for [`DIVERGENCE_RUN`] consecutive iterations.
    Diverged { iteration: usize },
    CorrespondenceLength { expected: usize, got: usize },
    BodyVertexOutOfRange { garment_vertex: usize, body_vertex: usize },
    VertexCountMismatch { expected: usize, got: usize },
    EmptyMask,
    Mesh(MeshError),
    Body(BodyError),
}

impl fmt::Display for EncodingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodingError::Diverged { iteration } => {
                write!(f, "registration diverged at iteration {iteration}")
            }
            EncodingError::CorrespondenceLength { expected, got } => {
                write!(f, "correspondence covers {got} vertices, garment has {expected}")
            }
            EncodingError::BodyVertexOutOfRange { garment_vertex, body_vertex } => write!(
                f,
                "garment vertex {garment_vertex} maps to missing body vertex {body_vertex}"
            ),
            EncodingError::VertexCountMismatch { expected, got } => {
                write!(f, "expected {expected} vertices, got {got}")
            }
            EncodingError::EmptyMask => write!(f, "mask keeps no vertices"),
            EncodingError::Mesh(e) => write!(f, "mesh error: {e}"),
            EncodingError::Body(e) => write!(f, "body error: {e}"),
        }
    }
}

impl core::error::Error for EncodingError {}

impl From<MeshError> for EncodingError {
    fn from(e: MeshError) -> EncodingError {
        EncodingError::Mesh(e)
    }
}

impl From<BodyError> for EncodingError {
    fn from(e: BodyError) -> EncodingError {
        EncodingError::Body(e)
    }
}

/// Which face set a garment encoding reconstructs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Standard,
    Skirt,
}

impl TopologyKind {
    /// Skirts hang between the legs and need the bridged body topology;
    /// everything else reconstructs over the plain body.
    pub fn for_garment(kind: GarmentKind) -> TopologyKind {
        match kind {
            GarmentKind::Skirt => TopologyKind::Skirt,
            _ => TopologyKind::Standard,
        }
    }
}

/// Shift/scale used to bring offsets and template positions into
/// network units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub offset_scale: f64,
    pub template_shift: Vec3,
    pub template_scale: f64,
}

impl Normalization {
    pub fn standard(root: Vec3) -> Normalization {
        Normalization {
            offset_scale: OFFSET_NORMALIZATION_SCALE,
            template_shift: root,
            template_scale: TEMPLATE_NORMALIZATION_SCALE,
        }
    }
}

impl Default for Normalization {
    fn default() -> Normalization {
        Normalization::standard(Vec3::ZERO)
    }
}

/// Per-garment-vertex match onto the body.
#[derive(Debug, Clone)]
pub struct Correspondence {
    /// Body vertex matched to each garment vertex.
    pub garment_to_body: Vec<usize>,
    /// Distance from each original garment vertex to its matched body vertex.
    pub residuals: Vec<f64>,
    /// Mean nearest-body distance after each registration sweep.
    pub mean_residual_log: Vec<f64>,
}

/// Garment expressed as offsets and a coverage mask over body vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetEncoding {
    pub offsets: Vec<Vec3>,
    pub mask: Vec<f64>,
    pub kind: TopologyKind,
    pub normalization: Normalization,
}

impl OffsetEncoding {
    /// Offsets scaled into network units.
    pub fn normalized_offsets(&self) -> Vec<Vec3> {
        self.offsets.iter().map(|&x| x / self.normalization.offset_scale).collect()
    }
}

/// Template positions shifted and scaled into network units.
pub fn normalize_template(positions: &[Vec3], norm: &Normalization) -> Vec<Vec3> {
    positions.iter().map(|&t| (t - norm.template_shift) / norm.template_scale).collect()
}

/// Rest-pose displacement field recovering simulated wrinkles.
#[derive(Debug, Clone)]
pub struct WrinkleOffsets {
    /// Displacement per garment vertex, in the static garment's rest frame.
    pub offsets: Vec<Vec3>,
    /// Animation frame the dressed garment was unposed from.
    pub frame: usize,
}

/// Deforms the garment toward the body and matches each vertex to its
/// nearest body vertex. Each sweep pulls every vertex toward its current
/// nearest body target while a Dirichlet penalty of weight `stiffness`
/// keeps the displacement field smooth; the update is the closed-form
/// per-vertex minimizer given its neighbors.
pub fn register(
    garment: &TriMesh,
    body: &TriMesh,
    stiffness: f64,
    iterations: usize,
) -> Result<Correspondence, EncodingError> {
    assert!(stiffness > 0.0, "stiffness must be positive");
    if garment.vertex_count() == 0 {
        return Err(EncodingError::Mesh(MeshError::EmptyMesh));
    }
    let index = SpatialIndex::from_points(body.vertices.clone(), body.mean_edge_length())?;
    let adjacency = garment.adjacency();
    let rest = &garment.vertices;
    let mut deformed = garment.vertices.clone();
    let mut log = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let targets: Vec<Vec3> =
            deformed.iter().map(|&p| body.vertices[index.nearest(p).0]).collect();
        for vi in 0..deformed.len() {
            let mut sum = targets[vi];
            for &nj in &adjacency[vi] {
                sum += (deformed[nj] + (rest[vi] - rest[nj])) * stiffness;
            }
            deformed[vi] = sum / (1.0 + stiffness * adjacency[vi].len() as f64);
        }
        let mean = deformed.iter().map(|&p| index.nearest(p).1).sum::<f64>()
            / deformed.len() as f64;
        log.push(mean);
        if residual_rises(&log) >= DIVERGENCE_RUN {
            return Err(EncodingError::Diverged { iteration: it });
        }
    }
    let mut garment_to_body = Vec::with_capacity(deformed.len());
    let mut residuals = Vec::with_capacity(deformed.len());
    for (vi, p) in deformed.iter().enumerate() {
        let (bi, _) = index.nearest(*p);
        garment_to_body.push(bi);
        residuals.push((garment.vertices[vi] - body.vertices[bi]).norm());
    }
    Ok(Correspondence { garment_to_body, residuals, mean_residual_log: log })
}

/// Length of the strictly-rising run at the tail of the residual log.
fn residual_rises(log: &[f64]) -> usize {
    let mut rises = 0;
    for w in log.windows(2).rev() {
        if w[1] > w[0] + 1e-15 {
            rises += 1;
        } else {
            break;
        }
    }
    rises
}

/// Body vertices eligible to carry garment offsets. Head, hands, and
/// feet never carry garments, so they are excluded whenever the mesh
/// is segmented.
pub fn encodable_vertices(body: &TriMesh) -> Vec<bool> {
    match &body.segments {
        None => vec![true; body.vertex_count()],
        Some(segs) => segs
            .iter()
            .map(|&s| {
                s != segment::HEAD
                    && s != segment::L_HAND
                    && s != segment::R_HAND
                    && s != segment::L_FOOT
                    && s != segment::R_FOOT
            })
            .collect(),
    }
}

/// Collapses the garment onto the body: every eligible body vertex with
/// at least one matched garment vertex stores the mean garment position
/// relative to itself and a mask of 1; all others stay zero.
pub fn encode(
    garment: &TriMesh,
    body: &TriMesh,
    corr: &Correspondence,
    kind: TopologyKind,
) -> Result<OffsetEncoding, EncodingError> {
    if corr.garment_to_body.len() != garment.vertex_count() {
        return Err(EncodingError::CorrespondenceLength {
            expected: garment.vertex_count(),
            got: corr.garment_to_body.len(),
        });
    }
    let nb = body.vertex_count();
    let mut sums = vec![Vec3::ZERO; nb];
    let mut counts = vec![0usize; nb];
    for (gi, &bi) in corr.garment_to_body.iter().enumerate() {
        if bi >= nb {
            return Err(EncodingError::BodyVertexOutOfRange {
                garment_vertex: gi,
                body_vertex: bi,
            });
        }
        sums[bi] += garment.vertices[gi];
        counts[bi] += 1;
    }
    let eligible = encodable_vertices(body);
    let mut offsets = vec![Vec3::ZERO; nb];
    let mut mask = vec![0.0f64; nb];
    for bi in 0..nb {
        if counts[bi] > 0 && eligible[bi] {
            offsets[bi] = sums[bi] / counts[bi] as f64 - body.vertices[bi];
            mask[bi] = 1.0;
        }
    }
    Ok(OffsetEncoding { offsets, mask, kind, normalization: Normalization::default() })
}

/// Rebuilds a garment mesh from an encoding: body vertices whose mask
/// clears the threshold move by their offset and survive; faces with
/// any dropped corner are removed and the rest reindexed. Pass the
/// bridged body mesh for skirt encodings so its face set carries over.
pub fn reconstruct(
    enc: &OffsetEncoding,
    body: &TriMesh,
    threshold: f64,
) -> Result<TriMesh, EncodingError> {
    let nb = body.vertex_count();
    if enc.offsets.len() != nb || enc.mask.len() != nb {
        return Err(EncodingError::VertexCountMismatch { expected: nb, got: enc.offsets.len() });
    }
    let kept: Vec<bool> = enc.mask.iter().map(|&m| m >= threshold).collect();
    if !kept.iter().any(|&k| k) {
        return Err(EncodingError::EmptyMask);
    }
    let positions: Vec<Vec3> = body
        .vertices
        .iter()
        .zip(&enc.offsets)
        .zip(&kept)
        .map(|((&v, &x), &k)| if k { v + x } else { v })
        .collect();
    let faces: Vec<[usize; 3]> =
        body.faces.iter().copied().filter(|f| f.iter().all(|&v| kept[v])).collect();
    let (vertices, faces, old_to_new) = compact_faces(&positions, &faces);
    let segments = body.segments.as_ref().map(|segs| {
        let mut out = vec![0u32; vertices.len()];
        for (old, slot) in old_to_new.iter().enumerate() {
            if let Some(new) = slot {
                out[*new] = segs[old];
            }
        }
        out
    });
    Ok(TriMesh { vertices, faces, segments })
}

/// Body skin weights pulled onto garment vertices through the
/// correspondence.
pub fn garment_weights(
    model: &BodyModel,
    corr: &Correspondence,
) -> Result<Vec<Vec<(usize, f64)>>, EncodingError> {
    corr.garment_to_body
        .iter()
        .enumerate()
        .map(|(gi, &bi)| {
            if bi >= model.skin_weights.len() {
                return Err(EncodingError::BodyVertexOutOfRange {
                    garment_vertex: gi,
                    body_vertex: bi,
                });
            }
            Ok(model.skin_weights[bi].clone())
        })
        .collect()
}

/// Unposes the dressed garment through the body's inverse kinematics and
/// subtracts the static garment, leaving the simulated wrinkles as a
/// rest-pose displacement field.
pub fn wrinkle_offsets(
    model: &BodyModel,
    dressed: &TriMesh,
    static_garment: &TriMesh,
    corr: &Correspondence,
    params: &BodyParams,
    frame: usize,
) -> Result<WrinkleOffsets, EncodingError> {
    if dressed.vertex_count() != static_garment.vertex_count() {
        return Err(EncodingError::VertexCountMismatch {
            expected: static_garment.vertex_count(),
            got: dressed.vertex_count(),
        });
    }
    if corr.garment_to_body.len() != static_garment.vertex_count() {
        return Err(EncodingError::CorrespondenceLength {
            expected: static_garment.vertex_count(),
            got: corr.garment_to_body.len(),
        });
    }
    let weights = garment_weights(model, corr)?;
    let unposed = model.unpose_points_with_weights(params, frame, &dressed.vertices, &weights)?;
    let offsets =
        unposed.iter().zip(&static_garment.vertices).map(|(&u, &s)| u - s).collect();
    Ok(WrinkleOffsets { offsets, frame })
}

/// Jacobi-averages the mask boundary: vertices inside the mask that
/// touch an outside vertex are repeatedly replaced by the mean of their
/// boundary neighbors. Everything else is untouched.
pub fn smooth_boundary(garment: &TriMesh, mask: &[f64], iterations: usize) -> TriMesh {
    assert_eq!(garment.vertex_count(), mask.len(), "mask length must match vertex count");
    let adjacency = garment.adjacency();
    let inside: Vec<bool> = mask.iter().map(|&m| m >= MASK_THRESHOLD).collect();
    let boundary: Vec<bool> = (0..garment.vertex_count())
        .map(|vi| inside[vi] && adjacency[vi].iter().any(|&nj| !inside[nj]))
        .collect();
    let rows: Vec<(usize, Vec<usize>)> = (0..garment.vertex_count())
        .filter(|&vi| boundary[vi])
        .map(|vi| {
            (vi, adjacency[vi].iter().copied().filter(|&nj| boundary[nj]).collect())
        })
        .filter(|(_, nbrs): &(usize, Vec<usize>)| !nbrs.is_empty())
        .collect();
    let mut out = garment.clone();
    for _ in 0..iterations {
        let current = out.vertices.clone();
        for (vi, nbrs) in &rows {
            let mut mean = Vec3::ZERO;
            for &nj in nbrs {
                mean += current[nj];
            }
            out.vertices[*vi] = mean / nbrs.len() as f64;
        }
    }
    out
}

/// Midpoint-subdivides the body for registration, carrying the skinning
/// data along: new vertices average their edge endpoints' skin weights
/// and shape displacements, and the inner-leg strips gain the midpoint
/// of each strip edge so they stay edge-connected.
pub fn subdivide_for_registration(model: &BodyModel) -> Result<BodyModel, EncodingError> {
    let sub = model.template.subdivide_tracked()?;
    let mut shape_basis = Vec::with_capacity(model.shape_basis.len());
    for dir in &model.shape_basis {
        let mut grown = dir.clone();
        for &(a, b) in &sub.edge_parents {
            grown.push((dir[a] + dir[b]) * 0.5);
        }
        shape_basis.push(grown);
    }
    let mut skin_weights = model.skin_weights.clone();
    for &(a, b) in &sub.edge_parents {
        skin_weights.push(average_weight_rows(&model.skin_weights[a], &model.skin_weights[b]));
    }
    let mut midpoint = BTreeMap::new();
    for (k, &(a, b)) in sub.edge_parents.iter().enumerate() {
        midpoint.insert((a, b), sub.base_vertex_count + k);
    }
    let inner_leg_strips = [0usize, 1].map(|side| {
        let strip = &model.inner_leg_strips[side];
        let mut grown = Vec::with_capacity(strip.len() * 2 - 1);
        for w in strip.windows(2) {
            grown.push(w[0]);
            grown.push(
                *midpoint
                    .get(&(w[0].min(w[1]), w[0].max(w[1])))
                    .expect("inner-leg strip pair is not a template edge"),
            );
        }
        grown.push(*strip.last().expect("inner-leg strip is empty"));
        grown
    });
    let grown = BodyModel {
        template: sub.mesh,
        shape_basis,
        joint_parents: model.joint_parents.clone(),
        joint_regressor: model.joint_regressor.clone(),
        skin_weights,
        inner_leg_strips,
        segment_names: model.segment_names.clone(),
    };
    grown.validate()?;
    Ok(grown)
}

fn average_weight_rows(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for &(j, w) in a {
        *acc.entry(j).or_insert(0.0) += 0.5 * w;
    }
    for &(j, w) in b {
        *acc.entry(j).or_insert(0.0) += 0.5 * w;
    }
    acc.into_iter().collect()
}
