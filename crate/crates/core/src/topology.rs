//! Dual body topology for skirts: the inner-leg walls are opened along two
//! declared vertex strips and bridged left-to-right, so a single surface
//! spans both legs like a skirt does.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::garment::GarmentKind;
use crate::linalg::SparseMatrix;
use crate::mesh::{MeshError, TriMesh};

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyError {
    StripLengthMismatch { left: usize, right: usize },
    StripTooShort { len: usize },
    VertexOutOfRange { vertex: usize },
    StripsOverlap { vertex: usize },
    StripEdgeMissing { a: usize, b: usize },
    BridgeNonManifold { a: usize, b: usize },
    NoIterations,
    Mesh(MeshError),
}

impl core::fmt::Display for TopologyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TopologyError::StripLengthMismatch { left, right } => {
                write!(f, "inner-leg strips differ in length: {left} vs {right}")
            }
            TopologyError::StripTooShort { len } => {
                write!(f, "inner-leg strip needs at least 2 vertices, got {len}")
            }
            TopologyError::VertexOutOfRange { vertex } => {
                write!(f, "strip vertex {vertex} is out of range")
            }
            TopologyError::StripsOverlap { vertex } => {
                write!(f, "vertex {vertex} appears in both strips")
            }
            TopologyError::StripEdgeMissing { a, b } => {
                write!(f, "consecutive strip vertices ({a}, {b}) share no mesh edge")
            }
            TopologyError::BridgeNonManifold { a, b } => {
                write!(f, "bridge edge ({a}, {b}) would sit in more than two faces")
            }
            TopologyError::NoIterations => write!(f, "smoothing needs at least one iteration"),
            TopologyError::Mesh(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TopologyError {}

impl From<MeshError> for TopologyError {
    fn from(e: MeshError) -> Self {
        TopologyError::Mesh(e)
    }
}

/// A body mesh carried under two face sets: the base topology and the
/// skirt topology where the inner-leg walls are bridged. Vertex positions
/// and indices are shared by both.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTopology {
    pub base: TriMesh,
    pub skirt_mesh: TriMesh,
    pub removed_faces: Vec<[usize; 3]>,
    pub added_faces: Vec<[usize; 3]>,
    pub inner_leg_vertices: Vec<usize>,
}

pub const INNER_LEG_SMOOTH_ITERATIONS: usize = 30;

#[cfg(test)]
fn euler_characteristic(mesh: &TriMesh) -> i64 {
    mesh.vertex_count() as i64 - mesh.edges().len() as i64 + mesh.face_count() as i64
}

/// Open both inner-leg walls along the strips and bridge them with a
/// zig-zag triangle strip. Strips run root to ankle, one per leg, with
/// equal vertex counts; positions are left untouched.
pub fn build_skirt_topology(
    body: &TriMesh,
    strips: &[Vec<usize>; 2],
) -> Result<DualTopology, TopologyError> {
    let [left, right] = strips;
    if left.len() != right.len() {
        return Err(TopologyError::StripLengthMismatch { left: left.len(), right: right.len() });
    }
    let m = left.len();
    if m < 2 {
        return Err(TopologyError::StripTooShort { len: m });
    }
    let n = body.vertex_count();
    for &v in left.iter().chain(right.iter()) {
        if v >= n {
            return Err(TopologyError::VertexOutOfRange { vertex: v });
        }
    }
    let left_set: BTreeSet<usize> = left.iter().copied().collect();
    for &v in right {
        if left_set.contains(&v) {
            return Err(TopologyError::StripsOverlap { vertex: v });
        }
    }

    let mesh_edges: BTreeSet<(usize, usize)> = body.edges().into_iter().collect();
    let mut strip_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for strip in [left, right] {
        for w in strip.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            if !mesh_edges.contains(&key) {
                return Err(TopologyError::StripEdgeMissing { a: w[0], b: w[1] });
            }
            strip_edges.insert(key);
        }
    }

    let mut kept = Vec::with_capacity(body.face_count());
    let mut removed_faces = Vec::new();
    for f in &body.faces {
        let has_strip_edge = [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
            .iter()
            .any(|&(a, b)| strip_edges.contains(&(a.min(b), a.max(b))));
        if has_strip_edge {
            removed_faces.push(*f);
        } else {
            kept.push(*f);
        }
    }

    let mut added_faces = Vec::with_capacity(2 * (m - 1));
    for i in 0..m - 1 {
        added_faces.push([left[i], right[i], left[i + 1]]);
        added_faces.push([right[i], right[i + 1], left[i + 1]]);
    }

    let mut faces = kept;
    faces.extend(added_faces.iter().copied());
    let skirt_mesh = TriMesh {
        vertices: body.vertices.clone(),
        faces,
        segments: body.segments.clone(),
    };

    // Manifold audit along the bridge: every edge of an added face sits in
    // at most two faces of the new topology.
    let mut edge_count: alloc::collections::BTreeMap<(usize, usize), usize> =
        alloc::collections::BTreeMap::new();
    for f in &skirt_mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    for f in &added_faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = (a.min(b), a.max(b));
            if edge_count[&key] > 2 {
                return Err(TopologyError::BridgeNonManifold { a: key.0, b: key.1 });
            }
        }
    }

    // Surgery bookkeeping: the vertex set is untouched and the face count
    // moves exactly by the removed and added sets.
    debug_assert_eq!(skirt_mesh.vertex_count(), body.vertex_count());
    debug_assert_eq!(
        skirt_mesh.face_count(),
        body.face_count() - removed_faces.len() + added_faces.len()
    );

    let mut inner: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
    inner.sort_unstable();
    inner.dedup();

    Ok(DualTopology {
        base: body.clone(),
        skirt_mesh,
        removed_faces,
        added_faces,
        inner_leg_vertices: inner,
    })
}

/// Relax the inner-leg vertices on the skirt topology so the registration
/// target has no stretched bridge. All other vertices keep their exact
/// positions.
pub fn registration_mesh(dual: &DualTopology, iterations: usize) -> Result<TriMesh, TopologyError> {
    if iterations == 0 {
        return Err(TopologyError::NoIterations);
    }
    Ok(dual.skirt_mesh.laplacian_smooth(&dual.inner_leg_vertices, iterations)?)
}

/// Graph Laplacian for a garment kind: skirts read the bridged topology,
/// everything else the base body.
pub fn select_laplacian(
    dual: &DualTopology,
    kind: GarmentKind,
) -> Result<SparseMatrix, TopologyError> {
    let mesh = match kind {
        GarmentKind::Skirt => &dual.skirt_mesh,
        _ => &dual.base,
    };
    Ok(mesh.normalized_laplacian()?)
}

/// Longest bridge edge over shortest bridge edge in `mesh` positions.
pub fn bridge_aspect_ratio(dual: &DualTopology, positions: &[crate::geom::Vec3]) -> f64 {
    let mut longest = 0.0f64;
    let mut shortest = f64::INFINITY;
    let mut seen = BTreeSet::new();
    for f in &dual.added_faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                continue;
            }
            let len = (positions[key.0] - positions[key.1]).norm();
            longest = longest.max(len);
            shortest = shortest.min(len);
        }
    }
    longest / shortest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::stand_in_body;
    use crate::geom::Vec3;
    use alloc::vec;

    /// Two parallel open tubes with facing vertical strips on the interior
    /// rings (strip length = rings - 2); a miniature pair of legs.
    fn two_tube_fixture(rings: usize, gap: f64) -> (TriMesh, [Vec<usize>; 2]) {
        let n = 8;
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut strips: Vec<Vec<usize>> = Vec::new();
        for (side, inner_slot) in [(1.0f64, n / 2), (-1.0, 0usize)] {
            let base = vertices.len();
            let cx = side * (gap * 0.5 + 0.05);
            for r in 0..rings {
                for k in 0..n {
                    let angle = core::f64::consts::TAU * k as f64 / n as f64;
                    vertices.push(Vec3::new(
                        cx + 0.05 * angle.cos(),
                        1.0 - r as f64 * 0.07,
                        0.05 * angle.sin(),
                    ));
                }
            }
            for r in 0..rings - 1 {
                for k in 0..n {
                    let k1 = (k + 1) % n;
                    let a = base + r * n + k;
                    let b = base + r * n + k1;
                    let c = base + (r + 1) * n + k1;
                    let d = base + (r + 1) * n + k;
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
            strips.push((1..rings - 1).map(|r| base + r * n + inner_slot).collect());
        }
        let mesh = TriMesh::new(vertices, faces).unwrap();
        let right = strips.pop().unwrap();
        let left = strips.pop().unwrap();
        (mesh, [left, right])
    }

    #[test]
    fn five_vertex_strips_bridge_with_eight_faces() {
        let (mesh, strips) = two_tube_fixture(7, 0.02);
        assert_eq!(strips[0].len(), 5);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        assert_eq!(dual.added_faces.len(), 8);
        // Two wall faces vanish per strip edge on each tube.
        assert_eq!(dual.removed_faces.len(), 2 * 2 * 4);
        assert_eq!(dual.skirt_mesh.vertex_count(), mesh.vertex_count());
        assert_eq!(dual.skirt_mesh.vertices, mesh.vertices);
        dual.skirt_mesh.validate().unwrap();
    }

    #[test]
    fn added_faces_connect_the_two_strips_only() {
        let (mesh, strips) = two_tube_fixture(7, 0.02);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let left: BTreeSet<usize> = strips[0].iter().copied().collect();
        let right: BTreeSet<usize> = strips[1].iter().copied().collect();
        for f in &dual.added_faces {
            let in_left = f.iter().filter(|v| left.contains(v)).count();
            let in_right = f.iter().filter(|v| right.contains(v)).count();
            assert_eq!(in_left + in_right, 3);
            assert!(in_left > 0 && in_right > 0, "bridge face touches one side only");
        }
    }

    #[test]
    fn euler_characteristic_audit() {
        // Hand bookkeeping with interior strips of length k. The bridge adds
        // 2k-1 edges (k rungs, k-1 diagonals) and no edge loses its last
        // face; faces drop by the 4(k-1) wall faces less the 2(k-1) bridge
        // faces. With dV = 0: d(chi) = -(2k-1) - 2(k-1) = 3 - 4k.
        for rings in [5usize, 7, 11] {
            let (mesh, strips) = two_tube_fixture(rings, 0.02);
            let k = strips[0].len() as i64;
            assert_eq!(k, rings as i64 - 2);
            let dual = build_skirt_topology(&mesh, &strips).unwrap();
            let before = euler_characteristic(&mesh);
            let after = euler_characteristic(&dual.skirt_mesh);
            assert_eq!(after - before, 3 - 4 * k, "rings={rings}");
        }
    }

    #[test]
    fn euler_characteristic_audit_on_closed_tubes() {
        // On the capped stand-in legs every ring edge keeps a second face,
        // so no edges vanish: d(chi) = -(2m-1) - 2(m-1) = 3 - 4m.
        let model = stand_in_body();
        let dual = build_skirt_topology(&model.template, &model.inner_leg_strips).unwrap();
        let m = model.inner_leg_strips[0].len() as i64;
        let before = euler_characteristic(&model.template);
        let after = euler_characteristic(&dual.skirt_mesh);
        assert_eq!(after - before, 3 - 4 * m);
    }

    #[test]
    fn bridge_merges_the_two_tubes_into_one_component() {
        let (mesh, strips) = two_tube_fixture(5, 0.02);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let count_components = |mesh: &TriMesh| -> usize {
            let adj = mesh.adjacency();
            let mut seen = vec![false; mesh.vertex_count()];
            let mut components = 0;
            for start in 0..mesh.vertex_count() {
                if seen[start] {
                    continue;
                }
                components += 1;
                let mut stack = vec![start];
                while let Some(v) = stack.pop() {
                    if seen[v] {
                        continue;
                    }
                    seen[v] = true;
                    stack.extend(adj[v].iter().copied().filter(|&w| !seen[w]));
                }
            }
            components
        };
        assert_eq!(count_components(&mesh), 2);
        assert_eq!(count_components(&dual.skirt_mesh), 1);
    }

    #[test]
    fn round_trip_restores_the_base_face_set() {
        let (mesh, strips) = two_tube_fixture(6, 0.02);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let added: BTreeSet<[usize; 3]> = dual.added_faces.iter().copied().collect();
        let mut restored: Vec<[usize; 3]> = dual
            .skirt_mesh
            .faces
            .iter()
            .copied()
            .filter(|f| !added.contains(f))
            .collect();
        restored.extend(dual.removed_faces.iter().copied());
        let mut expect: Vec<[usize; 3]> = mesh.faces.clone();
        restored.sort_unstable();
        expect.sort_unstable();
        assert_eq!(restored, expect);
    }

    #[test]
    fn strip_validation_errors() {
        let (mesh, strips) = two_tube_fixture(7, 0.02);
        let short = [strips[0][..3].to_vec(), strips[1].clone()];
        assert!(matches!(
            build_skirt_topology(&mesh, &short),
            Err(TopologyError::StripLengthMismatch { left: 3, right: 5 })
        ));
        let tiny = [vec![strips[0][0]], vec![strips[1][0]]];
        assert!(matches!(
            build_skirt_topology(&mesh, &tiny),
            Err(TopologyError::StripTooShort { len: 1 })
        ));
        let overlap = [strips[0].clone(), strips[0].clone()];
        assert!(matches!(
            build_skirt_topology(&mesh, &overlap),
            Err(TopologyError::StripsOverlap { .. })
        ));
        // Skipping a ring breaks the consecutive-edge requirement.
        let mut gappy = strips.clone();
        gappy[0].remove(1);
        gappy[1].remove(1);
        assert!(matches!(
            build_skirt_topology(&mesh, &gappy),
            Err(TopologyError::StripEdgeMissing { .. })
        ));
    }

    #[test]
    fn stand_in_body_carries_a_buildable_skirt_topology() {
        let model = stand_in_body();
        let dual = build_skirt_topology(&model.template, &model.inner_leg_strips).unwrap();
        let m = model.inner_leg_strips[0].len();
        assert_eq!(dual.added_faces.len(), 2 * (m - 1));
        dual.skirt_mesh.validate().unwrap();
        let reg = registration_mesh(&dual, INNER_LEG_SMOOTH_ITERATIONS).unwrap();
        reg.validate().unwrap();
    }

    #[test]
    fn registration_smoothing_moves_only_inner_vertices() {
        let (mesh, strips) = two_tube_fixture(6, 0.12);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let reg = registration_mesh(&dual, 5).unwrap();
        let inner: BTreeSet<usize> = dual.inner_leg_vertices.iter().copied().collect();
        for vi in 0..mesh.vertex_count() {
            if inner.contains(&vi) {
                continue;
            }
            // Bit-identical: untouched coordinates, zero ulps apart.
            assert!(mesh.vertices[vi].x.to_bits() == reg.vertices[vi].x.to_bits());
            assert!(mesh.vertices[vi].y.to_bits() == reg.vertices[vi].y.to_bits());
            assert!(mesh.vertices[vi].z.to_bits() == reg.vertices[vi].z.to_bits());
        }
        let moved = dual
            .inner_leg_vertices
            .iter()
            .any(|&v| (mesh.vertices[v] - reg.vertices[v]).norm() > 1e-6);
        assert!(moved, "smoothing had no effect");
    }

    #[test]
    fn smoothing_reduces_stretched_bridge_aspect_ratio() {
        // A wide gap stretches the rungs relative to the strip pitch.
        let (mesh, strips) = two_tube_fixture(6, 0.3);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let unsmoothed = bridge_aspect_ratio(&dual, &dual.skirt_mesh.vertices);
        for iterations in 1..=6 {
            let reg = registration_mesh(&dual, iterations).unwrap();
            let ratio = bridge_aspect_ratio(&dual, &reg.vertices);
            assert!(
                ratio < unsmoothed - 1e-12,
                "aspect ratio not below the unsmoothed {unsmoothed}: {ratio} at {iterations}"
            );
        }
        // The bulk of the correction lands in the first few sweeps.
        let early = registration_mesh(&dual, 3).unwrap();
        assert!(bridge_aspect_ratio(&dual, &early.vertices) < 0.8 * unsmoothed);
    }

    #[test]
    fn smoothed_vertices_stay_in_their_one_ring_hull() {
        let (mesh, strips) = two_tube_fixture(6, 0.12);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        let adj = dual.skirt_mesh.adjacency();
        // One Gauss-Seidel pass at a time; every update must land inside
        // the bounding box of its current neighborhood (a superset check
        // for the convex hull).
        let mut current = dual.skirt_mesh.clone();
        for _ in 0..4 {
            let next = current.laplacian_smooth(&dual.inner_leg_vertices, 1).unwrap();
            for &vi in &dual.inner_leg_vertices {
                let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
                let mut hi = -lo;
                for &nb in &adj[vi] {
                    // Neighbors may themselves already be updated this
                    // pass, so take the union of both states.
                    for p in [current.vertices[nb], next.vertices[nb]] {
                        lo = lo.min_components(p);
                        hi = hi.max_components(p);
                    }
                }
                let p = next.vertices[vi];
                assert!(p.x >= lo.x - 1e-12 && p.x <= hi.x + 1e-12);
                assert!(p.y >= lo.y - 1e-12 && p.y <= hi.y + 1e-12);
                assert!(p.z >= lo.z - 1e-12 && p.z <= hi.z + 1e-12);
            }
            current = next;
        }
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let (mesh, strips) = two_tube_fixture(5, 0.02);
        let dual = build_skirt_topology(&mesh, &strips).unwrap();
        assert!(matches!(registration_mesh(&dual, 0), Err(TopologyError::NoIterations)));
    }

    #[test]
    fn laplacian_selection_by_kind() {
        let model = stand_in_body();
        let dual = build_skirt_topology(&model.template, &model.inner_leg_strips).unwrap();
        let base = dual.base.normalized_laplacian().unwrap();
        let trousers = select_laplacian(&dual, GarmentKind::Trousers).unwrap();
        assert_eq!(base.entries().collect::<Vec<_>>(), trousers.entries().collect::<Vec<_>>());
        let tshirt = select_laplacian(&dual, GarmentKind::TShirt).unwrap();
        assert_eq!(base.entries().collect::<Vec<_>>(), tshirt.entries().collect::<Vec<_>>());

        let skirt = select_laplacian(&dual, GarmentKind::Skirt).unwrap();
        let base_pattern: BTreeSet<(usize, usize)> =
            base.entries().map(|(r, c, _)| (r, c)).collect();
        let skirt_pattern: BTreeSet<(usize, usize)> =
            skirt.entries().map(|(r, c, _)| (r, c)).collect();
        // The skirt pattern gains exactly the bridge edges absent from the
        // base topology, in both triangular halves.
        let gained: BTreeSet<(usize, usize)> =
            skirt_pattern.difference(&base_pattern).copied().collect();
        let lost: Vec<(usize, usize)> =
            base_pattern.difference(&skirt_pattern).copied().collect();
        assert!(lost.is_empty(), "base entries vanished: {lost:?}");
        let base_edges: BTreeSet<(usize, usize)> = dual.base.edges().into_iter().collect();
        let mut expected = BTreeSet::new();
        for f in &dual.added_faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                if !base_edges.contains(&key) {
                    expected.insert((key.0, key.1));
                    expected.insert((key.1, key.0));
                }
            }
        }
        assert_eq!(gained, expected);
    }
}
