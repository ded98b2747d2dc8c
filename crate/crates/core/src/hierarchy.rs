//! Segment-constrained quadric-error simplification and the pooling
//! hierarchy built on top of it.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::{Mat3, Vec3};
use crate::mesh::{MeshError, TriMesh};

#[derive(Debug, Clone, PartialEq)]
pub enum HierarchyError {
    TargetAboveVertexCount { target: usize, count: usize },
    TargetBelowSegmentCount { target: usize, segments: usize },
    /// No further collapse is possible; `floor` is the size reached.
    TargetUnreachable { target: usize, floor: usize },
    MissingSegments,
    LevelSizesNotDecreasing { index: usize },
    FirstLevelMismatch { expected: usize, got: usize },
    LastLevelNotSegmentCount { last: usize, segments: usize },
    FeatureRows { expected: usize, got: usize },
    FeatureWidth { expected: usize, got: usize },
    ParentOutOfRange { vertex: usize, parent: usize },
    EmptyPoolCell { vertex: usize },
    Mesh(MeshError),
}

impl fmt::Display for HierarchyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HierarchyError::TargetAboveVertexCount { target, count } => {
                write!(f, "target {target} exceeds vertex count {count}")
            }
            HierarchyError::TargetBelowSegmentCount { target, segments } => {
                write!(f, "target {target} is below the {segments} segments")
            }
            HierarchyError::TargetUnreachable { target, floor } => {
                write!(f, "no collapse can reach {target}; stopped at {floor}")
            }
            HierarchyError::MissingSegments => write!(f, "mesh carries no segment labels"),
            HierarchyError::LevelSizesNotDecreasing { index } => {
                write!(f, "level sizes must strictly decrease at index {index}")
            }
            HierarchyError::FirstLevelMismatch { expected, got } => {
                write!(f, "first level size {got} does not match the mesh ({expected})")
            }
            HierarchyError::LastLevelNotSegmentCount { last, segments } => {
                write!(f, "last level size {last} must equal the segment count {segments}")
            }
            HierarchyError::FeatureRows { expected, got } => {
                write!(f, "expected {expected} feature rows, got {got}")
            }
            HierarchyError::FeatureWidth { expected, got } => {
                write!(f, "expected feature width {expected}, got {got}")
            }
            HierarchyError::ParentOutOfRange { vertex, parent } => {
                write!(f, "vertex {vertex} has out-of-range parent {parent}")
            }
            HierarchyError::EmptyPoolCell { vertex } => {
                write!(f, "coarse vertex {vertex} has no children to pool")
            }
            HierarchyError::Mesh(e) => write!(f, "mesh error: {e}"),
        }
    }
}

impl core::error::Error for HierarchyError {}

impl From<MeshError> for HierarchyError {
    fn from(e: MeshError) -> HierarchyError {
        HierarchyError::Mesh(e)
    }
}

/// One accepted edge collapse, in the input mesh's vertex numbering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collapse {
    pub kept: usize,
    pub removed: usize,
    pub cost: f64,
    pub point: Vec3,
    /// Accepted despite flipping a face normal because nothing better
    /// remained.
    pub forced: bool,
}

/// Output of [`simplify`].
#[derive(Debug, Clone)]
pub struct Simplified {
    pub mesh: TriMesh,
    /// Coarse vertex index for every input vertex.
    pub parent_map: Vec<usize>,
    pub collapses: Vec<Collapse>,
}

/// Pooling levels from finest to coarsest. `edge_lists[k]` is level k's
/// connectivity: the finest level's mesh edges, then their quotient
/// through each parent map, which stays connected even where coarse
/// faces degenerate.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub levels: Vec<TriMesh>,
    pub parent_maps: Vec<Vec<usize>>,
    pub edge_lists: Vec<Vec<(usize, usize)>>,
}

impl MeshHierarchy {
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|m| m.vertex_count()).collect()
    }

    /// Finest-to-coarsest parent map, composed across all levels.
    pub fn compose_to_coarsest(&self) -> Vec<usize> {
        let mut map: Vec<usize> = (0..self.levels[0].vertex_count()).collect();
        for pm in &self.parent_maps {
            for slot in map.iter_mut() {
                *slot = pm[*slot];
            }
        }
        map
    }
}

/// Plane-sum quadric E(p) = p'Ap + 2b'p + c.
#[derive(Debug, Clone, Copy)]
struct Quadric {
    a: Mat3,
    b: Vec3,
    c: f64,
}

impl Quadric {
    fn zero() -> Quadric {
        Quadric { a: Mat3::zeros(), b: Vec3::ZERO, c: 0.0 }
    }

    fn from_plane(normal: Vec3, d: f64) -> Quadric {
        Quadric { a: Mat3::outer(normal, normal), b: normal * d, c: d * d }
    }

    fn add(&self, other: &Quadric) -> Quadric {
        Quadric { a: self.a.add(&other.a), b: self.b + other.b, c: self.c + other.c }
    }

    fn error(&self, p: Vec3) -> f64 {
        p.dot(self.a.mul_vec(p)) + 2.0 * self.b.dot(p) + self.c
    }

    /// Error-minimizing point, or the given midpoint when the system is
    /// singular or the solve is numerically worse than the midpoint.
    fn minimizer_or(&self, midpoint: Vec3) -> Vec3 {
        if let Some(inv) = self.a.try_inverse() {
            let p = inv.mul_vec(-self.b);
            if p.is_finite() && self.error(p) <= self.error(midpoint) {
                return p;
            }
        }
        midpoint
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    cost: f64,
    edge_id: usize,
    a: usize,
    b: usize,
    version_a: u64,
    version_b: u64,
    point: Vec3,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &HeapEntry) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &HeapEntry) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &HeapEntry) -> Ordering {
        self.cost.total_cmp(&other.cost).then(self.edge_id.cmp(&other.edge_id))
    }
}

struct CollapseState {
    positions: Vec<Vec3>,
    segments: Option<Vec<u32>>,
    respect_segments: bool,
    live: Vec<bool>,
    live_count: usize,
    /// For dead vertices, the vertex that absorbed them.
    absorbed_into: Vec<usize>,
    adjacency: Vec<BTreeSet<usize>>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<BTreeSet<usize>>,
    quadrics: Vec<Quadric>,
    version: Vec<u64>,
    /// Stable tie-breaking ids, assigned at mesh load and then in
    /// acceptance order as collapses create edges.
    edge_ids: BTreeMap<(usize, usize), usize>,
    next_edge_id: usize,
}

impl CollapseState {
    fn new(mesh: &TriMesh, respect_segments: bool) -> CollapseState {
        let n = mesh.vertex_count();
        let mut adjacency = vec![BTreeSet::new(); n];
        let mut vertex_faces = vec![BTreeSet::new(); n];
        let mut quadrics = vec![Quadric::zero(); n];
        for (fid, f) in mesh.faces.iter().enumerate() {
            let [p0, p1, p2] =
                [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
            let cross = (p1 - p0).cross(p2 - p0);
            if let Some(normal) = cross.try_normalized() {
                let q = Quadric::from_plane(normal, -normal.dot(p0));
                for &v in f {
                    quadrics[v] = quadrics[v].add(&q);
                }
            }
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                adjacency[a].insert(b);
                adjacency[b].insert(a);
            }
            for &v in f {
                vertex_faces[v].insert(fid);
            }
        }
        let mut edge_ids = BTreeMap::new();
        let mut next_edge_id = 0;
        for (a, nbrs) in adjacency.iter().enumerate() {
            for &b in nbrs.iter().filter(|&&b| b > a) {
                edge_ids.insert((a, b), next_edge_id);
                next_edge_id += 1;
            }
        }
        CollapseState {
            positions: mesh.vertices.clone(),
            segments: mesh.segments.clone(),
            respect_segments,
            live: vec![true; n],
            live_count: n,
            absorbed_into: (0..n).collect(),
            adjacency,
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vertex_faces,
            quadrics,
            version: vec![0; n],
            edge_ids,
            next_edge_id,
        }
    }

    fn crosses_segments(&self, a: usize, b: usize) -> bool {
        match (&self.segments, self.respect_segments) {
            (Some(segs), true) => segs[a] != segs[b],
            _ => false,
        }
    }

    fn candidate(&self, a: usize, b: usize) -> HeapEntry {
        debug_assert!(a < b);
        let q = self.quadrics[a].add(&self.quadrics[b]);
        let midpoint = (self.positions[a] + self.positions[b]) * 0.5;
        let point = q.minimizer_or(midpoint);
        HeapEntry {
            cost: q.error(point),
            edge_id: *self.edge_ids.get(&(a, b)).expect("edge has no id"),
            a,
            b,
            version_a: self.version[a],
            version_b: self.version[b],
            point,
        }
    }

    fn is_fresh(&self, e: &HeapEntry) -> bool {
        self.live[e.a]
            && self.live[e.b]
            && self.version[e.a] == e.version_a
            && self.version[e.b] == e.version_b
    }

    /// True when moving both endpoints to `point` turns any surviving
    /// incident face through more than 90 degrees or degenerates it.
    fn flips_a_normal(&self, e: &HeapEntry) -> bool {
        let moved = |v: usize| if v == e.a || v == e.b { e.point } else { self.positions[v] };
        for &vi in [e.a, e.b].iter() {
            for &fid in &self.vertex_faces[vi] {
                if !self.face_alive[fid] {
                    continue;
                }
                let f = self.faces[fid];
                if f.contains(&e.a) && f.contains(&e.b) {
                    continue;
                }
                let before = (self.positions[f[1]] - self.positions[f[0]])
                    .cross(self.positions[f[2]] - self.positions[f[0]]);
                if before.norm_sq() < 1e-30 {
                    continue;
                }
                let after = (moved(f[1]) - moved(f[0])).cross(moved(f[2]) - moved(f[0]));
                if after.norm_sq() < 1e-30 || before.dot(after) < 0.0 {
                    return true;
                }
            }
        }
        false
    }

    /// All live, segment-respecting candidates, for heap reseeding.
    fn all_candidates(&self) -> Vec<HeapEntry> {
        let mut out = Vec::new();
        for a in 0..self.positions.len() {
            if !self.live[a] {
                continue;
            }
            for &b in self.adjacency[a].iter().filter(|&&b| b > a) {
                if !self.crosses_segments(a, b) {
                    out.push(self.candidate(a, b));
                }
            }
        }
        out
    }

    fn accept(&mut self, e: &HeapEntry, heap: &mut BinaryHeap<Reverse<HeapEntry>>) {
        let (a, b) = (e.a, e.b);
        for fid in self.vertex_faces[b].clone() {
            if !self.face_alive[fid] {
                continue;
            }
            let f = &mut self.faces[fid];
            if f.contains(&a) {
                self.face_alive[fid] = false;
            } else {
                for corner in f.iter_mut() {
                    if *corner == b {
                        *corner = a;
                    }
                }
                self.vertex_faces[a].insert(fid);
            }
        }
        for x in self.adjacency[b].clone() {
            self.adjacency[x].remove(&b);
            if x != a {
                self.adjacency[x].insert(a);
                self.adjacency[a].insert(x);
            }
        }
        self.adjacency[a].remove(&b);
        self.adjacency[b].clear();
        self.positions[a] = e.point;
        self.quadrics[a] = self.quadrics[a].add(&self.quadrics[b]);
        self.live[b] = false;
        self.absorbed_into[b] = a;
        self.live_count -= 1;
        self.version[a] += 1;
        self.version[b] += 1;
        for x in self.adjacency[a].clone() {
            let key = (a.min(x), a.max(x));
            if !self.edge_ids.contains_key(&key) {
                self.edge_ids.insert(key, self.next_edge_id);
                self.next_edge_id += 1;
            }
            if !self.crosses_segments(key.0, key.1) {
                heap.push(Reverse(self.candidate(key.0, key.1)));
            }
        }
    }
}

/// Greedy minimum-quadric-error edge collapse down to `target_vertices`.
/// With `respect_segments`, edges joining different segments are never
/// collapsed, so every segment survives into the output.
pub fn simplify(
    mesh: &TriMesh,
    target_vertices: usize,
    respect_segments: bool,
) -> Result<Simplified, HierarchyError> {
    let n = mesh.vertex_count();
    if target_vertices > n {
        return Err(HierarchyError::TargetAboveVertexCount { target: target_vertices, count: n });
    }
    if respect_segments {
        let segs = mesh.segments.as_ref().ok_or(HierarchyError::MissingSegments)?;
        let distinct: BTreeSet<u32> = segs.iter().copied().collect();
        if target_vertices < distinct.len() {
            return Err(HierarchyError::TargetBelowSegmentCount {
                target: target_vertices,
                segments: distinct.len(),
            });
        }
    }
    let mut state = CollapseState::new(mesh, respect_segments);
    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::new();
    for entry in state.all_candidates() {
        heap.push(Reverse(entry));
    }
    let mut collapses = Vec::with_capacity(n - target_vertices);
    while state.live_count > target_vertices {
        match heap.pop() {
            Some(Reverse(e)) => {
                if !state.is_fresh(&e) || state.flips_a_normal(&e) {
                    continue;
                }
                state.accept(&e, &mut heap);
                collapses.push(Collapse {
                    kept: e.a,
                    removed: e.b,
                    cost: e.cost,
                    point: e.point,
                    forced: false,
                });
            }
            None => {
                let fresh = state.all_candidates();
                if fresh.is_empty() {
                    return Err(HierarchyError::TargetUnreachable {
                        target: target_vertices,
                        floor: state.live_count,
                    });
                }
                if fresh.iter().any(|c| !state.flips_a_normal(c)) {
                    for c in fresh {
                        heap.push(Reverse(c));
                    }
                } else {
                    let e = *fresh.iter().min().expect("non-empty candidate list");
                    state.accept(&e, &mut heap);
                    collapses.push(Collapse {
                        kept: e.a,
                        removed: e.b,
                        cost: e.cost,
                        point: e.point,
                        forced: true,
                    });
                }
            }
        }
    }
    Ok(assemble(mesh, state, collapses))
}

fn assemble(mesh: &TriMesh, state: CollapseState, collapses: Vec<Collapse>) -> Simplified {
    let n = mesh.vertex_count();
    let mut root = vec![0usize; n];
    for v in 0..n {
        let mut r = v;
        while !state.live[r] {
            r = state.absorbed_into[r];
        }
        root[v] = r;
    }
    let mut coarse_of = vec![usize::MAX; n];
    let mut vertices = Vec::with_capacity(state.live_count);
    let mut segments = state.segments.as_ref().map(|_| Vec::with_capacity(state.live_count));
    for v in 0..n {
        if state.live[v] {
            coarse_of[v] = vertices.len();
            vertices.push(state.positions[v]);
            if let (Some(out), Some(segs)) = (segments.as_mut(), state.segments.as_ref()) {
                out.push(segs[v]);
            }
        }
    }
    let parent_map: Vec<usize> = (0..n).map(|v| coarse_of[root[v]]).collect();
    let mut seen = BTreeSet::new();
    let mut faces = Vec::new();
    for f in &mesh.faces {
        let mapped = [parent_map[f[0]], parent_map[f[1]], parent_map[f[2]]];
        if mapped[0] == mapped[1] || mapped[1] == mapped[2] || mapped[0] == mapped[2] {
            continue;
        }
        let mut key = mapped;
        key.sort_unstable();
        if seen.insert(key) {
            faces.push(mapped);
        }
    }
    Simplified { mesh: TriMesh { vertices, faces, segments }, parent_map, collapses }
}

/// Sizes stepping down by ~4x from the mesh size to the segment count.
pub fn default_level_sizes(vertex_count: usize, segment_count: usize) -> Vec<usize> {
    let mut sizes = vec![vertex_count];
    let mut current = vertex_count;
    while current / 4 > segment_count {
        current /= 4;
        sizes.push(current);
    }
    if *sizes.last().expect("at least one level") > segment_count {
        sizes.push(segment_count);
    }
    sizes
}

/// Repeatedly simplifies with the segment constraint until the mesh has
/// one vertex per segment (the last level size).
pub fn build_hierarchy(
    mesh: &TriMesh,
    level_sizes: &[usize],
) -> Result<MeshHierarchy, HierarchyError> {
    let segs = mesh.segments.as_ref().ok_or(HierarchyError::MissingSegments)?;
    let segment_count = segs.iter().copied().collect::<BTreeSet<u32>>().len();
    if level_sizes.first() != Some(&mesh.vertex_count()) {
        return Err(HierarchyError::FirstLevelMismatch {
            expected: mesh.vertex_count(),
            got: level_sizes.first().copied().unwrap_or(0),
        });
    }
    for (i, pair) in level_sizes.windows(2).enumerate() {
        if pair[1] >= pair[0] {
            return Err(HierarchyError::LevelSizesNotDecreasing { index: i + 1 });
        }
    }
    let last = *level_sizes.last().expect("at least one level");
    if last != segment_count {
        return Err(HierarchyError::LastLevelNotSegmentCount { last, segments: segment_count });
    }
    let mut levels = vec![mesh.clone()];
    let mut parent_maps = Vec::new();
    let mut edge_lists = vec![mesh.edges()];
    for &size in &level_sizes[1..] {
        let fine = levels.last().expect("at least one level");
        let simplified = simplify(fine, size, true)?;
        let quotient: BTreeSet<(usize, usize)> = edge_lists
            .last()
            .expect("at least one level")
            .iter()
            .filter_map(|&(u, v)| {
                let (pu, pv) = (simplified.parent_map[u], simplified.parent_map[v]);
                if pu == pv {
                    None
                } else {
                    Some((pu.min(pv), pu.max(pv)))
                }
            })
            .collect();
        edge_lists.push(quotient.into_iter().collect());
        parent_maps.push(simplified.parent_map);
        levels.push(simplified.mesh);
    }
    Ok(MeshHierarchy { levels, parent_maps, edge_lists })
}

/// Component-wise max over each coarse vertex's children.
pub fn pool(
    features: &[Vec<f64>],
    parent_map: &[usize],
    coarse_count: usize,
) -> Result<Vec<Vec<f64>>, HierarchyError> {
    if features.len() != parent_map.len() {
        return Err(HierarchyError::FeatureRows {
            expected: parent_map.len(),
            got: features.len(),
        });
    }
    let width = features.first().map_or(0, Vec::len);
    let mut out: Vec<Option<Vec<f64>>> = vec![None; coarse_count];
    for (v, row) in features.iter().enumerate() {
        if row.len() != width {
            return Err(HierarchyError::FeatureWidth { expected: width, got: row.len() });
        }
        let p = parent_map[v];
        if p >= coarse_count {
            return Err(HierarchyError::ParentOutOfRange { vertex: v, parent: p });
        }
        match &mut out[p] {
            None => out[p] = Some(row.clone()),
            Some(acc) => {
                for (slot, &x) in acc.iter_mut().zip(row) {
                    *slot = slot.max(x);
                }
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(v, cell)| cell.ok_or(HierarchyError::EmptyPoolCell { vertex: v }))
        .collect()
}

/// Copies each coarse vertex's row to all of its children.
pub fn unpool(
    features: &[Vec<f64>],
    parent_map: &[usize],
) -> Result<Vec<Vec<f64>>, HierarchyError> {
    parent_map
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            features
                .get(p)
                .cloned()
                .ok_or(HierarchyError::ParentOutOfRange { vertex: v, parent: p })
        })
        .collect()
}
