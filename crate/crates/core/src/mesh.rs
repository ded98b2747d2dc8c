//! Indexed triangle meshes plus the operators the rest of the pipeline
//! leans on: normals, graph Laplacians, neighborhood smoothing, exact
//! nearest-vertex queries and midpoint subdivision.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::Vec3;
use crate::linalg::SparseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum MeshError {
    FaceIndexOutOfRange { face: usize, index: usize },
    DegenerateFace { face: usize },
    NonFiniteVertex { vertex: usize },
    SegmentCountMismatch { expected: usize, got: usize },
    ZeroAreaFace { face: usize },
    IsolatedVertex { vertex: usize },
    EmptyNeighborhood { vertex: usize },
    NonManifoldEdge { a: usize, b: usize },
    NonManifoldBoundary { vertex: usize },
    EmptyMesh,
}

impl core::fmt::Display for MeshError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MeshError::FaceIndexOutOfRange { face, index } => {
                write!(f, "face {face} references out-of-range vertex {index}")
            }
            MeshError::DegenerateFace { face } => {
                write!(f, "face {face} repeats a vertex index")
            }
            MeshError::NonFiniteVertex { vertex } => {
                write!(f, "vertex {vertex} has a non-finite coordinate")
            }
            MeshError::SegmentCountMismatch { expected, got } => {
                write!(f, "segment labels: expected {expected}, got {got}")
            }
            MeshError::ZeroAreaFace { face } => {
                write!(f, "face {face} has zero area")
            }
            MeshError::IsolatedVertex { vertex } => {
                write!(f, "vertex {vertex} belongs to no face or edge")
            }
            MeshError::EmptyNeighborhood { vertex } => {
                write!(f, "vertex {vertex} has an empty 1-ring")
            }
            MeshError::NonManifoldEdge { a, b } => {
                write!(f, "edge ({a}, {b}) is shared by more than two faces")
            }
            MeshError::NonManifoldBoundary { vertex } => {
                write!(f, "boundary forks at vertex {vertex}")
            }
            MeshError::EmptyMesh => write!(f, "mesh has no vertices"),
        }
    }
}

impl core::error::Error for MeshError {}

/// Indexed triangle mesh. Positions are in meters. `segments` optionally
/// labels every vertex with an integer region id.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub segments: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = TriMesh { vertices, faces, segments: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_segments(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        segments: Vec<u32>,
    ) -> Result<Self, MeshError> {
        let mesh = TriMesh { vertices, faces, segments: Some(segments) };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for (vi, v) in self.vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(MeshError::NonFiniteVertex { vertex: vi });
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &idx in f {
                if idx >= self.vertices.len() {
                    return Err(MeshError::FaceIndexOutOfRange { face: fi, index: idx });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }
        if let Some(segs) = &self.segments {
            if segs.len() != self.vertices.len() {
                return Err(MeshError::SegmentCountMismatch {
                    expected: self.vertices.len(),
                    got: segs.len(),
                });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Unique undirected edges as `(low, high)` pairs, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Sorted 1-ring neighbor lists per vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                nbrs[a].insert(b);
                nbrs[b].insert(a);
            }
        }
        nbrs.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| self.vertices[a].distance(self.vertices[b]))
            .sum();
        total / edges.len() as f64
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let e1 = self.vertices[b] - self.vertices[a];
        let e2 = self.vertices[c] - self.vertices[a];
        0.5 * e1.cross(e2).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|fi| self.face_area(fi)).sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.min_components(*v);
            hi = hi.max_components(*v);
        }
        (lo, hi)
    }

    /// One unit normal per face, right-hand rule from vertex order.
    pub fn face_normals(&self) -> Result<Vec<Vec3>, MeshError> {
        let mut out = Vec::with_capacity(self.faces.len());
        for (fi, f) in self.faces.iter().enumerate() {
            let e1 = self.vertices[f[1]] - self.vertices[f[0]];
            let e2 = self.vertices[f[2]] - self.vertices[f[0]];
            let n = e1.cross(e2);
            match n.try_normalized() {
                Some(u) => out.push(u),
                None => return Err(MeshError::ZeroAreaFace { face: fi }),
            }
        }
        Ok(out)
    }

    /// Area-weighted average of incident face normals, renormalized.
    /// Every vertex must belong to at least one face.
    pub fn vertex_normals(&self) -> Result<Vec<Vec3>, MeshError> {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let e1 = self.vertices[f[1]] - self.vertices[f[0]];
            let e2 = self.vertices[f[2]] - self.vertices[f[0]];
            let cross = e1.cross(e2);
            if cross.norm() == 0.0 {
                return Err(MeshError::ZeroAreaFace { face: fi });
            }
            // Cross product length is twice the face area, so adding the
            // raw cross product is exactly area weighting.
            for &vi in f {
                acc[vi] += cross;
            }
        }
        let mut out = Vec::with_capacity(acc.len());
        for (vi, n) in acc.into_iter().enumerate() {
            match n.try_normalized() {
                Some(u) => out.push(u),
                None => return Err(MeshError::IsolatedVertex { vertex: vi }),
            }
        }
        Ok(out)
    }

    /// Symmetric normalized graph Laplacian `I - D^{-1/2} A D^{-1/2}` of the
    /// mesh connectivity. Eigenvalues lie in `[0, 2]`.
    pub fn normalized_laplacian(&self) -> Result<SparseMatrix, MeshError> {
        normalized_laplacian_from_edges(self.vertices.len(), &self.edges())
    }

    /// Iteratively replaces each selected vertex by the average of its
    /// 1-ring. Updates are applied sequentially in ascending vertex order,
    /// so every single-vertex move lowers the quadratic edge energy.
    pub fn laplacian_smooth(
        &self,
        vertex_set: &[usize],
        iterations: usize,
    ) -> Result<TriMesh, MeshError> {
        let adjacency = self.adjacency();
        let selected: BTreeSet<usize> = vertex_set.iter().copied().collect();
        for &vi in &selected {
            if vi >= self.vertices.len() || adjacency[vi].is_empty() {
                return Err(MeshError::EmptyNeighborhood { vertex: vi });
            }
        }
        let mut out = self.clone();
        for _ in 0..iterations {
            for &vi in &selected {
                let nbrs = &adjacency[vi];
                let mut mean = Vec3::ZERO;
                for &n in nbrs {
                    mean += out.vertices[n];
                }
                out.vertices[vi] = mean / nbrs.len() as f64;
            }
        }
        Ok(out)
    }

    /// Midpoint 1-to-4 subdivision. See [`TriMesh::subdivide_tracked`] for
    /// the variant that also reports which edge each new vertex bisects.
    pub fn subdivide(&self) -> Result<TriMesh, MeshError> {
        self.subdivide_tracked().map(|s| s.mesh)
    }

    pub fn subdivide_tracked(&self) -> Result<Subdivision, MeshError> {
        let mut edge_faces: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                let count = edge_faces.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 });
                }
            }
        }
        let base = self.vertices.len();
        let mut vertices = self.vertices.clone();
        let mut segments = self.segments.clone();
        let mut edge_parents = Vec::with_capacity(edge_faces.len());
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (&(a, b), _) in edge_faces.iter() {
            let idx = vertices.len();
            vertices.push((self.vertices[a] + self.vertices[b]) * 0.5);
            if let Some(segs) = segments.as_mut() {
                segs.push(segs[a.min(b)]);
            }
            midpoint.insert((a, b), idx);
            edge_parents.push((a, b));
        }
        let mid = |a: usize, b: usize| midpoint[&(a.min(b), a.max(b))];
        let mut faces = Vec::with_capacity(self.faces.len() * 4);
        for &[a, b, c] in &self.faces {
            let mab = mid(a, b);
            let mbc = mid(b, c);
            let mca = mid(c, a);
            faces.push([a, mab, mca]);
            faces.push([b, mbc, mab]);
            faces.push([c, mca, mbc]);
            faces.push([mab, mbc, mca]);
        }
        let mesh = TriMesh { vertices, faces, segments };
        mesh.validate()?;
        Ok(Subdivision { mesh, base_vertex_count: base, edge_parents })
    }

    /// Undirected edges that belong to exactly one face.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
            .into_iter()
            .filter_map(|(e, c)| if c == 1 { Some(e) } else { None })
            .collect()
    }

    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        for (a, b) in self.boundary_edges() {
            set.insert(a);
            set.insert(b);
        }
        set
    }

    /// Closed boundary loops, each an ordered vertex cycle following face
    /// orientation. Loops are rotated to start at their smallest vertex and
    /// sorted by that vertex.
    pub fn boundary_loops(&self) -> Result<Vec<Vec<usize>>, MeshError> {
        let mut counts: BTreeMap<(usize, usize), (usize, (usize, usize))> = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let e = counts.entry((a.min(b), a.max(b))).or_insert((0, (a, b)));
                e.0 += 1;
            }
        }
        let mut next: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, (count, (a, b))) in counts {
            if count != 1 {
                continue;
            }
            // A directed face edge (a, b) on the boundary means the face is
            // on its left; walking b -> a traverses the hole with the same
            // orientation convention everywhere.
            if next.insert(b, a).is_some() {
                return Err(MeshError::NonManifoldBoundary { vertex: b });
            }
        }
        let mut loops = Vec::new();
        let mut visited: BTreeSet<usize> = BTreeSet::new();
        for &start in next.keys() {
            if visited.contains(&start) {
                continue;
            }
            let mut ring = Vec::new();
            let mut cur = start;
            loop {
                if !visited.insert(cur) {
                    return Err(MeshError::NonManifoldBoundary { vertex: cur });
                }
                ring.push(cur);
                cur = match next.get(&cur) {
                    Some(&n) => n,
                    None => return Err(MeshError::NonManifoldBoundary { vertex: cur }),
                };
                if cur == start {
                    break;
                }
            }
            let min_pos = ring
                .iter()
                .enumerate()
                .min_by_key(|(_, &v)| v)
                .map(|(i, _)| i)
                .unwrap_or(0);
            ring.rotate_left(min_pos);
            loops.push(ring);
        }
        loops.sort_by_key(|r| r[0]);
        Ok(loops)
    }
}

/// Result of [`TriMesh::subdivide_tracked`]: vertices `0..base_vertex_count`
/// are the originals, vertex `base_vertex_count + k` bisects `edge_parents[k]`.
#[derive(Debug, Clone)]
pub struct Subdivision {
    pub mesh: TriMesh,
    pub base_vertex_count: usize,
    pub edge_parents: Vec<(usize, usize)>,
}

/// Normalized graph Laplacian of an explicit edge list over `n` vertices.
pub fn normalized_laplacian_from_edges(
    n: usize,
    edges: &[(usize, usize)],
) -> Result<SparseMatrix, MeshError> {
    let mut degree = vec![0usize; n];
    let unique: BTreeSet<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    for &(a, b) in &unique {
        degree[a] += 1;
        degree[b] += 1;
    }
    for (vi, &d) in degree.iter().enumerate() {
        if d == 0 {
            return Err(MeshError::IsolatedVertex { vertex: vi });
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(n + 2 * unique.len());
    for i in 0..n {
        triplets.push((i, i, 1.0));
    }
    for &(a, b) in &unique {
        let w = -1.0 / f64::sqrt((degree[a] * degree[b]) as f64);
        triplets.push((a, b, w));
        triplets.push((b, a, w));
    }
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

/// Drop vertices unused by `faces` and reindex. Returns the compacted
/// vertex list, rewritten faces, and the old-to-new index map.
pub fn compact_faces(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
) -> (Vec<Vec3>, Vec<[usize; 3]>, Vec<Option<usize>>) {
    let mut used = vec![false; vertices.len()];
    for f in faces {
        for &v in f {
            used[v] = true;
        }
    }
    let mut remap: Vec<Option<usize>> = vec![None; vertices.len()];
    let mut out_vertices = Vec::new();
    for (vi, &u) in used.iter().enumerate() {
        if u {
            remap[vi] = Some(out_vertices.len());
            out_vertices.push(vertices[vi]);
        }
    }
    let out_faces = faces
        .iter()
        .map(|f| [remap[f[0]].unwrap(), remap[f[1]].unwrap(), remap[f[2]].unwrap()])
        .collect();
    (out_vertices, out_faces, remap)
}

/// Gauss-Seidel neighborhood averaging of an arbitrary per-vertex vector
/// field over fixed mesh connectivity; same update rule as
/// [`TriMesh::laplacian_smooth`] but acting on `field` instead of positions.
pub fn smooth_vertex_field(
    mesh: &TriMesh,
    field: &[Vec3],
    vertex_set: &[usize],
    iterations: usize,
) -> Result<Vec<Vec3>, MeshError> {
    assert_eq!(field.len(), mesh.vertices.len(), "field length mismatch");
    let adjacency = mesh.adjacency();
    let selected: BTreeSet<usize> = vertex_set.iter().copied().collect();
    for &vi in &selected {
        if vi >= field.len() || adjacency[vi].is_empty() {
            return Err(MeshError::EmptyNeighborhood { vertex: vi });
        }
    }
    let mut out = field.to_vec();
    for _ in 0..iterations {
        for &vi in &selected {
            let nbrs = &adjacency[vi];
            let mut mean = Vec3::ZERO;
            for &n in nbrs {
                mean += out[n];
            }
            out[vi] = mean / nbrs.len() as f64;
        }
    }
    Ok(out)
}

/// Uniform-grid index over a point set answering exact nearest-vertex
/// queries. Ties are broken by the lowest vertex index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    cell: f64,
    origin: Vec3,
    cells: BTreeMap<(i64, i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    /// Index a mesh's vertices; cell size is the mean edge length.
    pub fn build(mesh: &TriMesh) -> Result<SpatialIndex, MeshError> {
        let mut cell = mesh.mean_edge_length();
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        Self::from_points(mesh.vertices.clone(), cell)
    }

    pub fn from_points(points: Vec<Vec3>, cell: f64) -> Result<SpatialIndex, MeshError> {
        if points.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut origin = points[0];
        for p in &points {
            origin = origin.min_components(*p);
        }
        let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::cell_of(*p, origin, cell))
                .or_default()
                .push(i);
        }
        Ok(SpatialIndex { points, cell, origin, cells })
    }

    fn cell_of(p: Vec3, origin: Vec3, cell: f64) -> (i64, i64, i64) {
        let q = (p - origin) / cell;
        (
            f64::floor(q.x) as i64,
            f64::floor(q.y) as i64,
            f64::floor(q.z) as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Exact nearest point to `query` as `(index, distance)`.
    pub fn nearest(&self, query: Vec3) -> (usize, f64) {
        let (cx, cy, cz) = Self::cell_of(query, self.origin, self.cell);
        let mut best: Option<(f64, usize)> = None;
        let mut ring: i64 = 0;
        loop {
            let mut any_cell_in_bounds = false;
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = (cx + dx, cy + dy, cz + dz);
                        if let Some(ids) = self.cells.get(&key) {
                            any_cell_in_bounds = true;
                            for &i in ids {
                                let d2 = (self.points[i] - query).norm_sq();
                                let better = match best {
                                    None => true,
                                    Some((bd, bi)) => {
                                        d2 < bd || (d2 == bd && i < bi)
                                    }
                                };
                                if better {
                                    best = Some((d2, i));
                                }
                            }
                        }
                    }
                }
            }
            let _ = any_cell_in_bounds;
            if let Some((bd2, bi)) = best {
                // Any point in ring r+1 lies at distance >= r * cell from
                // the query, so once that bound strictly exceeds the best
                // distance no farther ring can win (ties included).
                let safe = ring as f64 * self.cell;
                if safe * safe > bd2 {
                    return (bi, f64::sqrt(bd2));
                }
            }
            ring += 1;
            if ring > self.max_ring(cx, cy, cz) {
                let (bd2, bi) = best.expect("non-empty index always yields a best");
                return (bi, f64::sqrt(bd2));
            }
        }
    }

    fn max_ring(&self, cx: i64, cy: i64, cz: i64) -> i64 {
        let mut r = 0i64;
        for &(x, y, z) in self.cells.keys() {
            r = r
                .max((x - cx).abs())
                .max((y - cy).abs())
                .max((z - cz).abs());
        }
        r
    }
}

/// Human-readable one-line summary used by diagnostics.
pub fn describe(mesh: &TriMesh) -> String {
    format!(
        "{} vertices, {} faces, {} segment labels",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.segments.as_ref().map_or(0, |s| s.len())
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriMesh {
        TriMesh::new(vertices, faces).unwrap()
    }

    fn unit_right_triangle() -> TriMesh {
        tri(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
    }

    /// Unit cube triangulated so each face diagonal runs through the
    /// tetrahedrally-placed corners; every corner then sees equal area
    /// from its three incident cube faces.
    fn cube() -> TriMesh {
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    (i & 1) as f64,
                    ((i >> 1) & 1) as f64,
                    ((i >> 2) & 1) as f64,
                )
            })
            .collect();
        let faces = vec![
            [0, 2, 3],
            [0, 3, 1],
            [0, 6, 2],
            [0, 4, 6],
            [0, 1, 5],
            [0, 5, 4],
            [1, 3, 5],
            [3, 7, 5],
            [2, 6, 3],
            [3, 6, 7],
            [4, 5, 6],
            [5, 7, 6],
        ];
        tri(vertices, faces)
    }

    fn grid(nx: usize, ny: usize) -> TriMesh {
        let mut vertices = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                vertices.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = j * nx + i;
                let b = a + 1;
                let c = a + nx;
                let d = c + 1;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        tri(vertices, faces)
    }

    fn icosahedron() -> TriMesh {
        let p = (1.0 + 5.0f64.sqrt()) / 2.0;
        let raw = [
            (-1.0, p, 0.0),
            (1.0, p, 0.0),
            (-1.0, -p, 0.0),
            (1.0, -p, 0.0),
            (0.0, -1.0, p),
            (0.0, 1.0, p),
            (0.0, -1.0, -p),
            (0.0, 1.0, -p),
            (p, 0.0, -1.0),
            (p, 0.0, 1.0),
            (-p, 0.0, -1.0),
            (-p, 0.0, 1.0),
        ];
        let vertices: Vec<Vec3> = raw
            .iter()
            .map(|&(x, y, z)| Vec3::new(x, y, z).try_normalized().unwrap())
            .collect();
        let faces = vec![
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
        tri(vertices, faces)
    }

    #[test]
    fn validation_rejects_bad_faces() {
        let verts = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(matches!(
            TriMesh::new(verts.clone(), vec![[0, 1, 3]]),
            Err(MeshError::FaceIndexOutOfRange { face: 0, index: 3 })
        ));
        assert!(matches!(
            TriMesh::new(verts, vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace { face: 0 })
        ));
    }

    #[test]
    fn face_normal_of_ccw_planar_triangle_points_up() {
        let normals = unit_right_triangle().face_normals().unwrap();
        assert!((normals[0] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn face_normal_flips_with_orientation() {
        let mut m = unit_right_triangle();
        m.faces[0] = [0, 2, 1];
        let normals = m.face_normals().unwrap();
        assert!((normals[0] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn face_normals_match_independent_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pts: Vec<Vec3> = (0..3)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let m = TriMesh::new(pts.clone(), vec![[0, 1, 2]]).unwrap();
            let Ok(normals) = m.face_normals() else { continue };
            // Re-derive from a different base vertex: (c-b) x (a-b).
            let alt = (pts[2] - pts[1]).cross(pts[0] - pts[1]);
            let alt = alt.try_normalized().unwrap();
            assert!((normals[0] - alt).norm() < 1e-12);
        }
    }

    #[test]
    fn face_normals_report_zero_area_face() {
        let m = TriMesh::new(
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            m.face_normals(),
            Err(MeshError::ZeroAreaFace { face: 0 })
        ));
    }

    #[test]
    fn vertex_normal_on_flat_grid_interior_is_up() {
        let normals = grid(4, 4).vertex_normals().unwrap();
        let interior = 1 * 4 + 1;
        assert!((normals[interior] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn cube_corner_normals_are_diagonal() {
        let m = cube();
        let normals = m.vertex_normals().unwrap();
        let inv_sqrt3 = 1.0 / 3.0f64.sqrt();
        for (vi, v) in m.vertices.iter().enumerate() {
            let expect = Vec3::new(
                if v.x > 0.5 { inv_sqrt3 } else { -inv_sqrt3 },
                if v.y > 0.5 { inv_sqrt3 } else { -inv_sqrt3 },
                if v.z > 0.5 { inv_sqrt3 } else { -inv_sqrt3 },
            );
            assert!((normals[vi] - expect).norm() < 1e-12, "corner {vi}");
        }
    }

    #[test]
    fn icosphere_normals_stay_near_radial() {
        let m = icosahedron().subdivide().unwrap();
        let m = TriMesh::new(
            m.vertices.iter().map(|v| v.try_normalized().unwrap()).collect(),
            m.faces,
        )
        .unwrap();
        let normals = m.vertex_normals().unwrap();
        let max_deg = 5.0f64.to_radians().cos();
        for (v, n) in m.vertices.iter().zip(normals.iter()) {
            assert!(v.dot(*n) > max_deg, "normal deviates more than 5 degrees");
        }
    }

    #[test]
    fn vertex_normals_reject_isolated_vertex() {
        let m = TriMesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 5.0, 5.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            m.vertex_normals(),
            Err(MeshError::IsolatedVertex { vertex: 3 })
        ));
    }

    #[test]
    fn laplacian_of_single_edge_graph() {
        let l = normalized_laplacian_from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(l.get(0, 0), 1.0);
        assert_eq!(l.get(1, 1), 1.0);
        assert_eq!(l.get(0, 1), -1.0);
        assert_eq!(l.get(1, 0), -1.0);
    }

    #[test]
    fn laplacian_annihilates_sqrt_degree_vector() {
        let m = grid(5, 3);
        let l = m.normalized_laplacian().unwrap();
        let adj = m.adjacency();
        let x: Vec<f64> = adj.iter().map(|n| (n.len() as f64).sqrt()).collect();
        let y = l.matmul_vec(&x);
        for v in y {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_graph_laplacian_eigenvalues() {
        let l = normalized_laplacian_from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let d = l.to_dense();
        let m = nalgebra::DMatrix::from_fn(3, 3, |r, c| d.get(r, c));
        let mut eig: Vec<f64> = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eig[0].abs() < 1e-12);
        assert!((eig[1] - 1.5).abs() < 1e-12);
        assert!((eig[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric_and_psd() {
        let m = cube().subdivide().unwrap();
        assert!(m.vertex_count() <= 200);
        let l = m.normalized_laplacian().unwrap();
        assert!(l.is_symmetric(1e-12));
        let d = l.to_dense();
        let nm = nalgebra::DMatrix::from_fn(d.rows, d.cols, |r, c| d.get(r, c));
        let eig = nm.symmetric_eigen().eigenvalues;
        for v in eig.iter() {
            assert!(*v >= -1e-9, "eigenvalue {v} below zero");
            assert!(*v <= 2.0 + 1e-9, "eigenvalue {v} above two");
        }
    }

    #[test]
    fn laplacian_rejects_isolated_vertex() {
        assert!(matches!(
            normalized_laplacian_from_edges(3, &[(0, 1)]),
            Err(MeshError::IsolatedVertex { vertex: 2 })
        ));
    }

    #[test]
    fn smooth_zero_iterations_is_identity() {
        let m = grid(4, 4);
        let out = m.laplacian_smooth(&[5, 6], 0).unwrap();
        assert_eq!(out.vertices, m.vertices);
    }

    #[test]
    fn smooth_pulls_displaced_vertex_to_ring_average() {
        let m = tri(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(1.0, 0.7, 0.0),
            ],
            vec![[0, 1, 2]],
        );
        let out = m.laplacian_smooth(&[2], 1).unwrap();
        assert!((out.vertices[2] - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(out.vertices[0], m.vertices[0]);
        assert_eq!(out.vertices[1], m.vertices[1]);
    }

    #[test]
    fn smooth_keeps_uniform_grid_fixed() {
        let m = grid(5, 5);
        let interior: Vec<usize> = (0..25)
            .filter(|&v| {
                let (i, j) = (v % 5, v / 5);
                i > 0 && i < 4 && j > 0 && j < 4
            })
            .collect();
        let out = m.laplacian_smooth(&interior, 3).unwrap();
        for (a, b) in out.vertices.iter().zip(m.vertices.iter()) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }

    #[test]
    fn smooth_strictly_decreases_edge_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = grid(6, 6);
        for v in m.vertices.iter_mut() {
            v.z += rng.gen_range(-0.5..0.5);
        }
        let interior: Vec<usize> = (0..36)
            .filter(|&v| {
                let (i, j) = (v % 6, v / 6);
                i > 0 && i < 5 && j > 0 && j < 5
            })
            .collect();
        let energy = |mesh: &TriMesh| -> f64 {
            mesh.edges()
                .iter()
                .map(|&(a, b)| (mesh.vertices[a] - mesh.vertices[b]).norm_sq())
                .sum()
        };
        let mut prev = energy(&m);
        let mut cur = m;
        for _ in 0..10 {
            cur = cur.laplacian_smooth(&interior, 1).unwrap();
            let e = energy(&cur);
            assert!(e < prev, "energy must strictly decrease ({e} vs {prev})");
            prev = e;
        }
    }

    #[test]
    fn smooth_rejects_vertex_without_neighbors() {
        let m = TriMesh::new(
            vec![
                Vec3::ZERO,
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(9.0, 9.0, 9.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            m.laplacian_smooth(&[3], 1),
            Err(MeshError::EmptyNeighborhood { vertex: 3 })
        ));
    }

    #[test]
    fn nearest_at_vertex_returns_zero_distance() {
        let m = grid(4, 4);
        let index = SpatialIndex::build(&m).unwrap();
        let (vi, d) = index.nearest(m.vertices[7]);
        assert_eq!(vi, 7);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn nearest_breaks_ties_by_lowest_index() {
        let points = vec![
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(20.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(30.0, 0.0, 0.0),
            Vec3::new(40.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ];
        let index = SpatialIndex::from_points(points, 0.5).unwrap();
        // Query at the origin is exactly 1.0 from vertices 2 and 5.
        let (vi, d) = index.nearest(Vec3::ZERO);
        assert_eq!(vi, 2);
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_agrees_with_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let index = SpatialIndex::from_points(points.clone(), 0.11).unwrap();
        for _ in 0..1000 {
            let q = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, p) in points.iter().enumerate() {
                let d2 = (*p - q).norm_sq();
                if d2 < best.0 || (d2 == best.0 && i < best.1) {
                    best = (d2, i);
                }
            }
            let (vi, d) = index.nearest(q);
            assert_eq!(vi, best.1);
            assert!((d * d - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subdivide_single_triangle() {
        let m = unit_right_triangle().subdivide().unwrap();
        assert_eq!(m.vertex_count(), 6);
        assert_eq!(m.face_count(), 4);
    }

    #[test]
    fn subdivide_tetrahedron_counts() {
        let m = tri(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        );
        let s = m.subdivide().unwrap();
        assert_eq!(s.vertex_count(), 10);
        assert_eq!(s.face_count(), 16);
    }

    #[test]
    fn subdivide_preserves_area() {
        let m = cube();
        let s = m.subdivide().unwrap();
        let rel = (s.surface_area() - m.surface_area()).abs() / m.surface_area();
        assert!(rel < 1e-9);
        assert_eq!(s.face_count(), 4 * m.face_count());
    }

    #[test]
    fn subdivide_labels_midpoints_from_lower_endpoint() {
        let m = TriMesh::with_segments(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            vec![4, 7, 9],
        )
        .unwrap();
        let s = m.subdivide_tracked().unwrap();
        let segs = s.mesh.segments.as_ref().unwrap();
        for (k, &(a, b)) in s.edge_parents.iter().enumerate() {
            assert_eq!(segs[s.base_vertex_count + k], segs[a.min(b)]);
        }
        // Edge (0,1) midpoint takes label 4; edge (0,2) takes 4; edge (1,2) takes 7.
        assert_eq!(&segs[3..], &[4, 4, 7]);
    }

    #[test]
    fn subdivide_rejects_non_manifold_edge() {
        let m = tri(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, -1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        );
        assert!(matches!(
            m.subdivide(),
            Err(MeshError::NonManifoldEdge { a: 0, b: 1 })
        ));
    }

    #[test]
    fn boundary_loop_of_grid_is_perimeter() {
        let m = grid(3, 3);
        let loops = m.boundary_loops().unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 8);
        assert_eq!(loops[0][0], 0);
        let on_perimeter = |v: usize| {
            let (i, j) = (v % 3, v / 3);
            i == 0 || i == 2 || j == 0 || j == 2
        };
        assert!(loops[0].iter().all(|&v| on_perimeter(v)));
    }

    #[test]
    fn closed_mesh_has_no_boundary() {
        assert!(cube().boundary_loops().unwrap().is_empty());
        assert!(cube().boundary_vertices().is_empty());
    }

    #[test]
    fn field_smoothing_matches_position_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = grid(5, 4);
        for v in m.vertices.iter_mut() {
            v.z = rng.gen_range(-0.2..0.2);
        }
        let set: Vec<usize> = (0..m.vertex_count()).collect();
        let by_mesh = m.laplacian_smooth(&set, 4).unwrap();
        let by_field = smooth_vertex_field(&m, &m.vertices, &set, 4).unwrap();
        for (a, b) in by_mesh.vertices.iter().zip(by_field.iter()) {
            assert!((*a - *b).norm() < 1e-15);
        }
    }
}
