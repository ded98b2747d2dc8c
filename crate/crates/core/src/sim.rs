//! Mass-spring cloth: fabric presets, spring construction from a garment
//! mesh, semi-implicit Euler stepping with margin-based body collision, and
//! sequence simulation with warm-up transitions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geom::Vec3;
use crate::mesh::{MeshError, TriMesh};

/// Clearance kept between cloth and the collider surface, meters.
pub const COLLISION_MARGIN: f64 = 0.002;

/// Collider lookup radius used by the integrator, meters. Wide enough to
/// catch one substep of travel plus the collider's own motion between
/// frames, and far cheaper than scanning a whole grid cell's neighborhood.
const STEP_QUERY_RADIUS: f64 = 12.0 * COLLISION_MARGIN;

/// Rest-length multiplier applied to the springs of an elastic ring.
pub const ELASTIC_REST_SCALE: f64 = 0.8;

/// Kinetic energy (J) beyond which a sequence is declared unstable.
pub const STABILITY_KINETIC_LIMIT: f64 = 1e6;

/// Substeps per 30 fps frame; 20 gives 600 integration steps per second.
pub const DEFAULT_SUBSTEPS: usize = 20;

/// Wall-clock duration of one output frame, seconds.
pub const FRAME_DT: f64 = 1.0 / 30.0;

/// Default warm-up lengths: the body eases from the garment-resize shape to
/// its own shape, then from rest pose to the first frame's pose.
pub const DEFAULT_WARMUP_SHAPE_FRAMES: usize = 30;
pub const DEFAULT_WARMUP_POSE_FRAMES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// A position or velocity stopped being finite inside a step.
    NonFinite,
    /// Same, attributed to a simulated frame (warm-up frames included).
    NonFiniteAtFrame { frame: usize },
    /// Kinetic energy passed the stability bound at a simulated frame.
    Unstable { frame: usize, kinetic_energy: f64 },
    Mesh(MeshError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NonFinite => write!(f, "cloth state went non-finite"),
            SimError::NonFiniteAtFrame { frame } => {
                write!(f, "cloth state went non-finite at frame {frame}")
            }
            SimError::Unstable { frame, kinetic_energy } => {
                write!(f, "unstable at frame {frame}: kinetic energy {kinetic_energy:e} J")
            }
            SimError::Mesh(e) => write!(f, "collider mesh error: {e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<MeshError> for SimError {
    fn from(e: MeshError) -> Self {
        SimError::Mesh(e)
    }
}

/// Material constants for one fabric. The numeric values are this
/// project's config defaults, not measured values from any source: they
/// keep the expected ordering (silk soft and low-bend, leather and denim
/// stiff and high-bend) while staying inside the explicit integrator's
/// stability region at the default 480 Hz substep rate for meshes with
/// per-vertex masses down to roughly 1e-4 kg.
#[derive(Debug, Clone, PartialEq)]
pub struct FabricPreset {
    pub name: String,
    /// Edge spring stiffness, N/m.
    pub structural_stiffness: f64,
    /// Quad diagonal spring stiffness, N/m.
    pub shear_stiffness: f64,
    /// Cross-edge hinge spring stiffness, N/m.
    pub bend_stiffness: f64,
    /// Relative-velocity damping along springs, N·s/m.
    pub damping: f64,
    /// Area density, kg/m².
    pub density: f64,
}

impl FabricPreset {
    pub fn cotton() -> FabricPreset {
        FabricPreset {
            name: String::from("cotton"),
            structural_stiffness: 8.0,
            shear_stiffness: 6.0,
            bend_stiffness: 0.05,
            damping: 0.01,
            density: 0.20,
        }
    }

    pub fn leather() -> FabricPreset {
        FabricPreset {
            name: String::from("leather"),
            structural_stiffness: 25.0,
            shear_stiffness: 20.0,
            bend_stiffness: 0.8,
            damping: 0.03,
            density: 0.60,
        }
    }

    pub fn silk() -> FabricPreset {
        FabricPreset {
            name: String::from("silk"),
            structural_stiffness: 1.5,
            shear_stiffness: 1.0,
            bend_stiffness: 0.01,
            damping: 0.005,
            density: 0.08,
        }
    }

    pub fn denim() -> FabricPreset {
        FabricPreset {
            name: String::from("denim"),
            structural_stiffness: 15.0,
            shear_stiffness: 12.0,
            bend_stiffness: 0.3,
            damping: 0.02,
            density: 0.40,
        }
    }

    pub fn by_name(name: &str) -> Option<FabricPreset> {
        match name {
            "cotton" => Some(FabricPreset::cotton()),
            "leather" => Some(FabricPreset::leather()),
            "silk" => Some(FabricPreset::silk()),
            "denim" => Some(FabricPreset::denim()),
            _ => None,
        }
    }

    pub fn all() -> Vec<FabricPreset> {
        vec![
            FabricPreset::cotton(),
            FabricPreset::leather(),
            FabricPreset::silk(),
            FabricPreset::denim(),
        ]
    }

    fn stiffness_for(&self, kind: SpringKind) -> f64 {
        match kind {
            SpringKind::Structural => self.structural_stiffness,
            SpringKind::Shear => self.shear_stiffness,
            SpringKind::Bend => self.bend_stiffness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub kind: SpringKind,
    pub stiffness: f64,
}

/// Cloth particle system. Invariants: rest lengths and masses positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub springs: Vec<Spring>,
    pub pinned: Vec<bool>,
    pub masses: Vec<f64>,
    /// Relative-velocity damping coefficient shared by all springs.
    pub damping: f64,
    /// Vertex loops whose springs were shortened to act as elastics.
    pub elastic_rings: Vec<Vec<usize>>,
}

impl ClothState {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }
}

/// Total kinetic energy, joules.
pub fn kinetic_energy(state: &ClothState) -> f64 {
    state
        .velocities
        .iter()
        .zip(&state.masses)
        .map(|(v, m)| 0.5 * m * v.norm_sq())
        .sum()
}

/// Kinetic + gravitational + elastic energy against the given gravity.
pub fn mechanical_energy(state: &ClothState, gravity: Vec3) -> f64 {
    let mut e = kinetic_energy(state);
    for (p, m) in state.positions.iter().zip(&state.masses) {
        e -= m * gravity.dot(*p);
    }
    for s in &state.springs {
        let len = (state.positions[s.j] - state.positions[s.i]).norm();
        let stretch = len - s.rest_length;
        e += 0.5 * s.stiffness * stretch * stretch;
    }
    e
}

/// Total linear momentum, kg·m/s.
pub fn momentum(state: &ClothState) -> Vec3 {
    let mut p = Vec3::ZERO;
    for (v, m) in state.velocities.iter().zip(&state.masses) {
        p += *v * *m;
    }
    p
}

/// Mean relative elongation of the structural springs.
pub fn mean_edge_strain(state: &ClothState) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in &state.springs {
        if s.kind == SpringKind::Structural {
            let len = (state.positions[s.j] - state.positions[s.i]).norm();
            sum += (len - s.rest_length).abs() / s.rest_length;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Builds the particle system for a garment mesh.
///
/// Structural springs sit on every mesh edge. Each interior edge also
/// connects the two vertices opposite it: when the adjacent face pair forms
/// a quad with the shared edge as its diagonal (the shared edge is strictly
/// the longest of the four quad sides), that cross pair is the quad's other
/// diagonal and becomes a shear spring; otherwise the pair is a bending
/// hinge across the shared edge. The cloth's mass (density times surface
/// area) is spread uniformly over the vertices: per-area lumping would
/// leave lone-face boundary corners several times lighter than interior
/// vertices and push their local frequency against the explicit
/// integrator's stability edge. Springs along the listed elastic rings get
/// rest lengths scaled by [`ELASTIC_REST_SCALE`].
///
/// The mesh must be manifold with positive-length edges and no isolated
/// vertices; violations panic.
pub fn build_cloth(
    mesh: &TriMesh,
    fabric: &FabricPreset,
    elastic_rings: &[Vec<usize>],
) -> ClothState {
    let n = mesh.vertices.len();
    let mut edge_faces: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            edge_faces.entry(key).or_default().push(fi);
        }
    }

    let mut elastic_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for ring in elastic_rings {
        for k in 0..ring.len() {
            let a = ring[k];
            let b = ring[(k + 1) % ring.len()];
            if a != b {
                elastic_edges.insert((a.min(b), a.max(b)));
            }
        }
    }

    let mut springs = Vec::new();
    let mut cross_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (&(a, b), faces) in &edge_faces {
        let mut rest = (mesh.vertices[b] - mesh.vertices[a]).norm();
        assert!(rest > 0.0, "zero-length edge {a}-{b}");
        if elastic_edges.contains(&(a, b)) {
            rest *= ELASTIC_REST_SCALE;
        }
        springs.push(Spring {
            i: a,
            j: b,
            rest_length: rest,
            kind: SpringKind::Structural,
            stiffness: fabric.stiffness_for(SpringKind::Structural),
        });
        if faces.len() < 2 {
            continue;
        }
        let opposite = |fi: usize| {
            mesh.faces[fi]
                .iter()
                .copied()
                .find(|&v| v != a && v != b)
                .expect("triangle with a repeated vertex")
        };
        let u = opposite(faces[0]);
        let v = opposite(faces[1]);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if edge_faces.contains_key(&key) || !cross_pairs.insert(key) {
            continue;
        }
        let shared = (mesh.vertices[b] - mesh.vertices[a]).norm();
        let sides = [
            (mesh.vertices[u] - mesh.vertices[a]).norm(),
            (mesh.vertices[u] - mesh.vertices[b]).norm(),
            (mesh.vertices[v] - mesh.vertices[a]).norm(),
            (mesh.vertices[v] - mesh.vertices[b]).norm(),
        ];
        let kind = if sides.iter().all(|&s| shared > s) {
            SpringKind::Shear
        } else {
            SpringKind::Bend
        };
        springs.push(Spring {
            i: key.0,
            j: key.1,
            rest_length: (mesh.vertices[key.1] - mesh.vertices[key.0]).norm(),
            kind,
            stiffness: fabric.stiffness_for(kind),
        });
    }

    let share = fabric.density * mesh.surface_area() / n as f64;
    assert!(share > 0.0, "mesh with no surface area");
    let masses = vec![share; n];

    ClothState {
        positions: mesh.vertices.clone(),
        velocities: vec![Vec3::ZERO; n],
        springs,
        pinned: vec![false; n],
        masses,
        damping: fabric.damping,
        elastic_rings: elastic_rings.to_vec(),
    }
}

/// Static triangle collider with a uniform-grid index over face boxes.
#[derive(Debug, Clone)]
pub struct Collider {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    boxes: Vec<(Vec3, Vec3)>,
    cells: Vec<Vec<usize>>,
    dims: (i64, i64, i64),
    cell: f64,
    origin: Vec3,
    query_radius: f64,
}

impl Collider {
    pub fn new(mesh: &TriMesh) -> Result<Collider, SimError> {
        let normals = mesh.face_normals()?;
        let (lo, hi) = mesh.bounding_box();
        let extent = (hi - lo).to_array().into_iter().fold(0.0f64, f64::max);
        let cell = (extent / 24.0).max(4.0 * COLLISION_MARGIN);
        let origin = lo;
        let top = Self::cell_of(hi, origin, cell);
        let dims = (top.0 + 1, top.1 + 1, top.2 + 1);
        let mut cells = vec![Vec::new(); (dims.0 * dims.1 * dims.2) as usize];
        let mut boxes = Vec::with_capacity(mesh.faces.len());
        for (fi, f) in mesh.faces.iter().enumerate() {
            let mut flo = mesh.vertices[f[0]];
            let mut fhi = flo;
            for &v in &f[1..] {
                flo = flo.min_components(mesh.vertices[v]);
                fhi = fhi.max_components(mesh.vertices[v]);
            }
            boxes.push((flo, fhi));
            let a = Self::cell_of(flo, origin, cell);
            let b = Self::cell_of(fhi, origin, cell);
            for x in a.0..=b.0 {
                for y in a.1..=b.1 {
                    for z in a.2..=b.2 {
                        cells[Self::cell_index(dims, x, y, z)].push(fi);
                    }
                }
            }
        }
        Ok(Collider {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            normals,
            boxes,
            cells,
            dims,
            cell,
            origin,
            query_radius: cell + COLLISION_MARGIN,
        })
    }

    fn cell_of(p: Vec3, origin: Vec3, cell: f64) -> (i64, i64, i64) {
        let q = (p - origin) / cell;
        (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
    }

    fn cell_index(dims: (i64, i64, i64), x: i64, y: i64, z: i64) -> usize {
        ((x * dims.1 + y) * dims.2 + z) as usize
    }

    /// Signed distance to the surface within the query radius, with the
    /// closest surface point and the outward direction there. `None` means
    /// the point is farther than the radius from every face.
    pub fn signed_distance(&self, p: Vec3) -> Option<(f64, Vec3, Vec3)> {
        self.signed_distance_within(p, self.query_radius)
    }

    /// [`Collider::signed_distance`] with a caller-chosen radius. Tight radii
    /// make queries much cheaper; the integrator only needs to see a few
    /// margins past the surface.
    pub fn signed_distance_within(&self, p: Vec3, r: f64) -> Option<(f64, Vec3, Vec3)> {
        let lo = Self::cell_of(p - Vec3::new(r, r, r), self.origin, self.cell);
        let hi = Self::cell_of(p + Vec3::new(r, r, r), self.origin, self.cell);
        let mut best: Option<(f64, usize, Vec3)> = None;
        // Anything whose box is farther than the current best (or the radius)
        // cannot win; ties stay in so the face-index tie-break is unaffected.
        // Duplicate visits of a face lose the comparison, so no dedup needed.
        let mut limit = r * r;
        for x in lo.0.max(0)..=hi.0.min(self.dims.0 - 1) {
            for y in lo.1.max(0)..=hi.1.min(self.dims.1 - 1) {
                for z in lo.2.max(0)..=hi.2.min(self.dims.2 - 1) {
                    let ids = &self.cells[Self::cell_index(self.dims, x, y, z)];
                    for &fi in ids {
                        let (blo, bhi) = self.boxes[fi];
                        if aabb_distance_sq(p, blo, bhi) > limit {
                            continue;
                        }
                        let f = &self.faces[fi];
                        let c = closest_point_on_triangle(
                            p,
                            self.vertices[f[0]],
                            self.vertices[f[1]],
                            self.vertices[f[2]],
                        );
                        let d2 = (p - c).norm_sq();
                        let better = match &best {
                            None => true,
                            Some((bd2, bfi, _)) => {
                                d2 < *bd2 || (d2 == *bd2 && fi < *bfi)
                            }
                        };
                        if better {
                            best = Some((d2, fi, c));
                            limit = limit.min(d2);
                        }
                    }
                }
            }
        }
        let (d2, fi, c) = best?;
        if d2 > r * r {
            return None;
        }
        let d = d2.sqrt();
        let n = self.normals[fi];
        if d < 1e-12 {
            return Some((0.0, c, n));
        }
        let dir = (p - c) / d;
        if dir.dot(n) >= 0.0 {
            Some((d, c, dir))
        } else {
            Some((-d, c, n))
        }
    }
}

/// Squared distance from `p` to the axis-aligned box `[lo, hi]`.
fn aabb_distance_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    let dz = (lo.z - p.z).max(0.0).max(p.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

/// Closest point on triangle `abc` to `p` (barycentric region walk).
fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// One semi-implicit Euler step: spring, damping and gravity forces update
/// velocities, velocities update positions, then every vertex closer to the
/// collider than [`COLLISION_MARGIN`] is projected onto the margin surface
/// and its inward normal velocity removed.
pub fn step(
    state: &mut ClothState,
    collider: Option<&Collider>,
    dt: f64,
    gravity: Vec3,
) -> Result<(), SimError> {
    assert!(dt > 0.0 && dt <= 1.0 / 60.0, "dt must lie in (0, 1/60]");
    let n = state.positions.len();
    let mut forces = vec![Vec3::ZERO; n];
    for (f, m) in forces.iter_mut().zip(&state.masses) {
        *f = gravity * *m;
    }
    for s in &state.springs {
        let delta = state.positions[s.j] - state.positions[s.i];
        let len = delta.norm();
        if len < 1e-12 {
            continue;
        }
        let dir = delta / len;
        // Damping resists the full relative velocity, not just its axial
        // part, so swinging that barely stretches the springs still decays.
        // The coefficient is clamped so one step's damping impulse never
        // reverses the relative velocity, which keeps light boundary
        // vertices from ringing.
        let relative = state.velocities[s.j] - state.velocities[s.i];
        let inv_reduced = 1.0 / state.masses[s.i] + 1.0 / state.masses[s.j];
        let damping = state.damping.min(1.0 / (dt * inv_reduced));
        let f = dir * (s.stiffness * (len - s.rest_length)) + relative * damping;
        forces[s.i] += f;
        forces[s.j] -= f;
    }
    for v in 0..n {
        if state.pinned[v] {
            state.velocities[v] = Vec3::ZERO;
            continue;
        }
        state.velocities[v] += forces[v] * (dt / state.masses[v]);
        state.positions[v] += state.velocities[v] * dt;
    }
    if let Some(collider) = collider {
        project_onto_margin(state, collider, STEP_QUERY_RADIUS);
    }
    if !state.is_finite() {
        return Err(SimError::NonFinite);
    }
    Ok(())
}

/// Projects every unpinned vertex closer to the collider than
/// [`COLLISION_MARGIN`] onto the margin surface and removes its inward
/// normal velocity. A projection can move a vertex into another face's
/// margin, so this sweeps until clean (bounded; convex regions settle in
/// one pass). Only vertices within `radius` of the surface are examined.
fn project_onto_margin(state: &mut ClothState, collider: &Collider, radius: f64) {
    for _ in 0..4 {
        let mut moved = false;
        for v in 0..state.positions.len() {
            if state.pinned[v] {
                continue;
            }
            let Some((signed, closest, outward)) =
                collider.signed_distance_within(state.positions[v], radius)
            else {
                continue;
            };
            if signed < COLLISION_MARGIN - 1e-12 {
                state.positions[v] = closest + outward * COLLISION_MARGIN;
                let inward = state.velocities[v].dot(outward);
                if inward < 0.0 {
                    state.velocities[v] -= outward * inward;
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Time base and gravity of a sequence run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    /// Integration substeps per 30 fps frame (at least 2, so one substep
    /// never exceeds the 1/60 s step bound).
    pub substeps: usize,
    pub gravity: Vec3,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            substeps: DEFAULT_SUBSTEPS,
            gravity: Vec3::new(0.0, -9.81, 0.0),
        }
    }
}

/// Simulates the cloth over a body-frame sequence at 30 fps semantics.
///
/// The warm-up frames (shape transition, then pose transition) run first
/// and produce no output; every following body frame yields one cloth
/// frame. Collider geometry is rebuilt per frame and held fixed across that
/// frame's substeps. Aborts when kinetic energy passes
/// [`STABILITY_KINETIC_LIMIT`] or the state stops being finite; the frame
/// index in the error counts warm-up frames too.
pub fn simulate_sequence(
    state: &mut ClothState,
    warmup: &[TriMesh],
    frames: &[TriMesh],
    config: &SequenceConfig,
) -> Result<Vec<Vec<Vec3>>, SimError> {
    assert!(config.substeps >= 2, "fewer than two substeps breaks the step bound");
    let dt = FRAME_DT / config.substeps as f64;
    let mut output = Vec::with_capacity(frames.len());
    for (index, (body, record)) in warmup
        .iter()
        .map(|b| (b, false))
        .chain(frames.iter().map(|b| (b, true)))
        .enumerate()
    {
        let collider = Collider::new(body)?;
        // The body can sweep past the integrator's short lookup radius when
        // the collider jumps between frames, so rescue deeply engulfed
        // vertices once per frame with the full-radius query.
        project_onto_margin(state, &collider, collider.query_radius);
        for _ in 0..config.substeps {
            step(state, Some(&collider), dt, config.gravity)
                .map_err(|_| SimError::NonFiniteAtFrame { frame: index })?;
        }
        let ke = kinetic_energy(state);
        if !ke.is_finite() || ke > STABILITY_KINETIC_LIMIT {
            return Err(SimError::Unstable { frame: index, kinetic_energy: ke });
        }
        if record {
            output.push(state.positions.clone());
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_cloth(cols: usize, rows: usize, spacing: f64, height: f64) -> TriMesh {
        let mut vertices = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                vertices.push(Vec3::new(c as f64 * spacing, height, r as f64 * spacing));
            }
        }
        let mut faces = Vec::new();
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let a = r * cols + c;
                faces.push([a, a + 1, a + cols]);
                faces.push([a + 1, a + cols + 1, a + cols]);
            }
        }
        TriMesh::new(vertices, faces).unwrap()
    }

    fn ground_plane(half: f64, y: f64) -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(-half, y, -half),
                Vec3::new(half, y, -half),
                Vec3::new(half, y, half),
                Vec3::new(-half, y, half),
            ],
            vec![[0, 2, 1], [0, 3, 2]],
        )
        .unwrap()
    }

    fn count_kind(state: &ClothState, kind: SpringKind) -> usize {
        state.springs.iter().filter(|s| s.kind == kind).count()
    }

    #[test]
    fn presets_are_positive_and_distinct() {
        let all = FabricPreset::all();
        assert_eq!(all.len(), 4);
        let mut names = BTreeSet::new();
        for p in &all {
            assert!(p.structural_stiffness > 0.0);
            assert!(p.shear_stiffness > 0.0);
            assert!(p.bend_stiffness > 0.0);
            assert!(p.damping > 0.0);
            assert!(p.density > 0.0);
            assert!(names.insert(p.name.clone()));
            assert_eq!(FabricPreset::by_name(&p.name), Some(p.clone()));
        }
        assert!(FabricPreset::silk().bend_stiffness < FabricPreset::denim().bend_stiffness);
        assert_eq!(FabricPreset::by_name("velvet"), None);
    }

    #[test]
    fn single_triangle_builds_three_structural_springs() {
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.3, 0.0, 0.0),
                Vec3::new(0.0, 0.0, 0.4),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let fabric = FabricPreset::cotton();
        let cloth = build_cloth(&mesh, &fabric, &[]);
        assert_eq!(cloth.springs.len(), 3);
        for s in &cloth.springs {
            assert_eq!(s.kind, SpringKind::Structural);
            assert_eq!(s.stiffness, fabric.structural_stiffness);
            let geometric = (mesh.vertices[s.j] - mesh.vertices[s.i]).norm();
            assert_eq!(s.rest_length, geometric);
        }
        let area = 0.3 * 0.4 / 2.0;
        for m in &cloth.masses {
            assert!((m - fabric.density * area / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn adjacent_triangles_gain_a_bending_spring() {
        // Two tall triangles: sides longer than the shared edge, so the
        // pair is no quad and the cross pair acts as a bending hinge.
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.2, 0.0, 0.0),
                Vec3::new(0.1, 0.0, 0.3),
                Vec3::new(0.1, 0.0, -0.3),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap();
        let fabric = FabricPreset::denim();
        let cloth = build_cloth(&mesh, &fabric, &[]);
        assert_eq!(count_kind(&cloth, SpringKind::Structural), 5);
        assert_eq!(count_kind(&cloth, SpringKind::Shear), 0);
        assert_eq!(count_kind(&cloth, SpringKind::Bend), 1);
        let bend = cloth.springs.iter().find(|s| s.kind == SpringKind::Bend).unwrap();
        assert_eq!((bend.i, bend.j), (2, 3));
        assert_eq!(bend.stiffness, fabric.bend_stiffness);
        assert!((bend.rest_length - 0.6).abs() < 1e-12);
    }

    #[test]
    fn quad_grids_take_shear_diagonals_and_bend_hinges() {
        // A 3x3-vertex grid of four square quads: one shear spring per quad
        // (the missing diagonal) and one bend hinge per interior grid edge.
        let mesh = square_cloth(3, 3, 0.1, 0.0);
        let cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        assert_eq!(count_kind(&cloth, SpringKind::Structural), 16);
        assert_eq!(count_kind(&cloth, SpringKind::Shear), 4);
        assert_eq!(count_kind(&cloth, SpringKind::Bend), 4);
        for s in &cloth.springs {
            if s.kind == SpringKind::Shear {
                assert!((s.rest_length - 0.1 * 2.0f64.sqrt()).abs() < 1e-12);
            }
            if s.kind == SpringKind::Bend {
                // Hinge pairs across interior grid edges span one step
                // along the edge and two across it.
                assert!((s.rest_length - 0.1 * 5.0f64.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elastic_rings_shorten_rest_lengths() {
        let mesh = square_cloth(4, 3, 0.1, 0.0);
        // Treat the first row as a ring (wraps around for the test's sake).
        let ring = vec![0usize, 1, 2, 3];
        let cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[ring.clone()]);
        let mut ring_edges = BTreeSet::new();
        for k in 0..ring.len() {
            let a = ring[k];
            let b = ring[(k + 1) % ring.len()];
            ring_edges.insert((a.min(b), a.max(b)));
        }
        let mut scaled = 0;
        for s in &cloth.springs {
            if s.kind != SpringKind::Structural {
                continue;
            }
            let geometric = (mesh.vertices[s.j] - mesh.vertices[s.i]).norm();
            if ring_edges.contains(&(s.i, s.j)) {
                assert!((s.rest_length - ELASTIC_REST_SCALE * geometric).abs() < 1e-15);
                scaled += 1;
            } else {
                assert_eq!(s.rest_length, geometric);
            }
        }
        // The 0-3 wrap edge is not a mesh edge, so three springs scale.
        assert_eq!(scaled, 3);
        assert_eq!(cloth.elastic_rings, vec![ring]);
    }

    #[test]
    fn rest_state_stays_put_without_gravity() {
        let mesh = square_cloth(4, 4, 0.1, 0.0);
        let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        let before = cloth.clone();
        for _ in 0..50 {
            step(&mut cloth, None, 1.0 / 480.0, Vec3::ZERO).unwrap();
        }
        assert_eq!(cloth, before, "equilibrium must be a fixed point");
    }

    #[test]
    fn stretched_spring_pulls_back_with_hookes_force() {
        let rest = 0.1;
        let stiffness = 50.0;
        let mass = 0.02;
        let dt = 1e-3;
        let mut cloth = ClothState {
            positions: vec![Vec3::ZERO, Vec3::new(rest * 1.1, 0.0, 0.0)],
            velocities: vec![Vec3::ZERO; 2],
            springs: vec![Spring {
                i: 0,
                j: 1,
                rest_length: rest,
                kind: SpringKind::Structural,
                stiffness,
            }],
            pinned: vec![false; 2],
            masses: vec![mass; 2],
            damping: 0.0,
            elastic_rings: Vec::new(),
        };
        step(&mut cloth, None, dt, Vec3::ZERO).unwrap();
        let force = stiffness * 0.1 * rest;
        let expected = dt * force / mass;
        assert!((cloth.velocities[0].x - expected).abs() < 1e-12, "restoring pull on vertex 0");
        assert!((cloth.velocities[1].x + expected).abs() < 1e-12, "restoring pull on vertex 1");
        assert!((cloth.positions[0].x - expected * dt).abs() < 1e-15);
    }

    #[test]
    fn vertex_driven_into_collider_lands_on_the_margin() {
        let plane = ground_plane(1.0, 0.0);
        let collider = Collider::new(&plane).unwrap();
        let mesh = TriMesh::new(
            vec![
                Vec3::new(-0.05, 0.004, 0.0),
                Vec3::new(0.05, 0.004, 0.0),
                Vec3::new(0.0, 0.004, 0.08),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        for v in &mut cloth.velocities {
            *v = Vec3::new(0.0, -2.0, 0.0);
        }
        for _ in 0..20 {
            step(&mut cloth, Some(&collider), 1.0 / 480.0, Vec3::new(0.0, -9.81, 0.0)).unwrap();
            for p in &cloth.positions {
                assert!(p.y >= COLLISION_MARGIN - 1e-6, "vertex sank to {}", p.y);
            }
        }
        for (p, v) in cloth.positions.iter().zip(&cloth.velocities) {
            assert!((p.y - COLLISION_MARGIN).abs() < 1e-9, "rests exactly on the margin");
            assert!(v.y.abs() < 1e-12, "inward velocity removed");
        }
    }

    #[test]
    fn signed_distance_reports_sides_and_closest_points() {
        let plane = ground_plane(1.0, 0.0);
        let collider = Collider::new(&plane).unwrap();
        let (d, c, n) = collider.signed_distance(Vec3::new(0.1, 0.05, 0.2)).unwrap();
        assert!((d - 0.05).abs() < 1e-12);
        assert!((c - Vec3::new(0.1, 0.0, 0.2)).norm() < 1e-12);
        assert!((n - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let (d, _, n) = collider.signed_distance(Vec3::new(0.1, -0.03, 0.2)).unwrap();
        assert!((d + 0.03).abs() < 1e-12, "below the plane reads negative");
        assert!(n.y > 0.99, "outward direction still points up");
        assert!(collider.signed_distance(Vec3::new(0.0, 5.0, 0.0)).is_none());
    }

    #[test]
    fn energy_only_dissipates_while_settling() {
        let gravity = Vec3::new(0.0, -9.81, 0.0);
        let plane = ground_plane(2.0, 0.0);
        let collider = Collider::new(&plane).unwrap();
        let mesh = square_cloth(8, 8, 0.04, 0.05);
        let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        let dt = 1.0 / 960.0;
        let mut contact_seen = false;
        let mut last = mechanical_energy(&cloth, gravity);
        for s in 0..4000 {
            step(&mut cloth, Some(&collider), dt, gravity).unwrap();
            let now = mechanical_energy(&cloth, gravity);
            if contact_seen {
                assert!(
                    now <= last + 1e-9,
                    "energy rose {} -> {} at step {s}",
                    last,
                    now
                );
            }
            if !contact_seen
                && cloth.positions.iter().any(|p| p.y <= COLLISION_MARGIN + 1e-9)
            {
                contact_seen = true;
            }
            last = now;
        }
        assert!(contact_seen, "the cloth must actually reach the plane");
    }

    #[test]
    fn free_cloth_conserves_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mesh = square_cloth(6, 5, 0.05, 0.0);
        let mut cloth = build_cloth(&mesh, &FabricPreset::silk(), &[]);
        for v in &mut cloth.velocities {
            *v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
        }
        let mut last = momentum(&cloth);
        for _ in 0..500 {
            step(&mut cloth, None, 1.0 / 480.0, Vec3::ZERO).unwrap();
            let now = momentum(&cloth);
            assert!((now - last).norm() < 1e-9, "momentum drifted by {:e}", (now - last).norm());
            last = now;
        }
    }

    #[test]
    fn softer_fabric_stretches_more_on_the_same_drop() {
        let mesh = square_cloth(8, 8, 0.04, 0.0);
        let strain_of = |fabric: &FabricPreset| {
            let mut cloth = build_cloth(&mesh, fabric, &[]);
            cloth.pinned[0] = true;
            cloth.pinned[7] = true;
            for _ in 0..3000 {
                step(&mut cloth, None, 1.0 / 480.0, Vec3::new(0.0, -9.81, 0.0)).unwrap();
            }
            mean_edge_strain(&cloth)
        };
        let silk = strain_of(&FabricPreset::silk());
        let denim = strain_of(&FabricPreset::denim());
        assert!(
            silk > denim * 1.2,
            "silk should hang visibly looser: silk {silk:e}, denim {denim:e}"
        );
    }

    #[test]
    fn hanging_cloth_comes_to_rest() {
        let mesh = square_cloth(8, 8, 0.04, 0.0);
        let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        cloth.pinned[0] = true;
        cloth.pinned[7] = true;
        let config = SequenceConfig::default();
        let far_body = ground_plane(0.5, -10.0);
        let frames: Vec<TriMesh> = (0..300).map(|_| far_body.clone()).collect();
        let output = simulate_sequence(&mut cloth, &[], &frames, &config).unwrap();
        assert_eq!(output.len(), 300);
        let ke = kinetic_energy(&cloth);
        assert!(ke < 1e-6, "kinetic energy settled to {ke:e} J");
    }

    #[test]
    fn sequences_are_deterministic_and_skip_warmup_frames() {
        let mesh = square_cloth(5, 5, 0.05, 0.2);
        let plane = ground_plane(1.0, 0.0);
        let warmup: Vec<TriMesh> = (0..5).map(|_| plane.clone()).collect();
        let frames: Vec<TriMesh> = (0..12).map(|_| plane.clone()).collect();
        let config = SequenceConfig::default();
        let run = || {
            let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
            cloth.pinned[0] = true;
            simulate_sequence(&mut cloth, &warmup, &frames, &config).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 12, "one output frame per body frame");
        for (fa, fb) in a.iter().zip(&b) {
            for (pa, pb) in fa.iter().zip(fb) {
                assert_eq!(pa.x.to_bits(), pb.x.to_bits());
                assert_eq!(pa.y.to_bits(), pb.y.to_bits());
                assert_eq!(pa.z.to_bits(), pb.z.to_bits());
            }
        }
    }

    #[test]
    fn margin_holds_through_a_whole_sequence() {
        let mesh = square_cloth(6, 6, 0.05, 0.08);
        let mut cloth = build_cloth(&mesh, &FabricPreset::silk(), &[]);
        // The plane rises toward the cloth over the sequence.
        let frames: Vec<TriMesh> =
            (0..40).map(|f| ground_plane(1.0, 0.001 * f as f64)).collect();
        let config = SequenceConfig::default();
        let output = simulate_sequence(&mut cloth, &[], &frames, &config).unwrap();
        for (fi, frame) in output.iter().enumerate() {
            let floor = 0.001 * fi as f64;
            for p in frame {
                assert!(
                    p.y - floor >= COLLISION_MARGIN - 1e-6,
                    "frame {fi}: vertex at {} above floor {floor}",
                    p.y
                );
            }
        }
    }

    #[test]
    fn explosions_abort_with_the_frame_index() {
        let mesh = square_cloth(4, 4, 0.1, 0.5);
        let fabric = FabricPreset {
            structural_stiffness: 4e7,
            shear_stiffness: 4e7,
            bend_stiffness: 4e7,
            damping: 0.0,
            ..FabricPreset::cotton()
        };
        let mut cloth = build_cloth(&mesh, &fabric, &[]);
        for v in &mut cloth.velocities {
            *v = Vec3::new(30.0, 0.0, 30.0);
        }
        let frames: Vec<TriMesh> = (0..30).map(|_| ground_plane(1.0, -5.0)).collect();
        let err = simulate_sequence(&mut cloth, &[], &frames, &SequenceConfig::default())
            .unwrap_err();
        match err {
            SimError::Unstable { frame, kinetic_energy } => {
                assert!(frame < 30);
                assert!(kinetic_energy > STABILITY_KINETIC_LIMIT);
            }
            SimError::NonFiniteAtFrame { frame } => assert!(frame < 30),
            other => panic!("expected an instability abort, got {other}"),
        }
    }

    #[test]
    #[should_panic(expected = "dt must lie in (0, 1/60]")]
    fn oversized_steps_are_rejected() {
        let mesh = square_cloth(3, 3, 0.1, 0.0);
        let mut cloth = build_cloth(&mesh, &FabricPreset::cotton(), &[]);
        let _ = step(&mut cloth, None, 0.02, Vec3::ZERO);
    }

    #[test]
    fn closest_point_covers_every_region() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let interior = closest_point_on_triangle(Vec3::new(0.2, 0.2, 0.7), a, b, c);
        assert!((interior - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        assert_eq!(closest_point_on_triangle(Vec3::new(-1.0, -1.0, 0.0), a, b, c), a);
        assert_eq!(closest_point_on_triangle(Vec3::new(2.0, 0.0, 0.0), a, b, c), b);
        assert_eq!(closest_point_on_triangle(Vec3::new(0.0, 3.0, 0.5), a, b, c), c);
        let on_ab = closest_point_on_triangle(Vec3::new(0.5, -1.0, 0.0), a, b, c);
        assert!((on_ab - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        let on_ac = closest_point_on_triangle(Vec3::new(-1.0, 0.5, 0.0), a, b, c);
        assert!((on_ac - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
        let on_bc = closest_point_on_triangle(Vec3::new(1.0, 1.0, 0.0), a, b, c);
        assert!((on_bc - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn mass_spreads_uniformly_over_vertices() {
        let mesh = square_cloth(3, 3, 0.1, 0.0);
        let fabric = FabricPreset::leather();
        let cloth = build_cloth(&mesh, &fabric, &[]);
        let total: f64 = cloth.masses.iter().sum();
        let expected = fabric.density * mesh.surface_area();
        assert!((total - expected).abs() < 1e-12, "mass sums to density times area");
        for m in &cloth.masses {
            assert_eq!(*m, cloth.masses[0]);
        }
    }
}
