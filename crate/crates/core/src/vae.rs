//! Conditional graph-convolutional VAE: spectral operators, Chebyshev
//! convolutions, pooling glue, a dense conditioning bottleneck, losses with
//! hand-written analytic gradients, a central-difference gradient audit and a
//! small momentum-SGD trainer.
//!
//! There is no autograd. Every layer has an explicit forward and backward so
//! each gradient can be checked coordinate by coordinate against finite
//! differences.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::body::joint;
use crate::encoding::{normalize_template, Normalization, OffsetEncoding, MASK_THRESHOLD};
use crate::geom::Vec3;
use crate::hierarchy::MeshHierarchy;
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::mesh::{normalized_laplacian_from_edges, MeshError, TriMesh};

/// Latent dimensionality of the default models.
pub const LATENT_DIM: usize = 128;

/// Static conditioning width: ten shape coefficients, gender, two tightness
/// coordinates.
pub const STATIC_CVAR_DIM: usize = 13;

/// Width of one flattened pose frame.
pub const POSE_DIM: usize = 3 * joint::COUNT;

/// Chebyshev polynomial order of every model convolution.
pub const CHEB_ORDER: usize = 1;

/// Smallest dataset accepted by [`train_toy`].
pub const MIN_TOY_DATASET: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum VaeError {
    InputRows { expected: usize, got: usize },
    InputWidth { expected: usize, got: usize },
    CvarLength { expected: usize, got: usize },
    NoiseLength { expected: usize, got: usize },
    WidthsPerLevel { levels: usize, widths: usize },
    OffsetRows { expected: usize, got: usize },
    MaskRows { expected: usize, got: usize },
    FaceCountMismatch { expected: usize, got: usize },
    EmptyMaskedSet,
    LaplacianRows { expected: usize, got: usize },
    EncodableLength { expected: usize, got: usize },
    DatasetTooSmall { got: usize },
    NonFiniteLoss { epoch: usize },
    Mesh(MeshError),
}

impl fmt::Display for VaeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VaeError::InputRows { expected, got } => {
                write!(f, "input has {got} rows, the finest level has {expected}")
            }
            VaeError::InputWidth { expected, got } => {
                write!(f, "input is {got} wide, the model expects {expected}")
            }
            VaeError::CvarLength { expected, got } => {
                write!(f, "conditioning vector is {got} long, the model expects {expected}")
            }
            VaeError::NoiseLength { expected, got } => {
                write!(f, "noise draw is {got} long, the latent space is {expected}")
            }
            VaeError::WidthsPerLevel { levels, widths } => {
                write!(f, "{widths} convolution widths for {levels} hierarchy levels")
            }
            VaeError::OffsetRows { expected, got } => {
                write!(f, "offset field has {got} rows, the body has {expected} vertices")
            }
            VaeError::MaskRows { expected, got } => {
                write!(f, "mask has {got} entries, the body has {expected} vertices")
            }
            VaeError::FaceCountMismatch { expected, got } => {
                write!(f, "meshes disagree on face count: {got} versus {expected}")
            }
            VaeError::EmptyMaskedSet => write!(f, "ground truth mask covers no vertex"),
            VaeError::LaplacianRows { expected, got } => {
                write!(f, "finest operator is {got} wide, the finest level has {expected} vertices")
            }
            VaeError::EncodableLength { expected, got } => {
                write!(f, "encodable flags have {got} entries, the finest level has {expected}")
            }
            VaeError::DatasetTooSmall { got } => {
                write!(f, "training needs at least {MIN_TOY_DATASET} samples, got {got}")
            }
            VaeError::NonFiniteLoss { epoch } => {
                write!(f, "loss went non-finite in epoch {epoch}")
            }
            VaeError::Mesh(e) => write!(f, "mesh error: {e}"),
        }
    }
}

impl core::error::Error for VaeError {}

impl From<MeshError> for VaeError {
    fn from(e: MeshError) -> Self {
        VaeError::Mesh(e)
    }
}

/// Reported by [`grad_check`] when an analytic gradient disagrees with the
/// central-difference probe.
#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckError {
    Mismatch { coordinate: usize, analytic: f64, numeric: f64, relative: f64 },
    NonFinite { coordinate: usize },
}

impl fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradCheckError::Mismatch { coordinate, analytic, numeric, relative } => write!(
                f,
                "worst coordinate {coordinate}: analytic {analytic:e}, numeric {numeric:e}, relative error {relative:e}"
            ),
            GradCheckError::NonFinite { coordinate } => {
                write!(f, "non-finite probe at coordinate {coordinate}")
            }
        }
    }
}

impl core::error::Error for GradCheckError {}

/// `2 L / lambda_max - I`: maps the spectrum of a positive semidefinite
/// operator with largest eigenvalue `lambda_max` into `[-1, 1]`. Normalized
/// graph Laplacians are bounded by 2, so `lambda_max = 2` is always valid for
/// them and turns `L` into `L - I`.
pub fn scaled_laplacian(laplacian: &SparseMatrix, lambda_max: f64) -> SparseMatrix {
    assert!(lambda_max > 0.0, "lambda_max must be positive");
    laplacian.scale(2.0 / lambda_max).add_scaled_identity(-1.0)
}

/// Chebyshev convolution weights: one `input x output` matrix per polynomial
/// term, order zero first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Vec<DenseMatrix>,
}

impl ConvLayer {
    /// Uniform init in `±1/sqrt(input * terms)`, `order + 1` terms.
    pub fn init<R: Rng>(order: usize, input: usize, output: usize, rng: &mut R) -> ConvLayer {
        let scale = 1.0 / (((order + 1) * input) as f64).sqrt();
        let weights = (0..=order).map(|_| random_matrix(input, output, scale, rng)).collect();
        ConvLayer { weights }
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].rows
    }

    pub fn output_width(&self) -> usize {
        self.weights[0].cols
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    DenseMatrix::from_rows(rows, cols, data)
}

fn axpy(into: &mut DenseMatrix, s: f64, other: &DenseMatrix) {
    assert_eq!((into.rows, into.cols), (other.rows, other.cols), "matrix shapes differ");
    for (a, b) in into.data.iter_mut().zip(other.data.iter()) {
        *a += s * b;
    }
}

/// `y = sum_k T_k(op) x . w_k` with `T_0 = I`, `T_1 = op` and
/// `T_k = 2 op T_{k-1} - T_{k-2}`.
pub fn cheb_conv(x: &DenseMatrix, operator: &SparseMatrix, layer: &ConvLayer) -> DenseMatrix {
    assert_eq!(x.cols, layer.input_width(), "signal width does not match the layer");
    assert_eq!(operator.rows, x.rows, "operator size does not match the signal");
    let mut y = x.matmul(&layer.weights[0]);
    if layer.weights.len() == 1 {
        return y;
    }
    let mut t_prev = x.clone();
    let mut t_curr = operator.matmul_dense(x);
    y = y.add(&t_curr.matmul(&layer.weights[1]));
    for w in layer.weights.iter().skip(2) {
        let mut t_next = operator.matmul_dense(&t_curr).scale(2.0);
        axpy(&mut t_next, -1.0, &t_prev);
        y = y.add(&t_next.matmul(w));
        t_prev = core::mem::replace(&mut t_curr, t_next);
    }
    y
}

/// Gradients of a scalar loss through [`cheb_conv`]: given `d_out`, returns
/// `(d_x, d_weights)`. The Chebyshev basis is cheap and gets recomputed
/// rather than cached.
pub fn cheb_conv_backward(
    x: &DenseMatrix,
    operator: &SparseMatrix,
    layer: &ConvLayer,
    d_out: &DenseMatrix,
) -> (DenseMatrix, Vec<DenseMatrix>) {
    assert_eq!((d_out.rows, d_out.cols), (x.rows, layer.output_width()), "upstream shape");
    let terms = layer.weights.len();
    let mut basis = Vec::with_capacity(terms);
    basis.push(x.clone());
    if terms > 1 {
        basis.push(operator.matmul_dense(x));
    }
    for k in 2..terms {
        let mut t = operator.matmul_dense(&basis[k - 1]).scale(2.0);
        axpy(&mut t, -1.0, &basis[k - 2]);
        basis.push(t);
    }
    let d_weights: Vec<DenseMatrix> = basis.iter().map(|t| t.transpose().matmul(d_out)).collect();
    // Reverse sweep of the recurrence, seeded with d_out w_k^T per term.
    let mut d_basis: Vec<DenseMatrix> =
        layer.weights.iter().map(|w| d_out.matmul(&w.transpose())).collect();
    for k in (2..terms).rev() {
        let up = operator.transpose_matmul_dense(&d_basis[k]).scale(2.0);
        axpy(&mut d_basis[k - 1], 1.0, &up);
        let dk = d_basis[k].clone();
        axpy(&mut d_basis[k - 2], -1.0, &dk);
    }
    if terms > 1 {
        let up = operator.transpose_matmul_dense(&d_basis[1]);
        axpy(&mut d_basis[0], 1.0, &up);
    }
    (d_basis.swap_remove(0), d_weights)
}

/// Fully connected layer; `weight` is `input x output`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> DenseLayer {
        let scale = 1.0 / (input as f64).sqrt();
        DenseLayer { weight: random_matrix(input, output, scale, rng), bias: vec![0.0; output] }
    }

    fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            weight: DenseMatrix::zeros(self.weight.rows, self.weight.cols),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.weight.rows, "input length does not match the layer");
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (yj, wij) in y.iter_mut().zip(self.weight.row(i)) {
                *yj += xi * wij;
            }
        }
        y
    }

    /// `(d_x, d_weight, d_bias)` for upstream gradient `d_y`.
    pub fn backward(&self, x: &[f64], d_y: &[f64]) -> (Vec<f64>, DenseMatrix, Vec<f64>) {
        assert_eq!(d_y.len(), self.weight.cols, "upstream length does not match the layer");
        let mut d_x = vec![0.0; x.len()];
        let mut d_w = DenseMatrix::zeros(self.weight.rows, self.weight.cols);
        for (i, &xi) in x.iter().enumerate() {
            let wrow = self.weight.row(i);
            let grow = d_w.row_mut(i);
            let mut acc = 0.0;
            for ((dj, wij), gij) in d_y.iter().zip(wrow).zip(grow.iter_mut()) {
                acc += wij * dj;
                *gij = xi * dj;
            }
            d_x[i] = acc;
        }
        (d_x, d_w, d_y.to_vec())
    }
}

fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

fn tanh_backward_vec(act: &[f64], grad: &[f64]) -> Vec<f64> {
    act.iter().zip(grad).map(|(a, g)| g * (1.0 - a * a)).collect()
}

fn tanh_matrix(x: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_rows(x.rows, x.cols, x.data.iter().map(|v| v.tanh()).collect())
}

fn tanh_backward_matrix(act: &DenseMatrix, grad: &DenseMatrix) -> DenseMatrix {
    assert_eq!((act.rows, act.cols), (grad.rows, grad.cols), "matrix shapes differ");
    DenseMatrix::from_rows(
        act.rows,
        act.cols,
        act.data.iter().zip(grad.data.iter()).map(|(a, g)| g * (1.0 - a * a)).collect(),
    )
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn component(v: Vec3, c: usize) -> f64 {
    match c {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

fn add_component(v: &mut Vec3, c: usize, d: f64) {
    match c {
        0 => v.x += d,
        1 => v.y += d,
        _ => v.z += d,
    }
}

/// `0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2)` against a unit Gaussian, with
/// `log_var = log sigma^2`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    assert_eq!(mu.len(), log_var.len(), "moment lengths differ");
    mu.iter().zip(log_var).map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

/// `(d_mu, d_log_var)` of [`kl_divergence`].
pub fn kl_divergence_backward(mu: &[f64], log_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(mu.len(), log_var.len(), "moment lengths differ");
    (mu.to_vec(), log_var.iter().map(|&lv| 0.5 * (lv.exp() - 1.0)).collect())
}

/// Mean `max(0, -offset . normal)`: positive where an offset points into the
/// surface. Empty input scores zero.
pub fn collision_loss(offsets: &[Vec3], normals: &[Vec3]) -> f64 {
    assert_eq!(offsets.len(), normals.len(), "vertex counts differ");
    if offsets.is_empty() {
        return 0.0;
    }
    let sum: f64 = offsets.iter().zip(normals).map(|(o, n)| (-o.dot(*n)).max(0.0)).sum();
    sum / offsets.len() as f64
}

/// Offset gradient of [`collision_loss`]. Exactly at the hinge the inactive
/// branch is chosen, so the gradient there is zero.
pub fn collision_loss_backward(offsets: &[Vec3], normals: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(offsets.len(), normals.len(), "vertex counts differ");
    let count = offsets.len().max(1) as f64;
    offsets
        .iter()
        .zip(normals)
        .map(|(o, n)| if -o.dot(*n) > 0.0 { *n * (-1.0 / count) } else { Vec3::ZERO })
        .collect()
}

/// Multipliers for the garment loss terms and the KL regularizer. The offset
/// term always has weight one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub normals: f64,
    pub mask: f64,
    pub collision: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { normals: 1.0, mask: 1.0, collision: 1.0, kl: 1e-3 }
    }
}

/// Garment reconstruction terms; `total` carries the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarmentLossParts {
    pub offsets: f64,
    pub normals: f64,
    pub mask: f64,
    pub collision: f64,
    pub total: f64,
}

fn unit_normal(positions: &[Vec3], face: &[usize; 3]) -> Option<(Vec3, Vec3, f64)> {
    let u = positions[face[1]] - positions[face[0]];
    let v = positions[face[2]] - positions[face[0]];
    let raw = u.cross(v);
    let norm = raw.norm();
    if norm < 1e-30 {
        None
    } else {
        Some((raw / norm, raw, norm))
    }
}

/// Reconstruction loss of a predicted garment against an encoded ground
/// truth. `pred_offsets` are in normalized units with one row per body
/// vertex; `pred_mask` likewise covers every vertex.
///
/// Terms: mean L1 over offsets of covered vertices, mean L1 between face
/// normals of the rebuilt surfaces over fully covered faces, mean L1 over the
/// whole mask, and the mean inward-offset penalty on covered vertices. Faces
/// that degenerate to zero area on either side are skipped.
pub fn garment_loss(
    pred_offsets: &[Vec3],
    pred_mask: &[f64],
    truth: &OffsetEncoding,
    body: &TriMesh,
    weights: &LossWeights,
) -> Result<GarmentLossParts, VaeError> {
    garment_loss_gradients(pred_offsets, pred_mask, truth, body, weights).map(|(p, _, _)| p)
}

/// [`garment_loss`] plus `(d_offsets, d_mask)` of the weighted total. At the
/// L1 and hinge kinks the gradient takes the zero branch.
pub fn garment_loss_gradients(
    pred_offsets: &[Vec3],
    pred_mask: &[f64],
    truth: &OffsetEncoding,
    body: &TriMesh,
    weights: &LossWeights,
) -> Result<(GarmentLossParts, Vec<Vec3>, Vec<f64>), VaeError> {
    let n = body.vertices.len();
    if pred_offsets.len() != n {
        return Err(VaeError::OffsetRows { expected: n, got: pred_offsets.len() });
    }
    if truth.offsets.len() != n {
        return Err(VaeError::OffsetRows { expected: n, got: truth.offsets.len() });
    }
    if pred_mask.len() != n {
        return Err(VaeError::MaskRows { expected: n, got: pred_mask.len() });
    }
    if truth.mask.len() != n {
        return Err(VaeError::MaskRows { expected: n, got: truth.mask.len() });
    }
    let covered: Vec<bool> = truth.mask.iter().map(|&m| m >= MASK_THRESHOLD).collect();
    let masked: Vec<usize> = (0..n).filter(|&v| covered[v]).collect();
    if masked.is_empty() {
        return Err(VaeError::EmptyMaskedSet);
    }
    let scale = truth.normalization.offset_scale;
    let mut d_off = vec![Vec3::ZERO; n];
    let mut d_mask = vec![0.0; n];

    let off_denom = (3 * masked.len()) as f64;
    let mut l_off = 0.0;
    for &v in &masked {
        let diff = pred_offsets[v] - truth.offsets[v] / scale;
        for c in 0..3 {
            let d = component(diff, c);
            l_off += d.abs() / off_denom;
            add_component(&mut d_off[v], c, signum0(d) / off_denom);
        }
    }

    let mut l_mask = 0.0;
    for v in 0..n {
        let d = pred_mask[v] - truth.mask[v];
        l_mask += d.abs() / n as f64;
        d_mask[v] = weights.mask * signum0(d) / n as f64;
    }

    // Normal term: faces fully inside the mask, rebuilt at true scale.
    let faces: Vec<[usize; 3]> =
        body.faces.iter().copied().filter(|f| f.iter().all(|&v| covered[v])).collect();
    let mut l_norm = 0.0;
    if !faces.is_empty() {
        let pred_pos: Vec<Vec3> =
            (0..n).map(|v| body.vertices[v] + pred_offsets[v] * scale).collect();
        let truth_pos: Vec<Vec3> = (0..n).map(|v| body.vertices[v] + truth.offsets[v]).collect();
        let denom = (3 * faces.len()) as f64;
        for f in &faces {
            let (Some((tn, _, _)), Some((pn, _, praw_norm))) =
                (unit_normal(&truth_pos, f), unit_normal(&pred_pos, f))
            else {
                continue;
            };
            let mut d_n = Vec3::ZERO;
            for c in 0..3 {
                let d = component(pn, c) - component(tn, c);
                l_norm += d.abs() / denom;
                add_component(&mut d_n, c, weights.normals * signum0(d) / denom);
            }
            // Unit normal u = r/|r| gives d_r = (d_u - u (u . d_u)) / |r|.
            let d_raw = (d_n - pn * pn.dot(d_n)) / praw_norm;
            let u = pred_pos[f[1]] - pred_pos[f[0]];
            let v = pred_pos[f[2]] - pred_pos[f[0]];
            let d_u = v.cross(d_raw);
            let d_v = d_raw.cross(u);
            d_off[f[1]] += d_u * scale;
            d_off[f[2]] += d_v * scale;
            d_off[f[0]] -= (d_u + d_v) * scale;
        }
    }

    let body_normals = body.vertex_normals()?;
    let masked_offsets: Vec<Vec3> = masked.iter().map(|&v| pred_offsets[v]).collect();
    let masked_normals: Vec<Vec3> = masked.iter().map(|&v| body_normals[v]).collect();
    let l_coll = collision_loss(&masked_offsets, &masked_normals);
    for (&v, g) in masked.iter().zip(collision_loss_backward(&masked_offsets, &masked_normals)) {
        d_off[v] += g * weights.collision;
    }

    let total =
        l_off + weights.normals * l_norm + weights.mask * l_mask + weights.collision * l_coll;
    let parts =
        GarmentLossParts { offsets: l_off, normals: l_norm, mask: l_mask, collision: l_coll, total };
    Ok((parts, d_off, d_mask))
}

/// `garment total + conditioning L1 + kl weight * KL`.
pub fn total_loss(garment: &GarmentLossParts, cvar_l1: f64, kl: f64, weights: &LossWeights) -> f64 {
    garment.total + cvar_l1 + weights.kl * kl
}

/// Mean vertex-to-vertex Euclidean distance.
pub fn surface_error(pred: &[Vec3], truth: &[Vec3]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "vertex counts differ");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(p, t)| (*p - *t).norm()).sum::<f64>() / pred.len() as f64
}

/// Mean angle in radians between corresponding face normals.
pub fn normal_angle_error(pred: &TriMesh, truth: &TriMesh) -> Result<f64, VaeError> {
    if pred.faces.len() != truth.faces.len() {
        return Err(VaeError::FaceCountMismatch {
            expected: truth.faces.len(),
            got: pred.faces.len(),
        });
    }
    let pn = pred.face_normals()?;
    let tn = truth.face_normals()?;
    if pn.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pn.iter().zip(&tn).map(|(p, t)| p.dot(*t).clamp(-1.0, 1.0).acos()).sum();
    Ok(sum / pn.len() as f64)
}

/// Intersection over union of thresholded masks; two empty masks agree
/// perfectly.
pub fn mask_iou(pred: &[f64], truth: &[f64], threshold: f64) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mask lengths differ");
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        let a = *p >= threshold;
        let b = *t >= threshold;
        if a && b {
            intersection += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Conditioning vector. The static model reads shape, gender and tightness;
/// the dynamic one appends flattened pose frames and the static latent code.
/// The bottleneck embedding is a function of the current conditioning network
/// and is returned by the forward pass rather than stored here.
#[derive(Debug, Clone, PartialEq)]
pub struct CondVars {
    pub cvar: Vec<f64>,
}

impl CondVars {
    pub fn new(cvar: Vec<f64>) -> CondVars {
        CondVars { cvar }
    }

    /// `shape ++ [gender] ++ tightness`.
    pub fn static_vars(shape: &[f64], gender: f64, tightness: &[f64; 2]) -> CondVars {
        let mut cvar = shape.to_vec();
        cvar.push(gender);
        cvar.extend_from_slice(tightness);
        CondVars { cvar }
    }

    /// Static variables, then flattened pose frames, then the static latent.
    pub fn dynamic_vars(
        static_vars: &CondVars,
        pose_frames: &[f64],
        static_latent: &[f64],
    ) -> CondVars {
        let mut cvar = static_vars.cvar.clone();
        cvar.extend_from_slice(pose_frames);
        cvar.extend_from_slice(static_latent);
        CondVars { cvar }
    }

    pub fn len(&self) -> usize {
        self.cvar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cvar.is_empty()
    }
}

/// Dense conditioning autoencoder. Its bottleneck is the embedding handed to
/// the decoder, with one skip connection from the encoder hidden layer to the
/// decoder hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaNet {
    pub enc: DenseLayer,
    pub bottleneck: DenseLayer,
    pub dec: DenseLayer,
    pub out: DenseLayer,
}

struct GammaTrace {
    enc_act: Vec<f64>,
    bottleneck_act: Vec<f64>,
    dec_act: Vec<f64>,
    merged: Vec<f64>,
    recon: Vec<f64>,
}

impl GammaNet {
    pub fn init<R: Rng>(cvar: usize, hidden: usize, bottleneck: usize, rng: &mut R) -> GammaNet {
        GammaNet {
            enc: DenseLayer::init(cvar, hidden, rng),
            bottleneck: DenseLayer::init(hidden, bottleneck, rng),
            dec: DenseLayer::init(bottleneck, hidden, rng),
            out: DenseLayer::init(hidden, cvar, rng),
        }
    }

    fn zeros_like(&self) -> GammaNet {
        GammaNet {
            enc: self.enc.zeros_like(),
            bottleneck: self.bottleneck.zeros_like(),
            dec: self.dec.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    fn run(&self, cvar: &[f64]) -> GammaTrace {
        let enc_act = tanh_vec(&self.enc.forward(cvar));
        let bottleneck_act = tanh_vec(&self.bottleneck.forward(&enc_act));
        let dec_act = tanh_vec(&self.dec.forward(&bottleneck_act));
        let merged: Vec<f64> = dec_act.iter().zip(&enc_act).map(|(d, e)| d + e).collect();
        let recon = self.out.forward(&merged);
        GammaTrace { enc_act, bottleneck_act, dec_act, merged, recon }
    }

    /// Bottleneck embedding of a conditioning vector.
    pub fn embed(&self, cvar: &[f64]) -> Vec<f64> {
        self.run(cvar).bottleneck_act
    }

    /// Mean L1 between the reconstruction and the input.
    pub fn reconstruction_loss(&self, cvar: &[f64]) -> f64 {
        let t = self.run(cvar);
        t.recon.iter().zip(cvar).map(|(r, c)| (r - c).abs()).sum::<f64>() / cvar.len() as f64
    }

    /// Loss plus gradients in a same-shaped container.
    pub fn reconstruction_gradients(&self, cvar: &[f64]) -> (f64, GammaNet) {
        let t = self.run(cvar);
        let n = cvar.len() as f64;
        let loss =
            t.recon.iter().zip(cvar).map(|(r, c)| (r - c).abs()).sum::<f64>() / n;
        let d_recon: Vec<f64> =
            t.recon.iter().zip(cvar).map(|(r, c)| signum0(r - c) / n).collect();
        let (d_merged, dw_out, db_out) = self.out.backward(&t.merged, &d_recon);
        let d_dec_pre = tanh_backward_vec(&t.dec_act, &d_merged);
        let (d_bot_a, dw_dec, db_dec) = self.dec.backward(&t.bottleneck_act, &d_dec_pre);
        let d_bot_pre = tanh_backward_vec(&t.bottleneck_act, &d_bot_a);
        let (d_enc_a, dw_bot, db_bot) = self.bottleneck.backward(&t.enc_act, &d_bot_pre);
        // The skip feeds the encoder activation into the merge directly.
        let d_enc_act: Vec<f64> = d_enc_a.iter().zip(&d_merged).map(|(a, s)| a + s).collect();
        let d_enc_pre = tanh_backward_vec(&t.enc_act, &d_enc_act);
        let (_, dw_enc, db_enc) = self.enc.backward(cvar, &d_enc_pre);
        (
            loss,
            GammaNet {
                enc: DenseLayer { weight: dw_enc, bias: db_enc },
                bottleneck: DenseLayer { weight: dw_bot, bias: db_bot },
                dec: DenseLayer { weight: dw_dec, bias: db_dec },
                out: DenseLayer { weight: dw_out, bias: db_out },
            },
        )
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in [&self.enc, &self.bottleneck, &self.dec, &self.out] {
            out.push(l.weight.data.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        out.push(self.enc.weight.data.as_mut_slice());
        out.push(self.enc.bias.as_mut_slice());
        out.push(self.bottleneck.weight.data.as_mut_slice());
        out.push(self.bottleneck.bias.as_mut_slice());
        out.push(self.dec.weight.data.as_mut_slice());
        out.push(self.dec.bias.as_mut_slice());
        out.push(self.out.weight.data.as_mut_slice());
        out.push(self.out.bias.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[cursor..cursor + s.len()]);
            cursor += s.len();
        }
        assert_eq!(cursor, flat.len(), "flat parameter length mismatch");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaeKind {
    /// Static garment fit: predicts offsets and a coverage mask.
    Static,
    /// Per-frame wrinkle dynamics: offsets only.
    Dynamic,
}

/// Architecture of one model. `conv_widths` runs finest to coarsest and must
/// match the hierarchy's level count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaeConfig {
    pub kind: VaeKind,
    pub input_width: usize,
    pub conv_widths: Vec<usize>,
    pub dense_hidden: usize,
    pub latent_dim: usize,
    pub cvar_dim: usize,
    pub cvar_z_dim: usize,
    pub gamma_hidden: usize,
}

impl VaeConfig {
    /// Static model over a four-level hierarchy.
    pub fn static_default() -> VaeConfig {
        VaeConfig {
            kind: VaeKind::Static,
            input_width: 6,
            conv_widths: vec![8, 16, 32, 64],
            dense_hidden: 128,
            latent_dim: LATENT_DIM,
            cvar_dim: STATIC_CVAR_DIM,
            cvar_z_dim: 8,
            gamma_hidden: 16,
        }
    }

    /// Dynamic model: twice the static widths, conditioned additionally on
    /// `frames` flattened poses and the static latent code.
    pub fn dynamic_default(frames: usize) -> VaeConfig {
        VaeConfig {
            kind: VaeKind::Dynamic,
            input_width: 6,
            conv_widths: vec![16, 32, 64, 128],
            dense_hidden: 256,
            latent_dim: LATENT_DIM,
            cvar_dim: STATIC_CVAR_DIM + frames * POSE_DIM + LATENT_DIM,
            cvar_z_dim: 8,
            gamma_hidden: 16,
        }
    }
}

/// Posterior moments and the reparameterized draw `z = mu + sigma * eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub z: Vec<f64>,
}

/// Every trainable tensor of one model. Gradient sets reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub enc_convs: Vec<ConvLayer>,
    pub enc_fc: DenseLayer,
    pub enc_mu: DenseLayer,
    pub enc_log_var: DenseLayer,
    pub enc_cvar_reg: DenseLayer,
    pub dec_fc: DenseLayer,
    pub dec_convs: Vec<ConvLayer>,
    pub offset_head: ConvLayer,
    pub mask_head: Option<ConvLayer>,
    pub gamma: GammaNet,
}

impl VaeParams {
    /// Trainable tensors of the VAE proper, in a fixed order. The
    /// conditioning network is excluded: it trains in its own stage and is
    /// frozen afterwards.
    fn vae_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for c in &self.enc_convs {
            for w in &c.weights {
                out.push(w.data.as_slice());
            }
        }
        for l in [&self.enc_fc, &self.enc_mu, &self.enc_log_var, &self.enc_cvar_reg, &self.dec_fc]
        {
            out.push(l.weight.data.as_slice());
            out.push(l.bias.as_slice());
        }
        for c in &self.dec_convs {
            for w in &c.weights {
                out.push(w.data.as_slice());
            }
        }
        for w in &self.offset_head.weights {
            out.push(w.data.as_slice());
        }
        if let Some(m) = &self.mask_head {
            for w in &m.weights {
                out.push(w.data.as_slice());
            }
        }
        out
    }

    fn vae_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.enc_convs {
            for w in &mut c.weights {
                out.push(w.data.as_mut_slice());
            }
        }
        out.push(self.enc_fc.weight.data.as_mut_slice());
        out.push(self.enc_fc.bias.as_mut_slice());
        out.push(self.enc_mu.weight.data.as_mut_slice());
        out.push(self.enc_mu.bias.as_mut_slice());
        out.push(self.enc_log_var.weight.data.as_mut_slice());
        out.push(self.enc_log_var.bias.as_mut_slice());
        out.push(self.enc_cvar_reg.weight.data.as_mut_slice());
        out.push(self.enc_cvar_reg.bias.as_mut_slice());
        out.push(self.dec_fc.weight.data.as_mut_slice());
        out.push(self.dec_fc.bias.as_mut_slice());
        for c in &mut self.dec_convs {
            for w in &mut c.weights {
                out.push(w.data.as_mut_slice());
            }
        }
        for w in &mut self.offset_head.weights {
            out.push(w.data.as_mut_slice());
        }
        if let Some(m) = &mut self.mask_head {
            for w in &mut m.weights {
                out.push(w.data.as_mut_slice());
            }
        }
        out
    }

    pub fn vae_parameter_count(&self) -> usize {
        self.vae_slices().iter().map(|s| s.len()).sum()
    }

    pub fn vae_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.vae_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn set_vae_flat(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        for s in self.vae_slices_mut() {
            s.copy_from_slice(&flat[cursor..cursor + s.len()]);
            cursor += s.len();
        }
        assert_eq!(cursor, flat.len(), "flat parameter length mismatch");
    }
}

/// Per-level spectral operators, pooling maps and the encodable-vertex flags
/// for one garment topology.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphContext {
    /// Scaled operators, one per level, spectra inside `[-1, 1]`.
    pub laplacians: Vec<SparseMatrix>,
    pub parent_maps: Vec<Vec<usize>>,
    pub level_sizes: Vec<usize>,
    pub encodable: Vec<bool>,
}

impl GraphContext {
    /// Finest operator from the hierarchy's own level-zero connectivity.
    pub fn new(hierarchy: &MeshHierarchy, encodable: Vec<bool>) -> Result<GraphContext, VaeError> {
        let finest = hierarchy.levels[0].normalized_laplacian()?;
        GraphContext::with_finest(hierarchy, &finest, encodable)
    }

    /// Finest operator supplied by the caller (the bridged skirt graph goes
    /// here); coarser levels always read the hierarchy's quotient edges.
    pub fn with_finest(
        hierarchy: &MeshHierarchy,
        finest: &SparseMatrix,
        encodable: Vec<bool>,
    ) -> Result<GraphContext, VaeError> {
        let n0 = hierarchy.levels[0].vertex_count();
        if finest.rows != n0 || finest.cols != n0 {
            return Err(VaeError::LaplacianRows { expected: n0, got: finest.rows });
        }
        if encodable.len() != n0 {
            return Err(VaeError::EncodableLength { expected: n0, got: encodable.len() });
        }
        let mut laplacians = vec![scaled_laplacian(finest, 2.0)];
        for (i, level) in hierarchy.levels.iter().enumerate().skip(1) {
            let l =
                normalized_laplacian_from_edges(level.vertex_count(), &hierarchy.edge_lists[i])?;
            laplacians.push(scaled_laplacian(&l, 2.0));
        }
        Ok(GraphContext {
            laplacians,
            parent_maps: hierarchy.parent_maps.clone(),
            level_sizes: hierarchy.levels.iter().map(|l| l.vertex_count()).collect(),
            encodable,
        })
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn encodable_count(&self) -> usize {
        self.encodable.iter().filter(|&&b| b).count()
    }
}

/// Column-wise max pooling. Mirrors the hierarchy pooling operator and
/// records which fine row supplied each maximum; ties keep the earliest row.
fn pool_max(x: &DenseMatrix, parent_map: &[usize], coarse: usize) -> (DenseMatrix, Vec<Vec<usize>>) {
    assert_eq!(x.rows, parent_map.len(), "row count does not match the parent map");
    let mut out = DenseMatrix::zeros(coarse, x.cols);
    let mut filled = vec![false; coarse];
    let mut sources = vec![vec![usize::MAX; x.cols]; coarse];
    for v in 0..x.rows {
        let parent = parent_map[v];
        if !filled[parent] {
            filled[parent] = true;
            out.row_mut(parent).copy_from_slice(x.row(v));
            for s in sources[parent].iter_mut() {
                *s = v;
            }
        } else {
            let src = &mut sources[parent];
            let orow = out.row_mut(parent);
            for (c, &xv) in x.row(v).iter().enumerate() {
                if xv > orow[c] {
                    orow[c] = xv;
                    src[c] = v;
                }
            }
        }
    }
    assert!(filled.iter().all(|&f| f), "a pool cell received no vertex");
    (out, sources)
}

fn pool_backward(grad: &DenseMatrix, sources: &[Vec<usize>], fine: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(fine, grad.cols);
    for r in 0..grad.rows {
        for c in 0..grad.cols {
            out.row_mut(sources[r][c])[c] += grad.get(r, c);
        }
    }
    out
}

fn unpool_rows(x: &DenseMatrix, parent_map: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(parent_map.len(), x.cols);
    for (v, &p) in parent_map.iter().enumerate() {
        out.row_mut(v).copy_from_slice(x.row(p));
    }
    out
}

fn unpool_backward_rows(grad: &DenseMatrix, parent_map: &[usize], coarse: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(coarse, grad.cols);
    for (v, &p) in parent_map.iter().enumerate() {
        let row = grad.row(v);
        for (o, g) in out.row_mut(p).iter_mut().zip(row) {
            *o += g;
        }
    }
    out
}

struct Trace {
    conv_inputs: Vec<DenseMatrix>,
    enc_acts: Vec<DenseMatrix>,
    pool_sources: Vec<Vec<Vec<usize>>>,
    flat: Vec<f64>,
    fc_act: Vec<f64>,
    mu: Vec<f64>,
    log_var: Vec<f64>,
    sigma: Vec<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    regression: Vec<f64>,
    cvar_z: Vec<f64>,
    dec_input: Vec<f64>,
    dec_fc_act: Vec<f64>,
    dec_states: Vec<DenseMatrix>,
    dec_acts: Vec<DenseMatrix>,
    offsets: DenseMatrix,
    mask: Option<Vec<f64>>,
}

/// Forward products: offsets for the encodable vertices (normalized units),
/// an optional coverage mask over every vertex, the latent draw, the
/// conditioning embedding and the encoder's regression of it.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeOutput {
    pub offsets: Vec<Vec3>,
    pub vertex_ids: Vec<usize>,
    pub mask: Option<Vec<f64>>,
    pub latent: LatentCode,
    pub cvar_z: Vec<f64>,
    pub cvar_regression: Vec<f64>,
}

impl VaeOutput {
    /// Scatter the offsets back over `vertex_count` rows, zero where the
    /// body is not encodable.
    pub fn full_offsets(&self, vertex_count: usize) -> Vec<Vec3> {
        let mut out = vec![Vec3::ZERO; vertex_count];
        for (&v, o) in self.vertex_ids.iter().zip(&self.offsets) {
            out[v] = *o;
        }
        out
    }
}

/// One training example: an encoded garment and its conditioning variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub encoding: OffsetEncoding,
    pub cvars: CondVars,
}

/// Loss breakdown of a single forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLosses {
    pub garment: GarmentLossParts,
    pub cvar: f64,
    pub kl: f64,
    pub total: f64,
}

/// Conditional graph VAE bound to one hierarchy shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub config: VaeConfig,
    pub params: VaeParams,
}

impl Vae {
    /// Fresh model with uniform init; tensor shapes derive from the context.
    pub fn new<R: Rng>(config: VaeConfig, ctx: &GraphContext, rng: &mut R) -> Result<Vae, VaeError> {
        let levels = ctx.levels();
        if config.conv_widths.len() != levels {
            return Err(VaeError::WidthsPerLevel { levels, widths: config.conv_widths.len() });
        }
        let w = &config.conv_widths;
        let coarse = *ctx.level_sizes.last().expect("hierarchy has at least one level");
        let mut enc_convs = Vec::with_capacity(levels);
        for i in 0..levels {
            let input = if i == 0 { config.input_width } else { w[i - 1] };
            enc_convs.push(ConvLayer::init(CHEB_ORDER, input, w[i], rng));
        }
        let flat = coarse * w[levels - 1];
        let enc_fc = DenseLayer::init(flat, config.dense_hidden, rng);
        let enc_mu = DenseLayer::init(config.dense_hidden, config.latent_dim, rng);
        let mut enc_log_var = DenseLayer::init(config.dense_hidden, config.latent_dim, rng);
        // Start the latent channel quiet: a small initial variance keeps the
        // reparameterization noise from drowning early reconstruction steps.
        for b in &mut enc_log_var.bias {
            *b = -6.0;
        }
        let enc_cvar_reg = DenseLayer::init(config.dense_hidden, config.cvar_z_dim, rng);
        let dec_fc = DenseLayer::init(config.latent_dim + config.cvar_z_dim, flat, rng);
        let mut dec_convs = Vec::with_capacity(levels.saturating_sub(1));
        for i in (1..levels).rev() {
            dec_convs.push(ConvLayer::init(CHEB_ORDER, w[i], w[i - 1], rng));
        }
        let offset_head = ConvLayer::init(CHEB_ORDER, w[0], 3, rng);
        let mask_head = match config.kind {
            VaeKind::Static => Some(ConvLayer::init(CHEB_ORDER, w[0], 1, rng)),
            VaeKind::Dynamic => None,
        };
        let gamma = GammaNet::init(config.cvar_dim, config.gamma_hidden, config.cvar_z_dim, rng);
        Ok(Vae {
            config,
            params: VaeParams {
                enc_convs,
                enc_fc,
                enc_mu,
                enc_log_var,
                enc_cvar_reg,
                dec_fc,
                dec_convs,
                offset_head,
                mask_head,
                gamma,
            },
        })
    }

    fn run_forward(
        &self,
        ctx: &GraphContext,
        input: &DenseMatrix,
        cvar: &[f64],
        eps: &[f64],
    ) -> Result<Trace, VaeError> {
        let cfg = &self.config;
        let levels = ctx.levels();
        if cfg.conv_widths.len() != levels {
            return Err(VaeError::WidthsPerLevel { levels, widths: cfg.conv_widths.len() });
        }
        let n0 = ctx.level_sizes[0];
        if input.rows != n0 {
            return Err(VaeError::InputRows { expected: n0, got: input.rows });
        }
        if input.cols != cfg.input_width {
            return Err(VaeError::InputWidth { expected: cfg.input_width, got: input.cols });
        }
        if cvar.len() != cfg.cvar_dim {
            return Err(VaeError::CvarLength { expected: cfg.cvar_dim, got: cvar.len() });
        }
        if eps.len() != cfg.latent_dim {
            return Err(VaeError::NoiseLength { expected: cfg.latent_dim, got: eps.len() });
        }
        let p = &self.params;

        // Encoder: convolution, tanh, max-pool per level.
        let mut conv_inputs = Vec::with_capacity(levels);
        let mut enc_acts = Vec::with_capacity(levels);
        let mut pool_sources = Vec::with_capacity(levels.saturating_sub(1));
        let mut cursor = input.clone();
        for i in 0..levels {
            let act = tanh_matrix(&cheb_conv(&cursor, &ctx.laplacians[i], &p.enc_convs[i]));
            conv_inputs.push(cursor);
            if i + 1 < levels {
                let (pooled, sources) =
                    pool_max(&act, &ctx.parent_maps[i], ctx.level_sizes[i + 1]);
                pool_sources.push(sources);
                cursor = pooled;
            } else {
                cursor = DenseMatrix::zeros(0, 0);
            }
            enc_acts.push(act);
        }

        let flat = enc_acts[levels - 1].data.clone();
        let fc_act = tanh_vec(&p.enc_fc.forward(&flat));
        let mu = p.enc_mu.forward(&fc_act);
        let log_var = p.enc_log_var.forward(&fc_act);
        let regression = p.enc_cvar_reg.forward(&fc_act);
        let cvar_z = p.gamma.embed(cvar);
        let sigma: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> =
            mu.iter().zip(&sigma).zip(eps).map(|((m, s), e)| m + s * e).collect();

        // Decoder: dense expansion, then convolution + unpool per level, with
        // skip connections from the matching encoder activations.
        let mut dec_input = z.clone();
        dec_input.extend_from_slice(&cvar_z);
        let dec_fc_act = tanh_vec(&p.dec_fc.forward(&dec_input));
        let coarse = ctx.level_sizes[levels - 1];
        let mut state =
            DenseMatrix::from_rows(coarse, cfg.conv_widths[levels - 1], dec_fc_act.clone());
        axpy(&mut state, 1.0, &enc_acts[levels - 1]);
        let mut dec_states = vec![DenseMatrix::zeros(0, 0); levels];
        let mut dec_acts = Vec::with_capacity(levels.saturating_sub(1));
        for (j, i) in (1..levels).rev().enumerate() {
            dec_states[i] = state;
            let act = tanh_matrix(&cheb_conv(&dec_states[i], &ctx.laplacians[i], &p.dec_convs[j]));
            let mut up = unpool_rows(&act, &ctx.parent_maps[i - 1]);
            axpy(&mut up, 1.0, &enc_acts[i - 1]);
            dec_acts.push(act);
            state = up;
        }
        dec_states[0] = state;

        let offsets = cheb_conv(&dec_states[0], &ctx.laplacians[0], &p.offset_head);
        let mask = p.mask_head.as_ref().map(|h| {
            cheb_conv(&dec_states[0], &ctx.laplacians[0], h)
                .data
                .iter()
                .map(|&v| logistic(v))
                .collect()
        });

        Ok(Trace {
            conv_inputs,
            enc_acts,
            pool_sources,
            flat,
            fc_act,
            mu,
            log_var,
            sigma,
            eps: eps.to_vec(),
            z,
            regression,
            cvar_z,
            dec_input,
            dec_fc_act,
            dec_states,
            dec_acts,
            offsets,
            mask,
        })
    }

    /// Forward pass with an explicit noise draw; all-zero `eps` decodes the
    /// posterior mean and is fully deterministic.
    pub fn forward(
        &self,
        ctx: &GraphContext,
        input: &DenseMatrix,
        cvars: &CondVars,
        eps: &[f64],
    ) -> Result<VaeOutput, VaeError> {
        let trace = self.run_forward(ctx, input, &cvars.cvar, eps)?;
        let mut offsets = Vec::with_capacity(ctx.encodable_count());
        let mut vertex_ids = Vec::with_capacity(ctx.encodable_count());
        for v in 0..ctx.level_sizes[0] {
            if ctx.encodable[v] {
                let r = trace.offsets.row(v);
                offsets.push(Vec3::new(r[0], r[1], r[2]));
                vertex_ids.push(v);
            }
        }
        Ok(VaeOutput {
            offsets,
            vertex_ids,
            mask: trace.mask,
            latent: LatentCode { mu: trace.mu, log_var: trace.log_var, z: trace.z },
            cvar_z: trace.cvar_z,
            cvar_regression: trace.regression,
        })
    }

    /// Forward pass with a fresh standard normal draw.
    pub fn forward_sampled<R: Rng>(
        &self,
        ctx: &GraphContext,
        input: &DenseMatrix,
        cvars: &CondVars,
        rng: &mut R,
    ) -> Result<VaeOutput, VaeError> {
        let eps = standard_normal(rng, self.config.latent_dim);
        self.forward(ctx, input, cvars, &eps)
    }

    /// Loss breakdown of one sample under a fixed noise draw.
    pub fn sample_loss(
        &self,
        ctx: &GraphContext,
        body: &TriMesh,
        sample: &ToySample,
        weights: &LossWeights,
        eps: &[f64],
    ) -> Result<SampleLosses, VaeError> {
        self.sample_gradients(ctx, body, sample, weights, eps).map(|(l, _)| l)
    }

    /// Loss and parameter gradients for one sample. The conditioning network
    /// is treated as frozen: its embedding is the regression target and its
    /// gradient slots come back zero.
    pub fn sample_gradients(
        &self,
        ctx: &GraphContext,
        body: &TriMesh,
        sample: &ToySample,
        weights: &LossWeights,
        eps: &[f64],
    ) -> Result<(SampleLosses, VaeParams), VaeError> {
        let input = vae_input(&sample.encoding, body)?;
        let trace = self.run_forward(ctx, &input, &sample.cvars.cvar, eps)?;
        let n = ctx.level_sizes[0];

        let pred_offsets: Vec<Vec3> = (0..n)
            .map(|v| {
                let r = trace.offsets.row(v);
                Vec3::new(r[0], r[1], r[2])
            })
            .collect();
        let pred_mask: Vec<f64> = match &trace.mask {
            Some(m) => m.clone(),
            None => sample.encoding.mask.clone(),
        };
        let (parts, d_off_field, d_mask_field) =
            garment_loss_gradients(&pred_offsets, &pred_mask, &sample.encoding, body, weights)?;
        let reg_len = trace.regression.len().max(1) as f64;
        let cvar_l1 = trace
            .regression
            .iter()
            .zip(&trace.cvar_z)
            .map(|(r, t)| (r - t).abs())
            .sum::<f64>()
            / reg_len;
        let kl = kl_divergence(&trace.mu, &trace.log_var);
        let total = total_loss(&parts, cvar_l1, kl, weights);
        let losses = SampleLosses { garment: parts, cvar: cvar_l1, kl, total };

        let mut d_offsets = DenseMatrix::zeros(n, 3);
        for (v, o) in d_off_field.iter().enumerate() {
            let r = d_offsets.row_mut(v);
            r[0] = o.x;
            r[1] = o.y;
            r[2] = o.z;
        }
        let d_regression: Vec<f64> = trace
            .regression
            .iter()
            .zip(&trace.cvar_z)
            .map(|(r, t)| signum0(r - t) / reg_len)
            .collect();
        let (d_mu_kl, d_lv_kl) = kl_divergence_backward(&trace.mu, &trace.log_var);
        let d_mask = trace.mask.as_ref().map(|_| d_mask_field);

        let grads = self.backward(
            ctx,
            &trace,
            &d_offsets,
            d_mask.as_deref(),
            &d_regression,
            &d_mu_kl,
            &d_lv_kl,
            weights.kl,
        );
        Ok((losses, grads))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        ctx: &GraphContext,
        trace: &Trace,
        d_offsets: &DenseMatrix,
        d_mask: Option<&[f64]>,
        d_regression: &[f64],
        d_mu_kl: &[f64],
        d_log_var_kl: &[f64],
        kl_weight: f64,
    ) -> VaeParams {
        let p = &self.params;
        let cfg = &self.config;
        let levels = ctx.levels();

        // Output heads into the finest decoder state.
        let (mut d_state, dw_off) = cheb_conv_backward(
            &trace.dec_states[0],
            &ctx.laplacians[0],
            &p.offset_head,
            d_offsets,
        );
        let dw_mask = match (&p.mask_head, d_mask, &trace.mask) {
            (Some(head), Some(dm), Some(m)) => {
                let d_pre = DenseMatrix::from_rows(
                    m.len(),
                    1,
                    m.iter().zip(dm).map(|(mv, g)| g * mv * (1.0 - mv)).collect(),
                );
                let (ds, dw) =
                    cheb_conv_backward(&trace.dec_states[0], &ctx.laplacians[0], head, &d_pre);
                axpy(&mut d_state, 1.0, &ds);
                Some(ConvLayer { weights: dw })
            }
            _ => None,
        };

        // Decoder, finest to coarsest; skips feed the encoder activations.
        let mut d_enc_acts: Vec<DenseMatrix> =
            trace.enc_acts.iter().map(|a| DenseMatrix::zeros(a.rows, a.cols)).collect();
        let mut dw_dec: Vec<ConvLayer> = p
            .dec_convs
            .iter()
            .map(|c| ConvLayer {
                weights: c.weights.iter().map(|w| DenseMatrix::zeros(w.rows, w.cols)).collect(),
            })
            .collect();
        for i in 0..levels - 1 {
            axpy(&mut d_enc_acts[i], 1.0, &d_state);
            let d_act = unpool_backward_rows(&d_state, &ctx.parent_maps[i], ctx.level_sizes[i + 1]);
            let j = levels - 2 - i;
            let d_pre = tanh_backward_matrix(&trace.dec_acts[j], &d_act);
            let (ds_next, dws) = cheb_conv_backward(
                &trace.dec_states[i + 1],
                &ctx.laplacians[i + 1],
                &p.dec_convs[j],
                &d_pre,
            );
            dw_dec[j] = ConvLayer { weights: dws };
            d_state = ds_next;
        }
        axpy(&mut d_enc_acts[levels - 1], 1.0, &d_state);

        // Dense decoder head back to the latent draw.
        let d_dec_fc_pre = tanh_backward_vec(&trace.dec_fc_act, &d_state.data);
        let (d_dec_in, dw_dec_fc, db_dec_fc) = p.dec_fc.backward(&trace.dec_input, &d_dec_fc_pre);
        let latent = cfg.latent_dim;
        let d_z = &d_dec_in[..latent];
        // The conditioning slice of the decoder input is frozen: dropped.
        let d_mu: Vec<f64> =
            d_z.iter().zip(d_mu_kl).map(|(dz, dk)| dz + kl_weight * dk).collect();
        let d_log_var: Vec<f64> = (0..latent)
            .map(|k| d_z[k] * trace.eps[k] * trace.sigma[k] * 0.5 + kl_weight * d_log_var_kl[k])
            .collect();

        // Encoder dense head.
        let (d_fc_a, dw_mu, db_mu) = p.enc_mu.backward(&trace.fc_act, &d_mu);
        let (d_fc_b, dw_lv, db_lv) = p.enc_log_var.backward(&trace.fc_act, &d_log_var);
        let (d_fc_c, dw_reg, db_reg) = p.enc_cvar_reg.backward(&trace.fc_act, d_regression);
        let d_fc_act: Vec<f64> =
            (0..cfg.dense_hidden).map(|k| d_fc_a[k] + d_fc_b[k] + d_fc_c[k]).collect();
        let d_fc_pre = tanh_backward_vec(&trace.fc_act, &d_fc_act);
        let (d_flat, dw_enc_fc, db_enc_fc) = p.enc_fc.backward(&trace.flat, &d_fc_pre);
        {
            let coarse = ctx.level_sizes[levels - 1];
            let flat_grad =
                DenseMatrix::from_rows(coarse, cfg.conv_widths[levels - 1], d_flat);
            axpy(&mut d_enc_acts[levels - 1], 1.0, &flat_grad);
        }

        // Encoder convolutions, coarsest back to the input.
        let mut dw_enc: Vec<ConvLayer> = p
            .enc_convs
            .iter()
            .map(|c| ConvLayer {
                weights: c.weights.iter().map(|w| DenseMatrix::zeros(w.rows, w.cols)).collect(),
            })
            .collect();
        for i in (0..levels).rev() {
            let d_act = core::mem::replace(&mut d_enc_acts[i], DenseMatrix::zeros(0, 0));
            let d_pre = tanh_backward_matrix(&trace.enc_acts[i], &d_act);
            let (d_in, dws) = cheb_conv_backward(
                &trace.conv_inputs[i],
                &ctx.laplacians[i],
                &p.enc_convs[i],
                &d_pre,
            );
            dw_enc[i] = ConvLayer { weights: dws };
            if i > 0 {
                let routed = pool_backward(&d_in, &trace.pool_sources[i - 1], ctx.level_sizes[i - 1]);
                axpy(&mut d_enc_acts[i - 1], 1.0, &routed);
            }
        }

        VaeParams {
            enc_convs: dw_enc,
            enc_fc: DenseLayer { weight: dw_enc_fc, bias: db_enc_fc },
            enc_mu: DenseLayer { weight: dw_mu, bias: db_mu },
            enc_log_var: DenseLayer { weight: dw_lv, bias: db_lv },
            enc_cvar_reg: DenseLayer { weight: dw_reg, bias: db_reg },
            dec_fc: DenseLayer { weight: dw_dec_fc, bias: db_dec_fc },
            dec_convs: dw_dec,
            offset_head: ConvLayer { weights: dw_off },
            mask_head: dw_mask,
            gamma: p.gamma.zeros_like(),
        }
    }
}

/// Free-function alias for [`Vae::forward`].
pub fn forward_vae(
    model: &Vae,
    ctx: &GraphContext,
    input: &DenseMatrix,
    cvars: &CondVars,
    eps: &[f64],
) -> Result<VaeOutput, VaeError> {
    model.forward(ctx, input, cvars, eps)
}

/// Stacks normalized offsets and the normalized template into the `n x 6`
/// network input.
pub fn vae_input(encoding: &OffsetEncoding, body: &TriMesh) -> Result<DenseMatrix, VaeError> {
    let n = body.vertices.len();
    if encoding.offsets.len() != n {
        return Err(VaeError::OffsetRows { expected: n, got: encoding.offsets.len() });
    }
    let offsets = encoding.normalized_offsets();
    let template = normalize_template(&body.vertices, &encoding.normalization);
    let mut data = Vec::with_capacity(n * 6);
    for v in 0..n {
        data.extend_from_slice(&offsets[v].to_array());
        data.extend_from_slice(&template[v].to_array());
    }
    Ok(DenseMatrix::from_rows(n, 6, data))
}

/// Inverse of the offset normalization: network units back to meters.
pub fn denormalize_offsets(offsets: &[Vec3], normalization: &Normalization) -> Vec<Vec3> {
    offsets.iter().map(|o| *o * normalization.offset_scale).collect()
}

/// Box-Muller standard normal draws.
pub fn standard_normal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Central-difference audit of an analytic gradient. Returns the worst
/// relative error, measured against `max(1, |analytic|, |numeric|)`, or
/// reports the worst offending coordinate if it exceeds `tolerance`.
///
/// The function under test must be differentiable at `point`: probes that
/// straddle an L1 or hinge kink within `step` of the point will disagree with
/// the one-sided analytic choice, so callers perturb such inputs and retry.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<f64, GradCheckError> {
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    assert!(step > 0.0, "step must be positive");
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    let mut worst_at = 0usize;
    let mut worst_pair = (0.0f64, 0.0f64);
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let fp = f(&probe);
        probe[i] = point[i] - step;
        let fm = f(&probe);
        probe[i] = point[i];
        let numeric = (fp - fm) / (2.0 * step);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(GradCheckError::NonFinite { coordinate: i });
        }
        let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
        let relative = (analytic[i] - numeric).abs() / denom;
        if relative > worst {
            worst = relative;
            worst_at = i;
            worst_pair = (analytic[i], numeric);
        }
    }
    if worst > tolerance {
        return Err(GradCheckError::Mismatch {
            coordinate: worst_at,
            analytic: worst_pair.0,
            numeric: worst_pair.1,
            relative: worst,
        });
    }
    Ok(worst)
}

/// Momentum SGD over a fixed slice layout: `v = momentum v - lr g; p += v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, parameter_count: usize) -> Sgd {
        Sgd { learning_rate, momentum, velocity: vec![0.0; parameter_count] }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "slice layouts differ");
        let mut cursor = 0usize;
        for (pslice, gslice) in params.iter_mut().zip(grads) {
            assert_eq!(pslice.len(), gslice.len(), "slice layouts differ");
            for (p, g) in pslice.iter_mut().zip(gslice.iter()) {
                let v = &mut self.velocity[cursor];
                *v = self.momentum * *v - self.learning_rate * g;
                *p += *v;
                cursor += 1;
            }
        }
        assert_eq!(cursor, self.velocity.len(), "parameter layout changed");
    }
}

/// Two-stage toy training schedule: the conditioning autoencoder first, then
/// the VAE with the conditioning frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Per-epoch multiplier on the learning rate; 1 keeps it constant.
    /// Annealing quenches the oscillation that constant-step L1 descent
    /// settles into.
    pub lr_decay: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma_epochs: 200,
            epochs: 500,
            learning_rate: 1e-3,
            momentum: 0.9,
            lr_decay: 1.0,
            weights: LossWeights::default(),
        }
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochRecord {
    pub total: f64,
    pub offsets: f64,
    pub normals: f64,
    pub mask: f64,
    pub collision: f64,
    pub cvar: f64,
    pub kl: f64,
}

/// Per-epoch traces of both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub gamma: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

/// Overfits a small model on a small dataset with per-sample SGD steps.
/// Records one entry per epoch for each stage and aborts with the epoch
/// index if the loss stops being finite.
pub fn train_toy<R: Rng>(
    model: &mut Vae,
    ctx: &GraphContext,
    body: &TriMesh,
    dataset: &[ToySample],
    schedule: &TrainConfig,
    rng: &mut R,
) -> Result<TrainHistory, VaeError> {
    if dataset.len() < MIN_TOY_DATASET {
        return Err(VaeError::DatasetTooSmall { got: dataset.len() });
    }
    let mut history =
        TrainHistory { gamma: Vec::with_capacity(schedule.gamma_epochs), epochs: Vec::new() };
    let inv = 1.0 / dataset.len() as f64;

    let mut gamma_opt = Sgd::new(
        schedule.learning_rate,
        schedule.momentum,
        model.params.gamma.parameter_count(),
    );
    for epoch in 0..schedule.gamma_epochs {
        let mut mean = 0.0;
        for sample in dataset {
            let (loss, grads) = model.params.gamma.reconstruction_gradients(&sample.cvars.cvar);
            if !loss.is_finite() {
                return Err(VaeError::NonFiniteLoss { epoch });
            }
            mean += loss * inv;
            let gslices = grads.slices();
            let mut pslices = model.params.gamma.slices_mut();
            gamma_opt.step(&mut pslices, &gslices);
        }
        history.gamma.push(mean);
        gamma_opt.learning_rate *= schedule.lr_decay;
    }

    let mut opt = Sgd::new(
        schedule.learning_rate,
        schedule.momentum,
        model.params.vae_parameter_count(),
    );
    for epoch in 0..schedule.epochs {
        let mut record = EpochRecord::default();
        for sample in dataset {
            let eps = standard_normal(rng, model.config.latent_dim);
            let (losses, grads) =
                model.sample_gradients(ctx, body, sample, &schedule.weights, &eps)?;
            if !losses.total.is_finite() {
                return Err(VaeError::NonFiniteLoss { epoch });
            }
            record.total += losses.total * inv;
            record.offsets += losses.garment.offsets * inv;
            record.normals += losses.garment.normals * inv;
            record.mask += losses.garment.mask * inv;
            record.collision += losses.garment.collision * inv;
            record.cvar += losses.cvar * inv;
            record.kl += losses.kl * inv;
            let gslices = grads.vae_slices();
            let mut pslices = model.params.vae_slices_mut();
            opt.step(&mut pslices, &gslices);
        }
        history.epochs.push(record);
        opt.learning_rate *= schedule.lr_decay;
    }
    Ok(history)
}
