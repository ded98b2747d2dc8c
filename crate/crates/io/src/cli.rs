//! Command-line driver for the pipeline: outfit generation, body collision
//! handling, draping simulation, offset encoding, hierarchy construction,
//! toy training, gradient checking, cache conversion, and inspection.
//!
//! Every command that takes `--seed` is a pure function of its arguments:
//! rerunning with the same flags writes byte-identical artifacts. Commands
//! that produce a directory leave a `manifest.txt` recording the settings
//! used and every file written with its byte count.

use std::error::Error;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weft_core::body::{
    detect_self_collisions, joint, resolve_self_collisions, segment, stand_in_body,
    stand_in_watch_pairs, BodyModel, BodyParams, CollisionClass, CollisionPolicy, Gender,
};
use weft_core::encoding::{
    encode, register, Normalization, OffsetEncoding, TopologyKind, MASK_THRESHOLD,
    SMOOTH_BOUNDARY_ITERATIONS,
};
use weft_core::garment::{
    resize, sew, GarmentTemplate, GeneratorConfig, OutfitSample, RESIZE_SMOOTH_ITERATIONS,
};
use weft_core::geom::Vec3;
use weft_core::hierarchy::{build_hierarchy, default_level_sizes, MeshHierarchy};
use weft_core::mesh::TriMesh;
use weft_core::sim::{build_cloth, simulate_sequence, FabricPreset};
use weft_core::topology::{build_skirt_topology, registration_mesh};
use weft_core::vae::{
    collision_loss, collision_loss_backward, garment_loss, garment_loss_gradients, grad_check,
    kl_divergence, kl_divergence_backward, CondVars, GammaNet, GraphContext, LossWeights,
    ToySample, TrainConfig, Vae, VaeConfig, VaeKind,
};

use crate::config::{read_config, PipelineConfig};
use crate::container::{read_container, Container, SectionData};
use crate::meta::{
    format_sample_metadata, write_manifest, GarmentMeta, RunManifest, SampleMetadata,
};
use crate::obj::{format_obj, read_obj};
use crate::pc16::{read_pc16, write_pc16, Pc16Sequence, PC16_SIGNATURE};
use crate::pc2::{read_pc2, write_pc2, Pc2Sequence, PC2_SIGNATURE};
use crate::split::{downsample_split, split_id, SPLIT_FRAMES};

/// Separation left between body segments after collision resolution (m).
pub const COLLISION_SEPARATION: f64 = 0.004;

/// Registration sweeps used by the encode command.
pub const REGISTER_ITERATIONS: usize = 10;

#[derive(Parser, Debug)]
#[command(name = "weft", version, about = "Synthetic clothed-body data pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample an outfit and write its garment meshes with metadata.
    GenerateOutfit {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pose the body, then separate or discard self-colliding frames.
    ResolveCollisions {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of posed frames to examine.
        #[arg(long, default_value_t = 5)]
        frames: usize,
    },
    /// Drape a sampled outfit over an animated body and write half-float
    /// point caches in 300-frame splits.
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Output frames at 30 fps (the body is captured at 60 fps).
        #[arg(long, default_value_t = 60)]
        frames: usize,
        /// Override both garments' fabric preset by name.
        #[arg(long)]
        fabric: Option<String>,
        /// Override the tightness pair, e.g. `-0.5,0.2`.
        #[arg(long, allow_hyphen_values = true)]
        tightness: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Express a sampled garment as body offsets plus a coverage mask.
    Encode {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the segment-aware pooling hierarchy of the body template.
    BuildHierarchy {
        #[arg(long)]
        out: PathBuf,
    },
    /// Overfit a small graph autoencoder on a synthetic grid dataset.
    TrainToy {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        seed: u64,
    },
    /// Convert point caches between the 32-bit and half-float layouts.
    Convert {
        #[arg(long, value_enum)]
        to: CacheFormat,
        input: PathBuf,
        output: PathBuf,
    },
    /// Summarize a pipeline file or an output directory.
    Inspect { path: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheFormat {
    Pc16,
    Pc2,
}

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Error for CliError {}

fn cli_err(msg: impl Into<String>) -> Box<dyn Error> {
    Box::new(CliError(msg.into()))
}

pub fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::GenerateOutfit { seed, out, config } => {
            cmd_generate_outfit(seed, &out, config.as_deref())
        }
        Command::ResolveCollisions { seed, out, frames } => {
            cmd_resolve_collisions(seed, &out, frames)
        }
        Command::Simulate { seed, out, frames, fabric, tightness, config } => {
            cmd_simulate(seed, &out, frames, fabric.as_deref(), tightness.as_deref(), config.as_deref())
        }
        Command::Encode { seed, out } => cmd_encode(seed, &out),
        Command::BuildHierarchy { out } => cmd_build_hierarchy(&out),
        Command::TrainToy { seed, out, epochs } => cmd_train_toy(seed, &out, epochs),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Convert { to, input, output } => cmd_convert(to, &input, &output),
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

struct ArtifactWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

impl ArtifactWriter {
    fn new(dir: &Path, manifest: RunManifest) -> io::Result<ArtifactWriter> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), manifest })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.artifact(name, bytes.len() as u64);
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> io::Result<()> {
        self.write_bytes(name, text.as_bytes())
    }

    fn finish(self) -> Result<(), Box<dyn Error>> {
        write_manifest(&self.dir.join("manifest.txt"), &self.manifest)?;
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Box<dyn Error>> {
    match path {
        Some(p) => Ok(read_config(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

/// Sequence label derived from the seed, in the `<subject>_<take>` style.
fn sequence_name(seed: u64) -> String {
    format!("{:02}_01", seed % 100)
}

fn garment_meta(sample: &OutfitSample) -> Vec<GarmentMeta> {
    let mut garments = Vec::new();
    if let Some(upper) = &sample.upper {
        garments.push(GarmentMeta {
            name: upper.kind.name().to_string(),
            fabric: sample.upper_fabric.clone(),
        });
    }
    garments.push(GarmentMeta {
        name: sample.lower.kind.name().to_string(),
        fabric: sample.lower_fabric.clone(),
    });
    garments
}

fn sample_metadata(
    sample: &OutfitSample,
    model: &BodyModel,
    seed: u64,
    split: u32,
    pose_reference: &str,
) -> SampleMetadata {
    SampleMetadata {
        sequence: sequence_name(seed),
        split,
        gender: sample.gender,
        tightness: sample.tightness,
        shape: vec![0.0; model.shape_count()],
        pose_reference: pose_reference.to_string(),
        garments: garment_meta(sample),
    }
}

fn cmd_generate_outfit(
    seed: u64,
    out: &Path,
    _config: Option<&Path>,
) -> Result<(), Box<dyn Error>> {
    let model = stand_in_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = weft_core::garment::sample_outfit(&model, &GeneratorConfig::default(), &mut rng)?;

    let mut writer = ArtifactWriter::new(out, RunManifest::new("generate-outfit", Some(seed)))?;
    for line in &sample.log {
        writer.manifest.setting("draw", line);
    }
    writer.manifest.setting("elastic_waist", sample.elastic_waist);

    if let Some(upper) = &sample.upper {
        writer.write_text("upper.obj", &format_obj(&upper.mesh))?;
    }
    writer.write_text("lower.obj", &format_obj(&sample.lower.mesh))?;
    if let Some(outfit) = &sample.sewn {
        writer.write_text("outfit.obj", &format_obj(&outfit.mesh))?;
    }
    let meta = sample_metadata(&sample, &model, seed, 0, "rest");
    writer.write_text("metadata.txt", &format_sample_metadata(&meta))?;
    writer.finish()
}

fn random_pose(rng: &mut impl Rng, scale: f64, n_joints: usize) -> Vec<Vec3> {
    (0..n_joints)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
            )
        })
        .collect()
}

fn cmd_resolve_collisions(seed: u64, out: &Path, frames: usize) -> Result<(), Box<dyn Error>> {
    let model = stand_in_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let watch = stand_in_watch_pairs();
    let policy = CollisionPolicy::default();

    let mut writer =
        ArtifactWriter::new(out, RunManifest::new("resolve-collisions", Some(seed)))?;
    writer.manifest.setting("frames", frames);
    writer.manifest.setting("separation", COLLISION_SEPARATION);

    let mut kept = 0usize;
    for f in 0..frames {
        let pose = random_pose(&mut rng, 0.35, joint::COUNT);
        let params = BodyParams {
            beta: vec![0.0; model.shape_count()],
            theta: vec![pose],
            gender: Gender::Female,
        };
        let mesh = model.skin(&params, 0)?;
        let reports = detect_self_collisions(&mesh, &watch, &policy)?;
        let frame_key = format!("frame{f:02}");
        if reports.iter().any(|r| r.classification == CollisionClass::Unsolvable) {
            writer.manifest.setting(&frame_key, "discarded (unsolvable collision)");
            continue;
        }
        let solvable: Vec<_> = reports
            .iter()
            .filter(|r| r.classification == CollisionClass::Solvable)
            .cloned()
            .collect();
        let resolved = if solvable.is_empty() {
            mesh
        } else {
            resolve_self_collisions(&mesh, &solvable, COLLISION_SEPARATION)?
        };
        writer.manifest.setting(&frame_key, format!("{} collision(s) resolved", solvable.len()));
        writer.write_text(&format!("{frame_key}.obj"), &format_obj(&resolved))?;
        kept += 1;
    }
    writer.manifest.setting("kept", kept);
    writer.finish()
}

fn parse_tightness(flag: &str) -> Result<[f64; 2], Box<dyn Error>> {
    let parts: Vec<&str> = flag.split(',').collect();
    if parts.len() != 2 {
        return Err(cli_err(format!("--tightness expects `a,b`, got `{flag}`")));
    }
    let mut gamma = [0.0f64; 2];
    for (slot, part) in gamma.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| cli_err(format!("cannot parse tightness value `{part}`")))?;
    }
    Ok(gamma)
}

/// Boundary ring with the highest centroid: the waist of a lower garment.
fn waist_ring(template: &GarmentTemplate) -> Option<Vec<usize>> {
    let mean_y = |ring: &Vec<usize>| -> f64 {
        ring.iter().map(|&v| template.mesh.vertices[v].y).sum::<f64>() / ring.len() as f64
    };
    template
        .boundary_rings
        .iter()
        .max_by(|a, b| mean_y(a).partial_cmp(&mean_y(b)).expect("finite vertices"))
        .cloned()
}

struct ClothPiece {
    name: &'static str,
    mesh: TriMesh,
    fabric: FabricPreset,
    elastic_rings: Vec<Vec<usize>>,
}

fn cmd_simulate(
    seed: u64,
    out: &Path,
    frames: usize,
    fabric_flag: Option<&str>,
    tightness_flag: Option<&str>,
    config: Option<&Path>,
) -> Result<(), Box<dyn Error>> {
    if frames == 0 {
        return Err(cli_err("--frames must be at least 1"));
    }
    let pipeline = load_config(config)?;
    let model = stand_in_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let forced_gamma = tightness_flag.map(parse_tightness).transpose()?;
    let mut gen_config = GeneratorConfig::default();
    if forced_gamma.is_some() {
        // Degenerate range: the draw returns zero tightness, so the pieces
        // below get their one real resize at the requested pair.
        gen_config.tightness = (0.0, 0.0);
    }
    let mut sample = weft_core::garment::sample_outfit(&model, &gen_config, &mut rng)?;
    if let Some(gamma) = forced_gamma {
        let zeros = vec![0.0; model.shape_count()];
        if let Some(upper) = sample.upper.as_mut() {
            resize(upper, &model, &zeros, gamma, sample.gender, RESIZE_SMOOTH_ITERATIONS)?;
        }
        resize(&mut sample.lower, &model, &zeros, gamma, sample.gender, RESIZE_SMOOTH_ITERATIONS)?;
        if sample.sewn.is_some() {
            let upper = sample.upper.as_ref().expect("sewn outfits have an upper piece");
            sample.sewn = Some(sew(upper, &sample.lower)?);
        }
        sample.tightness = gamma;
    }
    if let Some(name) = fabric_flag {
        if pipeline.fabric_with_overrides(name).is_none() {
            return Err(cli_err(format!("unknown fabric `{name}`")));
        }
        sample.upper_fabric = name.to_string();
        sample.lower_fabric = name.to_string();
    }
    let lower_preset = pipeline
        .fabric_with_overrides(&sample.lower_fabric)
        .ok_or_else(|| cli_err(format!("unknown fabric `{}`", sample.lower_fabric)))?;
    let upper_preset = pipeline
        .fabric_with_overrides(&sample.upper_fabric)
        .ok_or_else(|| cli_err(format!("unknown fabric `{}`", sample.upper_fabric)))?;

    // Body motion: capture at 60 fps, keep every other frame, split.
    let gender = sample.gender;
    let rest = BodyParams::rest(model.shape_count(), joint::COUNT, gender);
    let mut tight = rest.clone();
    if !tight.beta.is_empty() {
        tight.beta[0] += sample.tightness[0] * gender.first_offset_sign();
    }
    if tight.beta.len() > 1 {
        tight.beta[1] += sample.tightness[1];
    }
    let mut target = rest.clone();
    target.theta = vec![random_pose(&mut rng, 0.45, joint::COUNT)];
    let captured = model.transition(&rest, &target, 2 * frames)?;
    let body_splits = downsample_split(&captured);

    // The drape warmup blends the tightness-shaped body into the real one,
    // then holds the first pose while the cloth settles.
    let mut warmup: Vec<TriMesh> = if pipeline.warmup_shape_frames >= 2 {
        model.transition(&tight, &rest, pipeline.warmup_shape_frames)?
    } else {
        Vec::new()
    };
    for _ in 0..pipeline.warmup_pose_frames {
        warmup.push(body_splits[0][0].clone());
    }

    // Cache positions relative to the root joint, which skinning keeps
    // fixed: every stored value stays inside the half-float range.
    let shaped = model.shaped_vertices(&rest.beta)?;
    let root = model.regress_joints(&shaped)[joint::PELVIS];

    let mut pieces: Vec<ClothPiece> = Vec::new();
    if let Some(outfit) = &sample.sewn {
        pieces.push(ClothPiece {
            name: "outfit",
            mesh: outfit.mesh.clone(),
            fabric: lower_preset.clone(),
            elastic_rings: Vec::new(),
        });
    } else {
        if let Some(upper) = &sample.upper {
            pieces.push(ClothPiece {
                name: upper.kind.name(),
                mesh: upper.mesh.clone(),
                fabric: upper_preset.clone(),
                elastic_rings: Vec::new(),
            });
        }
        let elastic_rings = if sample.elastic_waist {
            waist_ring(&sample.lower).into_iter().collect()
        } else {
            Vec::new()
        };
        pieces.push(ClothPiece {
            name: sample.lower.kind.name(),
            mesh: sample.lower.mesh.clone(),
            fabric: lower_preset.clone(),
            elastic_rings,
        });
    }

    let mut writer = ArtifactWriter::new(out, RunManifest::new("simulate", Some(seed)))?;
    writer.manifest.setting("frames", frames);
    writer.manifest.setting("splits", body_splits.len());
    writer.manifest.setting("substeps", pipeline.substeps);
    writer.manifest.setting("tightness", format!("{},{}", sample.tightness[0], sample.tightness[1]));
    for line in &sample.log {
        writer.manifest.setting("draw", line);
    }
    if let Some(name) = fabric_flag {
        writer.manifest.setting("fabric_override", name);
    }

    let seq_config = pipeline.sequence_config();
    let pose_reference = format!("transition-{seed}");
    for piece in &pieces {
        let mut state = build_cloth(&piece.mesh, &piece.fabric, &piece.elastic_rings);
        for (k, body_frames) in body_splits.iter().enumerate() {
            let warm: &[TriMesh] = if k == 0 { &warmup } else { &[] };
            let cloth = simulate_sequence(&mut state, warm, body_frames, &seq_config)?;
            let relative: Vec<Vec<Vec3>> = cloth
                .iter()
                .map(|frame| frame.iter().map(|&p| p - root).collect())
                .collect();
            let cache = Pc16Sequence {
                start_frame: (k * SPLIT_FRAMES) as u32,
                sample_rate: 30,
                frames: relative,
            };
            let name = format!("{}_{}_{}.pc16", sequence_name(seed), split_id(k), piece.name);
            let bytes = crate::pc16::encode_pc16(&cache)?;
            writer.write_bytes(&name, &bytes)?;
        }
    }
    for k in 0..body_splits.len() {
        let meta = sample_metadata(&sample, &model, seed, k as u32, &pose_reference);
        writer.write_text(
            &format!("{}.txt", meta.sample_name()),
            &format_sample_metadata(&meta),
        )?;
    }
    writer.finish()
}

fn cmd_encode(seed: u64, out: &Path) -> Result<(), Box<dyn Error>> {
    let model = stand_in_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = weft_core::garment::sample_outfit(&model, &GeneratorConfig::default(), &mut rng)?;
    let gender = sample.gender;
    let rest = BodyParams::rest(model.shape_count(), joint::COUNT, gender);
    let body = model.skin(&rest, 0)?;

    let garment_mesh = &sample.lower.mesh;
    let kind = TopologyKind::for_garment(sample.lower.kind);
    let reg_body = match kind {
        TopologyKind::Skirt => {
            let dual = build_skirt_topology(&body, &model.inner_leg_strips)?;
            registration_mesh(&dual, SMOOTH_BOUNDARY_ITERATIONS)?
        }
        TopologyKind::Standard => body.clone(),
    };
    let corr = register(garment_mesh, &reg_body, 1.0, REGISTER_ITERATIONS)?;
    let enc = encode(garment_mesh, &reg_body, &corr, kind)?;

    let mut container = Container::new();
    let mut offsets = Vec::with_capacity(enc.offsets.len() * 3);
    for o in &enc.offsets {
        offsets.extend_from_slice(&o.to_array());
    }
    container.push("offsets", SectionData::F64(offsets));
    container.push("mask", SectionData::F64(enc.mask.clone()));
    container.push(
        "kind",
        SectionData::U8(vec![match enc.kind {
            TopologyKind::Standard => 0,
            TopologyKind::Skirt => 1,
        }]),
    );
    container.push(
        "normalization",
        SectionData::F64(vec![
            enc.normalization.offset_scale,
            enc.normalization.template_shift.x,
            enc.normalization.template_shift.y,
            enc.normalization.template_shift.z,
            enc.normalization.template_scale,
        ]),
    );
    container.push(
        "garment_to_body",
        SectionData::U32(corr.garment_to_body.iter().map(|&v| v as u32).collect()),
    );
    container.push("residuals", SectionData::F64(corr.residuals.clone()));

    let mut writer = ArtifactWriter::new(out, RunManifest::new("encode", Some(seed)))?;
    writer.manifest.setting("garment", sample.lower.kind.name());
    writer.manifest.setting(
        "topology",
        match kind {
            TopologyKind::Standard => "standard",
            TopologyKind::Skirt => "skirt-bridge",
        },
    );
    let mean_residual =
        corr.residuals.iter().sum::<f64>() / corr.residuals.len().max(1) as f64;
    writer.manifest.setting("mean_residual", format!("{mean_residual:.9}"));
    writer.manifest.setting(
        "covered_vertices",
        enc.mask.iter().filter(|&&m| m >= MASK_THRESHOLD).count(),
    );
    writer.write_text("garment.obj", &format_obj(garment_mesh))?;
    writer.write_text("body.obj", &format_obj(&reg_body))?;
    writer.write_bytes("encoding.bin", &crate::container::encode_container(&container))?;
    writer.finish()
}

fn cmd_build_hierarchy(out: &Path) -> Result<(), Box<dyn Error>> {
    let model = stand_in_body();
    let mesh = &model.template;
    let sizes = default_level_sizes(mesh.vertex_count(), segment::COUNT);
    let hierarchy = build_hierarchy(mesh, &sizes)?;

    let mut container = Container::new();
    container.push(
        "level_sizes",
        SectionData::U32(hierarchy.level_sizes().iter().map(|&s| s as u32).collect()),
    );
    for (i, map) in hierarchy.parent_maps.iter().enumerate() {
        container.push(
            &format!("parent_map_{i}"),
            SectionData::U32(map.iter().map(|&p| p as u32).collect()),
        );
    }
    for (i, edges) in hierarchy.edge_lists.iter().enumerate() {
        let mut flat = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            flat.push(a as u32);
            flat.push(b as u32);
        }
        container.push(&format!("edges_{i}"), SectionData::U32(flat));
    }

    let mut writer = ArtifactWriter::new(out, RunManifest::new("build-hierarchy", None))?;
    let size_list = hierarchy
        .level_sizes()
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    writer.manifest.setting("level_sizes", size_list);
    writer.manifest.setting("levels", hierarchy.levels.len());
    writer.write_bytes("hierarchy.bin", &crate::container::encode_container(&container))?;
    writer.finish()
}

/// Two-segment grid used by the toy training and gradient-check commands.
fn toy_grid(cols: usize, rows: usize) -> TriMesh {
    let mut vertices = Vec::new();
    let mut segments = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            vertices.push(Vec3::new(c as f64 * 0.1, 0.0, r as f64 * 0.1));
            segments.push(u32::from(c >= cols / 2));
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
    let mut mesh = TriMesh::new(vertices, faces).expect("grid is well-formed");
    mesh.segments = Some(segments);
    mesh
}

fn toy_context(mesh: &TriMesh) -> Result<(MeshHierarchy, GraphContext), Box<dyn Error>> {
    let n = mesh.vertex_count();
    let hierarchy = build_hierarchy(mesh, &[n, 2])?;
    let ctx = GraphContext::new(&hierarchy, vec![true; n])?;
    Ok((hierarchy, ctx))
}

fn random_toy_encoding(mesh: &TriMesh, rng: &mut impl Rng) -> OffsetEncoding {
    let n = mesh.vertex_count();
    let mut offsets = vec![Vec3::ZERO; n];
    let mut mask = vec![0.0; n];
    for v in 0..n {
        if rng.gen::<f64>() < 0.85 {
            mask[v] = 1.0;
            // The grid's face normals point toward -y, so outward offsets
            // have a negative y component.
            offsets[v] = Vec3::new(
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.04..-0.01),
                rng.gen_range(-0.03..0.03),
            );
        }
    }
    if mask.iter().all(|&m| m < MASK_THRESHOLD) {
        mask[0] = 1.0;
    }
    OffsetEncoding {
        offsets,
        mask,
        kind: TopologyKind::Standard,
        normalization: Normalization::default(),
    }
}

fn random_toy_cvars(dim: usize, rng: &mut impl Rng) -> CondVars {
    CondVars::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn cmd_train_toy(seed: u64, out: &Path, epochs: usize) -> Result<(), Box<dyn Error>> {
    if epochs == 0 {
        return Err(cli_err("--epochs must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = toy_grid(4, 5);
    let (_, ctx) = toy_context(&mesh)?;
    let config = VaeConfig {
        kind: VaeKind::Static,
        input_width: 6,
        conv_widths: vec![4, 6],
        dense_hidden: 8,
        latent_dim: 4,
        cvar_dim: 4,
        cvar_z_dim: 2,
        gamma_hidden: 3,
    };
    let mut model = Vae::new(config, &ctx, &mut rng)?;
    let dataset: Vec<ToySample> = (0..8)
        .map(|_| ToySample {
            encoding: random_toy_encoding(&mesh, &mut rng),
            cvars: random_toy_cvars(4, &mut rng),
        })
        .collect();
    let schedule = TrainConfig {
        gamma_epochs: epochs,
        epochs,
        learning_rate: 2e-2,
        momentum: 0.9,
        lr_decay: 0.995,
        weights: LossWeights::default(),
    };
    let history = weft_core::vae::train_toy(&mut model, &ctx, &mesh, &dataset, &schedule, &mut rng)?;

    let mut text = String::new();
    for (i, loss) in history.gamma.iter().enumerate() {
        text.push_str(&format!("gamma {i} loss {loss}\n"));
    }
    for (i, record) in history.epochs.iter().enumerate() {
        text.push_str(&format!(
            "epoch {i} total {} offsets {} normals {} mask {} collision {} cvar {} kl {}\n",
            record.total,
            record.offsets,
            record.normals,
            record.mask,
            record.collision,
            record.cvar,
            record.kl
        ));
    }

    let mut container = Container::new();
    container.push("vae_params", SectionData::F64(model.params.vae_flat()));
    container.push("gamma_params", SectionData::F64(model.params.gamma.flat()));
    container.push(
        "conv_widths",
        SectionData::U32(model.config.conv_widths.iter().map(|&w| w as u32).collect()),
    );
    container.push("latent_dim", SectionData::U32(vec![model.config.latent_dim as u32]));
    container.push("cvar_dim", SectionData::U32(vec![model.config.cvar_dim as u32]));

    let mut writer = ArtifactWriter::new(out, RunManifest::new("train-toy", Some(seed)))?;
    writer.manifest.setting("epochs", epochs);
    writer.manifest.setting("dataset", dataset.len());
    let first = history.epochs.first().expect("at least one epoch");
    let last = history.epochs.last().expect("at least one epoch");
    writer.manifest.setting("first_total", format!("{:.9}", first.total));
    writer.manifest.setting("final_total", format!("{:.9}", last.total));
    writer.write_text("history.txt", &text)?;
    writer.write_bytes("weights.bin", &crate::container::encode_container(&container))?;
    writer.finish()
}

fn report_check(name: &str, worst: f64) {
    println!("PASS {name} (worst relative error {worst:.3e})");
}

fn cmd_gradcheck(seed: u64) -> Result<(), Box<dyn Error>> {
    let fail = |name: &str, detail: String| -> Box<dyn Error> {
        cli_err(format!("FAIL {name}: {detail}"))
    };

    // Latent divergence: parameters are the concatenated mean and log
    // variance vectors.
    let mut worst_all: f64 = 0.0;
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
        let n = 6;
        let point: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (d_mu, d_lv) = kl_divergence_backward(&point[..n], &point[n..]);
        let analytic: Vec<f64> = d_mu.into_iter().chain(d_lv).collect();
        let worst = grad_check(
            |flat| kl_divergence(&flat[..n], &flat[n..]),
            &point,
            &analytic,
            1e-6,
            1e-6,
        )
        .map_err(|e| fail("latent-divergence", e.to_string()))?;
        worst_all = worst_all.max(worst);
    }
    report_check("latent-divergence", worst_all);

    worst_all = 0.0;
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100 + s));
        let n = 8;
        let normals: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(0.2..1.0),
                )
                .try_normalized()
                .expect("components are bounded away from zero")
            })
            .collect();
        let point: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let offsets_of = |flat: &[f64]| -> Vec<Vec3> {
            flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
        };
        let analytic: Vec<f64> = collision_loss_backward(&offsets_of(&point), &normals)
            .iter()
            .flat_map(|v| v.to_array())
            .collect();
        let worst = grad_check(
            |flat| collision_loss(&offsets_of(flat), &normals),
            &point,
            &analytic,
            1e-6,
            1e-4,
        )
        .map_err(|e| fail("collision-penalty", e.to_string()))?;
        worst_all = worst_all.max(worst);
    }
    report_check("collision-penalty", worst_all);

    worst_all = 0.0;
    let mesh = toy_grid(4, 4);
    let weights = LossWeights { normals: 1.0, mask: 1.0, collision: 1.0, kl: 0.5 };
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(200 + s));
        let truth = random_toy_encoding(&mesh, &mut rng);
        let n = mesh.vertex_count();
        let mut point: Vec<f64> = Vec::with_capacity(4 * n);
        for _ in 0..3 * n {
            point.push(rng.gen_range(-0.1..0.1));
        }
        for _ in 0..n {
            point.push(rng.gen_range(0.1..0.9));
        }
        let unpack = |flat: &[f64]| -> (Vec<Vec3>, Vec<f64>) {
            let offsets =
                flat[..3 * n].chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            (offsets, flat[3 * n..].to_vec())
        };
        let (offsets, mask) = unpack(&point);
        let (_, d_offsets, d_mask) =
            garment_loss_gradients(&offsets, &mask, &truth, &mesh, &weights)?;
        let analytic: Vec<f64> = d_offsets
            .iter()
            .flat_map(|v| v.to_array())
            .chain(d_mask.iter().copied())
            .collect();
        let worst = grad_check(
            |flat| {
                let (offsets, mask) = unpack(flat);
                garment_loss(&offsets, &mask, &truth, &mesh, &weights).expect("sized inputs").total
            },
            &point,
            &analytic,
            1e-6,
            1e-4,
        )
        .map_err(|e| fail("garment-loss", e.to_string()))?;
        worst_all = worst_all.max(worst);
    }
    report_check("garment-loss", worst_all);

    worst_all = 0.0;
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(300 + s));
        let gamma = GammaNet::init(4, 3, 2, &mut rng);
        let cvar: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = gamma.reconstruction_gradients(&cvar);
        let mut probe = gamma.clone();
        let worst = grad_check(
            |flat| {
                probe.set_flat(flat);
                probe.reconstruction_loss(&cvar)
            },
            &gamma.flat(),
            &grads.flat(),
            1e-5,
            1e-4,
        )
        .map_err(|e| fail("conditioning-net", e.to_string()))?;
        worst_all = worst_all.max(worst);
    }
    report_check("conditioning-net", worst_all);

    // Full model: spectral convolutions, pooling, dense heads, decoder and
    // all loss terms backpropagated together.
    worst_all = 0.0;
    for s in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(400 + s));
        let mesh = toy_grid(4, 4);
        let (_, ctx) = toy_context(&mesh).map_err(|e| fail("full-model", e.to_string()))?;
        let config = VaeConfig {
            kind: if s % 2 == 0 { VaeKind::Static } else { VaeKind::Dynamic },
            input_width: 6,
            conv_widths: vec![3, 4],
            dense_hidden: 5,
            latent_dim: 3,
            cvar_dim: 4,
            cvar_z_dim: 2,
            gamma_hidden: 3,
        };
        let model = Vae::new(config, &ctx, &mut rng)?;
        let sample = ToySample {
            encoding: random_toy_encoding(&mesh, &mut rng),
            cvars: random_toy_cvars(4, &mut rng),
        };
        let eps: Vec<f64> =
            (0..model.config.latent_dim).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let (_, grads) = model.sample_gradients(&ctx, &mesh, &sample, &weights, &eps)?;
        let mut probe = model.clone();
        let worst = grad_check(
            |flat| {
                probe.params.set_vae_flat(flat);
                probe.sample_loss(&ctx, &mesh, &sample, &weights, &eps).expect("sized inputs").total
            },
            &model.params.vae_flat(),
            &grads.vae_flat(),
            1e-5,
            1e-4,
        )
        .map_err(|e| fail("full-model", e.to_string()))?;
        worst_all = worst_all.max(worst);
    }
    report_check("full-model", worst_all);

    Ok(())
}

fn cmd_convert(to: CacheFormat, input: &Path, output: &Path) -> Result<(), Box<dyn Error>> {
    let bytes = fs::read(input)?;
    let is_pc16 = bytes.len() >= 12 && &bytes[..12] == PC16_SIGNATURE;
    let is_pc2 = bytes.len() >= 12 && &bytes[..12] == PC2_SIGNATURE;
    if !is_pc16 && !is_pc2 {
        return Err(cli_err(format!(
            "{} is neither a PC16 nor a PC2 cache",
            input.display()
        )));
    }
    match to {
        CacheFormat::Pc16 => {
            if is_pc16 {
                return Err(cli_err("input is already a PC16 cache"));
            }
            let seq = read_pc2(input)?;
            let frames: Vec<Vec<Vec3>> = seq
                .frames
                .iter()
                .map(|frame| {
                    frame
                        .iter()
                        .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                        .collect()
                })
                .collect();
            let start = seq.start_frame;
            if start < 0.0 || start.fract() != 0.0 {
                return Err(cli_err(format!("start frame {start} is not a whole frame index")));
            }
            let rate = seq.sample_rate;
            if rate <= 0.0 || rate.fract() != 0.0 {
                return Err(cli_err(format!("sample rate {rate} is not a whole number")));
            }
            let cache = Pc16Sequence {
                start_frame: start as u32,
                sample_rate: rate as u32,
                frames,
            };
            write_pc16(output, &cache)?;
        }
        CacheFormat::Pc2 => {
            if is_pc2 {
                return Err(cli_err("input is already a PC2 cache"));
            }
            let seq = read_pc16(input)?;
            let frames: Vec<Vec<[f32; 3]>> = seq
                .frames
                .iter()
                .map(|frame| {
                    frame
                        .iter()
                        .map(|p| [p.x as f32, p.y as f32, p.z as f32])
                        .collect()
                })
                .collect();
            let cache = Pc2Sequence {
                start_frame: seq.start_frame as f32,
                sample_rate: seq.sample_rate as f32,
                frames,
            };
            write_pc2(output, &cache)?;
        }
    }
    Ok(())
}

fn component_range(frames: &[Vec<Vec3>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for frame in frames {
        for p in frame {
            for c in p.to_array() {
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
    }
    (lo, hi)
}

fn cmd_inspect(path: &Path) -> Result<(), Box<dyn Error>> {
    if path.is_dir() {
        let manifest_path = path.join("manifest.txt");
        if !manifest_path.is_file() {
            return Err(cli_err(format!(
                "{} has no manifest.txt; not a pipeline output directory",
                path.display()
            )));
        }
        print!("{}", fs::read_to_string(&manifest_path)?);
        return Ok(());
    }
    let bytes = fs::read(path)?;
    if bytes.len() >= 12 && &bytes[..12] == PC16_SIGNATURE {
        let seq = crate::pc16::decode_pc16(&bytes)?;
        println!("format: pc16");
        println!("points: {}", seq.point_count());
        println!("frames: {}", seq.frame_count());
        println!("start_frame: {}", seq.start_frame);
        println!("sample_rate: {}", seq.sample_rate);
        println!("bytes: {}", bytes.len());
        if !seq.frames.is_empty() {
            let (lo, hi) = component_range(&seq.frames);
            println!("component_range: [{lo}, {hi}]");
        }
        return Ok(());
    }
    if bytes.len() >= 12 && &bytes[..12] == PC2_SIGNATURE {
        let seq = crate::pc2::decode_pc2(&bytes)?;
        println!("format: pc2");
        println!("points: {}", seq.point_count());
        println!("frames: {}", seq.frames.len());
        println!("start_frame: {}", seq.start_frame);
        println!("sample_rate: {}", seq.sample_rate);
        println!("bytes: {}", bytes.len());
        return Ok(());
    }
    if bytes.len() >= 8 && &bytes[..8] == crate::container::CONTAINER_MAGIC {
        let container = read_container(path)?;
        println!("format: container");
        println!("sections: {}", container.sections.len());
        for section in &container.sections {
            let kind = match &section.data {
                SectionData::U8(_) => "u8",
                SectionData::U32(_) => "u32",
                SectionData::F64(_) => "f64",
            };
            println!("section: {} {} x{}", section.name, kind, section.data.len());
        }
        return Ok(());
    }
    if path.extension().and_then(|e| e.to_str()) == Some("obj") {
        let mesh = read_obj(path)?;
        println!("format: obj");
        println!("vertices: {}", mesh.vertex_count());
        println!("faces: {}", mesh.faces.len());
        if mesh.vertex_count() > 0 {
            let mut lo = mesh.vertices[0];
            let mut hi = mesh.vertices[0];
            for v in &mesh.vertices {
                lo = lo.min_components(*v);
                hi = hi.max_components(*v);
            }
            println!("bounds_min: {} {} {}", lo.x, lo.y, lo.z);
            println!("bounds_max: {} {} {}", hi.x, hi.y, hi.z);
        }
        return Ok(());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| cli_err(format!("{} is not a recognized pipeline file", path.display())))?;
    if text.starts_with("command:") {
        println!("format: run manifest");
    } else if text.starts_with("sample:") {
        println!("format: sample metadata");
    } else {
        return Err(cli_err(format!(
            "{} is not a recognized pipeline file",
            path.display()
        )));
    }
    print!("{text}");
    Ok(())
}
