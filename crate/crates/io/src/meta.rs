//! Human-readable metadata sidecars and run manifests.
//!
//! Both formats are line-oriented `key: value` text. Lists nest with
//! two-space indentation and `-` item markers. The sample schema:
//!
//! ```text
//! sample: 01_01_s0
//! gender: female
//! tightness: 0.5 -0.3
//! shape: 0 0 0 0
//! pose_reference: rest
//! garments:
//!   - name: tshirt
//!     fabric: cotton
//! ```
//!
//! Run manifests record what a command produced, one `setting:` line per
//! effective option and one `artifact:` line per written file (relative
//! name and byte count). Neither format carries timestamps or absolute
//! paths, so a rerun with the same seed writes identical bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use weft_core::body::Gender;

#[derive(Debug)]
pub enum MetaError {
    Io(io::Error),
    Malformed { line: usize, detail: String },
    BadSampleName { name: String },
}

impl fmt::Display for MetaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaError::Io(e) => write!(f, "metadata io error: {e}"),
            MetaError::Malformed { line, detail } => {
                write!(f, "line {line}: malformed metadata: {detail}")
            }
            MetaError::BadSampleName { name } => {
                write!(f, "sample name `{name}` is not of the form <sequence>_s<split>")
            }
        }
    }
}

impl std::error::Error for MetaError {}

impl From<io::Error> for MetaError {
    fn from(e: io::Error) -> Self {
        MetaError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarmentMeta {
    pub name: String,
    pub fabric: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetadata {
    pub sequence: String,
    pub split: u32,
    pub gender: Gender,
    pub tightness: [f64; 2],
    pub shape: Vec<f64>,
    pub pose_reference: String,
    pub garments: Vec<GarmentMeta>,
}

impl SampleMetadata {
    /// Folder-style name combining the sequence with the split id,
    /// e.g. `01_01_s0`.
    pub fn sample_name(&self) -> String {
        format!("{}_s{}", self.sequence, self.split)
    }
}

/// Splits `01_01_s0` back into the sequence name and split index.
pub fn parse_sample_name(name: &str) -> Result<(String, u32), MetaError> {
    let bad = || MetaError::BadSampleName { name: name.to_string() };
    let pos = name.rfind("_s").ok_or_else(bad)?;
    let split: u32 = name[pos + 2..].parse().map_err(|_| bad())?;
    if pos == 0 {
        return Err(bad());
    }
    Ok((name[..pos].to_string(), split))
}

fn gender_label(g: Gender) -> &'static str {
    match g {
        Gender::Female => "female",
        Gender::Male => "male",
    }
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn format_sample_metadata(meta: &SampleMetadata) -> String {
    let mut out = String::new();
    out.push_str(&format!("sample: {}\n", meta.sample_name()));
    out.push_str(&format!("gender: {}\n", gender_label(meta.gender)));
    out.push_str(&format!("tightness: {}\n", join_floats(&meta.tightness)));
    out.push_str(&format!("shape: {}\n", join_floats(&meta.shape)));
    out.push_str(&format!("pose_reference: {}\n", meta.pose_reference));
    out.push_str("garments:\n");
    for g in &meta.garments {
        out.push_str(&format!("  - name: {}\n", g.name));
        out.push_str(&format!("    fabric: {}\n", g.fabric));
    }
    out
}

fn parse_floats(value: &str, line: usize) -> Result<Vec<f64>, MetaError> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| MetaError::Malformed {
                line,
                detail: format!("cannot parse number `{tok}`"),
            })
        })
        .collect()
}

pub fn parse_sample_metadata(text: &str) -> Result<SampleMetadata, MetaError> {
    let mut sequence = None;
    let mut split = None;
    let mut gender = None;
    let mut tightness = None;
    let mut shape = None;
    let mut pose_reference = None;
    let mut garments: Vec<GarmentMeta> = Vec::new();
    let mut in_garments = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let malformed = |detail: String| MetaError::Malformed { line, detail };
        if in_garments && raw.starts_with("  ") {
            let item = raw.trim_start();
            if let Some(name) = item.strip_prefix("- name:") {
                garments.push(GarmentMeta {
                    name: name.trim().to_string(),
                    fabric: String::new(),
                });
            } else if let Some(fabric) = item.strip_prefix("fabric:") {
                let last = garments
                    .last_mut()
                    .ok_or_else(|| malformed("fabric before any garment item".into()))?;
                last.fabric = fabric.trim().to_string();
            } else {
                return Err(malformed(format!("unexpected garment line `{item}`")));
            }
            continue;
        }
        in_garments = false;
        let (key, value) = raw
            .split_once(':')
            .ok_or_else(|| malformed(format!("expected `key: value`, got `{raw}`")))?;
        let value = value.trim();
        match key.trim() {
            "sample" => {
                let (seq, sp) = parse_sample_name(value)?;
                sequence = Some(seq);
                split = Some(sp);
            }
            "gender" => {
                gender = Some(match value {
                    "female" => Gender::Female,
                    "male" => Gender::Male,
                    other => return Err(malformed(format!("unknown gender `{other}`"))),
                });
            }
            "tightness" => {
                let v = parse_floats(value, line)?;
                if v.len() != 2 {
                    return Err(malformed(format!("expected 2 tightness values, got {}", v.len())));
                }
                tightness = Some([v[0], v[1]]);
            }
            "shape" => shape = Some(parse_floats(value, line)?),
            "pose_reference" => pose_reference = Some(value.to_string()),
            "garments" => in_garments = true,
            other => return Err(malformed(format!("unknown key `{other}`"))),
        }
    }
    let missing = |what: &str| MetaError::Malformed {
        line: 0,
        detail: format!("missing `{what}`"),
    };
    Ok(SampleMetadata {
        sequence: sequence.ok_or_else(|| missing("sample"))?,
        split: split.unwrap(),
        gender: gender.ok_or_else(|| missing("gender"))?,
        tightness: tightness.ok_or_else(|| missing("tightness"))?,
        shape: shape.ok_or_else(|| missing("shape"))?,
        pose_reference: pose_reference.ok_or_else(|| missing("pose_reference"))?,
        garments,
    })
}

pub fn write_sample_metadata(path: &Path, meta: &SampleMetadata) -> Result<(), MetaError> {
    fs::write(path, format_sample_metadata(meta))?;
    Ok(())
}

pub fn read_sample_metadata(path: &Path) -> Result<SampleMetadata, MetaError> {
    let text = fs::read_to_string(path)?;
    parse_sample_metadata(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactEntry {
    pub name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub settings: Vec<(String, String)>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            settings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl fmt::Display) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    pub fn artifact(&mut self, name: &str, bytes: u64) {
        self.artifacts.push(ArtifactEntry { name: name.to_string(), bytes });
    }
}

pub fn format_manifest(manifest: &RunManifest) -> String {
    let mut out = String::new();
    out.push_str(&format!("command: {}\n", manifest.command));
    if let Some(seed) = manifest.seed {
        out.push_str(&format!("seed: {seed}\n"));
    }
    for (key, value) in &manifest.settings {
        out.push_str(&format!("setting: {key} = {value}\n"));
    }
    for artifact in &manifest.artifacts {
        out.push_str(&format!("artifact: {} {}\n", artifact.name, artifact.bytes));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<RunManifest, MetaError> {
    let mut command = None;
    let mut seed = None;
    let mut settings = Vec::new();
    let mut artifacts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| MetaError::Malformed { line, detail };
        let (key, value) = raw
            .split_once(':')
            .ok_or_else(|| malformed(format!("expected `key: value`, got `{raw}`")))?;
        let value = value.trim();
        match key.trim() {
            "command" => command = Some(value.to_string()),
            "seed" => {
                seed = Some(value.parse().map_err(|_| {
                    malformed(format!("cannot parse seed `{value}`"))
                })?);
            }
            "setting" => {
                let (k, v) = value
                    .split_once('=')
                    .ok_or_else(|| malformed(format!("expected `key = value`, got `{value}`")))?;
                settings.push((k.trim().to_string(), v.trim().to_string()));
            }
            "artifact" => {
                let (name, bytes) = value
                    .rsplit_once(' ')
                    .ok_or_else(|| malformed(format!("expected `name bytes`, got `{value}`")))?;
                artifacts.push(ArtifactEntry {
                    name: name.to_string(),
                    bytes: bytes.parse().map_err(|_| {
                        malformed(format!("cannot parse byte count `{bytes}`"))
                    })?,
                });
            }
            other => return Err(malformed(format!("unknown key `{other}`"))),
        }
    }
    Ok(RunManifest {
        command: command.ok_or(MetaError::Malformed {
            line: 0,
            detail: "missing `command`".into(),
        })?,
        seed,
        settings,
        artifacts,
    })
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), MetaError> {
    fs::write(path, format_manifest(manifest))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, MetaError> {
    let text = fs::read_to_string(path)?;
    parse_manifest(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SampleMetadata {
        SampleMetadata {
            sequence: "01_01".to_string(),
            split: 0,
            gender: Gender::Female,
            tightness: [0.5, -0.3],
            shape: vec![0.0, 0.25, -1.5, 0.0],
            pose_reference: "rest".to_string(),
            garments: vec![
                GarmentMeta { name: "tshirt".to_string(), fabric: "cotton".to_string() },
                GarmentMeta { name: "skirt".to_string(), fabric: "silk".to_string() },
            ],
        }
    }

    #[test]
    fn sample_names_round_trip() {
        let meta = fixture();
        assert_eq!(meta.sample_name(), "01_01_s0");
        let (seq, split) = parse_sample_name("01_01_s0").unwrap();
        assert_eq!(seq, "01_01");
        assert_eq!(split, 0);
        let (seq, split) = parse_sample_name("07_03_s12").unwrap();
        assert_eq!(seq, "07_03");
        assert_eq!(split, 12);
        assert!(parse_sample_name("01_01").is_err());
        assert!(parse_sample_name("_s4").is_err());
    }

    #[test]
    fn metadata_round_trips_through_text() {
        let meta = fixture();
        let text = format_sample_metadata(&meta);
        assert_eq!(parse_sample_metadata(&text).unwrap(), meta);
    }

    #[test]
    fn formatted_metadata_is_the_documented_shape() {
        let text = format_sample_metadata(&fixture());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample: 01_01_s0");
        assert_eq!(lines[1], "gender: female");
        assert_eq!(lines[2], "tightness: 0.5 -0.3");
        assert_eq!(lines[5], "garments:");
        assert_eq!(lines[6], "  - name: tshirt");
        assert_eq!(lines[7], "    fabric: cotton");
    }

    #[test]
    fn malformed_metadata_reports_line_numbers() {
        let text = "sample: 01_01_s0\ngender: plaid\n";
        match parse_sample_metadata(text) {
            Err(MetaError::Malformed { line: 2, .. }) => {}
            other => panic!("expected a line-2 error, got {other:?}"),
        }
        assert!(matches!(
            parse_sample_metadata("gender: female\n"),
            Err(MetaError::Malformed { .. })
        ));
    }

    #[test]
    fn manifests_round_trip() {
        let mut manifest = RunManifest::new("generate-outfit", Some(7));
        manifest.setting("frames", 60);
        manifest.setting("fabric", "cotton");
        manifest.artifact("upper.obj", 1234);
        manifest.artifact("metadata.txt", 88);
        let text = format_manifest(&manifest);
        assert_eq!(parse_manifest(&text).unwrap(), manifest);
        assert!(text.starts_with("command: generate-outfit\nseed: 7\n"));
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let meta_path = dir.path().join("metadata.txt");
        write_sample_metadata(&meta_path, &fixture()).unwrap();
        assert_eq!(read_sample_metadata(&meta_path).unwrap(), fixture());

        let manifest = RunManifest::new("simulate", None);
        let man_path = dir.path().join("manifest.txt");
        write_manifest(&man_path, &manifest).unwrap();
        assert_eq!(read_manifest(&man_path).unwrap(), manifest);
    }
}
