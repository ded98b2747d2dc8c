//! Pipeline configuration files: plain `key = value` lines with `#`
//! comments. Unset keys keep their defaults, so an empty file is a valid
//! configuration.
//!
//! ```text
//! # integration
//! substeps = 20
//! warmup_shape_frames = 30
//! warmup_pose_frames = 30
//! gravity_y = -9.81
//!
//! # per-fabric overrides
//! fabric.cotton.structural_stiffness = 9.0
//! fabric.silk.damping = 0.004
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use weft_core::geom::Vec3;
use weft_core::sim::{
    FabricPreset, SequenceConfig, DEFAULT_SUBSTEPS, DEFAULT_WARMUP_POSE_FRAMES,
    DEFAULT_WARMUP_SHAPE_FRAMES,
};

#[derive(Debug)]
pub enum ConfigError {
    Io(io::Error),
    Malformed { line: usize, detail: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
            ConfigError::Malformed { line, detail } => {
                write!(f, "line {line}: malformed config: {detail}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<io::Error> for ConfigError {
    fn from(e: io::Error) -> Self {
        ConfigError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub substeps: usize,
    pub warmup_shape_frames: usize,
    pub warmup_pose_frames: usize,
    pub gravity_y: f64,
    /// Keys are `<fabric>.<field>`, e.g. `cotton.damping`.
    pub fabric_overrides: BTreeMap<String, f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            substeps: DEFAULT_SUBSTEPS,
            warmup_shape_frames: DEFAULT_WARMUP_SHAPE_FRAMES,
            warmup_pose_frames: DEFAULT_WARMUP_POSE_FRAMES,
            gravity_y: -9.81,
            fabric_overrides: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            substeps: self.substeps,
            gravity: Vec3::new(0.0, self.gravity_y, 0.0),
        }
    }

    /// Looks the preset up by name and applies any file overrides.
    pub fn fabric_with_overrides(&self, name: &str) -> Option<FabricPreset> {
        let mut preset = FabricPreset::by_name(name)?;
        for (key, value) in &self.fabric_overrides {
            let (fabric, field) = key.split_once('.')?;
            if fabric != name {
                continue;
            }
            match field {
                "structural_stiffness" => preset.structural_stiffness = *value,
                "shear_stiffness" => preset.shear_stiffness = *value,
                "bend_stiffness" => preset.bend_stiffness = *value,
                "damping" => preset.damping = *value,
                "density" => preset.density = *value,
                _ => return None,
            }
        }
        Some(preset)
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut config = PipelineConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |detail: String| ConfigError::Malformed { line, detail };
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected `key = value`, got `{trimmed}`")))?;
        let key = key.trim();
        let value = value.trim();
        let parse_usize = || -> Result<usize, ConfigError> {
            value.parse().map_err(|_| malformed(format!("cannot parse integer `{value}`")))
        };
        let parse_f64 = || -> Result<f64, ConfigError> {
            value.parse().map_err(|_| malformed(format!("cannot parse number `{value}`")))
        };
        match key {
            "substeps" => config.substeps = parse_usize()?,
            "warmup_shape_frames" => config.warmup_shape_frames = parse_usize()?,
            "warmup_pose_frames" => config.warmup_pose_frames = parse_usize()?,
            "gravity_y" => config.gravity_y = parse_f64()?,
            other => {
                let rest = other.strip_prefix("fabric.").ok_or_else(|| {
                    malformed(format!("unknown key `{other}`"))
                })?;
                let (fabric, field) = rest.split_once('.').ok_or_else(|| {
                    malformed(format!("fabric override `{other}` needs <fabric>.<field>"))
                })?;
                if FabricPreset::by_name(fabric).is_none() {
                    return Err(malformed(format!("unknown fabric `{fabric}`")));
                }
                const FIELDS: [&str; 5] = [
                    "structural_stiffness",
                    "shear_stiffness",
                    "bend_stiffness",
                    "damping",
                    "density",
                ];
                if !FIELDS.contains(&field) {
                    return Err(malformed(format!("unknown fabric field `{field}`")));
                }
                config.fabric_overrides.insert(rest.to_string(), parse_f64()?);
            }
        }
    }
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config, PipelineConfig::default());
        assert_eq!(config.substeps, DEFAULT_SUBSTEPS);
    }

    #[test]
    fn keys_and_fabric_overrides_parse() {
        let text = "# tuning\nsubsteps = 24\ngravity_y = -9.8\nfabric.cotton.damping = 0.02\n";
        let config = parse_config(text).unwrap();
        assert_eq!(config.substeps, 24);
        assert_eq!(config.gravity_y, -9.8);
        let cotton = config.fabric_with_overrides("cotton").unwrap();
        assert_eq!(cotton.damping, 0.02);
        assert_eq!(cotton.density, FabricPreset::cotton().density);
        let silk = config.fabric_with_overrides("silk").unwrap();
        assert_eq!(silk, FabricPreset::silk());
    }

    #[test]
    fn bad_lines_report_their_number() {
        for (text, line) in [
            ("substeps = twenty\n", 1),
            ("\nwhatever = 3\n", 2),
            ("fabric.velvet.damping = 0.1\n", 1),
            ("fabric.cotton.sparkle = 0.1\n", 1),
            ("substeps 20\n", 1),
        ] {
            match parse_config(text) {
                Err(ConfigError::Malformed { line: got, .. }) => assert_eq!(got, line),
                other => panic!("expected a malformed error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn sequence_config_reflects_the_file() {
        let config = parse_config("substeps = 30\ngravity_y = -1.0\n").unwrap();
        let seq = config.sequence_config();
        assert_eq!(seq.substeps, 30);
        assert_eq!(seq.gravity, Vec3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn files_parse_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.cfg");
        std::fs::write(&path, "substeps = 22\n").unwrap();
        assert_eq!(read_config(&path).unwrap().substeps, 22);
    }
}
