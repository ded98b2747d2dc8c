//! 32-bit point-cache sequences in the classic PC2 layout. Reading covers
//! caches exported by other tools; writing exists for conversion fixtures
//! and tests. Pipeline storage stays in PC16.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

pub const PC2_SIGNATURE: &[u8; 12] = b"POINTCACHE2\0";

pub const PC2_VERSION: i32 = 1;

pub const PC2_HEADER_BYTES: usize = 32;

#[derive(Debug)]
pub enum Pc2Error {
    Io(io::Error),
    BadSignature,
    UnsupportedVersion { got: i32 },
    Truncated { expected: usize, got: usize },
    BadHeader(String),
}

impl fmt::Display for Pc2Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pc2Error::Io(e) => write!(f, "pc2 io error: {e}"),
            Pc2Error::BadSignature => write!(f, "not a PC2 file (bad signature)"),
            Pc2Error::UnsupportedVersion { got } => write!(f, "unsupported PC2 version {got}"),
            Pc2Error::Truncated { expected, got } => {
                write!(f, "truncated PC2 data: expected {expected} bytes, got {got}")
            }
            Pc2Error::BadHeader(msg) => write!(f, "bad PC2 header: {msg}"),
        }
    }
}

impl std::error::Error for Pc2Error {}

impl From<io::Error> for Pc2Error {
    fn from(e: io::Error) -> Self {
        Pc2Error::Io(e)
    }
}

/// Frames hold raw `f32` triples so that read-modify-write cycles preserve
/// the original bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Pc2Sequence {
    pub start_frame: f32,
    pub sample_rate: f32,
    pub frames: Vec<Vec<[f32; 3]>>,
}

impl Pc2Sequence {
    pub fn point_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

pub fn encode_pc2(seq: &Pc2Sequence) -> Vec<u8> {
    let points = seq.point_count();
    for frame in &seq.frames {
        assert_eq!(frame.len(), points, "frames must share one point count");
    }
    let mut bytes = Vec::with_capacity(PC2_HEADER_BYTES + seq.frames.len() * points * 12);
    bytes.extend_from_slice(PC2_SIGNATURE);
    bytes.extend_from_slice(&PC2_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(points as i32).to_le_bytes());
    bytes.extend_from_slice(&seq.start_frame.to_le_bytes());
    bytes.extend_from_slice(&seq.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(seq.frames.len() as i32).to_le_bytes());
    for frame in &seq.frames {
        for p in frame {
            for component in p {
                bytes.extend_from_slice(&component.to_le_bytes());
            }
        }
    }
    bytes
}

pub fn decode_pc2(bytes: &[u8]) -> Result<Pc2Sequence, Pc2Error> {
    if bytes.len() < 12 || &bytes[..12] != PC2_SIGNATURE {
        return Err(Pc2Error::BadSignature);
    }
    if bytes.len() < PC2_HEADER_BYTES {
        return Err(Pc2Error::Truncated { expected: PC2_HEADER_BYTES, got: bytes.len() });
    }
    let version = i32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if version != PC2_VERSION {
        return Err(Pc2Error::UnsupportedVersion { got: version });
    }
    let points = i32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let start_frame = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let sample_rate = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let samples = i32::from_le_bytes(bytes[28..32].try_into().unwrap());
    if points < 0 {
        return Err(Pc2Error::BadHeader(format!("negative point count {points}")));
    }
    if samples < 0 {
        return Err(Pc2Error::BadHeader(format!("negative sample count {samples}")));
    }
    let points = points as usize;
    let samples = samples as usize;
    let expected = PC2_HEADER_BYTES + samples * points * 12;
    if bytes.len() < expected {
        return Err(Pc2Error::Truncated { expected, got: bytes.len() });
    }
    let mut frames = Vec::with_capacity(samples);
    let mut cursor = PC2_HEADER_BYTES;
    for _ in 0..samples {
        let mut frame = Vec::with_capacity(points);
        for _ in 0..points {
            let mut triple = [0.0f32; 3];
            for slot in &mut triple {
                *slot = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
                cursor += 4;
            }
            frame.push(triple);
        }
        frames.push(frame);
    }
    Ok(Pc2Sequence { start_frame, sample_rate, frames })
}

pub fn write_pc2(path: &Path, seq: &Pc2Sequence) -> Result<(), Pc2Error> {
    fs::write(path, encode_pc2(seq))?;
    Ok(())
}

pub fn read_pc2(path: &Path) -> Result<Pc2Sequence, Pc2Error> {
    let bytes = fs::read(path)?;
    decode_pc2(&bytes)
}
