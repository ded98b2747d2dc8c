//! Half-precision point-cache sequences: root-relative garment positions
//! quantized to IEEE 754 binary16, halving payload size against 32-bit
//! caches at a worst-case error of 2^-11 inside [-1, 1] and 2^-10 inside
//! [-2, 2].

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use half::f16;
use weft_core::geom::Vec3;

/// Leading bytes of every PC16 file. Distinct from the PC2 signature so
/// tools cannot misread the float width.
pub const PC16_SIGNATURE: &[u8; 12] = b"POINTCACHE16";

pub const PC16_VERSION: u32 = 1;

/// Header plus per-frame binary16 triples; 6 bytes per point per frame.
pub const PC16_HEADER_BYTES: usize = 32;

/// Largest magnitude a stored value may take. Positions are root-relative,
/// which keeps desk-scale bodies comfortably inside this range.
pub const PC16_RANGE: f64 = 2.0;

#[derive(Debug)]
pub enum Pc16Error {
    Io(io::Error),
    BadSignature,
    UnsupportedVersion { got: u32 },
    Truncated { expected: usize, got: usize },
    OutOfRange { frame: usize, point: usize, value: f64 },
    InconsistentPointCount { frame: usize, expected: usize, got: usize },
}

impl fmt::Display for Pc16Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pc16Error::Io(e) => write!(f, "pc16 io error: {e}"),
            Pc16Error::BadSignature => write!(f, "not a PC16 file (bad signature)"),
            Pc16Error::UnsupportedVersion { got } => {
                write!(f, "unsupported PC16 version {got}")
            }
            Pc16Error::Truncated { expected, got } => {
                write!(f, "truncated PC16 data: expected {expected} bytes, got {got}")
            }
            Pc16Error::OutOfRange { frame, point, value } => write!(
                f,
                "value {value} at frame {frame}, point {point} is outside [-2, 2]"
            ),
            Pc16Error::InconsistentPointCount { frame, expected, got } => write!(
                f,
                "frame {frame} has {got} points, expected {expected}"
            ),
        }
    }
}

impl std::error::Error for Pc16Error {}

impl From<io::Error> for Pc16Error {
    fn from(e: io::Error) -> Self {
        Pc16Error::Io(e)
    }
}

/// A decoded PC16 sequence. Positions hold the exact values of the stored
/// half floats, so re-encoding is lossless and byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Pc16Sequence {
    pub start_frame: u32,
    pub sample_rate: u32,
    pub frames: Vec<Vec<Vec3>>,
}

impl Pc16Sequence {
    pub fn point_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

fn push_u32(bytes: &mut Vec<u8>, value: u32) {
    bytes.extend_from_slice(&value.to_le_bytes());
}

fn encode_component(
    value: f64,
    frame: usize,
    point: usize,
) -> Result<u16, Pc16Error> {
    if !value.is_finite() || value.abs() > PC16_RANGE {
        return Err(Pc16Error::OutOfRange { frame, point, value });
    }
    Ok(f16::from_f64(value).to_bits())
}

pub fn encode_pc16(seq: &Pc16Sequence) -> Result<Vec<u8>, Pc16Error> {
    let points = seq.point_count();
    for (fi, frame) in seq.frames.iter().enumerate() {
        if frame.len() != points {
            return Err(Pc16Error::InconsistentPointCount {
                frame: fi,
                expected: points,
                got: frame.len(),
            });
        }
    }
    let mut bytes = Vec::with_capacity(PC16_HEADER_BYTES + seq.frames.len() * points * 6);
    bytes.extend_from_slice(PC16_SIGNATURE);
    push_u32(&mut bytes, PC16_VERSION);
    push_u32(&mut bytes, points as u32);
    push_u32(&mut bytes, seq.start_frame);
    push_u32(&mut bytes, seq.sample_rate);
    push_u32(&mut bytes, seq.frames.len() as u32);
    for (fi, frame) in seq.frames.iter().enumerate() {
        for (pi, p) in frame.iter().enumerate() {
            for component in p.to_array() {
                let bits = encode_component(component, fi, pi)?;
                bytes.extend_from_slice(&bits.to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, Pc16Error> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Pc16Error::Truncated { expected: end, got: bytes.len() });
    }
    Ok(u32::from_le_bytes(bytes[offset..end].try_into().unwrap()))
}

pub fn decode_pc16(bytes: &[u8]) -> Result<Pc16Sequence, Pc16Error> {
    if bytes.len() < PC16_SIGNATURE.len() || &bytes[..12] != PC16_SIGNATURE {
        return Err(Pc16Error::BadSignature);
    }
    let version = read_u32(bytes, 12)?;
    if version != PC16_VERSION {
        return Err(Pc16Error::UnsupportedVersion { got: version });
    }
    let points = read_u32(bytes, 16)? as usize;
    let start_frame = read_u32(bytes, 20)?;
    let sample_rate = read_u32(bytes, 24)?;
    let samples = read_u32(bytes, 28)? as usize;
    let expected = PC16_HEADER_BYTES + samples * points * 6;
    if bytes.len() < expected {
        return Err(Pc16Error::Truncated { expected, got: bytes.len() });
    }
    let mut frames = Vec::with_capacity(samples);
    let mut cursor = PC16_HEADER_BYTES;
    for _ in 0..samples {
        let mut frame = Vec::with_capacity(points);
        for _ in 0..points {
            let mut triple = [0.0f64; 3];
            for slot in &mut triple {
                let bits = u16::from_le_bytes([bytes[cursor], bytes[cursor + 1]]);
                *slot = f16::from_bits(bits).to_f64();
                cursor += 2;
            }
            frame.push(Vec3::from_array(triple));
        }
        frames.push(frame);
    }
    Ok(Pc16Sequence { start_frame, sample_rate, frames })
}

pub fn write_pc16(path: &Path, seq: &Pc16Sequence) -> Result<(), Pc16Error> {
    let bytes = encode_pc16(seq)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pc16(path: &Path) -> Result<Pc16Sequence, Pc16Error> {
    let bytes = fs::read(path)?;
    decode_pc16(&bytes)
}
