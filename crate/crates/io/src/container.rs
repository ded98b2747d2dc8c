//! A small named-section binary container for model weights, hierarchies,
//! and offset encodings. Every multi-byte value is little-endian and the
//! encoder iterates sections in the order given, so equal inputs produce
//! equal bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

pub const CONTAINER_MAGIC: &[u8; 8] = b"WEFTBIN1";

#[derive(Debug)]
pub enum ContainerError {
    Io(io::Error),
    BadMagic,
    Truncated,
    BadSectionType { tag: u8 },
    BadName,
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::Io(e) => write!(f, "container io error: {e}"),
            ContainerError::BadMagic => write!(f, "not a weft container (bad magic)"),
            ContainerError::Truncated => write!(f, "truncated container data"),
            ContainerError::BadSectionType { tag } => {
                write!(f, "unknown section type tag {tag}")
            }
            ContainerError::BadName => write!(f, "section name is not valid UTF-8"),
        }
    }
}

impl std::error::Error for ContainerError {}

impl From<io::Error> for ContainerError {
    fn from(e: io::Error) -> Self {
        ContainerError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    U8(Vec<u8>),
    U32(Vec<u32>),
    F64(Vec<f64>),
}

impl SectionData {
    fn type_tag(&self) -> u8 {
        match self {
            SectionData::U8(_) => 0,
            SectionData::U32(_) => 1,
            SectionData::F64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SectionData::U8(v) => v.len(),
            SectionData::U32(v) => v.len(),
            SectionData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_u32(&self) -> Option<&[u32]> {
        match self {
            SectionData::U32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            SectionData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match self {
            SectionData::U8(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub data: SectionData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new() -> Self {
        Container { sections: Vec::new() }
    }

    pub fn push(&mut self, name: &str, data: SectionData) {
        self.sections.push(Section { name: name.to_string(), data });
    }

    pub fn get(&self, name: &str) -> Option<&SectionData> {
        self.sections.iter().find(|s| s.name == name).map(|s| &s.data)
    }
}

pub fn encode_container(container: &Container) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CONTAINER_MAGIC);
    bytes.extend_from_slice(&(container.sections.len() as u32).to_le_bytes());
    for section in &container.sections {
        let name = section.name.as_bytes();
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name);
        bytes.push(section.data.type_tag());
        bytes.extend_from_slice(&(section.data.len() as u64).to_le_bytes());
        match &section.data {
            SectionData::U8(v) => bytes.extend_from_slice(v),
            SectionData::U32(v) => {
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
            SectionData::F64(v) => {
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    bytes
}

struct Reader<'a> {
    bytes: &'a [u8],
    cursor: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.cursor.checked_add(n).ok_or(ContainerError::Truncated)?;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated);
        }
        let slice = &self.bytes[self.cursor..end];
        self.cursor = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Container, ContainerError> {
    if bytes.len() < 8 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut reader = Reader { bytes, cursor: 8 };
    let count = reader.u32()? as usize;
    let mut sections = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = reader.u32()? as usize;
        let name = core::str::from_utf8(reader.take(name_len)?)
            .map_err(|_| ContainerError::BadName)?
            .to_string();
        let tag = reader.take(1)?[0];
        let len = reader.u64()? as usize;
        let data = match tag {
            0 => SectionData::U8(reader.take(len)?.to_vec()),
            1 => {
                let raw = reader.take(len * 4)?;
                SectionData::U32(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            2 => {
                let raw = reader.take(len * 8)?;
                SectionData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            tag => return Err(ContainerError::BadSectionType { tag }),
        };
        sections.push(Section { name, data });
    }
    Ok(Container { sections })
}

pub fn write_container(path: &Path, container: &Container) -> Result<(), ContainerError> {
    fs::write(path, encode_container(container))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container, ContainerError> {
    let bytes = fs::read(path)?;
    decode_container(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Container {
        let mut c = Container::new();
        c.push("counts", SectionData::U32(vec![1, 2, 3]));
        c.push("values", SectionData::F64(vec![0.5, -1.25]));
        c.push("flags", SectionData::U8(vec![0, 1, 1, 0]));
        c
    }

    #[test]
    fn containers_round_trip() {
        let c = fixture();
        assert_eq!(decode_container(&encode_container(&c)).unwrap(), c);
    }

    #[test]
    fn sections_are_found_by_name() {
        let c = fixture();
        assert_eq!(c.get("counts").unwrap().as_u32().unwrap(), &[1, 2, 3]);
        assert_eq!(c.get("values").unwrap().as_f64().unwrap(), &[0.5, -1.25]);
        assert!(c.get("missing").is_none());
    }

    #[test]
    fn encoding_is_deterministic() {
        assert_eq!(encode_container(&fixture()), encode_container(&fixture()));
    }

    #[test]
    fn corrupt_data_is_rejected() {
        let bytes = encode_container(&fixture());
        assert!(matches!(decode_container(b"NOTWEFT!"), Err(ContainerError::BadMagic)));
        assert!(matches!(
            decode_container(&bytes[..bytes.len() - 3]),
            Err(ContainerError::Truncated)
        ));
        let mut bad_tag = bytes.clone();
        // The first section's type tag sits after magic, count, name length
        // and the 6-byte name "counts".
        let tag_pos = 8 + 4 + 4 + 6;
        bad_tag[tag_pos] = 7;
        assert!(matches!(
            decode_container(&bad_tag),
            Err(ContainerError::BadSectionType { tag: 7 })
        ));
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let c = fixture();
        write_container(&path, &c).unwrap();
        assert_eq!(read_container(&path).unwrap(), c);
    }
}
