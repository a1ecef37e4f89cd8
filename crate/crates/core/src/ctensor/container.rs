//! The `CXT1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CXT1"                      4-byte magic; the trailing digit is the version
//! u32 entry count
//! per entry:
//!   u16 name length, name bytes (UTF-8)
//!   u8  kind (0 = real, 1 = complex)
//!   u8  rank
//!   rank × u32 dims
//!   f64 payload: real plane, then imaginary plane when complex
//! ```
//!
//! A rank-0 real entry holding 1.0 named `x` is the 21 bytes
//! `43 58 54 31 01 00 00 00 01 00 78 00 00 00 00 00 00 00 00 F0 3F`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CTensor, RTensor};

pub const MAGIC_PREFIX: &[u8; 3] = b"CXT";
pub const VERSION: u8 = b'1';

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic: not a CXT container")]
    BadMagic,
    #[error("unsupported container version `{}`", *.0 as char)]
    UnsupportedVersion(u8),
    #[error("truncated container: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown entry kind {0}")]
    InvalidKind(u8),
    #[error("entry name is not valid UTF-8 or too long")]
    InvalidName,
    #[error("entry `{0}` has an invalid shape or non-finite payload")]
    InvalidPayload(String),
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("entry `{0}` not found")]
    MissingEntry(String),
    #[error("entry `{0}` has the wrong kind")]
    WrongKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ContainerError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            Self::BadMagic => 1,
            Self::UnsupportedVersion(_) => 2,
            Self::Truncated { .. } => 3,
            Self::InvalidKind(_) => 4,
            Self::InvalidName => 5,
            Self::InvalidPayload(_) => 6,
            Self::TrailingBytes(_) => 7,
            Self::MissingEntry(_) => 8,
            Self::WrongKind(_) => 9,
            Self::Io(_) => 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Real(RTensor),
    Complex(CTensor),
}

impl Entry {
    /// UTF-8 text stored as a rank-1 real tensor of byte values.
    pub fn text(s: &str) -> Self {
        let mut bytes: Vec<f64> = s.bytes().map(f64::from).collect();
        if bytes.is_empty() {
            bytes.push(0.0);
        }
        let n = bytes.len();
        Entry::Real(RTensor::from_parts(vec![n], bytes))
    }

    pub fn as_text(&self) -> Option<String> {
        let Entry::Real(t) = self else { return None };
        if t.shape().len() != 1 {
            return None;
        }
        let mut bytes = Vec::with_capacity(t.numel());
        for &v in t.data() {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return None;
            }
            bytes.push(v as u8);
        }
        if bytes == [0] {
            bytes.clear();
        }
        String::from_utf8(bytes).ok()
    }

    fn shape(&self) -> &[usize] {
        match self {
            Entry::Real(t) => t.shape(),
            Entry::Complex(t) => t.shape(),
        }
    }
}

/// Insertion-ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    pub version: u8,
    entries: Vec<(String, Entry)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self { version: VERSION, entries: Vec::new() }
    }

    /// Inserts or replaces an entry, keeping the original position on replace.
    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name, entry)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn real(&self, name: &str) -> Result<&RTensor, ContainerError> {
        match self.get(name) {
            Some(Entry::Real(t)) => Ok(t),
            Some(_) => Err(ContainerError::WrongKind(name.into())),
            None => Err(ContainerError::MissingEntry(name.into())),
        }
    }

    pub fn complex(&self, name: &str) -> Result<&CTensor, ContainerError> {
        match self.get(name) {
            Some(Entry::Complex(t)) => Ok(t),
            Some(_) => Err(ContainerError::WrongKind(name.into())),
            None => Err(ContainerError::MissingEntry(name.into())),
        }
    }

    pub fn text(&self, name: &str) -> Result<String, ContainerError> {
        self.get(name)
            .ok_or_else(|| ContainerError::MissingEntry(name.into()))?
            .as_text()
            .ok_or_else(|| ContainerError::WrongKind(name.into()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC_PREFIX);
        out.push(VERSION);
        let count = u32::try_from(self.entries.len()).map_err(|_| ContainerError::InvalidName)?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, entry) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| ContainerError::InvalidName)?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match entry {
                Entry::Real(_) => 0,
                Entry::Complex(_) => 1,
            });
            let shape = entry.shape();
            let rank = u8::try_from(shape.len()).map_err(|_| ContainerError::InvalidPayload(name.clone()))?;
            out.push(rank);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| ContainerError::InvalidPayload(name.clone()))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            let planes: Vec<&[f64]> = match entry {
                Entry::Real(t) => vec![t.data()],
                Entry::Complex(t) => vec![t.re(), t.im()],
            };
            for plane in planes {
                for v in plane {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| ContainerError::BadMagic)?;
        if &magic[..3] != MAGIC_PREFIX {
            return Err(ContainerError::BadMagic);
        }
        if magic[3] != VERSION {
            return Err(ContainerError::UnsupportedVersion(magic[3]));
        }
        let count = r.u32()?;
        let mut container = TensorContainer::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ContainerError::InvalidName)?
                .to_owned();
            let kind = r.u8()?;
            if kind > 1 {
                return Err(ContainerError::InvalidKind(kind));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let bad = || ContainerError::InvalidPayload(name.clone());
            let entry = if kind == 0 {
                let data = r.f64s(n)?;
                Entry::Real(RTensor::new(shape, data).map_err(|_| bad())?)
            } else {
                let re = r.f64s(n)?;
                let im = r.f64s(n)?;
                Entry::Complex(CTensor::new(shape, re, im).map_err(|_| bad())?)
            };
            container.entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(container)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ContainerError::Truncated { offset: self.pos, needed: n });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ContainerError> {
        let needed = n.checked_mul(8).ok_or(ContainerError::Truncated { offset: self.pos, needed: usize::MAX })?;
        let raw = self.take(needed)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn write_container(path: impl AsRef<Path>, container: &TensorContainer) -> Result<(), ContainerError> {
    let bytes = container.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorContainer, ContainerError> {
    TensorContainer::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn scalar_one_hexdump() {
        let mut c = TensorContainer::new();
        c.insert("x", Entry::Real(RTensor::scalar(1.0)));
        let bytes = c.to_bytes().unwrap();
        assert_eq!(
            bytes,
            [
                0x43, 0x58, 0x54, 0x31, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x78, 0x00, 0x00,
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F
            ]
        );
        assert_eq!(&bytes[bytes.len() - 8..], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(TensorContainer::from_bytes(b"XXXX\0\0\0\0"), Err(ContainerError::BadMagic)));
        assert!(matches!(
            TensorContainer::from_bytes(b"CXT2\0\0\0\0"),
            Err(ContainerError::UnsupportedVersion(b'2'))
        ));
        assert!(matches!(TensorContainer::from_bytes(b"CX"), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let mut c = TensorContainer::new();
        c.insert("z", Entry::Complex(CTensor::full(&[2, 2], Complex64::new(1.0, -1.0))));
        let bytes = c.to_bytes().unwrap();
        let err = TensorContainer::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, ContainerError::Truncated { .. }));
        assert_eq!(err.code(), 3);
    }

    #[test]
    fn distinct_error_codes() {
        let errs = [
            ContainerError::BadMagic,
            ContainerError::UnsupportedVersion(b'9'),
            ContainerError::Truncated { offset: 0, needed: 1 },
            ContainerError::InvalidKind(7),
        ];
        let mut codes: Vec<u8> = errs.iter().map(|e| e.code()).collect();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
    }

    #[test]
    fn invalid_kind_rejected() {
        let mut c = TensorContainer::new();
        c.insert("x", Entry::Real(RTensor::scalar(2.0)));
        let mut bytes = c.to_bytes().unwrap();
        bytes[11] = 5;
        assert!(matches!(TensorContainer::from_bytes(&bytes), Err(ContainerError::InvalidKind(5))));
    }

    #[test]
    fn text_entries() {
        let e = Entry::text("lr = 1e-5\nδ = 1");
        assert_eq!(e.as_text().unwrap(), "lr = 1e-5\nδ = 1");
        assert_eq!(Entry::text("").as_text().unwrap(), "");
        assert!(Entry::Real(RTensor::scalar(0.5)).as_text().is_none());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cxt");
        let mut c = TensorContainer::new();
        c.insert("a", Entry::Complex(CTensor::full(&[1, 3], Complex64::new(0.25, 3.0))));
        c.insert("b", Entry::Real(RTensor::new(vec![2], vec![-0.0, 7.5]).unwrap()));
        write_container(&path, &c).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    }
}
