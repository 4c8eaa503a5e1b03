//! Binary archive of named arrays with a checksum, used for checkpoints.
//!
//! Wire format, all integers little-endian:
//!
//! ```text
//! "ECPN" | version: u32 | entry count: u64 |
//! per entry: name len: u32 | name bytes | dtype: u8 | rank: u8 |
//!            dims: u64 each | payload (LE elements) |
//! fnv1a64 of everything above: u64
//! ```
//!
//! Serialization is canonical: saving a loaded archive reproduces the file
//! byte for byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::atomic_write;
use crate::tensor::{Dtype, Element, Shape, Tensor};

const MAGIC: &[u8; 4] = b"ECPN";
const VERSION: u32 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325_u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One named array: dtype tag, dimensions, and raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub raw: Vec<u8>,
}

impl Entry {
    fn numel(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }
}

/// An ordered set of uniquely named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<Entry>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn push_entry(&mut self, entry: Entry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(Error::checkpoint(format!(
                "duplicate entry {:?}",
                entry.name
            )));
        }
        if entry.numel() * entry.dtype.size_of() != entry.raw.len() {
            return Err(Error::checkpoint(format!(
                "entry {:?}: payload {} bytes does not match dims {:?}",
                entry.name,
                entry.raw.len(),
                entry.dims
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn push_tensor<E: Element>(&mut self, name: &str, t: &Tensor<E>) -> Result<()> {
        let s = t.shape();
        let mut raw = Vec::with_capacity(t.numel() * E::DTYPE.size_of());
        for &v in t.data() {
            v.write_le(&mut raw);
        }
        self.push_entry(Entry {
            name: name.to_string(),
            dtype: E::DTYPE,
            dims: vec![s.n as u64, s.c as u64, s.h as u64, s.w as u64],
            raw,
        })
    }

    pub fn push_u64s(&mut self, name: &str, values: &[u64]) -> Result<()> {
        let mut raw = Vec::with_capacity(values.len() * 8);
        for v in values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        self.push_entry(Entry {
            name: name.to_string(),
            dtype: Dtype::U64,
            dims: vec![values.len() as u64],
            raw,
        })
    }

    pub fn push_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.push_entry(Entry {
            name: name.to_string(),
            dtype: Dtype::U8,
            dims: vec![bytes.len() as u64],
            raw: bytes.to_vec(),
        })
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::checkpoint(format!("missing entry {name:?}")))
    }

    pub fn tensor<E: Element>(&self, name: &str) -> Result<Tensor<E>> {
        let e = self.require(name)?;
        if e.dtype != E::DTYPE {
            return Err(Error::checkpoint(format!(
                "entry {name:?} holds {:?}, requested {:?}",
                e.dtype,
                E::DTYPE
            )));
        }
        if e.dims.len() != 4 {
            return Err(Error::checkpoint(format!(
                "entry {name:?} has rank {}, expected 4",
                e.dims.len()
            )));
        }
        let shape = Shape::new(
            e.dims[0] as usize,
            e.dims[1] as usize,
            e.dims[2] as usize,
            e.dims[3] as usize,
        );
        let size = E::DTYPE.size_of();
        let data = e.raw.chunks_exact(size).map(E::read_le).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        let e = self.require(name)?;
        if e.dtype != Dtype::U64 {
            return Err(Error::checkpoint(format!(
                "entry {name:?} holds {:?}, requested U64",
                e.dtype
            )));
        }
        Ok(e.raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        let e = self.require(name)?;
        if e.dtype != Dtype::U8 {
            return Err(Error::checkpoint(format!(
                "entry {name:?} holds {:?}, requested U8",
                e.dtype
            )));
        }
        Ok(&e.raw)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype as u8);
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&e.raw);
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Archive> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::checkpoint("not a checkpoint file".to_string()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let mut archive = Archive::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::checkpoint("entry name is not utf-8".to_string()))?;
            let dtype = Dtype::from_tag(cur.take(1)?[0])
                .ok_or_else(|| Error::checkpoint(format!("unknown dtype tag in {name:?}")))?;
            let rank = cur.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            let payload = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size_of() as u64))
                .filter(|&n| n <= bytes.len() as u64)
                .ok_or_else(|| {
                    Error::checkpoint(format!("entry {name:?}: implausible dims {dims:?}"))
                })? as usize;
            let raw = cur.take(payload)?.to_vec();
            archive.push_entry(Entry {
                name,
                dtype,
                dims,
                raw,
            })?;
        }
        let stored = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        if cur.pos != bytes.len() {
            return Err(Error::checkpoint(format!(
                "{} trailing bytes after checksum",
                bytes.len() - cur.pos
            )));
        }
        let actual = fnv1a64(&bytes[..bytes.len() - 8]);
        if stored != actual {
            return Err(Error::checkpoint(format!(
                "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let bytes =
            fs::read(path).map_err(|e| Error::checkpoint(format!("{}: {e}", path.display())))?;
        Archive::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_archive() -> Archive {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut a = Archive::new();
        let t32: Tensor<f32> =
            Tensor::from_fn(Shape::new(2, 3, 4, 5), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let t64: Tensor<f64> =
            Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, _, _| rng.gen_range(-1.0..1.0));
        a.push_tensor("enc.in.weight", &t32).unwrap();
        a.push_tensor("moments", &t64).unwrap();
        a.push_u64s("__iter", &[1234]).unwrap();
        a.push_bytes("__config", br#"{"lr":1e-4}"#).unwrap();
        a
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let a = sample_archive();
        let bytes = a.to_bytes();
        let b = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes(), bytes);
        let t: Tensor<f32> = b.tensor("enc.in.weight").unwrap();
        assert!(t.bit_eq(&a.tensor::<f32>("enc.in.weight").unwrap()));
        assert_eq!(b.u64s("__iter").unwrap(), vec![1234]);
        assert_eq!(b.bytes("__config").unwrap(), br#"{"lr":1e-4}"#);
    }

    #[test]
    fn save_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = sample_archive();
        a.save(&path).unwrap();
        let b = Archive::load(&path).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let bytes = sample_archive().to_bytes();
        // Step through the file; every corruption must surface as an error.
        for pos in (0..bytes.len()).step_by(7) {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(Archive::from_bytes(&bad).is_err(), "flip at {pos} accepted");
        }
    }

    #[test]
    fn truncation_is_detected_at_any_length() {
        let bytes = sample_archive().to_bytes();
        for len in (0..bytes.len()).step_by(11) {
            assert!(Archive::from_bytes(&bytes[..len]).is_err(), "len {len} accepted");
        }
    }

    #[test]
    fn wrong_magic_version_and_dtype_are_rejected() {
        let mut bytes = sample_archive().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(Error::Checkpoint(m)) if m.contains("not a checkpoint")
        ));
        let mut v2 = sample_archive().to_bytes();
        v2[4] = 2;
        assert!(matches!(
            Archive::from_bytes(&v2),
            Err(Error::Checkpoint(m)) if m.contains("version")
        ));
    }

    #[test]
    fn duplicate_names_and_dtype_mismatches_are_rejected() {
        let mut a = sample_archive();
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 1));
        assert!(a.push_tensor("moments", &t).is_err());
        assert!(a.tensor::<f32>("moments").is_err()); // stored as f64
        assert!(a.tensor::<f64>("no_such").is_err());
        assert!(a.u64s("__config").is_err());
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = sample_archive().to_bytes();
        bytes.extend_from_slice(b"junk");
        assert!(Archive::from_bytes(&bytes).is_err());
    }
}
