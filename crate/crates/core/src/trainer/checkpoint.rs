//! Binary checkpoint container.
//!
//! Layout (little endian): magic `D2E1`, `u32` version, 32-byte config
//! digest, `u32` array count, then per array `u32` name length, UTF-8 name,
//! `u32` rows, `u32` cols and `rows·cols` `f64` values. A trailing `u64`
//! holds the first eight bytes of the SHA-256 of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainError;
use crate::numerics::optim::Adam;
use crate::numerics::{Matrix, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2E1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub arrays: Vec<(String, Matrix)>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32]) -> Self {
        Self { config_hash, arrays: Vec::new() }
    }

    pub fn put(&mut self, name: impl Into<String>, value: Matrix) {
        self.arrays.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix, TrainError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| TrainError::CorruptCheckpoint(format!("missing array {name:?}")))
    }

    /// Integers and bit patterns ride in `f64` slots bit-for-bit.
    pub fn put_bits(&mut self, name: impl Into<String>, values: &[u64]) {
        let v: Vec<f64> = values.iter().map(|b| f64::from_bits(*b)).collect();
        self.put(name, Matrix::row(&v));
    }

    pub fn get_bits(&self, name: &str) -> Result<Vec<u64>, TrainError> {
        Ok(self.get(name)?.as_slice().iter().map(|v| v.to_bits()).collect())
    }

    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) {
        for id in store.ids() {
            self.put(format!("{prefix}/{}", store.name(id)), store.get(id).clone());
        }
    }

    /// Overwrite every parameter of `store` from `prefix/<name>`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(), TrainError> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}/{}", store.name(id));
            let m = self.get(&name)?;
            if m.shape() != store.get(id).shape() {
                return Err(TrainError::CorruptCheckpoint(format!("{name} has shape {:?}", m.shape())));
            }
            *store.get_mut(id) = m.clone();
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, adam: &Adam) {
        self.put_bits(format!("{prefix}/step"), &[adam.step_count()]);
        let (m, v) = adam.moments();
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            self.put(format!("{prefix}/m{i}"), a.clone());
            self.put(format!("{prefix}/v{i}"), b.clone());
        }
    }

    pub fn load_adam(&self, prefix: &str, adam: &mut Adam) -> Result<(), TrainError> {
        let step = self.get_bits(&format!("{prefix}/step"))?.first().copied().unwrap_or(0);
        let (m0, _) = adam.moments();
        let shapes: Vec<(usize, usize)> = m0.iter().map(Matrix::shape).collect();
        let mut first = Vec::with_capacity(shapes.len());
        let mut second = Vec::with_capacity(shapes.len());
        for (i, shape) in shapes.iter().enumerate() {
            let (a, b) = (self.get(&format!("{prefix}/m{i}"))?, self.get(&format!("{prefix}/v{i}"))?);
            if a.shape() != *shape || b.shape() != *shape {
                return Err(TrainError::CorruptCheckpoint(format!("{prefix} moment {i} shape")));
            }
            first.push(a.clone());
            second.push(b.clone());
        }
        adam.restore(step, first, second);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, m) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let corrupt = |m: &str| TrainError::CorruptCheckpoint(m.into());
        if bytes.len() < 4 + 4 + 32 + 4 + 8 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if checksum(body) != u64::from_le_bytes(tail.try_into().expect("eight bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| corrupt("array name is not UTF-8"))?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let len = rows.checked_mul(cols).and_then(|l| l.checked_mul(8)).ok_or_else(|| corrupt("array too large"))?;
            let raw = r.take(len)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            arrays.push((name, Matrix::from_vec(rows, cols, values)?));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { config_hash, arrays })
    }

    /// Written to a temporary sibling and renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
