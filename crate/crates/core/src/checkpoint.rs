//! The binary model container every trainable model serializes into.
//!
//! Layout: magic `FHVM` | u32 version | kind string | scalar map |
//! string map | named f64 tensors. Strings are u16-length-prefixed UTF-8;
//! tensors carry a u32 rank, u32 dims, and little-endian f64 data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::numerics::optim::ParamStore;
use crate::numerics::tensor::Tensor;

pub const FHVM_MAGIC: [u8; 4] = *b"FHVM";
pub const FHVM_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported checkpoint version {version} in {path}")]
    BadVersion { path: String, version: u32 },
    #[error("truncated checkpoint {0}")]
    Truncated(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds a {got:?} model, expected {want:?}")]
    WrongKind { want: String, got: String },
}

/// A serialized model: its kind tag, hyperparameters, and parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub scalars: BTreeMap<String, f64>,
    pub strings: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            ..Checkpoint::default()
        }
    }

    pub fn expect_kind(&self, want: &str) -> Result<(), CheckpointError> {
        if self.kind != want {
            return Err(CheckpointError::WrongKind {
                want: want.to_string(),
                got: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing scalar {name:?}")))
    }

    pub fn scalar_usize(&self, name: &str) -> Result<usize, CheckpointError> {
        Ok(self.scalar(name)? as usize)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {name:?}")))
    }

    pub fn insert_params(&mut self, params: &ParamStore) {
        for (name, tensor) in params.iter() {
            self.tensors.insert(name.clone(), tensor.clone());
        }
    }

    /// Rebuilds a parameter store, checking it against an expected layout.
    pub fn params_matching(&self, expected: &ParamStore) -> Result<ParamStore, CheckpointError> {
        let mut out = ParamStore::new();
        for (name, proto) in expected.iter() {
            let t = self.tensor(name)?;
            if t.shape() != proto.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    proto.shape()
                )));
            }
            out.insert(name, t.clone());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&FHVM_MAGIC);
        buf.extend_from_slice(&FHVM_VERSION.to_le_bytes());
        write_str(&mut buf, &self.kind);
        buf.extend_from_slice(&(self.scalars.len() as u32).to_le_bytes());
        for (name, value) in &self.scalars {
            write_str(&mut buf, name);
            buf.extend_from_slice(&value.to_le_bytes());
        }
        buf.extend_from_slice(&(self.strings.len() as u32).to_le_bytes());
        for (name, value) in &self.strings {
            write_str(&mut buf, name);
            buf.extend_from_slice(&(value.len() as u32).to_le_bytes());
            buf.extend_from_slice(value.as_bytes());
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            write_str(&mut buf, name);
            buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = fs::read(path)?;
        let name = path.display().to_string();
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
            path: &name,
        };
        if r.take(4)? != FHVM_MAGIC {
            return Err(CheckpointError::BadMagic(name.clone()));
        }
        let version = r.u32()?;
        if version != FHVM_VERSION {
            return Err(CheckpointError::BadVersion {
                path: name.clone(),
                version,
            });
        }
        let kind = r.string()?;
        let mut out = Checkpoint::new(&kind);
        for _ in 0..r.u32()? {
            let key = r.string()?;
            out.scalars.insert(key, r.f64()?);
        }
        for _ in 0..r.u32()? {
            let key = r.string()?;
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let value = String::from_utf8(raw.to_vec())
                .map_err(|_| CheckpointError::Corrupt("bad utf8".into()))?;
            out.strings.insert(key, value);
        }
        for _ in 0..r.u32()? {
            let key = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            let t = Tensor::from_vec(&shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("tensor {key:?}: {e}")))?;
            out.tensors.insert(key, t);
        }
        Ok(out)
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.path.to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("bad utf8 in name".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fhvm");
        let mut ck = Checkpoint::new("fhvae");
        ck.scalars.insert("alpha".into(), 10.0);
        ck.scalars.insert("dim_z1".into(), 32.0);
        ck.strings.insert("preset".into(), "small".into());
        ck.tensors.insert(
            "enc.w".into(),
            Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1.5, -2.5, 0.0]).unwrap(),
        );
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "fhvae");
        assert_eq!(back.scalar("alpha").unwrap(), 10.0);
        assert_eq!(back.strings["preset"], "small");
        assert_eq!(back.tensor("enc.w").unwrap().data(), ck.tensors["enc.w"].data());
    }

    #[test]
    fn wrong_magic_version_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fhvm");
        fs::write(&path, b"JUNKjunkjunk").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic(_))
        ));

        let mut ck = Checkpoint::new("e2e");
        ck.tensors.insert("w".into(), Tensor::zeros(&[4, 4]));
        ck.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Truncated(_))
        ));

        let mut fresh = Vec::new();
        fresh.extend_from_slice(&FHVM_MAGIC);
        fresh.extend_from_slice(&7u32.to_le_bytes());
        fs::write(&path, &fresh).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadVersion { version: 7, .. })
        ));
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let ck = Checkpoint::new("gmm");
        assert!(ck.expect_kind("gmm").is_ok());
        assert!(matches!(
            ck.expect_kind("fhvae"),
            Err(CheckpointError::WrongKind { .. })
        ));
    }
}
