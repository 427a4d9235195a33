//! The feature-file format every module shares.
//!
//! Layout: magic `SEQF` | u32 version=1 | u32 T | u32 D | T·D little-endian
//! f32 values, row-major. Values are stored at 32-bit precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::numerics::tensor::Tensor;

use super::CorpusError;

pub const SEQF_MAGIC: [u8; 4] = *b"SEQF";
pub const SEQF_VERSION: u32 = 1;

/// Serializes a feature matrix (frame-rate metadata is carried by manifests,
/// not the file).
pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<(), CorpusError> {
    let (t, d) = (f.n_frames(), f.dim());
    let mut buf = Vec::with_capacity(16 + t * d * 4);
    buf.extend_from_slice(&SEQF_MAGIC);
    buf.extend_from_slice(&SEQF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in f.frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a feature file back. The caller supplies the kind and frame shift,
/// which the format intentionally does not store.
pub fn read_features(
    path: &Path,
    kind: FeatureKind,
    frame_shift_ms: f64,
) -> Result<FeatureMatrix, CorpusError> {
    let bytes = fs::read(path)?;
    let name = path.display().to_string();
    if bytes.len() < 16 {
        return Err(CorpusError::Truncated(name));
    }
    if bytes[0..4] != SEQF_MAGIC {
        return Err(CorpusError::BadMagic(name));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SEQF_VERSION {
        return Err(CorpusError::BadVersion { path: name, version });
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let want = 16 + t * d * 4;
    if bytes.len() < want {
        return Err(CorpusError::Truncated(name));
    }
    let data: Vec<f64> = bytes[16..want]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let frames = Tensor::from_vec(&[t, d], data)
        .map_err(|e| CorpusError::Corrupt(format!("{name}: {e}")))?;
    Ok(FeatureMatrix::new(frames, frame_shift_ms, kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_f32_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.seqf");
        let frames = Tensor::from_vec(&[4, 3], (0..12).map(|i| i as f64 * 0.123 - 0.4).collect())
            .unwrap();
        let f = FeatureMatrix::new(frames.clone(), 10.0, FeatureKind::Fbank);
        write_features(&path, &f).unwrap();
        let back = read_features(&path, FeatureKind::Fbank, 10.0).unwrap();
        for (a, b) in frames.data().iter().zip(back.frames.data()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * f32::EPSILON as f64 + 1e-9);
        }
    }

    #[test]
    fn golden_header_bytes_for_3x2_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.seqf");
        let frames =
            Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        write_features(
            &path,
            &FeatureMatrix::new(frames, 10.0, FeatureKind::Fbank),
        )
        .unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"SEQF");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, want);
    }

    #[test]
    fn corrupted_magic_is_a_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.seqf");
        fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(
            read_features(&path, FeatureKind::Fbank, 10.0),
            Err(CorpusError::BadMagic(_))
        ));
    }

    #[test]
    fn truncation_and_version_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.seqf");
        let frames = Tensor::zeros(&[5, 4]);
        write_features(
            &path,
            &FeatureMatrix::new(frames, 10.0, FeatureKind::Fbank),
        )
        .unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(30);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_features(&path, FeatureKind::Fbank, 10.0),
            Err(CorpusError::Truncated(_))
        ));

        let mut fresh = Vec::new();
        fresh.extend_from_slice(b"SEQF");
        fresh.extend_from_slice(&9u32.to_le_bytes());
        fresh.extend_from_slice(&[0u8; 8]);
        fs::write(&path, &fresh).unwrap();
        assert!(matches!(
            read_features(&path, FeatureKind::Fbank, 10.0),
            Err(CorpusError::BadVersion { version: 9, .. })
        ));
    }
}
