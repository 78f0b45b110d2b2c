//! Single-file parameter checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u64 manifest length, a JSON
//! manifest (`{"dtype": "f64", "tensors": [{"name", "shape"}, ...]}`), then
//! the raw little-endian f64 payloads concatenated in manifest order.
//! Values are written via their bit patterns, so save/load round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Tensor, TensorError};

const MAGIC: &[u8; 8] = b"RLABCKP1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// Writes named tensors to `path`.
pub fn save(path: &Path, entries: &[(String, &Tensor)]) -> Result<(), TensorError> {
    let manifest = Manifest {
        dtype: "f64".to_string(),
        tensors: entries
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| TensorError::MalformedCheckpoint(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, t) in entries {
        for &x in t.data() {
            w.write_all(&x.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads named tensors from `path`, in the order they were saved.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::MalformedCheckpoint(format!(
            "bad magic {magic:?}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| TensorError::MalformedCheckpoint(format!("manifest: {e}")))?;
    if manifest.dtype != "f64" {
        return Err(TensorError::MalformedCheckpoint(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }

    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        out.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
    }
    // Anything left over means the file does not match its manifest.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(TensorError::MalformedCheckpoint(
            "trailing bytes after declared payload".to_string(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        // Include values that stress bit-exactness: denormals, negative zero.
        let a = Tensor::from_vec(&[2, 2], vec![1.5, -0.0, 1e-310, std::f64::consts::PI]).unwrap();
        let b = Tensor::from_vec(&[3], vec![-1.0, 0.3, 1.3]).unwrap();
        save(&path, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a");
        assert_eq!(loaded[0].1.shape(), a.shape());
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.data(), b.data());
    }

    #[test]
    fn save_twice_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        let t = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        save(&p1, &[("t".into(), &t)]).unwrap();
        save(&p2, &[("t".into(), &t)]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_corrupted_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let t = Tensor::scalar(1.0);
        save(&path, &[("t".into(), &t)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(TensorError::MalformedCheckpoint(_))
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save(&path, &[("t".into(), &t)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(&path).is_err());
    }
}
