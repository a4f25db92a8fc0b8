//! Checkpoint container: a JSON metadata block followed by named tensors as
//! raw little-endian f64.
//!
//! Layout: magic "BSQC", u32 version, u64 metadata length, metadata JSON,
//! u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
//! u64 dims, f64 data.

use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 4] = b"BSQC";
const VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    metadata: &serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<(), NnError> {
    let meta = serde_json::to_vec(metadata).map_err(|e| NnError::Format(e.to_string()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(&meta)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>), NnError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| NnError::Format(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    r.read_exact(&mut u64buf)?;
    let meta_len = u64::from_le_bytes(u64buf) as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let metadata: serde_json::Value =
        serde_json::from_slice(&meta).map_err(|e| NnError::Format(e.to_string()))?;

    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name not UTF-8"))?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        tensors.push((name, Tensor::new(shape, data)));
    }
    Ok((metadata, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bsqc");
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.25]);
        let b = Tensor::scalar(42.0);
        let meta = json!({"kind": "test", "step": 7});
        save_checkpoint(&path, &meta, &[("layer.w", &a), ("bias", &b)]).unwrap();
        let (m, ts) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].0, "layer.w");
        assert_eq!(ts[0].1, a);
        assert_eq!(ts[1].1, b);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
