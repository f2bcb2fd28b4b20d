//! Checkpoint serialization for parameter sets.
//!
//! Self-describing binary layout, little-endian throughout:
//!
//! ```text
//! magic    4 bytes  "PLCK"
//! version  u32      currently 1
//! count    u32      number of tensors
//! entry*   per tensor, in parameter-set order:
//!   name_len  u32
//!   name      utf-8 bytes
//!   prunable  u8 (0 or 1)
//!   rank      u32
//!   shape     u64 × rank
//!   values    f64 × product(shape), little-endian bit patterns
//! ```
//!
//! Round trips are bit-exact: `load(save(p)) == p`, names, order, flags and
//! every float payload included.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::Reader;
use crate::error::Result;
use crate::model::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PLCK";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor, prunable) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[u8::from(prunable)])?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let file = File::open(path)?;
    let mut r = Reader::new(BufReader::new(file));

    let magic = r.bytes::<4>("magic")?;
    if &magic != MAGIC {
        return Err(r.err_at(0, "bad magic bytes (not a checkpoint file)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err_back(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;

    let mut params = ParamSet::empty();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 4096 {
            return Err(r.err_back(4, format!("implausible name length {name_len}")));
        }
        let name_bytes = r.vec(name_len, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| r.err_back(name_len as u64, "name is not valid utf-8"))?;
        let prunable = match r.bytes::<1>("prunable flag")?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(r.err_back(1, format!("prunable flag must be 0/1, got {other}")))
            }
        };
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.err_back(4, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("shape dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(r.bytes::<8>("tensor values")?));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| r.err_back(0, format!("tensor {i}: {e}")))?;
        params
            .insert(name.clone(), tensor, prunable)
            .map_err(|_| r.err_back(0, format!("duplicate tensor name {name:?}")))?;
    }

    // Trailing garbage means the file was not produced by save_checkpoint.
    r.expect_eof()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::Rng;

    fn sample_params() -> ParamSet {
        let mut rng = Rng::new(17);
        let mut p = ParamSet::empty();
        let t1 = Tensor::new(
            vec![2, 3],
            (0..6).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let t2 = Tensor::new(vec![4], vec![0.0, -0.0, 1.5e-300, -7.25]).unwrap();
        p.insert("block0.ff1.weight".into(), t1, true).unwrap();
        p.insert("head.bias".into(), t2, false).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = sample_params();
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert!(p.bit_eq(&q));
        let names: Vec<_> = q.iter().map(|(n, _, _)| n.to_string()).collect();
        assert_eq!(names, ["block0.ff1.weight", "head.bias"]);
        assert!(q.get("block0.ff1.weight").unwrap().1);
        assert!(!q.get("head.bias").unwrap().1);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&sample_params(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        std::fs::write(&path, cut).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE----------------").unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&sample_params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xFF);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Format { .. })
        ));
    }
}
