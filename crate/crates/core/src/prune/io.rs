//! Mask serialization: one bit per weight, same tensor ordering as
//! checkpoints.
//!
//! ```text
//! magic    4 bytes  "PLMK"
//! version  u32      currently 1
//! pattern  u8       0 global, 1 layerwise, 2 N:M (then n: u32, m: u32)
//! target   f64      target sparsity
//! count    u32      number of tensors
//! entry*   per tensor, in mask order:
//!   name_len u32, name utf-8, rank u32, shape u64 × rank,
//!   bits ceil(len/8) bytes, row-major, LSB first
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::binio::Reader;
use crate::error::Result;

use super::{MaskPattern, MaskTensor, PruneMask};

pub const MAGIC: &[u8; 4] = b"PLMK";
pub const VERSION: u32 = 1;

pub fn save_mask(mask: &PruneMask, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    match mask.pattern() {
        MaskPattern::UnstructuredGlobal => w.write_all(&[0])?,
        MaskPattern::UnstructuredLayerwise => w.write_all(&[1])?,
        MaskPattern::Nm { n, m } => {
            w.write_all(&[2])?;
            w.write_all(&(n as u32).to_le_bytes())?;
            w.write_all(&(m as u32).to_le_bytes())?;
        }
    }
    w.write_all(&mask.target_sparsity().to_le_bytes())?;
    w.write_all(&(mask.len() as u32).to_le_bytes())?;
    for (name, mt) in mask.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(mt.shape().len() as u32).to_le_bytes())?;
        for &d in mt.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut byte = 0u8;
        for (i, &keep) in mt.keep().iter().enumerate() {
            byte |= keep << (i % 8);
            if i % 8 == 7 {
                w.write_all(&[byte])?;
                byte = 0;
            }
        }
        if mt.len() % 8 != 0 {
            w.write_all(&[byte])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<PruneMask> {
    let file = File::open(path)?;
    let mut r = Reader::new(BufReader::new(file));

    let magic = r.bytes::<4>("magic")?;
    if &magic != MAGIC {
        return Err(r.err_at(0, "bad magic bytes (not a mask file)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err_back(4, format!("unsupported version {version}")));
    }
    let pattern = match r.bytes::<1>("pattern tag")?[0] {
        0 => MaskPattern::UnstructuredGlobal,
        1 => MaskPattern::UnstructuredLayerwise,
        2 => {
            let n = r.u32("N")? as usize;
            let m = r.u32("M")? as usize;
            MaskPattern::Nm { n, m }
        }
        other => return Err(r.err_back(1, format!("unknown pattern tag {other}"))),
    };
    let target = r.f64("target sparsity")?;
    if !(0.0..1.0).contains(&target) {
        return Err(r.err_back(8, format!("target sparsity {target} outside [0, 1)")));
    }
    let count = r.u32("tensor count")?;

    let mut entries = IndexMap::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 4096 {
            return Err(r.err_back(4, format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(r.vec(name_len, "name")?)
            .map_err(|_| r.err_back(name_len as u64, "name is not valid utf-8"))?;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.err_back(4, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("shape dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = r.vec(n.div_ceil(8), "mask bits")?;
        let mut keep = Vec::with_capacity(n);
        for i in 0..n {
            keep.push((bytes[i / 8] >> (i % 8)) & 1);
        }
        let mt = MaskTensor::new(shape, keep)
            .map_err(|e| r.err_back(0, format!("tensor {i}: {e}")))?;
        if entries.insert(name.clone(), mt).is_some() {
            return Err(r.err_back(0, format!("duplicate tensor name {name:?}")));
        }
    }
    r.expect_eof()?;
    PruneMask::new(entries, pattern, target)
}
