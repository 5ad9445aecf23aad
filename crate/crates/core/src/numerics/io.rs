//! Binary parameter files.
//!
//! Layout (all integers little-endian `u32`):
//! magic `QGF1`, entry count, then per entry: name length, UTF-8 name, rank,
//! each dimension, and the values as little-endian `f32`.

use std::io::{Read, Write};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QGF1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: "<parameter stream>".into(),
        message: msg.into(),
    }
}

fn put_u32(w: &mut impl Write, x: usize) -> std::io::Result<()> {
    let x = u32::try_from(x).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&x.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_params(w: &mut impl Write, params: &ParamSet) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, params.len())?;
    for (name, t) in params.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("truncated: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let count = get_u32(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = get_u32(r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| bad(format!("truncated: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = get_u32(r)?;
        let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|e| bad(format!("truncated: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.add(name, Tensor::new(dims, data)?);
    }
    Ok(params)
}
