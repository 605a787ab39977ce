use std::io::{Read, Write};

use super::{Activation, NetworkParams, NumError, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"DPGM";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Writes `net` as: magic, version, layer count, `(in, out, activation)` per
/// layer, value count, then the raw little-endian doubles.
pub fn write_snapshot<W: Write>(mut w: W, net: &NetworkParams) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(net.layer_shapes().len() as u32).to_le_bytes())?;
    for (&(i, o), act) in net.layer_shapes().iter().zip(net.activations()) {
        w.write_all(&(i as u32).to_le_bytes())?;
        w.write_all(&(o as u32).to_le_bytes())?;
        w.write_all(&act.tag().to_le_bytes())?;
    }
    w.write_all(&(net.len() as u64).to_le_bytes())?;
    for v in net.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<NetworkParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(NumError::Snapshot(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(NumError::Snapshot(format!("unsupported version {version}")));
    }
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(NumError::Snapshot(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    let mut acts = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let i = read_u32(&mut r)? as usize;
        let o = read_u32(&mut r)? as usize;
        let tag = read_u32(&mut r)?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| NumError::Snapshot(format!("unknown activation tag {tag}")))?;
        shapes.push((i, o));
        acts.push(act);
    }
    let count = read_u64(&mut r)? as usize;
    let expected: usize = shapes.iter().map(|&(i, o)| i * o + o).sum();
    if count != expected {
        return Err(NumError::Snapshot(format!("value count {count} does not match shapes ({expected})")));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(read_f64(&mut r)?);
    }
    NetworkParams::from_values(shapes, acts, values).map_err(|e| NumError::Snapshot(e.to_string()))
}
