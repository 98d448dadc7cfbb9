//! Binary parameter container.
//!
//! Layout (all integers little-endian `u32`): magic `NAGC`, version, tensor
//! count, then per tensor: name length, UTF-8 name bytes, rank, dims, and the
//! values as little-endian `f32`.

use std::io::{Read, Write};

use crate::{ParamStore, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NAGC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(store: &ParamStore<f32>, mut out: W) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in store.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(name.as_bytes()).map_err(io)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut items = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut input)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw).map_err(io)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        items.push((name, Tensor::new(shape, data)?));
    }
    ParamStore::from_tensors(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{init_params, ParamSpec};

    #[test]
    fn bit_exact_round_trip() {
        let mut spec = ParamSpec::new();
        spec.matrix("a.w", 4, 3).bias("a.b", 3).embedding("emb", 7, 2);
        spec.push("vec", &[5], crate::ParamKind::Embedding);
        let store: ParamStore<f32> = init_params(&spec, 11).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), store.len());
        for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(&bytes[..4], b"NAGC");
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let mut spec = ParamSpec::new();
        spec.matrix("w", 2, 2);
        let store: ParamStore<f32> = init_params(&spec, 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
