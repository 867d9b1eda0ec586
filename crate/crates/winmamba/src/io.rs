//! SWMT tensor files and the checkpoint container.
//!
//! SWMT layout: magic `53 57 4D 54` ("SWMT"), u32 LE rank, rank x u32 LE dims,
//! u8 dtype tag (0 = f64 LE, 1 = f32 LE, 2 = u8), then raw row-major data.
//!
//! A checkpoint is a manifest (u32 LE entry count, then per entry a
//! length-prefixed UTF-8 name and u32 rank + dims) followed by the parameter
//! tensors as concatenated SWMT blobs in manifest order.

use crate::tensor::Tensor;
use crate::{Error, Result};
use std::io::{Read, Write};

pub const MAGIC: [u8; 4] = *b"SWMT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
    U8,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
            Dtype::U8 => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::U8),
            _ => Err(Error::BadFormat(format!("unknown dtype tag {}", t))),
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: Dtype) -> Result<()> {
    w.write_all(&MAGIC)?;
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    w.write_all(&[dtype.tag()])?;
    match dtype {
        Dtype::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::U8 => {
            let bytes: Vec<u8> = t.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
            w.write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadFormat(format!("bad magic {:?}", magic)));
    }
    let rank = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let dtype = Dtype::from_tag(tag[0])?;
    let n: usize = shape.iter().product();
    let data = match dtype {
        Dtype::F64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        }
        Dtype::F32 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        }
        Dtype::U8 => {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)?;
            buf.iter().map(|&b| b as f64).collect()
        }
    };
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &std::path::Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t, dtype)?;
    f.flush()?;
    Ok(())
}

pub fn load_tensor(path: &std::path::Path) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

pub fn write_checkpoint(w: &mut impl Write, entries: &[(String, Tensor)]) -> Result<()> {
    write_u32(w, entries.len() as u32)?;
    for (name, t) in entries {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u32(w, d as u32)?;
        }
    }
    for (_, t) in entries {
        write_tensor(w, t, Dtype::F64)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let count = read_u32(r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let name = String::from_utf8(buf).map_err(|e| Error::BadFormat(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        manifest.push((name, shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let t = read_tensor(r)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::BadFormat(format!(
                "manifest shape {:?} disagrees with tensor shape {:?} for {}",
                shape,
                t.shape(),
                name
            )));
        }
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &std::path::Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, entries)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Vec<(String, Tensor)>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn tensor_roundtrip_f64() {
        let t = Rng::new(5).stream(0).normal_tensor(&[2, 3, 4], 1.0);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F64).unwrap();
        assert_eq!(&buf[0..4], b"SWMT");
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tensor_roundtrip_u8_labels() {
        let t = Tensor::new(vec![4], vec![0.0, 1.0, 2.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::U8).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(9);
        let entries = vec![
            ("enc.w".to_string(), rng.normal_tensor(&[3, 2], 1.0)),
            ("enc.b".to_string(), rng.normal_tensor(&[2], 1.0)),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &entries).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, entries);
    }
}
