//! Flat binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  ("DCRN" for parameters, "FEAT" for cached features)
//! version      u32
//! repeated until end of file:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank x u64
//!   values     product(dims) x f64 (IEEE-754)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DCRN";
pub const FEATURE_MAGIC: [u8; 4] = *b"FEAT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_container<W: Write>(mut w: W, magic: [u8; 4], records: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, tensor) in records {
        let name_len = u32::try_from(name.len())
            .map_err(|_| Error::Format(format!("record name too long: {} bytes", name.len())))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(Error::Format("truncated record header".into())),
            n => filled += n,
        }
    }
    Ok(true)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated record".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_container<R: Read>(mut r: R, magic: [u8; 4]) -> Result<Vec<(String, Tensor)>> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("missing magic bytes".into()))?;
    if head != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        if !read_exact_or_eof(&mut r, &mut len_buf)? {
            break;
        }
        let mut name = vec![0u8; u32::from_le_bytes(len_buf) as usize];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("truncated record name".into()))?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format(format!("truncated dims for {name}")))?;
            shape.push(
                usize::try_from(u64::from_le_bytes(b))
                    .map_err(|_| Error::Format(format!("dimension too large in {name}")))?,
            );
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated values for {name}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        records.push((name, tensor));
    }
    Ok(records)
}

pub fn save(path: impl AsRef<Path>, magic: [u8; 4], records: &[(&str, &Tensor)]) -> Result<()> {
    write_container(BufWriter::new(File::create(path)?), magic, records)
}

pub fn load(path: impl AsRef<Path>, magic: [u8; 4]) -> Result<Vec<(String, Tensor)>> {
    read_container(BufReader::new(File::open(path)?), magic)
}
