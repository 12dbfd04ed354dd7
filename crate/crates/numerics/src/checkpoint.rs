//! Parameter checkpoint format: magic `MGD1`, then one record per parameter:
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims, `f32` data.
//! All integers and floats are little-endian. Records run to end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MGD1";

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(NumericsError::Checkpoint("truncated integer".into()))
            };
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn need_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    read_u32(r)?.ok_or_else(|| NumericsError::Checkpoint(format!("unexpected end of file reading {what}")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NumericsError::Checkpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut store = ParamStore::new();
    while let Some(name_len) = read_u32(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| NumericsError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| NumericsError::Checkpoint("name is not UTF-8".into()))?;
        let rank = need_u32(&mut r, "rank")? as usize;
        let shape = (0..rank)
            .map(|_| need_u32(&mut r, "dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| NumericsError::Checkpoint(format!("truncated data for `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore<f32>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), store)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
