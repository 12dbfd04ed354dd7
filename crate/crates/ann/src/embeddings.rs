//! Item embedding file: magic `MGE1`, `u32` count M, `u32` dim d, then
//! `M·d` little-endian f32 values. Row `i` belongs to item id `i`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AnnError, Result};

pub const MAGIC: &[u8; 4] = b"MGE1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(AnnError::Format(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = Vec<f32>>) -> Result<Self> {
        let mut data = Vec::new();
        for r in rows {
            if r.len() != dim {
                return Err(AnnError::Dim {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|_| AnnError::Format("embedding header truncated".into()))?;
        if &head[..4] != MAGIC {
            return Err(AnnError::Format("bad embedding magic".into()));
        }
        let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; count * dim * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| AnnError::Format(format!("expected {count}x{dim} values")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(AnnError::Format("trailing bytes after embeddings".into()));
        }
        Self::new(dim.max(1), data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
