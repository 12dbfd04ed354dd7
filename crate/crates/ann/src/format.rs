//! Column file layout (all integers little-endian u32):
//!
//! ```text
//! "MGX1"
//! column, n_columns, branching, depth, leaf_cap, max_scan_ratio (f32),
//! sample_cap, kmeans_iters, seed_lo, seed_hi, quota, priority, dim, n_items
//! n_nodes, then per node: level, kind (0 internal, 1 leaf), first, count,
//!     radius (f32), centroid (dim × f32)
//! n_leaves, then per leaf: offset, len
//! ids (n_items × u32), scales (n_items × f32), codes (n_items·dim × i8)
//! ```
//! For a leaf node `first` is the leaf number and `count` is 0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AnnError, Result};
use crate::index::{Column, ColumnQuota, IndexConfig, Node, NodeKind, Priority};

pub const MAGIC: &[u8; 4] = b"MGX1";

struct Out<W>(W);

impl<W: Write> Out<W> {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| AnnError::Format(format!("{v} exceeds u32")))?;
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
}

struct In<R>(R);

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| AnnError::Format("column file truncated".into()))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
}

impl Column {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut o = Out(w);
        let c = &self.config;
        o.0.write_all(MAGIC)?;
        o.u32(self.column)?;
        o.u32(c.n_columns)?;
        o.u32(c.branching)?;
        o.u32(c.depth)?;
        o.u32(c.leaf_cap)?;
        o.f32(c.max_scan_ratio)?;
        o.u32(c.sample_cap)?;
        o.u32(c.kmeans_iters)?;
        o.u32((c.seed & 0xFFFF_FFFF) as usize)?;
        o.u32((c.seed >> 32) as usize)?;
        o.u32(match c.quota {
            ColumnQuota::Even => 0,
            ColumnQuota::Full => 1,
        })?;
        o.u32(match c.priority {
            Priority::Centroid => 0,
            Priority::Bound => 1,
        })?;
        o.u32(self.dim)?;
        o.u32(self.ids.len())?;

        o.u32(self.nodes.len())?;
        for n in &self.nodes {
            o.u32(n.level as usize)?;
            match n.kind {
                NodeKind::Internal { first_child, count } => {
                    o.u32(0)?;
                    o.u32(first_child as usize)?;
                    o.u32(count as usize)?;
                }
                NodeKind::Leaf(l) => {
                    o.u32(1)?;
                    o.u32(l as usize)?;
                    o.u32(0)?;
                }
            }
            o.f32(n.radius)?;
            for v in &n.centroid {
                o.f32(*v)?;
            }
        }
        o.u32(self.leaves.len())?;
        for &(off, len) in &self.leaves {
            o.u32(off as usize)?;
            o.u32(len as usize)?;
        }
        for &id in &self.ids {
            o.u32(id as usize)?;
        }
        for &s in &self.scales {
            o.f32(s)?;
        }
        let codes: Vec<u8> = self.codes.iter().map(|&c| c as u8).collect();
        o.0.write_all(&codes)?;
        o.0.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut i = In(r);
        if &i.bytes::<4>()? != MAGIC {
            return Err(AnnError::Format("bad column magic".into()));
        }
        let column = i.u32()?;
        let mut config = IndexConfig {
            n_columns: i.u32()?,
            branching: i.u32()?,
            depth: i.u32()?,
            leaf_cap: i.u32()?,
            max_scan_ratio: i.f32()?,
            sample_cap: i.u32()?,
            kmeans_iters: i.u32()?,
            ..IndexConfig::default()
        };
        let lo = i.u32()? as u64;
        let hi = i.u32()? as u64;
        config.seed = lo | (hi << 32);
        config.quota = match i.u32()? {
            0 => ColumnQuota::Even,
            1 => ColumnQuota::Full,
            q => return Err(AnnError::Format(format!("unknown quota tag {q}"))),
        };
        config.priority = match i.u32()? {
            0 => Priority::Centroid,
            1 => Priority::Bound,
            p => return Err(AnnError::Format(format!("unknown priority tag {p}"))),
        };
        config.validate()?;
        let dim = i.u32()?;
        let n_items = i.u32()?;

        let n_nodes = i.u32()?;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            let level = i.u32()? as u32;
            let tag = i.u32()?;
            let first = i.u32()? as u32;
            let count = i.u32()? as u32;
            let kind = match tag {
                0 => NodeKind::Internal { first_child: first, count },
                1 => NodeKind::Leaf(first),
                t => return Err(AnnError::Format(format!("unknown node tag {t}"))),
            };
            let radius = i.f32()?;
            let centroid = (0..dim).map(|_| i.f32()).collect::<Result<Vec<_>>>()?;
            nodes.push(Node { level, centroid, radius, kind });
        }
        let n_leaves = i.u32()?;
        let leaves = (0..n_leaves)
            .map(|_| Ok((i.u32()? as u32, i.u32()? as u32)))
            .collect::<Result<Vec<_>>>()?;
        let ids = (0..n_items).map(|_| Ok(i.u32()? as u32)).collect::<Result<Vec<_>>>()?;
        let scales = (0..n_items).map(|_| i.f32()).collect::<Result<Vec<_>>>()?;
        let mut raw = vec![0u8; n_items * dim];
        i.0.read_exact(&mut raw)
            .map_err(|_| AnnError::Format("column codes truncated".into()))?;
        let codes = raw.into_iter().map(|b| b as i8).collect();
        if i.0.read(&mut [0u8; 1])? != 0 {
            return Err(AnnError::Format("trailing bytes after column".into()));
        }

        let col = Column {
            column,
            config,
            dim,
            nodes,
            leaves,
            ids,
            scales,
            codes,
        };
        col.check()?;
        Ok(col)
    }

    /// Structural checks on a loaded column.
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(AnnError::Format(m));
        if self.nodes.is_empty() {
            return bad("column has no nodes".into());
        }
        for (k, n) in self.nodes.iter().enumerate() {
            match n.kind {
                NodeKind::Internal { first_child, count } => {
                    let end = first_child as usize + count as usize;
                    if first_child as usize <= k || end > self.nodes.len() || count == 0 {
                        return bad(format!("node {k} has invalid children"));
                    }
                }
                NodeKind::Leaf(l) if l as usize >= self.leaves.len() => {
                    return bad(format!("node {k} points at missing leaf {l}"));
                }
                NodeKind::Leaf(_) => {}
            }
        }
        let mut next = 0u32;
        for &(off, len) in &self.leaves {
            if off != next {
                return bad("leaf directory is not contiguous".into());
            }
            next = off + len;
        }
        if next as usize != self.ids.len() {
            return bad("leaf directory does not cover all items".into());
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
