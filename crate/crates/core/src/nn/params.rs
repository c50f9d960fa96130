//! Named, section-tagged parameter storage and its binary snapshot format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Former,
    Latter,
}

impl Section {
    fn tag(self) -> u8 {
        match self {
            Section::Former => 0,
            Section::Latter => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Section::Former),
            1 => Ok(Section::Latter),
            t => Err(Error::Format(format!("unknown section tag {t}"))),
        }
    }
}

/// Which sections an operation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionMask {
    pub former: bool,
    pub latter: bool,
}

impl SectionMask {
    pub const ALL: SectionMask = SectionMask {
        former: true,
        latter: true,
    };
    pub const NONE: SectionMask = SectionMask {
        former: false,
        latter: false,
    };
    pub const FORMER: SectionMask = SectionMask {
        former: true,
        latter: false,
    };
    pub const LATTER: SectionMask = SectionMask {
        former: false,
        latter: true,
    };

    pub fn contains(self, s: Section) -> bool {
        match s {
            Section::Former => self.former,
            Section::Latter => self.latter,
        }
    }

    pub fn is_empty(self) -> bool {
        !self.former && !self.latter
    }

    pub fn is_full(self) -> bool {
        self.former && self.latter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub section: Section,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable parameters of a network.
///
/// Entries are stored back to back in one coordinate vector, so flattening
/// is a copy and entry views are slices into it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn from_tensors(items: Vec<(String, Tensor, Section)>) -> Self {
        let mut entries = Vec::with_capacity(items.len());
        let mut values = Vec::new();
        for (name, tensor, section) in items {
            entries.push(ParamEntry {
                name,
                shape: tensor.shape().to_vec(),
                section,
                offset: values.len(),
            });
            values.extend_from_slice(tensor.data());
        }
        Self { entries, values }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry_values(&self, i: usize) -> &[f64] {
        &self.values[self.entries[i].range()]
    }

    pub fn entry_tensor(&self, i: usize) -> Tensor {
        Tensor::new(self.entries[i].shape.clone(), self.entry_values(i).to_vec())
            .expect("entry shape matches its slice")
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Overwrites coordinates from `flat`; with a mask only entries in the
    /// selected sections change.
    pub fn assign(&mut self, flat: &[f64], mask: Option<SectionMask>) -> Result<()> {
        if flat.len() != self.values.len() {
            return Err(Error::dim(format!(
                "flat vector has {} values, parameters have {}",
                flat.len(),
                self.values.len()
            )));
        }
        match mask {
            None => self.values.copy_from_slice(flat),
            Some(m) => {
                for e in &self.entries {
                    if m.contains(e.section) {
                        let r = e.range();
                        self.values[r.clone()].copy_from_slice(&flat[r]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Coordinate ranges belonging to the masked sections.
    pub fn masked_ranges(&self, mask: SectionMask) -> Vec<std::ops::Range<usize>> {
        let mut out: Vec<std::ops::Range<usize>> = Vec::new();
        for e in self.entries.iter().filter(|e| mask.contains(e.section)) {
            match out.last_mut() {
                Some(last) if last.end == e.offset => last.end = e.offset + e.len(),
                _ => out.push(e.range()),
            }
        }
        out
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (i, e) in self.entries.iter().enumerate() {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[e.section.tag()])?;
            w.write_all(&(e.shape.len() as u64).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in self.entry_values(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let count = read_u64(&mut r)?;
        let mut items = Vec::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            if name_len > 1 << 16 {
                return Err(Error::Format("entry name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let section = Section::from_tag(tag[0])?;
            let rank = read_u64(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("rank {rank} too large")));
            }
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            items.push((name, Tensor::new(shape, data)?, section));
        }
        Ok(Self::from_tensors(items))
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"RSOP";
pub const SNAPSHOT_VERSION: u32 = 1;

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Running batch-norm statistics, one slot per batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub layers: Vec<BnBuffers>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffers {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub section: Section,
}

/// Statistics of one batch at one batch-norm layer (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStat {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each statistic was computed over.
    pub count: usize,
}

impl RunningStats {
    /// Exponential update with the per-layer momentum; running variance uses
    /// the unbiased batch variance.
    pub fn absorb(&mut self, batch: &[BatchStat], momentum: &[f64]) {
        for ((buf, stat), &m) in self.layers.iter_mut().zip(batch).zip(momentum) {
            let unbias = if stat.count > 1 {
                stat.count as f64 / (stat.count - 1) as f64
            } else {
                1.0
            };
            for c in 0..buf.mean.len() {
                buf.mean[c] = (1.0 - m) * buf.mean[c] + m * stat.mean[c];
                buf.var[c] = (1.0 - m) * buf.var[c] + m * stat.var[c] * unbias;
            }
        }
    }

    /// Copies buffers of the masked sections from `src`.
    pub fn assign_from(&mut self, src: &RunningStats, mask: SectionMask) {
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            if mask.contains(dst.section) {
                dst.mean.copy_from_slice(&s.mean);
                dst.var.copy_from_slice(&s.var);
            }
        }
    }
}
