//! Per-pixel class labels and the LMAP file.
//!
//! ```text
//! "LMAP" | u32 version | u32 H | u32 W | H*W u16 ids row-major (0xFFFF = invalid)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const LMAP_MAGIC: &[u8; 4] = b"LMAP";
pub const LMAP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub const INVALID: u16 = u16::MAX;

    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![Self::INVALID; width * height] }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(format!("{} labels for a {width}x{height} map", labels.len())));
        }
        Ok(Self { width, height, labels })
    }

    pub fn raw(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        match self.labels[y * self.width + x] {
            Self::INVALID => None,
            v => Some(v as usize),
        }
    }

    pub fn set(&mut self, x: usize, y: usize, label: Option<u16>) {
        self.labels[y * self.width + x] = label.unwrap_or(Self::INVALID);
    }

    pub fn num_valid(&self) -> usize {
        self.labels.iter().filter(|&&v| v != Self::INVALID).count()
    }

    /// Majority vote over `cell x cell` blocks (partial blocks at the border).
    /// Invalid pixels vote too; a block won by them is invalid. Ties go to the
    /// smaller id, with invalid the largest.
    pub fn downsample_majority(&self, cell: usize) -> LabelMap {
        let gw = self.width.div_ceil(cell);
        let gh = self.height.div_ceil(cell);
        let mut out = LabelMap::invalid(gw, gh);
        let mut votes: Vec<(u16, usize)> = Vec::new();
        for cy in 0..gh {
            for cx in 0..gw {
                votes.clear();
                for y in cy * cell..((cy + 1) * cell).min(self.height) {
                    for x in cx * cell..((cx + 1) * cell).min(self.width) {
                        let v = self.labels[y * self.width + x];
                        match votes.iter_mut().find(|(id, _)| *id == v) {
                            Some(e) => e.1 += 1,
                            None => votes.push((v, 1)),
                        }
                    }
                }
                let winner = votes
                    .iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|e| e.0)
                    .unwrap_or(Self::INVALID);
                out.labels[cy * gw + cx] = winner;
            }
        }
        out
    }
}

pub fn write_label_map(map: &LabelMap, w: &mut impl Write) -> Result<()> {
    w.write_all(LMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(LMAP_VERSION)?;
    w.write_u32::<LittleEndian>(map.height as u32)?;
    w.write_u32::<LittleEndian>(map.width as u32)?;
    for &v in &map.labels {
        w.write_u16::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_label_map(r: &mut impl Read) -> Result<LabelMap> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LMAP_MAGIC {
        return Err(Error::format(format!("bad label map magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != LMAP_VERSION {
        return Err(Error::format(format!("unsupported label map version {version}")));
    }
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let n = w.checked_mul(h).filter(|&n| n <= 1 << 30).ok_or_else(|| Error::format("label map too large"))?;
    let mut labels = vec![0u16; n];
    r.read_u16_into::<LittleEndian>(&mut labels)?;
    LabelMap::from_labels(w, h, labels)
}

pub fn save_label_map(map: &LabelMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_label_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    read_label_map(&mut BufReader::new(File::open(path)?))
}
