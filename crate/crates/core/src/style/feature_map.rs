//! Feature maps and the FMAP file.
//!
//! ```text
//! "FMAP" | u32 version | u32 H | u32 W | u32 C | u8 source_tag | H*W*C f32, row-major, channel-last
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;

/// Upper bound on `H * W * C` accepted from a file header.
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Vgg = 0,
    Dino = 1,
    Toy = 2,
    Rendered = 3,
}

impl SourceTag {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => SourceTag::Vgg,
            1 => SourceTag::Dino,
            2 => SourceTag::Toy,
            3 => SourceTag::Rendered,
            other => return Err(Error::format(format!("unknown feature source tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub tag: SourceTag,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, tag: SourceTag) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("feature map needs at least one channel"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{channels} feature map",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data, tag })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, tag: SourceTag) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels], tag }
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Mean feature vector over all pixels.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.channels];
        for p in 0..self.num_pixels() {
            for (a, &v) in m.iter_mut().zip(self.pixel(p)) {
                *a += v;
            }
        }
        let n = self.num_pixels().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

pub fn write_feature_map(map: &FeatureMap, w: &mut impl Write) -> Result<()> {
    w.write_all(FMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(FMAP_VERSION)?;
    w.write_u32::<LittleEndian>(map.height as u32)?;
    w.write_u32::<LittleEndian>(map.width as u32)?;
    w.write_u32::<LittleEndian>(map.channels as u32)?;
    w.write_u8(map.tag as u8)?;
    for &v in &map.data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

pub fn read_feature_map(r: &mut impl Read) -> Result<FeatureMap> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FMAP_MAGIC {
        return Err(Error::format(format!("bad feature map magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FMAP_VERSION {
        return Err(Error::format(format!("unsupported feature map version {version}")));
    }
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let tag = SourceTag::from_u8(r.read_u8()?)?;
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::format(format!("feature map header {h}x{w}x{c} is too large")))?;
    if c == 0 {
        return Err(Error::format("feature map with zero channels"));
    }
    let mut raw = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut raw)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("feature map contains non-finite values"));
    }
    FeatureMap::new(h, w, c, raw.into_iter().map(f64::from).collect(), tag)
}

pub fn save_feature_map(map: &FeatureMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_feature_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    read_feature_map(&mut BufReader::new(File::open(path)?))
}
