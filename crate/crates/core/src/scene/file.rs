//! Versioned little-endian scene file.
//!
//! ```text
//! "MSGS" | u32 version | u32 N | u32 D_e | u32 C
//! N x { 3 f32 position | 4 f32 quaternion (w,x,y,z) | 3 f32 log_scale
//!       | f32 opacity_logit | 3 f32 color | D_e f32 sem_feature | f32 mask_logit }
//! C x (D_e + 1) f32 class head weights, row-major, bias last
//! 3 f32 background
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ClassHead, Gaussian, Scene};
use crate::error::{Error, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"MSGS";
pub const SCENE_VERSION: u32 = 1;

fn put(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_f32::<LittleEndian>(v as f32)?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<f64> {
    Ok(r.read_f32::<LittleEndian>()? as f64)
}

fn get3(r: &mut impl Read) -> Result<[f64; 3]> {
    Ok([get(r)?, get(r)?, get(r)?])
}

pub fn write_scene(scene: &Scene, w: &mut impl Write) -> Result<()> {
    let d = scene.sem_dim();
    w.write_all(SCENE_MAGIC)?;
    w.write_u32::<LittleEndian>(SCENE_VERSION)?;
    w.write_u32::<LittleEndian>(u32::try_from(scene.len()).map_err(|_| Error::format("too many gaussians"))?)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u32::<LittleEndian>(scene.num_classes() as u32)?;
    for g in &scene.gaussians {
        for &v in g.position.iter().chain(&g.rotation).chain(&g.log_scale) {
            put(w, v)?;
        }
        put(w, g.opacity_logit)?;
        for &v in g.color.iter().chain(&g.sem_feature) {
            put(w, v)?;
        }
        put(w, g.mask_logit)?;
    }
    for &v in scene.class_head.weights() {
        put(w, v)?;
    }
    for &v in &scene.background {
        put(w, v)?;
    }
    Ok(())
}

pub fn read_scene(r: &mut impl Read) -> Result<Scene> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SCENE_MAGIC {
        return Err(Error::format(format!("bad scene magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SCENE_VERSION {
        return Err(Error::format(format!("unsupported scene version {version}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    if c == 0 {
        return Err(Error::format("scene declares zero classes"));
    }
    // Cap the up-front allocation; a lying header hits EOF instead of exhausting memory.
    let mut gaussians = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let position = get3(r)?;
        let rotation = [get(r)?, get(r)?, get(r)?, get(r)?];
        let log_scale = get3(r)?;
        let opacity_logit = get(r)?;
        let color = get3(r)?;
        let sem_feature = (0..d).map(|_| get(r)).collect::<Result<Vec<_>>>()?;
        let mask_logit = get(r)?;
        gaussians.push(Gaussian { position, rotation, log_scale, opacity_logit, color, sem_feature, mask_logit });
    }
    let head_len = c
        .checked_mul(d + 1)
        .ok_or_else(|| Error::format("class head size overflows"))?;
    let weights = (0..head_len).map(|_| get(r)).collect::<Result<Vec<_>>>()?;
    let background = get3(r)?;
    let head = ClassHead::new(c, d, weights)?;
    Scene::new(gaussians, head, background)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    read_scene(&mut BufReader::new(File::open(path)?))
}
