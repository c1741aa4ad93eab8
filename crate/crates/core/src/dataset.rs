//! Dataset manifests, trajectories and style manifests.
//!
//! A dataset manifest is plain text with one entry per line and tab-separated
//! fields:
//!
//! ```text
//! image  fx  fy  cx  cy  width  height  p00 p01 ... p33  [labels]
//! ```
//!
//! where `p..` is the row-major 4x4 world-to-camera pose, and the optional last
//! field is an LMAP label-map path. Two directives are also accepted:
//! `styles<TAB>path` names a style manifest and `init<TAB>path` names the
//! initial scene file. Blank lines and lines starting with `#` are ignored.
//! Relative paths resolve against the manifest's directory.
//!
//! A trajectory file holds one camera per line with the same camera fields and
//! no image path. A style manifest holds `id<TAB>image<TAB>local<TAB>global`
//! lines where `local`/`global` are FMAP paths or `-` to extract toy features
//! from the image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene::Camera;
use crate::semantic::{load_label_map, LabelMap};
use crate::style::{load_feature_map, StyleSet, ToyExtractor, ToyKind};

const CAMERA_FIELDS: usize = 6 + 16;

/// A training view held in memory.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub labels: Option<LabelMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub camera: Camera,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub styles: Option<PathBuf>,
    pub init: Option<PathBuf>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(format!("line {line}: cannot parse {what} from {s:?}")))
}

fn parse_camera(f: &[&str], line: usize) -> Result<Camera> {
    if f.len() != CAMERA_FIELDS {
        return Err(Error::format(format!("line {line}: expected {CAMERA_FIELDS} camera fields, got {}", f.len())));
    }
    let fx = parse_num(f[0], line, "fx")?;
    let fy = parse_num(f[1], line, "fy")?;
    let cx = parse_num(f[2], line, "cx")?;
    let cy = parse_num(f[3], line, "cy")?;
    let w = parse_num(f[4], line, "width")?;
    let h = parse_num(f[5], line, "height")?;
    let mut pose = [0.0; 16];
    for (k, p) in pose.iter_mut().enumerate() {
        *p = parse_num(f[6 + k], line, "pose entry")?;
    }
    Camera::from_pose_matrix(&pose, (fx, fy), (cx, cy), (w, h))
        .map_err(|e| Error::format(format!("line {line}: {e}")))
}

/// Tab-separated camera fields; floats print in shortest round-trip form.
pub fn camera_fields(camera: &Camera) -> String {
    let mut s = format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height
    );
    for p in camera.pose_matrix() {
        let _ = write!(s, "\t{p}");
    }
    s
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (line, l) in content_lines(text) {
            let f = fields(l);
            match f[0] {
                "styles" | "init" if f.len() == 2 => {
                    let slot = if f[0] == "styles" { &mut m.styles } else { &mut m.init };
                    if slot.is_some() {
                        return Err(Error::format(format!("line {line}: duplicate {} directive", f[0])));
                    }
                    *slot = Some(resolve(base_dir, f[1]));
                }
                _ => {
                    let labels = match f.len() {
                        n if n == CAMERA_FIELDS + 1 => None,
                        n if n == CAMERA_FIELDS + 2 => Some(resolve(base_dir, f[CAMERA_FIELDS + 1])),
                        n => {
                            return Err(Error::format(format!(
                                "line {line}: expected {} or {} fields, got {n}",
                                CAMERA_FIELDS + 1,
                                CAMERA_FIELDS + 2
                            )))
                        }
                    };
                    m.entries.push(ManifestEntry {
                        image: resolve(base_dir, f[0]),
                        camera: parse_camera(&f[1..=CAMERA_FIELDS], line)?,
                        labels,
                    });
                }
            }
        }
        if m.entries.is_empty() {
            return Err(Error::format("manifest lists no views"));
        }
        Ok(m)
    }

    /// Parses the manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        let referenced = m
            .entries
            .iter()
            .flat_map(|e| std::iter::once(&e.image).chain(e.labels.as_ref()))
            .chain(m.styles.as_ref())
            .chain(m.init.as_ref());
        for p in referenced {
            if !p.is_file() {
                return Err(Error::invalid(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(m)
    }

    /// Serializes with paths written as given.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.init {
            let _ = writeln!(s, "init\t{}", p.display());
        }
        if let Some(p) = &self.styles {
            let _ = writeln!(s, "styles\t{}", p.display());
        }
        for e in &self.entries {
            let _ = write!(s, "{}\t{}", e.image.display(), camera_fields(&e.camera));
            if let Some(l) = &e.labels {
                let _ = write!(s, "\t{}", l.display());
            }
            s.push('\n');
        }
        s
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.entries.iter().map(|e| e.camera.clone()).collect()
    }

    /// Loads images and label maps, checking them against the camera
    /// resolution.
    pub fn load_views(&self) -> Result<Vec<View>> {
        self.entries
            .iter()
            .map(|e| {
                let image = Image::load_rgb(&e.image)?;
                let (w, h) = (e.camera.width, e.camera.height);
                if image.width != w || image.height != h {
                    return Err(Error::shape(format!(
                        "{} is {}x{}, camera expects {w}x{h}",
                        e.image.display(),
                        image.width,
                        image.height
                    )));
                }
                let labels = match &e.labels {
                    Some(p) => {
                        let l = load_label_map(p)?;
                        if l.width != w || l.height != h {
                            return Err(Error::shape(format!("{} does not match {w}x{h}", p.display())));
                        }
                        Some(l)
                    }
                    None => None,
                };
                Ok(View { camera: e.camera.clone(), image, labels })
            })
            .collect()
    }
}

pub fn parse_trajectory(text: &str) -> Result<Vec<Camera>> {
    let cams = content_lines(text)
        .map(|(line, l)| parse_camera(&fields(l), line))
        .collect::<Result<Vec<_>>>()?;
    if cams.is_empty() {
        return Err(Error::format("trajectory lists no cameras"));
    }
    Ok(cams)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Camera>> {
    parse_trajectory(&fs::read_to_string(path)?)
}

pub fn trajectory_to_text(cameras: &[Camera]) -> String {
    cameras.iter().map(|c| camera_fields(c) + "\n").collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub local: Option<PathBuf>,
    pub global: Option<PathBuf>,
}

pub fn parse_style_manifest(text: &str, base_dir: &Path) -> Result<Vec<StyleManifestEntry>> {
    let entries = content_lines(text)
        .map(|(line, l)| {
            let f = fields(l);
            if f.len() != 4 {
                return Err(Error::format(format!("line {line}: expected 4 style fields, got {}", f.len())));
            }
            let opt = |s: &str| (s != "-").then(|| resolve(base_dir, s));
            Ok(StyleManifestEntry { id: f[0].to_string(), image: resolve(base_dir, f[1]), local: opt(f[2]), global: opt(f[3]) })
        })
        .collect::<Result<Vec<_>>>()?;
    if entries.is_empty() {
        return Err(Error::format("style manifest lists no styles"));
    }
    Ok(entries)
}

/// Loads a style manifest, using FMAP files where given and toy features of
/// the style image otherwise.
pub fn load_style_set(path: &Path, extractor: &ToyExtractor) -> Result<StyleSet> {
    let text = fs::read_to_string(path)?;
    let entries = parse_style_manifest(&text, path.parent().unwrap_or(Path::new(".")))?;
    let mut loaded = Vec::with_capacity(entries.len());
    for e in entries {
        let image = if e.local.is_none() || e.global.is_none() { Some(Image::load_rgb(&e.image)?) } else { None };
        let get = |p: &Option<PathBuf>, kind| match p {
            Some(p) => load_feature_map(p),
            None => Ok(extractor.extract(image.as_ref().expect("image loaded when a map is missing"), kind)),
        };
        let local = get(&e.local, ToyKind::Local)?;
        let global = get(&e.global, ToyKind::Global)?;
        loaded.push((e.id, local, global));
    }
    StyleSet::new(loaded)
}
