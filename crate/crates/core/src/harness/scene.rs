//! Scene records: a TOML manifest beside little-endian `f32` blobs.

use std::fs;
use std::path::{Path, PathBuf};

use cvcp_numerics::Tensor;
use serde::{Deserialize, Serialize};

use crate::camgeo::{Camera, CameraIntrinsics, CameraPose, CameraRig};
use crate::error::{Error, Result};
use crate::head::boxes::Box3D;
use crate::pillars::PointCloud;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "scene.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub rig: CameraRig,
    /// One `[3×H×W]` image per camera.
    pub images: Vec<Tensor<f32>>,
    pub cloud: PointCloud,
    pub boxes: Vec<Box3D>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Blob {
    file: String,
    bytes: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    width: usize,
    height: usize,
    image: Blob,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    id: String,
    points: Blob,
    cameras: Vec<CameraEntry>,
    #[serde(default)]
    boxes: Vec<Box3D>,
}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_blob(dir: &Path, name: &str, expected: u64) -> Result<Vec<u8>> {
    if name.contains('/') || name.contains('\\') || name == ".." {
        return Err(Error::parse(dir.join(MANIFEST), 0, format!("blob name {name:?} must be a sibling file")));
    }
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::parse(&path, 0, format!("blob holds {} bytes, manifest declares {expected}", bytes.len())));
    }
    Ok(bytes)
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
        Error::parse(path, line, e.message().to_string())
    })
}

impl SceneRecord {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if self.images.len() != self.rig.len() {
            return Err(Error::Geometry(format!("{} images for {} cameras", self.images.len(), self.rig.len())));
        }
        for (i, (im, cam)) in self.images.iter().zip(&self.rig.cameras).enumerate() {
            if im.shape() != [3, cam.height, cam.width] {
                return Err(Error::Geometry(format!("image {i} has shape {:?}, camera is {}×{}", im.shape(), cam.height, cam.width)));
            }
        }
        self.cloud.validate()?;
        for b in &self.boxes {
            b.validate()?;
        }
        Ok(())
    }

    /// Writes `dir/scene.toml`, `dir/points.bin` and `dir/camN.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let points: Vec<f32> = self.cloud.points.iter().flatten().copied().collect();
        let point_bytes = f32_bytes(&points);
        write_file(&dir.join("points.bin"), &point_bytes)?;
        let mut cameras = Vec::new();
        for (i, (cam, im)) in self.rig.cameras.iter().zip(&self.images).enumerate() {
            let name = format!("cam{i}.bin");
            let bytes = f32_bytes(im.data());
            write_file(&dir.join(&name), &bytes)?;
            cameras.push(CameraEntry {
                intrinsics: cam.intrinsics,
                pose: cam.pose,
                width: cam.width,
                height: cam.height,
                image: Blob { file: name, bytes: bytes.len() as u64 },
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            id: self.id.clone(),
            points: Blob { file: "points.bin".into(), bytes: point_bytes.len() as u64 },
            cameras,
            boxes: self.boxes.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Usage(format!("cannot serialize scene: {e}")))?;
        write_file(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Loads from a scene directory or its manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, manifest_path) = if path.is_dir() { (path.to_path_buf(), path.join(MANIFEST)) } else { (parent(path), path.to_path_buf()) };
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest = parse_toml(&text, &manifest_path)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::parse(&manifest_path, 1, format!("unsupported format_version {}", m.format_version)));
        }
        let raw = f32_from_bytes(&read_blob(&dir, &m.points.file, m.points.bytes)?);
        if !raw.len().is_multiple_of(4) {
            return Err(Error::parse(dir.join(&m.points.file), 0, "point blob is not a whole number of 4-float records"));
        }
        let cloud = PointCloud { points: raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect() };
        let mut cams = Vec::new();
        let mut images = Vec::new();
        for c in m.cameras {
            let data = f32_from_bytes(&read_blob(&dir, &c.image.file, c.image.bytes)?);
            let image = Tensor::new([3, c.height, c.width], data)
                .map_err(|e| Error::parse(dir.join(&c.image.file), 0, e.to_string()))?;
            images.push(image);
            cams.push(Camera { intrinsics: c.intrinsics, pose: c.pose, width: c.width, height: c.height });
        }
        let scene = SceneRecord { id: m.id, rig: CameraRig { cameras: cams }, images, cloud, boxes: m.boxes };
        scene.validate()?;
        Ok(scene)
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

/// Scene directories (those holding a manifest) directly under `dir`, sorted by name.
pub fn list_scenes(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() && p.join(MANIFEST).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// A single scene (directory or manifest) or every scene of a dataset directory.
pub fn load_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    if path.is_file() || path.join(MANIFEST).is_file() {
        return Ok(vec![SceneRecord::load(path)?]);
    }
    let dirs = list_scenes(path)?;
    if dirs.is_empty() {
        return Err(Error::Usage(format!("no scenes found under {}", path.display())));
    }
    dirs.iter().map(|d| SceneRecord::load(d)).collect()
}
