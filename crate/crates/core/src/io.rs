//! File formats: PFM / PNG images and the structured text schemas
//! (scene description, pose files) shared by the CLI and the dataset tools.
//!
//! All structured text files are TOML with a `version` field. Linear images
//! go to 32-bit float PFM (little-endian, bottom-up rows, scale -1.0);
//! display-encoded images go to 8-bit PNG.

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::image::{LinearImage, SrgbImage};
use crate::scene::{Primitive, Scene, Shape};
use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// PFM

/// Write a color PFM ( `PF`, little-endian, rows bottom-to-top).
pub fn write_pfm(path: &Path, img: &LinearImage) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "PF\n{} {}\n-1.0\n", img.width(), img.height())?;
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            let p = img.get(x, y);
            for c in 0..3 {
                w.write_all(&(p[c] as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<LinearImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::format(path, m);

    // Header: three whitespace-terminated tokens.
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| bad("non-utf8 header"))?
            .to_string();
        pos += 1; // consume the single whitespace terminator
        Ok(tok)
    };
    let magic = token(&bytes)?;
    if magic != "PF" {
        return Err(bad(&format!("unsupported PFM magic {magic:?}")));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token(&bytes)?.parse().map_err(|_| bad("bad scale"))?;
    if scale >= 0.0 {
        return Err(bad("big-endian PFM not supported"));
    }
    let need = width * height * 3 * 4;
    if bytes.len() - pos < need {
        return Err(bad("truncated pixel data"));
    }
    let data = &bytes[pos..pos + need];
    let mut img = LinearImage::new(width, height);
    let mut i = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut p = [0.0f64; 3];
            for c in 0..3 {
                let b = [data[i], data[i + 1], data[i + 2], data[i + 3]];
                p[c] = f32::from_le_bytes(b) as f64;
                i += 4;
            }
            img.set(x, y, p);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// PNG

pub fn write_png(path: &Path, img: &SrgbImage) -> Result<()> {
    let mut buf = ::image::RgbImage::new(img.width() as u32, img.height() as u32);
    for y in 0..img.height() {
        for x in 0..img.width() {
            buf.put_pixel(x as u32, y as u32, ::image::Rgb(img.get(x, y)));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<SrgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = ::image::open(path)?.to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut img = SrgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, buf.get_pixel(x as u32, y as u32).0);
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Pose records

/// Compact rigid-pose record (unit quaternion wxyz + translation).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Pose {
        let q = nalgebra::Quaternion::new(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        );
        Pose::new(
            nalgebra::UnitQuaternion::from_quaternion(q),
            Vector3::from(self.translation),
        )
    }
}

/// Per-view pose file entry: 4×4 row-major camera-to-world matrix plus
/// intrinsics, as consumed by `render` and produced by dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewPoseRecord {
    pub view_id: u32,
    /// Row-major camera-to-world matrix, 16 values.
    pub matrix: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    pub version: u32,
    pub views: Vec<ViewPoseRecord>,
}

pub const POSE_FILE_VERSION: u32 = 1;

impl PoseFile {
    pub fn from_views(views: &[(u32, Pose, Camera)]) -> PoseFile {
        PoseFile {
            version: POSE_FILE_VERSION,
            views: views
                .iter()
                .map(|(id, pose, cam)| ViewPoseRecord {
                    view_id: *id,
                    matrix: pose.to_matrix().transpose().as_slice().to_vec(),
                    fx: cam.fx,
                    fy: cam.fy,
                    cx: cam.cx,
                    cy: cam.cy,
                    width: cam.width,
                    height: cam.height,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self)
    }

    pub fn load(path: &Path) -> Result<PoseFile> {
        let file: PoseFile = read_toml(path)?;
        if file.version != POSE_FILE_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported pose file version {}", file.version),
            ));
        }
        Ok(file)
    }

    /// Decode one record into (view_id, Pose, Camera).
    pub fn decode(record: &ViewPoseRecord) -> Result<(u32, Pose, Camera)> {
        if record.matrix.len() != 16 {
            return Err(Error::InvalidInput(format!(
                "view {}: matrix must have 16 entries",
                record.view_id
            )));
        }
        // Row-major on disk; nalgebra fills column-major.
        let m = Matrix4::from_row_slice(&record.matrix);
        let pose = Pose::from_matrix(&m)?;
        let cam = Camera::new(
            record.fx,
            record.fy,
            record.cx,
            record.cy,
            record.width,
            record.height,
        )?;
        Ok((record.view_id, pose, cam))
    }
}

// ---------------------------------------------------------------------------
// Scene description file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    pub albedo: [f64; 3],
    #[serde(default)]
    pub emission: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub background: [f64; 3],
    pub light_direction: [f64; 3],
    pub primitives: Vec<PrimitiveRecord>,
}

pub const SCENE_FILE_VERSION: u32 = 1;

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> SceneFile {
        let primitives = scene
            .primitives
            .iter()
            .map(|p| {
                let mut rec = PrimitiveRecord {
                    kind: String::new(),
                    center: None,
                    radius: None,
                    min: None,
                    max: None,
                    point: None,
                    normal: None,
                    albedo: [p.albedo.x, p.albedo.y, p.albedo.z],
                    emission: [p.emission.x, p.emission.y, p.emission.z],
                };
                match &p.shape {
                    Shape::Sphere { center, radius } => {
                        rec.kind = "sphere".into();
                        rec.center = Some([center.x, center.y, center.z]);
                        rec.radius = Some(*radius);
                    }
                    Shape::Box { min, max } => {
                        rec.kind = "box".into();
                        rec.min = Some([min.x, min.y, min.z]);
                        rec.max = Some([max.x, max.y, max.z]);
                    }
                    Shape::Plane { point, normal } => {
                        rec.kind = "plane".into();
                        rec.point = Some([point.x, point.y, point.z]);
                        rec.normal = Some([normal.x, normal.y, normal.z]);
                    }
                }
                rec
            })
            .collect();
        SceneFile {
            version: SCENE_FILE_VERSION,
            background: [
                scene.background.x,
                scene.background.y,
                scene.background.z,
            ],
            light_direction: [
                scene.light_direction.x,
                scene.light_direction.y,
                scene.light_direction.z,
            ],
            primitives,
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        let mut prims = Vec::with_capacity(self.primitives.len());
        for (i, rec) in self.primitives.iter().enumerate() {
            let missing =
                |f: &str| Error::InvalidInput(format!("primitive {i} ({}): missing {f}", rec.kind));
            let shape = match rec.kind.as_str() {
                "sphere" => Shape::Sphere {
                    center: Vector3::from(rec.center.ok_or_else(|| missing("center"))?),
                    radius: rec.radius.ok_or_else(|| missing("radius"))?,
                },
                "box" => Shape::Box {
                    min: Vector3::from(rec.min.ok_or_else(|| missing("min"))?),
                    max: Vector3::from(rec.max.ok_or_else(|| missing("max"))?),
                },
                "plane" => Shape::Plane {
                    point: Vector3::from(rec.point.ok_or_else(|| missing("point"))?),
                    normal: Vector3::from(rec.normal.ok_or_else(|| missing("normal"))?),
                },
                other => {
                    return Err(Error::InvalidInput(format!(
                        "primitive {i}: unknown kind {other:?}"
                    )))
                }
            };
            prims.push(Primitive {
                shape,
                albedo: Vector3::from(rec.albedo),
                emission: Vector3::from(rec.emission),
            });
        }
        Scene::new(
            prims,
            Vector3::from(self.background),
            Vector3::from(self.light_direction),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_toml(path, self)
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let file: SceneFile = read_toml(path)?;
        if file.version != SCENE_FILE_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported scene file version {}", file.version),
            ));
        }
        file.to_scene()
    }
}

// ---------------------------------------------------------------------------
// TOML helpers

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Digests (reproducibility checks)

/// FNV-1a over a byte slice; used for config fingerprints in checkpoints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `dir_digest` for directories, content hash for single files.
pub fn dir_digest_or_file(path: &Path) -> Result<u64> {
    if path.is_dir() {
        dir_digest(path)
    } else if path.is_file() {
        Ok(fnv1a(&fs::read(path)?))
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Digest of an entire directory tree (relative paths + file contents).
/// Two trees with equal digests are byte-identical for our purposes.
pub fn dir_digest(dir: &Path) -> Result<u64> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<(String, u64)>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() {
                walk(&path, root, acc)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/");
                let bytes = fs::read(&path)?;
                acc.push((rel, fnv1a(&bytes)));
            }
        }
        Ok(())
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc)?;
    let mut combined = Vec::new();
    for (rel, h) in acc {
        combined.extend_from_slice(rel.as_bytes());
        combined.push(0);
        combined.extend_from_slice(&h.to_le_bytes());
    }
    Ok(fnv1a(&combined))
}
