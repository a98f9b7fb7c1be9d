//! On-disk multi-view datasets. A dataset directory holds
//! `transforms_train.json` / `transforms_test.json` (camera_angle_x in
//! radians plus per-frame row-major 4x4 camera-to-world matrices), an
//! `images/` directory, and optionally `masks/` with 8-bit instance labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, PoseMatrix};
use crate::error::{Error, Result};
use crate::io::{load_label_png, load_rgb_png, save_label_png, save_rgb_png, FloatImage};
use crate::types::LabelMap;

#[derive(Debug, Clone)]
pub struct View {
    /// Frame stem, e.g. "r_003"; file paths derive from it.
    pub name: String,
    pub camera: Camera<f64>,
    pub image: FloatImage,
    pub mask: Option<LabelMap>,
}

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub camera_angle_x: f64,
    pub train: Vec<View>,
    pub test: Vec<View>,
}

#[derive(Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

impl SceneDataset {
    pub fn width(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |v| v.image.width)
    }
    pub fn height(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |v| v.image.height)
    }
    pub fn all_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().chain(self.test.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Dataset("dataset has no training views".into()));
        }
        let (w, h) = (self.width(), self.height());
        for v in self.all_views() {
            if v.image.width != w || v.image.height != h {
                return Err(Error::Dataset(format!(
                    "view {} is {}x{}, expected {w}x{h}",
                    v.name, v.image.width, v.image.height
                )));
            }
            if v.image.channels != 3 {
                return Err(Error::Dataset(format!("view {} is not RGB", v.name)));
            }
            if let Some(m) = &v.mask {
                if m.width != w || m.height != h {
                    return Err(Error::Dataset(format!("mask for {} has wrong resolution", v.name)));
                }
            }
            v.camera.validate()?;
        }
        Ok(())
    }
}

fn transforms(views: &[View], camera_angle_x: f64) -> TransformsFile {
    TransformsFile {
        camera_angle_x,
        frames: views
            .iter()
            .map(|v| Frame {
                file_path: format!("images/{}.png", v.name),
                transform_matrix: v.camera.pose_matrix().0,
            })
            .collect(),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(ds: &SceneDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ds.validate()?;
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir.join("images"), e))?;
    let any_masks = ds.all_views().any(|v| v.mask.is_some());
    if any_masks {
        std::fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir.join("masks"), e))?;
    }
    for v in ds.all_views() {
        save_rgb_png(&v.image, &dir.join("images").join(format!("{}.png", v.name)))?;
        if let Some(m) = &v.mask {
            save_label_png(m, &dir.join("masks").join(format!("{}.png", v.name)))?;
        }
    }
    write_json(&dir.join("transforms_train.json"), &transforms(&ds.train, ds.camera_angle_x))?;
    write_json(&dir.join("transforms_test.json"), &transforms(&ds.test, ds.camera_angle_x))
}

/// Resolves a frame's image path: relative to the dataset root, with ".png"
/// appended when the stored path has no extension.
fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let rel = file_path.trim_start_matches("./");
    let mut p = dir.join(rel);
    if p.extension().is_none() {
        p.set_extension("png");
    }
    p
}

fn load_split(dir: &Path, which: &str, required: bool) -> Result<Option<(f64, Vec<View>)>> {
    let tpath = dir.join(format!("transforms_{which}.json"));
    if !tpath.exists() {
        if required {
            return Err(Error::Dataset(format!("missing {}", tpath.display())));
        }
        return Ok(None);
    }
    let text = std::fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let tf: TransformsFile = serde_json::from_str(&text)?;
    let mut views = Vec::with_capacity(tf.frames.len());
    for frame in &tf.frames {
        let ipath = image_path(dir, &frame.file_path);
        if !ipath.exists() {
            return Err(Error::Dataset(format!("missing image {}", ipath.display())));
        }
        let image = load_rgb_png(&ipath)?;
        let name = ipath.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let camera = Camera::from_pose_matrix(
            image.width,
            image.height,
            tf.camera_angle_x,
            &PoseMatrix(frame.transform_matrix),
        )?;
        let mpath = dir.join("masks").join(format!("{name}.png"));
        let mask = if mpath.exists() { Some(load_label_png(&mpath)?) } else { None };
        views.push(View { name, camera, image, mask });
    }
    Ok(Some((tf.camera_angle_x, views)))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SceneDataset> {
    let dir = dir.as_ref();
    let (camera_angle_x, train) = load_split(dir, "train", true)?.expect("required split");
    let test = match load_split(dir, "test", false)? {
        Some((ax, views)) => {
            if (ax - camera_angle_x).abs() > 1e-12 {
                return Err(Error::Dataset("train and test splits disagree on camera_angle_x".into()));
            }
            views
        }
        None => Vec::new(),
    };
    let ds = SceneDataset { camera_angle_x, train, test };
    ds.validate()?;
    Ok(ds)
}
