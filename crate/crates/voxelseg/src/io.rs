//! On-disk formats: model checkpoints, raw float images, per-pixel feature
//! maps, and 8-bit PNG images/label maps. All binary payloads are
//! little-endian f32 behind a magic string and a JSON header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::grid::VoxelField;
use crate::model::SceneModel;
use crate::scalar::Scalar;
use crate::types::LabelMap;

const CKPT_MAGIC: &[u8; 8] = b"RFPCKPT1";
const IMG_MAGIC: &[u8; 8] = b"RFPIMGF1";
const FEAT_MAGIC: &[u8; 8] = b"RFPFEAT1";

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    k: usize,
    sh_degree: usize,
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    arrays: Vec<CkptArray>,
}

#[derive(Serialize, Deserialize)]
struct CkptArray {
    name: String,
    resolution: [usize; 3],
    channels: usize,
}

fn open_read(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn open_write(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_f32s<S: Scalar>(w: &mut impl Write, values: &[S], path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v.to64() as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_f32s<S: Scalar>(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<S>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn write_header(w: &mut impl Write, magic: &[u8; 8], header: &impl Serialize, path: &Path) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic).map_err(|e| Error::io(path, e))?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&json).map_err(|e| Error::io(path, e))
}

fn read_header<H: for<'de> Deserialize<'de>>(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<H> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(|e| Error::io(path, e))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("{}: header length {len} implausibly large", path.display())));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&json)?)
}

pub fn save_checkpoint<S: Scalar>(model: &SceneModel<S>, path: &Path) -> Result<()> {
    let mut arrays = vec![
        CkptArray { name: "density".into(), resolution: model.density.res(), channels: 1 },
        CkptArray {
            name: "semantics".into(),
            resolution: model.semantics.res(),
            channels: model.num_labels(),
        },
    ];
    for (k, c) in model.colors.iter().enumerate() {
        arrays.push(CkptArray { name: format!("color_{k}"), resolution: c.res(), channels: c.channels() });
    }
    let header = CkptHeader {
        k: model.k,
        sh_degree: model.sh_degree,
        bounds_min: model.bounds.min.to_f64(),
        bounds_max: model.bounds.max.to_f64(),
        arrays,
    };
    let mut w = open_write(path)?;
    write_header(&mut w, CKPT_MAGIC, &header, path)?;
    write_f32s(&mut w, &model.density.values, path)?;
    write_f32s(&mut w, &model.semantics.values, path)?;
    for c in &model.colors {
        write_f32s(&mut w, &c.values, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<SceneModel<S>> {
    let mut r = open_read(path)?;
    let header: CkptHeader = read_header(&mut r, CKPT_MAGIC, path)?;
    if header.k < 1 {
        return Err(Error::Format(format!("{}: checkpoint has k = 0", path.display())));
    }
    let expected: Vec<String> = std::iter::once("density".to_string())
        .chain(std::iter::once("semantics".to_string()))
        .chain((0..=header.k).map(|k| format!("color_{k}")))
        .collect();
    let got: Vec<&str> = header.arrays.iter().map(|a| a.name.as_str()).collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format(format!("{}: array list {got:?} does not match layer count {}", path.display(), header.k)));
    }
    let bounds = Aabb::new(Vec3::from_f64(header.bounds_min), Vec3::from_f64(header.bounds_max));
    let sh_degree = header.sh_degree;
    let b = crate::sh::basis_count(sh_degree);
    let mut fields: Vec<VoxelField<S>> = Vec::with_capacity(header.arrays.len());
    for (i, a) in header.arrays.iter().enumerate() {
        let expect_ch = match i {
            0 => 1,
            1 => header.k + 1,
            _ => 3 * b,
        };
        if a.channels != expect_ch {
            return Err(Error::Format(format!(
                "{}: array {} has {} channels, expected {expect_ch}",
                path.display(),
                a.name,
                a.channels
            )));
        }
        let mut f = VoxelField::new(a.resolution, a.channels, bounds, S::zero())?;
        f.values = read_f32s(&mut r, f.len(), path)?;
        fields.push(f);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes after arrays", path.display())));
    }
    let mut it = fields.into_iter();
    let density = it.next().unwrap();
    let semantics = it.next().unwrap();
    let colors: Vec<_> = it.collect();
    Ok(SceneModel { k: header.k, sh_degree, bounds, density, semantics, colors })
}

/// Row-major, channel-interleaved float image.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ImgHeader {
    width: usize,
    height: usize,
    channels: usize,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.channels;
        &self.data[i..i + self.channels]
    }
    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let i = (v * self.width + u) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

pub fn save_float_image(img: &FloatImage, path: &Path) -> Result<()> {
    let mut w = open_write(path)?;
    let header = ImgHeader { width: img.width, height: img.height, channels: img.channels };
    write_header(&mut w, IMG_MAGIC, &header, path)?;
    write_f32s(&mut w, &img.data, path)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_float_image(path: &Path) -> Result<FloatImage> {
    let mut r = open_read(path)?;
    let h: ImgHeader = read_header(&mut r, IMG_MAGIC, path)?;
    let data = read_f32s::<f32>(&mut r, h.width * h.height * h.channels, path)?;
    Ok(FloatImage { width: h.width, height: h.height, channels: h.channels, data })
}

/// Per-pixel feature vectors used by the bootstrap segmenter and the EM
/// refiner; laid out like a FloatImage with d_v channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub d_v: usize,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct FeatHeader {
    width: usize,
    height: usize,
    d_v: usize,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, d_v: usize) -> Self {
        Self { width, height, d_v, data: vec![0.0; width * height * d_v] }
    }
    pub fn at(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.d_v;
        &self.data[i..i + self.d_v]
    }
    pub fn at_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let i = (v * self.width + u) * self.d_v;
        &mut self.data[i..i + self.d_v]
    }
    pub fn at_index(&self, i: usize) -> &[f32] {
        &self.data[i * self.d_v..(i + 1) * self.d_v]
    }
    pub fn len(&self) -> usize {
        self.width * self.height
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn save_features(f: &FeatureMap, path: &Path) -> Result<()> {
    let mut w = open_write(path)?;
    let header = FeatHeader { width: f.width, height: f.height, d_v: f.d_v };
    write_header(&mut w, FEAT_MAGIC, &header, path)?;
    write_f32s(&mut w, &f.data, path)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<FeatureMap> {
    let mut r = open_read(path)?;
    let h: FeatHeader = read_header(&mut r, FEAT_MAGIC, path)?;
    let data = read_f32s::<f32>(&mut r, h.width * h.height * h.d_v, path)?;
    Ok(FeatureMap { width: h.width, height: h.height, d_v: h.d_v, data })
}

/// RGB float image in [0, 1] -> 8-bit PNG, clamping out-of-range values.
pub fn save_rgb_png(img: &FloatImage, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Invalid(format!("expected 3 channels for an RGB png, got {}", img.channels)));
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("pixel buffer length matches dimensions");
    buf.save(path)?;
    Ok(())
}

pub fn load_rgb_png(path: &Path) -> Result<FloatImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Ok(FloatImage { width: w, height: h, channels: 3, data })
}

/// Label maps as 8-bit grayscale PNGs; pixel value is the label index, 255
/// means unlabeled.
pub fn save_label_png(labels: &LabelMap, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(labels.width as u32, labels.height as u32, labels.data.clone())
        .expect("label buffer length matches dimensions");
    buf.save(path)?;
    Ok(())
}

pub fn load_label_png(path: &Path) -> Result<LabelMap> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(LabelMap { width: w, height: h, data: img.into_raw() })
}

/// JSON has no literal for infinity, so fields that may legitimately hold it
/// (EM weight, PSNR of an exact match) write the string `"inf"` instead of
/// the `null` the serializer would otherwise emit.
pub mod json_inf {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(v) => Ok(v),
            NumOrStr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            NumOrStr::Str(s) => Err(D::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}
