//! Per-pixel feature vectors for bootstrap clustering and EM refinement.
//!
//! The builtin extractor is handcrafted: RGB, Gaussian-blurred RGB, local
//! 5x5 standard deviation per channel, and normalized pixel coordinates
//! scaled by a spatial weight — 11 channels total. Externally computed
//! feature maps (e.g. from a learned extractor) can be loaded from file
//! instead and used anywhere a builtin map is.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{load_features, FeatureMap, FloatImage};

/// Channels produced by the builtin extractor: 3 RGB + 3 blurred RGB +
/// 3 local stddev + 2 coordinates.
pub const BUILTIN_DV: usize = 11;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FeatureOpts {
    /// Scale applied to the normalized (x, y) coordinate channels.
    pub spatial_weight: f32,
    /// Standard deviation of the Gaussian blur, in pixels.
    pub blur_sigma: f32,
}

impl Default for FeatureOpts {
    fn default() -> Self {
        FeatureOpts { spatial_weight: 0.3, blur_sigma: 2.0 }
    }
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel truncated at
/// three sigma and renormalized.
fn gaussian_blur(image: &FloatImage, sigma: f32) -> FloatImage {
    let (w, h, c) = (image.width, image.height, image.channels);
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / s2).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let mut horiz = FloatImage::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (ki, k) in kernel.iter().enumerate() {
                    let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += k * image.pixel(sx, y)[ch] as f64;
                }
                horiz.pixel_mut(x, y)[ch] = acc as f32;
            }
        }
    }
    let mut out = FloatImage::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (ki, k) in kernel.iter().enumerate() {
                    let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += k * horiz.pixel(x, sy)[ch] as f64;
                }
                out.pixel_mut(x, y)[ch] = acc as f32;
            }
        }
    }
    out
}

/// Builtin feature extractor. Input must be a 3-channel image.
pub fn extract_features(image: &FloatImage, opts: FeatureOpts) -> Result<FeatureMap> {
    if image.channels != 3 {
        return Err(Error::Invalid(format!(
            "feature extraction requires a 3-channel image, got {}",
            image.channels
        )));
    }
    let (w, h) = (image.width, image.height);
    let blurred = gaussian_blur(image, opts.blur_sigma);
    let mut out = FeatureMap::new(w, h, BUILTIN_DV);

    let denom_x = (w.max(2) - 1) as f32;
    let denom_y = (h.max(2) - 1) as f32;
    for y in 0..h {
        for x in 0..w {
            let f = out.at_mut(x, y);
            let rgb = image.pixel(x, y);
            f[..3].copy_from_slice(rgb);
            f[3..6].copy_from_slice(blurred.pixel(x, y));
            // 5x5 local standard deviation per channel, clamp-to-edge.
            for ch in 0..3 {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let v = image.pixel(sx, sy)[ch] as f64;
                        s += v;
                        s2 += v * v;
                    }
                }
                let n = 25.0;
                let var = (s2 / n - (s / n) * (s / n)).max(0.0);
                f[6 + ch] = var.sqrt() as f32;
            }
            f[9] = opts.spatial_weight * (x as f32 / denom_x);
            f[10] = opts.spatial_weight * (y as f32 / denom_y);
        }
    }
    Ok(out)
}

/// Loads an externally computed feature map and checks it against the
/// expected image resolution.
pub fn load_external_features(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<FeatureMap> {
    let map = load_features(path.as_ref())?;
    if map.width != width || map.height != height {
        return Err(Error::Format(format!(
            "feature map is {}x{} but the image is {}x{}",
            map.width, map.height, width, height
        )));
    }
    Ok(map)
}
