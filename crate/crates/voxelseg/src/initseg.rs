//! Label-free bootstrap segmentation: per-view feature extraction, a joint
//! two-class foreground/background split, and a K-way partition of the
//! foreground. Clustering always runs on pixels pooled across every view with
//! one shared set of centroids, so a cluster index means the same thing in
//! every view — per-view clustering would hand the training loss
//! self-contradictory labels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureOpts};
use crate::io::{FeatureMap, FloatImage};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::types::LabelMap;

#[derive(Debug)]
pub struct FgBgSplit {
    /// Per-view masks: 1 = foreground, 0 = background.
    pub masks: Vec<LabelMap>,
    /// True when one cluster came back empty; masks are then all background.
    pub degenerate: bool,
}

#[derive(Debug)]
pub struct ForegroundPartition {
    /// Per-view labels: 0 = background, 1..=effective_k = objects.
    pub labels: Vec<LabelMap>,
    pub effective_k: usize,
}

#[derive(Debug)]
pub struct Bootstrap {
    pub labels: Vec<LabelMap>,
    pub features: Vec<FeatureMap>,
    pub effective_k: usize,
    pub degenerate: bool,
}

fn check_views(features: &[FeatureMap]) -> Result<usize> {
    let dv = match features.first() {
        Some(f) => f.d_v,
        None => return Err(Error::Invalid("no views to segment".into())),
    };
    if features.iter().any(|f| f.d_v != dv) {
        return Err(Error::Invalid("views disagree on feature dimension".into()));
    }
    Ok(dv)
}

/// Two-class clustering of all pixels pooled across views. The cluster whose
/// members include the lower fraction of image-border pixels is declared
/// foreground; ties go to the smaller cluster, then to cluster 0.
pub fn split_fg_bg(features: &[FeatureMap], seed: u64) -> Result<FgBgSplit> {
    let dv = check_views(features)?;
    let mut pooled = Vec::new();
    for f in features {
        pooled.extend_from_slice(&f.data);
    }
    let km = kmeans(&pooled, dv, 2, seed);

    if km.counts[0] == 0 || km.counts[1] == 0 {
        log::warn!("foreground/background split degenerate (one cluster empty); marking everything background");
        let masks = features.iter().map(|f| LabelMap::new(f.width, f.height, 0)).collect();
        return Ok(FgBgSplit { masks, degenerate: true });
    }

    let mut border = [0usize; 2];
    let mut idx = 0;
    for f in features {
        for y in 0..f.height {
            for x in 0..f.width {
                let c = km.assignment[idx] as usize;
                if x == 0 || y == 0 || x == f.width - 1 || y == f.height - 1 {
                    border[c] += 1;
                }
                idx += 1;
            }
        }
    }
    let frac = [border[0] as f64 / km.counts[0] as f64, border[1] as f64 / km.counts[1] as f64];
    let fg = if frac[0] < frac[1] {
        0
    } else if frac[1] < frac[0] {
        1
    } else if km.counts[0] != km.counts[1] {
        usize::from(km.counts[1] < km.counts[0])
    } else {
        0
    };

    let mut masks = Vec::with_capacity(features.len());
    let mut idx = 0;
    for f in features {
        let mut m = LabelMap::new(f.width, f.height, 0);
        for y in 0..f.height {
            for x in 0..f.width {
                if km.assignment[idx] as usize == fg {
                    m.set(x, y, 1);
                }
                idx += 1;
            }
        }
        masks.push(m);
    }
    Ok(FgBgSplit { masks, degenerate: false })
}

/// K-means over foreground pixels pooled across views; cluster c becomes
/// label c+1, background stays 0. K = 1 copies the masks through. Fewer
/// distinct foreground vectors than K reduces the effective K.
pub fn partition_foreground(
    features: &[FeatureMap],
    fg: &[LabelMap],
    k: usize,
    seed: u64,
) -> Result<ForegroundPartition> {
    let dv = check_views(features)?;
    if k == 0 {
        return Err(Error::Invalid("foreground partition needs k >= 1".into()));
    }
    if k > 254 {
        return Err(Error::Invalid("labels are 8-bit; k must be <= 254".into()));
    }
    if fg.len() != features.len() {
        return Err(Error::Invalid("foreground masks and feature maps disagree on view count".into()));
    }
    for (f, m) in features.iter().zip(fg) {
        if f.width != m.width || f.height != m.height {
            return Err(Error::Invalid("foreground mask resolution mismatch".into()));
        }
    }
    if k == 1 {
        return Ok(ForegroundPartition { labels: fg.to_vec(), effective_k: 1 });
    }

    let mut pooled = Vec::new();
    for (f, m) in features.iter().zip(fg) {
        for y in 0..f.height {
            for x in 0..f.width {
                if m.get(x, y) == 1 {
                    pooled.extend_from_slice(f.at(x, y));
                }
            }
        }
    }
    if pooled.is_empty() {
        log::warn!("no foreground pixels to partition; labels are all background");
        let labels = fg.iter().map(|m| LabelMap::new(m.width, m.height, 0)).collect();
        return Ok(ForegroundPartition { labels, effective_k: 0 });
    }

    let mut distinct: Vec<Vec<u32>> =
        pooled.chunks_exact(dv).map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut k_eff = k;
    if distinct.len() < k {
        k_eff = distinct.len();
        log::warn!(
            "only {} distinct foreground feature vectors; reducing k from {k} to {k_eff}",
            distinct.len()
        );
    }

    let km = kmeans(&pooled, dv, k_eff, seed);
    let mut labels = Vec::with_capacity(features.len());
    for (f, m) in features.iter().zip(fg) {
        let mut out = LabelMap::new(f.width, f.height, 0);
        for y in 0..f.height {
            for x in 0..f.width {
                if m.get(x, y) == 1 {
                    let c = nearest_centroid(&km.centroids, dv, f.at(x, y));
                    out.set(x, y, (c + 1) as u8);
                }
            }
        }
        labels.push(out);
    }
    Ok(ForegroundPartition { labels, effective_k: k_eff })
}

/// Full bootstrap: builtin features per view, joint fg/bg split, K-way
/// foreground partition. The partition reuses the split's seed offset by one
/// so the two stages stay independently reproducible.
pub fn bootstrap_labels(
    images: &[FloatImage],
    k: usize,
    opts: FeatureOpts,
    seed: u64,
) -> Result<Bootstrap> {
    let features: Vec<FeatureMap> = images
        .par_iter()
        .map(|img| extract_features(img, opts))
        .collect::<Result<_>>()?;
    bootstrap_from_features(features, k, seed)
}

/// Bootstrap over precomputed (possibly external) feature maps.
pub fn bootstrap_from_features(features: Vec<FeatureMap>, k: usize, seed: u64) -> Result<Bootstrap> {
    let split = split_fg_bg(&features, seed)?;
    let part = partition_foreground(&features, &split.masks, k, seed.wrapping_add(1))?;
    Ok(Bootstrap {
        labels: part.labels,
        features,
        effective_k: part.effective_k,
        degenerate: split.degenerate,
    })
}
