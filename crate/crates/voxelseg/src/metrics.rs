//! Evaluation metrics: pixel accuracy and mean IoU with optimal matching of
//! unsupervised instance labels to ground truth, plus PSNR and SSIM for
//! rendered images. All views are pooled into one confusion matrix before
//! matching, so a label means the same thing in every view.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::FloatImage;
use crate::types::{LabelMap, UNLABELED};

#[derive(Debug, Clone, serde::Serialize)]
pub struct SegMetrics {
    pub acc: f64,
    pub miou: f64,
    /// IoU per class after matching, keyed by ground-truth label (unmatched
    /// predicted classes appear under their own predicted label).
    pub per_class_iou: Vec<(u8, f64)>,
    /// Chosen assignment, predicted foreground label -> gt foreground label.
    pub matching: Vec<(u8, u8)>,
}

/// Pooled confusion counts; rows are predicted labels, columns ground truth.
/// Pixels whose ground truth is unlabeled are skipped entirely.
fn confusion(pred: &[LabelMap], gt: &[LabelMap]) -> Result<BTreeMap<(u8, u8), u64>> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Invalid("prediction and ground truth view counts differ".into()));
    }
    let mut counts = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        if p.width != g.width || p.height != g.height {
            return Err(Error::Invalid("prediction and ground truth resolutions differ".into()));
        }
        for (pl, gl) in p.data.iter().zip(&g.data) {
            if *gl == UNLABELED {
                continue;
            }
            *counts.entry((*pl, *gl)).or_insert(0u64) += 1;
        }
    }
    Ok(counts)
}

fn iou(inter: u64, row: u64, col: u64) -> f64 {
    let union = row + col - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Best assignment of predicted foreground classes to ground-truth
/// foreground classes: maximizes total IoU, then the number of matched
/// pairs; remaining ties resolve toward the lowest ground-truth index in
/// predicted-label order. Bitmask DP over the ground-truth side.
fn best_matching(preds: &[u8], gts: &[u8], iou_table: &[Vec<f64>]) -> Vec<Option<usize>> {
    let m = preds.len();
    let n = gts.len();
    let full = 1usize << n;
    // value[(i, mask)] = best (total IoU, matched count) for preds i.. with
    // gt set `mask` already taken.
    let mut value = vec![(0.0f64, 0usize); (m + 1) * full];
    for i in (0..m).rev() {
        for mask in 0..full {
            let mut best = value[(i + 1) * full + mask];
            for j in 0..n {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let next = value[(i + 1) * full + (mask | (1 << j))];
                let cand = (next.0 + iou_table[i][j], next.1 + 1);
                if cand.0 > best.0 + 1e-15 || (cand.0 > best.0 - 1e-15 && cand.1 > best.1) {
                    best = cand;
                }
            }
            value[i * full + mask] = best;
        }
    }
    let mut choice = vec![None; m];
    let mut mask = 0usize;
    for i in 0..m {
        let target = value[i * full + mask];
        let mut taken = None;
        for j in 0..n {
            if mask & (1 << j) != 0 {
                continue;
            }
            let next = value[(i + 1) * full + (mask | (1 << j))];
            let cand = (next.0 + iou_table[i][j], next.1 + 1);
            if (cand.0 - target.0).abs() <= 1e-15 && cand.1 == target.1 {
                taken = Some(j);
                break;
            }
        }
        if let Some(j) = taken {
            mask |= 1 << j;
            choice[i] = Some(j);
        }
    }
    choice
}

/// Accuracy and mean IoU of predicted instance maps against ground truth.
/// Background (label 0) is pinned to background; predicted foreground labels
/// are matched one-to-one to ground-truth foreground labels by maximum total
/// IoU. Unmatched classes on either side score IoU 0. Requires at most 16
/// distinct ground-truth foreground labels.
pub fn seg_metrics(pred: &[LabelMap], gt: &[LabelMap]) -> Result<SegMetrics> {
    let counts = confusion(pred, gt)?;
    let mut rows: BTreeMap<u8, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u8, u64> = BTreeMap::new();
    let mut total = 0u64;
    for (&(p, g), &c) in &counts {
        *rows.entry(p).or_insert(0) += c;
        *cols.entry(g).or_insert(0) += c;
        total += c;
    }
    if total == 0 {
        return Err(Error::Invalid("no labeled pixels to score".into()));
    }

    let preds: Vec<u8> = rows.keys().copied().filter(|&p| p != 0 && p != UNLABELED).collect();
    let gts: Vec<u8> = cols.keys().copied().filter(|&g| g != 0).collect();
    if gts.len() > 16 {
        return Err(Error::Invalid(format!(
            "{} ground-truth classes exceed the exact-matching limit of 16",
            gts.len()
        )));
    }
    let at = |p: u8, g: u8| counts.get(&(p, g)).copied().unwrap_or(0);
    let row = |p: u8| rows.get(&p).copied().unwrap_or(0);
    let col = |g: u8| cols.get(&g).copied().unwrap_or(0);

    let iou_table: Vec<Vec<f64>> = preds
        .iter()
        .map(|&p| gts.iter().map(|&g| iou(at(p, g), row(p), col(g))).collect())
        .collect();
    let choice = best_matching(&preds, &gts, &iou_table);

    let mut matching = Vec::new();
    let mut gt_of_pred: BTreeMap<u8, u8> = BTreeMap::new();
    for (i, c) in choice.iter().enumerate() {
        if let Some(j) = c {
            matching.push((preds[i], gts[*j]));
            gt_of_pred.insert(preds[i], gts[*j]);
        }
    }

    // Accuracy: background plus every matched pair, over all labeled pixels.
    let mut correct = at(0, 0);
    for &(p, g) in &matching {
        correct += at(p, g);
    }
    let acc = correct as f64 / total as f64;

    // Class universe: background, every gt foreground class, and every
    // unmatched predicted class (scoring zero). Background absent from both
    // sides is skipped rather than scored vacuously.
    let mut per_class_iou = Vec::new();
    if row(0) + col(0) > 0 {
        per_class_iou.push((0u8, iou(at(0, 0), row(0), col(0))));
    }
    for &g in &gts {
        let score = match matching.iter().find(|&&(_, mg)| mg == g) {
            Some(&(p, _)) => iou(at(p, g), row(p), col(g)),
            None => 0.0,
        };
        per_class_iou.push((g, score));
    }
    for &p in &preds {
        if !gt_of_pred.contains_key(&p) {
            per_class_iou.push((p, 0.0));
        }
    }
    let miou = per_class_iou.iter().map(|&(_, v)| v).sum::<f64>() / per_class_iou.len() as f64;

    Ok(SegMetrics { acc, miou, per_class_iou, matching })
}

/// Peak signal-to-noise ratio in dB for images with values in [0, 1].
/// Identical images return +infinity.
pub fn psnr(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::Invalid("psnr inputs disagree on shape".into()));
    }
    let mut mse = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = (*x - *y) as f64;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Mean SSIM over valid (fully interior) 11x11 windows with a sigma-1.5
/// Gaussian weighting, averaged across channels. L = 1, K1 = 0.01, K2 = 0.03.
pub fn ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::Invalid("ssim inputs disagree on shape".into()));
    }
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    if a.width < WIN || a.height < WIN {
        return Err(Error::Invalid(format!("ssim needs at least {WIN}x{WIN} images")));
    }
    let mut kern = [[0.0f64; WIN]; WIN];
    let mut sum = 0.0;
    for (i, krow) in kern.iter_mut().enumerate() {
        for (j, k) in krow.iter_mut().enumerate() {
            let dy = i as f64 - (WIN as f64 - 1.0) / 2.0;
            let dx = j as f64 - (WIN as f64 - 1.0) / 2.0;
            *k = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            sum += *k;
        }
    }
    for krow in &mut kern {
        for k in krow {
            *k /= sum;
        }
    }
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;

    let mut acc = 0.0f64;
    let mut count = 0usize;
    for ch in 0..a.channels {
        for wy in 0..=(a.height - WIN) {
            for wx in 0..=(a.width - WIN) {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, krow) in kern.iter().enumerate() {
                    for (j, &k) in krow.iter().enumerate() {
                        let x = a.pixel(wx + j, wy + i)[ch] as f64;
                        let y = b.pixel(wx + j, wy + i)[ch] as f64;
                        mx += k * x;
                        my += k * y;
                        mxx += k * x * x;
                        myy += k * y * y;
                        mxy += k * x * y;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let s = ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
                acc += s;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Convenience pair used by evaluation drivers.
pub fn psnr_ssim(render: &FloatImage, reference: &FloatImage) -> Result<(f64, f64)> {
    Ok((psnr(render, reference)?, ssim(render, reference)?))
}
