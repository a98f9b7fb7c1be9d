//! Post-training EM refinement of rendered masks. Per view, per-pixel feature
//! vectors are softly re-clustered around per-object mean features (means
//! seeded from the rendered masks), and the resulting responsibilities are
//! mixed with the rendered semantic logits to produce the final labels.
//! Views refine independently; cross-view consistency comes from the
//! semantic-field term.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{FeatureMap, FloatImage};
use crate::types::{LabelMap, UNLABELED};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EmOptions {
    /// EM iteration count T. T = 0 still computes responsibilities once.
    pub iterations: usize,
    /// Mixing weight w on the rendered-logit term. `inf` (stored as the JSON
    /// string "inf") reproduces the rendered argmax labels exactly.
    #[serde(with = "crate::io::json_inf")]
    pub weight: f64,
    /// Mix `Z + w * logits` literally instead of softmaxing the logits into
    /// probability space first.
    pub logit_mixing: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { iterations: 10, weight: 1.0, logit_mixing: false }
    }
}

fn argmax_lowest(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mask-weighted mean feature per label. A label with no pixels falls back to
/// the global feature mean.
pub fn init_means(features: &FeatureMap, mask: &LabelMap, num_labels: usize) -> Vec<f64> {
    let dv = features.d_v;
    let n = features.len();
    let mut sums = vec![0.0f64; num_labels * dv];
    let mut counts = vec![0usize; num_labels];
    let mut global = vec![0.0f64; dv];
    for i in 0..n {
        let v = features.at_index(i);
        for (g, &x) in global.iter_mut().zip(v) {
            *g += x as f64;
        }
        let l = mask.data[i];
        if l == UNLABELED || l as usize >= num_labels {
            continue;
        }
        counts[l as usize] += 1;
        let row = &mut sums[l as usize * dv..(l as usize + 1) * dv];
        for (s, &x) in row.iter_mut().zip(v) {
            *s += x as f64;
        }
    }
    for g in &mut global {
        *g /= n as f64;
    }
    let mut means = vec![0.0f64; num_labels * dv];
    for k in 0..num_labels {
        if counts[k] == 0 {
            log::warn!("label {k} has no masked pixels; its mean starts at the global feature mean");
            means[k * dv..(k + 1) * dv].copy_from_slice(&global);
        } else {
            for d in 0..dv {
                means[k * dv + d] = sums[k * dv + d] / counts[k] as f64;
            }
        }
    }
    means
}

/// Responsibilities z_k(x) = softmax_k(-||v(x) - mu_k||^2), max-subtracted.
/// `resp` is filled row-major `n x num_labels`.
pub fn e_step(means: &[f64], dv: usize, features: &FeatureMap, resp: &mut [f64]) {
    let num_labels = means.len() / dv;
    debug_assert_eq!(features.d_v, dv);
    debug_assert_eq!(resp.len(), features.len() * num_labels);
    for i in 0..features.len() {
        let v = features.at_index(i);
        let row = &mut resp[i * num_labels..(i + 1) * num_labels];
        let mut max = f64::NEG_INFINITY;
        for k in 0..num_labels {
            let mut d2 = 0.0f64;
            for (d, &x) in v.iter().enumerate() {
                let diff = x as f64 - means[k * dv + d];
                d2 += diff * diff;
            }
            row[k] = -d2;
            if row[k] > max {
                max = row[k];
            }
        }
        let mut sum = 0.0f64;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }
}

/// Responsibility-weighted mean update. A class whose total responsibility
/// falls below 1e-12 keeps its previous mean.
pub fn m_step(resp: &[f64], features: &FeatureMap, means: &mut [f64]) {
    let dv = features.d_v;
    let num_labels = means.len() / dv;
    let mut sums = vec![0.0f64; num_labels * dv];
    let mut totals = vec![0.0f64; num_labels];
    for i in 0..features.len() {
        let v = features.at_index(i);
        let row = &resp[i * num_labels..(i + 1) * num_labels];
        for k in 0..num_labels {
            totals[k] += row[k];
            for (d, &x) in v.iter().enumerate() {
                sums[k * dv + d] += row[k] * x as f64;
            }
        }
    }
    for k in 0..num_labels {
        if totals[k] < 1e-12 {
            log::warn!("class {k} lost all responsibility mass; keeping its previous mean");
            continue;
        }
        for d in 0..dv {
            means[k * dv + d] = sums[k * dv + d] / totals[k];
        }
    }
}

/// Refines one view's rendered mask. `sem` holds the rendered per-pixel
/// semantic logits (one channel per label); the refined label is the argmax
/// of `Z + w * softmax(sem)` (or literal logits under `logit_mixing`).
/// Returns the refined map together with the mixed score image.
pub fn refine_view(
    features: &FeatureMap,
    mask: &LabelMap,
    sem: &FloatImage,
    opts: EmOptions,
) -> Result<(LabelMap, FloatImage)> {
    let num_labels = sem.channels;
    if num_labels < 1 {
        return Err(Error::Invalid("semantic image needs at least one channel".into()));
    }
    if features.width != mask.width
        || features.height != mask.height
        || sem.width != mask.width
        || sem.height != mask.height
    {
        return Err(Error::Invalid("refinement inputs disagree on resolution".into()));
    }
    let dv = features.d_v;
    let n = features.len();

    let mut means = init_means(features, mask, num_labels);
    let mut resp = vec![0.0f64; n * num_labels];
    for _ in 0..opts.iterations {
        e_step(&means, dv, features, &mut resp);
        m_step(&resp, features, &mut means);
    }
    e_step(&means, dv, features, &mut resp);

    let mut labels = LabelMap::new(mask.width, mask.height, 0);
    let mut s_final = FloatImage::new(mask.width, mask.height, num_labels);
    for i in 0..n {
        let z = &resp[i * num_labels..(i + 1) * num_labels];
        let logits = &sem.data[i * num_labels..(i + 1) * num_labels];
        let out = &mut s_final.data[i * num_labels..(i + 1) * num_labels];
        if opts.weight.is_infinite() {
            // The rendered term dominates every finite Z: the refined label
            // is exactly the rendered argmax.
            labels.data[i] = argmax_lowest(logits) as u8;
            out.copy_from_slice(logits);
            continue;
        }
        if opts.logit_mixing {
            for k in 0..num_labels {
                out[k] = (z[k] + opts.weight * logits[k] as f64) as f32;
            }
        } else {
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            let mut p = vec![0.0f64; num_labels];
            for k in 0..num_labels {
                p[k] = ((logits[k] - max) as f64).exp();
                sum += p[k];
            }
            for k in 0..num_labels {
                out[k] = (z[k] + opts.weight * p[k] / sum) as f32;
            }
        }
        labels.data[i] = argmax_lowest(out) as u8;
    }
    Ok((labels, s_final))
}

/// Refines many views in parallel.
pub fn refine_views(
    views: &[(&FeatureMap, &LabelMap, &FloatImage)],
    opts: EmOptions,
) -> Result<Vec<(LabelMap, FloatImage)>> {
    views.par_iter().map(|(f, m, s)| refine_view(f, m, s, opts)).collect()
}
