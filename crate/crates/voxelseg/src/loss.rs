//! Loss terms and their hand-rolled backward pass.
//!
//! The photometric term is bidirectional: the correct composite is pulled
//! toward the reference image while every deliberately mislabeled composite
//! (object i painted with j's colors) is pushed away from it. The propagation
//! regularizer pulls each color field, at samples *outside* its own mask,
//! toward that object's in-mask mean color, so mislabeled renders stay
//! visibly wrong. The init term is a cross-entropy between rendered semantics
//! and bootstrap labels.

use rayon::prelude::*;

use crate::geom::Vec3;
use crate::model::SceneModel;
use crate::render::RayEval;
use crate::scalar::{softmax_in_place, Scalar};
use crate::types::UNLABELED;

/// -ln(1e-8): floor applied to the init cross-entropy; a ray at the floor
/// contributes this constant and no gradient.
pub const CE_FLOOR: f64 = 18.420680743952367;

#[derive(Clone, Debug)]
pub struct RayData<S> {
    pub origin: Vec3<S>,
    pub dir: Vec3<S>,
    pub target: [S; 3],
    /// Bootstrap label for the init loss; `UNLABELED` skips the ray.
    pub init_label: u8,
}

#[derive(Clone, Debug)]
pub struct LossParams<S> {
    pub lambda_prop: S,
    pub lambda_init: S,
    /// Per-ray clamp on each erroneous-composite error; infinity disables it.
    pub tau: S,
    /// Let the pushed-away term move density / color fields (it always moves
    /// the semantic field). Both default to true.
    pub neg_term_density: bool,
    pub neg_term_color: bool,
}

impl<S: Scalar> Default for LossParams<S> {
    fn default() -> Self {
        Self {
            lambda_prop: S::of(0.01),
            lambda_init: S::one(),
            tau: S::of(0.75),
            neg_term_density: true,
            neg_term_color: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossValues<S> {
    pub photo_pos: S,
    /// The subtracted bidirectional term (already pair-normalized, >= 0).
    pub photo_neg: S,
    pub prop: S,
    pub init: S,
    pub total: S,
}

/// Per-object mean colors over in-mask batch samples; detached (no gradient
/// flows through mu), and objects with no in-mask samples are skipped.
#[derive(Clone, Debug)]
pub struct BatchStats<S> {
    pub mu: Vec<[S; 3]>,
    pub count: Vec<usize>,
}

pub fn batch_stats<S: Scalar>(evals: &[RayEval<S>], k1: usize) -> BatchStats<S> {
    let mut sum = vec![[S::zero(); 3]; k1];
    let mut count = vec![0usize; k1];
    for ev in evals {
        for p in 0..ev.n {
            let k = ev.labels[p];
            let c = ev.color_at(p, k);
            for ch in 0..3 {
                sum[k][ch] += c[ch];
            }
            count[k] += 1;
        }
    }
    let mu = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| {
            if n == 0 {
                [S::zero(); 3]
            } else {
                let inv = S::one() / S::of(n as f64);
                [s[0] * inv, s[1] * inv, s[2] * inv]
            }
        })
        .collect();
    BatchStats { mu, count }
}

fn sq_err<S: Scalar>(a: [S; 3], b: [S; 3]) -> S {
    let mut e = S::zero();
    for ch in 0..3 {
        let d = a[ch] - b[ch];
        e += d * d;
    }
    e
}

/// Sum over rays of ||C_hat - C||^2 and the pair-normalized clamped sum over
/// ordered pairs of min(||C_tilde_ij - C||^2, tau). The loss value is
/// pos - neg.
pub fn loss_photo_bidirectional<S: Scalar>(evals: &[RayEval<S>], rays: &[RayData<S>], tau: S) -> (S, S) {
    let mut pos = S::zero();
    let mut neg = S::zero();
    let k1 = evals.first().map_or(2, |e| e.k1);
    let k = k1 - 1;
    let norm = S::one() / S::of((k * k1) as f64);
    for (ev, ray) in evals.iter().zip(rays) {
        pos += sq_err(ev.composite, ray.target);
        let mut ray_neg = S::zero();
        for i in 0..k1 {
            for j in 0..k1 {
                if i == j {
                    continue;
                }
                let e = sq_err(ev.erroneous_composite(i, j), ray.target);
                ray_neg += norm * e.min(tau);
            }
        }
        neg += ray_neg;
    }
    (pos, neg)
}

/// Sum over batch samples and objects of ||(1 - a_k)(c_k - mu_k)||^2: out-of-
/// mask samples are pulled toward the object's in-mask mean color. mu is a
/// constant; objects absent from the batch contribute nothing.
pub fn loss_prop<S: Scalar>(evals: &[RayEval<S>], stats: &BatchStats<S>) -> S {
    let mut loss = S::zero();
    for ev in evals {
        let mut ray_loss = S::zero();
        for p in 0..ev.n {
            let a = ev.assign_at(p);
            for (k, &n) in stats.count.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let out = S::one() - a[k];
                ray_loss += out * out * sq_err(ev.color_at(p, k), stats.mu[k]);
            }
        }
        loss += ray_loss;
    }
    loss
}

/// Cross-entropy of softmax(rendered logits) against the bootstrap one-hot
/// labels; the log is floored at ln(1e-8) (flooring also zeroes the ray's
/// gradient); unlabeled rays are skipped.
pub fn loss_init<S: Scalar>(evals: &[RayEval<S>], rays: &[RayData<S>]) -> S {
    let mut loss = S::zero();
    for (ev, ray) in evals.iter().zip(rays) {
        let y = ray.init_label as usize;
        if ray.init_label == UNLABELED || y >= ev.k1 {
            continue;
        }
        let mut probs = ev.sem.clone();
        softmax_in_place(&mut probs);
        let p = probs[y];
        if p < S::of(1e-8) {
            loss += S::of(CE_FLOOR);
        } else {
            loss += -p.ln();
        }
    }
    loss
}

pub fn forward_losses<S: Scalar>(
    evals: &[RayEval<S>],
    rays: &[RayData<S>],
    stats: &BatchStats<S>,
    params: &LossParams<S>,
) -> LossValues<S> {
    let (photo_pos, photo_neg) = loss_photo_bidirectional(evals, rays, params.tau);
    let prop = if params.lambda_prop > S::zero() { loss_prop(evals, stats) } else { S::zero() };
    let init = if params.lambda_init > S::zero() { loss_init(evals, rays) } else { S::zero() };
    let total = photo_pos - photo_neg + params.lambda_prop * prop + params.lambda_init * init;
    LossValues { photo_pos, photo_neg, prop, init, total }
}

/// Per-ray upstream gradients at the sample level, produced in parallel and
/// scattered into the grids sequentially (in ray order) so results do not
/// depend on the worker count.
struct RayGrads<S> {
    terms: [S; 4],
    g_density_raw: Vec<S>,
    g_logits: Vec<S>,
    g_color_z: Vec<S>,
}

fn ray_backward<S: Scalar>(
    ev: &RayEval<S>,
    ray: &RayData<S>,
    stats: &BatchStats<S>,
    params: &LossParams<S>,
) -> RayGrads<S> {
    let k1 = ev.k1;
    let n = ev.n;
    let mut g_w = vec![S::zero(); n];
    let mut g_assign = vec![S::zero(); n * k1];
    let mut g_color = vec![S::zero(); n * k1 * 3];
    let mut g_logits = vec![S::zero(); n * k1];

    // Correct composite pulled toward the reference.
    let pos = sq_err(ev.composite, ray.target);
    let g_chat: [S; 3] = std::array::from_fn(|ch| S::of(2.0) * (ev.composite[ch] - ray.target[ch]));
    for p in 0..n {
        let w = ev.weights[p];
        let a = ev.assign_at(p);
        let mut gw = S::zero();
        for ch in 0..3 {
            let mut q = S::zero();
            for k in 0..k1 {
                q += a[k] * ev.colors[(p * k1 + k) * 3 + ch];
            }
            gw += g_chat[ch] * q;
            for k in 0..k1 {
                g_assign[p * k1 + k] += g_chat[ch] * w * ev.colors[(p * k1 + k) * 3 + ch];
                g_color[(p * k1 + k) * 3 + ch] += g_chat[ch] * w * a[k];
            }
        }
        g_w[p] += gw;
    }

    // Erroneous composites pushed away (clamped rays contribute no gradient).
    let k = k1 - 1;
    let norm = S::one() / S::of((k * k1) as f64);
    let mut neg = S::zero();
    for i in 0..k1 {
        for j in 0..k1 {
            if i == j {
                continue;
            }
            let ctilde = ev.erroneous_composite(i, j);
            let e = sq_err(ctilde, ray.target);
            neg += norm * e.min(params.tau);
            if e >= params.tau {
                continue;
            }
            let g_ct: [S; 3] =
                std::array::from_fn(|ch| -norm * S::of(2.0) * (ctilde[ch] - ray.target[ch]));
            for p in 0..n {
                let w = ev.weights[p];
                let a_i = ev.assign_at(p)[i];
                let ci = ev.color_at(p, i);
                let cj = ev.color_at(p, j);
                let mut gw = S::zero();
                let mut ga = S::zero();
                for ch in 0..3 {
                    gw += g_ct[ch] * (ci[ch] + a_i * (cj[ch] - ci[ch]));
                    ga += g_ct[ch] * w * (cj[ch] - ci[ch]);
                    if params.neg_term_color {
                        g_color[(p * k1 + i) * 3 + ch] += g_ct[ch] * w * (S::one() - a_i);
                        g_color[(p * k1 + j) * 3 + ch] += g_ct[ch] * w * a_i;
                    }
                }
                if params.neg_term_density {
                    g_w[p] += gw;
                }
                g_assign[p * k1 + i] += ga;
            }
        }
    }

    // Propagation: out-of-mask samples pulled toward each object's mean.
    let mut prop = S::zero();
    if params.lambda_prop > S::zero() {
        let two_l = S::of(2.0) * params.lambda_prop;
        for p in 0..n {
            let a = ev.assign_at(p);
            for (kk, &cnt) in stats.count.iter().enumerate() {
                if cnt == 0 {
                    continue;
                }
                let out = S::one() - a[kk];
                let c = ev.color_at(p, kk);
                let d: [S; 3] = std::array::from_fn(|ch| c[ch] - stats.mu[kk][ch]);
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                prop += out * out * d2;
                g_assign[p * k1 + kk] += -two_l * out * d2;
                let coef = two_l * out * out;
                for ch in 0..3 {
                    g_color[(p * k1 + kk) * 3 + ch] += coef * d[ch];
                }
            }
        }
    }

    // Init cross-entropy on rendered (w-weighted) raw logits.
    let mut init = S::zero();
    let y = ray.init_label as usize;
    if params.lambda_init > S::zero() && ray.init_label != UNLABELED && y < k1 {
        let mut probs = ev.sem.clone();
        softmax_in_place(&mut probs);
        if probs[y] < S::of(1e-8) {
            init = S::of(CE_FLOOR);
        } else {
            init = -probs[y].ln();
            for kk in 0..k1 {
                let g_sem = params.lambda_init
                    * (probs[kk] - if kk == y { S::one() } else { S::zero() });
                for p in 0..n {
                    g_w[p] += g_sem * ev.logits[p * k1 + kk];
                    g_logits[p * k1 + kk] += g_sem * ev.weights[p];
                }
            }
        }
    }

    // Straight-through: assignment gradients land on the logits unchanged.
    for (gl, ga) in g_logits.iter_mut().zip(&g_assign) {
        *gl += *ga;
    }

    // Weights -> densities: dw_p/dsigma_p = T_p delta_p (1 - alpha_p),
    // dw_p/dsigma_q = -delta_q w_p for q < p, folded as a suffix sum, then
    // through softplus.
    let mut g_density_raw = vec![S::zero(); n];
    let mut suffix = S::zero();
    for q in (0..n).rev() {
        let g_sigma = g_w[q] * ev.transs[q] * ev.deltas[q] * (S::one() - ev.alphas[q])
            - ev.deltas[q] * suffix;
        suffix += g_w[q] * ev.weights[q];
        g_density_raw[q] = g_sigma * ev.dsigmas[q];
    }

    // Colors -> pre-sigmoid upstream.
    let mut g_color_z = g_color;
    for (gz, &c) in g_color_z.iter_mut().zip(&ev.colors) {
        *gz *= c * (S::one() - c);
    }

    RayGrads { terms: [pos, neg, prop, init], g_density_raw, g_logits, g_color_z }
}

/// Computes the loss and accumulates d(total)/d(parameters) into the model's
/// gradient buffers. Returns the same values as [`forward_losses`].
pub fn backward_losses<S: Scalar>(
    model: &mut SceneModel<S>,
    evals: &[RayEval<S>],
    rays: &[RayData<S>],
    stats: &BatchStats<S>,
    params: &LossParams<S>,
) -> LossValues<S> {
    assert_eq!(evals.len(), rays.len());
    let per_ray: Vec<RayGrads<S>> = evals
        .par_iter()
        .zip(rays.par_iter())
        .map(|(ev, ray)| ray_backward(ev, ray, stats, params))
        .collect();

    let k1 = model.num_labels();
    let b = model.basis_count();
    let mut photo_pos = S::zero();
    let mut photo_neg = S::zero();
    let mut prop = S::zero();
    let mut init = S::zero();
    let mut coeff_up = vec![S::zero(); 3 * b];
    for (ev, rg) in evals.iter().zip(&per_ray) {
        photo_pos += rg.terms[0];
        photo_neg += rg.terms[1];
        prop += rg.terms[2];
        init += rg.terms[3];
        for p in 0..ev.n {
            model.density.scatter_grad(&ev.d_ctx[p], &rg.g_density_raw[p..p + 1]);
            model
                .semantics
                .scatter_grad(&ev.s_ctx[p], &rg.g_logits[p * k1..(p + 1) * k1]);
            for kk in 0..k1 {
                let gz = &rg.g_color_z[(p * k1 + kk) * 3..(p * k1 + kk) * 3 + 3];
                if gz.iter().all(|&g| g == S::zero()) {
                    continue;
                }
                for ch in 0..3 {
                    for bi in 0..b {
                        coeff_up[ch * b + bi] = gz[ch] * ev.basis[bi];
                    }
                }
                model.colors[kk].scatter_grad(&ev.c_ctx[p], &coeff_up);
            }
        }
    }
    let total = photo_pos - photo_neg + params.lambda_prop * prop + params.lambda_init * init;
    LossValues { photo_pos, photo_neg, prop, init, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::render::{eval_ray, AssignMode};

    /// Hand-built single-ray eval: labels, per-layer colors and logits set
    /// directly, everything else inert.
    fn synthetic_eval(
        k1: usize,
        labels: Vec<usize>,
        colors: Vec<S3>,
        weights: Vec<f64>,
        sem: Vec<f64>,
    ) -> RayEval<f64> {
        let n = labels.len();
        let mut assign = Vec::new();
        for &l in &labels {
            for k in 0..k1 {
                assign.push(if k == l { 1.0 } else { 0.0 });
            }
        }
        let flat: Vec<f64> = colors.iter().flat_map(|c| c.iter().copied()).collect();
        assert_eq!(flat.len(), n * k1 * 3);
        let mut composite = [0.0; 3];
        for p in 0..n {
            for ch in 0..3 {
                composite[ch] += weights[p] * flat[(p * k1 + labels[p]) * 3 + ch];
            }
        }
        RayEval {
            origin: Vec3::new(0.0, 0.0, 0.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
            basis: [0.0; 9],
            k1,
            n,
            t_far: 1.0,
            ts: vec![0.0; n],
            deltas: vec![0.0; n],
            d_ctx: Vec::new(),
            s_ctx: Vec::new(),
            c_ctx: Vec::new(),
            sigmas: vec![0.0; n],
            dsigmas: vec![0.0; n],
            alphas: vec![0.0; n],
            transs: vec![0.0; n],
            weights,
            labels,
            logits: vec![0.0; n * k1],
            assign,
            colors: flat,
            composite,
            sem,
            acc: 0.0,
            depth: 0.0,
        }
    }
    type S3 = [f64; 3];

    #[test]
    fn prop_pulls_out_of_mask_samples_toward_object_mean() {
        // Object 1 in-mask at samples 0,1 with reds 0.2, 0.4 -> mu = 0.3;
        // the out-of-mask sample holds red 0.9 -> (0.9 - 0.3)^2 = 0.36.
        let ev = synthetic_eval(
            2,
            vec![1, 1, 0],
            vec![
                [0.5, 0.5, 0.5],
                [0.2, 0.0, 0.0],
                [0.5, 0.5, 0.5],
                [0.4, 0.0, 0.0],
                [0.5, 0.5, 0.5],
                [0.9, 0.0, 0.0],
            ],
            vec![0.1, 0.1, 0.1],
            vec![0.0, 0.0],
        );
        let stats = batch_stats(std::slice::from_ref(&ev), 2);
        assert_eq!(stats.count, vec![1, 2]);
        assert!((stats.mu[1][0] - 0.3).abs() < 1e-15);
        let loss = loss_prop(std::slice::from_ref(&ev), &stats);
        // Background's field is constant, so only the 0.36 term survives.
        assert!((loss - 0.36).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn prop_skips_objects_absent_from_batch() {
        let ev = synthetic_eval(
            3,
            vec![0, 0],
            vec![
                [0.1, 0.1, 0.1],
                [0.7, 0.1, 0.3],
                [0.9, 0.9, 0.9],
                [0.2, 0.1, 0.1],
                [0.8, 0.2, 0.3],
                [0.1, 0.5, 0.9],
            ],
            vec![0.2, 0.2],
            vec![0.0; 3],
        );
        let stats = batch_stats(std::slice::from_ref(&ev), 3);
        assert_eq!(stats.count, vec![2, 0, 0]);
        // Labels 1 and 2 never appear: their wildly varying colors must not
        // contribute. Background color varies across its own in-mask samples,
        // which the regularizer ignores (in-mask factor is zero).
        let loss = loss_prop(std::slice::from_ref(&ev), &stats);
        assert_eq!(loss, 0.0);
    }

    fn tied_model() -> SceneModel<f64> {
        let mut m = SceneModel::new(
            &ModelConfig { k: 2, sh_degree: 0, resolution: [4, 4, 4], ..ModelConfig::default() },
            5,
        )
        .unwrap();
        for v in m.density.values.iter_mut() {
            *v = 1.0;
        }
        let tied: Vec<f64> = (0..m.colors[0].len()).map(|i| (i as f64 * 0.61).cos()).collect();
        for c in m.colors.iter_mut() {
            c.values = tied.clone();
        }
        let mut s = 11u64;
        for v in m.semantics.values.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            *v = ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0;
        }
        m
    }

    #[test]
    fn tied_color_fields_zero_the_bidirectional_loss() {
        let m = tied_model();
        let dirs = [
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.1, -0.2, -1.0).normalized(),
            Vec3::new(-0.3, 0.15, -1.0).normalized(),
        ];
        let evals: Vec<_> = dirs
            .iter()
            .map(|&d| eval_ray(&m, Vec3::new(0.0, 0.0, 3.0), d, 48, None, AssignMode::Hard))
            .collect();
        let rays: Vec<_> = evals
            .iter()
            .map(|ev| RayData {
                origin: ev.origin,
                dir: ev.dir,
                target: [0.3, 0.8, 0.1],
                init_label: UNLABELED,
            })
            .collect();
        let (pos, neg) = loss_photo_bidirectional(&evals, &rays, f64::INFINITY);
        assert!(pos > 0.0);
        assert!((pos - neg).abs() < 1e-12, "pos {pos} neg {neg}");
    }

    #[test]
    fn clamp_caps_each_pair_ray_term() {
        let ev = synthetic_eval(
            2,
            vec![1],
            vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            vec![1.0],
            vec![0.0, 0.0],
        );
        let ray = RayData {
            origin: ev.origin,
            dir: ev.dir,
            target: [1.0, 1.0, 1.0],
            init_label: UNLABELED,
        };
        // Composite is white (object 1). Erroneous (1,0) paints the sample
        // with c_0 = black; erroneous (0,1) paints everything outside mask 0
        // with c_0, also black. Both pair errors are 3.0, clamped to 0.75.
        let (pos, neg) = loss_photo_bidirectional(
            std::slice::from_ref(&ev),
            std::slice::from_ref(&ray),
            0.75,
        );
        assert_eq!(pos, 0.0);
        assert!((neg - 0.75).abs() < 1e-15);
        let (_, neg_inf) = loss_photo_bidirectional(
            std::slice::from_ref(&ev),
            std::slice::from_ref(&ray),
            f64::INFINITY,
        );
        assert!((neg_inf - 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_loss_oracles() {
        // Zero rendered logits -> uniform softmax -> ln(K+1).
        let ev = synthetic_eval(2, vec![0], vec![[0.5; 3], [0.5; 3]], vec![0.5], vec![0.0, 0.0]);
        let ray = RayData {
            origin: ev.origin,
            dir: ev.dir,
            target: [0.0; 3],
            init_label: 1,
        };
        let l = loss_init(std::slice::from_ref(&ev), std::slice::from_ref(&ray));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        // Overwhelming correct logit -> ~0.
        let mut ev2 = synthetic_eval(2, vec![0], vec![[0.5; 3], [0.5; 3]], vec![0.5], vec![0.0, 40.0]);
        ev2.sem = vec![0.0, 40.0];
        let l2 = loss_init(std::slice::from_ref(&ev2), std::slice::from_ref(&ray));
        assert!(l2 < 1e-12);

        // Overwhelming wrong logit -> floored constant.
        let ev3 = synthetic_eval(2, vec![0], vec![[0.5; 3], [0.5; 3]], vec![0.5], vec![40.0, 0.0]);
        let l3 = loss_init(std::slice::from_ref(&ev3), std::slice::from_ref(&ray));
        assert_eq!(l3, CE_FLOOR);

        // Unlabeled ray skipped.
        let ray_skip = RayData { init_label: UNLABELED, ..ray };
        let l4 = loss_init(std::slice::from_ref(&ev), std::slice::from_ref(&ray_skip));
        assert_eq!(l4, 0.0);
    }

    #[test]
    fn three_class_uniform_gives_ln3() {
        let ev = synthetic_eval(
            3,
            vec![0],
            vec![[0.5; 3], [0.5; 3], [0.5; 3]],
            vec![0.5],
            vec![0.0, 0.0, 0.0],
        );
        let ray = RayData {
            origin: ev.origin,
            dir: ev.dir,
            target: [0.0; 3],
            init_label: 2,
        };
        let l = loss_init(std::slice::from_ref(&ev), std::slice::from_ref(&ray));
        assert!((l - 3.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_is_linear_in_the_lambdas() {
        let m = tied_model();
        let evals: Vec<_> = (0..4)
            .map(|i| {
                let d = Vec3::new(0.05 * i as f64, -0.04 * i as f64, -1.0).normalized();
                eval_ray(&m, Vec3::new(0.0, 0.0, 3.0), d, 32, None, AssignMode::Hard)
            })
            .collect();
        let rays: Vec<_> = evals
            .iter()
            .enumerate()
            .map(|(i, ev)| RayData {
                origin: ev.origin,
                dir: ev.dir,
                target: [0.2, 0.5, 0.9],
                init_label: (i % 2) as u8,
            })
            .collect();
        let stats = batch_stats(&evals, 3);
        let base = forward_losses(
            &evals,
            &rays,
            &stats,
            &LossParams { lambda_prop: 1.0, lambda_init: 1.0, tau: f64::INFINITY, ..Default::default() },
        );
        let scaled = forward_losses(
            &evals,
            &rays,
            &stats,
            &LossParams { lambda_prop: 2.0, lambda_init: 3.0, tau: f64::INFINITY, ..Default::default() },
        );
        let expect = base.photo_pos - base.photo_neg + 2.0 * base.prop + 3.0 * base.init;
        assert_eq!(scaled.total, expect);
        assert_eq!(scaled.prop, base.prop);
        assert_eq!(scaled.init, base.init);
    }

    #[test]
    fn backward_matches_forward_values_and_fills_grads() {
        let mut m = tied_model();
        // Untie the colors so every term is active.
        for (i, v) in m.colors[1].values.iter_mut().enumerate() {
            *v += 0.3 + 0.01 * (i % 7) as f64;
        }
        let evals: Vec<_> = (0..6)
            .map(|i| {
                let d = Vec3::new(0.07 * i as f64 - 0.2, 0.05, -1.0).normalized();
                eval_ray(&m, Vec3::new(0.1, -0.1, 3.0), d, 24, None, AssignMode::Hard)
            })
            .collect();
        let rays: Vec<_> = evals
            .iter()
            .enumerate()
            .map(|(i, ev)| RayData {
                origin: ev.origin,
                dir: ev.dir,
                target: [0.1 * i as f64 / 6.0, 0.4, 0.6],
                init_label: (i % 3) as u8,
            })
            .collect();
        let stats = batch_stats(&evals, 3);
        let params = LossParams { lambda_prop: 0.5, lambda_init: 0.7, ..Default::default() };
        let fwd = forward_losses(&evals, &rays, &stats, &params);
        m.zero_grads();
        let bwd = backward_losses(&mut m, &evals, &rays, &stats, &params);
        assert_eq!(
            [fwd.photo_pos, fwd.photo_neg, fwd.prop, fwd.init],
            [bwd.photo_pos, bwd.photo_neg, bwd.prop, bwd.init]
        );
        assert_eq!(fwd.total, bwd.total);
        assert_eq!(fwd.photo_neg, bwd.photo_neg);
        let gsum: f64 = m.density.grad.iter().map(|g| g.abs()).sum::<f64>()
            + m.semantics.grad.iter().map(|g| g.abs()).sum::<f64>();
        assert!(gsum > 0.0);
    }
}
