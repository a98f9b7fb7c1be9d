//! Volume rendering: quadrature along camera rays through the layered model.
//!
//! Weights follow the standard emission-absorption discretization:
//! w_p = T_p * (1 - exp(-sigma_p * delta_p)) with T_p = exp(-sum_{q<p} sigma_q delta_q),
//! and the last interval extends to the far bound of the ray span.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::geom::Vec3;
use crate::grid::TriCtx;
use crate::io::FloatImage;
use crate::model::SceneModel;
use crate::scalar::{argmax_lowest, sigmoid, softplus, Scalar};
use crate::sh;
use crate::types::LabelMap;

/// How sample points are assigned to layers.
///
/// `Hard` snaps each point to its argmax layer (the value side of the
/// straight-through construction). `Relaxed` replaces the one-hot with
/// onehot(argmax s_base) + s - s_base against a frozen base model: at
/// parameters equal to the base it reproduces `Hard` exactly, while staying
/// differentiable in the live logits — which is what finite differencing of
/// the analytic gradient requires.
#[derive(Clone, Copy)]
pub enum AssignMode<'a, S: Scalar> {
    Hard,
    Relaxed { base: &'a SceneModel<S> },
}

/// Midpoint (or jittered) depths over [t0, t1] plus interval lengths; the
/// last interval runs to t1.
pub fn sample_span<S: Scalar>(t0: S, t1: S, n: usize, jitter: Option<&[S]>) -> (Vec<S>, Vec<S>) {
    debug_assert!(n > 0);
    let step = (t1 - t0) / S::of(n as f64);
    let ts: Vec<S> = (0..n)
        .map(|p| {
            let u = match jitter {
                Some(j) => j[p],
                None => S::of(0.5),
            };
            t0 + step * (S::of(p as f64) + u)
        })
        .collect();
    let deltas: Vec<S> = (0..n)
        .map(|p| if p + 1 < n { ts[p + 1] - ts[p] } else { t1 - ts[p] })
        .collect();
    (ts, deltas)
}

/// Quadrature weights for a list of (already activated) densities.
pub fn quadrature_weights<S: Scalar>(sigmas: &[S], deltas: &[S]) -> Vec<S> {
    let mut acc = S::zero();
    sigmas
        .iter()
        .zip(deltas)
        .map(|(&s, &d)| {
            let trans = (-acc).exp();
            let alpha = S::one() - (-s * d).exp();
            acc += s * d;
            trans * alpha
        })
        .collect()
}

/// Everything the forward pass computed for one ray, cached densely so the
/// backward pass can replay it without re-sampling the grids.
pub struct RayEval<S: Scalar> {
    pub origin: Vec3<S>,
    pub dir: Vec3<S>,
    pub basis: [S; 9],
    pub k1: usize,
    pub n: usize,
    pub t_far: S,
    pub ts: Vec<S>,
    pub deltas: Vec<S>,
    pub d_ctx: Vec<TriCtx<S>>,
    pub s_ctx: Vec<TriCtx<S>>,
    pub c_ctx: Vec<TriCtx<S>>,
    /// Activated densities and the softplus derivative at each sample.
    pub sigmas: Vec<S>,
    pub dsigmas: Vec<S>,
    pub alphas: Vec<S>,
    pub transs: Vec<S>,
    pub weights: Vec<S>,
    pub labels: Vec<usize>,
    /// n x (K+1) raw logits.
    pub logits: Vec<S>,
    /// n x (K+1) assignment values (one-hot under `Hard`).
    pub assign: Vec<S>,
    /// n x (K+1) x 3 activated colors.
    pub colors: Vec<S>,
    /// Composite ray color sum_p w_p sum_k a_k c_k.
    pub composite: [S; 3],
    /// Rendered raw logits sum_p w_p s_p.
    pub sem: Vec<S>,
    pub acc: S,
    pub depth: S,
}

impl<S: Scalar> RayEval<S> {
    fn empty(origin: Vec3<S>, dir: Vec3<S>, k1: usize) -> Self {
        Self {
            origin,
            dir,
            basis: [S::zero(); 9],
            k1,
            n: 0,
            t_far: S::zero(),
            ts: Vec::new(),
            deltas: Vec::new(),
            d_ctx: Vec::new(),
            s_ctx: Vec::new(),
            c_ctx: Vec::new(),
            sigmas: Vec::new(),
            dsigmas: Vec::new(),
            alphas: Vec::new(),
            transs: Vec::new(),
            weights: Vec::new(),
            labels: Vec::new(),
            logits: Vec::new(),
            assign: Vec::new(),
            colors: Vec::new(),
            composite: [S::zero(); 3],
            sem: vec![S::zero(); k1],
            acc: S::zero(),
            depth: S::zero(),
        }
    }

    pub fn logits_at(&self, p: usize) -> &[S] {
        &self.logits[p * self.k1..(p + 1) * self.k1]
    }
    pub fn assign_at(&self, p: usize) -> &[S] {
        &self.assign[p * self.k1..(p + 1) * self.k1]
    }
    pub fn color_at(&self, p: usize, k: usize) -> [S; 3] {
        let i = (p * self.k1 + k) * 3;
        [self.colors[i], self.colors[i + 1], self.colors[i + 2]]
    }

    /// Ray color when object i is painted with j's color field:
    /// sum_p w_p * (c_i + a_i (c_j - c_i)). With i's and j's color fields
    /// tied, every term collapses to c_i bitwise, matching the composite of
    /// a one-layer model.
    pub fn erroneous_composite(&self, i: usize, j: usize) -> [S; 3] {
        let mut out = [S::zero(); 3];
        for p in 0..self.n {
            let w = self.weights[p];
            let a_i = self.assign_at(p)[i];
            let ci = self.color_at(p, i);
            let cj = self.color_at(p, j);
            for ch in 0..3 {
                out[ch] += w * (ci[ch] + a_i * (cj[ch] - ci[ch]));
            }
        }
        out
    }
}

pub fn eval_ray<S: Scalar>(
    model: &SceneModel<S>,
    origin: Vec3<S>,
    dir: Vec3<S>,
    n_samples: usize,
    jitter: Option<&[S]>,
    mode: AssignMode<S>,
) -> RayEval<S> {
    let k1 = model.num_labels();
    let Some((t0, t1)) = model.bounds.ray_span(origin, dir, S::zero()) else {
        return RayEval::empty(origin, dir, k1);
    };
    let (ts, deltas) = sample_span(t0, t1, n_samples, jitter);
    let n = n_samples;
    let b = model.basis_count();
    let mut basis = [S::zero(); 9];
    sh::eval_basis(model.sh_degree, dir, &mut basis);

    let mut ev = RayEval {
        origin,
        dir,
        basis,
        k1,
        n,
        t_far: t1,
        ts,
        deltas,
        d_ctx: Vec::with_capacity(n),
        s_ctx: Vec::with_capacity(n),
        c_ctx: Vec::with_capacity(n),
        sigmas: Vec::with_capacity(n),
        dsigmas: Vec::with_capacity(n),
        alphas: Vec::with_capacity(n),
        transs: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        logits: Vec::with_capacity(n * k1),
        assign: Vec::with_capacity(n * k1),
        colors: Vec::with_capacity(n * k1 * 3),
        composite: [S::zero(); 3],
        sem: vec![S::zero(); k1],
        acc: S::zero(),
        depth: S::zero(),
    };

    if let AssignMode::Relaxed { base } = mode {
        debug_assert_eq!(base.semantics.res(), model.semantics.res());
        debug_assert_eq!(base.num_labels(), k1);
    }

    let mut raw = [S::zero()];
    let mut logit_buf = vec![S::zero(); k1];
    let mut base_buf = vec![S::zero(); k1];
    let mut coeff_buf = vec![S::zero(); 3 * b];
    let mut tau = S::zero();

    for p in 0..n {
        let x = origin + dir * ev.ts[p];

        let d_ctx = model.density.tri_ctx(x);
        model.density.sample_into(&d_ctx, &mut raw);
        let sigma = softplus(raw[0]);
        let dsigma = sigmoid(raw[0]);

        let s_ctx = model.semantics.tri_ctx(x);
        model.semantics.sample_into(&s_ctx, &mut logit_buf);

        let label;
        match mode {
            AssignMode::Hard => {
                label = argmax_lowest(&logit_buf);
                for k in 0..k1 {
                    ev.assign.push(if k == label { S::one() } else { S::zero() });
                }
            }
            AssignMode::Relaxed { base } => {
                base.semantics.sample_into(&s_ctx, &mut base_buf);
                label = argmax_lowest(&base_buf);
                for k in 0..k1 {
                    let one = if k == label { S::one() } else { S::zero() };
                    ev.assign.push(one + logit_buf[k] - base_buf[k]);
                }
            }
        }
        ev.logits.extend_from_slice(&logit_buf);
        ev.labels.push(label);

        let c_ctx = model.colors[0].tri_ctx(x);
        for field in &model.colors {
            field.sample_into(&c_ctx, &mut coeff_buf);
            for ch in 0..3 {
                let mut z = S::zero();
                for bi in 0..b {
                    z += coeff_buf[ch * b + bi] * basis[bi];
                }
                ev.colors.push(sigmoid(z));
            }
        }

        let trans = (-tau).exp();
        let alpha = S::one() - (-sigma * ev.deltas[p]).exp();
        tau += sigma * ev.deltas[p];
        let w = trans * alpha;

        let assign = &ev.assign[p * k1..(p + 1) * k1];
        let colors = &ev.colors[p * k1 * 3..(p + 1) * k1 * 3];
        for ch in 0..3 {
            let mut c = S::zero();
            for k in 0..k1 {
                c += assign[k] * colors[k * 3 + ch];
            }
            ev.composite[ch] += w * c;
        }
        for k in 0..k1 {
            ev.sem[k] += w * logit_buf[k];
        }
        ev.depth += w * ev.ts[p];
        ev.acc += w;

        ev.d_ctx.push(d_ctx);
        ev.s_ctx.push(s_ctx);
        ev.c_ctx.push(c_ctx);
        ev.sigmas.push(sigma);
        ev.dsigmas.push(dsigma);
        ev.alphas.push(alpha);
        ev.transs.push(trans);
        ev.weights.push(w);
    }
    ev
}

fn eval_pixels<S: Scalar, T: Send>(
    model: &SceneModel<S>,
    cam: &Camera<S>,
    n_samples: usize,
    f: impl Fn(RayEval<S>) -> T + Sync,
) -> Vec<T> {
    (0..cam.height * cam.width)
        .into_par_iter()
        .map(|i| {
            let (v, u) = (i / cam.width, i % cam.width);
            let ray = cam.ray(u, v);
            f(eval_ray(model, ray.origin, ray.dir, n_samples, None, AssignMode::Hard))
        })
        .collect()
}

pub fn render_image<S: Scalar>(model: &SceneModel<S>, cam: &Camera<S>, n_samples: usize) -> FloatImage {
    let px = eval_pixels(model, cam, n_samples, |ev| ev.composite);
    let mut img = FloatImage::new(cam.width, cam.height, 3);
    for (i, c) in px.into_iter().enumerate() {
        for ch in 0..3 {
            img.data[i * 3 + ch] = c[ch].to64() as f32;
        }
    }
    img
}

/// Per-pixel rendered logits, K+1 channels.
pub fn render_semantics<S: Scalar>(model: &SceneModel<S>, cam: &Camera<S>, n_samples: usize) -> FloatImage {
    let k1 = model.num_labels();
    let px = eval_pixels(model, cam, n_samples, |ev| ev.sem);
    let mut img = FloatImage::new(cam.width, cam.height, k1);
    for (i, s) in px.into_iter().enumerate() {
        for (ch, v) in s.into_iter().enumerate() {
            img.data[i * k1 + ch] = v.to64() as f32;
        }
    }
    img
}

/// Argmax of the rendered logits per pixel; rays that miss the volume render
/// a zero logit vector and therefore map to background.
pub fn render_label_map<S: Scalar>(model: &SceneModel<S>, cam: &Camera<S>, n_samples: usize) -> LabelMap {
    let px = eval_pixels(model, cam, n_samples, |ev| argmax_lowest(&ev.sem) as u8);
    LabelMap { width: cam.width, height: cam.height, data: px }
}

pub fn render_depth<S: Scalar>(model: &SceneModel<S>, cam: &Camera<S>, n_samples: usize) -> FloatImage {
    let px = eval_pixels(model, cam, n_samples, |ev| ev.depth.to64() as f32);
    let mut img = FloatImage::new(cam.width, cam.height, 1);
    img.data = px;
    img
}

pub fn render_alpha<S: Scalar>(model: &SceneModel<S>, cam: &Camera<S>, n_samples: usize) -> FloatImage {
    let px = eval_pixels(model, cam, n_samples, |ev| ev.acc.to64() as f32);
    let mut img = FloatImage::new(cam.width, cam.height, 1);
    img.data = px;
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn const_density_model(raw: f64) -> SceneModel<f64> {
        let mut m = SceneModel::new(
            &ModelConfig { k: 1, sh_degree: 0, resolution: [4, 4, 4], ..ModelConfig::default() },
            1,
        )
        .unwrap();
        for v in m.density.values.iter_mut() {
            *v = raw;
        }
        m
    }

    #[test]
    fn midpoint_depths_and_last_interval() {
        let (ts, deltas) = sample_span(1.0f64, 3.0, 4, None);
        assert_eq!(ts, vec![1.25, 1.75, 2.25, 2.75]);
        assert_eq!(deltas, vec![0.5, 0.5, 0.5, 0.25]);
    }

    #[test]
    fn jittered_depths_stay_in_their_strata() {
        let jit = [0.0f64, 0.999, 0.25, 0.75];
        let (ts, _) = sample_span(0.0f64, 4.0, 4, Some(&jit));
        for (p, &t) in ts.iter().enumerate() {
            assert!(t >= p as f64 && t < (p + 1) as f64);
        }
    }

    /// Two equal intervals of constant density: frozen against
    /// w_p = exp(-p x)(1 - exp(-x)) with x = sigma*delta = 0.1.
    #[test]
    fn quadrature_weights_match_closed_form() {
        let w = quadrature_weights(&[0.2f64, 0.2], &[0.5, 0.5]);
        assert!((w[0] - 0.09516258196404048).abs() < 1e-15);
        assert!((w[1] - 0.08610666495797771).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_approaches_one_minus_transmittance() {
        let m = const_density_model(3.0);
        let sigma = softplus(3.0f64);
        let ev = eval_ray(
            &m,
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.0, 0.0, -1.0),
            256,
            None,
            AssignMode::Hard,
        );
        // Span is [2, 4]; midpoint sampling covers [t_0 + step/2, t_far], so
        // the weight sum telescopes to 1 - exp(-sigma * (span - step/2)).
        let covered = 2.0 - 2.0 / 256.0 / 2.0;
        let expect = 1.0 - (-sigma * covered).exp();
        assert!((ev.acc - expect).abs() < 1e-12, "acc {} vs {}", ev.acc, expect);
        assert!(ev.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn depth_of_opaque_wall_is_entry_distance() {
        let m = const_density_model(60.0);
        let ev = eval_ray(
            &m,
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.0, 0.0, -1.0),
            512,
            None,
            AssignMode::Hard,
        );
        // Mean termination depth sits ~1/sigma past the wall surface.
        assert!(ev.depth > 2.0 && ev.depth < 2.0 + 2.5 / softplus(60.0), "depth {}", ev.depth);
        assert!((ev.acc - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missed_ray_renders_black_background() {
        let m = const_density_model(3.0);
        let ev = eval_ray(
            &m,
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.0, 0.0, 1.0),
            16,
            None,
            AssignMode::Hard,
        );
        assert_eq!(ev.n, 0);
        assert_eq!(ev.composite, [0.0; 3]);
        assert_eq!(ev.acc, 0.0);
        assert_eq!(argmax_lowest(&ev.sem), 0);
    }

    #[test]
    fn relaxed_mode_at_base_point_matches_hard() {
        let mut m = const_density_model(0.5);
        // Non-trivial semantics and colors.
        let mut seed = 1u64;
        for v in m.semantics.values.iter_mut() {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0;
        }
        for v in m.colors[1].values.iter_mut() {
            *v = 1.3;
        }
        let base = m.clone();
        let o = Vec3::new(0.4, 0.2, 3.0);
        let d = Vec3::new(-0.1, -0.05, -1.0).normalized();
        let hard = eval_ray(&m, o, d, 32, None, AssignMode::Hard);
        let relaxed = eval_ray(&m, o, d, 32, None, AssignMode::Relaxed { base: &base });
        assert_eq!(hard.composite, relaxed.composite);
        assert_eq!(hard.assign, relaxed.assign);
        assert_eq!(
            hard.erroneous_composite(0, 1),
            relaxed.erroneous_composite(0, 1)
        );
    }

    #[test]
    fn tied_color_fields_make_erroneous_equal_composite_bitwise() {
        let mut m = const_density_model(1.0);
        let mut seed = 9u64;
        for v in m.semantics.values.iter_mut() {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0;
        }
        let tied: Vec<f64> = (0..m.colors[0].len())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        m.colors[0].values = tied.clone();
        m.colors[1].values = tied;
        let ev = eval_ray(
            &m,
            Vec3::new(0.1, -0.3, 3.0),
            Vec3::new(0.0, 0.1, -1.0).normalized(),
            64,
            None,
            AssignMode::Hard,
        );
        assert_eq!(ev.erroneous_composite(0, 1), ev.composite);
        assert_eq!(ev.erroneous_composite(1, 0), ev.composite);
    }

    #[test]
    fn label_map_follows_dominant_layer() {
        let mut m = const_density_model(3.0);
        for v in m.semantics.values.chunks_mut(2) {
            v[0] = -1.0;
            v[1] = 4.0;
        }
        let pose = Camera::look_at_pose(
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let cam = Camera::from_angle_x(8, 8, 0.6, pose).unwrap();
        let lm = render_label_map(&m, &cam, 32);
        assert!(lm.data.iter().all(|&l| l == 1));
    }
}
