//! The layered scene representation: one density grid, one (K+1)-channel
//! semantic logit grid, and K+1 spherical-harmonic color grids. Label 0 is
//! background, labels 1..=K are foreground objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::grid::VoxelField;
use crate::scalar::{argmax_lowest, sigmoid, softplus, Scalar};
use crate::sh;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of foreground objects; the model carries K+1 layers.
    pub k: usize,
    pub sh_degree: usize,
    pub resolution: [usize; 3],
    /// Defaults to `resolution` when absent.
    pub semantic_resolution: Option<[usize; 3]>,
    /// Defaults to `resolution` when absent; shared by all K+1 color grids.
    pub color_resolution: Option<[usize; 3]>,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 1,
            sh_degree: 0,
            resolution: [64, 64, 64],
            semantic_resolution: None,
            color_resolution: None,
            bounds_min: [-1.0, -1.0, -1.0],
            bounds_max: [1.0, 1.0, 1.0],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1 (no foreground to segment)".into()));
        }
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::Config(format!("sh_degree {} exceeds {}", self.sh_degree, sh::MAX_DEGREE)));
        }
        for a in 0..3 {
            if !(self.bounds_max[a] > self.bounds_min[a]) {
                return Err(Error::Config("bounds must have positive extent".into()));
            }
        }
        if self.resolution.iter().any(|&n| n == 0) {
            return Err(Error::Config("resolution axes must be positive".into()));
        }
        Ok(())
    }
}

/// Hard one-hot assignment of a point to one of the K+1 labels. The forward
/// value is one-hot(argmax); gradient flowing into the one-hot passes through
/// to the logits unchanged (straight-through construction).
#[derive(Clone, Debug)]
pub struct Assignment<S> {
    pub label: usize,
    pub one_hot: Vec<S>,
    pub logits: Vec<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldId {
    Density,
    Semantics,
    Color(usize),
}

#[derive(Clone, Debug)]
pub struct SceneModel<S: Scalar> {
    pub k: usize,
    pub sh_degree: usize,
    pub bounds: Aabb<S>,
    pub density: VoxelField<S>,
    pub semantics: VoxelField<S>,
    pub colors: Vec<VoxelField<S>>,
}

impl<S: Scalar> SceneModel<S> {
    /// Fresh model: density raw values at -4 (near-empty start, so geometry
    /// grows only where the photometric gradient asks for it),
    /// semantic logits i.i.d. uniform in [-1e-2, 1e-2] to break symmetry,
    /// color coefficients at 0 (mid-gray through the sigmoid).
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let bounds = Aabb::new(Vec3::from_f64(cfg.bounds_min), Vec3::from_f64(cfg.bounds_max));
        let k1 = cfg.k + 1;
        let b = sh::basis_count(cfg.sh_degree);
        let sem_res = cfg.semantic_resolution.unwrap_or(cfg.resolution);
        let col_res = cfg.color_resolution.unwrap_or(cfg.resolution);

        let density = VoxelField::new(cfg.resolution, 1, bounds, S::of(-4.0))?;
        let mut semantics = VoxelField::new(sem_res, k1, bounds, S::zero())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in semantics.values.iter_mut() {
            *v = S::of(rng.gen_range(-1e-2..=1e-2));
        }
        let colors = (0..k1)
            .map(|_| VoxelField::new(col_res, 3 * b, bounds, S::zero()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k: cfg.k, sh_degree: cfg.sh_degree, bounds, density, semantics, colors })
    }

    pub fn num_labels(&self) -> usize {
        self.k + 1
    }
    pub fn basis_count(&self) -> usize {
        sh::basis_count(self.sh_degree)
    }

    pub fn density_at(&self, x: Vec3<S>) -> S {
        let mut raw = [S::zero()];
        self.density.sample_point(x, &mut raw);
        softplus(raw[0])
    }

    pub fn semantic_logits_at(&self, x: Vec3<S>) -> Vec<S> {
        let mut out = vec![S::zero(); self.num_labels()];
        self.semantics.sample_point(x, &mut out);
        out
    }

    pub fn hard_assignment(&self, logits: Vec<S>) -> Assignment<S> {
        let label = argmax_lowest(&logits);
        let mut one_hot = vec![S::zero(); logits.len()];
        one_hot[label] = S::one();
        Assignment { label, one_hot, logits }
    }

    /// m_k(x): 1 where the point's argmax label is k, else 0.
    pub fn object_mask_at(&self, x: Vec3<S>, k: usize) -> S {
        debug_assert!(k <= self.k);
        let logits = self.semantic_logits_at(x);
        if argmax_lowest(&logits) == k {
            S::one()
        } else {
            S::zero()
        }
    }

    /// View-dependent color of layer k: SH contraction then per-channel sigmoid.
    pub fn color_at(&self, k: usize, x: Vec3<S>, d: Vec3<S>) -> [S; 3] {
        debug_assert!(k <= self.k);
        let b = self.basis_count();
        let mut basis = [S::zero(); sh::basis_count(sh::MAX_DEGREE)];
        sh::eval_basis(self.sh_degree, d, &mut basis);
        let mut coeffs = vec![S::zero(); 3 * b];
        self.colors[k].sample_point(x, &mut coeffs);
        let mut out = [S::zero(); 3];
        for ch in 0..3 {
            let mut z = S::zero();
            for (bi, &bv) in basis[..b].iter().enumerate() {
                z += coeffs[ch * b + bi] * bv;
            }
            out[ch] = sigmoid(z);
        }
        out
    }

    /// c(x) = c_{l(x)}(x, d): the color field selected by the hard assignment.
    pub fn composite_color_at(&self, x: Vec3<S>, d: Vec3<S>) -> [S; 3] {
        let label = argmax_lowest(&self.semantic_logits_at(x));
        self.color_at(label, x, d)
    }

    /// Deliberately erroneous composite: object i rendered with j's colors and
    /// everything else with i's.
    pub fn erroneous_color_at(&self, i: usize, j: usize, x: Vec3<S>, d: Vec3<S>) -> Result<[S; 3]> {
        if i == j {
            return Err(Error::Invalid(format!("erroneous composite requires i != j, got {i}")));
        }
        if i > self.k || j > self.k {
            return Err(Error::Invalid(format!("label out of range: ({i}, {j}) with k = {}", self.k)));
        }
        let m_i = self.object_mask_at(x, i);
        let ci = self.color_at(i, x, d);
        let cj = self.color_at(j, x, d);
        Ok([
            ci[0] + m_i * (cj[0] - ci[0]),
            ci[1] + m_i * (cj[1] - ci[1]),
            ci[2] + m_i * (cj[2] - ci[2]),
        ])
    }

    pub fn zero_grads(&mut self) {
        self.density.zero_grad();
        self.semantics.zero_grad();
        for c in self.colors.iter_mut() {
            c.zero_grad();
        }
    }

    pub fn field_ids(&self) -> Vec<FieldId> {
        let mut ids = vec![FieldId::Density, FieldId::Semantics];
        ids.extend((0..self.num_labels()).map(FieldId::Color));
        ids
    }
    pub fn field(&self, id: FieldId) -> &VoxelField<S> {
        match id {
            FieldId::Density => &self.density,
            FieldId::Semantics => &self.semantics,
            FieldId::Color(k) => &self.colors[k],
        }
    }
    pub fn field_mut(&mut self, id: FieldId) -> &mut VoxelField<S> {
        match id {
            FieldId::Density => &mut self.density,
            FieldId::Semantics => &mut self.semantics,
            FieldId::Color(k) => &mut self.colors[k],
        }
    }

    pub fn num_params(&self) -> usize {
        self.field_ids().iter().map(|&id| self.field(id).len()).sum()
    }

    /// Map a flat parameter index to (field, inner offset); flat order is
    /// density, semantics, colors 0..=K.
    pub fn param_slot(&self, flat: usize) -> (FieldId, usize) {
        let mut rest = flat;
        for id in self.field_ids() {
            let n = self.field(id).len();
            if rest < n {
                return (id, rest);
            }
            rest -= n;
        }
        panic!("flat parameter index {flat} out of range");
    }

    pub fn param(&self, flat: usize) -> S {
        let (id, off) = self.param_slot(flat);
        self.field(id).values[off]
    }
    pub fn param_grad(&self, flat: usize) -> S {
        let (id, off) = self.param_slot(flat);
        self.field(id).grad[off]
    }
    pub fn nudge_param(&mut self, flat: usize, delta: S) {
        let (id, off) = self.param_slot(flat);
        self.field_mut(id).values[off] += delta;
    }
}
