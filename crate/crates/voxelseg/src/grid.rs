//! Dense voxel grid of learnable parameters with trilinear interpolation and
//! analytic gradient scatter. Values live at cell centers; queries outside the
//! bounds clamp to the boundary cell, so the field is continuous everywhere.

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct VoxelField<S: Scalar> {
    res: [usize; 3],
    channels: usize,
    bounds: Aabb<S>,
    /// Learnable parameters, layout ((z*ny + y)*nx + x)*channels + c.
    pub values: Vec<S>,
    /// Gradient buffer, identical shape to `values`.
    pub grad: Vec<S>,
}

/// Interpolation context: the 8 corner cell offsets (pre-multiplied by the
/// channel count) and their trilinear weights. Recording it once lets the
/// forward sample and the backward scatter share one weight computation.
#[derive(Clone, Copy, Debug)]
pub struct TriCtx<S> {
    pub off: [usize; 8],
    pub w: [S; 8],
}

impl<S: Scalar> VoxelField<S> {
    pub fn new(res: [usize; 3], channels: usize, bounds: Aabb<S>, fill: S) -> Result<Self> {
        if res.iter().any(|&n| n == 0) || channels == 0 {
            return Err(Error::Config(format!(
                "voxel field needs positive resolution and channels, got {res:?} x{channels}"
            )));
        }
        let ext = bounds.extent();
        if !(ext.x > S::zero() && ext.y > S::zero() && ext.z > S::zero()) {
            return Err(Error::Config("voxel field bounds must have positive extent".into()));
        }
        let n = res[0] * res[1] * res[2] * channels;
        Ok(Self { res, channels, bounds, values: vec![fill; n], grad: vec![S::zero(); n] })
    }

    pub fn res(&self) -> [usize; 3] {
        self.res
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn bounds(&self) -> Aabb<S> {
        self.bounds
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values_and_grad_mut(&mut self) -> (&mut [S], &[S]) {
        (&mut self.values, &self.grad)
    }
    pub fn cell_offset(&self, x: usize, y: usize, z: usize) -> usize {
        (((z * self.res[1]) + y) * self.res[0] + x) * self.channels
    }
    /// World-space center of a cell.
    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3<S> {
        let ext = self.bounds.extent();
        let half = S::of(0.5);
        Vec3::new(
            self.bounds.min.x + ext.x * ((S::from_usize(x).unwrap() + half) / S::from_usize(self.res[0]).unwrap()),
            self.bounds.min.y + ext.y * ((S::from_usize(y).unwrap() + half) / S::from_usize(self.res[1]).unwrap()),
            self.bounds.min.z + ext.z * ((S::from_usize(z).unwrap() + half) / S::from_usize(self.res[2]).unwrap()),
        )
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn tri_ctx(&self, p: Vec3<S>) -> TriCtx<S> {
        let mut i0 = [0usize; 3];
        let mut f = [S::zero(); 3];
        let ext = self.bounds.extent();
        let half = S::of(0.5);
        for a in 0..3 {
            let n = self.res[a];
            if n == 1 {
                continue;
            }
            let nf = S::from_usize(n).unwrap();
            // Continuous cell coordinate; cell centers sit at integers.
            let u = (p.axis(a) - self.bounds.min.axis(a)) / ext.axis(a) * nf - half;
            let u = u.max(S::zero()).min(nf - S::one());
            let i = (u.floor().to_usize().unwrap_or(0)).min(n - 2);
            i0[a] = i;
            f[a] = u - S::from_usize(i).unwrap();
        }
        let step = [
            if self.res[0] == 1 { 0 } else { self.channels },
            if self.res[1] == 1 { 0 } else { self.res[0] * self.channels },
            if self.res[2] == 1 { 0 } else { self.res[0] * self.res[1] * self.channels },
        ];
        let base = self.cell_offset(i0[0], i0[1], i0[2]);
        let (fx, fy, fz) = (f[0], f[1], f[2]);
        let (gx, gy, gz) = (S::one() - fx, S::one() - fy, S::one() - fz);
        TriCtx {
            off: [
                base,
                base + step[0],
                base + step[1],
                base + step[0] + step[1],
                base + step[2],
                base + step[0] + step[2],
                base + step[1] + step[2],
                base + step[0] + step[1] + step[2],
            ],
            w: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        }
    }

    /// Trilinear sample of all channels into `out` (len >= channels).
    pub fn sample_into(&self, ctx: &TriCtx<S>, out: &mut [S]) {
        let c = self.channels;
        out[..c].iter_mut().for_each(|o| *o = S::zero());
        for corner in 0..8 {
            let w = ctx.w[corner];
            let v = &self.values[ctx.off[corner]..ctx.off[corner] + c];
            for (o, &x) in out[..c].iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }

    /// Convenience: sample at a world point.
    pub fn sample_point(&self, p: Vec3<S>, out: &mut [S]) {
        let ctx = self.tri_ctx(p);
        self.sample_into(&ctx, out);
    }

    /// Accumulate upstream channel gradients into the gradient buffer.
    pub fn scatter_grad(&mut self, ctx: &TriCtx<S>, upstream: &[S]) {
        let c = self.channels;
        for corner in 0..8 {
            let w = ctx.w[corner];
            let g = &mut self.grad[ctx.off[corner]..ctx.off[corner] + c];
            for (gslot, &u) in g.iter_mut().zip(&upstream[..c]) {
                *gslot += w * u;
            }
        }
    }
}
