//! Real spherical harmonics basis, degrees 0..=2, for view-dependent color.

use crate::geom::Vec3;
use crate::scalar::Scalar;

pub const MAX_DEGREE: usize = 2;

const C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];

pub const fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluate the basis for a unit direction into `out[..basis_count(degree)]`.
pub fn eval_basis<S: Scalar>(degree: usize, d: Vec3<S>, out: &mut [S]) {
    debug_assert!(degree <= MAX_DEGREE);
    out[0] = S::of(C0);
    if degree == 0 {
        return;
    }
    let (x, y, z) = (d.x, d.y, d.z);
    out[1] = S::of(-C1) * y;
    out[2] = S::of(C1) * z;
    out[3] = S::of(-C1) * x;
    if degree == 1 {
        return;
    }
    out[4] = S::of(C2[0]) * x * y;
    out[5] = S::of(C2[1]) * y * z;
    out[6] = S::of(C2[2]) * (S::of(2.0) * z * z - x * x - y * y);
    out[7] = S::of(C2[3]) * x * z;
    out[8] = S::of(C2[4]) * (x * x - y * y);
}
