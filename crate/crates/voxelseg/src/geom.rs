//! Minimal 3D linear algebra: vectors, rotation matrices, rigid transforms,
//! axis-aligned boxes. Hand-rolled so every type stays generic over [`Scalar`].

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }
    pub fn splat(v: S) -> Self {
        Self { x: v, y: v, z: v }
    }
    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(S::of(v[0]), S::of(v[1]), S::of(v[2]))
    }
    pub fn to_f64(self) -> [f64; 3] {
        [self.x.to64(), self.y.to64(), self.z.to64()]
    }
    pub fn cast<T: Scalar>(self) -> Vec3<T> {
        Vec3::from_f64(self.to_f64())
    }
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }
    pub fn normalized(self) -> Self {
        self / self.norm()
    }
    pub fn axis(self, i: usize) -> S {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
    pub fn min_by_axis(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }
    pub fn max_by_axis(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl<S: Scalar> std::ops::Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}
impl<S: Scalar> std::ops::Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}
impl<S: Scalar> std::ops::Mul<S> for Vec3<S> {
    type Output = Self;
    fn mul(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}
impl<S: Scalar> std::ops::Div<S> for Vec3<S> {
    type Output = Self;
    fn div(self, s: S) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}
impl<S: Scalar> std::ops::Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Column-major 3x3 matrix; columns are the images of the basis vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S> {
    pub cols: [Vec3<S>; 3],
}

impl<S: Scalar> Mat3<S> {
    pub fn identity() -> Self {
        Self {
            cols: [
                Vec3::new(S::one(), S::zero(), S::zero()),
                Vec3::new(S::zero(), S::one(), S::zero()),
                Vec3::new(S::zero(), S::zero(), S::one()),
            ],
        }
    }
    pub fn from_cols(c0: Vec3<S>, c1: Vec3<S>, c2: Vec3<S>) -> Self {
        Self { cols: [c0, c1, c2] }
    }
    pub fn col(&self, i: usize) -> Vec3<S> {
        self.cols[i]
    }
    /// Row-major array constructor (matches on-disk 4x4 pose layout).
    pub fn from_rows_f64(r: [[f64; 3]; 3]) -> Self {
        Self::from_cols(
            Vec3::from_f64([r[0][0], r[1][0], r[2][0]]),
            Vec3::from_f64([r[0][1], r[1][1], r[2][1]]),
            Vec3::from_f64([r[0][2], r[1][2], r[2][2]]),
        )
    }
    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        self.cols[0] * v.x + self.cols[1] * v.y + self.cols[2] * v.z
    }
    pub fn transpose(&self) -> Self {
        let c = &self.cols;
        Self::from_cols(
            Vec3::new(c[0].x, c[1].x, c[2].x),
            Vec3::new(c[0].y, c[1].y, c[2].y),
            Vec3::new(c[0].z, c[1].z, c[2].z),
        )
    }
    pub fn det(&self) -> S {
        self.cols[0].dot(self.cols[1].cross(self.cols[2]))
    }
    pub fn cast<T: Scalar>(&self) -> Mat3<T> {
        Mat3::from_cols(self.cols[0].cast(), self.cols[1].cast(), self.cols[2].cast())
    }
    /// Rodrigues rotation about a (non-zero) axis.
    pub fn from_axis_angle(axis: Vec3<S>, angle: S) -> Self {
        let u = axis.normalized();
        let (s, c) = (angle.sin(), angle.cos());
        let t = S::one() - c;
        Self::from_cols(
            Vec3::new(t * u.x * u.x + c, t * u.x * u.y + s * u.z, t * u.x * u.z - s * u.y),
            Vec3::new(t * u.x * u.y - s * u.z, t * u.y * u.y + c, t * u.y * u.z + s * u.x),
            Vec3::new(t * u.x * u.z + s * u.y, t * u.y * u.z - s * u.x, t * u.z * u.z + c),
        )
    }
    /// Max deviation of R^T R from identity; entry (i, j) is col_i . col_j.
    pub fn orthonormality_error(&self) -> S {
        let mut worst = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                let d = self.cols[i].dot(self.cols[j]) - if i == j { S::one() } else { S::zero() };
                worst = worst.max(d.abs());
            }
        }
        worst
    }
}

/// Rigid transform y = R x + t.
#[derive(Clone, Copy, Debug)]
pub struct Rigid<S> {
    pub rot: Mat3<S>,
    pub t: Vec3<S>,
}

impl<S: Scalar> Rigid<S> {
    pub fn identity() -> Self {
        Self { rot: Mat3::identity(), t: Vec3::splat(S::zero()) }
    }
    pub fn apply(&self, p: Vec3<S>) -> Vec3<S> {
        self.rot.mul_vec(p) + self.t
    }
    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self { rot: rt, t: -rt.mul_vec(self.t) }
    }
    pub fn cast<T: Scalar>(&self) -> Rigid<T> {
        Rigid { rot: self.rot.cast(), t: self.t.cast() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<S> {
    pub min: Vec3<S>,
    pub max: Vec3<S>,
}

impl<S: Scalar> Aabb<S> {
    pub fn new(min: Vec3<S>, max: Vec3<S>) -> Self {
        Self { min, max }
    }
    pub fn extent(&self) -> Vec3<S> {
        self.max - self.min
    }
    pub fn contains(&self, p: Vec3<S>) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }
    pub fn cast<T: Scalar>(&self) -> Aabb<T> {
        Aabb::new(self.min.cast(), self.max.cast())
    }
    /// Slab intersection with a ray; returns the entry/exit parameters with
    /// entry clamped to t_min. None when the ray misses or exits behind t_min.
    pub fn ray_span(&self, origin: Vec3<S>, dir: Vec3<S>, t_min: S) -> Option<(S, S)> {
        let mut t0 = t_min;
        let mut t1 = S::infinity();
        for a in 0..3 {
            let (o, d) = (origin.axis(a), dir.axis(a));
            let (lo, hi) = (self.min.axis(a), self.max.axis(a));
            if d.abs() < S::of(1e-12) {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = S::one() / d;
            let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}
