//! Procedural multi-view dataset generation: analytic ray-traced Lambertian
//! scenes of textured spheres and boxes over a finite textured ground slab,
//! with pixel-exact instance masks and cameras on a ring. Entirely
//! deterministic per seed, so generated datasets are byte-reproducible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::dataset::{SceneDataset, View};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::io::FloatImage;
use crate::types::LabelMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid { rgb: [f32; 3] },
    /// 3D checkerboard with cells of `scale` world units.
    Checker { a: [f32; 3], b: [f32; 3], scale: f64 },
    /// Two-octave value noise blending `a` and `b`.
    Noise { a: [f32; 3], b: [f32; 3], scale: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(flatten)]
    pub primitive: Primitive,
    pub texture: Texture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundSpec {
    /// Height of the walkable top surface.
    pub top_z: f64,
    pub thickness: f64,
    /// Half extent of the square slab in x and y.
    pub half_extent: f64,
    pub texture: Texture,
}

/// Four slabs rising from the ground's perimeter, flush with its edge. They
/// shade as background (instance 0) and let interior cameras see textured
/// surfaces in every direction instead of the black void behind the scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WallSpec {
    /// Top of the walls in world z; they start at the ground's top surface.
    pub top_z: f64,
    pub thickness: f64,
    pub texture: Texture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightSpec {
    /// Direction light travels (gets normalized).
    pub direction: [f64; 3],
    /// Ambient fraction in [0, 1]; the directional term scales the rest.
    pub ambient: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRing {
    pub n_train: usize,
    pub n_test: usize,
    pub radius: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub camera_angle_x: f64,
    /// Axis-aligned bounds the scene content must stay inside; reconstruction
    /// configs should use the same box.
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub objects: Vec<ObjectSpec>,
    pub ground: Option<GroundSpec>,
    pub walls: Option<WallSpec>,
    pub light: LightSpec,
    pub cameras: CameraRing,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Config("scene needs at least one object".into()));
        }
        if self.cameras.n_train + self.cameras.n_test < 3 {
            return Err(Error::Config("scene needs at least 3 cameras".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image resolution must be positive".into()));
        }
        if !(0.0..std::f64::consts::PI).contains(&self.camera_angle_x) || self.camera_angle_x == 0.0 {
            return Err(Error::Config("camera_angle_x must lie in (0, pi)".into()));
        }
        for d in 0..3 {
            if self.bounds_min[d] >= self.bounds_max[d] {
                return Err(Error::Config("scene bounds are empty".into()));
            }
        }
        if let Some(w) = &self.walls {
            let Some(g) = &self.ground else {
                return Err(Error::Config("walls need a ground to rise from".into()));
            };
            if w.thickness <= 0.0 || w.thickness >= g.half_extent {
                return Err(Error::Config("wall thickness must lie in (0, ground half_extent)".into()));
            }
            if w.top_z <= g.top_z {
                return Err(Error::Config("walls must rise above the ground surface".into()));
            }
            if w.top_z > self.bounds_max[2] {
                return Err(Error::Config("walls extend above the scene bounds".into()));
            }
        }
        let inside = |p: [f64; 3]| {
            (0..3).all(|d| p[d] >= self.bounds_min[d] && p[d] <= self.bounds_max[d])
        };
        for (i, o) in self.objects.iter().enumerate() {
            let (lo, hi) = match &o.primitive {
                Primitive::Sphere { center, radius } => {
                    if *radius <= 0.0 {
                        return Err(Error::Config(format!("object {i} has nonpositive radius")));
                    }
                    (
                        [center[0] - radius, center[1] - radius, center[2] - radius],
                        [center[0] + radius, center[1] + radius, center[2] + radius],
                    )
                }
                Primitive::Box { center, half } => {
                    if half.iter().any(|&h| h <= 0.0) {
                        return Err(Error::Config(format!("object {i} has nonpositive extent")));
                    }
                    (
                        [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
                        [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
                    )
                }
            };
            if !inside(lo) || !inside(hi) {
                return Err(Error::Config(format!("object {i} extends outside the scene bounds")));
            }
        }
        Ok(())
    }
}

/// Deterministic lattice hash to [0, 1).
fn lattice_hash(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ix as u64, iy as u64, iz as u64] {
        h ^= v.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h = h.rotate_left(27).wrapping_mul(0x94d0_49bb_1331_11eb);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of trilinear value noise.
fn value_noise(p: Vec3<f64>, seed: u64) -> f64 {
    let base = [p.x.floor(), p.y.floor(), p.z.floor()];
    let f = [smooth(p.x - base[0]), smooth(p.y - base[1]), smooth(p.z - base[2])];
    let (ix, iy, iz) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 0 { 1.0 - f[0] } else { f[0] })
                    * (if dy == 0 { 1.0 - f[1] } else { f[1] })
                    * (if dz == 0 { 1.0 - f[2] } else { f[2] });
                acc += w * lattice_hash(ix + dx as i64, iy + dy as i64, iz + dz as i64, seed);
            }
        }
    }
    acc
}

impl Texture {
    fn albedo(&self, p: Vec3<f64>, seed: u64) -> [f32; 3] {
        match self {
            Texture::Solid { rgb } => *rgb,
            Texture::Checker { a, b, scale } => {
                let parity = ((p.x / scale).floor() + (p.y / scale).floor() + (p.z / scale).floor())
                    .rem_euclid(2.0);
                if parity < 1.0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Noise { a, b, scale } => {
                let q = Vec3::new(p.x / scale, p.y / scale, p.z / scale);
                let t = (0.7 * value_noise(q, seed)
                    + 0.3 * value_noise(Vec3::new(q.x * 2.0 + 31.7, q.y * 2.0, q.z * 2.0), seed ^ 0xabcd))
                    .clamp(0.0, 1.0) as f32;
                [
                    a[0] + t * (b[0] - a[0]),
                    a[1] + t * (b[1] - a[1]),
                    a[2] + t * (b[2] - a[2]),
                ]
            }
        }
    }
}

struct Hit {
    t: f64,
    normal: Vec3<f64>,
    /// 0 = ground, 1..=K = objects.
    instance: u8,
    albedo: [f32; 3],
}

fn hit_sphere(origin: Vec3<f64>, dir: Vec3<f64>, center: Vec3<f64>, radius: f64) -> Option<(f64, Vec3<f64>)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
    if t <= 1e-9 {
        return None;
    }
    let n = (origin + dir * t - center).normalized();
    Some((t, n))
}

fn hit_box(
    origin: Vec3<f64>,
    dir: Vec3<f64>,
    center: Vec3<f64>,
    half: [f64; 3],
) -> Option<(f64, Vec3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    for d in 0..3 {
        let o = origin.axis(d) - center.axis(d);
        let v = dir.axis(d);
        if v.abs() < 1e-12 {
            if o.abs() > half[d] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((-half[d] - o) / v, (half[d] - o) / v);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t0 {
            t0 = a;
            axis = d;
        }
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    if t0 <= 1e-9 {
        return None;
    }
    let mut n = [0.0; 3];
    let entry = origin.axis(axis) + dir.axis(axis) * t0 - center.axis(axis);
    n[axis] = entry.signum();
    Some((t0, Vec3::new(n[0], n[1], n[2])))
}

fn trace(spec: &SceneSpec, origin: Vec3<f64>, dir: Vec3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |t: f64, normal: Vec3<f64>, instance: u8, tex: &Texture, tex_seed: u64| {
        if best.as_ref().map_or(true, |h| t < h.t) {
            let p = origin + dir * t;
            best = Some(Hit { t, normal, instance, albedo: tex.albedo(p, tex_seed) });
        }
    };
    if let Some(g) = &spec.ground {
        let center = Vec3::new(0.0, 0.0, g.top_z - g.thickness * 0.5);
        let half = [g.half_extent, g.half_extent, g.thickness * 0.5];
        if let Some((t, n)) = hit_box(origin, dir, center, half) {
            consider(t, n, 0, &g.texture, spec.seed);
        }
        if let Some(w) = &spec.walls {
            let hz = (w.top_z - g.top_z) * 0.5;
            let cz = (w.top_z + g.top_z) * 0.5;
            let he = g.half_extent;
            let t2 = w.thickness * 0.5;
            let slabs = [
                (Vec3::new(he - t2, 0.0, cz), [t2, he, hz]),
                (Vec3::new(t2 - he, 0.0, cz), [t2, he, hz]),
                (Vec3::new(0.0, he - t2, cz), [he, t2, hz]),
                (Vec3::new(0.0, t2 - he, cz), [he, t2, hz]),
            ];
            for (c, h) in slabs {
                if let Some((t, n)) = hit_box(origin, dir, c, h) {
                    consider(t, n, 0, &w.texture, spec.seed);
                }
            }
        }
    }
    for (i, o) in spec.objects.iter().enumerate() {
        let found = match &o.primitive {
            Primitive::Sphere { center, radius } => {
                hit_sphere(origin, dir, Vec3::from_f64(*center), *radius)
            }
            Primitive::Box { center, half } => hit_box(origin, dir, Vec3::from_f64(*center), *half),
        };
        if let Some((t, n)) = found {
            consider(t, n, (i + 1) as u8, &o.texture, spec.seed.wrapping_add(i as u64 + 1));
        }
    }
    best
}

fn shade(spec: &SceneSpec, hit: &Hit) -> [f32; 3] {
    let l = Vec3::from_f64(spec.light.direction).normalized() * -1.0;
    let diffuse = hit.normal.dot(l).max(0.0) as f32;
    let ambient = spec.light.ambient;
    let mut rgb = [0.0f32; 3];
    for c in 0..3 {
        // Quantize to the 8-bit grid so PNG round trips are exact.
        let v = (hit.albedo[c] * (ambient + (1.0 - ambient) * diffuse)).clamp(0.0, 1.0);
        rgb[c] = (v * 255.0).round() / 255.0;
    }
    rgb
}

fn ring_camera(spec: &SceneSpec, index: usize, total: usize) -> Result<Camera<f64>> {
    let phi = 2.0 * std::f64::consts::PI * index as f64 / total as f64;
    let elev = spec.cameras.elevation_deg.to_radians();
    let r = spec.cameras.radius;
    let eye = Vec3::new(r * elev.cos() * phi.cos(), r * elev.cos() * phi.sin(), r * elev.sin());
    let pose = Camera::<f64>::look_at_pose(eye, Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0))?;
    Camera::from_angle_x(spec.width, spec.height, spec.camera_angle_x, pose)
}

fn render_view(spec: &SceneSpec, camera: &Camera<f64>, name: String) -> View {
    let mut image = FloatImage::new(spec.width, spec.height, 3);
    let mut mask = LabelMap::new(spec.width, spec.height, 0);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let ray = camera.ray(u, v);
            if let Some(hit) = trace(spec, ray.origin, ray.dir) {
                image.pixel_mut(u, v).copy_from_slice(&shade(spec, &hit));
                mask.set(u, v, hit.instance);
            }
        }
    }
    View { name, camera: camera.clone(), image, mask: Some(mask) }
}

/// Renders the full dataset: `n_train + n_test` cameras evenly spaced on the
/// ring, with the test views drawn from evenly spread ring positions.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let total = spec.cameras.n_train + spec.cameras.n_test;
    let test_set: Vec<usize> =
        (0..spec.cameras.n_test).map(|j| j * total / spec.cameras.n_test.max(1)).collect();
    let cameras: Vec<Camera<f64>> =
        (0..total).map(|i| ring_camera(spec, i, total)).collect::<Result<_>>()?;
    let views: Vec<View> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, c)| render_view(spec, c, format!("r_{i:03}")))
        .collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, v) in views.into_iter().enumerate() {
        if test_set.contains(&i) {
            test.push(v);
        } else {
            train.push(v);
        }
    }
    Ok(SceneDataset { camera_angle_x: spec.camera_angle_x, train, test })
}
