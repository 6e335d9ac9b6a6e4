//! Procedural shapes: unions of randomly posed surface primitives, centered
//! and scaled to a unit bounding-box diagonal.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pointcloud::{PointCloud, RigidTransform, Transform3};
use crate::{Error, Result, Vec3};

pub const DEFAULT_SHAPE_POINTS: usize = 256;

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Box(Vec3),
    Ellipsoid(Vec3),
    Cylinder { r: f64, h: f64 },
    Torus { big: f64, small: f64 },
    Cone { r: f64, h: f64 },
}

impl Primitive {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let kind = rng.random_range(0..5);
        let mut s = || rng.random_range(0.2..1.0);
        match kind {
            0 => Self::Box(Vec3::new(s(), s(), s())),
            1 => Self::Ellipsoid(Vec3::new(s(), s(), s())),
            2 => Self::Cylinder { r: s() * 0.6, h: s() },
            3 => {
                let big = s() * 0.7;
                Self::Torus { big, small: big * 0.4 }
            }
            _ => Self::Cone { r: s() * 0.6, h: s() },
        }
    }

    /// A point on the surface, roughly uniform in parameter space.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let u: f64 = rng.random_range(0.0..1.0);
        let v: f64 = rng.random_range(0.0..1.0);
        match *self {
            Self::Box(e) => {
                let face = rng.random_range(0..6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = Vec3::zeros();
                p[axis] = sign * e[axis];
                p[a] = (2.0 * u - 1.0) * e[a];
                p[b] = (2.0 * v - 1.0) * e[b];
                p
            }
            Self::Ellipsoid(e) => {
                let z = 2.0 * u - 1.0;
                let r = (1.0 - z * z).sqrt();
                let t = TAU * v;
                Vec3::new(e.x * r * t.cos(), e.y * r * t.sin(), e.z * z)
            }
            Self::Cylinder { r, h } => {
                let t = TAU * v;
                Vec3::new(r * t.cos(), r * t.sin(), (2.0 * u - 1.0) * h)
            }
            Self::Torus { big, small } => {
                let (a, b) = (TAU * u, TAU * v);
                let w = big + small * b.cos();
                Vec3::new(w * a.cos(), w * a.sin(), small * b.sin())
            }
            Self::Cone { r, h } => {
                let t = TAU * v;
                let rr = r * u.sqrt();
                Vec3::new(rr * t.cos(), rr * t.sin(), h * (1.0 - u.sqrt()))
            }
        }
    }
}

/// A union of two to four primitives with `points` samples; deterministic per
/// `seed`.
pub fn procedural_shape(seed: u64, points: usize) -> Result<PointCloud> {
    if points < 4 {
        return Err(Error::InvalidInput(format!("a shape needs at least 4 points, got {points}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<(Primitive, RigidTransform, f64)> = (0..rng.random_range(2..=4))
        .map(|_| {
            let prim = Primitive::random(&mut rng);
            let pose = RigidTransform::from_euler_xyz_deg(
                Vec3::from_fn(|_, _| rng.random_range(-180.0..180.0)),
                Vec3::from_fn(|_, _| rng.random_range(-0.8..0.8)),
            );
            (prim, pose, rng.random_range(0.5..1.5))
        })
        .collect();
    let total: f64 = parts.iter().map(|p| p.2).sum();
    let mut pts = Vec::with_capacity(points);
    for _ in 0..points {
        let mut pick = rng.random_range(0.0..total);
        let mut part = &parts[parts.len() - 1];
        for p in &parts {
            if pick < p.2 {
                part = p;
                break;
            }
            pick -= p.2;
        }
        pts.push(part.1.apply_point(&part.0.sample(&mut rng)));
    }
    let cloud = PointCloud::new(pts, format!("shape_{seed}"))?;
    let (lo, hi) = cloud.bounds();
    let mid = (lo + hi) * 0.5;
    let scale = 1.0 / (hi - lo).norm();
    let pts = cloud.points().iter().map(|p| (p - mid) * scale).collect();
    PointCloud::new(pts, format!("shape_{seed}"))
}
