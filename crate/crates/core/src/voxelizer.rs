//! Differentiable point-to-voxel conversion.
//!
//! Each voxel is treated as a sphere of radius `r = s / (2h)` around its
//! center. A point at distance `d = |p - o| - r` from the sphere surface lies
//! inside with probability `sigmoid(-sign(d) d^2 / sigma)`, and a voxel's value
//! is the probability that at least one point lies inside it:
//! `v = 1 - prod_j (1 - p_j)`.
//!
//! Factors below `cutoff` are skipped in both passes. Points enter the product
//! in lexicographic order of their coordinates, which makes the result
//! bit-identical under any permutation of the input cloud.

use std::fmt::Write as _;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::lrf::LrfFrame;
use crate::pointcloud::{PointCloud, SpatialIndex};
use crate::{Error, Real, Result, Vec3};

pub const DEFAULT_SHARPNESS: f64 = 1e-3;
pub const DEFAULT_CUTOFF: f64 = 1e-6;
/// Values at or above this are written by [`VoxelGrid::dump_text`].
pub const DUMP_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    pub center: Vec3,
    pub frame: LrfFrame,
    /// Edge length `s` of the grid.
    pub support: f64,
    /// Cells per edge `h`.
    pub resolution: usize,
    /// `sigma` in the point-in-voxel probability.
    pub sharpness: f64,
    pub cutoff: f64,
}

impl VoxelGridSpec {
    /// Grid centered on the frame origin with default sharpness and cutoff.
    pub fn new(frame: LrfFrame, support: f64, resolution: usize) -> Self {
        Self {
            center: frame.center,
            frame,
            support,
            resolution,
            sharpness: DEFAULT_SHARPNESS,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.support > 0.0) || !self.support.is_finite() {
            return Err(Error::InvalidInput(format!("support must be positive, got {}", self.support)));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidInput(format!("resolution must be at least 2, got {}", self.resolution)));
        }
        if !(self.sharpness > 0.0) || !self.sharpness.is_finite() {
            return Err(Error::InvalidInput(format!("sharpness must be positive, got {}", self.sharpness)));
        }
        if !(0.0..=1e-3).contains(&self.cutoff) {
            return Err(Error::InvalidInput(format!("cutoff must lie in [0, 1e-3], got {}", self.cutoff)));
        }
        Ok(())
    }

    pub fn cell(&self) -> f64 {
        self.support / self.resolution as f64
    }

    /// Voxel sphere radius `s / (2h)`.
    pub fn radius(&self) -> f64 {
        self.support / (2.0 * self.resolution as f64)
    }

    /// Largest sphere-surface distance at which a point can still reach the cutoff.
    pub fn influence(&self) -> f64 {
        if self.cutoff > 0.0 {
            (self.sharpness * (1.0 / self.cutoff).ln()).sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Radius around the grid center that contains every contributing point.
    pub fn query_radius(&self) -> f64 {
        0.5 * self.support * 3f64.sqrt() + self.radius() + self.influence()
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Flat index of voxel `(a, b, c)`.
    pub fn index(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.resolution + b) * self.resolution + c
    }

    /// Center of voxel index `i` along one axis, in grid coordinates.
    fn axis_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.cell() - 0.5 * self.support
    }

    /// Derivative of [`Self::axis_center`] with respect to the support.
    fn axis_center_ds(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.resolution as f64 - 0.5
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        self.frame.axes.transpose() * (p - self.center)
    }
}

/// Voxel centers in world coordinates, indexed like the grid values.
pub fn voxel_centers(spec: &VoxelGridSpec) -> Vec<Vec3> {
    let h = spec.resolution;
    let mut out = Vec::with_capacity(spec.voxel_count());
    for a in 0..h {
        for b in 0..h {
            for c in 0..h {
                let local = Vec3::new(spec.axis_center(a), spec.axis_center(b), spec.axis_center(c));
                out.push(spec.center + spec.frame.axes * local);
            }
        }
    }
    out
}

/// `(sigmoid(u), 1 - sigmoid(u))` without cancellation.
fn sigmoid_pair(u: f64) -> (f64, f64) {
    if u >= 0.0 {
        let e = (-u).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = u.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

/// Probability that `point` lies in the voxel sphere at `voxel_center`.
pub fn point_in_voxel_prob(point: &Vec3, voxel_center: &Vec3, r: f64, sigma: f64) -> f64 {
    let d = (point - voxel_center).norm() - r;
    sigmoid_pair(-d * d.abs() / sigma).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    values: Vec<f64>,
    spec: VoxelGridSpec,
}

impl VoxelGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn value(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[self.spec.index(a, b, c)]
    }

    /// `[1, h, h, h]` network input.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let h = self.spec.resolution;
        Tensor::new(vec![1, h, h, h], self.values.iter().map(|&v| T::lit(v)).collect())
            .expect("grid holds h^3 values")
    }

    /// Lines `h a b c value` for every voxel with value at least 0.01.
    pub fn dump_text(&self) -> String {
        let h = self.spec.resolution;
        let mut s = String::new();
        for a in 0..h {
            for b in 0..h {
                for c in 0..h {
                    let v = self.value(a, b, c);
                    if v >= DUMP_THRESHOLD {
                        let _ = writeln!(s, "{h} {a} {b} {c} {v}");
                    }
                }
            }
        }
        s
    }
}

/// Gradients of `sum_k upstream_k v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGradients {
    pub d_support: f64,
    /// One entry per input point, in input order.
    pub d_points: Vec<Vec3>,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
struct Voxelization {
    spec: VoxelGridSpec,
    /// Candidate points in grid coordinates, canonical order.
    local: Vec<Vec3>,
    /// Input index of each candidate.
    origin: Vec<usize>,
    /// Product of the non-zero factors `1 - p` per voxel.
    prod: Vec<f64>,
    /// Number of factors that are exactly zero per voxel.
    zeros: Vec<u32>,
    values: Vec<f64>,
}

struct Contribution {
    voxel: usize,
    idx: [usize; 3],
    p: f64,
    q: f64,
    /// Offset from voxel center to the point.
    offset: Vec3,
    dist: f64,
}

impl Voxelization {
    fn run(points: &[Vec3], candidates: impl IntoIterator<Item = usize>, spec: &VoxelGridSpec) -> Result<Self> {
        spec.validate()?;
        let reach = spec.radius() + spec.influence();
        let half = 0.5 * spec.support + reach;
        let mut cand: Vec<usize> = candidates
            .into_iter()
            .filter(|&i| {
                let l = spec.to_local(&points[i]);
                l.x.abs() <= half && l.y.abs() <= half && l.z.abs() <= half
            })
            .collect();
        cand.sort_by(|&a, &b| {
            let (p, q) = (&points[a], &points[b]);
            p.x.total_cmp(&q.x)
                .then(p.y.total_cmp(&q.y))
                .then(p.z.total_cmp(&q.z))
                .then(a.cmp(&b))
        });
        let local: Vec<Vec3> = cand.iter().map(|&i| spec.to_local(&points[i])).collect();
        let n = spec.voxel_count();
        let mut vox = Self {
            spec: *spec,
            local,
            origin: cand,
            prod: vec![1.0; n],
            zeros: vec![0; n],
            values: vec![0.0; n],
        };
        for j in 0..vox.local.len() {
            let (prod, zeros) = (&mut vox.prod, &mut vox.zeros);
            Self::contributions(spec, &vox.local[j], |c| {
                if c.q == 0.0 {
                    zeros[c.voxel] += 1;
                } else {
                    prod[c.voxel] *= c.q;
                }
            });
        }
        for k in 0..n {
            let rest = if vox.zeros[k] > 0 { 0.0 } else { vox.prod[k] };
            vox.values[k] = (1.0 - rest).clamp(0.0, 1.0);
        }
        Ok(vox)
    }

    /// Visits every voxel that `x` (grid coordinates) reaches with `p >= cutoff`.
    fn contributions(spec: &VoxelGridSpec, x: &Vec3, mut f: impl FnMut(Contribution)) {
        let h = spec.resolution;
        let r = spec.radius();
        let reach = r + spec.influence();
        let cell = spec.cell();
        let range = |v: f64| -> (usize, usize) {
            if !reach.is_finite() {
                return (0, h - 1);
            }
            let slack = reach * (1.0 + 1e-9) + 1e-12;
            let lo = ((v - slack + 0.5 * spec.support) / cell - 0.5).ceil();
            let hi = ((v + slack + 0.5 * spec.support) / cell - 0.5).floor();
            let lo = lo.max(0.0);
            let hi = hi.min((h - 1) as f64);
            if lo > hi {
                (1, 0)
            } else {
                (lo as usize, hi as usize)
            }
        };
        let (a0, a1) = range(x.x);
        let (b0, b1) = range(x.y);
        let (c0, c1) = range(x.z);
        if a0 > a1 || b0 > b1 || c0 > c1 {
            return;
        }
        for a in a0..=a1 {
            let ox = x.x - spec.axis_center(a);
            for b in b0..=b1 {
                let oy = x.y - spec.axis_center(b);
                for c in c0..=c1 {
                    let oz = x.z - spec.axis_center(c);
                    let offset = Vec3::new(ox, oy, oz);
                    let dist = offset.norm();
                    let d = dist - r;
                    let (p, q) = sigmoid_pair(-d * d.abs() / spec.sharpness);
                    if p < spec.cutoff {
                        continue;
                    }
                    f(Contribution {
                        voxel: (a * h + b) * h + c,
                        idx: [a, b, c],
                        p,
                        q,
                        offset,
                        dist,
                    });
                }
            }
        }
    }

    fn grid(&self) -> VoxelGrid {
        VoxelGrid {
            values: self.values.clone(),
            spec: self.spec,
        }
    }

    /// `(d_support, d_local per candidate)`.
    fn backward(&self, upstream: &[f64], want_points: bool) -> (f64, Vec<Vec3>) {
        let spec = &self.spec;
        let r = spec.radius();
        let dr_ds = 1.0 / (2.0 * spec.resolution as f64);
        let mut d_s = 0.0;
        let mut d_local = vec![Vec3::zeros(); if want_points { self.local.len() } else { 0 }];
        for (j, x) in self.local.iter().enumerate() {
            let mut acc = Vec3::zeros();
            Self::contributions(spec, x, |c| {
                let g = upstream[c.voxel];
                if g == 0.0 {
                    return;
                }
                // product of the other factors
                let others = match (self.zeros[c.voxel], c.q == 0.0) {
                    (0, _) => self.prod[c.voxel] / c.q,
                    (1, true) => self.prod[c.voxel],
                    _ => 0.0,
                };
                if others == 0.0 {
                    return;
                }
                let d = c.dist - r;
                let dp_dd = c.p * c.q * (-2.0 * d.abs() / spec.sharpness);
                let coef = g * others * dp_dd;
                let unit = if c.dist > 0.0 { c.offset / c.dist } else { Vec3::zeros() };
                let do_ds = Vec3::new(
                    spec.axis_center_ds(c.idx[0]),
                    spec.axis_center_ds(c.idx[1]),
                    spec.axis_center_ds(c.idx[2]),
                );
                d_s += coef * (-unit.dot(&do_ds) - dr_ds);
                acc += unit * coef;
            });
            if want_points {
                d_local[j] = acc;
            }
        }
        (d_s, d_local)
    }
}

/// Occupancy grid of `cloud` under `spec`.
pub fn voxelize(cloud: &PointCloud, spec: &VoxelGridSpec) -> Result<VoxelGrid> {
    Ok(Voxelization::run(cloud.points(), 0..cloud.len(), spec)?.grid())
}

/// Same result as [`voxelize`], with candidates pre-filtered by a spatial index.
pub fn voxelize_indexed(index: &SpatialIndex, spec: &VoxelGridSpec) -> Result<VoxelGrid> {
    Ok(voxelize_indexed_state(index, spec)?.grid())
}

fn voxelize_indexed_state(index: &SpatialIndex, spec: &VoxelGridSpec) -> Result<Voxelization> {
    spec.validate()?;
    let points: Vec<Vec3> = (0..index.len()).map(|i| *index.point(i)).collect();
    let q = spec.query_radius();
    if q.is_finite() {
        let cand = index.radius_query(&spec.center, q)?;
        Voxelization::run(&points, cand, spec)
    } else {
        Voxelization::run(&points, 0..points.len(), spec)
    }
}

/// Gradients of `sum_k upstream_k v_k` with respect to the support and to
/// every point of `cloud`.
pub fn voxelize_backward(cloud: &PointCloud, spec: &VoxelGridSpec, upstream: &[f64]) -> Result<VoxelGradients> {
    if upstream.len() != spec.voxel_count() {
        return Err(Error::Shape(format!(
            "upstream has {} values, grid has {}",
            upstream.len(),
            spec.voxel_count()
        )));
    }
    let vox = Voxelization::run(cloud.points(), 0..cloud.len(), spec)?;
    let (d_support, d_local) = vox.backward(upstream, true);
    let mut d_points = vec![Vec3::zeros(); cloud.len()];
    for (j, g) in d_local.into_iter().enumerate() {
        // x_local = A^T (p - c), so dL/dp = A dL/dx_local
        d_points[vox.origin[j]] = spec.frame.axes * g;
    }
    Ok(VoxelGradients { d_support, d_points })
}

struct VoxelizeOp {
    vox: Voxelization,
}

impl<T: Real> CustomOp<T> for VoxelizeOp {
    fn name(&self) -> &str {
        "voxelize"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g: Vec<f64> = grad_out.iter().map(|v| v.to_f64_lossy()).collect();
        let (d_s, _) = self.vox.backward(&g, false);
        // s = exp(log s)
        Ok(vec![Some(vec![T::lit(d_s * self.vox.spec.support)])])
    }
}

/// Records voxelization on a tape as a function of `log_support` (a
/// one-element tensor); `spec.support` is replaced by `exp(log_support)`.
/// Output shape is `[1, h, h, h]`.
pub fn voxelize_on_tape<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    log_support: Var,
    index: &SpatialIndex,
    spec: &VoxelGridSpec,
) -> Result<Var> {
    let ls = tape.value(log_support);
    if ls.len() != 1 {
        return Err(Error::Shape(format!("log_support must hold one value, got {}", ls.len())));
    }
    let mut spec = *spec;
    spec.support = ls.data()[0].to_f64_lossy().exp();
    let vox = voxelize_indexed_state(index, &spec)?;
    let out = vox.grid().to_tensor::<T>();
    Ok(tape.custom(&[log_support], out, Box::new(VoxelizeOp { vox })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{RigidTransform, Transform3};
    use crate::Mat3;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_at_origin(s: f64, h: usize) -> VoxelGridSpec {
        VoxelGridSpec::new(LrfFrame::identity(Vec3::zeros(), 0.3), s, h)
    }

    fn random_frame(rng: &mut ChaCha8Rng, center: Vec3) -> LrfFrame {
        let q = RigidTransform::from_euler_xyz_deg(Vec3::from_fn(|_, _| rng.random_range(-180.0..180.0)), Vec3::zeros());
        LrfFrame {
            axes: *q.rotation(),
            center,
            radius: 0.3,
        }
    }

    #[test]
    fn lattice_arithmetic() {
        let spec = spec_at_origin(1.0, 2);
        let c = voxel_centers(&spec);
        assert_eq!(c.len(), 8);
        for p in &c {
            for k in 0..3 {
                assert_eq!(p[k].abs(), 0.25);
            }
        }
        assert_eq!(c[spec.index(1, 0, 1)], Vec3::new(0.25, -0.25, 0.25));
        assert_eq!(spec_at_origin(1.0, 16).radius(), 0.03125);
    }

    #[test]
    fn centers_rotate_with_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let center = Vec3::new(0.3, -1.0, 2.0);
        let base = VoxelGridSpec::new(LrfFrame::identity(center, 0.3), 0.7, 4);
        let f = random_frame(&mut rng, center);
        let rotated = VoxelGridSpec::new(f, 0.7, 4);
        for (a, b) in voxel_centers(&base).iter().zip(voxel_centers(&rotated)) {
            assert!((f.axes * (a - center) + center - b).amax() < 1e-12);
        }
    }

    #[test]
    fn probability_examples() {
        let o = Vec3::zeros();
        assert_eq!(point_in_voxel_prob(&Vec3::new(0.1, 0.0, 0.0), &o, 0.1, 1e-3), 0.5);
        let want = 1.0 / (1.0 + (-0.9765625f64).exp());
        let got = point_in_voxel_prob(&o, &o, 0.03125, 1e-3);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.72637).abs() < 1e-4);
        assert!(point_in_voxel_prob(&Vec3::new(0.3125, 0.0, 0.0), &o, 0.03125, 1e-3) < 1e-30);
    }

    #[test]
    fn product_rule_examples() {
        // points exactly on the sphere of voxel 0 (p = 0.5) of a coarse grid
        let mut spec = spec_at_origin(2.0, 2);
        spec.sharpness = 1e-4;
        let o = voxel_centers(&spec)[0];
        let r = spec.radius();
        let one = PointCloud::new(vec![o + Vec3::new(r, 0.0, 0.0)], "one").unwrap();
        let g = voxelize(&one, &spec).unwrap();
        assert_eq!(g.values()[0], 0.5);
        let two = PointCloud::new(vec![o + Vec3::new(r, 0.0, 0.0), o + Vec3::new(0.0, -r, 0.0)], "two").unwrap();
        let g = voxelize(&two, &spec).unwrap();
        assert_eq!(g.values()[0], 0.75);
        let far = PointCloud::new(vec![Vec3::new(50.0, 0.0, 0.0)], "far").unwrap();
        assert!(voxelize(&far, &spec).unwrap().values().iter().all(|&v| v == 0.0));
    }

    fn random_patch(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> PointCloud {
        PointCloud::new((0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-spread..spread))).collect(), "r").unwrap()
    }

    #[test]
    fn permutation_invariance_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for cutoff in [0.0, 1e-6] {
            let cloud = random_patch(&mut rng, 60, 0.3);
            let mut spec = spec_at_origin(0.5, 6);
            spec.cutoff = cutoff;
            let base = voxelize(&cloud, &spec).unwrap();
            let mut pts = cloud.points().to_vec();
            for _ in 0..5 {
                pts.shuffle(&mut rng);
                let shuffled = PointCloud::new(pts.clone(), "s").unwrap();
                assert_eq!(voxelize(&shuffled, &spec).unwrap(), base);
            }
        }
    }

    #[test]
    fn indexed_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_patch(&mut rng, 400, 1.5);
        let idx = SpatialIndex::build(&cloud).unwrap();
        let mut spec = VoxelGridSpec::new(random_frame(&mut rng, Vec3::new(0.2, 0.1, 0.0)), 0.35, 8);
        spec.center = spec.frame.center;
        assert_eq!(voxelize_indexed(&idx, &spec).unwrap(), voxelize(&cloud, &spec).unwrap());
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let cloud = random_patch(&mut rng, 50, 0.3);
            let f = random_frame(&mut rng, Vec3::new(0.05, 0.0, -0.05));
            let spec = VoxelGridSpec::new(f, 0.4, 8);
            let base = voxelize(&cloud, &spec).unwrap();
            let q = RigidTransform::from_euler_xyz_deg(
                Vec3::from_fn(|_, _| rng.random_range(-180.0..180.0)),
                Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            );
            let moved = crate::pointcloud::apply_transform(&q, &cloud);
            let frame = LrfFrame {
                axes: q.rotation() * f.axes,
                center: q.apply_point(&f.center),
                radius: 0.3,
            };
            let g = voxelize(&moved, &VoxelGridSpec::new(frame, 0.4, 8)).unwrap();
            for (a, b) in g.values().iter().zip(base.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adding_points_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = spec_at_origin(0.5, 6);
        let mut pts = random_patch(&mut rng, 10, 0.3).points().to_vec();
        let mut prev = voxelize(&PointCloud::new(pts.clone(), "m").unwrap(), &spec).unwrap();
        for _ in 0..10 {
            pts.push(Vec3::from_fn(|_, _| rng.random_range(-0.3..0.3)));
            let next = voxelize(&PointCloud::new(pts.clone(), "m").unwrap(), &spec).unwrap();
            assert!(next.values().iter().zip(prev.values()).all(|(a, b)| a >= b));
            assert!(next.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prev = next;
        }
    }

    fn weighted(cloud: &PointCloud, spec: &VoxelGridSpec, up: &[f64]) -> f64 {
        voxelize(cloud, spec).unwrap().values().iter().zip(up).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let step = 1e-5;
        let mut worst = 0.0f64;
        for trial in 0..50 {
            let h = 4;
            let cloud = random_patch(&mut rng, 30, 0.25);
            let mut spec = VoxelGridSpec::new(random_frame(&mut rng, Vec3::zeros()), 0.4 + 0.01 * trial as f64, h);
            // soft enough that most voxels receive several points
            spec.sharpness = 1e-2;
            // the truncated function jumps by up to `cutoff` where a factor
            // crosses it, so half the trials check the exact function
            spec.cutoff = if trial % 2 == 0 { 0.0 } else { DEFAULT_CUTOFF };
            let up: Vec<f64> = (0..h * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = voxelize_backward(&cloud, &spec, &up).unwrap();
            let mut sp = spec;
            sp.support += step;
            let mut sm = spec;
            sm.support -= step;
            let num = (weighted(&cloud, &sp, &up) - weighted(&cloud, &sm, &up)) / (2.0 * step);
            let e = crate::autodiff::relative_error(g.d_support, num);
            worst = worst.max(e);
            for j in (0..30).step_by(7) {
                for k in 0..3 {
                    let mut pts = cloud.points().to_vec();
                    pts[j][k] += step;
                    let fp = weighted(&PointCloud::new(pts.clone(), "p").unwrap(), &spec, &up);
                    pts[j][k] -= 2.0 * step;
                    let fm = weighted(&PointCloud::new(pts, "p").unwrap(), &spec, &up);
                    let num = (fp - fm) / (2.0 * step);
                    let e = crate::autodiff::relative_error(g.d_points[j][k], num);
                    worst = worst.max(e);
                }
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cloud_pts = random_patch(&mut rng, 20, 0.2).points().to_vec();
        cloud_pts.push(Vec3::new(40.0, 0.0, 0.0));
        let cloud = PointCloud::new(cloud_pts, "c").unwrap();
        let spec = spec_at_origin(0.4, 4);
        let g = voxelize_backward(&cloud, &spec, &vec![0.0; 64]).unwrap();
        assert_eq!(g.d_support, 0.0);
        assert!(g.d_points.iter().all(|p| *p == Vec3::zeros()));
        let g = voxelize_backward(&cloud, &spec, &vec![1.0; 64]).unwrap();
        assert_eq!(g.d_points[20], Vec3::zeros());
        assert!(g.d_support != 0.0);
    }

    #[test]
    fn tape_gradient_wrt_log_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = random_patch(&mut rng, 40, 0.3);
        let idx = SpatialIndex::build(&cloud).unwrap();
        let mut spec = spec_at_origin(1.0, 4);
        spec.sharpness = 1e-2;
        let up: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = crate::autodiff::grad_check(
            |t, v| {
                let g = voxelize_on_tape(t, v[0], &idx, &spec)?;
                let g = t.reshape(g, vec![64])?;
                let w = t.constant(Tensor::vector(up.clone()));
                let m = t.mul(g, w)?;
                Ok(t.sum(m))
            },
            &[Tensor::scalar(0.4f64.ln())],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn dump_lists_voxels_above_threshold() {
        let spec = spec_at_origin(1.0, 2);
        let cloud = PointCloud::new(vec![voxel_centers(&spec)[7]], "d").unwrap();
        let g = voxelize(&cloud, &spec).unwrap();
        let text = g.dump_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), g.values().iter().filter(|&&v| v >= 0.01).count());
        assert!(lines.iter().any(|l| l.starts_with("2 1 1 1 ")));
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec_at_origin(1.0, 4);
        s.resolution = 1;
        assert!(s.validate().is_err());
        let mut s = spec_at_origin(-1.0, 4);
        assert!(s.validate().is_err());
        s.support = 1.0;
        s.cutoff = 0.01;
        assert!(s.validate().is_err());
        let _ = Mat3::identity();
    }
}
