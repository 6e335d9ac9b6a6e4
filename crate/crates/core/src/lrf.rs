//! Local reference frames with a deterministic sign rule.
//!
//! The frame at a keypoint comes from the covariance of its neighbors (taken
//! about the keypoint itself, not the patch centroid):
//!
//! * z is the eigenvector of the smallest eigenvalue,
//! * x is the eigenvector of the largest eigenvalue, made orthogonal to z,
//! * y = z × x.
//!
//! Each of z and x is flipped to point toward the majority of the offsets from
//! the keypoint to its neighbors. A tie in the count falls back to the sign of
//! the summed projections; an exact zero keeps the solver's output.

use crate::linalg::symmetric_eig3;
use crate::pointcloud::{PointCloud, SpatialIndex};
use crate::{Error, Mat3, Result, Vec3};

pub use crate::linalg::symmetric_eig3 as symmetric_eigen3;

/// Minimum patch size (keypoint included).
pub const MIN_PATCH_POINTS: usize = 5;
/// Relative eigenvalue spread under which a patch counts as isotropic.
pub const ISOTROPY_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrfFrame {
    /// Columns are the x, y, z axes.
    pub axes: Mat3,
    pub center: Vec3,
    pub radius: f64,
}

impl LrfFrame {
    /// Canonical frame: identity axes.
    pub fn identity(center: Vec3, radius: f64) -> Self {
        Self {
            axes: Mat3::identity(),
            center,
            radius,
        }
    }

    pub fn x(&self) -> Vec3 {
        self.axes.column(0).into()
    }

    pub fn y(&self) -> Vec3 {
        self.axes.column(1).into()
    }

    pub fn z(&self) -> Vec3 {
        self.axes.column(2).into()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        (self.axes.transpose() * self.axes - Mat3::identity()).amax() <= tol
            && (self.axes.determinant() - 1.0).abs() <= tol
    }
}

fn orient(axis: Vec3, offsets: &[Vec3]) -> Vec3 {
    let (mut pos, mut neg, mut sum) = (0usize, 0usize, 0.0);
    for o in offsets {
        let d = o.dot(&axis);
        if d > 0.0 {
            pos += 1;
        } else if d < 0.0 {
            neg += 1;
        }
        sum += d;
    }
    let flip = match neg.cmp(&pos) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => sum < 0.0,
    };
    if flip {
        -axis
    } else {
        axis
    }
}

/// Frame at `cloud[center_idx]` from the neighbors within `r_lrf`.
pub fn estimate_lrf(
    cloud: &PointCloud,
    index: &SpatialIndex,
    center_idx: usize,
    r_lrf: f64,
) -> Result<LrfFrame> {
    if center_idx >= cloud.len() {
        return Err(Error::OutOfRange {
            what: "keypoint index",
            value: center_idx,
            min: 0,
            max: cloud.len() - 1,
        });
    }
    let center = *cloud.point(center_idx);
    let neighbors = index.radius_query(&center, r_lrf)?;
    frame_from_neighbors(&center, neighbors.iter().map(|&i| *index.point(i)), r_lrf, center_idx)
}

/// Frame at `center` from an explicit neighbor set.
pub fn frame_from_neighbors(
    center: &Vec3,
    neighbors: impl IntoIterator<Item = Vec3>,
    radius: f64,
    label: usize,
) -> Result<LrfFrame> {
    let offsets: Vec<Vec3> = neighbors.into_iter().map(|p| p - center).collect();
    if offsets.len() < MIN_PATCH_POINTS {
        return Err(Error::DegeneratePatch {
            index: label,
            count: offsets.len(),
            needed: MIN_PATCH_POINTS,
        });
    }
    let mut cov = Mat3::zeros();
    for o in &offsets {
        cov += o * o.transpose();
    }
    cov /= offsets.len() as f64;
    let (vals, vecs) = symmetric_eig3(&cov)?;
    if !(vals[0] > 0.0) || (vals[0] - vals[2]) < ISOTROPY_GAP * vals[0] {
        return Err(Error::AmbiguousFrame { index: label });
    }
    let z = orient(vecs.column(2).into(), &offsets);
    let x0 = orient(vecs.column(0).into(), &offsets);
    let x = (x0 - z * x0.dot(&z)).normalize();
    let y = z.cross(&x);
    Ok(LrfFrame {
        axes: Mat3::from_columns(&[x, y, z]),
        center: *center,
        radius,
    })
}
