//! Point clouds, rigid/affine transforms, spatial indexing and keypoint sampling.

mod index;
mod sampling;
mod transform;

pub use index::SpatialIndex;
pub use sampling::{farthest_point_sample, farthest_point_sample_from};
pub use transform::{
    apply_transform, compose, euler_xyz_deg, invert_rigid, rotation_from_euler_xyz_deg,
    AffineTransform, RigidTransform, Transform3,
};

use crate::{Error, Result, Vec3};

/// An ordered, non-empty set of finite 3D points with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            id: id.into(),
        })
    }

    pub fn from_xyz(coords: &[[f64; 3]], id: impl Into<String>) -> Result<Self> {
        Self::new(coords.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect(), id)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; present for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// New cloud made of the listed points, in list order.
    pub fn select(&self, indices: &[usize], id: impl Into<String>) -> Result<Self> {
        let points = indices
            .iter()
            .map(|&i| {
                self.points.get(i).copied().ok_or(Error::OutOfRange {
                    what: "point index",
                    value: i,
                    min: 0,
                    max: self.len() - 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, id)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.len() as f64
    }
}
