use std::fmt;

use crate::{Error, Mat3, Result, Vec3};

use super::PointCloud;

const RIGID_TOL: f64 = 1e-9;

/// Anything that maps a point to a point.
pub trait Transform3 {
    fn apply_point(&self, p: &Vec3) -> Vec3;

    /// Suffix appended to the id of a transformed cloud.
    fn tag(&self) -> &'static str;
}

/// `x -> matrix * x + translation` with an unconstrained 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub matrix: Mat3,
    pub translation: Vec3,
}

/// `x -> rotation * x + translation` with a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl AffineTransform {
    pub fn new(matrix: Mat3, translation: Vec3) -> Result<Self> {
        if !matrix.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("affine transform has non-finite entries".into()));
        }
        Ok(Self {
            matrix,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Row-major `[R | t]` as 12 values.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[f64; 12]) -> Result<Self> {
        let matrix = Mat3::from_fn(|r, c| rows[r * 4 + c]);
        let translation = Vec3::new(rows[3], rows[7], rows[11]);
        Self::new(matrix, translation)
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, RIGID_TOL)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("translation has non-finite entries".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation from intrinsic X-then-Y-then-Z Euler angles in degrees.
    pub fn from_euler_xyz_deg(angles: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: rotation_from_euler_xyz_deg(angles),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn to_affine(&self) -> AffineTransform {
        AffineTransform {
            matrix: self.rotation,
            translation: self.translation,
        }
    }

    /// Re-validates an affine transform as rigid.
    pub fn from_affine(a: &AffineTransform) -> Result<Self> {
        Self::new(a.matrix, a.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `other`.
    pub fn then_after(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Geodesic angle of the relative rotation, in degrees.
    pub fn angle_to_deg(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    pub fn to_rows(&self) -> [f64; 12] {
        self.to_affine().to_rows()
    }

    pub fn from_rows(rows: &[f64; 12]) -> Result<Self> {
        Self::from_affine(&AffineTransform::from_rows(rows)?)
    }

    /// Three whitespace-separated rows of `[R | t]`, shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        format_rows(&self.to_rows())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad transform value {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let rows: [f64; 12] = vals.as_slice().try_into().map_err(|_| {
            Error::InvalidInput(format!("transform needs 12 values, found {}", vals.len()))
        })?;
        Self::from_rows(&rows)
    }
}

pub(crate) fn format_rows(rows: &[f64; 12]) -> String {
    let mut s = String::new();
    for r in 0..3 {
        let line: Vec<String> = rows[r * 4..r * 4 + 4].iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

impl fmt::Display for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::NotRotation("non-finite entries".into()));
    }
    let ortho = (r.transpose() * r - Mat3::identity()).amax();
    if ortho > tol {
        return Err(Error::NotRotation(format!("|R^T R - I| = {ortho:e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::NotRotation(format!("det = {det}")));
    }
    Ok(())
}

impl Transform3 for AffineTransform {
    fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.matrix * p + self.translation
    }

    fn tag(&self) -> &'static str {
        "affine"
    }
}

impl Transform3 for RigidTransform {
    fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    fn tag(&self) -> &'static str {
        "rigid"
    }
}

/// Maps every point of the cloud; the id gains a `+<tag>` suffix.
pub fn apply_transform<T: Transform3 + ?Sized>(t: &T, cloud: &PointCloud) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    PointCloud::new(points, format!("{}+{}", cloud.id(), t.tag()))
        .expect("transform of a valid cloud with finite entries stays valid")
}

/// `a` after `b`: applies `b` first, then `a`.
pub fn compose(a: &AffineTransform, b: &AffineTransform) -> AffineTransform {
    AffineTransform {
        matrix: a.matrix * b.matrix,
        translation: a.matrix * b.translation + a.translation,
    }
}

pub fn invert_rigid(t: &RigidTransform) -> Result<RigidTransform> {
    check_rotation(&t.rotation, RIGID_TOL)?;
    Ok(t.inverse())
}

/// `Rx(a) * Ry(b) * Rz(c)`: intrinsic rotations about x, then the new y, then the new z.
pub fn rotation_from_euler_xyz_deg(angles: Vec3) -> Mat3 {
    let (sa, ca) = angles[0].to_radians().sin_cos();
    let (sb, cb) = angles[1].to_radians().sin_cos();
    let (sc, cc) = angles[2].to_radians().sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Inverse of [`rotation_from_euler_xyz_deg`]; middle angle in `[-90, 90]`.
pub fn euler_xyz_deg(r: &Mat3) -> Vec3 {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vec3::new(a.to_degrees(), b.to_degrees(), c.to_degrees())
}
