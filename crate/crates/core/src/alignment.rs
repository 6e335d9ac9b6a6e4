//! Weighted affine fitting, rigidity losses and the closed-form rigid solver.
//!
//! The affine fit minimizes `sum_i w_i^2 |A p_i + t - q_i|^2` through the
//! damped 4x4 normal equations `[A t] = B (M + delta I)^-1` with
//! `M = sum_i w_i^2 pbar_i pbar_i^T` and `B = sum_i w_i^2 q_i pbar_i^T`, where
//! `pbar = (p, 1)`. Its backward pass is closed form: for an upstream gradient
//! `G` of `X = [A t]`, `dL/dB = G N^-1` and `dL/dM = -X^T G N^-1`.

use nalgebra::{Matrix3x4, Matrix4, Vector4};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::linalg::{jacobi_eigen, spd_condition_number};
use crate::pointcloud::{AffineTransform, RigidTransform};
use crate::{Error, Mat3, Real, Result, Vec3};

pub const DEFAULT_DAMPING: f64 = 1e-9;
/// Condition number above which an undamped fit is rejected.
pub const MAX_CONDITION: f64 = 1e12;
pub const MIN_POSITIVE_WEIGHTS: usize = 4;

/// Correspondence columns with per-correspondence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCorrMatrices {
    pub src: Vec<Vec3>,
    pub dst: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl WeightedCorrMatrices {
    pub fn new(src: Vec<Vec3>, dst: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if src.len() != dst.len() || src.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} source, {} target and {} weight columns",
                src.len(),
                dst.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        if positive < MIN_POSITIVE_WEIGHTS {
            return Err(Error::DegenerateConfiguration(format!(
                "{positive} positive weights, need at least {MIN_POSITIVE_WEIGHTS}"
            )));
        }
        Ok(Self { src, dst, weights })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

fn homogeneous(p: &Vec3) -> Vector4<f64> {
    Vector4::new(p.x, p.y, p.z, 1.0)
}

struct AffineSolution {
    x: Matrix3x4<f64>,
    normal_inv: Matrix4<f64>,
}

fn solve_affine(m: &WeightedCorrMatrices, damping: f64) -> Result<AffineSolution> {
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(Error::InvalidInput(format!("damping must be non-negative, got {damping}")));
    }
    let mut normal = Matrix4::<f64>::zeros();
    let mut b = Matrix3x4::<f64>::zeros();
    for ((p, q), &w) in m.src.iter().zip(&m.dst).zip(&m.weights) {
        let u = w * w;
        let pb = homogeneous(p);
        normal += pb * pb.transpose() * u;
        b += q * pb.transpose() * u;
    }
    if damping == 0.0 {
        let cond = spd_condition_number(normal.transpose().as_slice(), 4);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::RankDeficient(cond));
        }
    }
    normal += Matrix4::identity() * damping;
    let normal_inv = normal
        .cholesky()
        .ok_or(Error::RankDeficient(f64::INFINITY))?
        .inverse();
    Ok(AffineSolution {
        x: b * normal_inv,
        normal_inv,
    })
}

fn affine_from_x(x: &Matrix3x4<f64>) -> Result<AffineTransform> {
    AffineTransform::new(x.fixed_view::<3, 3>(0, 0).into_owned(), x.column(3).into_owned())
}

/// Weighted least-squares affine map from `src` to `dst`.
pub fn fit_affine_weighted(m: &WeightedCorrMatrices, damping: f64) -> Result<AffineTransform> {
    affine_from_x(&solve_affine(m, damping)?.x)
}

/// Gradients of a scalar loss through [`fit_affine_weighted`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFitGradients {
    pub d_weights: Vec<f64>,
    pub d_dst: Vec<Vec3>,
}

fn affine_backward(m: &WeightedCorrMatrices, sol: &AffineSolution, grad: &Matrix3x4<f64>) -> AffineFitGradients {
    let gb = grad * sol.normal_inv;
    let gm = -(sol.x.transpose() * grad) * sol.normal_inv;
    let mut d_weights = Vec::with_capacity(m.len());
    let mut d_dst = Vec::with_capacity(m.len());
    for ((p, q), &w) in m.src.iter().zip(&m.dst).zip(&m.weights) {
        let pb = homogeneous(p);
        let gbp = gb * pb;
        let du = q.dot(&gbp) + pb.dot(&(gm * pb));
        d_weights.push(2.0 * w * du);
        d_dst.push(gbp * (w * w));
    }
    AffineFitGradients { d_weights, d_dst }
}

/// Backward of [`fit_affine_weighted`] for an upstream gradient on the 12
/// row-major entries of `[A | t]`.
pub fn fit_affine_backward(m: &WeightedCorrMatrices, damping: f64, grad_rows: &[f64; 12]) -> Result<AffineFitGradients> {
    let sol = solve_affine(m, damping)?;
    let g = Matrix3x4::from_row_slice(grad_rows);
    Ok(affine_backward(m, &sol, &g))
}

struct AffineFitOp {
    m: WeightedCorrMatrices,
    sol: AffineSolution,
    dst_is_input: bool,
}

impl<T: Real> CustomOp<T> for AffineFitOp {
    fn name(&self) -> &str {
        "fit_affine_weighted"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g: Vec<f64> = grad_out.iter().map(|v| v.to_f64_lossy()).collect();
        let grads = affine_backward(&self.m, &self.sol, &Matrix3x4::from_row_slice(&g));
        let mut out = vec![Some(grads.d_weights.iter().map(|&x| T::lit(x)).collect())];
        if self.dst_is_input {
            out.push(Some(grads.d_dst.iter().flat_map(|v| v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>()).collect()));
        }
        Ok(out)
    }
}

/// Target positions of a fit recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub enum FitTargets<'a> {
    Fixed(&'a [Vec3]),
    /// `[m, 3]` variable.
    Var(Var),
}

/// Records the weighted affine fit; output is `[12]` (row-major `[A | t]`).
pub fn fit_affine_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    src: &[Vec3],
    dst: FitTargets<'_>,
    weights: Var,
    damping: f64,
) -> Result<Var> {
    let w: Vec<f64> = tape.value(weights).data().iter().map(|v| v.to_f64_lossy()).collect();
    let (dst_pts, inputs) = match dst {
        FitTargets::Fixed(d) => (d.to_vec(), vec![weights]),
        FitTargets::Var(v) => {
            let t = tape.value(v);
            if t.shape() != [src.len(), 3] {
                return Err(Error::Shape(format!("fit targets {:?}, expected [{}, 3]", t.shape(), src.len())));
            }
            let pts = t
                .data()
                .chunks(3)
                .map(|c| Vec3::new(c[0].to_f64_lossy(), c[1].to_f64_lossy(), c[2].to_f64_lossy()))
                .collect();
            (pts, vec![weights, v])
        }
    };
    let m = WeightedCorrMatrices::new(src.to_vec(), dst_pts, w)?;
    let sol = solve_affine(&m, damping)?;
    let rows: Vec<T> = sol.x.transpose().iter().map(|&x| T::lit(x)).collect();
    let op = AffineFitOp {
        m,
        sol,
        dst_is_input: inputs.len() == 2,
    };
    Ok(tape.custom(&inputs, Tensor::vector(rows), Box::new(op)))
}

/// Loss terms of a forward/backward transform pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_o: f64,
    pub l_c: f64,
    pub l_pcr: f64,
    pub lambda_o: f64,
    pub lambda_c: f64,
}

fn entry_l1(m: &Mat3) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(|R^T R - I|_1 + |R'^T R' - I|_1) / 2`, entrywise.
pub fn orthogonality_loss(fwd: &AffineTransform, bwd: &AffineTransform) -> f64 {
    let i = Mat3::identity();
    0.5 * (entry_l1(&(fwd.matrix.transpose() * fwd.matrix - i)) + entry_l1(&(bwd.matrix.transpose() * bwd.matrix - i)))
}

/// `|R R' - I|_1 + |R t' + t|_1`, entrywise.
pub fn cycle_loss(fwd: &AffineTransform, bwd: &AffineTransform) -> f64 {
    entry_l1(&(fwd.matrix * bwd.matrix - Mat3::identity()))
        + (fwd.matrix * bwd.translation + fwd.translation).iter().map(|x| x.abs()).sum::<f64>()
}

pub fn registration_loss(fwd: &AffineTransform, bwd: &AffineTransform, lambda_o: f64, lambda_c: f64) -> LossReport {
    let l_o = orthogonality_loss(fwd, bwd);
    let l_c = cycle_loss(fwd, bwd);
    LossReport {
        l_o,
        l_c,
        l_pcr: lambda_o * l_o + lambda_c * l_c,
        lambda_o,
        lambda_c,
    }
}

/// Gradients of `lambda_o L_o + lambda_c L_c` with respect to both
/// transforms, as row-major 12-vectors.
pub fn registration_loss_gradient(
    fwd: &AffineTransform,
    bwd: &AffineTransform,
    lambda_o: f64,
    lambda_c: f64,
) -> ([f64; 12], [f64; 12]) {
    let i = Mat3::identity();
    let (r, t, r2, t2) = (fwd.matrix, fwd.translation, bwd.matrix, bwd.translation);
    let so = (r.transpose() * r - i).map(sign);
    let so2 = (r2.transpose() * r2 - i).map(sign);
    let sc = (r * r2 - i).map(sign);
    let u = (r * t2 + t).map(sign);
    let d_r = r * (so + so.transpose()) * (0.5 * lambda_o) + (sc * r2.transpose() + u * t2.transpose()) * lambda_c;
    let d_r2 = r2 * (so2 + so2.transpose()) * (0.5 * lambda_o) + r.transpose() * sc * lambda_c;
    let d_t = u * lambda_c;
    let d_t2 = r.transpose() * u * lambda_c;
    let pack = |m: Mat3, v: Vec3| AffineTransform { matrix: m, translation: v }.to_rows();
    (pack(d_r, d_t), pack(d_r2, d_t2))
}

struct RegistrationLossOp {
    fwd: AffineTransform,
    bwd: AffineTransform,
    lambda_o: f64,
    lambda_c: f64,
}

impl<T: Real> CustomOp<T> for RegistrationLossOp {
    fn name(&self) -> &str {
        "registration_loss"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = grad_out[0].to_f64_lossy();
        let (a, b) = registration_loss_gradient(&self.fwd, &self.bwd, self.lambda_o, self.lambda_c);
        let conv = |v: [f64; 12]| v.iter().map(|&x| T::lit(g * x)).collect();
        Ok(vec![Some(conv(a)), Some(conv(b))])
    }
}

fn affine_from_var<T: Real>(tape: &Tape<'_, T>, v: Var) -> Result<AffineTransform> {
    let t = tape.value(v);
    if t.len() != 12 {
        return Err(Error::Shape(format!("transform variable holds {} values, expected 12", t.len())));
    }
    let mut rows = [0.0; 12];
    for (r, x) in rows.iter_mut().zip(t.data()) {
        *r = x.to_f64_lossy();
    }
    AffineTransform::from_rows(&rows)
}

/// Records `l_pcr` for two `[12]` transform variables.
pub fn registration_loss_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    fwd: Var,
    bwd: Var,
    lambda_o: f64,
    lambda_c: f64,
) -> Result<(Var, LossReport)> {
    let f = affine_from_var(tape, fwd)?;
    let b = affine_from_var(tape, bwd)?;
    let report = registration_loss(&f, &b, lambda_o, lambda_c);
    let op = RegistrationLossOp {
        fwd: f,
        bwd: b,
        lambda_o,
        lambda_c,
    };
    let v = tape.custom(&[fwd, bwd], Tensor::scalar(T::lit(report.l_pcr)), Box::new(op));
    Ok((v, report))
}

/// Weighted rigid fit via the eigenvector of the 4x4 quaternion matrix.
pub fn kabsch_rigid(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} source, {} target and {} weights",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    if weights.iter().filter(|&&w| w > 0.0).count() < 3 {
        return Err(Error::DegenerateConfiguration("fewer than 3 positively weighted points".into()));
    }
    let total: f64 = weights.iter().sum();
    let cs = src.iter().zip(weights).map(|(p, &w)| p * w).sum::<Vec3>() / total;
    let cd = dst.iter().zip(weights).map(|(p, &w)| p * w).sum::<Vec3>() / total;
    let mut cov = Mat3::zeros();
    let mut s = Mat3::zeros();
    for ((p, q), &w) in src.iter().zip(dst).zip(weights) {
        let a = p - cs;
        let b = q - cd;
        cov += a * a.transpose() * w;
        s += a * b.transpose() * w;
    }
    let (ev, _) = jacobi_eigen(cov.transpose().as_slice(), 3);
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration("source points are collinear or coincident".into()));
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = [
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    ];
    let (_, vecs) = jacobi_eigen(&n, 4);
    let q = Vector4::new(vecs[0], vecs[4], vecs[8], vecs[12]).normalize();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    #[rustfmt::skip]
    let rot = Mat3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z),         2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),         w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),         2.0 * (y * z + w * x),         w * w - x * x - y * y + z * z,
    );
    RigidTransform::new(rot, cd - rot * cs)
}
