//! Registration benchmark metrics. Every threshold comparison is strict.

use std::fmt::Write as _;

use serde::Serialize;

use crate::pointcloud::{euler_xyz_deg, RigidTransform, Transform3};
use crate::{Error, Result, Vec3};

pub const DEFAULT_TAU1: f64 = 0.1;
pub const DEFAULT_TAU2: f64 = 0.05;
pub const DEFAULT_RR_THRESHOLD: f64 = 0.2;

/// Inlier ratio; `empty` flags a pair without correspondences (value 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InlierRatio {
    pub value: f64,
    pub empty: bool,
}

/// Fraction of `(p, q)` with `|gt(p) - q| < tau1`.
pub fn inlier_ratio(pairs: &[(Vec3, Vec3)], gt: &RigidTransform, tau1: f64) -> Result<InlierRatio> {
    if !(tau1 > 0.0) {
        return Err(Error::InvalidInput(format!("tau1 must be positive, got {tau1}")));
    }
    if pairs.is_empty() {
        return Ok(InlierRatio { value: 0.0, empty: true });
    }
    let hits = pairs.iter().filter(|(p, q)| (gt.apply_point(p) - q).norm() < tau1).count();
    Ok(InlierRatio {
        value: hits as f64 / pairs.len() as f64,
        empty: false,
    })
}

fn fraction(values: &[f64], what: &str, keep: impl Fn(f64) -> bool) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput(format!("{what} needs at least one value")));
    }
    Ok(values.iter().filter(|&&v| keep(v)).count() as f64 / values.len() as f64)
}

/// Fraction of pairs with IR strictly above `tau2`.
pub fn feature_match_recall(irs: &[f64], tau2: f64) -> Result<f64> {
    fraction(irs, "feature-match recall", |ir| ir > tau2)
}

/// `sqrt(mean |est(p) - q|^2)` over ground-truth pairs.
pub fn correspondence_rmse(gt_pairs: &[(Vec3, Vec3)], est: &RigidTransform) -> Result<f64> {
    if gt_pairs.is_empty() {
        return Err(Error::InvalidInput("correspondence RMSE needs at least one pair".into()));
    }
    let sq: f64 = gt_pairs.iter().map(|(p, q)| (est.apply_point(p) - q).norm_squared()).sum();
    Ok((sq / gt_pairs.len() as f64).sqrt())
}

/// Fraction of RMSE values strictly below `threshold`.
pub fn registration_recall(rmses: &[f64], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {threshold}")));
    }
    fraction(rmses, "registration recall", |r| r < threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseErrors {
    pub rmse_rot_deg: f64,
    pub r2_rot: f64,
    pub rmse_trans: f64,
    pub r2_trans: f64,
}

/// Smallest signed difference of two angles in degrees.
fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// RMSE over all components and R² averaged over the three components. A
/// component with zero variance scores 1 when predicted exactly, else 0.
fn component_stats(est: &[Vec3], gt: &[Vec3], diff: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let n = gt.len() as f64;
    let mut sq_total = 0.0;
    let mut r2 = 0.0;
    for c in 0..3 {
        let mean = gt.iter().map(|g| g[c]).sum::<f64>() / n;
        let ss_res: f64 = est.iter().zip(gt).map(|(e, g)| diff(e[c], g[c]).powi(2)).sum();
        let ss_tot: f64 = gt.iter().map(|g| diff(g[c], mean).powi(2)).sum();
        sq_total += ss_res;
        r2 += if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    ((sq_total / (3.0 * n)).sqrt(), r2 / 3.0)
}

/// Rotation errors use intrinsic X-Y-Z Euler angles in degrees with
/// differences wrapped to `(-180, 180]`.
pub fn pose_errors(est: &[RigidTransform], gt: &[RigidTransform]) -> Result<PoseErrors> {
    if est.len() != gt.len() {
        return Err(Error::Shape(format!("{} estimates for {} ground truths", est.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::InvalidInput("pose errors need at least one pair".into()));
    }
    let angles = |v: &[RigidTransform]| -> Vec<Vec3> { v.iter().map(|t| euler_xyz_deg(t.rotation())).collect() };
    let trans = |v: &[RigidTransform]| -> Vec<Vec3> { v.iter().map(|t| *t.translation()).collect() };
    let (rmse_rot_deg, r2_rot) = component_stats(&angles(est), &angles(gt), angle_diff);
    let (rmse_trans, r2_trans) = component_stats(&trans(est), &trans(gt), |a, b| a - b);
    Ok(PoseErrors {
        rmse_rot_deg,
        r2_rot,
        rmse_trans,
        r2_trans,
    })
}

/// Outcome for one evaluated pair. A pair whose registration failed carries
/// the identity as its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub pair_id: String,
    pub ir: f64,
    pub num_corrs: usize,
    pub corr_rmse: f64,
    pub registration_ok: bool,
    pub est: RigidTransform,
    pub gt: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub pairs: usize,
    pub mean_ir: f64,
    pub fmr: f64,
    pub rr: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub rr_threshold: f64,
    pub pose: PoseErrors,
}

pub fn summarize(evals: &[PairEvaluation], tau1: f64, tau2: f64, rr_threshold: f64) -> Result<EvaluationSummary> {
    let irs: Vec<f64> = evals.iter().map(|e| e.ir).collect();
    let rmses: Vec<f64> = evals.iter().map(|e| e.corr_rmse).collect();
    let est: Vec<RigidTransform> = evals.iter().map(|e| e.est).collect();
    let gt: Vec<RigidTransform> = evals.iter().map(|e| e.gt).collect();
    Ok(EvaluationSummary {
        pairs: evals.len(),
        mean_ir: irs.iter().sum::<f64>() / evals.len().max(1) as f64,
        fmr: feature_match_recall(&irs, tau2)?,
        rr: registration_recall(&rmses, rr_threshold)?,
        tau1,
        tau2,
        rr_threshold,
        pose: pose_errors(&est, &gt)?,
    })
}

/// One row per pair, then `# key,value` summary lines.
pub fn evaluation_csv(evals: &[PairEvaluation], summary: &EvaluationSummary) -> String {
    let mut s = String::from("pair,ir,num_corrs,corr_rmse,registration_ok\n");
    for e in evals {
        let _ = writeln!(s, "{},{},{},{},{}", e.pair_id, e.ir, e.num_corrs, e.corr_rmse, e.registration_ok);
    }
    let p = &summary.pose;
    for (k, v) in [
        ("pairs", summary.pairs as f64),
        ("mean_ir", summary.mean_ir),
        ("fmr", summary.fmr),
        ("rr", summary.rr),
        ("tau1", summary.tau1),
        ("tau2", summary.tau2),
        ("rr_threshold", summary.rr_threshold),
        ("rmse_rot_deg", p.rmse_rot_deg),
        ("r2_rot", p.r2_rot),
        ("rmse_trans", p.rmse_trans),
        ("r2_trans", p.r2_trans),
    ] {
        let _ = writeln!(s, "# {k},{v}");
    }
    s
}

pub fn evaluation_json(evals: &[PairEvaluation], summary: &EvaluationSummary) -> serde_json::Value {
    let pairs: Vec<_> = evals
        .iter()
        .map(|e| {
            serde_json::json!({
                "pair": e.pair_id,
                "ir": e.ir,
                "num_corrs": e.num_corrs,
                "corr_rmse": e.corr_rmse,
                "registration_ok": e.registration_ok,
                "estimate": e.est.to_rows().to_vec(),
            })
        })
        .collect();
    serde_json::json!({ "pairs": pairs, "summary": summary })
}
