//! RANSAC registration over putative correspondences, and the full
//! keypoint-to-transform pipeline for a cloud pair.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::kabsch_rigid;
use crate::descriptor::{extract_descriptors, GridConfig, NetworkParams};
use crate::matching::mutual_nearest;
use crate::pointcloud::{farthest_point_sample, PointCloud, RigidTransform, Transform3};
use crate::{Error, Real, Result, Vec3};

pub const DEFAULT_INLIER_TAU: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 50_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.999;
pub const MIN_SAMPLE: usize = 3;
pub const REFINE_ROUNDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iters: usize,
    pub inlier_tau: f64,
    pub confidence: f64,
    pub seed: u64,
    pub refine: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            inlier_tau: DEFAULT_INLIER_TAU,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
            refine: true,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.inlier_tau > 0.0) || !self.inlier_tau.is_finite() {
            return Err(Error::InvalidInput(format!("inlier_tau must be positive, got {}", self.inlier_tau)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidInput(format!("confidence must be in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    /// Positions in the correspondence list, ascending.
    pub inlier_indices: Vec<usize>,
    pub num_iters_run: usize,
    pub inlier_rmse: f64,
}

impl RegistrationResult {
    /// `transform` (three rows of `R | t`), then `inliers`, `rmse`,
    /// `iterations` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("transform\n");
        s.push_str(&self.transform.to_text());
        let _ = writeln!(s, "inliers {}", self.inlier_indices.len());
        let _ = writeln!(s, "rmse {}", self.inlier_rmse);
        let _ = writeln!(s, "iterations {}", self.num_iters_run);
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = self.transform.to_rows();
        serde_json::json!({
            "transform": rows.chunks(4).map(<[f64]>::to_vec).collect::<Vec<_>>(),
            "inliers": self.inlier_indices.len(),
            "inlier_rmse": self.inlier_rmse,
            "iterations": self.num_iters_run,
        })
    }
}

/// Inliers of `t` (strictly within `tau`) and their RMSE.
fn score(t: &RigidTransform, src: &[Vec3], dst: &[Vec3], tau: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut sq = 0.0;
    for (k, (p, q)) in src.iter().zip(dst).enumerate() {
        let d = (t.apply_point(p) - q).norm();
        if d < tau {
            inliers.push(k);
            sq += d * d;
        }
    }
    let rmse = if inliers.is_empty() {
        f64::INFINITY
    } else {
        (sq / inliers.len() as f64).sqrt()
    };
    (inliers, rmse)
}

fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn fit_subset(src: &[Vec3], dst: &[Vec3], idx: &[usize]) -> Result<RigidTransform> {
    let s: Vec<Vec3> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<Vec3> = idx.iter().map(|&i| dst[i]).collect();
    kabsch_rigid(&s, &d, &vec![1.0; idx.len()])
}

/// Robust rigid fit of `src[k] -> dst[k]`; deterministic per `cfg.seed`.
pub fn ransac_register(src: &[Vec3], dst: &[Vec3], cfg: &RansacConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    if src.len() != dst.len() {
        return Err(Error::Shape(format!("{} source but {} target positions", src.len(), dst.len())));
    }
    let n = src.len();
    if n < MIN_SAMPLE {
        return Err(Error::InvalidInput(format!("{n} correspondences, need at least {MIN_SAMPLE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(RigidTransform, Vec<usize>, f64)> = None;
    let mut needed = cfg.max_iters;
    let mut iters = 0;
    while iters < needed.min(cfg.max_iters) {
        iters += 1;
        let pick = sample(&mut rng, n, MIN_SAMPLE).into_vec();
        let Ok(t) = fit_subset(src, dst, &pick) else {
            continue;
        };
        let (inl, rmse) = score(&t, src, dst, cfg.inlier_tau);
        let improves = match &best {
            None => true,
            Some((_, bi, br)) => better((inl.len(), rmse), (bi.len(), *br)),
        };
        if improves {
            let ir = inl.len() as f64 / n as f64;
            let miss = 1.0 - ir.powi(MIN_SAMPLE as i32);
            needed = if miss <= 0.0 {
                iters
            } else if miss >= 1.0 {
                cfg.max_iters
            } else {
                let k = (1.0 - cfg.confidence).ln() / miss.ln();
                if k.is_finite() { k.ceil().max(1.0) as usize } else { cfg.max_iters }
            };
            best = Some((t, inl, rmse));
        }
    }
    let Some((mut t, mut inl, mut rmse)) = best.filter(|b| b.1.len() >= MIN_SAMPLE) else {
        return Err(Error::RegistrationFailed(format!(
            "no hypothesis reached {MIN_SAMPLE} inliers in {iters} iterations"
        )));
    };
    if cfg.refine {
        for _ in 0..REFINE_ROUNDS {
            let Ok(r) = fit_subset(src, dst, &inl) else { break };
            let (ri, rr) = score(&r, src, dst, cfg.inlier_tau);
            if ri.len() < inl.len() {
                break;
            }
            t = r;
            inl = ri;
            rmse = rr;
        }
    }
    Ok(RegistrationResult {
        transform: t,
        inlier_indices: inl,
        num_iters_run: iters,
        inlier_rmse: rmse,
    })
}

/// Mutual nearest descriptor matches between two clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    /// Mutual nearest pairs as `(source cloud index, target cloud index)`.
    pub correspondences: Vec<(usize, usize)>,
    /// Keypoints dropped for an ambiguous frame or a sparse patch.
    pub skipped: usize,
}

impl PairMatches {
    pub fn positions(&self, p: &PointCloud, q: &PointCloud) -> (Vec<Vec3>, Vec<Vec3>) {
        self.correspondences.iter().map(|&(i, j)| (*p.point(i), *q.point(j))).unzip()
    }
}

/// Samples `kp_count` keypoints per cloud (same seed on both sides),
/// describes them and keeps the mutual nearest neighbors.
pub fn match_pair<T: Real>(
    p: &PointCloud,
    q: &PointCloud,
    params: &NetworkParams<T>,
    kp_count: usize,
    seed: u64,
    grid: &GridConfig,
) -> Result<PairMatches> {
    let kp = farthest_point_sample(p, kp_count, seed)?;
    let kq = farthest_point_sample(q, kp_count, seed)?;
    let ep = extract_descriptors(p, &kp, params, grid)?;
    let eq = extract_descriptors(q, &kq, params, grid)?;
    let skipped = ep.skipped.len() + eq.skipped.len();
    if ep.keypoints.is_empty() || eq.keypoints.is_empty() {
        return Ok(PairMatches {
            correspondences: Vec::new(),
            skipped,
        });
    }
    let pairs = mutual_nearest(&ep.descriptors, &eq.descriptors)?;
    Ok(PairMatches {
        correspondences: pairs.iter().map(|&(i, j)| (ep.keypoints[i], eq.keypoints[j])).collect(),
        skipped,
    })
}

/// Registration of a cloud pair together with its intermediate matches.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRegistration {
    pub result: RegistrationResult,
    pub matches: PairMatches,
}

/// [`match_pair`] followed by [`ransac_register`], with `cfg.seed` also
/// seeding keypoint sampling.
pub fn register_pair<T: Real>(
    p: &PointCloud,
    q: &PointCloud,
    params: &NetworkParams<T>,
    kp_count: usize,
    cfg: &RansacConfig,
    grid: &GridConfig,
) -> Result<PairRegistration> {
    let matches = match_pair(p, q, params, kp_count, cfg.seed, grid)?;
    let (src, dst) = matches.positions(p, q);
    if src.len() < MIN_SAMPLE {
        return Err(Error::RegistrationFailed(format!("only {} mutual matches", src.len())));
    }
    let result = ransac_register(&src, &dst, cfg)?;
    Ok(PairRegistration { result, matches })
}
