//! Input files, procedural shapes and synthetic registration pairs.
//!
//! A pair is made from one cloud: the target is the cloud under a random rigid
//! motion, and each side is then cropped independently to the `crop_k`
//! nearest neighbors of its own random center.

mod io;
mod shapes;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pointcloud::{apply_transform, PointCloud, RigidTransform, SpatialIndex, Transform3};
use crate::{Error, Result, Vec3};

pub use io::{load_point_cloud, write_ply};
pub use shapes::{procedural_shape, DEFAULT_SHAPE_POINTS};

pub const DEFAULT_MAX_ROT_DEG: f64 = 45.0;
pub const DEFAULT_TRANS_RANGE: f64 = 0.5;
pub const DEFAULT_CROP_K: usize = 768;
pub const DEFAULT_NOISE_STD: f64 = 0.01;
pub const DEFAULT_NOISE_CLIP: f64 = 0.05;
/// Distance under which a mapped point counts as overlapping.
pub const DEFAULT_OVERLAP_TAU: f64 = 0.02;
/// Fraction by which the bounding box is grown before placing crop centers.
pub const CROP_BOX_INFLATION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates to target coordinates.
    pub gt: RigidTransform,
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGenConfig {
    pub max_rot_deg: f64,
    pub trans_range: f64,
    pub crop_k: usize,
    /// Per-coordinate noise added to both sides after cropping; 0 disables it.
    pub noise_std: f64,
    pub noise_clip: f64,
    pub seed: u64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self {
            max_rot_deg: DEFAULT_MAX_ROT_DEG,
            trans_range: DEFAULT_TRANS_RANGE,
            crop_k: DEFAULT_CROP_K,
            noise_std: 0.0,
            noise_clip: DEFAULT_NOISE_CLIP,
            seed: 0,
        }
    }
}

impl PairGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.max_rot_deg) {
            return Err(Error::InvalidInput(format!("max_rot_deg must be in [0, 180], got {}", self.max_rot_deg)));
        }
        if !(self.trans_range >= 0.0) || !self.trans_range.is_finite() {
            return Err(Error::InvalidInput(format!("trans_range must be non-negative, got {}", self.trans_range)));
        }
        if self.crop_k < 4 {
            return Err(Error::InvalidInput(format!("crop_k must be at least 4, got {}", self.crop_k)));
        }
        if !(self.noise_std >= 0.0) || !(self.noise_clip >= 0.0) {
            return Err(Error::InvalidInput("noise std and clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// Indices of the `k` points nearest a uniform random center in the
/// inflated bounding box, in ascending index order.
fn random_crop(cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let (lo, hi) = cloud.bounds();
    let mid = (lo + hi) * 0.5;
    let half = (hi - lo) * (0.5 * (1.0 + CROP_BOX_INFLATION));
    let center = Vec3::from_fn(|i, _| {
        if half[i] > 0.0 {
            rng.random_range(mid[i] - half[i]..=mid[i] + half[i])
        } else {
            mid[i]
        }
    });
    let index = SpatialIndex::build(cloud)?;
    let mut idx = index.knn_query(&center, k)?;
    idx.sort_unstable();
    Ok(idx)
}

/// Random rigid pair from one cloud; deterministic per `cfg.seed`.
pub fn make_pair(cloud: &PointCloud, cfg: &PairGenConfig) -> Result<PairSample> {
    cfg.validate()?;
    if cloud.len() < cfg.crop_k {
        return Err(Error::InvalidInput(format!(
            "cloud {} has {} points, crop needs {}",
            cloud.id(),
            cloud.len(),
            cfg.crop_k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angles = Vec3::from_fn(|_, _| rng.random_range(0.0..=cfg.max_rot_deg));
    let trans = Vec3::from_fn(|_, _| rng.random_range(-cfg.trans_range..=cfg.trans_range));
    let gt = RigidTransform::from_euler_xyz_deg(angles, trans);
    let moved = apply_transform(&gt, cloud);
    let src_idx = random_crop(cloud, cfg.crop_k, &mut rng)?;
    let dst_idx = random_crop(&moved, cfg.crop_k, &mut rng)?;
    let mut source = cloud.select(&src_idx, format!("{}/source", cloud.id()))?;
    let mut target = moved.select(&dst_idx, format!("{}/target", cloud.id()))?;
    if cfg.noise_std > 0.0 {
        source = add_gaussian_noise(&source, cfg.noise_std, cfg.noise_clip, rng.next_u64())?;
        target = add_gaussian_noise(&target, cfg.noise_std, cfg.noise_clip, rng.next_u64())?;
    }
    let mut pair = PairSample {
        source,
        target,
        gt,
        overlap: 0.0,
    };
    pair.overlap = overlap_ratio(&pair, DEFAULT_OVERLAP_TAU)?;
    Ok(pair)
}

/// Adds clamped zero-mean Gaussian noise to every coordinate.
pub fn add_gaussian_noise(cloud: &PointCloud, std: f64, clip: f64, seed: u64) -> Result<PointCloud> {
    if !(std >= 0.0) || !(clip >= 0.0) {
        return Err(Error::InvalidInput("noise std and clip must be non-negative".into()));
    }
    if std == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Vec3::from_fn(|_, _| normal.sample(&mut rng).clamp(-clip, clip)))
        .collect();
    PointCloud::new(points, cloud.id())
}

/// Fraction of the smaller cloud whose ground-truth image has a neighbor in
/// the other cloud within `tau`.
pub fn overlap_ratio(pair: &PairSample, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let (small, other, map) = if pair.source.len() <= pair.target.len() {
        (&pair.source, &pair.target, pair.gt)
    } else {
        (&pair.target, &pair.source, pair.gt.inverse())
    };
    let index = SpatialIndex::build(other)?;
    let hits = small
        .points()
        .iter()
        .filter(|p| index.nearest(&map.apply_point(p)).1 <= tau)
        .count();
    Ok(hits as f64 / small.len() as f64)
}

/// `(p, gt(p))` for every source point.
pub fn gt_pairs(pair: &PairSample) -> Vec<(Vec3, Vec3)> {
    pair.source.points().iter().map(|p| (*p, pair.gt.apply_point(p))).collect()
}

pub fn pair_dir_name(i: usize) -> String {
    format!("pair_{i:04}")
}

/// Writes `source.ply`, `target.ply` and `gt.txt` into `dir`.
pub fn write_pair(dir: &Path, pair: &PairSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ply(&dir.join("source.ply"), &pair.source)?;
    write_ply(&dir.join("target.ply"), &pair.target)?;
    let gt = dir.join("gt.txt");
    fs::write(&gt, pair.gt.to_text()).map_err(|e| Error::io(&gt, e))
}

/// Reads a pair directory; the overlap is recomputed at the default tau.
pub fn read_pair(dir: &Path) -> Result<PairSample> {
    let source = load_point_cloud(&dir.join("source.ply"))?;
    let target = load_point_cloud(&dir.join("target.ply"))?;
    let gt_path = dir.join("gt.txt");
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let gt = RigidTransform::parse_text(&text).map_err(|e| Error::parse(&gt_path, "contents", e.to_string()))?;
    let mut pair = PairSample {
        source,
        target,
        gt,
        overlap: 0.0,
    };
    pair.overlap = overlap_ratio(&pair, DEFAULT_OVERLAP_TAU)?;
    Ok(pair)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub overlap: f64,
    pub seed: u64,
}

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("pair,overlap,seed\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{}", e.pair_id, e.overlap, e.seed);
    }
    s
}

/// Pair directories under `root`, sorted by name.
pub fn list_pair_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("pair_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!("no pair_* directories in {}", root.display())));
    }
    Ok(dirs)
}

/// Per-pair seeds derived from one base seed.
pub fn pair_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Generates `count` pairs cycling through `shapes`, writes them under `out`
/// together with `manifest.csv`.
pub fn synthesize_pairs(shapes: &[PointCloud], out: &Path, count: usize, cfg: &PairGenConfig) -> Result<Vec<ManifestEntry>> {
    if shapes.is_empty() {
        return Err(Error::InvalidInput("no input shapes".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(count);
    for (i, seed) in pair_seeds(cfg.seed, count).into_iter().enumerate() {
        let pair = make_pair(&shapes[i % shapes.len()], &PairGenConfig { seed, ..*cfg })?;
        let id = pair_dir_name(i);
        write_pair(&out.join(&id), &pair)?;
        entries.push(ManifestEntry {
            pair_id: id,
            overlap: pair.overlap,
            seed,
        });
    }
    let manifest = out.join("manifest.csv");
    fs::write(&manifest, manifest_csv(&entries)).map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}
