use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::PointCloud;

/// Farthest point sampling with a seeded random start.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_k(cloud, k)?;
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..cloud.len());
    farthest_point_sample_from(cloud, k, start)
}

/// Farthest point sampling from a fixed start index.
///
/// Each step picks the point maximizing the squared distance to the chosen
/// set; ties go to the lower index.
pub fn farthest_point_sample_from(cloud: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    check_k(cloud, k)?;
    if start >= cloud.len() {
        return Err(Error::OutOfRange {
            what: "start index",
            value: start,
            min: 0,
            max: cloud.len() - 1,
        });
    }
    let pts = cloud.points();
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut chosen = Vec::with_capacity(k);
    let mut current = start;
    for _ in 0..k {
        chosen.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        let c = pts[current];
        for (i, p) in pts.iter().enumerate() {
            if min_d2[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

fn check_k(cloud: &PointCloud, k: usize) -> Result<()> {
    if k == 0 || k > cloud.len() {
        return Err(Error::OutOfRange {
            what: "sample count",
            value: k,
            min: 1,
            max: cloud.len(),
        });
    }
    Ok(())
}
