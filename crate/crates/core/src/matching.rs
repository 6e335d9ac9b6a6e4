//! Putative correspondences and their confidence weights.
//!
//! Each source keypoint is paired with its nearest target descriptor. The
//! pair's descriptor weight `w_f` is the softmax of negative descriptor
//! distances evaluated at the chosen target, its spectral weight `w_sm` comes
//! from power iteration on a length-compatibility matrix, and the confidence is
//! their product.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::{softmax_neg, Tape, Var};
use crate::{Error, Real, Result, Vec3};

pub const DEFAULT_SIGMA_D: f64 = 0.1;
pub const DEFAULT_POWER_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    /// `(source keypoint, target keypoint)` positions in the descriptor batches.
    pub pairs: Vec<(usize, usize)>,
    pub w_f: Vec<f64>,
    pub w_sm: Vec<f64>,
    pub w: Vec<f64>,
}

/// Which factors enter the confidence; a disabled factor is pinned to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfidenceMode {
    pub use_wf: bool,
    pub use_wsm: bool,
}

impl Default for ConfidenceMode {
    fn default() -> Self {
        Self {
            use_wf: true,
            use_wsm: true,
        }
    }
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Lines `i j w_f w_sm w`.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let _ = writeln!(s, "{i} {j} {} {} {}", self.w_f[k], self.w_sm[k], self.w[k]);
        }
        s
    }
}

/// Sets `w = w_f * w_sm`, pinning disabled factors to 1.
pub fn confidence(mut corrs: CorrespondenceSet, mode: ConfidenceMode) -> CorrespondenceSet {
    if !mode.use_wf {
        corrs.w_f.iter_mut().for_each(|x| *x = 1.0);
    }
    if !mode.use_wsm {
        corrs.w_sm.iter_mut().for_each(|x| *x = 1.0);
    }
    corrs.w = corrs.w_f.iter().zip(&corrs.w_sm).map(|(a, b)| a * b).collect();
    corrs
}

fn distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_batches<T>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("descriptor batches must be non-empty".into()));
    }
    let n = a[0].len();
    if a.iter().chain(b).any(|d| d.len() != n) {
        return Err(Error::Shape("descriptors differ in dimension".into()));
    }
    Ok(())
}

/// Distances from `query` to every row of `keys`.
fn distances<T: Real>(query: &[T], keys: &[Vec<T>]) -> Vec<f64> {
    keys.iter().map(|k| distance(query, k)).collect()
}

/// Index of the smallest value; ties go to the lower index.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = j;
        }
    }
    best
}

/// Nearest target for every source descriptor (ties to the lower index).
pub fn nearest_neighbors<T: Real>(desc_p: &[Vec<T>], desc_q: &[Vec<T>]) -> Result<Vec<usize>> {
    check_batches(desc_p, desc_q)?;
    Ok(desc_p.par_iter().map(|d| argmin(&distances(d, desc_q))).collect())
}

/// One pair per source descriptor with its `w_f`; `w_sm` and `w` start at 1
/// and `w_f` respectively.
pub fn match_descriptors<T: Real>(desc_p: &[Vec<T>], desc_q: &[Vec<T>]) -> Result<CorrespondenceSet> {
    check_batches(desc_p, desc_q)?;
    let rows: Vec<(usize, f64)> = desc_p
        .par_iter()
        .map(|d| {
            let dist = distances(d, desc_q);
            let j = argmin(&dist);
            (j, softmax_neg(&dist)[j])
        })
        .collect();
    let pairs: Vec<(usize, usize)> = rows.iter().enumerate().map(|(i, &(j, _))| (i, j)).collect();
    let w_f: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(CorrespondenceSet {
        pairs,
        w: w_f.clone(),
        w_sm: vec![1.0; w_f.len()],
        w_f,
    })
}

/// Differentiable matching on a tape.
#[derive(Debug, Clone)]
pub struct TapeMatches {
    /// `(i, j)` with `j` the hard nearest target of source `i`.
    pub pairs: Vec<(usize, usize)>,
    /// `[m]` descriptor weights of the selected pairs.
    pub w_f: Var,
    /// `[m, k]` full softmax rows, for soft target positions.
    pub rows: Var,
}

/// Matches `[m, n]` source descriptors against `[k, n]` targets. Pair
/// identities come from the hard argmin; `w_f` and the softmax rows are
/// differentiable with respect to both batches.
pub fn match_descriptors_on_tape<T: Real>(tape: &mut Tape<'_, T>, desc_p: Var, desc_q: Var) -> Result<TapeMatches> {
    let (p, q) = (tape.value(desc_p), tape.value(desc_q));
    if p.shape().len() != 2 || q.shape().len() != 2 || p.shape()[1] != q.shape()[1] || p.shape()[0] == 0 || q.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "matching expects [m, n] and [k, n] batches, got {:?} and {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let (m, n) = (p.shape()[0], p.shape()[1]);
    let mut rows = Vec::with_capacity(m);
    let mut picks = Vec::with_capacity(m);
    let mut pairs = Vec::with_capacity(m);
    for i in 0..m {
        let row = tape.gather_rows(desc_p, &[i])?;
        let row = tape.reshape(row, vec![n])?;
        let a = tape.softmax_neg_distance(row, desc_q)?;
        // argmax of the softmax is the argmin of distances, ties to the lower index
        let av = tape.value(a).data();
        let mut j = 0;
        for (c, &x) in av.iter().enumerate().skip(1) {
            if x > av[j] {
                j = c;
            }
        }
        picks.push(tape.gather_rows(a, &[j])?);
        rows.push(a);
        pairs.push((i, j));
    }
    let w_f = tape.stack(&picks)?;
    let w_f = tape.reshape(w_f, vec![m])?;
    let rows = tape.stack(&rows)?;
    Ok(TapeMatches { pairs, w_f, rows })
}

/// Pairs that are each other's nearest neighbor.
pub fn mutual_nearest<T: Real>(desc_p: &[Vec<T>], desc_q: &[Vec<T>]) -> Result<Vec<(usize, usize)>> {
    let fwd = nearest_neighbors(desc_p, desc_q)?;
    let bwd = nearest_neighbors(desc_q, desc_p)?;
    Ok(fwd.iter().enumerate().filter(|&(i, &j)| bwd[j] == i).map(|(i, &j)| (i, j)).collect())
}

/// `M(i, j) = [1 - d_ij^2 / sigma_d^2]_+`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    pub n: usize,
    /// Row-major `n x n`.
    pub m: Vec<f64>,
    pub sigma_d: f64,
}

impl CompatibilityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }
}

/// Compatibility of correspondences `(src[k], dst[k])` by length preservation,
/// with `d_ij = |p_i - p_j| - |q_i - q_j|`.
pub fn compatibility_matrix(src: &[Vec3], dst: &[Vec3], sigma_d: f64) -> Result<CompatibilityMatrix> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!("{} source but {} target positions", src.len(), dst.len())));
    }
    if src.len() < 2 {
        return Err(Error::InvalidInput("compatibility needs at least 2 correspondences".into()));
    }
    if !(sigma_d > 0.0) {
        return Err(Error::InvalidInput(format!("sigma_d must be positive, got {sigma_d}")));
    }
    let n = src.len();
    let s2 = sigma_d * sigma_d;
    let mut m = vec![0.0; n * n];
    m.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, e) in row.iter_mut().enumerate() {
            if i != j {
                let d = (src[i] - src[j]).norm() - (dst[i] - dst[j]).norm();
                *e = (1.0 - d * d / s2).max(0.0);
            }
        }
    });
    Ok(CompatibilityMatrix { n, m, sigma_d })
}

/// Exactly `iters` normalized power iterations from the all-ones vector.
pub fn spectral_weights(m: &CompatibilityMatrix, iters: usize) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(Error::InvalidInput("power iteration needs at least one step".into()));
    }
    let n = m.n;
    let mut w = vec![1.0; n];
    for it in 0..iters {
        let next: Vec<f64> = m.m.chunks(n).map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateSpectrum(it + 1));
        }
        w = next.into_iter().map(|x| x / norm).collect();
    }
    Ok(w)
}

/// Fills `w_sm` from the positions of the paired keypoints and updates `w`.
pub fn assign_spectral_weights(
    corrs: &mut CorrespondenceSet,
    src_kp: &[Vec3],
    dst_kp: &[Vec3],
    sigma_d: f64,
    iters: usize,
) -> Result<()> {
    let src: Vec<Vec3> = corrs.pairs.iter().map(|&(i, _)| src_kp[i]).collect();
    let dst: Vec<Vec3> = corrs.pairs.iter().map(|&(_, j)| dst_kp[j]).collect();
    let m = compatibility_matrix(&src, &dst, sigma_d)?;
    corrs.w_sm = spectral_weights(&m, iters)?;
    corrs.w = corrs.w_f.iter().zip(&corrs.w_sm).map(|(a, b)| a * b).collect();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use crate::pointcloud::{RigidTransform, Transform3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_desc(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
        (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn identical_sets_match_diagonally() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_desc(&mut rng, 10, 8);
        let c = match_descriptors(&d, &d).unwrap();
        for (k, &(i, j)) in c.pairs.iter().enumerate() {
            assert_eq!(i, j);
            let row = softmax_neg(&distances(&d[i], &d));
            assert!(row.iter().all(|&x| x <= c.w_f[k]));
        }
        assert_eq!(mutual_nearest(&d, &d).unwrap(), (0..10).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn single_target_gives_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_desc(&mut rng, 5, 4);
        let q = random_desc(&mut rng, 1, 4);
        let c = match_descriptors(&p, &q).unwrap();
        assert!(c.w_f.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn random_instance_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_desc(&mut rng, 10, 6);
            let q = random_desc(&mut rng, 10, 6);
            let c = match_descriptors(&p, &q).unwrap();
            for i in 0..10 {
                let d: Vec<f64> = q
                    .iter()
                    .map(|r| r.iter().zip(&p[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .collect();
                let j = (0..10).fold(0, |b, j| if d[j] < d[b] { j } else { b });
                let z: f64 = d.iter().map(|x| (-x).exp()).sum();
                assert_eq!(c.pairs[i], (i, j));
                assert!((c.w_f[i] - (-d[j]).exp() / z).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let p = vec![vec![0.0, 0.0]];
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        assert_eq!(match_descriptors(&p, &q).unwrap().pairs, vec![(0, 0)]);
    }

    #[test]
    fn mutual_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_desc(&mut rng, 20, 3);
        let q = random_desc(&mut rng, 20, 3);
        let nn = |a: &Vec<f64>, set: &[Vec<f64>]| {
            (0..set.len()).fold(0, |b, j| if distance(a, &set[j]) < distance(a, &set[b]) { j } else { b })
        };
        let want: Vec<(usize, usize)> = (0..20)
            .filter_map(|i| {
                let j = nn(&p[i], &q);
                (nn(&q[j], &p) == i).then_some((i, j))
            })
            .collect();
        assert_eq!(mutual_nearest(&p, &q).unwrap(), want);
        // asymmetric: q0 is nearest to both p0 and p1, but only p0 is nearest to q0
        let p = vec![vec![0.0], vec![0.4]];
        let q = vec![vec![0.1], vec![2.0]];
        assert_eq!(mutual_nearest(&p, &q).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn compatibility_examples() {
        let src = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let t = RigidTransform::from_euler_xyz_deg(Vec3::new(10.0, 20.0, 30.0), Vec3::new(1.0, 2.0, 3.0));
        let dst: Vec<Vec3> = src.iter().map(|p| t.apply_point(p)).collect();
        let m = compatibility_matrix(&src, &dst, 0.1).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(m.get(1, 1), 0.0);
        let dst2 = vec![Vec3::zeros(), Vec3::new(1.1, 0.0, 0.0), Vec3::new(0.0, 1.0 + 0.1 / 2f64.sqrt(), 0.0)];
        let m = compatibility_matrix(&src, &dst2, 0.1).unwrap();
        assert!(m.get(0, 1).abs() < 1e-12);
        assert!((m.get(0, 2) - 0.5).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_and_degenerate_spectra() {
        let n = 7;
        let m = CompatibilityMatrix {
            n,
            m: (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect(),
            sigma_d: 0.1,
        };
        let w = spectral_weights(&m, 10).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / (n as f64).sqrt()).abs() < 1e-12));
        let z = CompatibilityMatrix {
            n: 3,
            m: vec![0.0; 9],
            sigma_d: 0.1,
        };
        assert!(matches!(spectral_weights(&z, 10), Err(Error::DegenerateSpectrum(1))));
        assert!(spectral_weights(&m, 0).is_err());
    }

    #[test]
    fn clique_dominates_isolated_rows() {
        let n = 40;
        let mut m = vec![0.0; n * n];
        for i in 0..20 {
            for j in 0..20 {
                if i != j {
                    m[i * n + j] = 1.0;
                }
            }
        }
        let w = spectral_weights(&CompatibilityMatrix { n, m, sigma_d: 0.1 }, 10).unwrap();
        assert!(w[20..].iter().all(|&x| x == 0.0));
        assert!(w[..20].iter().all(|&x| (x - 1.0 / 20f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn spectral_weights_are_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<Vec3> = (0..30).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let dst: Vec<Vec3> = src.iter().map(|p| p + Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05))).collect();
        let w = spectral_weights(&compatibility_matrix(&src, &dst, 0.1).unwrap(), 10).unwrap();
        let t = RigidTransform::from_euler_xyz_deg(Vec3::new(40.0, -70.0, 5.0), Vec3::new(3.0, 0.0, -1.0));
        let moved: Vec<Vec3> = dst.iter().map(|p| t.apply_point(p)).collect();
        let w2 = spectral_weights(&compatibility_matrix(&src, &moved, 0.1).unwrap(), 10).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-9);
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6 && w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn confidence_examples() {
        let c = CorrespondenceSet {
            pairs: vec![(0, 0), (1, 1)],
            w_f: vec![0.2, 0.5],
            w_sm: vec![0.5, 0.2],
            w: vec![0.0; 2],
        };
        let full = confidence(c.clone(), ConfidenceMode::default());
        assert!((full.w[0] - 0.1).abs() < 1e-15 && (full.w[1] - 0.1).abs() < 1e-15);
        let no_sm = confidence(c.clone(), ConfidenceMode { use_wf: true, use_wsm: false });
        assert_eq!(no_sm.w, vec![0.2, 0.5]);
        let none = confidence(c, ConfidenceMode { use_wf: false, use_wsm: false });
        assert_eq!(none.w, vec![1.0, 1.0]);
        assert_eq!(none.dump_text().lines().count(), 2);
    }

    #[test]
    fn tape_matching_agrees_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_desc(&mut rng, 6, 4);
        let q = random_desc(&mut rng, 5, 4);
        let flat = |d: &[Vec<f64>]| Tensor::new(vec![d.len(), 4], d.concat()).unwrap();
        let c = match_descriptors(&p, &q).unwrap();
        let mut t = Tape::new();
        let (vp, vq) = (t.constant(flat(&p)), t.constant(flat(&q)));
        let tm = match_descriptors_on_tape(&mut t, vp, vq).unwrap();
        assert_eq!(tm.pairs, c.pairs);
        for (a, b) in t.value(tm.w_f).data().iter().zip(&c.w_f) {
            assert!((a - b).abs() < 1e-12);
        }
        let pairs = c.pairs.clone();
        let err = grad_check(
            |t, v| {
                let tm = match_descriptors_on_tape(t, v[0], v[1])?;
                assert_eq!(tm.pairs, pairs);
                let w = t.constant(Tensor::vector((0..6).map(|i| 1.0 + i as f64).collect()));
                let m = t.mul(tm.w_f, w)?;
                Ok(t.sum(m))
            },
            &[flat(&p), flat(&q)],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
