//! Finite-difference checks of every differentiable stage in `f64`.

use std::time::Instant;

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wsdesc_core::alignment::{fit_affine_on_tape, registration_loss_on_tape, FitTargets};
use wsdesc_core::autodiff::{grad_check_sampled, relative_error, Tape, Tensor, Var};
use wsdesc_core::datagen::{make_pair, procedural_shape, PairGenConfig};
use wsdesc_core::descriptor::init_network;
use wsdesc_core::lrf::LrfFrame;
use wsdesc_core::pointcloud::{PointCloud, RigidTransform, SpatialIndex};
use wsdesc_core::trainer::{training_step, TrainConfig};
use wsdesc_core::voxelizer::{voxelize, voxelize_backward, voxelize_on_tape, VoxelGridSpec};
use wsdesc_core::Vec3;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checks: usize,
    pub seconds: f64,
    pub passed: bool,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// `sum(out * w)` for a fixed random `w`, so every output entry matters.
fn project(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Result<Var, wsdesc_core::Error> {
    let n = tape.value(out).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::new(tape.value(out).shape().to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

fn random_rotation(rng: &mut ChaCha8Rng, t: f64) -> RigidTransform {
    RigidTransform::from_euler_xyz_deg(
        Vec3::from_fn(|_, _| rng.random_range(-180.0..180.0)),
        Vec3::from_fn(|_, _| if t > 0.0 { rng.random_range(-t..t) } else { 0.0 }),
    )
}

fn voxelization(mode: Mode) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = if mode == Mode::Full { 20 } else { 4 };
    let step = 1e-5;
    let (mut worst, mut checks) = (0.0f64, 0);
    let weighted = |cloud: &PointCloud, spec: &VoxelGridSpec, up: &[f64]| -> Result<f64> {
        Ok(voxelize(cloud, spec)?.values().iter().zip(up).map(|(a, b)| a * b).sum())
    };
    for trial in 0..trials {
        let h = 4;
        let pts: Vec<Vec3> = (0..30).map(|_| Vec3::from_fn(|_, _| rng.random_range(-0.25..0.25))).collect();
        let cloud = PointCloud::new(pts, "patch")?;
        let frame = LrfFrame {
            axes: *random_rotation(&mut rng, 0.0).rotation(),
            center: Vec3::zeros(),
            radius: 0.3,
        };
        let mut spec = VoxelGridSpec::new(frame, 0.4 + 0.01 * trial as f64, h);
        spec.sharpness = 1e-2;
        spec.cutoff = 0.0;
        let up: Vec<f64> = (0..h * h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = voxelize_backward(&cloud, &spec, &up)?;
        let (mut sp, mut sm) = (spec, spec);
        sp.support += step;
        sm.support -= step;
        let num = (weighted(&cloud, &sp, &up)? - weighted(&cloud, &sm, &up)?) / (2.0 * step);
        worst = worst.max(relative_error(g.d_support, num));
        checks += 1;
        for j in (0..30).step_by(5) {
            for k in 0..3 {
                let mut pts = cloud.points().to_vec();
                pts[j][k] += step;
                let fp = weighted(&PointCloud::new(pts.clone(), "p")?, &spec, &up)?;
                pts[j][k] -= 2.0 * step;
                let fm = weighted(&PointCloud::new(pts, "p")?, &spec, &up)?;
                worst = worst.max(relative_error(g.d_points[j][k], (fp - fm) / (2.0 * step)));
                checks += 1;
            }
        }
        let index = SpatialIndex::build(&cloud)?;
        let e = wsdesc_core::autodiff::grad_check(
            |t, v| {
                let grid = voxelize_on_tape(t, v[0], &index, &spec)?;
                project(t, grid, trial)
            },
            &[Tensor::scalar(spec.support.ln())],
            1e-6,
        )?;
        worst = worst.max(e);
        checks += 1;
    }
    Ok((worst, checks))
}

fn sampled<F>(f: F, inputs: &[Tensor<f64>], mode: Mode, seed: u64) -> Result<(f64, usize)>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Result<Var, wsdesc_core::Error>,
{
    let per = if mode == Mode::Full { 64 } else { 8 };
    let checks = inputs.iter().map(|t| t.len().min(per)).sum();
    Ok((grad_check_sampled(f, inputs, 1e-6, per, seed)?, checks))
}

fn conv3d(mode: Mode) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (stride, padding) in [(1, 1), (2, 0)] {
        let inputs = [
            random_tensor(&mut rng, vec![2, 5, 5, 5], -1.0, 1.0),
            random_tensor(&mut rng, vec![3, 2, 3, 3, 3], -0.5, 0.5),
            random_tensor(&mut rng, vec![3], -0.5, 0.5),
        ];
        let (e, c) = sampled(
            |t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), stride, padding)?;
                project(t, y, 1)
            },
            &inputs,
            mode,
            stride as u64,
        )?;
        worst = worst.max(e);
        checks += c;
    }
    Ok((worst, checks))
}

fn instance_norm(mode: Mode) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = [random_tensor(&mut rng, vec![3, 4, 4, 4], -1.0, 1.0)];
    sampled(
        |t, v| {
            let y = t.instance_norm(v[0], 1e-5)?;
            project(t, y, 2)
        },
        &inputs,
        mode,
        3,
    )
}

fn softmax_neg_distance(mode: Mode) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inputs = [
        random_tensor(&mut rng, vec![8], -1.0, 1.0),
        random_tensor(&mut rng, vec![6, 8], -1.0, 1.0),
    ];
    sampled(
        |t, v| {
            let y = t.softmax_neg_distance(v[0], v[1])?;
            project(t, y, 3)
        },
        &inputs,
        mode,
        4,
    )
}

fn fit_affine(mode: Mode) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let m = 12;
    let src: Vec<Vec3> = (0..m).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    let gt = random_rotation(&mut rng, 1.0);
    let dst: Vec<f64> = src
        .iter()
        .flat_map(|p| {
            let q = gt.rotation() * p + gt.translation();
            [q.x, q.y, q.z]
        })
        .map(|v| v + rng.random_range(-0.1..0.1))
        .collect();
    let inputs = [
        Tensor::new(vec![m, 3], dst)?,
        random_tensor(&mut rng, vec![m], 0.2, 1.0),
    ];
    sampled(
        |t, v| {
            let y = fit_affine_on_tape(t, &src, FitTargets::Var(v[0]), v[1], 1e-9)?;
            project(t, y, 5)
        },
        &inputs,
        mode,
        5,
    )
}

/// A rigid map perturbed into a general affine one, as `[12]` row-major.
fn near_rigid(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let r = random_rotation(rng, 1.0).to_rows();
    Tensor::vector(r.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect())
}

fn loss_suite(mode: Mode, lambda_o: f64, lambda_c: f64, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = if mode == Mode::Full { 10 } else { 2 };
    let (mut worst, mut checks) = (0.0f64, 0);
    for _ in 0..trials {
        let inputs = [near_rigid(&mut rng), near_rigid(&mut rng)];
        let (e, c) = sampled(
            |t, v| Ok(registration_loss_on_tape(t, v[0], v[1], lambda_o, lambda_c)?.0),
            &inputs,
            Mode::Full,
            seed,
        )?;
        worst = worst.max(e);
        checks += c;
    }
    Ok((worst, checks))
}

/// The whole training step on a micro network, differentiated through every
/// parameter tensor including the support.
fn end_to_end(mode: Mode) -> Result<(f64, usize)> {
    let cfg = TrainConfig {
        kp_per_cloud: 12,
        h: 8,
        n: 8,
        arch: "compact".into(),
        // the truncated voxelization jumps where a factor crosses the cutoff
        cutoff: 0.0,
        ..TrainConfig::default()
    };
    let shape = procedural_shape(5, 256)?;
    let pair = make_pair(
        &shape,
        &PairGenConfig {
            crop_k: 128,
            seed: 5,
            ..Default::default()
        },
    )?;
    let params = init_network::<f64>(&cfg.architecture()?, 3, cfg.r_lrf)?;
    let out = training_step(&pair, &params, &cfg, 9)?;
    let per = if mode == Mode::Full { 3 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let eps = 1e-6;
    let (mut worst, mut checks) = (0.0f64, 0);
    let count = params.tensors().len();
    for ti in 0..count {
        let len = params.tensors()[ti].len();
        for _ in 0..per.min(len) {
            let entry = rng.random_range(0..len);
            let loss = |delta: f64| -> Result<f64> {
                let mut q = params.clone();
                q.tensors_mut()[ti].data_mut()[entry] += delta;
                Ok(training_step(&pair, &q, &cfg, 9)?.report.l_pcr)
            };
            let numeric = (loss(eps)? - loss(-eps)?) / (2.0 * eps);
            let analytic = out.grads[ti].data()[entry];
            // biases in front of an instance norm have no effect at all; the
            // difference quotient is then pure roundoff
            let e = if analytic.abs() < 1e-12 && numeric.abs() < 1e-7 {
                0.0
            } else {
                relative_error(analytic, numeric)
            };
            worst = worst.max(e);
            checks += 1;
        }
    }
    Ok((worst, checks))
}

type Suite = (&'static str, f64, fn(Mode) -> Result<(f64, usize)>);

pub fn run(mode: Mode) -> Result<Vec<SuiteResult>> {
    let suites: [Suite; 8] = [
        ("voxelization", TOLERANCE, voxelization),
        ("conv3d", TOLERANCE, conv3d),
        ("instance_norm", TOLERANCE, instance_norm),
        ("softmax_neg_distance", TOLERANCE, softmax_neg_distance),
        ("fit_affine_weighted", TOLERANCE, fit_affine),
        ("orthogonality_loss", TOLERANCE, |m| loss_suite(m, 1.0, 0.0, 17)),
        ("cycle_loss", TOLERANCE, |m| loss_suite(m, 0.0, 1.0, 18)),
        ("end_to_end_step", STEP_TOLERANCE, end_to_end),
    ];
    suites
        .iter()
        .map(|&(suite, tolerance, f)| {
            let start = Instant::now();
            let (max_rel_error, checks) = f(mode)?;
            Ok(SuiteResult {
                suite,
                max_rel_error,
                tolerance,
                checks,
                seconds: start.elapsed().as_secs_f64(),
                passed: max_rel_error < tolerance && checks > 0,
            })
        })
        .collect()
}

pub fn table(results: &[SuiteResult]) -> String {
    let mut s = format!("{:<22} {:>12} {:>10} {:>7} {:>8}  result\n", "suite", "max_rel_err", "tolerance", "checks", "seconds");
    for r in results {
        s.push_str(&format!(
            "{:<22} {:>12.3e} {:>10.0e} {:>7} {:>8.2}  {}\n",
            r.suite,
            r.max_rel_error,
            r.tolerance,
            r.checks,
            r.seconds,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}
