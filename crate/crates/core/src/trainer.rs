//! Weakly supervised training: descriptors of both clouds are matched in both
//! directions, weighted affine maps are fitted from the matches, and the
//! deviation of those maps from a rigid, cycle-consistent pair is minimized.
//!
//! A step records one tape per keypoint (grid plus network) and one head tape
//! on which the descriptors are leaves. The head gradient of each descriptor
//! seeds the backward pass of its keypoint tape.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{fit_affine_on_tape, registration_loss_on_tape, FitTargets, LossReport, DEFAULT_DAMPING};
use crate::autodiff::{adam_step, AdamConfig, AdamState, CustomOp, Tape, Tensor, Var};
use crate::datagen::PairSample;
use crate::descriptor::{
    keypoint_descriptor_on_tape, save_checkpoint, Architecture, GridConfig, NetworkParams, DEFAULT_DIM,
    DEFAULT_RESOLUTION, DEFAULT_R_LRF,
};
use crate::matching::{compatibility_matrix, match_descriptors_on_tape, spectral_weights, DEFAULT_POWER_ITERS, DEFAULT_SIGMA_D};
use crate::pointcloud::{farthest_point_sample, PointCloud, SpatialIndex};
use crate::voxelizer::{DEFAULT_CUTOFF, DEFAULT_SHARPNESS};
use crate::{Error, Real, Result, Vec3};

pub const DEFAULT_CHECKPOINT_EVERY: usize = 500;
pub const SCENE_KEYPOINTS: usize = 512;
pub const OBJECT_KEYPOINTS: usize = 128;

/// Switches that disable parts of the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Keep the support at its initial value.
    pub fixed_support: bool,
    pub no_wf: bool,
    pub no_wsm: bool,
    pub no_lo: bool,
    pub no_lc: bool,
    /// Use softmax-weighted target positions instead of the matched keypoint.
    pub soft_positions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub kp_per_cloud: usize,
    pub lr: f64,
    pub lambda_o: f64,
    pub lambda_c: f64,
    /// Voxelization sharpness.
    pub sigma: f64,
    pub cutoff: f64,
    pub r_lrf: f64,
    pub h: usize,
    pub n: usize,
    /// `standard` or `compact`.
    pub arch: String,
    pub sigma_d: f64,
    pub power_iters: usize,
    pub damping: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 16_000,
            kp_per_cloud: SCENE_KEYPOINTS,
            lr: 1e-3,
            lambda_o: 1.0,
            lambda_c: 1.0,
            sigma: DEFAULT_SHARPNESS,
            cutoff: DEFAULT_CUTOFF,
            r_lrf: DEFAULT_R_LRF,
            h: DEFAULT_RESOLUTION,
            n: DEFAULT_DIM,
            arch: "standard".into(),
            sigma_d: DEFAULT_SIGMA_D,
            power_iters: DEFAULT_POWER_ITERS,
            damping: DEFAULT_DAMPING,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            seed: 0,
            ablations: Ablations::default(),
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    /// Defaults with the smaller keypoint budget used for single objects.
    pub fn object_preset() -> Self {
        Self {
            kp_per_cloud: OBJECT_KEYPOINTS,
            ..Self::default()
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "steps",
        "kp_per_cloud",
        "lr",
        "lambda_o",
        "lambda_c",
        "sigma",
        "cutoff",
        "r_lrf",
        "h",
        "n",
        "arch",
        "sigma_d",
        "power_iters",
        "damping",
        "checkpoint_every",
        "seed",
        "fixed_support",
        "no_wf",
        "no_wsm",
        "no_lo",
        "no_lc",
        "soft_positions",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let a = &mut self.ablations;
        match key.trim() {
            "steps" => self.steps = parse_value(key, v)?,
            "kp_per_cloud" => self.kp_per_cloud = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "lambda_o" => self.lambda_o = parse_value(key, v)?,
            "lambda_c" => self.lambda_c = parse_value(key, v)?,
            "sigma" => self.sigma = parse_value(key, v)?,
            "cutoff" => self.cutoff = parse_value(key, v)?,
            "r_lrf" => self.r_lrf = parse_value(key, v)?,
            "h" => self.h = parse_value(key, v)?,
            "n" => self.n = parse_value(key, v)?,
            "arch" => self.arch = v.to_string(),
            "sigma_d" => self.sigma_d = parse_value(key, v)?,
            "power_iters" => self.power_iters = parse_value(key, v)?,
            "damping" => self.damping = parse_value(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "fixed_support" => a.fixed_support = parse_bool(key, v)?,
            "no_wf" => a.no_wf = parse_bool(key, v)?,
            "no_wsm" => a.no_wsm = parse_bool(key, v)?,
            "no_lo" => a.no_lo = parse_bool(key, v)?,
            "no_lc" => a.no_lc = parse_bool(key, v)?,
            "soft_positions" => a.soft_positions = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.kp_per_cloud < 4 {
            return bad(format!("kp_per_cloud must be at least 4, got {}", self.kp_per_cloud));
        }
        for (k, v) in [("lr", self.lr), ("sigma", self.sigma), ("r_lrf", self.r_lrf), ("sigma_d", self.sigma_d)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("lambda_o", self.lambda_o), ("lambda_c", self.lambda_c), ("damping", self.damping), ("cutoff", self.cutoff)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        if self.power_iters == 0 || self.checkpoint_every == 0 {
            return bad("power_iters and checkpoint_every must be at least 1".into());
        }
        self.architecture().map(|_| ())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::preset(&self.arch, self.h, self.n)
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            r_lrf: self.r_lrf,
            sharpness: self.sigma,
            cutoff: self.cutoff,
        }
    }

    /// Loss weights after the ablation switches.
    pub fn lambdas(&self) -> (f64, f64) {
        (
            if self.ablations.no_lo { 0.0 } else { self.lambda_o },
            if self.ablations.no_lc { 0.0 } else { self.lambda_c },
        )
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Result of one non-skipped step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T: Real> {
    pub report: LossReport,
    /// One gradient per parameter tensor, in storage order.
    pub grads: Vec<Tensor<T>>,
    /// Positively weighted correspondences per direction.
    pub positive: (usize, usize),
    /// Keypoints dropped for a degenerate frame or patch.
    pub skipped_keypoints: usize,
}

struct KeypointTape<'p, T: Real> {
    tape: Tape<'p, T>,
    vars: Vec<Var>,
    desc: Var,
}

fn keypoint_tapes<'p, T: Real>(
    params: &'p NetworkParams<T>,
    cloud: &PointCloud,
    keypoints: &[usize],
    grid: &GridConfig,
) -> Result<(Vec<KeypointTape<'p, T>>, Vec<Vec3>)> {
    let index = SpatialIndex::build(cloud)?;
    let built: Vec<Result<Option<KeypointTape<'p, T>>>> = keypoints
        .par_iter()
        .map(|&kp| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            match keypoint_descriptor_on_tape(&mut tape, params, &vars, cloud, &index, kp, grid) {
                Ok(desc) => Ok(Some(KeypointTape {
                    tape,
                    vars: vars.all(),
                    desc,
                })),
                Err(Error::AmbiguousFrame { .. }) | Err(Error::DegeneratePatch { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut tapes = Vec::new();
    let mut positions = Vec::new();
    for (&kp, b) in keypoints.iter().zip(built) {
        if let Some(t) = b? {
            tapes.push(t);
            positions.push(*cloud.point(kp));
        }
    }
    Ok((tapes, positions))
}

/// `[m, k]` softmax rows times fixed `[k, 3]` positions.
struct SoftTargets {
    positions: Vec<Vec3>,
}

impl<T: Real> CustomOp<T> for SoftTargets {
    fn name(&self) -> &str {
        "soft_targets"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let mut g = Vec::with_capacity(grad_out.len() / 3 * self.positions.len());
        for go in grad_out.chunks(3) {
            for q in &self.positions {
                g.push(go[0] * T::lit(q.x) + go[1] * T::lit(q.y) + go[2] * T::lit(q.z));
            }
        }
        Ok(vec![Some(g)])
    }
}

fn soft_targets<T: Real>(tape: &mut Tape<'_, T>, rows: Var, positions: &[Vec3]) -> Var {
    let r = tape.value(rows);
    let m = r.shape()[0];
    let mut out = Vec::with_capacity(3 * m);
    for row in r.data().chunks(positions.len()) {
        let mut acc = Vec3::zeros();
        for (w, q) in row.iter().zip(positions) {
            acc += q * w.to_f64_lossy();
        }
        out.extend([T::lit(acc.x), T::lit(acc.y), T::lit(acc.z)]);
    }
    let value = Tensor::new(vec![m, 3], out).expect("3 values per row");
    tape.custom(
        &[rows],
        value,
        Box::new(SoftTargets {
            positions: positions.to_vec(),
        }),
    )
}

/// Matches `desc_a` against `desc_b` and records the weighted affine fit
/// from `pos_a` to `pos_b`. Returns the `[12]` transform and the number of
/// positive weights.
fn directional_fit<T: Real>(
    tape: &mut Tape<'_, T>,
    desc_a: Var,
    desc_b: Var,
    pos_a: &[Vec3],
    pos_b: &[Vec3],
    cfg: &TrainConfig,
) -> Result<(Var, usize)> {
    let matches = match_descriptors_on_tape(tape, desc_a, desc_b)?;
    let src: Vec<Vec3> = matches.pairs.iter().map(|&(i, _)| pos_a[i]).collect();
    let dst: Vec<Vec3> = matches.pairs.iter().map(|&(_, j)| pos_b[j]).collect();
    let m = src.len();
    let ab = cfg.ablations;
    let w_sm = if ab.no_wsm {
        vec![1.0; m]
    } else {
        let cm = compatibility_matrix(&src, &dst, cfg.sigma_d)?;
        match spectral_weights(&cm, cfg.power_iters) {
            Ok(w) => w,
            Err(Error::DegenerateSpectrum(_)) => {
                return Err(Error::StepSkipped("no mutually compatible correspondences".into()));
            }
            Err(e) => return Err(e),
        }
    };
    let w_sm_t = Tensor::vector(w_sm.iter().map(|&x| T::lit(x)).collect());
    let weights = if ab.no_wf {
        tape.constant(w_sm_t)
    } else if ab.no_wsm {
        matches.w_f
    } else {
        let c = tape.constant(w_sm_t);
        tape.mul(matches.w_f, c)?
    };
    let positive = tape.value(weights).data().iter().filter(|w| w.to_f64_lossy() > 0.0).count();
    if positive < crate::alignment::MIN_POSITIVE_WEIGHTS {
        return Err(Error::StepSkipped(format!("{positive} positively weighted correspondences")));
    }
    let fit = if ab.soft_positions {
        let t = soft_targets(tape, matches.rows, pos_b);
        fit_affine_on_tape(tape, &src, FitTargets::Var(t), weights, cfg.damping)
    } else {
        fit_affine_on_tape(tape, &src, FitTargets::Fixed(&dst), weights, cfg.damping)
    };
    match fit {
        Ok(v) => Ok((v, positive)),
        Err(Error::RankDeficient(c)) => Err(Error::StepSkipped(format!("rank-deficient fit (condition {c:e})"))),
        Err(e) => Err(e),
    }
}

fn descriptor_batch<T: Real>(tapes: &[KeypointTape<'_, T>]) -> Result<Tensor<T>> {
    let n = tapes[0].tape.value(tapes[0].desc).len();
    let data: Vec<T> = tapes.iter().flat_map(|k| k.tape.value(k.desc).data().iter().copied()).collect();
    Tensor::new(vec![tapes.len(), n], data)
}

/// Loss and parameter gradients for one pair. `StepSkipped` means the pair
/// produced too few usable correspondences; nothing should be updated.
pub fn training_step<T: Real>(
    pair: &PairSample,
    params: &NetworkParams<T>,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<StepOutput<T>> {
    if pair.source.len() < cfg.kp_per_cloud || pair.target.len() < cfg.kp_per_cloud {
        return Err(Error::InvalidInput(format!(
            "pair has {} and {} points, need {} keypoints per cloud",
            pair.source.len(),
            pair.target.len(),
            cfg.kp_per_cloud
        )));
    }
    let grid = cfg.grid();
    // one seed for both sides, so identical clouds get identical keypoints
    let kp = farthest_point_sample(&pair.source, cfg.kp_per_cloud, step_seed)?;
    let kq = farthest_point_sample(&pair.target, cfg.kp_per_cloud, step_seed)?;
    let (tp, pos_p) = keypoint_tapes(params, &pair.source, &kp, &grid)?;
    let (tq, pos_q) = keypoint_tapes(params, &pair.target, &kq, &grid)?;
    let skipped_keypoints = 2 * cfg.kp_per_cloud - tp.len() - tq.len();
    let need = crate::alignment::MIN_POSITIVE_WEIGHTS;
    if tp.len() < need || tq.len() < need {
        return Err(Error::StepSkipped(format!("only {} and {} keypoints have descriptors", tp.len(), tq.len())));
    }

    let mut head: Tape<'_, T> = Tape::new();
    let dp = head.leaf(descriptor_batch(&tp)?, true);
    let dq = head.leaf(descriptor_batch(&tq)?, true);
    let (fwd, np) = directional_fit(&mut head, dp, dq, &pos_p, &pos_q, cfg)?;
    let (bwd, nq) = directional_fit(&mut head, dq, dp, &pos_q, &pos_p, cfg)?;
    let (lo, lc) = cfg.lambdas();
    let (loss, report) = registration_loss_on_tape(&mut head, fwd, bwd, lo, lc)?;
    let mut hg = head.backward(loss)?;
    let gp = hg.take(dp).ok_or_else(|| Error::Shape("source descriptors received no gradient".into()))?;
    let gq = hg.take(dq).ok_or_else(|| Error::Shape("target descriptors received no gradient".into()))?;

    let n = gp.shape()[1];
    let jobs: Vec<(&KeypointTape<'_, T>, &[T])> = tp
        .iter()
        .zip(gp.data().chunks(n))
        .chain(tq.iter().zip(gq.data().chunks(n)))
        .collect();
    let per_kp: Vec<Result<Vec<Option<Tensor<T>>>>> = jobs
        .par_iter()
        .map(|(k, seed)| {
            let mut g = k.tape.backward_with(k.desc, seed.to_vec())?;
            Ok(k.vars.iter().map(|&v| g.take(v)).collect())
        })
        .collect();
    let mut grads: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    for r in per_kp {
        for (acc, g) in grads.iter_mut().zip(r?) {
            if let Some(g) = g {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
    }
    if cfg.ablations.fixed_support {
        let last = grads.len() - 1;
        grads[last] = Tensor::zeros(grads[last].shape().to_vec());
    }
    Ok(StepOutput {
        report,
        grads,
        positive: (np, nq),
        skipped_keypoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub l_pcr: f64,
    pub l_o: f64,
    pub l_c: f64,
    /// Support in effect during the step.
    pub support: f64,
    /// Wall time since the start of training.
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "step,l_pcr,l_o,l_c,support,seconds";

pub fn log_csv(records: &[TrainLogRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{},{:.3}", r.step, r.l_pcr, r.l_o, r.l_c, r.support, r.seconds);
    }
    s
}

/// Mean of the first and of the last `window` values.
pub fn moving_average_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    let w = window.min(values.len());
    if w == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}

/// Where and how often to checkpoint.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub params: NetworkParams<T>,
    pub log: Vec<TrainLogRecord>,
    pub updates: usize,
    pub skipped_steps: usize,
}

/// Runs `cfg.steps` steps, one pair per step, visiting the dataset in a
/// seeded order that is reshuffled every epoch.
pub fn train<T: Real>(
    dataset: &[PairSample],
    mut params: NetworkParams<T>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    mut on_record: impl FnMut(&TrainLogRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training needs at least one pair".into()));
    }
    if params.arch != cfg.architecture()? {
        return Err(Error::Config("parameters do not match the configured architecture".into()));
    }
    let start = Instant::now();
    let adam = cfg.adam();
    let mut state = AdamState::new(params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::new();
    let (mut updates, mut skipped) = (0, 0);
    let mut epoch_ok = 0;
    let mut last_skip = String::new();
    for step in 1..=cfg.steps {
        let pos = (step - 1) % dataset.len();
        if pos == 0 {
            if step > 1 && epoch_ok == 0 {
                return Err(Error::StepSkipped(format!("every step of an epoch was skipped; last: {last_skip}")));
            }
            epoch_ok = 0;
            order.shuffle(&mut rng);
        }
        let step_seed = rng.next_u64();
        let support = params.support();
        match training_step(&dataset[order[pos]], &params, cfg, step_seed) {
            Ok(out) => {
                let grads: Vec<&Tensor<T>> = out.grads.iter().collect();
                adam_step(&mut params.tensors_mut(), &grads, &mut state, &adam)?;
                updates += 1;
                epoch_ok += 1;
                let rec = TrainLogRecord {
                    step,
                    l_pcr: out.report.l_pcr,
                    l_o: out.report.l_o,
                    l_c: out.report.l_c,
                    support,
                    seconds: start.elapsed().as_secs_f64(),
                };
                on_record(&rec);
                log.push(rec);
            }
            Err(Error::StepSkipped(why)) => {
                skipped += 1;
                last_skip = why;
            }
            Err(e) => return Err(e),
        }
        if let Some(path) = &opts.checkpoint {
            if step % cfg.checkpoint_every == 0 || step == cfg.steps {
                save_checkpoint(&params, path)?;
            }
        }
    }
    if updates == 0 {
        return Err(Error::StepSkipped(format!("every step was skipped; last: {last_skip}")));
    }
    Ok(TrainOutcome {
        params,
        log,
        updates,
        skipped_steps: skipped,
    })
}
