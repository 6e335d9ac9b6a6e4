//! The 3D CNN descriptor extractor, its parameters and persistence.

mod checkpoint;
mod export;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::lrf::estimate_lrf;
use crate::pointcloud::{PointCloud, SpatialIndex};
use crate::voxelizer::{voxelize_indexed, voxelize_on_tape, VoxelGrid, VoxelGridSpec, DEFAULT_CUTOFF, DEFAULT_SHARPNESS};
use crate::{Error, Real, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use export::{read_descriptors, write_descriptors};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_RESOLUTION: usize = 16;
pub const DEFAULT_R_LRF: f64 = 0.3;

/// Layer schedule of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub resolution: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub dim: usize,
}

impl Architecture {
    /// Channels (32, 32, 64, 64, 128, 128), strides (1, 1, 2, 1, 2, 1).
    pub fn standard(resolution: usize, dim: usize) -> Self {
        Self::with_channels(resolution, dim, vec![32, 32, 64, 64, 128, 128])
    }

    /// Quarter-width variant of [`Self::standard`] for single-core training.
    pub fn compact(resolution: usize, dim: usize) -> Self {
        Self::with_channels(resolution, dim, vec![8, 8, 16, 16, 32, 32])
    }

    pub fn with_channels(resolution: usize, dim: usize, channels: Vec<usize>) -> Self {
        Self {
            resolution,
            channels,
            strides: vec![1, 1, 2, 1, 2, 1],
            kernel: 3,
            padding: 1,
            dim,
        }
    }

    /// Preset by name: `standard` or `compact`.
    pub fn preset(name: &str, resolution: usize, dim: usize) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard(resolution, dim)),
            "compact" => Ok(Self::compact(resolution, dim)),
            _ => Err(Error::Config(format!("unknown architecture preset {name:?} (expected standard or compact)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidInput(format!("descriptor dimension must be at least 2, got {}", self.dim)));
        }
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::InvalidInput("channel and stride lists must be non-empty and equally long".into()));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.kernel == 0 {
            return Err(Error::InvalidInput("channels, strides and kernel must be positive".into()));
        }
        let mut d = self.resolution;
        for &s in &self.strides {
            if d + 2 * self.padding < self.kernel {
                return Err(Error::InvalidInput(format!("resolution {} is too small for this schedule", self.resolution)));
            }
            d = (d + 2 * self.padding - self.kernel) / s + 1;
        }
        Ok(())
    }

    /// Spatial edge of the last feature map.
    pub fn final_edge(&self) -> usize {
        self.strides
            .iter()
            .fold(self.resolution, |d, &s| (d + 2 * self.padding - self.kernel) / s + 1)
    }

    pub fn flat_features(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * self.final_edge().pow(3)
    }

    /// `(name, shape)` of every tensor in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &c) in self.channels.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![c, cin, k, k, k]));
            out.push((format!("conv{i}.bias"), vec![c]));
            cin = c;
        }
        out.push(("head.weight".into(), vec![self.dim, self.flat_features()]));
        out.push(("head.bias".into(), vec![self.dim]));
        out.push(("log_support".into(), vec![1]));
        out
    }
}

/// Learnable parameters: conv blocks, linear head and `log s`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T: Real> {
    pub arch: Architecture,
    pub conv_weights: Vec<Tensor<T>>,
    pub conv_biases: Vec<Tensor<T>>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
    pub log_support: Tensor<T>,
}

/// Tape handles of a registered parameter set.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub conv_weights: Vec<Var>,
    pub conv_biases: Vec<Var>,
    pub head_weight: Var,
    pub head_bias: Var,
    pub log_support: Var,
}

impl ParamVars {
    /// Handles in storage order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            v.push(*w);
            v.push(*b);
        }
        v.extend([self.head_weight, self.head_bias, self.log_support]);
        v
    }
}

/// `log(2 r / sqrt(3))`, the support whose grid is inscribed in the LRF ball.
pub fn initial_log_support(r_lrf: f64) -> f64 {
    (2.0 * r_lrf / 3f64.sqrt()).ln()
}

/// Fan-in scaled uniform weights, zero biases, support from `r_lrf`.
pub fn init_network<T: Real>(arch: &Architecture, seed: u64, r_lrf: f64) -> Result<NetworkParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |shape: &[usize]| -> Tensor<T> {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        Tensor::new(shape.to_vec(), data).expect("count matches shape")
    };
    let shapes = arch.tensor_shapes();
    let mut conv_weights = Vec::new();
    let mut conv_biases = Vec::new();
    for i in 0..arch.channels.len() {
        conv_weights.push(uniform(&shapes[2 * i].1));
        conv_biases.push(Tensor::zeros(shapes[2 * i + 1].1.clone()));
    }
    let nc = arch.channels.len();
    Ok(NetworkParams {
        arch: arch.clone(),
        conv_weights,
        conv_biases,
        head_weight: uniform(&shapes[2 * nc].1),
        head_bias: Tensor::zeros(vec![arch.dim]),
        log_support: Tensor::scalar(T::lit(initial_log_support(r_lrf))),
    })
}

impl<T: Real> NetworkParams<T> {
    pub fn support(&self) -> f64 {
        self.log_support.data()[0].to_f64_lossy().exp()
    }

    /// Tensors in storage order with their names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let names = self.arch.tensor_shapes();
        self.tensors().into_iter().zip(names).map(|(t, (n, _))| (n, t)).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            v.push(w);
            v.push(b);
        }
        v.extend([&self.head_weight, &self.head_bias, &self.log_support]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for (w, b) in self.conv_weights.iter_mut().zip(self.conv_biases.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v.push(&mut self.log_support);
        v
    }

    /// Checks tensor shapes against the architecture and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        for ((name, t), (_, shape)) in self.named_tensors().into_iter().zip(self.arch.tensor_shapes()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(Error::InvalidInput(format!("tensor {name} holds non-finite values")));
            }
        }
        Ok(())
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            conv_weights: self.conv_weights.iter().map(Tensor::cast).collect(),
            conv_biases: self.conv_biases.iter().map(Tensor::cast).collect(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
            log_support: self.log_support.cast(),
        }
    }

    /// Registers every tensor as a borrowed, gradient-receiving leaf.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p, T>) -> ParamVars {
        let conv_weights = self.conv_weights.iter().map(|t| tape.param(t)).collect();
        let conv_biases = self.conv_biases.iter().map(|t| tape.param(t)).collect();
        ParamVars {
            conv_weights,
            conv_biases,
            head_weight: tape.param(&self.head_weight),
            head_bias: tape.param(&self.head_bias),
            log_support: tape.param(&self.log_support),
        }
    }
}

/// conv, instance norm, relu per block; flatten, linear, l2 normalize.
pub fn forward_on_tape<T: Real>(tape: &mut Tape<'_, T>, arch: &Architecture, vars: &ParamVars, grid: Var) -> Result<Var> {
    let h = arch.resolution;
    if tape.value(grid).shape() != [1, h, h, h] {
        return Err(Error::Shape(format!(
            "network expects a [1, {h}, {h}, {h}] grid, got {:?}",
            tape.value(grid).shape()
        )));
    }
    let mut x = grid;
    for i in 0..arch.channels.len() {
        x = tape.conv3d(x, vars.conv_weights[i], Some(vars.conv_biases[i]), arch.strides[i], arch.padding)?;
        x = tape.instance_norm(x, T::lit(INSTANCE_NORM_EPS))?;
        x = tape.relu(x);
    }
    let y = tape.linear(x, vars.head_weight, Some(vars.head_bias))?;
    tape.l2_normalize(y)
}

/// Descriptor of one grid (`[1, h, h, h]`).
pub fn forward<T: Real>(params: &NetworkParams<T>, grid: &Tensor<T>) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let vars = constant_vars(params, &mut tape);
    let g = tape.constant(grid.clone());
    let out = forward_on_tape(&mut tape, &params.arch, &vars, g)?;
    Ok(tape.value(out).data().to_vec())
}

fn constant_vars<'p, T: Real>(params: &NetworkParams<T>, tape: &mut Tape<'p, T>) -> ParamVars {
    ParamVars {
        conv_weights: params.conv_weights.iter().map(|t| tape.constant(t.clone())).collect(),
        conv_biases: params.conv_biases.iter().map(|t| tape.constant(t.clone())).collect(),
        head_weight: tape.constant(params.head_weight.clone()),
        head_bias: tape.constant(params.head_bias.clone()),
        log_support: tape.constant(params.log_support.clone()),
    }
}

/// Descriptors of a batch of grids, computed in parallel; output order
/// follows input order and each result depends only on its own grid.
pub fn forward_batch<T: Real>(params: &NetworkParams<T>, grids: &[Tensor<T>]) -> Result<Vec<Vec<T>>> {
    grids.par_iter().map(|g| forward(params, g)).collect()
}

/// Settings that turn a keypoint into a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub r_lrf: f64,
    pub sharpness: f64,
    pub cutoff: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_lrf: DEFAULT_R_LRF,
            sharpness: DEFAULT_SHARPNESS,
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

/// Grid spec at keypoint `kp` (LRF estimated from `cloud`).
pub fn keypoint_spec(
    cloud: &PointCloud,
    index: &SpatialIndex,
    kp: usize,
    support: f64,
    resolution: usize,
    cfg: &GridConfig,
) -> Result<VoxelGridSpec> {
    let frame = estimate_lrf(cloud, index, kp, cfg.r_lrf)?;
    let mut spec = VoxelGridSpec::new(frame, support, resolution);
    spec.sharpness = cfg.sharpness;
    spec.cutoff = cfg.cutoff;
    Ok(spec)
}

/// LRF plus voxelization at keypoint `kp`.
pub fn keypoint_grid(
    cloud: &PointCloud,
    index: &SpatialIndex,
    kp: usize,
    support: f64,
    resolution: usize,
    cfg: &GridConfig,
) -> Result<VoxelGrid> {
    voxelize_indexed(index, &keypoint_spec(cloud, index, kp, support, resolution, cfg)?)
}

/// Differentiable descriptor of keypoint `kp`, a function of every parameter
/// including `log_support`.
pub fn keypoint_descriptor_on_tape<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    params: &NetworkParams<T>,
    vars: &ParamVars,
    cloud: &PointCloud,
    index: &SpatialIndex,
    kp: usize,
    cfg: &GridConfig,
) -> Result<Var> {
    let spec = keypoint_spec(cloud, index, kp, params.support(), params.arch.resolution, cfg)?;
    let grid = voxelize_on_tape(tape, vars.log_support, index, &spec)?;
    forward_on_tape(tape, &params.arch, vars, grid)
}

/// Descriptors for a keypoint list; keypoints whose frame or patch is
/// degenerate are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    /// Cloud indices of the keypoints that produced a descriptor.
    pub keypoints: Vec<usize>,
    pub descriptors: Vec<Vec<T>>,
    /// Cloud indices of skipped keypoints.
    pub skipped: Vec<usize>,
}

pub fn extract_descriptors<T: Real>(
    cloud: &PointCloud,
    keypoints: &[usize],
    params: &NetworkParams<T>,
    cfg: &GridConfig,
) -> Result<Extraction<T>> {
    let index = SpatialIndex::build(cloud)?;
    let support = params.support();
    let h = params.arch.resolution;
    let results: Vec<Result<Option<Vec<T>>>> = keypoints
        .par_iter()
        .map(|&kp| match keypoint_grid(cloud, &index, kp, support, h, cfg) {
            Ok(grid) => forward(params, &grid.to_tensor()).map(Some),
            Err(Error::AmbiguousFrame { .. }) | Err(Error::DegeneratePatch { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut out = Extraction {
        keypoints: Vec::new(),
        descriptors: Vec::new(),
        skipped: Vec::new(),
    };
    for (&kp, r) in keypoints.iter().zip(results) {
        match r? {
            Some(d) => {
                out.keypoints.push(kp);
                out.descriptors.push(d);
            }
            None => out.skipped.push(kp),
        }
    }
    Ok(out)
}
