//! Slice-level forward/backward kernels behind the tape operations.

use crate::{Error, Real, Result};

/// Geometry of a 3D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3dGeometry {
    pub fn from_shapes(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 5 {
            return Err(Error::Shape(format!(
                "conv3d expects input [C,D,H,W] and kernel [O,C,k,k,k], got {input:?} and {kernel:?}"
            )));
        }
        if kernel[1] != input[0] {
            return Err(Error::Shape(format!(
                "conv3d kernel expects {} input channels, input has {}",
                kernel[1], input[0]
            )));
        }
        if kernel[2] != kernel[3] || kernel[3] != kernel[4] || kernel[2] == 0 {
            return Err(Error::Shape(format!("conv3d kernel must be cubic, got {kernel:?}")));
        }
        if stride == 0 {
            return Err(Error::Shape("conv3d stride must be positive".into()));
        }
        let g = Self {
            in_channels: input[0],
            out_channels: kernel[0],
            in_dims: [input[1], input[2], input[3]],
            kernel: kernel[2],
            stride,
            padding,
        };
        for &d in &g.in_dims {
            if d + 2 * padding < g.kernel {
                return Err(Error::Shape(format!(
                    "conv3d input {input:?} with padding {padding} is smaller than kernel {}",
                    g.kernel
                )));
            }
        }
        Ok(g)
    }

    pub fn out_dims(&self) -> [usize; 3] {
        self.in_dims
            .map(|d| (d + 2 * self.padding - self.kernel) / self.stride + 1)
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let [d, h, w] = self.out_dims();
        vec![self.out_channels, d, h, w]
    }

    fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel.pow(3)
    }

    fn out_positions(&self) -> usize {
        self.out_dims().iter().product()
    }
}

/// Unfolds the input into `[C*k^3, P]` columns (zero padded).
fn im2col<T: Real>(g: &Conv3dGeometry, input: &[T]) -> Vec<T> {
    let [id, ih, iw] = g.in_dims;
    let [od, oh, ow] = g.out_dims();
    let k = g.kernel;
    let p = od * oh * ow;
    let mut cols = vec![T::zero(); g.patch_rows() * p];
    let pad = g.padding as isize;
    let s = g.stride as isize;
    for c in 0..g.in_channels {
        let chan = &input[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ((c * k + kd) * k + kh) * k + kw;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for z in 0..od {
                        let zi = z as isize * s + kd as isize - pad;
                        if zi < 0 || zi >= id as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = y as isize * s + kh as isize - pad;
                            if yi < 0 || yi >= ih as isize {
                                continue;
                            }
                            let src_row = (zi as usize * ih + yi as usize) * iw;
                            let dst_row = (z * oh + y) * ow;
                            for x in 0..ow {
                                let xi = x as isize * s + kw as isize - pad;
                                if xi >= 0 && xi < iw as isize {
                                    dst[dst_row + x] = chan[src_row + xi as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds `[C*k^3, P]` columns back onto an input-shaped gradient.
fn col2im<T: Real>(g: &Conv3dGeometry, cols: &[T]) -> Vec<T> {
    let [id, ih, iw] = g.in_dims;
    let [od, oh, ow] = g.out_dims();
    let k = g.kernel;
    let p = od * oh * ow;
    let mut out = vec![T::zero(); g.in_channels * id * ih * iw];
    let pad = g.padding as isize;
    let s = g.stride as isize;
    for c in 0..g.in_channels {
        let chan = &mut out[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ((c * k + kd) * k + kh) * k + kw;
                    let src = &cols[row * p..(row + 1) * p];
                    for z in 0..od {
                        let zi = z as isize * s + kd as isize - pad;
                        if zi < 0 || zi >= id as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = y as isize * s + kh as isize - pad;
                            if yi < 0 || yi >= ih as isize {
                                continue;
                            }
                            let dst_row = (zi as usize * ih + yi as usize) * iw;
                            let src_row = (z * oh + y) * ow;
                            for x in 0..ow {
                                let xi = x as isize * s + kw as isize - pad;
                                if xi >= 0 && xi < iw as isize {
                                    chan[dst_row + xi as usize] += src[src_row + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv3d_forward<T: Real>(g: &Conv3dGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let p = g.out_positions();
    let r = g.patch_rows();
    let cols = im2col(g, input);
    let mut out = vec![T::zero(); g.out_channels * p];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        g.out_channels,
        r,
        p,
        T::one(),
        kernel,
        r as isize,
        1,
        &cols,
        p as isize,
        1,
        beta,
        &mut out,
        p as isize,
        1,
    );
    out
}

/// Gradients `(d_input, d_kernel, d_bias)`; `d_input` only when requested.
pub fn conv3d_backward<T: Real>(
    g: &Conv3dGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let p = g.out_positions();
    let r = g.patch_rows();
    let cols = im2col(g, input);
    let mut d_kernel = vec![T::zero(); g.out_channels * r];
    T::gemm(
        g.out_channels,
        p,
        r,
        T::one(),
        grad_out,
        p as isize,
        1,
        &cols,
        1,
        p as isize,
        T::zero(),
        &mut d_kernel,
        r as isize,
        1,
    );
    drop(cols);
    let d_bias = grad_out.chunks(p).map(|c| c.iter().copied().sum()).collect();
    let d_input = need_input.then(|| {
        let mut d_cols = vec![T::zero(); r * p];
        T::gemm(
            r,
            g.out_channels,
            p,
            T::one(),
            kernel,
            1,
            r as isize,
            grad_out,
            p as isize,
            1,
            T::zero(),
            &mut d_cols,
            p as isize,
            1,
        );
        col2im(g, &d_cols)
    });
    (d_input, d_kernel, d_bias)
}

/// Per-channel standardization; returns output and per-channel `1/sqrt(var + eps)`.
pub fn instance_norm_forward<T: Real>(input: &[T], channels: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = input.len() / channels;
    let inv_n = T::one() / T::lit(n as f64);
    let mut out = vec![T::zero(); input.len()];
    let mut inv_std = Vec::with_capacity(channels);
    for (x, y) in input.chunks(n).zip(out.chunks_mut(n)) {
        let mean = x.iter().copied().sum::<T>() * inv_n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in y.iter_mut().zip(x) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

pub fn instance_norm_backward<T: Real>(output: &[T], inv_std: &[T], grad_out: &[T]) -> Vec<T> {
    let channels = inv_std.len();
    let n = output.len() / channels;
    let inv_n = T::one() / T::lit(n as f64);
    let mut d = vec![T::zero(); output.len()];
    for c in 0..channels {
        let y = &output[c * n..(c + 1) * n];
        let dy = &grad_out[c * n..(c + 1) * n];
        let mean_dy = dy.iter().copied().sum::<T>() * inv_n;
        let mean_dyy = dy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
        for i in 0..n {
            d[c * n + i] = inv_std[c] * (dy[i] - mean_dy - y[i] * mean_dyy);
        }
    }
    d
}
