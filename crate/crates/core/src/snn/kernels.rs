//! Layer primitives: 2-D cross-correlation, 2x2 average pooling, 2x nearest
//! upsampling and fully-connected products, each with its backward pass.
//!
//! Weight matrices use the crossbar layout: row-major `[fan_in, fan_out]`.
//! For a convolution the fan-in index is `c * k * k + ky * k + kx`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, in_hw: (usize, usize)) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
            in_h: in_hw.0,
            in_w: in_hw.1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel > 0
            && self.stride > 0
            && self.in_h + 2 * self.padding >= self.kernel
            && self.in_w + 2 * self.padding >= self.kernel;
        if !ok {
            return Err(Error::Config(format!("inconsistent convolution geometry {self:?}")));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }

    pub fn in_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.in_h, self.in_w]
    }

    pub fn out_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.out_channels, self.out_h(), self.out_w()]
    }

    /// Number of positions each weight is applied at.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfold one sample `[C, H, W]` into columns `[C*K*K, OH*OW]`.
fn im2col(input: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold columns back onto a `[C, H, W]` gradient, accumulating overlaps.
fn col2im(cols: &[f32], g: &ConvGeometry, grad_input: &mut [f32]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (oh, ow) = (g.out_h(), g.out_w());
    let npos = oh * ow;
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C[m x n] = alpha * A[m x k] B[k x n] + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the extent of every
    // operand; all callers pass buffers sized for exactly these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(context, &[expected], &[got]));
    }
    Ok(())
}

/// Batched valid/padded cross-correlation. `input` is `[B, C, H, W]`
/// flattened, `weights` is `[C*K*K, O]`. Returns `[B, O, OH, OW]` flattened.
pub fn conv2d_forward(input: &[f32], batch: usize, weights: &[f32], g: &ConvGeometry) -> Result<Vec<f32>> {
    g.validate()?;
    check_len("conv2d input", batch * g.in_len(), input.len())?;
    check_len("conv2d weights", g.fan_in() * g.out_channels, weights.len())?;
    let (fan_in, npos, o) = (g.fan_in(), g.positions(), g.out_channels);
    let mut out = vec![0.0f32; batch * g.out_len()];
    let mut cols = vec![0.0f32; fan_in * npos];
    for b in 0..batch {
        im2col(&input[b * g.in_len()..(b + 1) * g.in_len()], g, &mut cols);
        let dst = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        // out[o, p] = sum_j W[j, o] cols[j, p]
        gemm(o, fan_in, npos, weights, (1, o), &cols, (npos, 1), 0.0, dst, (npos, 1));
    }
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]. Accumulates the weight gradient
/// into `grad_weights` and, when requested, returns the input gradient.
pub fn conv2d_backward(
    input: &[f32],
    batch: usize,
    weights: &[f32],
    g: &ConvGeometry,
    grad_out: &[f32],
    grad_weights: &mut [f32],
    want_input_grad: bool,
) -> Result<Option<Vec<f32>>> {
    check_len("conv2d backward input", batch * g.in_len(), input.len())?;
    check_len("conv2d backward grad", batch * g.out_len(), grad_out.len())?;
    check_len("conv2d backward weight grad", g.fan_in() * g.out_channels, grad_weights.len())?;
    let (fan_in, npos, o) = (g.fan_in(), g.positions(), g.out_channels);
    let mut cols = vec![0.0f32; fan_in * npos];
    let mut grad_cols = vec![0.0f32; fan_in * npos];
    let mut grad_input = want_input_grad.then(|| vec![0.0f32; batch * g.in_len()]);
    for b in 0..batch {
        let go = &grad_out[b * g.out_len()..(b + 1) * g.out_len()];
        if go.iter().all(|&v| v == 0.0) {
            continue;
        }
        im2col(&input[b * g.in_len()..(b + 1) * g.in_len()], g, &mut cols);
        // dW[j, o] += sum_p cols[j, p] go[o, p]
        gemm(fan_in, npos, o, &cols, (npos, 1), go, (1, npos), 1.0, grad_weights, (o, 1));
        if let Some(gi) = grad_input.as_mut() {
            // dcols[j, p] = sum_o W[j, o] go[o, p]
            gemm(fan_in, o, npos, weights, (o, 1), go, (npos, 1), 0.0, &mut grad_cols, (npos, 1));
            col2im(&grad_cols, g, &mut gi[b * g.in_len()..(b + 1) * g.in_len()]);
        }
    }
    Ok(grad_input)
}

/// `y[B, out] = x[B, in] W[in, out]`.
pub fn linear_forward(input: &[f32], batch: usize, weights: &[f32], fan_in: usize, fan_out: usize) -> Result<Vec<f32>> {
    check_len("linear input", batch * fan_in, input.len())?;
    check_len("linear weights", fan_in * fan_out, weights.len())?;
    let mut out = vec![0.0f32; batch * fan_out];
    gemm(batch, fan_in, fan_out, input, (fan_in, 1), weights, (fan_out, 1), 0.0, &mut out, (fan_out, 1));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    input: &[f32],
    batch: usize,
    weights: &[f32],
    fan_in: usize,
    fan_out: usize,
    grad_out: &[f32],
    grad_weights: &mut [f32],
    want_input_grad: bool,
) -> Result<Option<Vec<f32>>> {
    check_len("linear backward input", batch * fan_in, input.len())?;
    check_len("linear backward grad", batch * fan_out, grad_out.len())?;
    check_len("linear backward weight grad", fan_in * fan_out, grad_weights.len())?;
    // dW[i, o] += sum_b x[b, i] gy[b, o]
    gemm(fan_in, batch, fan_out, input, (1, fan_in), grad_out, (fan_out, 1), 1.0, grad_weights, (fan_out, 1));
    if !want_input_grad {
        return Ok(None);
    }
    // dx[b, i] = sum_o gy[b, o] W[i, o]
    let mut gi = vec![0.0f32; batch * fan_in];
    gemm(batch, fan_out, fan_in, grad_out, (fan_out, 1), weights, (1, fan_out), 0.0, &mut gi, (fan_in, 1));
    Ok(Some(gi))
}

/// 2x2 average pooling with stride 2; a trailing odd row or column is dropped.
pub fn avgpool2_forward(input: &[f32], batch: usize, c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    check_len("avgpool2 input", batch * c * h * w, input.len())?;
    if h < 2 || w < 2 {
        return Err(Error::Argument(format!("avgpool2 needs at least 2x2 input, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; batch * c * oh * ow];
    for plane in 0..batch * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..2 * oy * w + w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 1) * w + w];
            for ox in 0..ow {
                dst[oy * ow + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    Ok(out)
}

pub fn avgpool2_backward(grad_out: &[f32], batch: usize, c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    let (oh, ow) = (h / 2, w / 2);
    check_len("avgpool2 backward grad", batch * c * oh * ow, grad_out.len())?;
    let mut gi = vec![0.0f32; batch * c * h * w];
    for plane in 0..batch * c {
        let src = &grad_out[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gi[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = 0.25 * src[oy * ow + ox];
                dst[2 * oy * w + 2 * ox] += g;
                dst[2 * oy * w + 2 * ox + 1] += g;
                dst[(2 * oy + 1) * w + 2 * ox] += g;
                dst[(2 * oy + 1) * w + 2 * ox + 1] += g;
            }
        }
    }
    Ok(gi)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(input: &[f32], batch: usize, c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    check_len("upsample2 input", batch * c * h * w, input.len())?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; batch * c * oh * ow];
    for plane in 0..batch * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2_backward(grad_out: &[f32], batch: usize, c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    let (oh, ow) = (2 * h, 2 * w);
    check_len("upsample2 backward grad", batch * c * oh * ow, grad_out.len())?;
    let mut gi = vec![0.0f32; batch * c * h * w];
    for plane in 0..batch * c {
        let src = &grad_out[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gi[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += src[y * ow + x];
            }
        }
    }
    Ok(gi)
}
