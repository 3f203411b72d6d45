//! Dense numerical kernels with hand-written backward passes.
//!
//! Each kernel is a pair of plain functions. The forward function is pure;
//! the backward function takes whatever the forward pass consumed (the caller
//! keeps it around), returns the gradient with respect to the input and
//! accumulates parameter gradients into [`Parameter::grad`].

mod gradcheck;
mod tensor;

pub use gradcheck::{GradientCheck, GradientReport};
pub use tensor::{l2_norm, Parameter, SparseVector, Tensor};

use crate::error::{Error, Result};
use crate::Real;

/// Pre-normalization norms at or below this are rejected by the normalization layer.
pub const NORMALIZATION_EPSILON: Real = 1e-12;

fn dense_shapes(in_len: usize, w: &Parameter, b: &Parameter) -> Result<usize> {
    let ws = w.shape();
    if ws.len() != 2 || ws[1] != in_len {
        return Err(Error::dim("dense weight [out, in]", &[ws.first().copied().unwrap_or(0), in_len], ws));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::dim("dense bias", &[ws[0]], b.shape()));
    }
    Ok(ws[0])
}

/// `W x + b`.
pub fn dense_forward(x: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    if x.shape().len() != 1 {
        return Err(Error::dim("dense input", &[x.len()], x.shape()));
    }
    let out = dense_shapes(x.len(), w, b)?;
    let xs = x.data();
    let data = (0..out)
        .map(|o| {
            let row = w.value.row(o);
            b.value.data()[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<Real>()
        })
        .collect();
    Ok(Tensor::vector(data))
}

/// Returns `dL/dx` and accumulates `dL/dW`, `dL/db`.
pub fn dense_backward(x: &Tensor, grad_out: &Tensor, w: &mut Parameter, b: &mut Parameter) -> Result<Tensor> {
    let out = dense_shapes(x.len(), w, b)?;
    grad_out.expect_shape("dense grad_out", &[out])?;
    let n_in = x.len();
    let mut grad_x = vec![0.0; n_in];
    for (o, &g) in grad_out.data().iter().enumerate() {
        b.grad.data_mut()[o] += g;
        if g == 0.0 {
            continue;
        }
        let wrow = w.value.row(o);
        for (gx, wv) in grad_x.iter_mut().zip(wrow) {
            *gx += g * wv;
        }
        let grow = w.grad.row_mut(o);
        for (gw, xv) in grow.iter_mut().zip(x.data()) {
            *gw += g * xv;
        }
    }
    Ok(Tensor::vector(grad_x))
}

/// `W x + b` for a sparse `x`; costs `out × nnz`.
pub fn sparse_dense_forward(x: &SparseVector, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    let out = dense_shapes(x.dim, w, b)?;
    let data = (0..out)
        .map(|o| {
            let row = w.value.row(o);
            b.value.data()[o] + x.entries.iter().map(|&(j, v)| row[j] * v).sum::<Real>()
        })
        .collect();
    Ok(Tensor::vector(data))
}

/// Parameter gradients of [`sparse_dense_forward`]; the input is not differentiated.
pub fn sparse_dense_backward(x: &SparseVector, grad_out: &Tensor, w: &mut Parameter, b: &mut Parameter) -> Result<()> {
    let out = dense_shapes(x.dim, w, b)?;
    grad_out.expect_shape("dense grad_out", &[out])?;
    for (o, &g) in grad_out.data().iter().enumerate() {
        b.grad.data_mut()[o] += g;
        if g == 0.0 {
            continue;
        }
        let grow = w.grad.row_mut(o);
        for &(j, v) in &x.entries {
            grow[j] += g * v;
        }
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu grad_out", x.shape())?;
    let data = grad_out.data().iter().zip(x.data()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Zero padding along the sequence (x) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: `L' = (L - kw) / stride + 1`.
    Valid,
    /// Zero padding so that `L' = ceil(L / stride)`; the extra column goes on the right.
    Same,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    len: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    len_out: usize,
    stride: usize,
    pad_left: usize,
}

fn conv_geometry(f: &Tensor, k: &Parameter, stride: usize, padding: Padding) -> Result<ConvGeometry> {
    let fs = f.shape();
    let ks = k.shape();
    if fs.len() != 3 || ks.len() != 4 || ks[1] != fs[0] {
        return Err(Error::dim("conv input [c, h, L] vs kernel [c_out, c, kh, kw]", ks, fs));
    }
    if stride == 0 {
        return Err(Error::Config("convolution stride must be at least 1".into()));
    }
    let (c_in, h, len) = (fs[0], fs[1], fs[2]);
    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
    if kh > h {
        return Err(Error::dim("conv kernel height exceeds input height", &[h], &[kh]));
    }
    let (len_out, pad_left) = match padding {
        Padding::Valid => {
            if kw > len {
                return Err(Error::dim("conv kernel width exceeds input length", &[len], &[kw]));
            }
            ((len - kw) / stride + 1, 0)
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + kw).saturating_sub(len);
            (out, total / 2)
        }
    };
    Ok(ConvGeometry { c_in, h, len, c_out, kh, kw, h_out: h - kh + 1, len_out, stride, pad_left })
}

/// Cross-correlation of `f: [c, h, L]` with `k: [c_out, c, kh, kw]`, summed
/// over input channels, plus an optional per-output-channel bias.
pub fn conv_seq_forward(
    f: &Tensor,
    k: &Parameter,
    bias: Option<&Parameter>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = conv_geometry(f, k, stride, padding)?;
    if let Some(b) = bias {
        b.value.expect_shape("conv bias", &[g.c_out])?;
    }
    let fd = f.data();
    let kd = k.value.data();
    let mut out = vec![0.0; g.c_out * g.h_out * g.len_out];
    for o in 0..g.c_out {
        let b0 = bias.map_or(0.0, |b| b.value.data()[o]);
        for y in 0..g.h_out {
            for x in 0..g.len_out {
                let mut acc = b0;
                for c in 0..g.c_in {
                    for dy in 0..g.kh {
                        let frow = &fd[(c * g.h + y + dy) * g.len..][..g.len];
                        let krow = &kd[((o * g.c_in + c) * g.kh + dy) * g.kw..][..g.kw];
                        for (dx, kv) in krow.iter().enumerate() {
                            let pos = (x * g.stride + dx) as isize - g.pad_left as isize;
                            if pos >= 0 && (pos as usize) < g.len {
                                acc += kv * frow[pos as usize];
                            }
                        }
                    }
                }
                out[(o * g.h_out + y) * g.len_out + x] = acc;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.len_out], out)
}

/// Returns `dL/dF`; accumulates kernel and bias gradients.
pub fn conv_seq_backward(
    f: &Tensor,
    grad_out: &Tensor,
    k: &mut Parameter,
    bias: Option<&mut Parameter>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = conv_geometry(f, k, stride, padding)?;
    grad_out.expect_shape("conv grad_out", &[g.c_out, g.h_out, g.len_out])?;
    let fd = f.data();
    let gd = grad_out.data();
    let mut grad_f = vec![0.0; fd.len()];
    if let Some(b) = bias {
        b.grad.expect_shape("conv bias", &[g.c_out])?;
        for o in 0..g.c_out {
            let s: Real = gd[o * g.h_out * g.len_out..(o + 1) * g.h_out * g.len_out].iter().sum();
            b.grad.data_mut()[o] += s;
        }
    }
    let kd = k.value.data().to_vec();
    let kg = k.grad.data_mut();
    for o in 0..g.c_out {
        for y in 0..g.h_out {
            for x in 0..g.len_out {
                let go = gd[(o * g.h_out + y) * g.len_out + x];
                if go == 0.0 {
                    continue;
                }
                for c in 0..g.c_in {
                    for dy in 0..g.kh {
                        let frow_at = (c * g.h + y + dy) * g.len;
                        let k_at = ((o * g.c_in + c) * g.kh + dy) * g.kw;
                        for dx in 0..g.kw {
                            let pos = (x * g.stride + dx) as isize - g.pad_left as isize;
                            if pos >= 0 && (pos as usize) < g.len {
                                let p = pos as usize;
                                kg[k_at + dx] += go * fd[frow_at + p];
                                grad_f[frow_at + p] += go * kd[k_at + dx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(f.shape().to_vec(), grad_f)
}

/// Output of [`maxpool_seq`]: pooled tensor plus, for every output cell, the
/// flat input index that won (or `None` when a zero pad won).
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<Option<usize>>,
}

/// Max pooling along the sequence axis of `f: [c, h, L]`.
///
/// When `L < width` the row is right-padded with zeros so one window exists.
/// Ties resolve to the leftmost position.
pub fn maxpool_seq(f: &Tensor, width: usize, stride: usize) -> Result<Pooled> {
    let fs = f.shape();
    if fs.len() != 3 {
        return Err(Error::dim("maxpool input [c, h, L]", &[0, 0, 0], fs));
    }
    if width == 0 || stride == 0 {
        return Err(Error::Config("pooling width and stride must be at least 1".into()));
    }
    let (c, h, len) = (fs[0], fs[1], fs[2]);
    let padded = len.max(width);
    let len_out = (padded - width) / stride + 1;
    let fd = f.data();
    let mut out = Vec::with_capacity(c * h * len_out);
    let mut argmax = Vec::with_capacity(c * h * len_out);
    for row in 0..c * h {
        let base = row * len;
        for x in 0..len_out {
            let mut best: Option<(Real, Option<usize>)> = None;
            for dx in 0..width {
                let pos = x * stride + dx;
                let (v, idx) = if pos < len { (fd[base + pos], Some(base + pos)) } else { (0.0, None) };
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, idx));
                }
            }
            let (v, idx) = best.expect("window is non-empty");
            out.push(v);
            argmax.push(idx);
        }
    }
    Ok(Pooled { output: Tensor::new(vec![c, h, len_out], out)?, argmax })
}

/// Routes each output gradient to the input position that won the max.
pub fn maxpool_backward(input_shape: &[usize], pooled: &Pooled, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("maxpool grad_out", pooled.output.shape())?;
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (g, idx) in grad_out.data().iter().zip(&pooled.argmax) {
        if let Some(i) = idx {
            gd[*i] += g;
        }
    }
    Ok(grad)
}

/// Affine map followed by division by its own L2 norm: `e = z / ‖z‖₂`, `z = W x + b`.
pub fn l2norm_layer_forward(x: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    let z = dense_forward(x, w, b)?;
    normalize(z)
}

fn normalize(mut z: Tensor) -> Result<Tensor> {
    let norm = z.l2_norm();
    if !(norm > NORMALIZATION_EPSILON) {
        return Err(Error::Numeric(format!("degenerate normalization input (norm {norm:e})")));
    }
    z.data_mut().iter_mut().for_each(|v| *v /= norm);
    Ok(z)
}

/// Backward pass of [`l2norm_layer_forward`]; recomputes `z` from `x`.
pub fn l2norm_layer_backward(x: &Tensor, grad_out: &Tensor, w: &mut Parameter, b: &mut Parameter) -> Result<Tensor> {
    let grad_z = l2norm_grad_z(&dense_forward(x, w, b)?, grad_out)?;
    dense_backward(x, &grad_z, w, b)
}

/// Sparse-input variant of [`l2norm_layer_forward`].
pub fn sparse_l2norm_layer_forward(x: &SparseVector, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    normalize(sparse_dense_forward(x, w, b)?)
}

/// dL/dz for `e = z / ‖z‖`: `(g - e (e·g)) / ‖z‖`.
pub fn l2norm_grad_z(z: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("normalization grad_out", z.shape())?;
    let norm = z.l2_norm();
    if !(norm > NORMALIZATION_EPSILON) {
        return Err(Error::Numeric(format!("degenerate normalization input (norm {norm:e})")));
    }
    let e: Vec<Real> = z.data().iter().map(|v| v / norm).collect();
    let dot: Real = e.iter().zip(grad_out.data()).map(|(a, b)| a * b).sum();
    let data = grad_out.data().iter().zip(&e).map(|(g, ei)| (g - ei * dot) / norm).collect();
    Tensor::new(z.shape().to_vec(), data)
}

#[cfg(test)]
mod tests;
