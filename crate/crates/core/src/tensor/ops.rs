//! Tape-free kernels shared by the tape and by inference.

use super::{LabelMap, Tensor, IGNORE_LABEL};
use crate::error::{Error, Result};

/// `c = a' * b' + beta * c` where `a'` is `m x k`, `b'` is `k x n` and the
/// primes denote optional transposition of the row-major operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index matrixmultiply touches
    // given these strides.
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

pub(crate) fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let (c_in, h, w) = input.dims3("conv2d input")?;
    let (c_out, kc_in, k) = match kernel.shape()[..] {
        [o, i, kh, kw] if kh == kw => (o, i, kh),
        _ => {
            return Err(Error::shape(format!(
                "conv2d kernel must be [C_out, C_in, k, k], got {:?}",
                kernel.shape()
            )))
        }
    };
    if kc_in != c_in {
        return Err(Error::shape(format!(
            "conv2d kernel expects {kc_in} input channels, input has {c_in}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::shape(format!("conv2d kernel size {k} is not odd")));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(format!(
            "conv2d bias must be [{c_out}], got {:?}",
            bias.shape()
        )));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        h,
        w,
        k,
    })
}

/// Unfolds zero-padded `k x k` patches into a `[C_in*k*k, H*W]` matrix.
pub(crate) fn im2col(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; d.patch() * hw];
    for ci in 0..d.c_in {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src_row + sx_lo..src_row + sx_lo + len]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0; d.c_in * hw];
    for ci in 0..d.c_in {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let dst_row = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    for (o, g) in plane[dst_row + sx_lo..dst_row + sx_lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *o += g;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_from_cols(cols: &[f64], kernel: &Tensor, bias: &Tensor, d: &ConvDims) -> Tensor {
    let hw = d.h * d.w;
    let mut out = Vec::with_capacity(d.c_out * hw);
    for &b in bias.data() {
        out.extend(std::iter::repeat(b).take(hw));
    }
    gemm(d.c_out, d.patch(), hw, kernel.data(), false, cols, false, 1.0, &mut out);
    Tensor {
        shape: vec![d.c_out, d.h, d.w],
        data: out,
    }
}

/// Stride-1, zero "same" padded cross-correlation plus per-channel bias.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias)?;
    let cols = im2col(input.data(), &d);
    Ok(conv2d_from_cols(&cols, kernel, bias, &d))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Per-pixel softmax over the channel axis of a `[C, H, W]` tensor.
pub fn pixel_softmax(logits: &Tensor) -> Result<Tensor> {
    let (c, h, w) = logits.dims3("pixel_softmax")?;
    let hw = h * w;
    let src = logits.data();
    let mut out = vec![0.0; src.len()];
    for p in 0..hw {
        let max = (0..c).map(|ch| src[ch * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for ch in 0..c {
            let e = (src[ch * hw + p] - max).exp();
            out[ch * hw + p] = e;
            z += e;
        }
        for ch in 0..c {
            out[ch * hw + p] /= z;
        }
    }
    Ok(Tensor {
        shape: vec![c, h, w],
        data: out,
    })
}

/// Per-pixel argmax (lowest channel wins ties) and its softmax probability.
pub fn pixel_argmax(logits: &Tensor) -> Result<(LabelMap, Vec<f64>)> {
    let (c, h, w) = logits.dims3("pixel_argmax")?;
    if c == 0 || c > IGNORE_LABEL as usize {
        return Err(Error::shape(format!("cannot take argmax over {c} classes")));
    }
    let hw = h * w;
    let src = logits.data();
    let mut labels = vec![0u8; hw];
    let mut conf = vec![0.0; hw];
    for p in 0..hw {
        let mut best = 0;
        let mut best_v = src[p];
        for ch in 1..c {
            let v = src[ch * hw + p];
            if v > best_v {
                best = ch;
                best_v = v;
            }
        }
        let z: f64 = (0..c).map(|ch| (src[ch * hw + p] - best_v).exp()).sum();
        labels[p] = best as u8;
        conf[p] = 1.0 / z;
    }
    Ok((LabelMap::new(h, w, labels)?, conf))
}

/// Mean pixel cross-entropy over non-ignored pixels together with its
/// gradient with respect to `logits`.
///
/// Each pixel contributes `weight * -log softmax(logits)[target]`; the sum is
/// divided by the number of non-ignored pixels. With no valid pixel the loss
/// and gradient are zero.
pub fn softmax_ce_with_grad(
    logits: &Tensor,
    target: &LabelMap,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let (c, h, w) = logits.dims3("pixel_softmax_ce logits")?;
    if target.height() != h || target.width() != w {
        return Err(Error::shape(format!(
            "target is {}x{} but logits are {}x{}",
            target.height(),
            target.width(),
            h,
            w
        )));
    }
    if let Some(wts) = weights {
        if wts.len() != h * w {
            return Err(Error::shape(format!(
                "pixel weights have {} entries, expected {}",
                wts.len(),
                h * w
            )));
        }
    }
    target.check_classes(c)?;
    let hw = h * w;
    let valid = target.data().iter().filter(|&&t| t != IGNORE_LABEL).count();
    let mut grad = vec![0.0; c * hw];
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / valid as f64;
    let src = logits.data();
    let mut total = 0.0;
    for p in 0..hw {
        let t = target.data()[p];
        if t == IGNORE_LABEL {
            continue;
        }
        let wp = weights.map_or(1.0, |wts| wts[p]);
        let max = (0..c).map(|ch| src[ch * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for ch in 0..c {
            let e = (src[ch * hw + p] - max).exp();
            grad[ch * hw + p] = e;
            z += e;
        }
        let log_z = z.ln() + max;
        total += wp * (log_z - src[t as usize * hw + p]);
        let scale = wp * inv_n / z;
        for ch in 0..c {
            grad[ch * hw + p] *= scale;
        }
        grad[t as usize * hw + p] -= wp * inv_n;
    }
    Ok((total * inv_n, grad))
}
