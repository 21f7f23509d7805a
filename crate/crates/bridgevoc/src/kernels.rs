//! Hand-written CPU kernels exposed as differentiable tensor ops.
//!
//! Depthwise convolution through grouped `conv2d` runs one im2col per
//! channel, which is several times slower than a direct loop at the channel
//! counts used here.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use crate::error::{invalid, Result};

trait Elem: Copy + Default + std::ops::Mul<Output = Self> + std::ops::AddAssign {}
impl Elem for f32 {}
impl Elem for f64 {}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn pad(&self) -> (isize, isize) {
        ((self.kh / 2) as isize, (self.kw / 2) as isize)
    }
}

fn slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("depthwise kernel expects contiguous inputs"),
    }
}

/// Same-padded correlation of each channel with its own kernel. With `flip`
/// set the kernel is rotated by 180 degrees, which gives the input gradient.
fn dw_forward<T: Elem>(x: &[T], w: &[T], g: Geometry, flip: bool) -> Vec<T> {
    let (h, wd) = (g.height, g.width);
    let (ph, pw) = g.pad();
    let mut out = vec![T::default(); g.batch * g.channels * h * wd];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let plane = (b * g.channels + c) * h * wd;
            let xin = &x[plane..plane + h * wd];
            let o = &mut out[plane..plane + h * wd];
            let kern = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            for a in 0..g.kh {
                for bb in 0..g.kw {
                    let wv = if flip {
                        kern[(g.kh - 1 - a) * g.kw + (g.kw - 1 - bb)]
                    } else {
                        kern[a * g.kw + bb]
                    };
                    let dy = a as isize - ph;
                    let dx = bb as isize - pw;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for r in 0..h {
                        let src = r as isize + dy;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let src_row = &xin[src as usize * wd..(src as usize + 1) * wd];
                        let dst_row = &mut o[r * wd..(r + 1) * wd];
                        let shift = (x0 as isize + dx) as usize;
                        for (d, s) in dst_row[x0..x1].iter_mut().zip(&src_row[shift..]) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Kernel gradient: `gw[c, a, b] = Σ grad[n, c, r, q] x[n, c, r + a - ph, q + b - pw]`.
fn dw_weight_grad<T: Elem>(x: &[T], grad: &[T], g: Geometry) -> Vec<T> {
    let (h, wd) = (g.height, g.width);
    let (ph, pw) = g.pad();
    let mut out = vec![T::default(); g.channels * g.kh * g.kw];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let plane = (b * g.channels + c) * h * wd;
            let xin = &x[plane..plane + h * wd];
            let gr = &grad[plane..plane + h * wd];
            for a in 0..g.kh {
                for bb in 0..g.kw {
                    let dy = a as isize - ph;
                    let dx = bb as isize - pw;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = T::default();
                    for r in 0..h {
                        let src = r as isize + dy;
                        if src < 0 || src >= h as isize {
                            continue;
                        }
                        let src_row = &xin[src as usize * wd..(src as usize + 1) * wd];
                        let g_row = &gr[r * wd..(r + 1) * wd];
                        let shift = (x0 as isize + dx) as usize;
                        for (gv, s) in g_row[x0..x1].iter().zip(&src_row[shift..]) {
                            acc += *gv * *s;
                        }
                    }
                    out[(c * g.kh + a) * g.kw + bb] += acc;
                }
            }
        }
    }
    out
}

fn geometry(x: &Layout, w: &Layout) -> candle_core::Result<Geometry> {
    let (batch, channels, height, width) = x.shape().dims4()?;
    let (wc, one, kh, kw) = w.shape().dims4()?;
    if wc != channels || one != 1 {
        candle_core::bail!("depthwise kernel {:?} does not match input {:?}", w.shape(), x.shape());
    }
    Ok(Geometry { batch, channels, height, width, kh, kw })
}

struct DepthwiseConv {
    flip: bool,
}

impl CustomOp2 for DepthwiseConv {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = geometry(l1, l2)?;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => {
                CpuStorage::F32(dw_forward(slice(x, l1)?, slice(w, l2)?, g, self.flip))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w)) => {
                CpuStorage::F64(dw_forward(slice(x, l1)?, slice(w, l2)?, g, self.flip))
            }
            _ => candle_core::bail!("depthwise conv supports f32 and f64 only"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2(w, DepthwiseConv { flip: !self.flip })?;
        let gw = x.apply_op2_no_bwd(&grad, &DepthwiseWeightGrad { kernel: w.dims4()?, flip: self.flip })?;
        Ok((Some(gx), Some(gw)))
    }
}

struct DepthwiseWeightGrad {
    kernel: (usize, usize, usize, usize),
    flip: bool,
}

impl CustomOp2 for DepthwiseWeightGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-weight-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, channels, height, width) = l1.shape().dims4()?;
        let (_, _, kh, kw) = self.kernel;
        let g = Geometry { batch, channels, height, width, kh, kw };
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(gr)) => {
                let v = dw_weight_grad(slice(x, l1)?, slice(gr, l2)?, g);
                CpuStorage::F32(flip_vec(v, self.flip, channels, kh, kw))
            }
            (CpuStorage::F64(x), CpuStorage::F64(gr)) => {
                let v = dw_weight_grad(slice(x, l1)?, slice(gr, l2)?, g);
                CpuStorage::F64(flip_vec(v, self.flip, channels, kh, kw))
            }
            _ => candle_core::bail!("depthwise conv supports f32 and f64 only"),
        };
        Ok((out, Shape::from(self.kernel)))
    }
}

fn flip_vec<T: Copy>(v: Vec<T>, flip: bool, channels: usize, kh: usize, kw: usize) -> Vec<T> {
    if !flip {
        return v;
    }
    let mut out = v.clone();
    for c in 0..channels {
        for a in 0..kh {
            for b in 0..kw {
                out[(c * kh + a) * kw + b] = v[(c * kh + (kh - 1 - a)) * kw + (kw - 1 - b)];
            }
        }
    }
    out
}

/// Same-padded depthwise convolution (cross-correlation) of `x` (`B x C x H x W`)
/// with one odd-sized kernel per channel, `w` (`C x 1 x kh x kw`).
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (_, _, kh, kw) = w.dims4()?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid!("depthwise kernel {kh}x{kw} must be odd"));
    }
    if !matches!(x.dtype(), DType::F32 | DType::F64) || x.dtype() != w.dtype() {
        return Err(invalid!("depthwise conv needs matching f32 or f64 operands"));
    }
    Ok(x.contiguous()?.apply_op2(&w.contiguous()?, DepthwiseConv { flip: false })?)
}
