//! Parameter storage and the small set of layers the models are built from.

use std::collections::HashMap;
use std::fmt::Display;

use candle_core::{DType, Device, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::kernels::depthwise_conv2d;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    /// Whether weight decay applies. Off for norms, biases and modulation.
    pub decay: bool,
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { params: Vec::new(), index: HashMap::new(), dtype, device: Device::Cpu }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.var.elem_count()).sum()
    }

    pub fn insert(&mut self, name: String, var: Var, decay: bool) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(invalid!("duplicate parameter {name}"));
        }
        if var.dtype() != self.dtype {
            return Err(invalid!("parameter {name} has dtype {:?}, store holds {:?}", var.dtype(), self.dtype));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, var, decay });
        Ok(())
    }

    /// Copy with independent storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = Self::new(self.dtype);
        for p in &self.params {
            let t = p.var.as_tensor().copy()?;
            out.insert(p.name.clone(), Var::from_tensor(&t)?, p.decay)?;
        }
        Ok(out)
    }

    /// Overwrites every parameter with the same-named one in `other`.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(invalid!("stores hold {} and {} parameters", self.len(), other.len()));
        }
        for p in &self.params {
            let src = other.get(&p.name).ok_or_else(|| invalid!("missing parameter {}", p.name))?;
            p.var.set(&src.var.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Largest absolute difference between same-named parameters.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Result<f64> {
        let mut worst = 0f64;
        for p in &self.params {
            let q = other.get(&p.name).ok_or_else(|| invalid!("missing parameter {}", p.name))?;
            let d = (p.var.as_tensor() - q.var.as_tensor())?
                .abs()?
                .flatten_all()?
                .max(0)?
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?;
            worst = worst.max(d);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-b, b)`.
    Uniform(f64),
    Zeros,
    Ones,
}

impl Init {
    /// PyTorch's default for layers with the given fan-in.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform(1.0 / (fan_in as f64).sqrt())
    }
}

/// Creates parameters on first use and binds existing ones afterwards.
///
/// A detached builder hands out tensors that share storage with the store
/// but are invisible to autograd, which is what frozen teachers and plain
/// inference want.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    detached: bool,
    strict: bool,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new(), detached: false, strict: false }
    }

    /// Only binds; a missing parameter is an error.
    pub fn bind(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, detached: bool) -> Self {
        Self { store, rng, prefix: String::new(), detached, strict: true }
    }

    pub fn pp(&mut self, name: impl Display) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder { store: self.store, rng: self.rng, prefix, detached: self.detached, strict: self.strict }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn get(&mut self, name: &str, shape: impl Into<Shape>, init: Init, decay: bool) -> Result<Tensor> {
        let shape = shape.into();
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        if let Some(p) = self.store.get(&full) {
            if p.var.shape() != &shape {
                return Err(invalid!("parameter {full} has shape {:?}, expected {:?}", p.var.shape(), shape));
            }
            return Ok(if self.detached { p.var.as_detached_tensor() } else { p.var.as_tensor().clone() });
        }
        if self.strict {
            return Err(invalid!("missing parameter {full}"));
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = if self.detached { var.as_detached_tensor() } else { var.as_tensor().clone() };
        self.store.insert(full, var, decay)?;
        Ok(out)
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `x W^T + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(vb: &mut Builder, inp: usize, out: usize, decay: bool) -> Result<Self> {
        Self::with_init(vb, inp, out, Init::fan_in(inp), decay)
    }

    pub fn with_init(vb: &mut Builder, inp: usize, out: usize, init: Init, decay: bool) -> Result<Self> {
        let w = vb.get("weight", (out, inp), init, decay)?;
        let b = vb.get("bias", out, if matches!(init, Init::Zeros) { init } else { Init::fan_in(inp) }, false)?;
        Ok(Self { w, b })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w.t()?)?.broadcast_add(&self.b)?)
    }
}

/// 1x1 convolution over `B x C x H x W`.
#[derive(Debug, Clone)]
pub struct Pointwise {
    w: Tensor,
    b: Tensor,
}

impl Pointwise {
    pub fn new(vb: &mut Builder, inp: usize, out: usize) -> Result<Self> {
        Self::with_init(vb, inp, out, Init::fan_in(inp))
    }

    pub fn zeros(vb: &mut Builder, inp: usize, out: usize) -> Result<Self> {
        Self::with_init(vb, inp, out, Init::Zeros)
    }

    fn with_init(vb: &mut Builder, inp: usize, out: usize, init: Init) -> Result<Self> {
        let w = vb.get("weight", (out, inp), init, true)?;
        let b = vb.get("bias", (out, 1), if matches!(init, Init::Zeros) { init } else { Init::fan_in(inp) }, false)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let y = self.w.broadcast_matmul(&x.reshape((b, c, h * w))?)?.broadcast_add(&self.b)?;
        Ok(y.reshape((b, (), h, w))?)
    }
}

/// Layer normalisation across the channel axis of `B x C x H x W`.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    affine: Option<(Tensor, Tensor)>,
}

const NORM_EPS: f64 = 1e-6;

impl ChannelNorm {
    pub fn new(vb: &mut Builder, channels: usize) -> Result<Self> {
        let w = vb.get("weight", (channels, 1, 1), Init::Ones, false)?;
        let b = vb.get("bias", (channels, 1, 1), Init::Zeros, false)?;
        Ok(Self { affine: Some((w, b)) })
    }

    /// Without learned scale and shift; used where modulation supplies them.
    pub fn plain() -> Self {
        Self { affine: None }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(1)?;
        let y = centred.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        match &self.affine {
            Some((w, b)) => Ok(y.broadcast_mul(w)?.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

/// Same-padded 1-D convolution, `B x C_in x L -> B x C_out x L`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    w: Tensor,
    b: Tensor,
    padding: usize,
}

impl Conv1d {
    pub fn new(vb: &mut Builder, inp: usize, out: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(invalid!("conv1d kernel {kernel} must be odd"));
        }
        let init = Init::fan_in(inp * kernel);
        let w = vb.get("weight", (out, inp, kernel), init, true)?;
        let b = vb.get("bias", (out, 1), init, false)?;
        Ok(Self { w, b, padding: kernel / 2 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv1d(&self.w, self.padding, 1, 1, 1)?.broadcast_add(&self.b)?)
    }

    /// Strided variant with explicit padding.
    pub fn forward_strided(&self, x: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
        Ok(x.conv1d(&self.w, padding, stride, 1, 1)?.broadcast_add(&self.b)?)
    }
}

/// Same-padded depthwise convolution with an odd `kh x kw` kernel.
#[derive(Debug, Clone)]
pub struct DwConv {
    w: Tensor,
    b: Tensor,
}

impl DwConv {
    pub fn new(vb: &mut Builder, channels: usize, kh: usize, kw: usize) -> Result<Self> {
        let init = Init::fan_in(kh * kw);
        let w = vb.get("weight", (channels, 1, kh, kw), init, true)?;
        let b = vb.get("bias", (channels, 1, 1), init, false)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(depthwise_conv2d(x, &self.w)?.broadcast_add(&self.b)?)
    }
}

/// Dense 2-D convolution with per-axis stride and padding.
///
/// The underlying op only takes one stride for both axes, so anisotropic
/// strides run at stride one and subsample afterwards.
#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Tensor,
    stride: (usize, usize),
    padding: (usize, usize),
}

impl Conv2d {
    pub fn new(
        vb: &mut Builder,
        inp: usize,
        out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let init = Init::fan_in(inp * kernel.0 * kernel.1);
        let w = vb.get("weight", (out, inp, kernel.0, kernel.1), init, true)?;
        let b = vb.get("bias", (out, 1, 1), init, false)?;
        Ok(Self { w, b, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.pad_with_zeros(2, self.padding.0, self.padding.0)?.pad_with_zeros(3, self.padding.1, self.padding.1)?;
        let y = if self.stride.0 == self.stride.1 {
            x.conv2d(&self.w, 0, self.stride.0, 1, 1)?
        } else {
            let y = x.conv2d(&self.w, 0, 1, 1, 1)?;
            let y = subsample(&y, 2, self.stride.0)?;
            subsample(&y, 3, self.stride.1)?
        };
        Ok(y.broadcast_add(&self.b)?)
    }
}

/// Every `stride`-th entry along `dim`, starting at zero.
pub fn subsample(x: &Tensor, dim: usize, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let n = x.dim(dim)?;
    let idx: Vec<u32> = (0..n).step_by(stride).map(|i| i as u32).collect();
    let len = idx.len();
    Ok(x.index_select(&Tensor::from_vec(idx, len, x.device())?, dim)?)
}

/// Splits the last axis into `n` equal chunks.
pub fn split_last(x: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    let size = x.dim(D::Minus1)?;
    if size % n != 0 {
        return Err(invalid!("cannot split {size} into {n} chunks"));
    }
    let w = size / n;
    (0..n).map(|i| x.narrow(D::Minus1, i * w, w).map_err(Error::from)).collect()
}

/// Whether every entry is finite (detected through the sum).
pub fn all_finite(t: &Tensor) -> Result<bool> {
    Ok(scalar(&t.sum_all()?)?.is_finite())
}

/// Scalar value of a single-element tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
