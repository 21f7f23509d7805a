//! Subband convolutional data-prediction network.
//!
//! Encoder: each frequency region is cut into equal-width subbands, and
//! every subband is projected to `C` channels by a convolution whose
//! frequency kernel spans the whole subband (stride = kernel) and whose time
//! kernel is same-padded. The result is a `C x N x L` latent with one row per
//! subband. Blocks operate on that latent. The decoder mirrors the encoder
//! region by region and re-attaches a zero Nyquist bin.

use bridgevoc_core::{BcdConfig, Region};
use candle_core::{Device, Tensor};

use crate::error::{invalid, Error, Result};
use crate::nn::{all_finite, gelu, Builder, ChannelNorm, Conv1d, DwConv, Linear, Pointwise};

/// `B` times to `B x dim` sinusoidal features of `1000 t`.
pub fn sinusoidal(t: &[f64], dim: usize) -> Result<Tensor> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let arg: Vec<f64> = (0..half)
            .map(|i| 1000.0 * ti * (-(10000f64.ln()) * i as f64 / half as f64).exp())
            .collect();
        out.extend(arg.iter().map(|a| a.sin()));
        out.extend(arg.iter().map(|a| a.cos()));
    }
    Ok(Tensor::from_vec(out, (t.len(), dim), &Device::Cpu)?)
}

/// `(1 + gamma) x + beta` with `gamma`, `beta` of shape `B x C`.
pub fn modulate(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (b, c) = gamma.dims2()?;
    let g = (gamma.reshape((b, c, 1, 1))? + 1.0)?;
    Ok(x.broadcast_mul(&g)?.broadcast_add(&beta.reshape((b, c, 1, 1))?)?)
}

fn chunks(x: &Tensor, n: usize) -> Result<Vec<Tensor>> {
    crate::nn::split_last(x, n)
}

#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    dim: usize,
    fc1: Linear,
    fc2: Linear,
}

impl TimeEmbedding {
    fn new(vb: &mut Builder, dim: usize) -> Result<Self> {
        Ok(Self { dim, fc1: Linear::new(&mut vb.pp("fc1"), dim, dim, true)?, fc2: Linear::new(&mut vb.pp("fc2"), dim, dim, true)? })
    }

    /// `B x dim` embedding of per-example times.
    pub fn forward(&self, t: &[f64]) -> Result<Tensor> {
        let dtype = self.fc1_dtype();
        let x = sinusoidal(t, self.dim)?.to_dtype(dtype)?;
        self.fc2.forward(&gelu(&self.fc1.forward(&x)?)?)
    }

    fn fc1_dtype(&self) -> candle_core::DType {
        self.fc1.weight().dtype()
    }
}

#[derive(Debug, Clone)]
struct EncoderRegion {
    region: Region,
    conv: Conv1d,
    norm: ChannelNorm,
}

impl EncoderRegion {
    /// `B x 4 x span x L -> B x C x n x L`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, ch, span, l) = x.dims4()?;
        let (n, w) = (self.region.subbands(), self.region.stride_f);
        debug_assert_eq!(span, n * w);
        let folded = x.reshape((b, ch, n, w, l))?.permute((0, 2, 1, 3, 4))?.reshape((b * n, ch * w, l))?;
        let y = self.conv.forward(&folded)?;
        let c = y.dim(1)?;
        let y = y.reshape((b, n, c, l))?.permute((0, 2, 1, 3))?;
        self.norm.forward(&y)
    }
}

#[derive(Debug, Clone)]
struct DecoderRegion {
    region: Region,
    modulation: Linear,
    pw: Pointwise,
    norm: ChannelNorm,
    conv: Conv1d,
}

impl DecoderRegion {
    /// `B x C x n x L -> B x 2 x span x L`.
    fn forward(&self, o: &Tensor, e: &Tensor) -> Result<Tensor> {
        let (b, c, n, l) = o.dims4()?;
        let w = self.region.stride_f;
        let m = chunks(&self.modulation.forward(e)?, 2)?;
        let h = modulate(o, &m[0], &m[1])?;
        let h = gelu(&self.norm.forward(&self.pw.forward(&h)?)?)?;
        let folded = h.permute((0, 2, 1, 3))?.reshape((b * n, c, l))?;
        let y = self.conv.forward(&folded)?;
        Ok(y.reshape((b, n, 2, w, l))?.permute((0, 2, 1, 3, 4))?.reshape((b, 2, n * w, l))?)
    }
}

/// Large-kernel convolutional attention block with a convolutional FFN,
/// both modulated by shift/scale/gate triples derived from the time
/// embedding.
#[derive(Debug, Clone)]
pub struct Lkcab {
    down: Linear,
    up: Linear,
    pw1: Pointwise,
    dw: DwConv,
    pw2: Pointwise,
    pw3: Pointwise,
    ffn_up: Pointwise,
    ffn_dw: DwConv,
    ffn_down: Pointwise,
}

impl Lkcab {
    fn new(vb: &mut Builder, cfg: &BcdConfig) -> Result<Self> {
        let (c, d, r) = (cfg.channels, cfg.time_embed_dim, cfg.sola_rank);
        let hidden = c * cfg.ffn_expansion;
        Ok(Self {
            down: Linear::new(&mut vb.pp("sola_down"), d, r, false)?,
            up: Linear::new(&mut vb.pp("sola_up"), r, 6 * c, false)?,
            pw1: Pointwise::new(&mut vb.pp("cab.pw1"), c, c)?,
            dw: DwConv::new(&mut vb.pp("cab.dw"), c, cfg.k_f, cfg.k_l)?,
            pw2: Pointwise::new(&mut vb.pp("cab.pw2"), c, c)?,
            pw3: Pointwise::zeros(&mut vb.pp("cab.pw3"), c, c)?,
            ffn_up: Pointwise::new(&mut vb.pp("ffn.up"), c, hidden)?,
            ffn_dw: DwConv::new(&mut vb.pp("ffn.dw"), hidden, 3, 3)?,
            ffn_down: Pointwise::zeros(&mut vb.pp("ffn.down"), hidden, c)?,
        })
    }

    /// `shared` is the block-independent part of the modulation (`B x 6C`),
    /// `e` the activated time embedding.
    pub fn forward(&self, h: &Tensor, e: &Tensor, shared: &Tensor) -> Result<Tensor> {
        let m = (shared + self.up.forward(&self.down.forward(e)?)?)?;
        let m = chunks(&m, 6)?;
        let norm = ChannelNorm::plain();
        let (b, c) = m[0].dims2()?;
        let gate = |g: &Tensor| -> Result<Tensor> { Ok((g.reshape((b, c, 1, 1))? + 1.0)?) };

        let x = modulate(&norm.forward(h)?, &m[1], &m[0])?;
        let attn = self.dw.forward(&gelu(&self.pw1.forward(&x)?)?)?;
        let value = self.pw2.forward(&x)?;
        let z = self.pw3.forward(&(attn * value)?)?;
        let h = (h + z.broadcast_mul(&gate(&m[2])?)?)?;

        let x = modulate(&norm.forward(&h)?, &m[4], &m[3])?;
        let u = gelu(&self.ffn_up.forward(&x)?)?;
        let u = (&u + self.ffn_dw.forward(&u)?)?;
        let z = self.ffn_down.forward(&u)?;
        Ok((h + z.broadcast_mul(&gate(&m[5])?)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Bcd {
    cfg: BcdConfig,
    time: TimeEmbedding,
    encoders: Vec<EncoderRegion>,
    enc_mod: Linear,
    shared_mod: Linear,
    blocks: Vec<Lkcab>,
    decoders: Vec<DecoderRegion>,
}

impl Bcd {
    /// Registers (or binds) all parameters under `vb`.
    pub fn new(cfg: &BcdConfig, vb: &mut Builder) -> Result<Self> {
        cfg.validate()?;
        let (c, d) = (cfg.channels, cfg.time_embed_dim);
        let time = TimeEmbedding::new(&mut vb.pp("time"), d)?;
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for (i, r) in cfg.regions.iter().enumerate() {
            let mut ev = vb.pp(format!("enc.{i}"));
            encoders.push(EncoderRegion {
                region: *r,
                conv: Conv1d::new(&mut ev.pp("conv"), 4 * r.stride_f, c, r.kernel_t)?,
                norm: ChannelNorm::new(&mut ev.pp("norm"), c)?,
            });
            let mut dv = vb.pp(format!("dec.{i}"));
            decoders.push(DecoderRegion {
                region: *r,
                modulation: Linear::new(&mut dv.pp("mod"), d, 2 * c, false)?,
                pw: Pointwise::new(&mut dv.pp("pw"), c, c)?,
                norm: ChannelNorm::new(&mut dv.pp("norm"), c)?,
                conv: Conv1d::new(&mut dv.pp("conv"), c, 2 * r.stride_f, r.kernel_t)?,
            });
        }
        let enc_mod = Linear::new(&mut vb.pp("enc_mod"), d, 2 * c, false)?;
        let shared_mod = Linear::new(&mut vb.pp("shared_mod"), d, 6 * c, false)?;
        let blocks = (0..cfg.blocks)
            .map(|p| Lkcab::new(&mut vb.pp(format!("blocks.{p}")), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), time, encoders, enc_mod, shared_mod, blocks, decoders })
    }

    pub fn config(&self) -> &BcdConfig {
        &self.cfg
    }

    pub fn time_embedding(&self) -> &TimeEmbedding {
        &self.time
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, ch, f, l) = x.dims4()?;
        if ch != 2 || f != self.cfg.spectrum_bins() {
            return Err(invalid!(
                "input {:?} does not match 2 x {} x L",
                x.dims(),
                self.cfg.spectrum_bins()
            ));
        }
        Ok((b, l))
    }

    /// Unmodulated encoder features, `B x 4 x F x L -> B x C x N x L`.
    pub fn encode_features(&self, xy: &Tensor) -> Result<Tensor> {
        let offsets = self.cfg.region_offsets();
        let parts = self
            .encoders
            .iter()
            .zip(&offsets)
            .map(|(enc, &off)| enc.forward(&xy.narrow(2, off, enc.region.freq_span)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 2)?)
    }

    /// Encoder output including the time modulation.
    pub fn encode(&self, xy: &Tensor, e: &Tensor) -> Result<Tensor> {
        let m = chunks(&self.enc_mod.forward(e)?, 2)?;
        modulate(&self.encode_features(xy)?, &m[0], &m[1])
    }

    /// `B x C x N x L -> B x 2 x F x L` with a zero Nyquist row.
    pub fn decode(&self, o: &Tensor, e: &Tensor) -> Result<Tensor> {
        let n = o.dim(2)?;
        if n != self.cfg.subbands() {
            return Err(invalid!("latent has {n} subbands, expected {}", self.cfg.subbands()));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(self.decoders.len());
        for dec in &self.decoders {
            let k = dec.region.subbands();
            parts.push(dec.forward(&o.narrow(2, start, k)?, e)?);
            start += k;
        }
        Ok(Tensor::cat(&parts, 2)?.pad_with_zeros(2, 0, 1)?)
    }

    /// Activated time embedding fed to every modulation projection.
    pub fn condition(&self, t: &[f64]) -> Result<Tensor> {
        gelu(&self.time.forward(t)?)
    }

    pub fn blocks(&self) -> &[Lkcab] {
        &self.blocks
    }

    pub fn shared_modulation(&self, e: &Tensor) -> Result<Tensor> {
        self.shared_mod.forward(e)
    }

    /// `x_t`, `Y`: `B x 2 x F x L` compressed spectra; `t`: one time per
    /// example. Returns the predicted clean spectrum.
    pub fn forward(&self, xt: &Tensor, y: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (b, _) = self.check_input(xt)?;
        if xt.dims() != y.dims() {
            return Err(invalid!("x_t {:?} and Y {:?} differ in shape", xt.dims(), y.dims()));
        }
        if t.len() != b {
            return Err(invalid!("{} times for a batch of {b}", t.len()));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diffusion time".into()));
        }
        if !all_finite(xt)? || !all_finite(y)? {
            return Err(Error::NonFinite("network input".into()));
        }
        let e = self.condition(t)?;
        let xy = Tensor::cat(&[xt, y], 1)?;
        let mut h = self.encode(&xy, &e)?;
        let shared = self.shared_mod.forward(&e)?;
        for block in &self.blocks {
            h = block.forward(&h, &e, &shared)?;
        }
        self.decode(&h, &e)
    }
}
