//! Single-step student distillation from a multi-step teacher.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use bridgevoc_core::omni::{reflect_index, wrap_phase, NEIGHBOURS};
use bridgevoc_core::sampler::{sample, NoNoise};
use bridgevoc_core::{BridgeSchedule, ComplexSpectrum, Predictor, SamplerConfig, SamplerKind};
use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{DistillLossKind, RunConfig};
use crate::data::{make_batch, Batch, Dataset, Featurizer};
use crate::dsp::{spectrum_to_wave, TensorStft};
use crate::error::{Error, Result};
use crate::network::Bcd;
use crate::nn::{scalar, Builder, ParamStore};
use crate::noise::step_rng;
use crate::objectives::{data_loss, MelLoss};
use crate::optim::AdamW;
use crate::pipeline::NetPredictor;
use crate::training::{adam, open_log, stack, waves_tensor, Critic, TRAIN_DTYPE};

/// Keeps the neighbour normalisation finite at zero-magnitude bins.
pub const OMNI_EPS: f64 = 1e-8;

fn shift_index(n: usize, d: isize, dev: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (0..n).map(|i| reflect_index(i as isize + d, n) as u32).collect();
    Ok(Tensor::from_vec(idx, n, dev)?)
}

/// `out[.., f, l] = x[.., f + df, l + dl]` over the last two axes of a 4-D
/// tensor, reflecting at the borders.
pub fn neighbour(x: &Tensor, df: isize, dl: isize) -> Result<Tensor> {
    let (_, _, f, l) = x.dims4()?;
    let x = x.contiguous()?.index_select(&shift_index(f, df, x.device())?, 2)?;
    Ok(x.contiguous()?.index_select(&shift_index(l, dl, x.device())?, 3)?)
}

/// Omnidirectional embedding of `B x 2 x F x L` spectra as `B x 9 x 2 x F x L`.
///
/// Channel 0 is the spectrum itself, `|X|(cos φ, sin φ)`. Channel `k` holds
/// `|X|(cos Δ, sin Δ)` for the phase difference `Δ` to neighbour `k`,
/// computed as `X conj(X_n) / |X_n|`, which is wrap-free.
pub fn omni_stack(x: &Tensor) -> Result<Tensor> {
    let re = x.narrow(1, 0, 1)?;
    let im = x.narrow(1, 1, 1)?;
    let mut channels = vec![x.clone()];
    for &(df, dl) in &NEIGHBOURS {
        let n = neighbour(x, df, dl)?;
        let (rn, inn) = (n.narrow(1, 0, 1)?, n.narrow(1, 1, 1)?);
        let den = ((rn.sqr()? + inn.sqr()?)? + OMNI_EPS)?.sqrt()?;
        let cr = ((&re * &rn)? + (&im * &inn)?)?.div(&den)?;
        let ci = ((&im * &rn)? - (&re * &inn)?)?.div(&den)?;
        channels.push(Tensor::cat(&[cr, ci], 1)?);
    }
    Ok(Tensor::stack(&channels, 1)?)
}

/// Omnidirectional loss: mean over examples, channels, bins and frames of
/// the squared complex distance between the two embeddings.
pub fn omni_distill_loss(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    if student.dims() != teacher.dims() {
        return Err(Error::Invalid(format!("shapes {:?} and {:?} differ", student.dims(), teacher.dims())));
    }
    let d = (omni_stack(student)? - omni_stack(teacher)?)?;
    Ok(d.sqr()?.sum_keepdim(2)?.mean_all()?)
}

/// Phase as a differentiable tensor. The value comes from a host-side
/// `atan2`; the gradient is that of `atan2(im, re)`, `(re dim - im dre)/r²`.
fn phase(re: &Tensor, im: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let r = re.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let i = im.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let p0: Vec<f64> = r.iter().zip(&i).map(|(a, b)| b.atan2(*a)).collect();
    let base = Tensor::from_vec(p0.clone(), re.shape(), re.device())?.to_dtype(re.dtype())?;
    let (re0, im0) = (re.detach(), im.detach());
    let r2 = ((re0.sqr()? + im0.sqr()?)? + OMNI_EPS)?;
    let lin = ((&re0 * im)? - (&im0 * re)?)?.div(&r2)?;
    Ok(((base + lin)?, p0))
}

/// Raw variant: `B x 9 x F x L` of `|X|` times the identity phase and the
/// eight wrapped phase differences.
pub fn omni_raw_stack(x: &Tensor) -> Result<Tensor> {
    let (b, _, f, l) = x.dims4()?;
    let re = x.narrow(1, 0, 1)?;
    let im = x.narrow(1, 1, 1)?;
    let mag = ((re.sqr()? + im.sqr()?)? + OMNI_EPS)?.sqrt()?;
    let (theta, p0) = phase(&re, &im)?;
    let mut channels = vec![(&mag * &theta)?];
    for &(df, dl) in &NEIGHBOURS {
        let diff = (&theta - neighbour(&theta, df, dl)?)?;
        let mut offset = vec![0.0; b * f * l];
        for e in 0..b {
            for ff in 0..f {
                let fn_ = reflect_index(ff as isize + df, f);
                for ll in 0..l {
                    let ln = reflect_index(ll as isize + dl, l);
                    let d = p0[(e * f + ff) * l + ll] - p0[(e * f + fn_) * l + ln];
                    offset[(e * f + ff) * l + ll] = wrap_phase(d) - d;
                }
            }
        }
        let offset = Tensor::from_vec(offset, (b, 1, f, l), x.device())?.to_dtype(x.dtype())?;
        channels.push((&mag * (diff + offset)?)?);
    }
    Ok(Tensor::cat(&channels, 1)?)
}

pub fn omni_raw_distill_loss(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    if student.dims() != teacher.dims() {
        return Err(Error::Invalid(format!("shapes {:?} and {:?} differ", student.dims(), teacher.dims())));
    }
    Ok((omni_raw_stack(student)? - omni_raw_stack(teacher)?)?.sqr()?.mean_all()?)
}

/// Mean squared complex distance between student and teacher outputs.
pub fn naive_distill_loss(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    data_loss(student, teacher)
}

pub fn distill_loss(kind: DistillLossKind, student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    match kind {
        DistillLossKind::Omni => omni_distill_loss(student, teacher),
        DistillLossKind::OmniRaw => omni_raw_distill_loss(student, teacher),
        DistillLossKind::Naive => naive_distill_loss(student, teacher),
    }
}

/// Deterministic teacher rollout from `x_1 = Y` with `steps` ODE steps.
pub fn teacher_reverse<P: Predictor>(
    teacher: &mut P,
    y: &ComplexSpectrum,
    steps: usize,
    schedule: &BridgeSchedule,
) -> std::result::Result<ComplexSpectrum, P::Error> {
    sample(teacher, y, &SamplerConfig::new(SamplerKind::Ode, steps), schedule, &mut NoNoise)
}

fn times(n: usize, t: f64) -> Vec<f64> {
    vec![t; n]
}

/// Target-to-source consistency: the student at `t = 0`, fed the teacher's
/// output, should return the surrogate `x_1 = Y`.
pub fn inverse_consistency_loss(student: &Bcd, teacher_out: &Tensor, y: &Tensor) -> Result<Tensor> {
    let b = y.dim(0)?;
    data_loss(&student.forward(teacher_out, y, &times(b, 0.0))?, y)
}

/// Round trip from the clean spectrum: target-to-source with the gradient
/// stopped, then source-to-target, compared with `x_0`.
pub fn gt_consistency_loss(student: &Bcd, y: &Tensor, x0: &Tensor) -> Result<Tensor> {
    let b = y.dim(0)?;
    let inner = student.forward(x0, y, &times(b, 0.0))?.detach();
    data_loss(&student.forward(&inner, y, &times(b, 1.0))?, x0)
}

/// Single-step student output: the data prediction at `t = 1` from `x_1 = Y`.
pub fn student_single_step(student: &Bcd, y: &Tensor) -> Result<Tensor> {
    student.forward(y, y, &times(y.dim(0)?, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistillReport {
    pub step: u64,
    pub distill: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
    pub inverse: f64,
    pub gt: f64,
    pub disc: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl DistillReport {
    pub const CSV_HEADER: &'static str = "step,total,distill,mel,gen,feat,inverse,gt,disc,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.total,
            self.distill,
            self.mel,
            self.gen,
            self.feat,
            self.inverse,
            self.gt,
            self.disc,
            self.grad_norm
        )
    }
}

fn spectrum_key(y: &ComplexSpectrum) -> u64 {
    let mut h = DefaultHasher::new();
    y.shape().hash(&mut h);
    for z in y.data() {
        z.re.to_bits().hash(&mut h);
        z.im.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug)]
pub struct Distiller {
    pub cfg: RunConfig,
    pub teacher_store: ParamStore,
    pub teacher: Bcd,
    pub store: ParamStore,
    pub student: Bcd,
    pub opt: AdamW,
    pub critic: Option<Critic>,
    pub mel_loss: MelLoss,
    pub stft: TensorStft,
    pub featurizer: Featurizer,
    pub step: u64,
    cache: HashMap<u64, ComplexSpectrum>,
}

impl Distiller {
    /// Student initialised as an exact copy of the teacher in `ckpt`. The
    /// audio and network sections of `cfg` must match the teacher's.
    pub fn new(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if cfg.audio != ckpt.config.audio || cfg.model != ckpt.config.model {
            return Err(Error::Checkpoint("teacher was trained with different audio or network settings".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut teacher_store = ParamStore::new(TRAIN_DTYPE);
        Bcd::new(&cfg.model, &mut Builder::new(&mut teacher_store, &mut rng))?;
        ckpt.restore_store("gen", &teacher_store)?;
        let teacher = Bcd::new(&cfg.model, &mut Builder::bind(&mut teacher_store, &mut rng, true))?;
        let mut store = teacher_store.deep_clone()?;
        let student = Bcd::new(&cfg.model, &mut Builder::bind(&mut store, &mut rng, false))?;
        let opt = AdamW::new(adam(cfg, cfg.distill.lr), &store)?;
        let critic = if cfg.distill.weights.generator_only() {
            None
        } else {
            let mut c = Critic::new(cfg, &mut rng, cfg.distill.lr)?;
            if ckpt.tensors.keys().any(|k| k.starts_with("disc/")) {
                ckpt.restore_store("disc", &c.store)?;
            }
            c.opt = AdamW::new(adam(cfg, cfg.distill.lr), &c.store)?;
            Some(c)
        };
        let s = &cfg.audio.stft;
        Ok(Self {
            cfg: cfg.clone(),
            teacher_store,
            teacher,
            store,
            student,
            opt,
            critic,
            mel_loss: MelLoss::new(cfg.audio.sample_rate, &cfg.train.mel_resolutions, TRAIN_DTYPE)?,
            stft: TensorStft::new(s.fft_size, s.hop, s.window_size, TRAIN_DTYPE)?,
            featurizer: Featurizer::new(&cfg.audio)?,
            step: 0,
            cache: HashMap::new(),
        })
    }

    /// Student checkpoint in the teacher's format; the teacher rides along
    /// under `teacher/` so that a run can resume.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(&self.cfg, "student", self.step);
        c.put_store("gen", &self.store);
        c.put_store("teacher", &self.teacher_store);
        c.put_adam("opt_gen", &self.opt, &self.store);
        if let Some(critic) = &self.critic {
            c.put_store("disc", &critic.store);
            c.put_adam("opt_disc", &critic.opt, &critic.store);
        }
        c
    }

    /// Resumes from a checkpoint written by [`Distiller::checkpoint`].
    pub fn resume(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.role != "student" {
            return Err(Error::Checkpoint("not a distillation checkpoint".into()));
        }
        let mut teacher = ckpt.clone();
        for p in ckpt.tensors.keys().filter(|k| k.starts_with("teacher/")) {
            teacher.tensors.insert(p.replacen("teacher/", "gen/", 1), ckpt.tensors[p].clone());
        }
        teacher.tensors.retain(|k, _| k.starts_with("gen/") || k.starts_with("disc/"));
        let mut d = Self::new(cfg, &teacher)?;
        ckpt.restore_store("gen", &d.store)?;
        ckpt.restore_adam("opt_gen", &mut d.opt, &d.store)?;
        if let Some(c) = d.critic.as_mut() {
            ckpt.restore_adam("opt_disc", &mut c.opt, &c.store)?;
        }
        d.step = ckpt.step;
        Ok(d)
    }

    /// Teacher rollouts for each surrogate, cached by content.
    pub fn teacher_targets(&mut self, ys: &[ComplexSpectrum]) -> Result<Vec<ComplexSpectrum>> {
        let mut out = Vec::with_capacity(ys.len());
        for y in ys {
            let key = spectrum_key(y);
            if let Some(hit) = self.cache.get(&key).filter(|c| c.shape() == y.shape()) {
                out.push(hit.clone());
                continue;
            }
            let mut p = NetPredictor::new(&self.teacher, TRAIN_DTYPE);
            let x0 = teacher_reverse(&mut p, y, self.cfg.distill.teacher_nfe, &self.cfg.schedule)?;
            self.cache.insert(key, x0.clone());
            out.push(x0);
        }
        Ok(out)
    }

    /// Generator-side components as tensors, in report order
    /// (distill, mel, inverse, gt), plus the student's waveforms.
    fn components(&mut self, batch: &Batch) -> Result<([Tensor; 4], Tensor, Tensor)> {
        let targets = self.teacher_targets(&batch.y)?;
        let x0_t = stack(&targets)?;
        let y = stack(&batch.y)?;
        let x = stack(&batch.x)?;
        let real = waves_tensor(&batch.waves)?;
        let out = student_single_step(&self.student, &y)?;
        let fake = spectrum_to_wave(&out, &self.cfg.audio.compression, &self.stft)?;
        let distill = distill_loss(self.cfg.distill.loss, &out, &x0_t)?;
        let mel = self.mel_loss.forward(&fake, &real)?;
        let inverse = inverse_consistency_loss(&self.student, &x0_t, &y)?;
        let gt = gt_consistency_loss(&self.student, &y, &x)?;
        Ok(([distill, mel, inverse, gt], fake, real))
    }

    /// Weighted generator objective on `batch` without updating anything.
    pub fn evaluate(&mut self, batch: &Batch) -> Result<DistillReport> {
        let ([d, m, i, g], _, _) = self.components(batch)?;
        let w = self.cfg.distill.weights;
        let mut r = DistillReport {
            step: self.step,
            distill: scalar(&d)?,
            mel: scalar(&m)?,
            inverse: scalar(&i)?,
            gt: scalar(&g)?,
            ..Default::default()
        };
        r.total = w.distill * r.distill + w.mel * r.mel + w.inverse * r.inverse + w.gt * r.gt;
        Ok(r)
    }

    pub fn distill_step(&mut self, batch: &Batch) -> Result<DistillReport> {
        let ([d, m, i, g], fake, real) = self.components(batch)?;
        let w = self.cfg.distill.weights;
        let mut report = DistillReport { step: self.step, ..Default::default() };
        let mut total = ((((&d * w.distill)? + (&m * w.mel)?)? + (&i * w.inverse)?)? + (&g * w.gt)?)?;
        if let Some(critic) = self.critic.as_mut() {
            report.disc = critic.update(&real, &fake)?;
            let (adv, fm) = critic.generator_terms(&real, &fake)?;
            report.gen = scalar(&adv)?;
            report.feat = scalar(&fm)?;
            total = ((total + (adv * w.gen)?)? + (fm * w.feat)?)?;
        }
        report.distill = scalar(&d)?;
        report.mel = scalar(&m)?;
        report.inverse = scalar(&i)?;
        report.gt = scalar(&g)?;
        report.total = scalar(&total)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("distillation loss at step {}: {report:?}", self.step)));
        }
        report.grad_norm = self.opt.apply(&self.store, &total.backward()?)?;
        self.step += 1;
        Ok(report)
    }

    pub fn step_on(&mut self, data: &Dataset) -> Result<DistillReport> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let batch = make_batch(data, &self.featurizer, self.cfg.train.batch, self.cfg.train.crop_frames, &mut rng)?;
        self.distill_step(&batch)
    }
}

/// Distils until `cfg.distill.steps`, logging to `distill_log.csv` every
/// `train.log_interval` steps and checkpointing into `out` every
/// `train.checkpoint_interval` steps and at the end.
pub fn run(distiller: &mut Distiller, data: &Dataset, out: &Path) -> Result<Vec<DistillReport>> {
    let (mut log, log_path) = open_log(out, "distill_log.csv", DistillReport::CSV_HEADER, distiller.step == 0)?;
    let ckpt_path = out.join("checkpoint.safetensors");
    let (log_every, ckpt_every) = (distiller.cfg.train.log_interval, distiller.cfg.train.checkpoint_interval);
    let mut logged = Vec::new();
    while distiller.step < distiller.cfg.distill.steps {
        let report = distiller.step_on(data)?;
        if distiller.step % log_every == 0 {
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(&log_path, e))?;
            logged.push(report);
        }
        if distiller.step % ckpt_every == 0 {
            distiller.checkpoint().save(&ckpt_path)?;
        }
    }
    distiller.checkpoint().save(&ckpt_path)?;
    Ok(logged)
}
