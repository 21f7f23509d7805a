//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use bridgevoc::checkpoint::Checkpoint;
use bridgevoc::config::RunConfig;
use bridgevoc::data::{make_batch, random_crop, Batch, Dataset};
use bridgevoc::distill::{
    gt_consistency_loss, inverse_consistency_loss, naive_distill_loss, omni_distill_loss, omni_stack, Distiller,
    OMNI_EPS,
};
use bridgevoc::dsp::POWER_EPS;
use bridgevoc::metrics::{mstft, MSTFT_POWER_FLOOR, MSTFT_RESOLUTIONS};
use bridgevoc::network::Bcd;
use bridgevoc::nn::{scalar, Builder, ParamStore};
use bridgevoc::noise::{step_rng, GaussianNoise};
use bridgevoc::objectives::{
    adv_disc_loss, adv_gen_loss, data_loss, default_mel_resolutions, feat_match_loss, MelLoss,
};
use bridgevoc::pipeline::Vocoder;
use bridgevoc::training::{Probe, Trainer};
use bridgevoc::wav::{save_wav, Encoding};
use bridgevoc_core::mel::triangular_filters;
use bridgevoc_core::omni::{omni_phase, reflect_index, wrap_phase, NEIGHBOURS};
use bridgevoc_core::sampler::{marginal, marginal_coeffs, reverse_sde_step, sample, sample_xt, NoNoise};
use bridgevoc_core::weights::{DistillLossComponents, GenLossComponents};
use bridgevoc_core::{
    BcdConfig, BridgeSchedule, Complex64, ComplexSpectrum, DistillWeights, Domain, LossWeights, Matrix,
    MelFilterbank, SamplerConfig, SamplerKind, ScheduleKind,
};
use candle_core::{DType, Device, Tensor};
use common::{naive_log_mel, naive_stft, synthetic_clip, voiced_clip, white, SR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

const KINDS: [ScheduleKind; 3] = [ScheduleKind::Gmax, ScheduleKind::Vp, ScheduleKind::Ve];

fn cpu() -> Device {
    Device::Cpu
}

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(white(n, seed, scale), shape, &cpu()).unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn random_spectrum(f: usize, l: usize, rng: &mut ChaCha8Rng) -> ComplexSpectrum {
    let data = (0..f * l).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    ComplexSpectrum::new(f, l, data, Domain::Compressed).unwrap()
}

// 1 -------------------------------------------------------------------------

fn rnd_suite() -> Outcome {
    let fb = ok(MelFilterbank::new(513, 80, SR, 8000.0))?;
    let (a, p) = (fb.matrix(), fb.pinv());
    let apa = ok(ok(a.matmul(p))?.matmul(a))?;
    let e1 = ok(apa.max_abs_diff(a))?;
    ensure!(e1 < 1e-5, "max|A A+ A - A| = {e1:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = Matrix::from_fn(80, 50, |_, _| rng.random_range(-3.0..3.0));
        let back = ok(a.matmul(&ok(p.matmul(&z))?))?;
        worst = worst.max(ok(back.max_abs_diff(&z))? / z.max_abs());
    }
    ensure!(worst < 1e-4, "max|A(A+ Z) - Z|/max|Z| = {worst:e}");
    Ok(format!("A A+ A err {e1:.1e}, range err {worst:.1e}"))
}

// 2 -------------------------------------------------------------------------

fn rank_suite() -> Outcome {
    let fb = ok(MelFilterbank::new(513, 80, SR, 8000.0))?;
    let tol = bridgevoc::rank::RANK_TOL;
    let projector = ok(fb.pinv().matmul(fb.matrix()))?;
    let r_proj = ok(projector.rank(tol))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..100 {
        let (r, l) = (rng.random_range(1..=60), rng.random_range(20..=60));
        let u = Matrix::from_fn(513, r, |_, _| rng.random_range(0.0..1.0));
        let v = Matrix::from_fn(r, l, |_, _| rng.random_range(0.0..1.0));
        let x = ok(u.matmul(&v))?;
        let y = ok(projector.matmul(&x))?;
        if ok(y.rank(tol))? > r_proj.min(ok(x.rank(tol))?) {
            violations += 1;
        }
    }
    ensure!(violations == 0, "{violations} rank-bound violations");

    let dir = ok(tempfile::tempdir())?;
    let corpus = dir.path().join("corpus");
    ok(std::fs::create_dir(&corpus))?;
    for i in 0..20 {
        ok(save_wav(corpus.join(format!("clip{i:02}.wav")), &synthetic_clip(33075, 100 + i), SR, Encoding::Float32))?;
    }
    let out = dir.path().join("rank");
    let status = ok(Command::new(env!("CARGO_BIN_EXE_bridgevoc"))
        .args(["rank-analysis", corpus.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output())?;
    ensure!(status.status.success(), "rank-analysis failed: {}", String::from_utf8_lossy(&status.stderr));
    let text = ok(std::fs::read_to_string(out.join("rank_values.csv")))?;
    let deltas: Vec<i64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    ensure!(deltas.len() == 20, "{} rank values", deltas.len());
    ensure!(deltas.iter().all(|&d| d <= 0), "positive rank difference in {deltas:?}");
    ensure!(std::fs::read_to_string(out.join("rank_histogram.csv")).is_ok_and(|h| h.starts_with("bin_left,count")), "no histogram");
    Ok(format!("0/100 violations, CLI rank differences {}..{}", deltas.iter().min().unwrap(), deltas.iter().max().unwrap()))
}

// 3 -------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, 1e-11 * whole.abs().max(1e-300), 30)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn schedule_suite() -> Outcome {
    let (mut worst, mut worst_id) = (0.0f64, 0.0f64);
    for kind in KINDS {
        let s = BridgeSchedule::new(kind);
        let alpha_q = |t: f64| integrate(&|u| s.f(u), 0.0, t).exp();
        let s1 = s.sigma1_sq();
        for i in 0..100 {
            let t = (i + 1) as f64 / 100.0;
            let ea = rel(s.alpha(t), alpha_q(t));
            let es = rel(s.sigma2(t), integrate(&|u| s.g2(u) / alpha_q(u).powi(2), 0.0, t));
            ensure!(ea < 1e-4 && es < 1e-4, "{kind:?} at t={t}: alpha {ea:e}, sigma2 {es:e}");
            worst = worst.max(ea).max(es);
            let tt = i as f64 / 99.0;
            let id = ((s.sigma2(tt) + s.sigma_bar2(tt)) - s1).abs() / s1;
            ensure!(id < 1e-10, "{kind:?} variance identity at t={tt}: {id:e}");
            worst_id = worst_id.max(id);
        }
    }
    Ok(format!("closed forms vs quadrature {worst:.1e}, identity {worst_id:.1e}"))
}

// 4 -------------------------------------------------------------------------

fn marginal_boundaries() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = (random_spectrum(33, 17, &mut rng), random_spectrum(33, 17, &mut rng));
    for kind in KINDS {
        let s = BridgeSchedule::new(kind);
        let (m0, std0) = ok(marginal(&x, &y, 0.0, &s))?;
        let (m1, std1) = ok(marginal(&x, &y, 1.0, &s))?;
        let (e0, e1) = (ok(m0.max_abs_diff(&x))?, ok(m1.max_abs_diff(&y))?);
        ensure!(e0 < 1e-6 && e1 < 1e-6, "{kind:?}: mean(0) err {e0:e}, mean(1) err {e1:e}");
        ensure!(std0 == 0.0 && std1 == 0.0, "{kind:?}: std(0) = {std0}, std(1) = {std1}");
        ensure!(s.alpha_bar(1.0) == 1.0, "{kind:?}: alpha_bar(1) = {}", s.alpha_bar(1.0));
    }
    Ok("all schedules".into())
}

// 5 -------------------------------------------------------------------------

fn filled(n: usize, v: Complex64) -> ComplexSpectrum {
    ComplexSpectrum::new(n, 1, vec![v; n], Domain::Compressed).unwrap()
}

fn within_3se(samples: &ComplexSpectrum, mean: Complex64, std: f64) -> Result<(), String> {
    for (part, target) in [(0, mean.re), (1, mean.im)] {
        let v: Vec<f64> = samples.data().iter().map(|z| if part == 0 { z.re } else { z.im }).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let (se_m, se_s) = (std / n.sqrt(), std / (2.0 * n).sqrt());
        ensure!((m - target).abs() < 3.0 * se_m, "mean {m} vs {target} (se {se_m:e})");
        ensure!((s - std).abs() < 3.0 * se_s, "std {s} vs {std} (se {se_s:e})");
    }
    Ok(())
}

fn sampler_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_spectrum(9, 7, &mut rng);
    let y = x.map(|z| Complex64::new(z.norm() * 0.7, 0.0));
    let mut worst_ode: f64 = 0.0;
    let mut worst_sde: f64 = 0.0;
    let mut noise = GaussianNoise::seeded(55);
    for kind in KINDS {
        let s = BridgeSchedule::new(kind);
        for nfe in [1, 2, 4, 16] {
            let xc = x.clone();
            let mut oracle = move |_: &ComplexSpectrum, _: &ComplexSpectrum, _: f64| Ok::<_, bridgevoc_core::Error>(xc.clone());
            let out = ok(sample(&mut oracle, &y, &SamplerConfig::new(SamplerKind::Ode, nfe), &s, &mut NoNoise))?;
            let e = ok(out.max_abs_diff(&x))?;
            ensure!(e < 1e-4, "{kind:?} ODE nfe {nfe}: {e:e}");
            worst_ode = worst_ode.max(e);
            let xc = x.clone();
            let mut oracle = move |_: &ComplexSpectrum, _: &ComplexSpectrum, _: f64| Ok::<_, bridgevoc_core::Error>(xc.clone());
            let out = ok(sample(&mut oracle, &y, &SamplerConfig::new(SamplerKind::Sde, nfe), &s, &mut noise))?;
            let e = ok(out.max_abs_diff(&x))?;
            ensure!(e < 1e-6, "{kind:?} SDE nfe {nfe} final step: {e:e}");
            worst_sde = worst_sde.max(e);
        }
        // one reverse SDE step from a marginal draw lands on the next marginal
        let xm = filled(10_000, Complex64::new(0.5, 0.25));
        let ym = filled(10_000, Complex64::new(1.0, 0.0));
        let state = ok(sample_xt(&xm, &ym, 0.7, &s, &mut noise))?;
        let xc = xm.clone();
        let mut oracle = move |_: &ComplexSpectrum, _: &ComplexSpectrum, _: f64| Ok::<_, bridgevoc_core::Error>(xc.clone());
        let out = ok(reverse_sde_step(&state, 0.3, &mut oracle, &s, &mut noise))?;
        let c = ok(marginal_coeffs(0.3, &s))?;
        let mean = xm.data()[0] * c.x + ym.data()[0] * c.y;
        within_3se(&out.x, mean, c.std).map_err(|e| format!("{kind:?} marginal preservation: {e}"))?;
    }
    Ok(format!("ODE worst {worst_ode:.1e}, SDE final worst {worst_sde:.1e}, marginal within 3 se"))
}

// 6 -------------------------------------------------------------------------

fn network_suite() -> Outcome {
    let cfg = BcdConfig::default();
    ensure!(cfg.subbands() == 24, "{} subbands", cfg.subbands());
    let mut store = ParamStore::new(DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = ok(Bcd::new(&cfg, &mut Builder::new(&mut store, &mut rng)))?;
    let params = store.num_elements();
    ensure!((7_000_000..=8_500_000).contains(&params), "{params} parameters");
    let xt = ok(Tensor::randn(0f32, 1.0, (1, 2, 513, 128), &cpu()))?;
    let y = ok(Tensor::randn(0f32, 1.0, (1, 2, 513, 128), &cpu()))?;
    let start = Instant::now();
    let out = ok(net.forward(&xt, &y, &[0.5]))?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(out.dims() == [1, 2, 513, 128], "output {:?}", out.dims());
    ensure!(secs < 10.0, "forward took {secs:.2} s");
    let latent = ok(net.encode_features(&ok(Tensor::cat(&[&xt, &y], 1))?))?;
    ensure!(latent.dim(2).unwrap() == 24, "latent {:?}", latent.dims());

    // finite differences in f64 on the small configuration
    let tiny = BcdConfig::tiny();
    let mut store = ParamStore::new(DType::F64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = ok(Bcd::new(&tiny, &mut Builder::new(&mut store, &mut rng)))?;
    for (i, p) in store.params().iter().enumerate() {
        let v = random_tensor(p.var.dims(), 1000 + i as u64, 0.3);
        ok(p.var.set(&v))?;
    }
    let f = tiny.spectrum_bins();
    let (xt, y, target) =
        (random_tensor(&[1, 2, f, 16], 1, 1.0), random_tensor(&[1, 2, f, 16], 2, 1.0), random_tensor(&[1, 2, f, 16], 3, 1.0));
    let loss = || -> f64 { scalar(&data_loss(&net.forward(&xt, &y, &[0.4]).unwrap(), &target).unwrap()).unwrap() };
    let grads = ok(ok(data_loss(&ok(net.forward(&xt, &y, &[0.4]))?, &target))?.backward())?;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut pick = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    for _ in 0..10_000 {
        if checked == 20 {
            break;
        }
        let p = &store.params()[pick.random_range(0..store.len())];
        let Some(g) = grads.get(&p.var) else { continue };
        let g = values(g);
        let k = pick.random_range(0..g.len());
        if g[k].abs() < 1e-6 {
            continue;
        }
        let base = values(p.var.as_tensor());
        let at = |v: f64| {
            let mut w = base.clone();
            w[k] = v;
            p.var.set(&Tensor::from_vec(w, p.var.dims(), &cpu()).unwrap()).unwrap();
        };
        at(base[k] + h);
        let up = loss();
        at(base[k] - h);
        let down = loss();
        at(base[k]);
        let numeric = (up - down) / (2.0 * h);
        let e = rel(g[k], numeric);
        ensure!(e < 1e-2, "{}[{k}]: analytic {} numeric {numeric} ({e:e})", p.name, g[k]);
        worst = worst.max(e);
        checked += 1;
    }
    ensure!(checked == 20, "only {checked} coordinates with a gradient");
    Ok(format!("{params} parameters, forward {secs:.2} s, 24 subbands, gradient check worst rel err {worst:.1e}"))
}

// 7 -------------------------------------------------------------------------

fn exact(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!(got == want, "{name}: {got} != {want}");
    Ok(())
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= tol, "{name}: {got} vs {want}");
    Ok(())
}

fn sc(t: Result<Tensor, bridgevoc::Error>) -> f64 {
    scalar(&t.unwrap()).unwrap()
}

fn omni_loop_loss(a: &Tensor, b: &Tensor) -> f64 {
    let (bsz, _, f, l) = a.dims4().unwrap();
    let embed = |t: &Tensor| -> Vec<Complex64> {
        let v = values(t);
        let z = |e: usize, ff: usize, ll: usize| Complex64::new(v[((e * 2) * f + ff) * l + ll], v[((e * 2 + 1) * f + ff) * l + ll]);
        let mut out = Vec::new();
        for e in 0..bsz {
            for c in 0..9 {
                for ff in 0..f {
                    for ll in 0..l {
                        let x = z(e, ff, ll);
                        out.push(if c == 0 {
                            x
                        } else {
                            let (df, dl) = NEIGHBOURS[c - 1];
                            let n = z(e, reflect_index(ff as isize + df, f), reflect_index(ll as isize + dl, l));
                            x * n.conj() / (n.norm_sqr() + OMNI_EPS).sqrt()
                        });
                    }
                }
            }
        }
        out
    };
    let (ea, eb) = (embed(a), embed(b));
    ea.iter().zip(&eb).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>() / ea.len() as f64
}

fn tiny_net(seed: u64) -> (ParamStore, Bcd) {
    let mut store = ParamStore::new(DType::F64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Bcd::new(&BcdConfig::tiny(), &mut Builder::new(&mut store, &mut rng)).unwrap();
    (store, net)
}

fn loss_suite() -> Outcome {
    let dev = cpu();
    // data loss
    let x = random_tensor(&[2, 2, 5, 3], 10, 1.0);
    let y = random_tensor(&[2, 2, 5, 3], 11, 1.0);
    exact("data(x, x)", sc(data_loss(&x, &x)), 0.0)?;
    let shift = ok(Tensor::cat(&[ok(Tensor::ones((2, 1, 5, 3), DType::F64, &dev))?, ok(Tensor::zeros((2, 1, 5, 3), DType::F64, &dev))?], 1))?;
    close("data(x + 1, x)", sc(data_loss(&ok(&x + &shift)?, &x)), 1.0, 1e-12)?;
    let (vx, vy) = (values(&x), values(&y));
    let mut acc = 0.0;
    for e in 0..2 {
        for i in 0..15 {
            let (re, im) = (e * 30 + i, e * 30 + 15 + i);
            acc += (vx[re] - vy[re]).powi(2) + (vx[im] - vy[im]).powi(2);
        }
    }
    close("data oracle", sc(data_loss(&x, &y)), acc / 30.0, 1e-10)?;

    // mel loss
    let mel = ok(MelLoss::new(SR, &default_mel_resolutions(80), DType::F64))?;
    let w = Tensor::from_vec(white(4096, 12, 0.5), (1, 4096), &dev).unwrap();
    let v = Tensor::from_vec(white(4096, 13, 0.5), (1, 4096), &dev).unwrap();
    exact("mel(s, s)", sc(mel.forward(&w, &w)), 0.0)?;
    exact("mel(-s, s)", sc(mel.forward(&ok(w.neg())?, &w)), 0.0)?;
    let (sw, sv) = (values(&w), values(&v));
    let mut oracle = 0.0;
    for (fft, hop, n_mels) in default_mel_resolutions(80) {
        let filters = ok(triangular_filters(fft / 2 + 1, n_mels, SR, SR as f64 / 2.0))?;
        let a = naive_log_mel(&sw, fft, hop, &filters, POWER_EPS);
        let b = naive_log_mel(&sv, fft, hop, &filters, POWER_EPS);
        oracle += a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64;
    }
    let mel_value = sc(mel.forward(&w, &v));
    close("mel oracle", mel_value, oracle, 1e-8)?;

    // adversarial and feature matching
    let s = |v: f64| vec![Tensor::new(&[[v; 4]], &dev).unwrap(), Tensor::new(&[[v; 3], [v; 3]], &dev).unwrap()];
    exact("gen(1.5)", sc(adv_gen_loss(&s(1.5))), 0.0)?;
    exact("gen(0)", sc(adv_gen_loss(&s(0.0))), 1.0)?;
    exact("gen(-1)", sc(adv_gen_loss(&s(-1.0))), 2.0)?;
    exact("disc(1, -1)", sc(adv_disc_loss(&s(1.0), &s(-1.0))), 0.0)?;
    exact("disc(0, 0)", sc(adv_disc_loss(&s(0.0), &s(0.0))), 2.0)?;
    exact("disc(-1, 1)", sc(adv_disc_loss(&s(-1.0), &s(1.0))), 4.0)?;
    let real = vec![vec![random_tensor(&[2, 3], 20, 1.0), random_tensor(&[4], 21, 1.0)], vec![random_tensor(&[5], 22, 1.0)]];
    let plus2: Vec<Vec<Tensor>> = real.iter().map(|l| l.iter().map(|t| (t + 2.0).unwrap()).collect()).collect();
    let fake = vec![vec![random_tensor(&[2, 3], 23, 1.0), random_tensor(&[4], 24, 1.0)], vec![random_tensor(&[5], 25, 1.0)]];
    exact("feat(a, a)", sc(feat_match_loss(&real, &real)), 0.0)?;
    close("feat(a, a + 2)", sc(feat_match_loss(&real, &plus2)), 2.0, 1e-12)?;
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(&fake) {
        for (a, b) in r.iter().zip(f) {
            let (a, b) = (values(a), values(b));
            terms.push(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64);
        }
    }
    close("feat oracle", sc(feat_match_loss(&real, &fake)), terms.iter().sum::<f64>() / terms.len() as f64, 1e-10)?;

    // weighted totals
    let lw = LossWeights::default();
    let g = |data, mel, gen, feat| GenLossComponents { data, mel, gen, feat };
    exact("gen total zero", ok(lw.total(&g(0.0, 0.0, 0.0, 0.0)))?, 0.0)?;
    close("gen total ones", ok(lw.total(&g(1.0, 1.0, 1.0, 1.0)))?, 41.1, 1e-12)?;
    exact("gen total data", ok(lw.total(&g(2.0, 0.0, 0.0, 0.0)))?, 2.0)?;
    let dw = DistillWeights::default();
    let d = |distill, mel, gen, feat, inverse, gt| DistillLossComponents { distill, mel, gen, feat, inverse, gt };
    exact("distill total zero", ok(dw.total(&d(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)))?, 0.0)?;
    close("distill total ones", ok(dw.total(&d(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)))?, 43.1, 1e-12)?;
    let gc = g(0.3, 1.7, 0.9, 2.2);
    for i in 0..4 {
        let mut w2 = lw;
        let (slot, comp) = match i {
            0 => (&mut w2.data, gc.data),
            1 => (&mut w2.mel, gc.mel),
            2 => (&mut w2.gen, gc.gen),
            _ => (&mut w2.feat, gc.feat),
        };
        *slot += 1.5;
        close("gen linearity", ok(w2.total(&gc))? - ok(lw.total(&gc))?, 1.5 * comp, 1e-12)?;
    }
    let dc = d(0.4, 1.1, 0.2, 0.8, 0.6, 0.9);
    for i in 0..6 {
        let mut w2 = dw;
        let (slot, comp) = match i {
            0 => (&mut w2.distill, dc.distill),
            1 => (&mut w2.mel, dc.mel),
            2 => (&mut w2.gen, dc.gen),
            3 => (&mut w2.feat, dc.feat),
            4 => (&mut w2.inverse, dc.inverse),
            _ => (&mut w2.gt, dc.gt),
        };
        *slot *= 3.0;
        let base = match i {
            0 => dw.distill,
            1 => dw.mel,
            2 => dw.gen,
            3 => dw.feat,
            4 => dw.inverse,
            _ => dw.gt,
        };
        close("distill linearity", ok(w2.total(&dc))? - ok(dw.total(&dc))?, 2.0 * base * comp, 1e-10)?;
    }

    // the trainer's reported total is the weighted sum of its reported components
    let mut cfg = RunConfig::tiny();
    cfg.train.crop_frames = 40;
    cfg.train.mel_resolutions = vec![(256, 64, 16)];
    cfg.train.weights = LossWeights { data: 1.3, mel: 0.7, gen: 2.0, feat: 0.5 };
    let data = ok(Dataset::from_clips(vec![synthetic_clip(8000, 30)], SR))?;
    let mut trainer = ok(Trainer::new(&cfg))?;
    let r = ok(trainer.step_on(&data))?;
    let want = ok(cfg.train.weights.total(&g(r.data, r.mel, r.gen, r.feat)))?;
    close("trainer total", r.total, want, 1e-5 * want.abs())?;

    // distillation losses
    let a = random_tensor(&[2, 2, 6, 5], 40, 1.0);
    let b = random_tensor(&[2, 2, 6, 5], 41, 1.0);
    exact("omni(a, a)", sc(omni_distill_loss(&a, &a)), 0.0)?;
    exact("naive(a, a)", sc(naive_distill_loss(&a, &a)), 0.0)?;
    let shift = ok(Tensor::cat(&[ok(Tensor::ones((2, 1, 6, 5), DType::F64, &dev))?, ok(Tensor::zeros((2, 1, 6, 5), DType::F64, &dev))?], 1))?;
    close("naive(a + 1, a)", sc(naive_distill_loss(&ok(&a + &shift)?, &a)), 1.0, 1e-12)?;
    let omni = sc(omni_distill_loss(&a, &b));
    close("omni oracle", omni, omni_loop_loss(&a, &b), 1e-8)?;
    close("omni symmetry", sc(omni_distill_loss(&b, &a)), omni, 1e-12)?;
    let (va, vb) = (values(&a), values(&b));
    let naive = va.iter().zip(&vb).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / (2 * 6 * 5) as f64;
    close("naive oracle", sc(naive_distill_loss(&a, &b)), naive, 1e-10)?;

    // inverse consistency with a zero student, zero state and zero condition
    let (store, student) = tiny_net(42);
    for p in store.params() {
        ok(p.var.set(&p.var.zeros_like().unwrap()))?;
    }
    let f = BcdConfig::tiny().spectrum_bins();
    let zero = ok(Tensor::zeros((1, 2, f, 16), DType::F64, &dev))?;
    exact("inverse(zero)", sc(inverse_consistency_loss(&student, &zero, &zero)), 0.0)?;

    // gt consistency: the inner call contributes no gradient
    let (store, student) = tiny_net(43);
    for (i, p) in store.params().iter().enumerate() {
        ok(p.var.set(&random_tensor(p.var.dims(), 500 + i as u64, 0.2)))?;
    }
    let (yy, x0) = (random_tensor(&[1, 2, f, 16], 44, 1.0), random_tensor(&[1, 2, f, 16], 45, 1.0));
    let full = ok(ok(gt_consistency_loss(&student, &yy, &x0))?.backward())?;
    let inner = ok(student.forward(&x0, &yy, &[0.0]))?.detach();
    let frozen = ok(ok(data_loss(&ok(student.forward(&inner, &yy, &[1.0]))?, &x0))?.backward())?;
    for p in store.params() {
        match (full.get(&p.var), frozen.get(&p.var)) {
            (Some(u), Some(v)) => ensure!(values(u) == values(v), "gt gradient differs at {}", p.name),
            (None, None) => {}
            _ => return Err(format!("gt gradient presence differs at {}", p.name)),
        }
    }
    Ok(format!("fixed points exact, mel oracle diff {:.1e}, omni {omni:.4}", (mel_value - oracle).abs()))
}

// 8 -------------------------------------------------------------------------

fn phase_loop_oracle(phase: &Matrix) -> Vec<Matrix> {
    let (rows, cols) = phase.shape();
    let mirror = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let mut out = vec![phase.clone()];
    for &(df, dl) in &NEIGHBOURS {
        out.push(Matrix::from_fn(rows, cols, |f, l| {
            let d = phase[(f, l)] - phase[(mirror(f as isize + df, rows), mirror(l as isize + dl, cols))];
            let mut w = d.rem_euclid(2.0 * PI);
            if w > PI {
                w -= 2.0 * PI;
            }
            w
        }));
    }
    out
}

fn omni_suite() -> Outcome {
    let constant = Matrix::from_fn(5, 6, |_, _| 1.75);
    let out = omni_phase(&constant);
    ensure!(out[0] == constant, "identity channel changed");
    ensure!(out[1..].iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)), "constant phase not annihilated");

    let delta = 0.125;
    let ramp = Matrix::from_fn(6, 10, |_, l| delta * l as f64);
    let out = omni_phase(&ramp);
    for (k, &(_, dl)) in NEIGHBOURS.iter().enumerate() {
        for f in 1..5 {
            for l in 1..9 {
                ensure!(out[k + 1][(f, l)] == -(dl as f64) * delta, "ramp channel {k} at ({f}, {l})");
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for (rows, cols) in [(7, 9), (33, 17), (2, 3)] {
        let phase = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-PI..PI));
        for (a, b) in omni_phase(&phase).iter().zip(&phase_loop_oracle(&phase)) {
            let e = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| wrap_phase(p - q).abs()).fold(0.0, f64::max);
            worst = worst.max(e);
        }
    }
    ensure!(worst < 1e-10, "phase oracle {worst:e}");

    // the spectral embedding on tensors against a direct loop
    let x = random_tensor(&[1, 2, 7, 6], 81, 1.0);
    let stack = values(&ok(omni_stack(&x))?);
    let v = values(&x);
    let (f, l) = (7, 6);
    let z = |ff: usize, ll: usize| Complex64::new(v[ff * l + ll], v[f * l + ff * l + ll]);
    let mut e_stack: f64 = 0.0;
    for c in 0..9 {
        for ff in 0..f {
            for ll in 0..l {
                let want = if c == 0 {
                    z(ff, ll)
                } else {
                    let (df, dl) = NEIGHBOURS[c - 1];
                    let n = z(reflect_index(ff as isize + df, f), reflect_index(ll as isize + dl, l));
                    z(ff, ll) * n.conj() / (n.norm_sqr() + OMNI_EPS).sqrt()
                };
                let got = Complex64::new(stack[((c * 2) * f + ff) * l + ll], stack[((c * 2 + 1) * f + ff) * l + ll]);
                e_stack = e_stack.max((got - want).norm());
            }
        }
    }
    ensure!(e_stack < 1e-10, "embedding oracle {e_stack:e}");
    Ok(format!("phase oracle {worst:.1e}, embedding oracle {e_stack:.1e}"))
}

// 9 -------------------------------------------------------------------------

static TEACHER: OnceLock<Checkpoint> = OnceLock::new();

fn overfit_smoke() -> Outcome {
    let cfg = RunConfig::tiny();
    ensure!(cfg.train.weights.gen == 0.0 && cfg.train.weights.feat == 0.0, "adversarial terms active");
    ensure!(cfg.model.channels == 32 && cfg.model.subbands() == 4, "not the small network");
    let data = ok(Dataset::from_clips(vec![voiced_clip()], SR))?;
    let mut trainer = ok(Trainer::new(&cfg))?;
    let mut rng = step_rng(99, 0);
    let waves = (0..4).map(|_| random_crop(&data.clips[0], cfg.crop_samples(), &mut rng).unwrap()).collect();
    let batch = ok(Batch::from_segments(&trainer.featurizer, waves))?;
    let probe = ok(Probe::new(&cfg, &batch, &[1.0, 0.75, 0.5, 0.25], 5))?;
    let before = ok(trainer.probe_mel_loss(&probe))?;
    for _ in 0..500 {
        ok(trainer.step_on(&data))?;
    }
    let after = ok(trainer.probe_mel_loss(&probe))?;
    ensure!(trainer.step == 500, "stopped at step {}", trainer.step);
    ensure!(after <= 0.5 * before, "mel loss {before:.4} -> {after:.4}");
    let _ = TEACHER.set(trainer.checkpoint());
    Ok(format!("probe mel loss {before:.4} -> {after:.4} ({:.0}%)", 100.0 * after / before))
}

// 10 ------------------------------------------------------------------------

fn distill_smoke() -> Outcome {
    let teacher = TEACHER.get().ok_or("no overfit checkpoint (criterion 9 failed)")?;
    let mut cfg = teacher.config.clone();
    cfg.distill.steps = 200;
    cfg.distill.weights.gen = 0.0;
    cfg.distill.weights.feat = 0.0;
    let clip = voiced_clip();
    let data = ok(Dataset::from_clips(vec![clip.clone()], SR))?;
    let mut d = ok(Distiller::new(&cfg, teacher))?;
    let mut rng = step_rng(77, 0);
    let probe = ok(make_batch(&data, &d.featurizer, 4, cfg.train.crop_frames, &mut rng))?;
    let before = ok(d.evaluate(&probe))?.total;
    while d.step < cfg.distill.steps {
        ok(d.step_on(&data))?;
    }
    let after = ok(d.evaluate(&probe))?.total;
    ensure!(after < before, "distill total {before:.5} -> {after:.5}");

    let teacher_voc = ok(Vocoder::from_checkpoint(teacher))?;
    let student_voc = ok(Vocoder::from_store(&cfg, &d.store, "student"))?;
    let mel = ok(teacher_voc.mel_of(&clip, SR))?;
    let t_wave = ok(teacher_voc.synthesize(&mel, &SamplerConfig::default(), &cfg.schedule, 7))?;
    let (s_spec, calls) = ok(student_voc.spectrum(&mel, &SamplerConfig::new(SamplerKind::Sde, 1), &cfg.schedule, 7))?;
    ensure!(calls == 1, "student used {calls} network calls");
    let s_wave = ok(bridgevoc::pipeline::render(&s_spec, &student_voc.featurizer))?;
    let n = t_wave.len().min(s_wave.len()).min(clip.len());
    let t_score = ok(mstft(&clip[..n], &t_wave[..n]))?;
    let s_score = ok(mstft(&clip[..n], &s_wave[..n]))?;
    ensure!(s_score <= 1.5 * t_score, "student M-STFT {s_score:.4} vs teacher {t_score:.4}");
    Ok(format!(
        "distill total {before:.4} -> {after:.4}; M-STFT student (1 call) {s_score:.4}, teacher (4 calls) {t_score:.4}, ratio {:.3}",
        s_score / t_score
    ))
}

// 11 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let cfg = RunConfig::tiny();
    let trainer = ok(Trainer::new(&cfg))?;
    let ckpt = dir.path().join("model.safetensors");
    ok(trainer.checkpoint().save(&ckpt))?;
    let input = dir.path().join("utt.wav");
    ok(save_wav(&input, &synthetic_clip(8000, 11), SR, Encoding::Float32))?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let o = ok(Command::new(env!("CARGO_BIN_EXE_bridgevoc"))
            .args(["infer", input.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()])
            .args(["--sampler", "ode", "--nfe", "4", "--seed", "7", "--out", out.to_str().unwrap()])
            .output())?;
        ensure!(o.status.success(), "infer failed: {}", String::from_utf8_lossy(&o.stderr));
        ok(std::fs::read(out.join("utt.wav")))
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure!(a == b, "outputs differ");
    Ok(format!("{} identical bytes", a.len()))
}

// 12 ------------------------------------------------------------------------

fn mstft_oracle(r: &[f64], g: &[f64]) -> f64 {
    let mut total = 0.0;
    for &(fft, hop, win) in &MSTFT_RESOLUTIONS {
        let mag = |x: &[f64]| -> Vec<f64> {
            let (re, im, _) = naive_stft(x, fft, hop, win);
            re.iter().zip(&im).map(|(a, b)| (a * a + b * b).max(MSTFT_POWER_FLOOR).sqrt()).collect()
        };
        let (mr, mg) = (mag(r), mag(g));
        let num: f64 = mr.iter().zip(&mg).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = mr.iter().map(|a| a * a).sum();
        let log: f64 = mr.iter().zip(&mg).map(|(a, b)| (a.ln() - b.ln()).abs()).sum::<f64>() / mr.len() as f64;
        total += (num / den).sqrt() + log;
    }
    total
}

fn mstft_selftest() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let r = synthetic_clip(3000, 200 + i);
        let g = if i % 2 == 0 { white(3000, 300 + i, 0.3) } else { r.iter().map(|v| 0.5 * v).collect() };
        ensure!(ok(mstft(&r, &r))? == 0.0, "M-STFT(x, x) != 0");
        let ours = ok(mstft(&r, &g))?;
        let e = (ours - mstft_oracle(&r, &g)).abs();
        ensure!(e < 1e-6, "pair {i}: {ours} differs from oracle by {e:e}");
        worst = worst.max(e);
    }
    Ok(format!("self distance 0, oracle worst {worst:.1e}"))
}

fn main() {
    let suite: [(&str, fn() -> Outcome, Option<f64>); 12] = [
        ("mel filterbank range/null-space decomposition", rnd_suite, Some(5.0)),
        ("rank bound and rank-analysis CLI", rank_suite, Some(30.0)),
        ("schedule closed forms", schedule_suite, Some(10.0)),
        ("marginal boundaries", marginal_boundaries, None),
        ("sampler oracle convergence", sampler_oracle, Some(60.0)),
        ("network shapes, size and gradients", network_suite, None),
        ("loss fixed points, oracles and linearity", loss_suite, None),
        ("omnidirectional phase operator", omni_suite, None),
        ("overfit smoke", overfit_smoke, Some(600.0)),
        ("distillation smoke", distill_smoke, Some(300.0)),
        ("end-to-end determinism", determinism, None),
        ("M-STFT self-test", mstft_selftest, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in suite.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if secs > *l => Err(format!("took {secs:.1} s, limit {l} s")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2}. {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2}. {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", suite.len() - failed, suite.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
