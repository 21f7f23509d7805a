//! Command-line surface.

use std::path::{Path, PathBuf};

use bridgevoc_core::{BridgeSchedule, MelSpectrum, SamplerKind, ScheduleKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{Dataset, Manifest};
use crate::distill::{self, Distiller};
use crate::error::{Error, Result};
use crate::formats::{load_mel, save_mel};
use crate::metrics::evaluate_dirs;
use crate::pipeline::Vocoder;
use crate::rank::{histogram, histogram_csv, rank_delta, summary, RankRecord, RANK_TOL};
use crate::training::{self, Trainer};
use crate::wav::{load_wav, save_wav, Encoding};

const CHECKPOINT: &str = "checkpoint.safetensors";

#[derive(Debug, Parser)]
#[command(name = "bridgevoc", version, about = "Schrödinger-bridge vocoder")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (a file for `eval`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Tiny,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trains the bridge model.
    Train {
        /// Audio files; the configured manifest is used when empty.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continues from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Distils a single-step student from a trained model.
    Distill {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        resume: bool,
    },
    /// Synthesises waveforms from wav files or precomputed `.mel` files.
    Infer {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Network evaluations; defaults to 1 for students and the
        /// configured value otherwise.
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long, value_parser = clap::value_parser!(SamplerKind))]
        sampler: Option<SamplerKind>,
        #[arg(long, value_parser = clap::value_parser!(ScheduleKind))]
        schedule: Option<ScheduleKind>,
        #[arg(long)]
        pcm16: bool,
    },
    /// Scores generated wavs against references with the same names.
    Eval { reference: PathBuf, generated: PathBuf },
    /// Rank difference of the Mel degradation over a corpus.
    RankAnalysis { inputs: Vec<PathBuf> },
    /// Writes the log-Mel spectrum of each wav as a `.mel` file.
    Mel { inputs: Vec<PathBuf> },
}

impl Shared {
    fn run_config(&self, fallback: Option<&RunConfig>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(cfg)) => cfg.clone(),
            (None, None) => match self.preset {
                Preset::Default => RunConfig::default(),
                Preset::Tiny => RunConfig::tiny(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.out.clone().ok_or_else(|| Error::Config("--out is required".into()))?;
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(out)
    }
}

/// Expands directories into the `.wav` files they contain, sorted.
pub fn collect_wavs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found = Vec::new();
            for e in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
                let path = e.map_err(|e| Error::io(p, e))?.path();
                if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
                    found.push(path);
                }
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn dataset(cfg: &RunConfig, inputs: &[PathBuf], manifest: Option<&Path>) -> Result<Dataset> {
    let manifest = if !inputs.is_empty() {
        Manifest::from_paths(collect_wavs(inputs)?)?
    } else if let Some(path) = manifest.or(cfg.train.manifest.as_deref()) {
        Manifest::load(path)?
    } else {
        return Err(Error::Config("no training audio: pass files or a manifest".into()));
    };
    Dataset::load(&manifest, cfg.audio.sample_rate)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(shared: &Shared, inputs: &[PathBuf], manifest: Option<&Path>, steps: Option<u64>, resume: bool) -> Result<()> {
    let out = shared.out_dir()?;
    let ckpt_path = out.join(CHECKPOINT);
    let prior = if resume { Some(Checkpoint::load(&ckpt_path)?) } else { None };
    let mut cfg = shared.run_config(prior.as_ref().map(|c| &c.config))?;
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    let data = dataset(&cfg, inputs, manifest)?;
    let mut trainer = match &prior {
        Some(ckpt) => Trainer::resume(&cfg, ckpt)?,
        None => Trainer::new(&cfg)?,
    };
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let start = trainer.step;
    let logged = training::run(&mut trainer, &data, &out)?;
    if let Some(last) = logged.last() {
        eprintln!("trained steps {start}..{}: total {:.5} mel {:.5}", trainer.step, last.total, last.mel);
    }
    eprintln!("checkpoint {}", ckpt_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn distill_cmd(
    shared: &Shared,
    inputs: &[PathBuf],
    teacher: &Path,
    manifest: Option<&Path>,
    steps: Option<u64>,
    lr: Option<f64>,
    resume: bool,
) -> Result<()> {
    let out = shared.out_dir()?;
    let ckpt_path = out.join(CHECKPOINT);
    let source = Checkpoint::load(if resume { ckpt_path.as_path() } else { teacher })?;
    let mut cfg = shared.run_config(Some(&source.config))?;
    if let Some(steps) = steps {
        cfg.distill.steps = steps;
    }
    if let Some(lr) = lr {
        cfg.distill.lr = lr;
    }
    cfg.validate()?;
    let data = dataset(&cfg, inputs, manifest)?;
    let mut distiller = if resume { Distiller::resume(&cfg, &source)? } else { Distiller::new(&cfg, &source)? };
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let start = distiller.step;
    let logged = distill::run(&mut distiller, &data, &out)?;
    if let Some(last) = logged.last() {
        eprintln!("distilled steps {start}..{}: total {:.5} distill {:.5}", distiller.step, last.total, last.distill);
    }
    eprintln!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn infer(
    shared: &Shared,
    inputs: &[PathBuf],
    checkpoint: &Path,
    nfe: Option<usize>,
    sampler: Option<SamplerKind>,
    schedule: Option<ScheduleKind>,
    pcm16: bool,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("no inputs".into()));
    }
    let out = shared.out_dir()?;
    let voc = Vocoder::load(checkpoint)?;
    let mut sampler_cfg = voc.config.sampler;
    if voc.role == "student" {
        sampler_cfg.nfe = 1;
    }
    if let Some(kind) = sampler {
        sampler_cfg.sampler = kind;
    }
    if let Some(n) = nfe {
        sampler_cfg.nfe = n;
    }
    let schedule = schedule.map(BridgeSchedule::new).unwrap_or(voc.config.schedule);
    let seed = shared.seed.unwrap_or(voc.config.seed);
    let encoding = if pcm16 { Encoding::Pcm16 } else { Encoding::Float32 };
    let sr = voc.config.audio.sample_rate;
    for (i, path) in inputs.iter().enumerate() {
        let mel: MelSpectrum = if path.extension().is_some_and(|e| e == "mel") {
            load_mel(path)?
        } else {
            let (wave, rate) = load_wav(path)?;
            voc.mel_of(&wave, rate).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let (spec, calls) = voc.spectrum(&mel, &sampler_cfg, &schedule, seed.wrapping_add(i as u64))?;
        let wave = crate::pipeline::render(&spec, &voc.featurizer)?;
        let dest = out.join(format!("{}.wav", stem(path)?));
        save_wav(&dest, &wave, sr, encoding)?;
        eprintln!("{} -> {} ({calls} network calls)", path.display(), dest.display());
    }
    Ok(())
}

fn eval(shared: &Shared, reference: &Path, generated: &Path) -> Result<()> {
    let report = evaluate_dirs(reference, generated)?;
    let csv = report.to_csv();
    match &shared.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("{} files, mean M-STFT {:.6} ({:.2} s)", report.files.len(), report.mean_mstft, report.seconds);
    Ok(())
}

fn rank_analysis(shared: &Shared, inputs: &[PathBuf]) -> Result<()> {
    let cfg = shared.run_config(None)?;
    let out = shared.out_dir()?;
    let fb = cfg.audio.filterbank()?;
    let mut records = Vec::new();
    for path in collect_wavs(inputs)? {
        let (wave, rate) = load_wav(&path)?;
        if rate != cfg.audio.sample_rate {
            return Err(Error::Config(format!("{}: {rate} Hz, configured {} Hz", path.display(), cfg.audio.sample_rate)));
        }
        records.push(RankRecord { name: stem(&path)?, delta: rank_delta(&wave, &cfg.audio.stft, &fb, RANK_TOL)? });
    }
    let deltas: Vec<i64> = records.iter().map(|r| r.delta).collect();
    let hist = histogram(&deltas)?;
    write_text(&out.join("rank_histogram.csv"), &histogram_csv(&hist))?;
    let mut per_file = String::from("file,delta\n");
    for r in &records {
        per_file.push_str(&format!("{},{}\n", r.name, r.delta));
    }
    write_text(&out.join("rank_values.csv"), &per_file)?;
    let (min, max, mean) = summary(&deltas)?;
    eprintln!("{} files, rank difference min {min} max {max} mean {mean:.3}", records.len());
    Ok(())
}

fn mel(shared: &Shared, inputs: &[PathBuf]) -> Result<()> {
    let cfg = shared.run_config(None)?;
    let out = shared.out_dir()?;
    let feat = crate::data::Featurizer::new(&cfg.audio)?;
    for path in collect_wavs(inputs)? {
        let (wave, rate) = load_wav(&path)?;
        if rate != cfg.audio.sample_rate {
            return Err(Error::Config(format!("{}: {rate} Hz, configured {} Hz", path.display(), cfg.audio.sample_rate)));
        }
        save_mel(out.join(format!("{}.mel", stem(&path)?)), &feat.analyse(&wave)?.mel)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let s = &cli.shared;
    match &cli.command {
        Command::Train { inputs, manifest, steps, resume } => train(s, inputs, manifest.as_deref(), *steps, *resume),
        Command::Distill { inputs, teacher, manifest, steps, lr, resume } => {
            distill_cmd(s, inputs, teacher, manifest.as_deref(), *steps, *lr, *resume)
        }
        Command::Infer { inputs, checkpoint, nfe, sampler, schedule, pcm16 } => {
            infer(s, inputs, checkpoint, *nfe, *sampler, *schedule, *pcm16)
        }
        Command::Eval { reference, generated } => eval(s, reference, generated),
        Command::RankAnalysis { inputs } => rank_analysis(s, inputs),
        Command::Mel { inputs } => mel(s, inputs),
    }
}
