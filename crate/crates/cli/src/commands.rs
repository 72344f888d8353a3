use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array1;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reencoder_core::audio::{read_wav, write_wav, AudioBuffer, WavFormat};
use reencoder_core::autoencoder::{train_toy_vae, Autoencoder, ToyVae};
use reencoder_core::checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
use reencoder_core::config;
use reencoder_core::evaluation::{
    banded_metrics, emit_report, interpolation_sweep, stereo_metrics, sweep_csv, BandedMetrics, EvalReport, ReportKind,
    ReportRow, StereoMetrics,
};
use reencoder_core::experiments::{self, ExperimentManifest};
use reencoder_core::latent::{
    read_latent_file, split_streams, stack_streams, write_latent_file, LatentFile, LatentSequence, RELT_MAGIC,
};
use reencoder_core::network::{count_flops, count_params, sample_prior, ConditionVector};
use reencoder_core::signal::{downmix, resample_sinc, BandSplitConfig};
use reencoder_core::spectral::{MelDistanceConfig, SpectralMetrics, StftDistanceConfig};
use reencoder_core::synth::{mono_corpus, panned_corpus, SynthConfig};
use reencoder_core::training::{BweTrainer, M2sTrainer, StepLog, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::presets::{experiment_preset, model_preset, train_preset, vae_preset, TrainRun, VaeRun};
use crate::{CliError, ConditionArg, ConfigArgs, TaskArg};

type CliResult<T = ()> = Result<T, CliError>;

/// Preset (or `default`), replaced by `--config` when given, then `--set`
/// overrides. The result is logged.
fn resolve<T: Serialize + DeserializeOwned>(
    args: &ConfigArgs,
    default: Option<&str>,
    preset: impl Fn(&str) -> CliResult<T>,
) -> CliResult<T> {
    let base: T = match (&args.config, args.preset.as_deref().or(default)) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config("--config", format!("cannot read {}: {e}", path.display())))?;
            config::parse(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(CliError::config("--preset", "give --preset or --config")),
    };
    let resolved = config::with_overrides(&base, &args.overrides)?;
    info!("resolved config:\n{}", config::to_toml(&resolved)?);
    Ok(resolved)
}

fn require_artifact(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::new(CliError::ARTIFACT, format!("missing {what}: {}", path.display())))
    }
}

fn load_vae(path: &Path) -> CliResult<ToyVae<f32>> {
    require_artifact(path, "frozen autoencoder checkpoint")?;
    Ok(ToyVae::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require_artifact(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot create {}: {e}", dir.display())))
}

fn wav_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::new(CliError::DATA, format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

fn is_latent_file(path: &Path) -> CliResult<bool> {
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot open {}: {e}", path.display())))?;
    Ok(std::io::Read::read(&mut f, &mut head).map(|n| n == 4 && &head == RELT_MAGIC).unwrap_or(false))
}

fn mono_at_rate(x: AudioBuffer, rate: u32) -> CliResult<AudioBuffer> {
    let x = if x.channels() == 1 { x } else { downmix(&x)? };
    if x.sample_rate_hz() == rate {
        Ok(x)
    } else {
        info!("resampling input from {} Hz to {rate} Hz", x.sample_rate_hz());
        Ok(resample_sinc(&x, rate)?)
    }
}

pub fn train_vae(args: &ConfigArgs, corpus: Option<&Path>, out: &Path) -> CliResult {
    let run: VaeRun = resolve(args, Some("tiny"), vae_preset)?;
    let rate = run.model.spec.sample_rate_hz;
    let clips = match corpus {
        Some(dir) => wav_files(dir)?
            .iter()
            .map(|p| mono_at_rate(read_wav(p)?, rate))
            .collect::<CliResult<Vec<_>>>()?,
        None => mono_corpus(&SynthConfig {
            sample_rate_hz: rate,
            ..run.corpus.clone()
        })?,
    };
    info!("training autoencoder on {} clips for {} steps", clips.len(), run.train.steps);
    let output = train_toy_vae(&run.model, &run.train, &clips)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    output.model.to_checkpoint().save(out)?;
    let trace = out.with_extension("trace.json");
    std::fs::write(&trace, serde_json::to_string(&output.trace).map_err(reencoder_core::error::Error::from)?)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot write {}: {e}", trace.display())))?;
    if let Some(last) = output.trace.last() {
        info!("final reconstruction loss {:.4}", last.reconstruction);
    }
    println!("{}", out.display());
    Ok(())
}

pub fn encode(vae: &Path, input: &Path, output: &Path) -> CliResult {
    let vae = load_vae(vae)?;
    let x = read_wav(input)?;
    let latent: LatentFile = if x.channels() == 2 {
        let z = vae.encode_channels(&x)?;
        stack_streams(&z[0], &z[1])?.into()
    } else {
        vae.encode(&x)?.into()
    };
    write_latent_file(output, &latent)?;
    let (c, t) = match &latent {
        LatentFile::Single(z) => (z.channels(), z.frames()),
        LatentFile::Stacked(z) => (z.channels(), z.frames()),
    };
    println!("channels={c} frames={t}");
    Ok(())
}

pub fn decode(vae: &Path, input: &Path, output: &Path) -> CliResult {
    let vae = load_vae(vae)?;
    let audio = match read_latent_file(input)? {
        LatentFile::Single(z) => vae.decode(&z)?,
        LatentFile::Stacked(z) => {
            let (l, r) = split_streams(&z)?;
            let (l, r) = (vae.decode(&l)?, vae.decode(&r)?);
            AudioBuffer::stereo(l.channel(0), r.channel(0), l.sample_rate_hz())?
        }
    };
    write_wav(output, &audio, WavFormat::Float32)?;
    println!("samples={}", audio.len());
    Ok(())
}

fn append_trace(path: &Path, logs: &[StepLog]) -> CliResult {
    let io = |e: std::io::Error| CliError::new(CliError::DATA, format!("cannot write {}: {e}", path.display()));
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    for l in logs {
        let line = serde_json::to_string(l).map_err(reencoder_core::error::Error::from)?;
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Either trainer behind one loop.
enum Trainer {
    Bwe(Box<BweTrainer>),
    M2s(Box<M2sTrainer>),
}

impl Trainer {
    fn step(&self) -> u64 {
        match self {
            Trainer::Bwe(t) => t.step(),
            Trainer::M2s(t) => t.step(),
        }
    }

    fn fit(&mut self, pairs: &[reencoder_core::training::TrainingPair], steps: usize) -> CliResult<Vec<StepLog>> {
        Ok(match self {
            Trainer::Bwe(t) => t.fit(pairs, steps)?,
            Trainer::M2s(t) => t.fit(pairs, steps)?,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        match self {
            Trainer::Bwe(t) => t.to_checkpoint(),
            Trainer::M2s(t) => t.to_checkpoint(),
        }
    }
}

pub fn train(task: TaskArg, args: &crate::TrainArgs) -> CliResult {
    let (default, task) = match task {
        TaskArg::Bwe => ("desk-bwe", Task::Bwe),
        TaskArg::M2s => ("desk-m2s", Task::M2s),
    };
    let mut run: TrainRun = resolve(&args.cfg, Some(default), train_preset)?;
    if run.training.task != task {
        return Err(CliError::config("training.task", "does not match the subcommand"));
    }
    let vae = load_vae(&args.vae)?;
    let c = vae.spec().latent_channels;
    if run.model.latent_channels_in != c {
        return Err(CliError::new(
            CliError::ARTIFACT,
            format!(
                "model expects {} latent channels, the autoencoder produces {c}",
                run.model.latent_channels_in
            ),
        ));
    }
    if let Some(dir) = &args.corpus {
        run.corpus.train_dir = Some(dir.clone());
    }
    let (clips, _) = experiments::load_corpus(task, &run.corpus, vae.spec().sample_rate_hz)?;
    let pairs = experiments::make_pairs(task, run.training.chunk_seconds, &vae, &clips)?;
    info!("{} training pairs from {} clips", pairs.len(), clips.len());

    let mut trainer = match (&args.resume, task) {
        (Some(p), Task::Bwe) => {
            Trainer::Bwe(Box::new(BweTrainer::resume(&load_checkpoint(p)?, &run.model, run.discriminator.as_ref())?))
        }
        (Some(p), Task::M2s) => {
            let enc = run.encoder.as_ref().ok_or_else(|| CliError::config("encoder", "missing"))?;
            Trainer::M2s(Box::new(M2sTrainer::resume(&load_checkpoint(p)?, &run.model, enc)?))
        }
        (None, Task::Bwe) => Trainer::Bwe(Box::new(BweTrainer::new(
            run.training.clone(),
            &run.model,
            run.discriminator.as_ref(),
        )?)),
        (None, Task::M2s) => {
            let enc = run.encoder.as_ref().ok_or_else(|| CliError::config("encoder", "missing"))?;
            Trainer::M2s(Box::new(M2sTrainer::new(run.training.clone(), &run.model, enc)?))
        }
    };
    ensure_dir(&args.out)?;
    let resolved = config::to_toml(&run)?;
    std::fs::write(args.out.join("config.toml"), resolved)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot write config: {e}")))?;
    let trace = args.out.join("trace.jsonl");
    let total = run.training.total_steps as u64;
    let every = if run.checkpoint_every == 0 {
        u64::MAX
    } else {
        run.checkpoint_every as u64
    };
    while trainer.step() < total {
        let remaining = total - trainer.step();
        let to_boundary = every - trainer.step() % every;
        let n = remaining.min(to_boundary) as usize;
        let logs = trainer.fit(&pairs, n)?;
        append_trace(&trace, &logs)?;
        let k = trainer.step();
        if let Some(l) = logs.last() {
            info!("step {k}: total loss {:.5}", l.report.total);
        }
        if k % every == 0 && k < total {
            trainer.checkpoint().save(args.out.join(format!("step_{k:07}.ckpt")))?;
        }
    }
    let last = args.out.join("final.ckpt");
    trainer.checkpoint().save(&last)?;
    println!("{}", last.display());
    Ok(())
}

pub struct InferArgs {
    pub task: TaskArg,
    pub checkpoint: PathBuf,
    pub vae: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
    pub latent_out: Option<PathBuf>,
    pub condition: ConditionArg,
    pub condition_file: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub seed: Option<u64>,
    pub save_condition: Option<PathBuf>,
}

/// Condition vector file contents.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionJson {
    sample: Vec<f32>,
    mu: Option<Vec<f32>>,
    sigma: Option<Vec<f32>>,
}

/// Mono input latent and the waveform length to restore (when known).
fn input_latent(vae: &dyn Autoencoder, input: &Path) -> CliResult<(LatentSequence, Option<usize>)> {
    if is_latent_file(input)? {
        info!("pipeline: latent input -> predictor -> decoder (encoder skipped)");
        let z = read_latent_file(input)?.into_single()?;
        if z.channels() != vae.spec().latent_channels {
            return Err(CliError::new(
                CliError::DATA,
                format!("latent has {} channels, autoencoder uses {}", z.channels(), vae.spec().latent_channels),
            ));
        }
        Ok((z, None))
    } else {
        info!("pipeline: encoder -> predictor -> decoder");
        let x = mono_at_rate(read_wav(input)?, vae.spec().sample_rate_hz)?;
        Ok((vae.encode(&x)?, Some(x.len())))
    }
}

fn choose_condition(a: &InferArgs, trainer: &M2sTrainer, vae: &dyn Autoencoder) -> CliResult<ConditionVector> {
    let dim = trainer.model.predictor.spec().condition_dim;
    let c = match a.condition {
        ConditionArg::Prior | ConditionArg::Seed => {
            let seed = match (a.condition, a.seed) {
                (_, Some(s)) => s,
                (ConditionArg::Seed, None) => return Err(CliError::config("--seed", "required by --condition seed")),
                _ => rand::random(),
            };
            info!("condition: prior draw with seed {seed}");
            sample_prior(dim, &mut ChaCha8Rng::seed_from_u64(seed))?
        }
        ConditionArg::File => {
            let path = a
                .condition_file
                .as_ref()
                .ok_or_else(|| CliError::config("--condition-file", "required by --condition file"))?;
            require_artifact(path, "condition file")?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new(CliError::DATA, format!("cannot read {}: {e}", path.display())))?;
            let j: ConditionJson = serde_json::from_str(&text)
                .map_err(|e| CliError::new(CliError::ARTIFACT, format!("bad condition file: {e}")))?;
            let h = j.sample.len();
            ConditionVector::new(
                Array1::from(j.mu.unwrap_or_else(|| vec![0.0; h])),
                Array1::from(j.sigma.unwrap_or_else(|| vec![1.0; h])),
                Array1::from(j.sample),
            )?
        }
        ConditionArg::Reference => {
            let path = a
                .reference
                .as_ref()
                .ok_or_else(|| CliError::config("--reference", "required by --condition reference"))?;
            let x = read_wav(path)?;
            let z = vae.encode_channels(&x)?;
            if z.len() != 2 {
                return Err(CliError::new(CliError::DATA, "reference must be stereo"));
            }
            info!("condition: posterior mean of {}", path.display());
            trainer.model.encoder.encode(&stack_streams(&z[0], &z[1])?)?.mean_condition()?
        }
    };
    if c.dim() != dim {
        return Err(CliError::new(
            CliError::ARTIFACT,
            format!("condition has {} dims, model expects {dim}", c.dim()),
        ));
    }
    Ok(c)
}

pub fn infer(a: &InferArgs) -> CliResult {
    let vae = load_vae(&a.vae)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (z, len) = input_latent(&vae, &a.input)?;
    let fit = |x: AudioBuffer| match len {
        Some(n) => x.with_len(n),
        None => x,
    };
    match a.task {
        TaskArg::Bwe => {
            let t = BweTrainer::from_checkpoint(&ckpt)?;
            let y = t.generator.predict(&z, None)?.into_mono()?;
            if let Some(p) = &a.latent_out {
                write_latent_file(p, &y.clone().into())?;
            }
            write_wav(&a.output, &fit(vae.decode(&y)?), WavFormat::Float32)?;
        }
        TaskArg::M2s => {
            let t = M2sTrainer::from_checkpoint(&ckpt)?;
            let c = choose_condition(a, &t, &vae)?;
            if let Some(p) = &a.save_condition {
                let j = ConditionJson {
                    sample: c.sample.to_vec(),
                    mu: Some(c.mu.to_vec()),
                    sigma: Some(c.sigma.to_vec()),
                };
                std::fs::write(p, serde_json::to_string_pretty(&j).map_err(reencoder_core::error::Error::from)?)
                    .map_err(|e| CliError::new(CliError::DATA, format!("cannot write {}: {e}", p.display())))?;
            }
            let y = t.model.predictor.predict(&z, Some(&c))?.into_stereo()?;
            if let Some(p) = &a.latent_out {
                write_latent_file(p, &y.clone().into())?;
            }
            let (l, r) = split_streams(&y)?;
            let (l, r) = (fit(vae.decode(&l)?), fit(vae.decode(&r)?));
            let out = AudioBuffer::stereo(l.channel(0), r.channel(0), l.sample_rate_hz())?;
            write_wav(&a.output, &out, WavFormat::Float32)?;
        }
    }
    println!("{}", a.output.display());
    Ok(())
}

pub fn eval(task: TaskArg, reference: &Path, candidate: &Path, out: &Path, name: &str, cutoff: Option<f64>) -> CliResult {
    let refs = wav_files(reference)?;
    let mut banded = Vec::new();
    let mut stereo = Vec::new();
    let mut metrics: Option<SpectralMetrics> = None;
    for r in &refs {
        let file = r.file_name().expect("listed files have names");
        let c = candidate.join(file);
        if !c.is_file() {
            return Err(CliError::new(CliError::DATA, format!("candidate missing for {}", file.to_string_lossy())));
        }
        let x = read_wav(r)?;
        let y = read_wav(&c)?.with_len(x.len());
        let rate = x.sample_rate_hz();
        let m = match &metrics {
            Some(m) => m,
            None => metrics.insert(SpectralMetrics::new(rate, &StftDistanceConfig::default(), &MelDistanceConfig::default())?),
        };
        match task {
            TaskArg::Bwe => {
                let split = cutoff.map(BandSplitConfig::new).unwrap_or_else(|| BandSplitConfig::half_band(rate));
                banded.push(banded_metrics(&x, &y, &split, m)?);
            }
            TaskArg::M2s => stereo.push(stereo_metrics(&x, &y, m)?),
        }
    }
    let mut report = match task {
        TaskArg::Bwe => {
            let mut r = EvalReport::new(format!("Evaluation ({name})"), ReportKind::Bwe);
            r.rows.push(ReportRow::banded(name, BandedMetrics::mean(&banded), None));
            r
        }
        TaskArg::M2s => {
            let mut r = EvalReport::new(format!("Evaluation ({name})"), ReportKind::M2s);
            r.rows.push(ReportRow::stereo(name, StereoMetrics::mean(&stereo)));
            r
        }
    };
    report.provenance.insert("reference".into(), reference.display().to_string());
    report.provenance.insert("candidate".into(), candidate.display().to_string());
    report.provenance.insert("clips".into(), refs.len().to_string());
    let files = emit_report(&report, out, name, None)?;
    print!("{}", report.table());
    println!("\n{}", files.json.display());
    Ok(())
}

pub fn flops(model: &str, latent_channels: usize, frame_rate: f64, seconds: f64) -> CliResult {
    if !(seconds > 0.0 && frame_rate > 0.0) {
        return Err(CliError::config("--seconds", "seconds and frame rate must be positive"));
    }
    let (spec, enc) = model_preset(model, latent_channels)?;
    let params = count_params(&spec, enc.as_ref());
    let per_second = count_flops(&spec, seconds, frame_rate) / seconds / 1e9;
    println!("model={model} params={params} ({:.2}M)", params as f64 / 1e6);
    println!("gflops_per_second={per_second:.4} (frame rate {frame_rate:.3} Hz, {seconds} s)");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    checkpoint: &Path,
    vae: &Path,
    corpus: Option<&Path>,
    clips: usize,
    corpus_seed: u64,
    lambdas: &[f64],
    seed: u64,
    out: &Path,
) -> CliResult {
    let vae = load_vae(vae)?;
    let t = M2sTrainer::from_checkpoint(&load_checkpoint(checkpoint)?)?;
    let rate = vae.spec().sample_rate_hz;
    let audio: Vec<AudioBuffer> = match corpus {
        Some(dir) => wav_files(dir)?.iter().map(read_wav).collect::<Result<_, _>>()?,
        None => {
            if clips == 0 {
                return Err(CliError::new(CliError::DATA, "empty corpus"));
            }
            let cfg = SynthConfig {
                sample_rate_hz: rate,
                ..SynthConfig::tiny(clips, corpus_seed)
            };
            panned_corpus(&cfg)?.into_iter().map(|p| p.audio).collect()
        }
    };
    let result = interpolation_sweep(&t.model, &vae, &audio, lambdas, seed)?;
    ensure_dir(out)?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::new(CliError::DATA, format!("cannot write {}: {e}", p.display())))
    };
    write("sweep.csv", sweep_csv(&result.points))?;
    write(
        "sweep.json",
        serde_json::to_string_pretty(&result.summary).map_err(reencoder_core::error::Error::from)?,
    )?;
    for c in &result.summary.correlations {
        println!("lambda={:.2} pearson={:.4}", c.lambda, c.pearson);
    }
    println!("trend_rho={:.4} trend_p={:.5}", result.summary.trend_rho, result.summary.trend_p);
    Ok(())
}

pub fn inspect(path: &Path) -> CliResult {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(CliError::DATA, format!("cannot read {}: {e}", path.display())))?;
    if bytes.starts_with(RELT_MAGIC) {
        match LatentFile::from_bytes(&bytes)? {
            LatentFile::Single(z) => println!(
                "latent: streams=1 channels={} frames={} frame_rate_hz={}",
                z.channels(),
                z.frames(),
                z.frame_rate_hz()
            ),
            LatentFile::Stacked(z) => println!(
                "latent: streams={} channels={} frames={} frame_rate_hz={}",
                z.streams(),
                z.channels(),
                z.frames(),
                z.frame_rate_hz()
            ),
        }
    } else if bytes.starts_with(CHECKPOINT_MAGIC) {
        print!("{}", Checkpoint::from_bytes(&bytes)?.manifest());
    } else {
        return Err(CliError::new(CliError::ARTIFACT, "neither a checkpoint nor a latent file"));
    }
    Ok(())
}

pub fn run_experiment(args: &ConfigArgs, out: Option<PathBuf>, vae: Option<PathBuf>) -> CliResult {
    let mut m: ExperimentManifest = resolve(args, None, experiment_preset)?;
    if let Some(o) = out {
        m.output_dir = o;
    }
    if let Some(v) = vae {
        require_artifact(&v, "frozen autoencoder checkpoint")?;
        m.autoencoder.checkpoint = Some(v);
    }
    let outcome = experiments::run_experiment(&m)?;
    print!("{}", outcome.report.table());
    println!("\nreport: {}", outcome.files.json.display());
    Ok(())
}

pub fn show_config(kind: &str, args: &ConfigArgs) -> CliResult {
    let text = match kind {
        "vae" => config::to_toml(&resolve::<VaeRun>(args, Some("tiny"), vae_preset)?)?,
        "train" => config::to_toml(&resolve::<TrainRun>(args, Some("desk-bwe"), train_preset)?)?,
        "experiment" => config::to_toml(&resolve::<ExperimentManifest>(args, Some("desk-bwe"), experiment_preset)?)?,
        other => return Err(CliError::config("kind", format!("unknown config kind `{other}` (vae, train, experiment)"))),
    };
    print!("{text}");
    Ok(())
}
