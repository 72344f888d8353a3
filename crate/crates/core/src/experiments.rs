//! End-to-end desk-scale runs: corpus -> latent pairs -> training ->
//! evaluation -> reports, driven by a single manifest.
//!
//! Output layout under `output_dir`:
//! `reports/` (JSON, table text, loss traces), `checkpoints/` (trained
//! models and, when trained here, the autoencoder) and `sweeps/` (the
//! condition interpolation scatter and its summary).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioBuffer};
use crate::autoencoder::{train_toy_vae, Autoencoder, ToyVae, ToyVaeConfig, VaeTrainConfig};
use crate::checkpoint::{spec_hash, Checkpoint};
use crate::discriminator::DiscriminatorSpec;
use crate::error::{Error, Result};
use crate::evaluation::{
    banded_metrics, clip_prior_draw, emit_report, interpolation_sweep, stereo_metrics, sweep_csv, BandedMetrics,
    EvalReport, ReportFiles, ReportKind, ReportRow, StereoMetrics, SweepResult,
};
use crate::latent::{split_streams, stack_streams};
use crate::network::{count_flops, ConditionVector, ConditioningEncoderSpec, LatentPredictor, ModelSpec};
use crate::signal::{chunk_audio, downmix, BandSplitConfig};
use crate::spectral::{MelDistanceConfig, SpectralMetrics, StftDistanceConfig};
use crate::synth::{mono_corpus, panned_corpus, SynthConfig};
use crate::training::{
    degrade_bandwidth, make_bwe_pair, make_m2s_pair, BweTrainer, M2sTrainer, StepLog, Task, TrainingConfig, TrainingPair,
};

pub const ROW_VAE: &str = "VAE rec.";
pub const ROW_UNPROCESSED: &str = "Unprocessed input";
pub const ROW_L1: &str = "L1";
pub const ROW_L1_DISC: &str = "L1 + Disc";
pub const ROW_RAND_C: &str = "Rand c";
pub const ROW_ORACLE_C: &str = "Oracle c";

/// Where clips come from. WAV directories take precedence over the
/// generator; files are read in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Training clips (its `clips` and `seed` apply to the training set).
    pub synth: SynthConfig,
    pub test_clips: usize,
    pub test_seed: u64,
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
}

/// A frozen autoencoder checkpoint, or the recipe to train the toy one
/// on a separate synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSource {
    pub checkpoint: Option<PathBuf>,
    pub config: ToyVaeConfig,
    pub train: VaeTrainConfig,
    pub corpus: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub stft: StftDistanceConfig,
    pub mel: MelDistanceConfig,
    /// `None` splits at a quarter of the sample rate.
    pub band_split: Option<BandSplitConfig>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            stft: StftDistanceConfig::default(),
            mel: MelDistanceConfig::default(),
            band_split: None,
        }
    }
}

/// A comparison system run outside this crate: its outputs are read from
/// `dir/clip_NNNN.wav` (held-out clip order); without a directory the row is
/// a placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRow {
    pub name: String,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub id: String,
    pub task: Task,
    pub corpus: CorpusSpec,
    pub autoencoder: AutoencoderSource,
    pub model: ModelSpec,
    pub discriminator: Option<DiscriminatorSpec>,
    pub encoder: Option<ConditioningEncoderSpec>,
    /// Its `seed` is replaced by the manifest seed.
    pub training: TrainingConfig,
    pub metrics: MetricSpec,
    pub sweep_lambdas: Vec<f64>,
    pub external: Vec<ExternalRow>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn tiny_vae_source() -> AutoencoderSource {
    AutoencoderSource {
        checkpoint: None,
        config: ToyVaeConfig::tiny(),
        train: VaeTrainConfig {
            steps: 600,
            ..VaeTrainConfig::default()
        },
        corpus: SynthConfig::tiny(256, 1000),
    }
}

impl ExperimentManifest {
    /// Tiny autoencoder, S-variant module, small discriminator, 8 kHz
    /// synthetic clips.
    pub fn desk_bwe() -> Self {
        let c = ToyVaeConfig::tiny().spec.latent_channels;
        Self {
            id: "desk-bwe".into(),
            task: Task::Bwe,
            corpus: CorpusSpec {
                synth: SynthConfig::tiny(128, 1),
                test_clips: 32,
                test_seed: 2,
                train_dir: None,
                test_dir: None,
            },
            autoencoder: tiny_vae_source(),
            model: ModelSpec::small(c),
            discriminator: Some(DiscriminatorSpec::with_channels(16)),
            encoder: None,
            training: TrainingConfig::desk_bwe(),
            metrics: MetricSpec::default(),
            sweep_lambdas: Vec::new(),
            external: Vec::new(),
            seed: 0,
            output_dir: PathBuf::from("out/desk-bwe"),
        }
    }

    /// Tiny autoencoder, a reduced conditioned upmixer and conditioning
    /// encoder, panned synthetic clips, 64 held-out clips for the sweep.
    pub fn desk_m2s() -> Self {
        let c = ToyVaeConfig::tiny().spec.latent_channels;
        let h = 128;
        Self {
            id: "desk-m2s".into(),
            task: Task::M2s,
            corpus: CorpusSpec {
                synth: SynthConfig::tiny(256, 11),
                test_clips: 64,
                test_seed: 12,
                train_dir: None,
                test_dir: None,
            },
            autoencoder: tiny_vae_source(),
            model: ModelSpec::custom(4, h, c).stereo(h),
            discriminator: None,
            encoder: Some(ConditioningEncoderSpec {
                hidden_dim: h,
                ..ConditioningEncoderSpec::new(c, h)
            }),
            training: TrainingConfig::desk_m2s(),
            metrics: MetricSpec::default(),
            sweep_lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            external: Vec::new(),
            seed: 0,
            output_dir: PathBuf::from("out/desk-m2s"),
        }
    }

    /// Identity of everything that influences the results (the output
    /// directory does not).
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.output_dir = PathBuf::new();
        spec_hash(&m)
    }

    pub fn effective_training(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::invalid("id", "must be a non-empty file-name-safe string"));
        }
        if self.training.task != self.task {
            return Err(Error::invalid("training.task", "differs from the experiment task"));
        }
        self.effective_training().validate()?;
        self.model.validate()?;
        if self.corpus.test_clips == 0 && self.corpus.test_dir.is_none() {
            return Err(Error::EmptyInput("no held-out clips".into()));
        }
        if self.task == Task::M2s {
            if self.encoder.is_none() {
                return Err(Error::Missing("mono-to-stereo needs a conditioning encoder spec".into()));
            }
            if self.sweep_lambdas.len() < 2 {
                return Err(Error::invalid("sweep_lambdas", "need at least two values"));
            }
            if self.sweep_lambdas.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid("sweep_lambdas", "must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }

    pub fn sweeps_dir(&self) -> PathBuf {
        self.output_dir.join("sweeps")
    }
}

pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub files: ReportFiles,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub traces: BTreeMap<String, Vec<StepLog>>,
    pub sweep: Option<SweepResult>,
    /// Per-clip metrics behind each aggregated row.
    pub per_clip_banded: BTreeMap<String, Vec<BandedMetrics>>,
    pub per_clip_stereo: BTreeMap<String, Vec<StereoMetrics>>,
}

fn read_wav_dir(dir: &Path) -> Result<Vec<AudioBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no WAV files in {}", dir.display())));
    }
    paths.iter().map(read_wav).collect()
}

fn to_mono(x: AudioBuffer) -> Result<AudioBuffer> {
    if x.channels() == 1 {
        Ok(x)
    } else {
        downmix(&x)
    }
}

/// Training and held-out clips for a task (mono for bandwidth extension,
/// stereo for upmixing) at the autoencoder's rate.
pub fn load_corpus(task: Task, c: &CorpusSpec, rate: u32) -> Result<(Vec<AudioBuffer>, Vec<AudioBuffer>)> {
    let test_synth = SynthConfig {
        clips: c.test_clips,
        seed: c.test_seed,
        ..c.synth.clone()
    };
    let synth = |cfg: &SynthConfig| -> Result<Vec<AudioBuffer>> {
        match task {
            Task::Bwe => mono_corpus(cfg),
            Task::M2s => Ok(panned_corpus(cfg)?.into_iter().map(|p| p.audio).collect()),
        }
    };
    let from_dir = |dir: &Path| -> Result<Vec<AudioBuffer>> {
        let clips = read_wav_dir(dir)?;
        match task {
            Task::Bwe => clips.into_iter().map(to_mono).collect(),
            Task::M2s => {
                for x in &clips {
                    x.require_stereo("mono-to-stereo corpus")?;
                }
                Ok(clips)
            }
        }
    };
    let train = match &c.train_dir {
        Some(d) => from_dir(d)?,
        None => synth(&c.synth)?,
    };
    let test = match &c.test_dir {
        Some(d) => from_dir(d)?,
        None => synth(&test_synth)?,
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("empty training or held-out corpus".into()));
    }
    if let Some(x) = train.iter().chain(&test).find(|x| x.sample_rate_hz() != rate) {
        return Err(Error::SampleRate {
            expected: rate,
            got: x.sample_rate_hz(),
        });
    }
    Ok((train, test))
}

/// Loads the frozen autoencoder, or trains the toy one and stores it under
/// `checkpoints/vae.ckpt`.
pub fn prepare_autoencoder(m: &ExperimentManifest) -> Result<(ToyVae<f32>, PathBuf)> {
    if let Some(p) = &m.autoencoder.checkpoint {
        let vae = ToyVae::from_checkpoint(&Checkpoint::load(p)?)?;
        return Ok((vae, p.clone()));
    }
    let src = &m.autoencoder;
    info!("training toy autoencoder for {} steps", src.train.steps);
    let corpus = mono_corpus(&src.corpus)?;
    let vae = train_toy_vae(&src.config, &src.train, &corpus)?.model;
    let dir = m.checkpoints_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("vae.ckpt");
    vae.to_checkpoint().save(&path)?;
    Ok((vae, path))
}

/// Cuts clips into `chunk_seconds` pieces (shorter clips are used whole) and
/// encodes each into a training pair.
pub fn make_pairs(task: Task, chunk_seconds: f64, vae: &dyn Autoencoder, clips: &[AudioBuffer]) -> Result<Vec<TrainingPair>> {
    let secs = chunk_seconds;
    let mut pairs = Vec::new();
    for (i, x) in clips.iter().enumerate() {
        let chunks = if x.duration_seconds() + 1e-9 >= secs {
            chunk_audio(x, secs, secs)?
        } else {
            vec![x.clone()]
        };
        for (j, chunk) in chunks.iter().enumerate() {
            let pair = match task {
                Task::Bwe => make_bwe_pair(vae, chunk)?,
                Task::M2s => make_m2s_pair(vae, chunk)?,
            };
            pairs.push(pair.with_source(format!("clip{i}:{j}")));
        }
    }
    Ok(pairs)
}

fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn base_provenance(m: &ExperimentManifest, vae: &dyn Autoencoder) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("manifest_hash".into(), m.hash());
    p.insert("manifest".into(), serde_json::to_string(m).expect("manifest serializes"));
    p.insert("autoencoder_weights".into(), vae.weights_hash());
    p.insert("seed".into(), m.seed.to_string());
    p.insert(
        "metric_conventions".into(),
        "natural log; magnitude floor 1e-5; distances computed per channel then averaged; \
         banded rows filter both signals before measuring; clip means in corpus order"
            .into(),
    );
    p
}

fn save_checkpoint(
    m: &ExperimentManifest,
    name: &str,
    c: &Checkpoint,
    out: &mut BTreeMap<String, PathBuf>,
    prov: &mut BTreeMap<String, String>,
) -> Result<()> {
    let dir = m.checkpoints_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{name}.ckpt"));
    c.save(&path)?;
    prov.insert(format!("checkpoint_{name}"), file_hash(&path)?);
    out.insert(name.to_string(), path);
    Ok(())
}

fn write_traces(m: &ExperimentManifest, traces: &BTreeMap<String, Vec<StepLog>>) -> Result<()> {
    let dir = m.reports_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{}_traces.json", m.id));
    std::fs::write(&path, serde_json::to_string(traces)?).map_err(|e| Error::io(&path, e))
}

fn external_clip(row: &ExternalRow, dir: &Path, i: usize) -> Result<AudioBuffer> {
    let p = dir.join(format!("clip_{i:04}.wav"));
    read_wav(&p).map_err(|e| Error::Missing(format!("external row `{}`: {e}", row.name)))
}

/// Decoded mono prediction trimmed to the reference length.
fn decode_to(vae: &dyn Autoencoder, z: &crate::latent::LatentSequence, len: usize) -> Result<AudioBuffer> {
    Ok(vae.decode(z)?.with_len(len))
}

pub fn run_bwe_experiment(m: &ExperimentManifest, vae: &dyn Autoencoder) -> Result<ExperimentOutcome> {
    m.validate()?;
    if m.task != Task::Bwe {
        return Err(Error::invalid("task", "expected a bandwidth-extension manifest"));
    }
    let rate = vae.spec().sample_rate_hz;
    let metrics = SpectralMetrics::new(rate, &m.metrics.stft, &m.metrics.mel)?;
    let split = m.metrics.band_split.unwrap_or_else(|| BandSplitConfig::half_band(rate));
    let (train, test) = load_corpus(m.task, &m.corpus, rate)?;
    let pairs = make_pairs(m.task, m.training.chunk_seconds, vae, &train)?;
    info!("{}: {} training pairs, {} held-out clips", m.id, pairs.len(), test.len());

    let mut prov = base_provenance(m, vae);
    let mut checkpoints = BTreeMap::new();
    let mut traces = BTreeMap::new();
    let mut cfg = m.effective_training();
    let steps = cfg.total_steps;

    // L1 only
    let mut l1_cfg = cfg.clone();
    l1_cfg.weights.w_adv = 0.0;
    l1_cfg.weights.w_fm = 0.0;
    let mut l1 = BweTrainer::new(l1_cfg, &m.model, None)?;
    traces.insert(ROW_L1.to_string(), l1.fit(&pairs, steps)?);
    save_checkpoint(m, &format!("{}_l1", m.id), &l1.to_checkpoint(), &mut checkpoints, &mut prov)?;

    // L1 + discriminator
    let disc = match &m.discriminator {
        Some(d) => {
            cfg.weights = m.training.weights;
            let mut t = BweTrainer::new(cfg, &m.model, Some(d))?;
            traces.insert(ROW_L1_DISC.to_string(), t.fit(&pairs, steps)?);
            save_checkpoint(m, &format!("{}_disc", m.id), &t.to_checkpoint(), &mut checkpoints, &mut prov)?;
            Some(t)
        }
        None => {
            warn!("no discriminator configured: skipping row `{ROW_L1_DISC}`");
            None
        }
    };
    write_traces(m, &traces)?;

    let models: Vec<(&str, &LatentPredictor<f32>)> = std::iter::once((ROW_L1, &l1.generator))
        .chain(disc.as_ref().map(|t| (ROW_L1_DISC, &t.generator)))
        .collect();
    let mut per_clip: BTreeMap<String, Vec<BandedMetrics>> = BTreeMap::new();
    let mut push = |name: &str, v: BandedMetrics| per_clip.entry(name.to_string()).or_default().push(v);
    for (i, x) in test.iter().enumerate() {
        let n = x.len();
        let degraded = degrade_bandwidth(x)?;
        push(ROW_VAE, banded_metrics(x, &decode_to(vae, &vae.encode(x)?, n)?, &split, &metrics)?);
        push(ROW_UNPROCESSED, banded_metrics(x, &degraded, &split, &metrics)?);
        let z_in = vae.encode(&degraded)?;
        for (name, g) in &models {
            let y = g.predict(&z_in, None)?.into_mono()?;
            push(name, banded_metrics(x, &decode_to(vae, &y, n)?, &split, &metrics)?);
        }
        for row in &m.external {
            if let Some(dir) = &row.dir {
                let y = to_mono(external_clip(row, dir, i)?)?.with_len(n);
                push(&row.name, banded_metrics(x, &y, &split, &metrics)?);
            }
        }
    }

    let gflops = count_flops(&m.model, 1.0, vae.spec().frame_rate_hz()) / 1e9;
    let mut report = EvalReport::new(format!("Bandwidth extension ({})", m.id), ReportKind::Bwe);
    report.rows.push(ReportRow::banded(ROW_VAE, BandedMetrics::mean(&per_clip[ROW_VAE]), None));
    let mut unprocessed = ReportRow::banded(ROW_UNPROCESSED, BandedMetrics::mean(&per_clip[ROW_UNPROCESSED]), None);
    unprocessed.note = Some("sinc-upsampled band-limited input, no latent processing (added degradation floor)".into());
    report.rows.push(unprocessed);
    for row in &m.external {
        match per_clip.get(&row.name) {
            Some(v) => report.rows.push(ReportRow::banded(row.name.clone(), BandedMetrics::mean(v), None)),
            None => report.rows.push(ReportRow::placeholder(
                row.name.clone(),
                "external system: place its outputs as clip_NNNN.wav and set `dir`",
            )),
        }
    }
    report.rows.push(ReportRow::banded(ROW_L1, BandedMetrics::mean(&per_clip[ROW_L1]), Some(gflops)));
    match per_clip.get(ROW_L1_DISC) {
        Some(v) => report.rows.push(ReportRow::banded(ROW_L1_DISC, BandedMetrics::mean(v), Some(gflops))),
        None => report.rows.push(ReportRow::placeholder(ROW_L1_DISC, "skipped: no discriminator configured")),
    }
    prov.insert("band_split".into(), serde_json::to_string(&split)?);
    prov.insert("test_clips".into(), test.len().to_string());
    report.provenance = prov;
    let files = emit_report(&report, m.reports_dir(), &m.id, None)?;
    Ok(ExperimentOutcome {
        report,
        files,
        checkpoints,
        traces,
        sweep: None,
        per_clip_banded: per_clip,
        per_clip_stereo: BTreeMap::new(),
    })
}

fn stereo_from(vae: &dyn Autoencoder, z: &crate::latent::StackedLatent, len: usize) -> Result<AudioBuffer> {
    let (zl, zr) = split_streams(z)?;
    let l = decode_to(vae, &zl, len)?;
    let r = decode_to(vae, &zr, len)?;
    AudioBuffer::stereo(l.channel(0), r.channel(0), l.sample_rate_hz())
}

pub fn run_m2s_experiment(m: &ExperimentManifest, vae: &dyn Autoencoder) -> Result<ExperimentOutcome> {
    m.validate()?;
    if m.task != Task::M2s {
        return Err(Error::invalid("task", "expected a mono-to-stereo manifest"));
    }
    let enc_spec = m.encoder.as_ref().expect("validated");
    let rate = vae.spec().sample_rate_hz;
    let metrics = SpectralMetrics::new(rate, &m.metrics.stft, &m.metrics.mel)?;
    let (train, test) = load_corpus(m.task, &m.corpus, rate)?;
    let pairs = make_pairs(m.task, m.training.chunk_seconds, vae, &train)?;
    info!("{}: {} training pairs, {} held-out clips", m.id, pairs.len(), test.len());

    let mut prov = base_provenance(m, vae);
    let mut checkpoints = BTreeMap::new();
    let mut traces = BTreeMap::new();
    let cfg = m.effective_training();
    let steps = cfg.total_steps;
    let mut trainer = M2sTrainer::new(cfg, &m.model, enc_spec)?;
    traces.insert("m2s".to_string(), trainer.fit(&pairs, steps)?);
    save_checkpoint(m, &format!("{}_m2s", m.id), &trainer.to_checkpoint(), &mut checkpoints, &mut prov)?;
    write_traces(m, &traces)?;
    let model = &trainer.model;
    let dim = m.model.condition_dim;

    let mut per_clip: BTreeMap<String, Vec<StereoMetrics>> = BTreeMap::new();
    let mut push = |name: &str, v: StereoMetrics| per_clip.entry(name.to_string()).or_default().push(v);
    for (i, x) in test.iter().enumerate() {
        let n = x.len();
        let lr = vae.encode_channels(x)?;
        let z_tgt = stack_streams(&lr[0], &lr[1])?;
        push(ROW_VAE, stereo_metrics(x, &stereo_from(vae, &z_tgt, n)?, &metrics)?);
        let z_in = vae.encode(&downmix(x)?)?;
        let prior = clip_prior_draw(m.seed, i, dim)?;
        let oracle = model.encoder.encode(&z_tgt)?.mean_condition()?;
        for (name, c) in [(ROW_RAND_C, &prior), (ROW_ORACLE_C, &oracle)] {
            let y = model.predictor.predict(&z_in, Some(c as &ConditionVector))?.into_stereo()?;
            push(name, stereo_metrics(x, &stereo_from(vae, &y, n)?, &metrics)?);
        }
        for row in &m.external {
            if let Some(dir) = &row.dir {
                let y = external_clip(row, dir, i)?.with_len(n);
                push(&row.name, stereo_metrics(x, &y, &metrics)?);
            }
        }
    }

    let sweep = interpolation_sweep(model, vae, &test, &m.sweep_lambdas, m.seed)?;
    let sweeps = m.sweeps_dir();
    std::fs::create_dir_all(&sweeps).map_err(|e| Error::io(&sweeps, e))?;
    let csv = sweeps.join(format!("{}_sweep.csv", m.id));
    std::fs::write(&csv, sweep_csv(&sweep.points)).map_err(|e| Error::io(&csv, e))?;
    let summary_path = sweeps.join(format!("{}_sweep.json", m.id));
    std::fs::write(&summary_path, serde_json::to_string_pretty(&sweep.summary)?).map_err(|e| Error::io(&summary_path, e))?;

    let mut report = EvalReport::new(format!("Mono to stereo ({})", m.id), ReportKind::M2s);
    for name in [ROW_VAE, ROW_RAND_C, ROW_ORACLE_C] {
        report.rows.push(ReportRow::stereo(name, StereoMetrics::mean(&per_clip[name])));
    }
    for row in &m.external {
        match per_clip.get(&row.name) {
            Some(v) => report.rows.push(ReportRow::stereo(row.name.clone(), StereoMetrics::mean(v))),
            None => report.rows.push(ReportRow::placeholder(
                row.name.clone(),
                "external system: place its outputs as clip_NNNN.wav and set `dir`",
            )),
        }
    }
    report.sweep = Some(sweep.summary.clone());
    prov.insert("test_clips".into(), test.len().to_string());
    prov.insert(
        "sweep_convention".into(),
        "c = (1 - lambda) c0 + lambda mu; mu = posterior mean on the ground truth; c0 one prior draw per clip".into(),
    );
    report.provenance = prov;
    let files = emit_report(&report, m.reports_dir(), &m.id, None)?;
    Ok(ExperimentOutcome {
        report,
        files,
        checkpoints,
        traces,
        sweep: Some(sweep),
        per_clip_banded: BTreeMap::new(),
        per_clip_stereo: per_clip,
    })
}

/// Prepares the autoencoder per the manifest and runs its task.
pub fn run_experiment(m: &ExperimentManifest) -> Result<ExperimentOutcome> {
    m.validate()?;
    let (vae, vae_path) = prepare_autoencoder(m)?;
    let mut out = match m.task {
        Task::Bwe => run_bwe_experiment(m, &vae)?,
        Task::M2s => run_m2s_experiment(m, &vae)?,
    };
    out.report
        .provenance
        .insert("autoencoder_checkpoint".into(), file_hash(&vae_path)?);
    out.files = emit_report(&out.report, m.reports_dir(), &m.id, None)?;
    out.checkpoints.insert("vae".into(), vae_path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_hash_ignores_output_dir() {
        let b = ExperimentManifest::desk_bwe();
        b.validate().unwrap();
        let m = ExperimentManifest::desk_m2s();
        m.validate().unwrap();
        let mut moved = m.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), m.hash());
        let mut reseeded = m.clone();
        reseeded.seed = 5;
        assert_ne!(reseeded.hash(), m.hash());
        let text = crate::config::to_toml(&m).unwrap();
        let back: ExperimentManifest = crate::config::parse(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn invalid_manifests_are_rejected() {
        let mut m = ExperimentManifest::desk_m2s();
        m.sweep_lambdas = vec![0.0, 1.0, 0.5];
        assert!(m.validate().is_err());
        let mut m = ExperimentManifest::desk_m2s();
        m.encoder = None;
        assert!(matches!(m.validate(), Err(Error::Missing(_))));
        let mut m = ExperimentManifest::desk_bwe();
        m.task = Task::M2s;
        assert!(m.validate().is_err());
    }
}
