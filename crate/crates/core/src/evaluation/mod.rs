//! Objective evaluation: banded and stereo spectral metrics, the condition
//! interpolation sweep, and report files (JSON, text table, CSV).

mod stats;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::signal::{band_split, to_mid_side, BandSplitConfig};
use crate::spectral::SpectralMetrics;

pub use stats::{ks_p_value, ks_statistic, normal_cdf, pearson, ranks, spearman, spearman_trend, TrendTest};
pub use sweep::{clip_prior_draw, interpolation_sweep, summarize, sweep_csv, LambdaCorrelation, SweepPoint, SweepResult, SweepSummary};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricPair {
    pub stft_d: f64,
    pub mel_d: f64,
}

impl MetricPair {
    pub fn measure(metrics: &SpectralMetrics, reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<Self> {
        Ok(Self {
            stft_d: metrics.stft_distance(reference, estimate)?,
            mel_d: metrics.mel_distance(reference, estimate)?,
        })
    }

    fn finite(&self) -> bool {
        self.stft_d.is_finite() && self.mel_d.is_finite()
    }

    fn mean<'a>(items: impl Iterator<Item = &'a MetricPair>) -> MetricPair {
        let (mut s, mut m, mut n) = (0.0, 0.0, 0usize);
        for p in items {
            s += p.stft_d;
            m += p.mel_d;
            n += 1;
        }
        let n = n.max(1) as f64;
        MetricPair {
            stft_d: s / n,
            mel_d: m / n,
        }
    }
}

/// Full-band metrics plus the same metrics after low- and high-pass filtering
/// both signals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandedMetrics {
    pub full: MetricPair,
    pub low: MetricPair,
    pub high: MetricPair,
}

impl BandedMetrics {
    /// Clip-wise average, summed in input order.
    pub fn mean(items: &[BandedMetrics]) -> BandedMetrics {
        BandedMetrics {
            full: MetricPair::mean(items.iter().map(|m| &m.full)),
            low: MetricPair::mean(items.iter().map(|m| &m.low)),
            high: MetricPair::mean(items.iter().map(|m| &m.high)),
        }
    }

    fn finite(&self) -> bool {
        self.full.finite() && self.low.finite() && self.high.finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StereoMetrics {
    pub left: MetricPair,
    pub right: MetricPair,
    pub mid: MetricPair,
    pub side: MetricPair,
}

impl StereoMetrics {
    pub fn mean(items: &[StereoMetrics]) -> StereoMetrics {
        StereoMetrics {
            left: MetricPair::mean(items.iter().map(|m| &m.left)),
            right: MetricPair::mean(items.iter().map(|m| &m.right)),
            mid: MetricPair::mean(items.iter().map(|m| &m.mid)),
            side: MetricPair::mean(items.iter().map(|m| &m.side)),
        }
    }

    /// Average of the left and right STFT distances.
    pub fn lr_stft(&self) -> f64 {
        0.5 * (self.left.stft_d + self.right.stft_d)
    }

    fn finite(&self) -> bool {
        self.left.finite() && self.right.finite() && self.mid.finite() && self.side.finite()
    }
}

pub fn banded_metrics(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    split: &BandSplitConfig,
    metrics: &SpectralMetrics,
) -> Result<BandedMetrics> {
    let (ref_lo, ref_hi) = band_split(reference, split)?;
    let (est_lo, est_hi) = band_split(estimate, split)?;
    Ok(BandedMetrics {
        full: MetricPair::measure(metrics, reference, estimate)?,
        low: MetricPair::measure(metrics, &ref_lo, &est_lo)?,
        high: MetricPair::measure(metrics, &ref_hi, &est_hi)?,
    })
}

/// Left vs left, right vs right, mid vs mid and side vs side.
pub fn stereo_metrics(reference: &AudioBuffer, estimate: &AudioBuffer, metrics: &SpectralMetrics) -> Result<StereoMetrics> {
    reference.require_stereo("stereo metrics")?;
    estimate.require_stereo("stereo metrics")?;
    let ms_ref = to_mid_side(reference)?;
    let ms_est = to_mid_side(estimate)?;
    let pair = |a: &AudioBuffer, b: &AudioBuffer, c: usize| {
        MetricPair::measure(metrics, &a.channel_buffer(c), &b.channel_buffer(c))
    };
    Ok(StereoMetrics {
        left: pair(reference, estimate, 0)?,
        right: pair(reference, estimate, 1)?,
        mid: pair(&ms_ref, &ms_est, 0)?,
        side: pair(&ms_ref, &ms_est, 1)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Bwe,
    M2s,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub banded: Option<BandedMetrics>,
    pub stereo: Option<StereoMetrics>,
    /// Per second of audio.
    pub gflops: Option<f64>,
    pub note: Option<String>,
}

impl ReportRow {
    pub fn banded(name: impl Into<String>, m: BandedMetrics, gflops: Option<f64>) -> Self {
        Self {
            name: name.into(),
            banded: Some(m),
            stereo: None,
            gflops,
            note: None,
        }
    }

    pub fn stereo(name: impl Into<String>, m: StereoMetrics) -> Self {
        Self {
            name: name.into(),
            banded: None,
            stereo: Some(m),
            gflops: None,
            note: None,
        }
    }

    /// A row whose numbers come from elsewhere (e.g. an external baseline).
    pub fn placeholder(name: impl Into<String>, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            banded: None,
            stereo: None,
            gflops: None,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub title: String,
    pub kind: ReportKind,
    pub rows: Vec<ReportRow>,
    pub sweep: Option<SweepSummary>,
    /// Configs, hashes and conventions the numbers depend on.
    pub provenance: BTreeMap<String, String>,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

impl EvalReport {
    pub fn new(title: impl Into<String>, kind: ReportKind) -> Self {
        Self {
            title: title.into(),
            kind,
            rows: Vec::new(),
            sweep: None,
            provenance: BTreeMap::new(),
        }
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let ok = r.banded.is_none_or(|m| m.finite())
                && r.stereo.is_none_or(|m| m.finite())
                && r.gflops.is_none_or(f64::is_finite);
            if !ok {
                return Err(Error::NonFinite(format!("report row `{}`", r.name)));
            }
        }
        if let Some(s) = &self.sweep {
            if s.correlations.iter().any(|c| !c.pearson.is_finite()) {
                return Err(Error::NonFinite("sweep correlations".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Table in the "full (low / high)" layout for bandwidth extension and
    /// "Left / Right", "Middle / Side" column pairs for stereo.
    pub fn table(&self) -> String {
        let mut s = format!("{}\n\n", self.title);
        match self.kind {
            ReportKind::Bwe => {
                s.push_str("| Method | STFT-D full (low / high) | Mel-D full (low / high) | GFLOPS |\n");
                s.push_str("|---|---|---|---|\n");
                for r in &self.rows {
                    let (st, me) = match r.banded {
                        Some(m) => (
                            format!("{} ({} / {})", fmt3(m.full.stft_d), fmt3(m.low.stft_d), fmt3(m.high.stft_d)),
                            format!("{} ({} / {})", fmt3(m.full.mel_d), fmt3(m.low.mel_d), fmt3(m.high.mel_d)),
                        ),
                        None => ("-".into(), "-".into()),
                    };
                    let g = r.gflops.map_or("-".into(), |g| format!("{g:.2}"));
                    s.push_str(&format!("| {} | {st} | {me} | {g} |\n", r.name));
                }
            }
            ReportKind::M2s => {
                s.push_str("| Method | STFT-D Left / Right | STFT-D Middle / Side | Mel-D Left / Right | Mel-D Middle / Side |\n");
                s.push_str("|---|---|---|---|---|\n");
                for r in &self.rows {
                    let cells = match r.stereo {
                        Some(m) => [
                            format!("{} / {}", fmt3(m.left.stft_d), fmt3(m.right.stft_d)),
                            format!("{} / {}", fmt3(m.mid.stft_d), fmt3(m.side.stft_d)),
                            format!("{} / {}", fmt3(m.left.mel_d), fmt3(m.right.mel_d)),
                            format!("{} / {}", fmt3(m.mid.mel_d), fmt3(m.side.mel_d)),
                        ],
                        None => std::array::from_fn(|_| "-".to_string()),
                    };
                    s.push_str(&format!("| {} | {} |\n", r.name, cells.join(" | ")));
                }
            }
        }
        for r in &self.rows {
            if let Some(n) = &r.note {
                s.push_str(&format!("\n{}: {n}", r.name));
            }
        }
        if let Some(sw) = &self.sweep {
            s.push_str("\n\nCondition interpolation (Pearson r of channel log-energy ratios)\n");
            for c in &sw.correlations {
                s.push_str(&format!("  lambda {:.2}: r = {:.3}\n", c.lambda, c.pearson));
            }
            s.push_str(&format!(
                "  Spearman trend rho = {:.3}, p = {:.4}\n",
                sw.trend_rho, sw.trend_p
            ));
        }
        s
    }
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub table: PathBuf,
    pub scatter: Option<PathBuf>,
}

/// Writes `<stem>.json`, `<stem>.txt` and, for sweeps, `<stem>_sweep.csv`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>, stem: &str, scatter: Option<&[SweepPoint]>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    let table = dir.join(format!("{stem}.txt"));
    std::fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    std::fs::write(&table, report.table()).map_err(|e| Error::io(&table, e))?;
    let scatter = match scatter {
        Some(points) => {
            let p = dir.join(format!("{stem}_sweep.csv"));
            std::fs::write(&p, sweep_csv(points)).map_err(|e| Error::io(&p, e))?;
            Some(p)
        }
        None => None,
    };
    Ok(ReportFiles { json, table, scatter })
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{MelDistanceConfig, StftDistanceConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn metrics() -> SpectralMetrics {
        SpectralMetrics::new(8000, &StftDistanceConfig::default(), &MelDistanceConfig::default()).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn identical_inputs_are_zero() {
        let m = metrics();
        let a = AudioBuffer::from_vec(noise(4000, 1), 8000).unwrap();
        let b = banded_metrics(&a, &a, &BandSplitConfig::half_band(8000), &m).unwrap();
        assert_eq!(b, BandedMetrics::default());
        let st = AudioBuffer::stereo(ndarray::Array1::from(noise(4000, 2)).view(), a.channel(0), 8000).unwrap();
        assert_eq!(stereo_metrics(&st, &st, &m).unwrap(), StereoMetrics::default());
        assert!(stereo_metrics(&a, &a, &m).is_err());
    }

    #[test]
    fn untouched_high_band_scores_near_zero() {
        let m = metrics();
        let split = BandSplitConfig::half_band(8000);
        let a = AudioBuffer::from_vec(noise(8000, 3), 8000).unwrap();
        // Hann-faded tones well inside the low band, so the perturbation has
        // no high-band content (abrupt edges would)
        let tones: Vec<f32> = (0..8000)
            .map(|i| {
                let t = i as f64 / 8000.0;
                let fade = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t).cos();
                let tone = |f: f64| (2.0 * std::f64::consts::PI * f * t).sin();
                (fade * (0.2 * tone(440.0) + 0.1 * tone(1250.0))) as f32
            })
            .collect();
        let b = AudioBuffer::new(a.samples() + &ndarray::Array1::from(tones), 8000).unwrap();
        let r = banded_metrics(&a, &b, &split, &m).unwrap();
        assert!(r.high.stft_d < 0.02 && r.high.mel_d < 0.02, "{r:?}");
        assert!(r.low.stft_d > 10.0 * r.high.stft_d && r.low.mel_d > 10.0 * r.high.mel_d, "{r:?}");
    }

    #[test]
    fn report_round_trip_and_tables() {
        let mut r = EvalReport::new("demo", ReportKind::Bwe);
        let pair = MetricPair {
            stft_d: 0.1234567891,
            mel_d: 1.0 / 3.0,
        };
        r.rows.push(ReportRow::banded(
            "VAE rec.",
            BandedMetrics {
                full: pair,
                low: pair,
                high: pair,
            },
            Some(0.37),
        ));
        r.rows.push(ReportRow::placeholder("External baseline", "ingest WAVs to fill"));
        r.provenance.insert("seed".into(), "0".into());
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let t = r.table();
        assert!(t.contains("STFT-D full (low / high)"));
        assert!(t.contains("0.123 (0.123 / 0.123)"));
        let mut s = EvalReport::new("stereo", ReportKind::M2s);
        s.rows.push(ReportRow::stereo("Oracle c", StereoMetrics::default()));
        assert!(s.table().contains("STFT-D Left / Right | STFT-D Middle / Side"));
        r.rows[0].gflops = Some(f64::NAN);
        assert!(r.to_json().is_err());
    }
}
