use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::window::{assemble, WindowConfig};
use super::{DaqError, SampleStream, SensorSpec};
use crate::netgraph::Matrix;
use crate::rng::{indexed_substream, substream, Stream};
use crate::schema::{self, Versioned};

/// Noise standard deviation of a modality that carries no class signal.
pub const UNINFORMATIVE_STD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub classes: usize,
    /// Activity segments recorded per class.
    pub n_per_class: usize,
    pub segment_ns: u64,
    /// Per sensor: does it carry class-dependent signal?
    pub informative: Vec<bool>,
    /// Standard deviation of the additive noise on informative sensors, in
    /// units of half the sensor's value range.
    pub noise: f64,
    pub seed: u64,
}

/// One contiguous stretch of a single activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// Per-sensor raw windows of one frame plus its activity label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub start_ns: u64,
    pub label: usize,
    pub windows: Vec<Matrix>,
}

/// A labelled multi-sensor recording on one shared timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sensors: Vec<SensorSpec>,
    pub config: GenConfig,
    pub segments: Vec<Segment>,
    pub streams: Vec<SampleStream>,
    /// Free-form record of how the recording was produced.
    pub provenance: serde_json::Value,
}

struct ClassPattern {
    freq: f64,
    /// Indexed `[channel]`.
    offset: Vec<f64>,
    amp: Vec<f64>,
    phase: Vec<f64>,
}

fn class_frequency(c: usize) -> f64 {
    0.2 + 0.25 * c as f64
}

/// Synthesize a labelled recording. Segments of every class appear in a
/// seed-shuffled order; informative sensors follow a class-specific
/// sinusoid per channel, the others are pure noise.
pub fn gen_dataset(sensors: &[SensorSpec], cfg: &GenConfig) -> Result<Recording, DaqError> {
    if cfg.classes < 2 {
        return Err(DaqError::Gen(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.n_per_class == 0 {
        return Err(DaqError::Gen("n_per_class must be positive".into()));
    }
    if cfg.segment_ns == 0 {
        return Err(DaqError::Gen("segment duration must be positive".into()));
    }
    if sensors.is_empty() {
        return Err(DaqError::NoSources);
    }
    if cfg.informative.len() != sensors.len() {
        return Err(DaqError::Gen(format!(
            "informative map has {} entries for {} sensors",
            cfg.informative.len(),
            sensors.len()
        )));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(DaqError::Gen(format!("noise level {}", cfg.noise)));
    }
    for s in sensors {
        s.validate()?;
    }

    let mut rng = substream(cfg.seed, Stream::DataGen);
    let mut labels: Vec<usize> = (0..cfg.classes).flat_map(|c| std::iter::repeat_n(c, cfg.n_per_class)).collect();
    labels.shuffle(&mut rng);
    let segments: Vec<Segment> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Segment {
            label,
            start_ns: i as u64 * cfg.segment_ns,
            end_ns: (i as u64 + 1) * cfg.segment_ns,
        })
        .collect();
    let seg_phase: Vec<f64> = segments.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    // [sensor][class]
    let patterns: Vec<Vec<ClassPattern>> = sensors
        .iter()
        .map(|s| {
            (0..cfg.classes)
                .map(|c| ClassPattern {
                    freq: class_frequency(c),
                    offset: (0..s.channels).map(|_| rng.random_range(-0.5..0.5)).collect(),
                    amp: (0..s.channels).map(|_| rng.random_range(0.1..0.4)).collect(),
                    phase: (0..s.channels).map(|_| rng.random_range(0.0..TAU)).collect(),
                })
                .collect()
        })
        .collect();

    let total = segments.len() as u64 * cfg.segment_ns;
    let mut streams = Vec::with_capacity(sensors.len());
    for (i, s) in sensors.iter().enumerate() {
        let mut noise_rng = indexed_substream(cfg.seed, Stream::Sampling, i as u64);
        let (mid, half) = ((s.max + s.min) / 2.0, (s.max - s.min) / 2.0);
        let mut stream = SampleStream::new(s.channels);
        let mut row = vec![0.0; s.channels];
        for k in 0u64.. {
            let t = (k as f64 * 1e9 / s.rate_hz).round() as u64;
            if t >= total {
                break;
            }
            let seg = (t / cfg.segment_ns) as usize;
            let secs = t as f64 / 1e9;
            let p = &patterns[i][segments[seg].label];
            for (ch, v) in row.iter_mut().enumerate() {
                let n: f64 = StandardNormal.sample(&mut noise_rng);
                let x = if cfg.informative[i] {
                    p.offset[ch] + p.amp[ch] * (TAU * p.freq * secs + p.phase[ch] + seg_phase[seg]).sin() + cfg.noise * n
                } else {
                    UNINFORMATIVE_STD * n
                };
                *v = mid + half * x;
            }
            stream.push(t, &row);
        }
        streams.push(stream);
    }
    Ok(Recording {
        sensors: sensors.to_vec(),
        config: cfg.clone(),
        segments,
        streams,
        provenance: serde_json::Value::Null,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: GenConfig,
    sensors: Vec<SensorSpec>,
    files: Vec<String>,
    segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    provenance: serde_json::Value,
}

impl Versioned for Manifest {
    const FORMAT: &'static str = "har-dataset";
    const VERSION: u32 = 1;
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DaqError + '_ {
    move |source| DaqError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Recording {
    pub fn duration_ns(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.end_ns)
    }

    /// Label of the segment containing `[start, end)`, or `None` when the
    /// interval straddles a segment boundary.
    pub fn label_at(&self, start: u64, end: u64) -> Option<usize> {
        let seg = self.config.segment_ns;
        let i = (start / seg) as usize;
        (end <= (i as u64 + 1) * seg).then(|| self.segments.get(i).map(|s| s.label)).flatten()
    }

    /// Raw windows of every frame of `cfg` over the recording, in frame
    /// order. The value at each position matches what a live session would
    /// assemble from the same samples.
    pub fn frames(&self, cfg: &WindowConfig) -> Result<Vec<(u64, Vec<Matrix>)>, DaqError> {
        cfg.validate(&self.sensors)?;
        let mut out = Vec::new();
        let total = self.duration_ns();
        let mut k = 0u64;
        while k * cfg.step_ns + cfg.window_ns <= total {
            let start = k * cfg.step_ns;
            let end = start + cfg.window_ns;
            let windows = self
                .sensors
                .iter()
                .zip(&self.streams)
                .map(|(s, st)| {
                    let lo = st.timestamps.partition_point(|&t| t < start);
                    let prev = lo.checked_sub(1).map(|j| (st.timestamps[j], st.row(j)));
                    assemble(&st.timestamps, &st.values, st.channels, prev, start, end, cfg, s.rate_hz).data
                })
                .collect();
            out.push((start, windows));
            k += 1;
        }
        Ok(out)
    }

    /// Frames lying entirely inside one activity segment, with its label.
    pub fn windows(&self, cfg: &WindowConfig) -> Result<Vec<LabeledWindow>, DaqError> {
        Ok(self
            .frames(cfg)?
            .into_iter()
            .filter_map(|(start_ns, windows)| {
                self.label_at(start_ns, start_ns + cfg.window_ns).map(|label| LabeledWindow {
                    start_ns,
                    label,
                    windows,
                })
            })
            .collect())
    }

    /// Write `manifest.json` plus one `<slug>.csv` per sensor into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DaqError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files: Vec<String> = self.sensors.iter().map(|s| format!("{}.csv", s.slug())).collect();
        for ((s, st), f) in self.sensors.iter().zip(&self.streams).zip(&files) {
            let path = dir.join(f);
            let mut w = csv::Writer::from_path(&path).map_err(|e| DaqError::Csv(format!("{}: {e}", path.display())))?;
            let csv_err = |e: csv::Error| DaqError::Csv(format!("{}: {e}", path.display()));
            let mut header = vec!["timestamp_ns".to_string()];
            header.extend((0..s.channels).map(|c| format!("ch{c}")));
            w.write_record(&header).map_err(csv_err)?;
            let mut rec = Vec::with_capacity(s.channels + 1);
            for (i, t) in st.timestamps.iter().enumerate() {
                rec.clear();
                rec.push(t.to_string());
                rec.extend(st.row(i).iter().map(|v| format!("{v}")));
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush().map_err(io_err(&path))?;
        }
        let m = Manifest {
            format: Manifest::FORMAT.into(),
            version: Manifest::VERSION,
            config: self.config.clone(),
            sensors: self.sensors.clone(),
            files,
            segments: self.segments.clone(),
            provenance: self.provenance.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, schema::to_json(&m)?).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, DaqError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = schema::from_json(&text)?;
        if m.files.len() != m.sensors.len() {
            return Err(DaqError::Csv(format!(
                "manifest lists {} files for {} sensors",
                m.files.len(),
                m.sensors.len()
            )));
        }
        let mut streams = Vec::with_capacity(m.sensors.len());
        for (s, f) in m.sensors.iter().zip(&m.files) {
            let path = dir.join(f);
            let bad = |what: String| DaqError::Csv(format!("{}: {what}", path.display()));
            let mut r = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
            let mut st = SampleStream::new(s.channels);
            let mut row = vec![0.0; s.channels];
            for (line, rec) in r.records().enumerate() {
                let rec = rec.map_err(|e| bad(e.to_string()))?;
                if rec.len() != s.channels + 1 {
                    return Err(bad(format!("row {line} has {} fields", rec.len())));
                }
                let t: u64 = rec[0].parse().map_err(|e| bad(format!("row {line}: {e}")))?;
                for (v, field) in row.iter_mut().zip(rec.iter().skip(1)) {
                    *v = field.parse().map_err(|e| bad(format!("row {line}: {e}")))?;
                }
                st.push(t, &row);
            }
            streams.push(st);
        }
        Ok(Self {
            sensors: m.sensors,
            config: m.config,
            segments: m.segments,
            streams,
            provenance: m.provenance,
        })
    }
}
