use har_core::daqsim::{
    gen_dataset, modalities, physical_sensors, start_sync, stream_frames, Align, DaqEvent, GenConfig, Interp, Recording,
    Replay, SensorSpec, SourceConfig, TimedFrame, WindowConfig,
};
use har_core::netgraph::{ConvDim, Matrix};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn noise_sources(sensors: &[SensorSpec], seed: u64, jitter_ppm: f64) -> Vec<SourceConfig> {
    // each source replays its own synthetic stream
    let cfg = GenConfig {
        classes: 2,
        n_per_class: 1,
        segment_ns: 600_000_000_000,
        informative: vec![false; sensors.len()],
        noise: 0.0,
        seed,
    };
    let rec = gen_dataset(sensors, &cfg).unwrap();
    rec.streams
        .into_iter()
        .zip(sensors)
        .map(|(st, s)| SourceConfig::new(s.clone(), Replay::new(st).unwrap()).with_jitter(jitter_ppm))
        .collect()
}

fn cheap_sensors() -> Vec<SensorSpec> {
    physical_sensors()
        .into_iter()
        .map(|mut s| {
            s.channels = s.channels.min(4);
            s
        })
        .collect()
}

#[test]
fn conservation_over_ten_minutes_with_the_full_catalog() {
    let sensors = physical_sensors();
    let sources = sensors
        .iter()
        .map(|s| {
            let v = vec![s.min; s.channels];
            SourceConfig::new(s.clone(), har_core::daqsim::Constant(v))
        })
        .collect();
    let mut session = start_sync(sources, 3).unwrap();
    let cfg = WindowConfig::from_timesteps(20, 119.0);
    let ten_min = 600_000_000_000;
    let mut frames = 0;
    let sum = session.run(&cfg, ten_min, |_| frames += 1).unwrap();
    for (s, st) in sensors.iter().zip(&sum.stats) {
        assert!(st.conserved(), "{}: {st:?}", s.name);
        assert_eq!(st.produced, (600.0 * s.rate_hz).round() as u64, "{}", s.name);
        assert_eq!(st.overflow, 0);
    }
    assert_eq!(frames, ten_min / cfg.step_ns);
}

#[test]
fn conservation_holds_under_overflow_too() {
    let sensors = cheap_sensors();
    let mut session = start_sync(noise_sources(&sensors, 1, 0.0), 1).unwrap();
    let mut cfg = WindowConfig::from_timesteps(20, 119.0);
    cfg.fifo_slack = 0.3;
    let (_, sum) = stream_frames(&mut session, &cfg, 20_000_000_000).unwrap();
    assert!(sum.stats.iter().any(|s| s.overflow > 0));
    for st in &sum.stats {
        assert!(st.conserved(), "{st:?}");
    }
    let named = sum.events.iter().filter(|e| matches!(e, DaqEvent::Overflow { .. })).count() as u64;
    assert_eq!(named, sum.stats.iter().map(|s| s.overflow).sum::<u64>());
}

fn check_alignment(sensors: &[SensorSpec], frames: &[TimedFrame], cfg: &WindowConfig) {
    let slowest = sensors.iter().map(|s| s.period_ns()).fold(0.0, f64::max);
    for f in frames {
        assert_eq!(f.end_ns - f.start_ns, cfg.window_ns);
        let mut last_rows = Vec::new();
        for ((s, w), rt) in sensors.iter().zip(&f.windows).zip(&f.row_times) {
            assert_eq!((w.rows(), w.cols()), (cfg.rows_for(s.rate_hz), s.channels));
            let last = *rt.last().unwrap();
            assert!(last < f.end_ns);
            // native rows lie inside the window once the stream is warm
            if matches!(cfg.align, Align::Native) && f.index > 0 {
                assert!(rt[0] + s.period_ns().ceil() as u64 >= f.start_ns, "{} row {}", s.name, rt[0]);
            }
            last_rows.push(last);
        }
        let skew = last_rows.iter().max().unwrap() - last_rows.iter().min().unwrap();
        assert!(skew as f64 <= slowest + 1.0, "frame {} skew {skew}", f.index);
    }
}

#[test]
fn frames_are_aligned_across_sensors() {
    let sensors = cheap_sensors();
    let mut session = start_sync(noise_sources(&sensors, 2, 0.0), 2).unwrap();
    let cfg = WindowConfig {
        step_ns: 100_000_000,
        ..WindowConfig::from_timesteps(40, 119.0)
    };
    let (frames, _) = stream_frames(&mut session, &cfg, 10_000_000_000).unwrap();
    assert!(frames.len() > 90);
    check_alignment(&sensors, &frames, &cfg);
}

#[test]
fn jittered_sources_still_give_full_frames() {
    let sensors = cheap_sensors();
    let mut session = start_sync(noise_sources(&sensors, 4, 100.0), 4).unwrap();
    let cfg = WindowConfig::from_timesteps(20, 119.0);
    let (frames, sum) = stream_frames(&mut session, &cfg, 30_000_000_000).unwrap();
    assert_eq!(frames.len() as u64, 30_000_000_000 / cfg.step_ns);
    check_alignment(&sensors, &frames, &cfg);
    for st in &sum.stats {
        assert!(st.conserved());
        assert_eq!(st.overflow, 0);
    }
}

fn run_bytes(seed: u64) -> Vec<u8> {
    let sensors = cheap_sensors();
    let mut session = start_sync(noise_sources(&sensors, seed, 50.0), seed).unwrap();
    let cfg = WindowConfig {
        step_ns: 50_000_000,
        ..WindowConfig::from_timesteps(20, 119.0)
    };
    let (frames, sum) = stream_frames(&mut session, &cfg, 5_000_000_000).unwrap();
    let mut out = Vec::new();
    for f in frames {
        out.extend(f.start_ns.to_le_bytes());
        for (w, rt) in f.windows.iter().zip(&f.row_times) {
            w.data().iter().for_each(|v| out.extend(v.to_le_bytes()));
            rt.iter().for_each(|t| out.extend(t.to_le_bytes()));
        }
    }
    out.extend(serde_json::to_vec(&sum).unwrap());
    out
}

#[test]
fn identical_inputs_give_identical_frame_bytes() {
    assert_eq!(run_bytes(8), run_bytes(8));
    assert_ne!(run_bytes(8), run_bytes(9));
}

#[test]
fn replaying_a_recording_matches_offline_windows() {
    let sensors = vec![modalities()[4].clone(), modalities()[1].clone(), modalities()[5].clone()];
    let cfg = GenConfig {
        classes: 3,
        n_per_class: 3,
        segment_ns: 3_000_000_000,
        informative: vec![true, true, false],
        noise: 0.1,
        seed: 12,
    };
    let rec = gen_dataset(&sensors, &cfg).unwrap();
    for wcfg in [
        WindowConfig::from_timesteps(20, 119.0),
        WindowConfig {
            step_ns: 1_000_000_000,
            align: Align::Common {
                rate_hz: 6.0,
                method: Interp::Linear,
            },
            ..WindowConfig::from_timesteps(20, 6.0)
        },
    ] {
        let offline = rec.frames(&wcfg).unwrap();
        let sources = rec
            .streams
            .iter()
            .zip(&sensors)
            .map(|(st, s)| SourceConfig::new(s.clone(), Replay::new(st.clone()).unwrap()))
            .collect();
        let mut session = start_sync(sources, 0).unwrap();
        let (live, _) = stream_frames(&mut session, &wcfg, rec.duration_ns()).unwrap();
        assert_eq!(live.len(), offline.len());
        for (l, (start, w)) in live.iter().zip(&offline) {
            assert_eq!(l.start_ns, *start);
            assert_eq!(&l.windows, w);
        }
    }
}

/// Per-channel summary statistics.
fn features(windows: &[Matrix]) -> Vec<f64> {
    let mut f = Vec::new();
    for m in windows {
        let n = m.rows() as f64;
        for c in 0..m.cols() {
            let col: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let tv = col.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (n - 1.0);
            f.extend([mean, var.sqrt(), tv]);
        }
    }
    f
}

#[test]
fn noiseless_informative_modality_is_centroid_separable() {
    let s = SensorSpec::new("probe", 3, 50.0, ConvDim::D1, -1.0, 1.0);
    let cfg = GenConfig {
        classes: 5,
        n_per_class: 12,
        segment_ns: 4_000_000_000,
        informative: vec![true],
        noise: 0.0,
        seed: 31,
    };
    let rec = gen_dataset(&[s], &cfg).unwrap();
    let wcfg = WindowConfig::from_timesteps(200, 50.0);
    let lw = rec.windows(&wcfg).unwrap();
    assert_eq!(lw.len(), 60);
    let feats: Vec<(Vec<f64>, usize)> = lw.iter().map(|w| (features(&w.windows), w.label)).collect();
    let dim = feats[0].0.len();
    let mut centroids = vec![vec![0.0; dim]; cfg.classes];
    for (f, l) in &feats {
        for (c, v) in centroids[*l].iter_mut().zip(f) {
            *c += v / cfg.n_per_class as f64;
        }
    }
    for (f, l) in &feats {
        let d = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..cfg.classes).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
        assert_eq!(best, *l);
    }
}

/// Welch's two-sample t-test, two-sided p-value.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let v = |x: &[f64], mu: f64| x.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (m(a), m(b));
    let (sa, sb) = (v(a, ma) / a.len() as f64, v(b, mb) / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
}

#[test]
fn uninformative_modality_has_no_class_mean_difference() {
    let sensors = vec![
        SensorSpec::new("signal", 1, 20.0, ConvDim::D1, -1.0, 1.0),
        SensorSpec::new("idle", 2, 20.0, ConvDim::D1, -1.0, 1.0),
    ];
    let cfg = GenConfig {
        classes: 2,
        n_per_class: 500,
        segment_ns: 1_000_000_000,
        informative: vec![true, false],
        noise: 0.1,
        seed: 5,
    };
    let rec: Recording = gen_dataset(&sensors, &cfg).unwrap();
    let lw = rec.windows(&WindowConfig::from_timesteps(20, 20.0)).unwrap();
    let mean_of = |w: &Matrix, c: usize| (0..w.rows()).map(|r| w.get(r, c)).sum::<f64>() / w.rows() as f64;
    for c in 0..2 {
        let by_class = |label| -> Vec<f64> { lw.iter().filter(|w| w.label == label).map(|w| mean_of(&w.windows[1], c)).collect() };
        let (a, b) = (by_class(0), by_class(1));
        assert_eq!((a.len(), b.len()), (500, 500));
        let p = welch_p(&a, &b);
        assert!(p > 0.01, "channel {c}: p = {p}");
    }
    // the informative sensor, by contrast, separates the classes
    let by_class = |label| -> Vec<f64> { lw.iter().filter(|w| w.label == label).map(|w| mean_of(&w.windows[0], 0)).collect() };
    assert!(welch_p(&by_class(0), &by_class(1)) < 1e-6);
}
