use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::source::{SampleClock, SourceConfig};
use super::window::{assemble, WindowConfig};
use super::{DaqError, SensorSpec};
use crate::netgraph::Matrix;

/// Bounded data-level FIFO of timestamped channel vectors.
#[derive(Debug, Clone)]
pub struct SensorFifo {
    depth: usize,
    buf: VecDeque<(u64, Vec<f64>)>,
}

impl SensorFifo {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            buf: VecDeque::with_capacity(depth),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn occupancy(&self) -> usize {
        self.buf.len()
    }

    /// Enqueue a sample; a full FIFO rejects it and hands it back.
    pub fn push(&mut self, t: u64, v: Vec<f64>) -> Result<(), (u64, Vec<f64>)> {
        if self.buf.len() >= self.depth {
            return Err((t, v));
        }
        self.buf.push_back((t, v));
        Ok(())
    }

    pub fn pop(&mut self) -> Option<(u64, Vec<f64>)> {
        self.buf.pop_front()
    }
}

/// Something the stream controller had to report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum DaqEvent {
    /// A sample arrived at a full FIFO and was not stored.
    Overflow { sensor: String, t_ns: u64 },
    /// A frame window had fewer samples than rows; the tail holds the last
    /// sample.
    Underfill { sensor: String, frame: u64, missing: usize },
}

/// Per-sensor sample accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorStats {
    pub produced: u64,
    /// Moved from the FIFO into the sensor data RAM.
    pub consumed: u64,
    pub occupancy: u64,
    pub overflow: u64,
}

impl SensorStats {
    pub fn conserved(&self) -> bool {
        self.produced == self.consumed + self.occupancy + self.overflow
    }
}

/// A complete multi-sensor window.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFrame {
    pub index: u64,
    pub start_ns: u64,
    pub end_ns: u64,
    /// Raw (unnormalized) window per sensor.
    pub windows: Vec<Matrix>,
    pub row_times: Vec<Vec<u64>>,
}

struct Channel {
    spec: SensorSpec,
    signal: Box<dyn super::SignalSource>,
    clock: SampleClock,
    fifo: SensorFifo,
    /// Sensor data RAM: samples not yet behind every future window.
    ram_t: VecDeque<u64>,
    ram_v: VecDeque<f64>,
    /// Latest sample that has aged out of the RAM.
    held: Option<(u64, Vec<f64>)>,
    stats: SensorStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub now_ns: u64,
    pub frames: u64,
    pub events: Vec<DaqEvent>,
    pub stats: Vec<SensorStats>,
}

/// Synchronized set of sources driven by one virtual clock.
pub struct Session {
    channels: Vec<Channel>,
    started: bool,
    seed: u64,
    cfg: Option<WindowConfig>,
    next_frame: u64,
    now: u64,
    events: Vec<DaqEvent>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("sensors", &self.sensors().iter().map(|s| &s.name).collect::<Vec<_>>())
            .field("started", &self.started)
            .field("now", &self.now)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Idle session; nothing samples until [`Session::start`].
    pub fn new(sources: Vec<SourceConfig>, seed: u64) -> Result<Self, DaqError> {
        if sources.is_empty() {
            return Err(DaqError::NoSources);
        }
        let channels = sources
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.spec.validate()?;
                Ok(Channel {
                    clock: SampleClock::new(s.spec.rate_hz, s.jitter_ppm, seed, i as u64)?,
                    spec: s.spec,
                    signal: s.signal,
                    fifo: SensorFifo::new(1),
                    ram_t: VecDeque::new(),
                    ram_v: VecDeque::new(),
                    held: None,
                    stats: SensorStats::default(),
                })
            })
            .collect::<Result<_, DaqError>>()?;
        Ok(Self {
            channels,
            started: false,
            seed,
            cfg: None,
            next_frame: 0,
            now: 0,
            events: Vec::new(),
        })
    }

    /// Issue the shared start signal: every source begins at `t = 0`.
    pub fn start(&mut self) -> Result<(), DaqError> {
        if self.started {
            return Err(DaqError::AlreadyStarted);
        }
        self.started = true;
        Ok(())
    }

    pub fn sensors(&self) -> Vec<&SensorSpec> {
        self.channels.iter().map(|c| &c.spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stats(&self) -> Vec<SensorStats> {
        self.channels
            .iter()
            .map(|c| SensorStats {
                occupancy: c.fifo.occupancy() as u64,
                ..c.stats
            })
            .collect()
    }

    fn configure(&mut self, cfg: &WindowConfig) -> Result<(), DaqError> {
        match &self.cfg {
            Some(c) if c == cfg => Ok(()),
            Some(_) => Err(DaqError::Window("window configuration changed mid-session".into())),
            None => {
                let specs: Vec<SensorSpec> = self.channels.iter().map(|c| c.spec.clone()).collect();
                cfg.validate(&specs)?;
                for c in &mut self.channels {
                    c.fifo = SensorFifo::new(cfg.fifo_depth(c.spec.rate_hz));
                }
                self.cfg = Some(*cfg);
                Ok(())
            }
        }
    }

    fn frame_end(cfg: &WindowConfig, k: u64) -> u64 {
        k * cfg.step_ns + cfg.window_ns
    }

    /// Advance virtual time to `until_ns`, handing every completed frame to
    /// `on_frame`. Samples are taken for `t < until_ns`; frames whose window
    /// ends at or before `until_ns` are emitted. At equal times a frame
    /// event runs before sample events, so a sample stamped exactly at a
    /// window's end belongs to the next window.
    pub fn run(
        &mut self,
        cfg: &WindowConfig,
        until_ns: u64,
        mut on_frame: impl FnMut(TimedFrame),
    ) -> Result<RunSummary, DaqError> {
        if !self.started {
            return Err(DaqError::NotStarted);
        }
        self.configure(cfg)?;
        let first_event = self.events.len();
        let mut frames = 0;
        loop {
            let frame_t = Self::frame_end(cfg, self.next_frame);
            // earliest sample event, lowest sensor index on ties
            let next_sample = self
                .channels
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clock.peek().1, i))
                .min();
            match next_sample {
                Some((ts, i)) if ts < frame_t && ts < until_ns => {
                    self.now = ts;
                    self.sample(i);
                }
                _ if frame_t <= until_ns => {
                    self.now = frame_t;
                    let f = self.emit_frame(cfg);
                    frames += 1;
                    on_frame(f);
                }
                _ => break,
            }
        }
        self.now = until_ns.max(self.now);
        Ok(RunSummary {
            now_ns: self.now,
            frames,
            events: self.events[first_event..].to_vec(),
            stats: self.stats(),
        })
    }

    fn sample(&mut self, i: usize) {
        let c = &mut self.channels[i];
        let (k, t) = c.clock.peek();
        let mut v = vec![0.0; c.spec.channels];
        c.signal.sample(k, t, &mut v);
        c.clock.advance();
        c.stats.produced += 1;
        if c.fifo.push(t, v).is_err() {
            c.stats.overflow += 1;
            self.events.push(DaqEvent::Overflow {
                sensor: c.spec.name.clone(),
                t_ns: t,
            });
        }
    }

    fn emit_frame(&mut self, cfg: &WindowConfig) -> TimedFrame {
        let k = self.next_frame;
        let start = k * cfg.step_ns;
        let end = start + cfg.window_ns;
        let next_start = start + cfg.step_ns;
        let mut windows = Vec::with_capacity(self.channels.len());
        let mut row_times = Vec::with_capacity(self.channels.len());
        for c in &mut self.channels {
            let ch = c.spec.channels;
            while let Some((t, v)) = c.fifo.pop() {
                c.ram_t.push_back(t);
                c.ram_v.extend(v);
                c.stats.consumed += 1;
            }
            // age out samples before this window, remembering the newest
            while c.ram_t.front().is_some_and(|&t| t < start) {
                let t = c.ram_t.pop_front().expect("nonempty");
                let v: Vec<f64> = c.ram_v.drain(..ch).collect();
                c.held = Some((t, v));
            }
            let ts = c.ram_t.make_contiguous();
            let vs = c.ram_v.make_contiguous();
            let prev = c.held.as_ref().map(|(t, v)| (*t, v.as_slice()));
            let a = assemble(ts, vs, ch, prev, start, end, cfg, c.spec.rate_hz);
            if a.missing > 0 {
                self.events.push(DaqEvent::Underfill {
                    sensor: c.spec.name.clone(),
                    frame: k,
                    missing: a.missing,
                });
            }
            windows.push(a.data);
            row_times.push(a.row_times);
            // the next window starts later; keep only what it can still use
            while c.ram_t.front().is_some_and(|&t| t < next_start) {
                let t = c.ram_t.pop_front().expect("nonempty");
                let v: Vec<f64> = c.ram_v.drain(..ch).collect();
                c.held = Some((t, v));
            }
        }
        self.next_frame += 1;
        TimedFrame {
            index: k,
            start_ns: start,
            end_ns: end,
            windows,
            row_times,
        }
    }
}

/// Create and start a session in one step.
pub fn start_sync(sources: Vec<SourceConfig>, seed: u64) -> Result<Session, DaqError> {
    let mut s = Session::new(sources, seed)?;
    s.start()?;
    Ok(s)
}

/// Run `session` to `until_ns` and collect every emitted frame.
pub fn stream_frames(
    session: &mut Session,
    cfg: &WindowConfig,
    until_ns: u64,
) -> Result<(Vec<TimedFrame>, RunSummary), DaqError> {
    let mut frames = Vec::new();
    let summary = session.run(cfg, until_ns, |f| frames.push(f))?;
    Ok((frames, summary))
}
