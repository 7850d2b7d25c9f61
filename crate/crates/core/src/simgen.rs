//! Synthetic sequences with exact ground-truth flow.
//!
//! A [`SceneSpec`] describes an analytic pattern under rigid motion. Frames
//! are evaluated in closed form at any time, events come from a per-pixel
//! log-intensity threshold model, and ground-truth flow follows directly
//! from the motion.
//!
//! Intensities live in `[0, 1]`; the event model works on `ln(1 + I)`.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{self, Container, ContainerProps, WriteOptions};
use crate::types::{EventStream, FlowField, FlowSequence, GraySequence, SensorProps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Pattern {
    Checkerboard { cell: f64 },
    Sinusoid { period: f64 },
    GaussianBlobs { n: usize, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// Pixels per second.
    Translation { vx: f64, vy: f64 },
    /// Radians per second about the frame centre.
    Rotation { omega: f64 },
}

/// Initial per-pixel reference level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceInit {
    /// Nearest multiple of the positive threshold, so all pixels share one
    /// lattice of levels and events follow material contours.
    #[default]
    Quantized,
    /// The pixel's own initial log intensity.
    FirstFrame,
}

/// Optional non-idealities of the event model; all off by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EventModelOptions {
    pub reference_init: ReferenceInit,
    /// Minimum spacing between events of one pixel, µs; 0 disables.
    pub refractory_us: i64,
    /// Relative standard deviation of per-pixel thresholds; 0 disables.
    pub threshold_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub pattern: Pattern,
    pub motion: Motion,
    /// Seconds.
    pub duration: f64,
    pub sim_rate: f64,
    pub frame_rate: f64,
    pub flow_rate: f64,
    #[serde(default)]
    pub sensor: SensorProps,
    /// Seeds blob placement and threshold noise.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub events: EventModelOptions,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration) {
            return Err(Error::InvalidInput("duration must be > 0".into()));
        }
        if ![self.sim_rate, self.frame_rate, self.flow_rate].into_iter().all(positive) {
            return Err(Error::InvalidInput("rates must be > 0".into()));
        }
        if self.sim_rate < self.frame_rate || self.sim_rate < self.flow_rate {
            return Err(Error::InvalidInput(
                "sim_rate must be at least frame_rate and flow_rate".into(),
            ));
        }
        let ok = match self.pattern {
            Pattern::Checkerboard { cell } => positive(cell),
            Pattern::Sinusoid { period } => positive(period),
            Pattern::GaussianBlobs { n, radius } => n > 0 && positive(radius),
        };
        if !ok {
            return Err(Error::InvalidInput("pattern parameters must be positive".into()));
        }
        if self.events.refractory_us < 0 || !(self.events.threshold_noise >= 0.0) {
            return Err(Error::InvalidInput("event model options must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Timestamps (µs) of `floor(duration * rate) + 1` samples at `rate` Hz.
    fn sample_times(&self, rate: f64) -> Vec<i64> {
        let n = (self.duration * rate + 1e-9).floor() as i64;
        (0..=n).map(|k| (k as f64 * 1e6 / rate).round() as i64).collect()
    }

    pub fn sim_times(&self) -> Vec<i64> {
        self.sample_times(self.sim_rate)
    }

    pub fn gray_times(&self) -> Vec<i64> {
        self.sample_times(self.frame_rate)
    }

    /// Flow interval boundaries.
    pub fn flow_times(&self) -> Vec<i64> {
        self.sample_times(self.flow_rate)
    }
}

/// A spec with its random parts (blob centres) resolved.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    blobs: Vec<(f64, f64)>,
    center: (f64, f64),
}

fn square_wave(x: f64, cell: f64) -> f64 {
    if x.rem_euclid(2.0 * cell) < cell {
        1.0
    } else {
        -1.0
    }
}

/// Antiderivative of the square wave: a continuous triangle wave.
fn square_wave_integral(x: f64, cell: f64) -> f64 {
    let r = x.rem_euclid(2.0 * cell);
    if r < cell {
        r
    } else {
        2.0 * cell - r
    }
}

/// Square wave averaged over the unit pixel centred at `x`.
fn square_wave_box(x: f64, cell: f64) -> f64 {
    square_wave_integral(x + 0.5, cell) - square_wave_integral(x - 0.5, cell)
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let (w, h) = (spec.sensor.width as f64, spec.sensor.height as f64);
        let center = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        let blobs = match spec.pattern {
            Pattern::GaussianBlobs { n, radius } => {
                // cover every pattern coordinate the frame will see
                let pad = 3.0 * radius;
                let (x0, x1, y0, y1) = match spec.motion {
                    Motion::Translation { vx, vy } => {
                        let (dx, dy) = (-vx * spec.duration, -vy * spec.duration);
                        (dx.min(0.0) - pad, w + dx.max(0.0) + pad, dy.min(0.0) - pad, h + dy.max(0.0) + pad)
                    }
                    Motion::Rotation { .. } => {
                        let r = 0.5 * w.hypot(h) + pad;
                        (center.0 - r, center.0 + r, center.1 - r, center.1 + r)
                    }
                };
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let area_ratio = ((x1 - x0) * (y1 - y0)) / (w * h);
                let count = ((n as f64) * area_ratio).ceil() as usize;
                (0..count.max(n))
                    .map(|_| (rng.gen_range(x0..x1), rng.gen_range(y0..y1)))
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            spec: spec.clone(),
            blobs,
            center,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn shape(&self) -> (usize, usize) {
        self.spec.sensor.shape()
    }

    /// Pattern coordinates seen at image position `(x, y)` at time `t` s.
    fn pattern_coords(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        match self.spec.motion {
            Motion::Translation { vx, vy } => (x - vx * t, y - vy * t),
            Motion::Rotation { omega } => {
                let (s, c) = (-omega * t).sin_cos();
                let (dx, dy) = (x - self.center.0, y - self.center.1);
                (
                    self.center.0 + c * dx - s * dy,
                    self.center.1 + s * dx + c * dy,
                )
            }
        }
    }

    fn pattern_at(&self, qx: f64, qy: f64) -> f64 {
        match self.spec.pattern {
            Pattern::Checkerboard { cell } => {
                0.5 + 0.45 * square_wave(qx, cell) * square_wave(qy, cell)
            }
            Pattern::Sinusoid { period } => {
                let k = 2.0 * PI / period;
                0.5 + 0.225 * ((k * qx).sin() + (k * qy).sin())
            }
            Pattern::GaussianBlobs { radius, .. } => {
                let inv = 1.0 / (2.0 * radius * radius);
                let cut = (6.0 * radius).powi(2);
                let sum: f64 = self
                    .blobs
                    .iter()
                    .map(|&(bx, by)| (qx - bx).powi(2) + (qy - by).powi(2))
                    .filter(|&d2| d2 < cut)
                    .map(|d2| (-d2 * inv).exp())
                    .sum();
                0.1 + 0.8 * (1.0 - (-sum).exp())
            }
        }
    }

    /// Point-sampled intensity at a real-valued image position, `t` in
    /// seconds.
    pub fn intensity(&self, t: f64, x: f64, y: f64) -> f64 {
        let (qx, qy) = self.pattern_coords(t, x, y);
        self.pattern_at(qx, qy)
    }

    /// Frame at `t_us`. Checkerboards are pixel-averaged (exactly under
    /// translation, 4×4 supersampled under rotation); smooth patterns are
    /// point-sampled at pixel centres.
    pub fn render(&self, t_us: i64) -> Array2<f64> {
        let t = t_us as f64 * 1e-6;
        let shape = self.shape();
        match (&self.spec.pattern, &self.spec.motion) {
            (Pattern::Checkerboard { cell }, Motion::Translation { vx, vy }) => {
                let cols: Vec<f64> = (0..shape.1)
                    .map(|x| square_wave_box(x as f64 - vx * t, *cell))
                    .collect();
                let rows: Vec<f64> = (0..shape.0)
                    .map(|y| square_wave_box(y as f64 - vy * t, *cell))
                    .collect();
                Array2::from_shape_fn(shape, |(y, x)| 0.5 + 0.45 * cols[x] * rows[y])
            }
            (Pattern::Checkerboard { .. }, Motion::Rotation { .. }) => {
                Array2::from_shape_fn(shape, |(y, x)| {
                    let mut acc = 0.0;
                    for sy in 0..4 {
                        for sx in 0..4 {
                            let ox = (sx as f64 + 0.5) / 4.0 - 0.5;
                            let oy = (sy as f64 + 0.5) / 4.0 - 0.5;
                            acc += self.intensity(t, x as f64 + ox, y as f64 + oy);
                        }
                    }
                    acc / 16.0
                })
            }
            _ => Array2::from_shape_fn(shape, |(y, x)| self.intensity(t, x as f64, y as f64)),
        }
    }

    /// Closed-form forward flow over `[t0_us, t1_us]`.
    pub fn flow(&self, t0_us: i64, t1_us: i64) -> FlowField {
        let dt = (t1_us - t0_us) as f64 * 1e-6;
        let shape = self.shape();
        match self.spec.motion {
            Motion::Translation { vx, vy } => FlowField::constant(shape, vx * dt, vy * dt, t0_us, t1_us),
            Motion::Rotation { omega } => {
                let (s, c) = (omega * dt).sin_cos();
                let (cx, cy) = self.center;
                let u = Array2::from_shape_fn(shape, |(y, x)| {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    c * dx - s * dy - dx
                });
                let v = Array2::from_shape_fn(shape, |(y, x)| {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    s * dx + c * dy - dy
                });
                FlowField { u, v, t0: t0_us, t1: t1_us }
            }
        }
    }

    pub fn flows(&self) -> FlowSequence {
        let times = self.spec.flow_times();
        let fields = times.windows(2).map(|w| self.flow(w[0], w[1])).collect();
        FlowSequence { fields }
    }

    pub fn grays(&self) -> GraySequence {
        let ts = self.spec.gray_times();
        let frames = ts.iter().map(|&t| to_gray8(&self.render(t))).collect();
        GraySequence::new(frames, ts)
    }
}

/// Quantizes `[0, 1]` intensities to 8 bits.
pub fn to_gray8(frame: &Array2<f64>) -> Array2<u8> {
    frame.mapv(|i| (i.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// High-rate frames plus ground-truth flow.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub frames: Vec<Array2<f64>>,
    pub ts: Vec<i64>,
    pub flows: FlowSequence,
}

/// Renders every simulation frame and the ground-truth flow sequence.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    let scene = Scene::new(spec)?;
    let ts = spec.sim_times();
    let frames = ts.iter().map(|&t| scene.render(t)).collect();
    Ok(RenderedScene {
        frames,
        ts,
        flows: scene.flows(),
    })
}

/// Tolerance on threshold crossings, so that an exact multiple of the
/// threshold produces its events despite rounding in `ln`.
const CROSSING_EPS: f64 = 1e-9;

/// Incremental log-intensity event generator. Feed frames in time order
/// with [`EventGenerator::push`], then call [`EventGenerator::finish`].
pub struct EventGenerator {
    shape: (usize, usize),
    l_ref: Array2<f64>,
    l_prev: Array2<f64>,
    t_prev: i64,
    c_pos: Array2<f64>,
    c_neg: Array2<f64>,
    refractory_us: i64,
    last_event: Array2<i64>,
    pending: Vec<(i64, u16, u16, bool)>,
    out: EventStream,
}

fn log_frame(frame: &Array2<f64>) -> Result<Array2<f64>> {
    if frame.iter().any(|&i| !(i >= 0.0) || !i.is_finite()) {
        return Err(Error::InvalidInput("intensities must be finite and >= 0".into()));
    }
    Ok(frame.mapv(|i| (1.0 + i).ln()))
}

impl EventGenerator {
    pub fn new(
        first: &Array2<f64>,
        t0: i64,
        threshold_pos: f64,
        threshold_neg: f64,
        options: EventModelOptions,
        seed: u64,
    ) -> Result<Self> {
        if !(threshold_pos > 0.0 && threshold_neg > 0.0) {
            return Err(Error::InvalidInput("thresholds must be > 0".into()));
        }
        let shape = first.dim();
        if shape.0 > u16::MAX as usize + 1 || shape.1 > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput("frame too large for 16-bit coordinates".into()));
        }
        let l0 = log_frame(first)?;
        let (c_pos, c_neg) = if options.threshold_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7468_7265_7368);
            let normal = Normal::new(1.0, options.threshold_noise)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            let mut draw = |c: f64| {
                Array2::from_shape_simple_fn(shape, || (c * normal.sample(&mut rng)).max(0.01 * c))
            };
            (draw(threshold_pos), draw(threshold_neg))
        } else {
            (
                Array2::from_elem(shape, threshold_pos),
                Array2::from_elem(shape, threshold_neg),
            )
        };
        Ok(Self {
            shape,
            l_ref: match options.reference_init {
                ReferenceInit::Quantized => l0.mapv(|l| threshold_pos * (l / threshold_pos).round()),
                ReferenceInit::FirstFrame => l0.clone(),
            },
            l_prev: l0,
            t_prev: t0,
            c_pos,
            c_neg,
            refractory_us: options.refractory_us,
            last_event: Array2::from_elem(shape, i64::MIN / 2),
            pending: Vec::new(),
            out: EventStream::default(),
        })
    }

    pub fn push(&mut self, frame: &Array2<f64>, t: i64) -> Result<()> {
        if frame.dim() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: frame.dim(),
            });
        }
        if t <= self.t_prev {
            return Err(Error::InvalidInput("frame timestamps must increase".into()));
        }
        let l_next = log_frame(frame)?;
        let (ta, tb) = (self.t_prev as f64, t as f64);
        for ((y, x), &lb) in l_next.indexed_iter() {
            let la = self.l_prev[[y, x]];
            if lb == la {
                continue;
            }
            let up = lb > la;
            let step = if up { self.c_pos[[y, x]] } else { self.c_neg[[y, x]] };
            loop {
                let l_ref = self.l_ref[[y, x]];
                let level = if up { l_ref + step } else { l_ref - step };
                let reached = if up {
                    level <= lb + CROSSING_EPS
                } else {
                    level >= lb - CROSSING_EPS
                };
                if !reached {
                    break;
                }
                self.l_ref[[y, x]] = level;
                let frac = ((level - la) / (lb - la)).clamp(0.0, 1.0);
                let te = (ta + frac * (tb - ta)).round() as i64;
                if self.refractory_us > 0 && te - self.last_event[[y, x]] < self.refractory_us {
                    continue;
                }
                self.last_event[[y, x]] = te;
                self.pending.push((te, y as u16, x as u16, up));
            }
        }
        self.l_prev = l_next;
        self.t_prev = t;

        // events stamped exactly at `t` may tie with the next interval's
        self.pending.sort_unstable();
        let ready = self.pending.partition_point(|e| e.0 < t);
        for (te, y, x, p) in self.pending.drain(..ready) {
            self.out.push(x, y, te, p);
        }
        Ok(())
    }

    pub fn finish(mut self) -> EventStream {
        self.pending.sort_unstable();
        for (te, y, x, p) in self.pending.drain(..) {
            self.out.push(x, y, te, p);
        }
        self.out
    }
}

/// Events from a high-rate frame sequence with ideal thresholds. Output is
/// sorted by timestamp, ties broken by `(y, x, polarity)`.
pub fn generate_events(
    frames: &[Array2<f64>],
    ts: &[i64],
    threshold_pos: f64,
    threshold_neg: f64,
) -> Result<EventStream> {
    generate_events_with(frames, ts, threshold_pos, threshold_neg, EventModelOptions::default(), 0)
}

pub fn generate_events_with(
    frames: &[Array2<f64>],
    ts: &[i64],
    threshold_pos: f64,
    threshold_neg: f64,
    options: EventModelOptions,
    seed: u64,
) -> Result<EventStream> {
    if frames.len() < 2 || frames.len() != ts.len() {
        return Err(Error::InvalidInput(
            "need at least 2 frames with one timestamp each".into(),
        ));
    }
    let mut gen = EventGenerator::new(&frames[0], ts[0], threshold_pos, threshold_neg, options, seed)?;
    for (frame, &t) in frames.iter().zip(ts).skip(1) {
        gen.push(frame, t)?;
    }
    Ok(gen.finish())
}

/// Renders, simulates and returns events, gray frames and flow in memory,
/// streaming the high-rate frames.
pub fn simulate(spec: &SceneSpec) -> Result<(EventStream, GraySequence, FlowSequence)> {
    let scene = Scene::new(spec)?;
    let times = spec.sim_times();
    if times.len() < 2 {
        return Err(Error::InvalidInput(
            "duration too short for two simulation frames".into(),
        ));
    }
    let mut gen = EventGenerator::new(
        &scene.render(times[0]),
        times[0],
        spec.sensor.threshold_pos,
        spec.sensor.threshold_neg,
        spec.events,
        spec.seed,
    )?;
    for &t in &times[1..] {
        gen.push(&scene.render(t), t)?;
    }
    Ok((gen.finish(), scene.grays(), scene.flows()))
}

/// Sensor properties as recorded for a simulated sequence.
pub fn recorded_props(spec: &SceneSpec) -> Result<ContainerProps> {
    let sensor = SensorProps {
        event_clock_hz: 1e6,
        gray_rate_hz: spec.frame_rate,
        flow_rate_hz: spec.flow_rate,
        ..spec.sensor.clone()
    };
    let mut props = ContainerProps::new(sensor);
    props.meta = serde_json::json!({ "source": "simgen", "scene": spec });
    Ok(props)
}

/// Simulates `spec` and writes the result as a container.
pub fn make_dataset(spec: &SceneSpec, path: impl AsRef<Path>, options: WriteOptions) -> Result<Container> {
    let (events, grays, flows) = simulate(spec)?;
    store::write_sequence(&events, &grays, &flows.fields, &recorded_props(spec)?, path, options)
}
