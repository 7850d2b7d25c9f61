//! Event-stream augmentations. Spatial ones co-transform gray frames and
//! flow fields so the three channels stay consistent.
//!
//! Every random augmentation takes an explicit seed.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EventStream, FlowField, GraySequence, SensorProps};

/// Events, gray frames and flow fields of one sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequence {
    pub events: EventStream,
    pub grays: GraySequence,
    pub flows: Vec<FlowField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror left/right.
    Horizontal,
    /// Mirror top/bottom.
    Vertical,
}

impl std::str::FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" | "h" => Ok(Self::Horizontal),
            "vertical" | "v" => Ok(Self::Vertical),
            _ => Err(Error::InvalidInput(format!("unknown flip axis {s:?}"))),
        }
    }
}

/// Scales time about the first event: `ts' = round(ts0 + factor (ts - ts0))`.
pub fn time_warp(events: &EventStream, factor: f64) -> Result<EventStream> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidInput("time warp factor must be > 0".into()));
    }
    let mut out = events.clone();
    if let Some(t0) = events.first_ts() {
        for t in &mut out.ts {
            *t = (t0 as f64 + factor * (*t - t0) as f64).round() as i64;
        }
    }
    Ok(out)
}

/// Adds uniform background activity: a Poisson number of events with mean
/// `rate * W * H * duration_s`, uniform in x, y and t over the stream
/// extent, fair-coin polarity. Original events keep their relative order.
pub fn inject_noise(events: &EventStream, shape: (usize, usize), rate: f64, seed: u64) -> Result<EventStream> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidInput("noise rate must be >= 0".into()));
    }
    let (Some(first), Some(last)) = (events.first_ts(), events.last_ts()) else {
        return Ok(events.clone());
    };
    let mean = rate * (shape.0 * shape.1) as f64 * (last - first) as f64 * 1e-6;
    if mean <= 0.0 {
        return Ok(events.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = Poisson::new(mean)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .sample(&mut rng) as usize;

    let mut rows: Vec<(i64, u16, u16, bool)> = events.iter().map(|(x, y, t, p)| (t, x, y, p)).collect();
    rows.reserve(count);
    for _ in 0..count {
        rows.push((
            rng.gen_range(first..=last),
            rng.gen_range(0..shape.1) as u16,
            rng.gen_range(0..shape.0) as u16,
            rng.gen_bool(0.5),
        ));
    }
    rows.sort_by_key(|r| r.0);
    let mut out = EventStream::with_capacity(rows.len());
    for (t, x, y, p) in rows {
        out.push(x, y, t, p);
    }
    Ok(out)
}

pub fn flip_polarity(events: &EventStream) -> EventStream {
    let mut out = events.clone();
    out.ps.iter_mut().for_each(|p| *p = !*p);
    out
}

/// Plays the stream backwards over the same extent and inverts polarity:
/// event `j` of the output is event `N-1-j` of the input at time
/// `ts[0] + ts[N-1] - ts[N-1-j]`.
pub fn temporal_reverse(events: &EventStream) -> EventStream {
    let (Some(first), Some(last)) = (events.first_ts(), events.last_ts()) else {
        return events.clone();
    };
    let mut out = EventStream::with_capacity(events.len());
    for j in (0..events.len()).rev() {
        out.push(events.xs[j], events.ys[j], first + last - events.ts[j], !events.ps[j]);
    }
    out
}

fn mirror<T: Clone>(a: &Array2<T>, axis: FlipAxis) -> Array2<T> {
    match axis {
        FlipAxis::Horizontal => a.slice(s![.., ..;-1]).to_owned(),
        FlipAxis::Vertical => a.slice(s![..;-1, ..]).to_owned(),
    }
}

/// Mirrors all three channels. The displacement component along the
/// flipped axis changes sign.
pub fn spatial_flip(seq: &Sequence, shape: (usize, usize), axis: FlipAxis) -> Result<Sequence> {
    check_shapes(seq, shape)?;
    let mut events = seq.events.clone();
    match axis {
        FlipAxis::Horizontal => {
            let w = shape.1 as u16;
            events.xs.iter_mut().for_each(|x| *x = w - 1 - *x);
        }
        FlipAxis::Vertical => {
            let h = shape.0 as u16;
            events.ys.iter_mut().for_each(|y| *y = h - 1 - *y);
        }
    }
    let grays = GraySequence::new(
        seq.grays.frames.iter().map(|f| mirror(f, axis)).collect(),
        seq.grays.ts.clone(),
    );
    let flows = seq
        .flows
        .iter()
        .map(|f| {
            let (mut u, mut v) = (mirror(&f.u, axis), mirror(&f.v, axis));
            match axis {
                FlipAxis::Horizontal => u.mapv_inplace(|d| -d),
                FlipAxis::Vertical => v.mapv_inplace(|d| -d),
            }
            FlowField { u, v, t0: f.t0, t1: f.t1 }
        })
        .collect();
    Ok(Sequence { events, grays, flows })
}

fn check_shapes(seq: &Sequence, shape: (usize, usize)) -> Result<()> {
    let bad = seq
        .grays
        .frames
        .iter()
        .map(|f| f.dim())
        .chain(seq.flows.iter().map(|f| f.shape()))
        .find(|&d| d != shape);
    match bad {
        Some(actual) => Err(Error::ShapeMismatch { expected: shape, actual }),
        None => Ok(()),
    }
}

/// Axis-aligned crop rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u16,
    pub y: u16,
    pub width: u16,
    pub height: u16,
}

impl CropRect {
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x && y >= self.y && x - self.x < self.width && y - self.y < self.height
    }
}

/// Result of [`random_crop`]: the cropped sequence, its sensor properties
/// and the rectangle used.
#[derive(Debug, Clone, PartialEq)]
pub struct Cropped {
    pub seq: Sequence,
    pub props: SensorProps,
    pub rect: CropRect,
}

/// Crops to a `width × height` window. `origin` fixes the top-left corner;
/// otherwise it is drawn uniformly from the valid positions using `seed`.
pub fn random_crop(
    seq: &Sequence,
    props: &SensorProps,
    width: u16,
    height: u16,
    origin: Option<(u16, u16)>,
    seed: u64,
) -> Result<Cropped> {
    let shape = props.shape();
    check_shapes(seq, shape)?;
    if width == 0 || height == 0 || width > props.width || height > props.height {
        return Err(Error::InvalidInput(format!(
            "crop {width}x{height} does not fit a {}x{} frame",
            props.width, props.height
        )));
    }
    let (x, y) = match origin {
        Some((x, y)) => {
            if x as u32 + width as u32 > props.width as u32 || y as u32 + height as u32 > props.height as u32 {
                return Err(Error::InvalidInput(format!(
                    "crop at ({x}, {y}) of {width}x{height} exceeds the frame"
                )));
            }
            (x, y)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                rng.gen_range(0..=props.width - width),
                rng.gen_range(0..=props.height - height),
            )
        }
    };
    let rect = CropRect { x, y, width, height };

    let mut events = EventStream::default();
    for (ex, ey, t, p) in seq.events.iter().filter(|&(ex, ey, _, _)| rect.contains(ex, ey)) {
        events.push(ex - x, ey - y, t, p);
    }
    let window = |a: &Array2<f64>| {
        a.slice(s![y as usize..(y + height) as usize, x as usize..(x + width) as usize])
            .to_owned()
    };
    let grays = GraySequence::new(
        seq.grays
            .frames
            .iter()
            .map(|f| {
                f.slice(s![y as usize..(y + height) as usize, x as usize..(x + width) as usize])
                    .to_owned()
            })
            .collect(),
        seq.grays.ts.clone(),
    );
    let flows = seq
        .flows
        .iter()
        .map(|f| FlowField {
            u: window(&f.u),
            v: window(&f.v),
            t0: f.t0,
            t1: f.t1,
        })
        .collect();
    let props = SensorProps {
        width,
        height,
        ..props.clone()
    };
    Ok(Cropped {
        seq: Sequence { events, grays, flows },
        props,
        rect,
    })
}
