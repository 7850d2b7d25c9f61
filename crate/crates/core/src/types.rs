//! Domain types shared by every module.
//!
//! Timestamps are microseconds (`i64`) everywhere. Polarity is a `bool`
//! whose signed value is `+1` for `true` and `-1` for `false`. Flow fields
//! always use the forward convention: a point at `(x, y)` at `t0` sits at
//! `(x + u[y, x], y + v[y, x])` at `t1`.

use std::fmt;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor geometry, clocks and contrast thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorProps {
    pub width: u16,
    pub height: u16,
    pub event_clock_hz: f64,
    pub gray_rate_hz: f64,
    pub flow_rate_hz: f64,
    pub threshold_pos: f64,
    pub threshold_neg: f64,
}

impl Default for SensorProps {
    /// 346×260 sensor, microsecond clock, 25 Hz gray/flow, thresholds 0.5 / 0.4.
    fn default() -> Self {
        Self {
            width: 346,
            height: 260,
            event_clock_hz: 1e6,
            gray_rate_hz: 25.0,
            flow_rate_hz: 25.0,
            threshold_pos: 0.5,
            threshold_neg: 0.4,
        }
    }
}

impl SensorProps {
    pub fn with_size(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    /// `(height, width)` in ndarray order.
    pub fn shape(&self) -> (usize, usize) {
        (self.height as usize, self.width as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("sensor width and height must be >= 1".into()));
        }
        let rates = [self.event_clock_hz, self.gray_rate_hz, self.flow_rate_hz];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput("sensor rates must be > 0".into()));
        }
        let thresholds = [self.threshold_pos, self.threshold_neg];
        if thresholds.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidInput("contrast thresholds must be > 0".into()));
        }
        Ok(())
    }
}

/// Columnar event arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventStream {
    pub xs: Vec<u16>,
    pub ys: Vec<u16>,
    pub ts: Vec<i64>,
    pub ps: Vec<bool>,
}

impl EventStream {
    pub fn new(xs: Vec<u16>, ys: Vec<u16>, ts: Vec<i64>, ps: Vec<bool>) -> Self {
        Self { xs, ys, ts, ps }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            xs: Vec::with_capacity(n),
            ys: Vec::with_capacity(n),
            ts: Vec::with_capacity(n),
            ps: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn push(&mut self, x: u16, y: u16, t: i64, p: bool) {
        self.xs.push(x);
        self.ys.push(y);
        self.ts.push(t);
        self.ps.push(p);
    }

    pub fn extend_from(&mut self, other: &EventStream) {
        self.xs.extend_from_slice(&other.xs);
        self.ys.extend_from_slice(&other.ys);
        self.ts.extend_from_slice(&other.ts);
        self.ps.extend_from_slice(&other.ps);
    }

    pub fn slice(&self, range: Range<usize>) -> EventStream {
        EventStream {
            xs: self.xs[range.clone()].to_vec(),
            ys: self.ys[range.clone()].to_vec(),
            ts: self.ts[range.clone()].to_vec(),
            ps: self.ps[range].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u16, i64, bool)> + '_ {
        (0..self.len()).map(move |i| (self.xs[i], self.ys[i], self.ts[i], self.ps[i]))
    }

    /// Events with `t0 <= t < t1`, assuming sorted timestamps.
    pub fn between(&self, t0: i64, t1: i64) -> EventStream {
        let lo = self.ts.partition_point(|&t| t < t0);
        let hi = self.ts.partition_point(|&t| t < t1).max(lo);
        self.slice(lo..hi)
    }

    pub fn first_ts(&self) -> Option<i64> {
        self.ts.first().copied()
    }

    pub fn last_ts(&self) -> Option<i64> {
        self.ts.last().copied()
    }
}

/// Signed arithmetic value of a polarity.
#[inline]
pub fn polarity_sign(p: bool) -> f64 {
    if p {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    LengthMismatch,
    NegativeTimestamp,
    DecreasingTimestamp,
    XOutOfBounds,
    YOutOfBounds,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::LengthMismatch => "equal array lengths",
            ViolationKind::NegativeTimestamp => "non-negative ts",
            ViolationKind::DecreasingTimestamp => "non-decreasing ts",
            ViolationKind::XOutOfBounds => "xs < width",
            ViolationKind::YOutOfBounds => "ys < height",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// First offending index.
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self, kind: ViolationKind) -> Option<usize> {
        self.violations.iter().find(|v| v.kind == kind).map(|v| v.index)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| format!("{} violated at index {}", v.kind, v.index))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidInput(msg))
    }
}

/// Checks every event-stream invariant against `props` and reports the
/// first offending index of each violated one.
pub fn validate_stream(events: &EventStream, props: &SensorProps) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = events.ts.len();
    let lens = [events.xs.len(), events.ys.len(), events.ps.len()];
    if lens.iter().any(|&l| l != n) {
        let index = lens.iter().copied().chain(std::iter::once(n)).min().unwrap_or(0);
        report.violations.push(Violation {
            kind: ViolationKind::LengthMismatch,
            index,
        });
    }

    let mut first = |kind, found: Option<usize>| {
        if let Some(index) = found {
            report.violations.push(Violation { kind, index });
        }
    };
    first(
        ViolationKind::NegativeTimestamp,
        events.ts.iter().position(|&t| t < 0),
    );
    first(
        ViolationKind::DecreasingTimestamp,
        events.ts.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1),
    );
    first(
        ViolationKind::XOutOfBounds,
        events.xs.iter().position(|&x| x >= props.width),
    );
    first(
        ViolationKind::YOutOfBounds,
        events.ys.iter().position(|&y| y >= props.height),
    );
    report
}

/// 8-bit grayscale frames with their timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraySequence {
    pub frames: Vec<Array2<u8>>,
    pub ts: Vec<i64>,
}

impl GraySequence {
    pub fn new(frames: Vec<Array2<u8>>, ts: Vec<i64>) -> Self {
        Self { frames, ts }
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if self.frames.len() != self.ts.len() {
            return Err(Error::InvalidInput(format!(
                "{} gray frames but {} timestamps",
                self.frames.len(),
                self.ts.len()
            )));
        }
        if let Some(i) = self.ts.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "gray timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        for frame in &self.frames {
            if frame.dim() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: frame.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Dense forward displacement over `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub t0: i64,
    pub t1: i64,
}

impl FlowField {
    pub fn new(u: Array2<f64>, v: Array2<f64>, t0: i64, t1: i64) -> Result<Self> {
        let field = Self { u, v, t0, t1 };
        field.validate()?;
        Ok(field)
    }

    pub fn zeros(shape: (usize, usize), t0: i64, t1: i64) -> Self {
        Self {
            u: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t0,
            t1,
        }
    }

    pub fn constant(shape: (usize, usize), u: f64, v: f64, t0: i64, t1: i64) -> Self {
        Self {
            u: Array2::from_elem(shape, u),
            v: Array2::from_elem(shape, v),
            t0,
            t1,
        }
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn duration(&self) -> i64 {
        self.t1 - self.t0
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 <= self.t0 {
            return Err(Error::InvalidInput(format!(
                "flow interval [{}, {}] must have t1 > t0",
                self.t0, self.t1
            )));
        }
        if self.u.dim() != self.v.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.u.dim(),
                actual: self.v.dim(),
            });
        }
        Ok(())
    }
}

/// Contiguous, non-empty run of flow fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSequence {
    pub fields: Vec<FlowField>,
}

impl FlowSequence {
    pub fn new(fields: Vec<FlowField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidInput("flow sequence must be non-empty".into()));
        }
        check_contiguous(&fields)?;
        Ok(Self { fields })
    }

    pub fn t0(&self) -> i64 {
        self.fields[0].t0
    }

    pub fn t1(&self) -> i64 {
        self.fields[self.fields.len() - 1].t1
    }
}

/// Every field valid, same shape, and `fields[k].t1 == fields[k + 1].t0`.
pub fn check_contiguous(fields: &[FlowField]) -> Result<()> {
    for (k, f) in fields.iter().enumerate() {
        f.validate()?;
        if f.shape() != fields[0].shape() {
            return Err(Error::ShapeMismatch {
                expected: fields[0].shape(),
                actual: f.shape(),
            });
        }
        if k > 0 && fields[k - 1].t1 != f.t0 {
            return Err(Error::NonContiguous { index: k });
        }
    }
    Ok(())
}

/// Two-channel frame over one time bin; both channels are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub pos: Array2<f64>,
    pub neg: Array2<f64>,
    pub t0: i64,
    pub t1: i64,
}

impl EncodedFrame {
    pub fn zeros(shape: (usize, usize), t0: i64, t1: i64) -> Self {
        Self {
            pos: Array2::zeros(shape),
            neg: Array2::zeros(shape),
            t0,
            t1,
        }
    }

    /// Signed polarity image, `pos - neg`.
    pub fn signed(&self) -> Array2<f64> {
        &self.pos - &self.neg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn props(w: u16, h: u16) -> SensorProps {
        SensorProps::with_size(w, h)
    }

    #[test]
    fn empty_stream_is_valid() {
        assert!(validate_stream(&EventStream::default(), &props(4, 4)).is_ok());
    }

    #[test]
    fn decreasing_ts_reported_at_second_index() {
        let ev = EventStream::new(vec![0, 0], vec![0, 0], vec![5, 3], vec![true, true]);
        let r = validate_stream(&ev, &props(4, 4));
        assert_eq!(
            r.violations,
            vec![Violation {
                kind: ViolationKind::DecreasingTimestamp,
                index: 1
            }]
        );
        assert_eq!(r.violations[0].kind.to_string(), "non-decreasing ts");
    }

    #[test]
    fn column_346_is_out_of_bounds_on_346_wide_sensor() {
        let ev = EventStream::new(vec![346], vec![0], vec![0], vec![true]);
        let r = validate_stream(&ev, &SensorProps::default());
        assert_eq!(r.first(ViolationKind::XOutOfBounds), Some(0));
        let ok = EventStream::new(vec![345], vec![259], vec![0], vec![true]);
        assert!(validate_stream(&ok, &SensorProps::default()).is_ok());
    }

    #[test]
    fn length_mismatch_reported() {
        let ev = EventStream::new(vec![0, 1], vec![0], vec![0, 1], vec![true, false]);
        let r = validate_stream(&ev, &props(4, 4));
        assert_eq!(r.first(ViolationKind::LengthMismatch), Some(1));
    }

    #[test]
    fn props_validation() {
        assert!(SensorProps::default().validate().is_ok());
        let mut p = SensorProps::default();
        p.threshold_neg = 0.0;
        assert!(p.validate().is_err());
        let mut p = SensorProps::default();
        p.width = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn flow_sequence_contiguity() {
        let a = FlowField::zeros((2, 2), 0, 10);
        let b = FlowField::zeros((2, 2), 10, 20);
        let c = FlowField::zeros((2, 2), 21, 30);
        assert!(FlowSequence::new(vec![a.clone(), b.clone()]).is_ok());
        assert!(matches!(
            FlowSequence::new(vec![a, b, c]),
            Err(Error::NonContiguous { index: 2 })
        ));
        assert!(FlowSequence::new(vec![]).is_err());
        assert!(FlowField::new(Array2::zeros((1, 1)), Array2::zeros((1, 1)), 5, 5).is_err());
    }

    fn brute_force(ev: &EventStream, w: u16, h: u16) -> Vec<(ViolationKind, usize)> {
        let mut out = Vec::new();
        let mut neg = None;
        let mut dec = None;
        let mut xo = None;
        let mut yo = None;
        for i in 0..ev.ts.len() {
            if neg.is_none() && ev.ts[i] < 0 {
                neg = Some(i);
            }
            if dec.is_none() && i > 0 && ev.ts[i] < ev.ts[i - 1] {
                dec = Some(i);
            }
            if xo.is_none() && ev.xs[i] >= w {
                xo = Some(i);
            }
            if yo.is_none() && ev.ys[i] >= h {
                yo = Some(i);
            }
        }
        for (k, f) in [
            (ViolationKind::NegativeTimestamp, neg),
            (ViolationKind::DecreasingTimestamp, dec),
            (ViolationKind::XOutOfBounds, xo),
            (ViolationKind::YOutOfBounds, yo),
        ] {
            if let Some(i) = f {
                out.push((k, i));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn report_matches_brute_force(
            raw in proptest::collection::vec((0u16..12, 0u16..12, -3i64..40, any::<bool>()), 0..60),
            sorted in any::<bool>(),
        ) {
            let mut raw = raw;
            if sorted {
                raw.sort_by_key(|e| e.2);
            }
            let ev = EventStream::new(
                raw.iter().map(|e| e.0).collect(),
                raw.iter().map(|e| e.1).collect(),
                raw.iter().map(|e| e.2).collect(),
                raw.iter().map(|e| e.3).collect(),
            );
            let got: Vec<_> = validate_stream(&ev, &props(10, 9))
                .violations
                .iter()
                .map(|v| (v.kind, v.index))
                .collect();
            prop_assert_eq!(got, brute_force(&ev, 10, 9));
        }
    }
}
