//! Millisecond-to-index and event-to-frame lookup tables.

/// Precomputed lookup tables written alongside the payload.
///
/// * `time_to_*[m]` is the leftmost index whose timestamp is `>= m * 1000` µs
///   (for flows, the field start time). Entries cover `m = 0..=duration_ms`.
/// * `event_to_*[i]` is the last gray frame (flow field start) at or before
///   `ts[i]`, or `-1` when there is none.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeIndexMaps {
    pub time_to_event: Vec<u64>,
    pub time_to_gray: Vec<u64>,
    pub time_to_flow: Vec<u64>,
    pub event_to_gray: Vec<i64>,
    pub event_to_flow: Vec<i64>,
}

/// Milliseconds needed so that `[0, duration_ms)` holds every sample of
/// every channel: `ceil(end / 1000)` where `end` is the exclusive end of the
/// latest event, gray frame or flow interval.
pub fn duration_ms(event_ts: &[i64], gray_ts: &[i64], flow_t1: Option<i64>) -> u64 {
    let end = [
        event_ts.last().map(|t| t + 1),
        gray_ts.last().map(|t| t + 1),
        flow_t1,
    ]
    .into_iter()
    .flatten()
    .max()
    .unwrap_or(0)
    .max(0);
    (end as u64).div_ceil(1000)
}

/// Leftmost index with `ts >= m * 1000` for each `m` in `0..=last_ms`, in
/// one merge pass over the sorted timestamps.
pub fn ms_boundaries(ts: &[i64], last_ms: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(last_ms as usize + 1);
    let mut i = 0usize;
    for m in 0..=last_ms {
        let boundary = m as i64 * 1000;
        while i < ts.len() && ts[i] < boundary {
            i += 1;
        }
        out.push(i as u64);
    }
    out
}

/// For each event, the last frame index with frame time `<= t`, or `-1`.
pub fn floor_lookup(event_ts: &[i64], frame_ts: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(event_ts.len());
    let mut j = 0usize;
    for &t in event_ts {
        while j < frame_ts.len() && frame_ts[j] <= t {
            j += 1;
        }
        out.push(j as i64 - 1);
    }
    out
}

impl TimeIndexMaps {
    pub fn build(event_ts: &[i64], gray_ts: &[i64], flow_t0: &[i64], flow_t1: Option<i64>) -> Self {
        let last = duration_ms(event_ts, gray_ts, flow_t1);
        Self {
            time_to_event: ms_boundaries(event_ts, last),
            time_to_gray: ms_boundaries(gray_ts, last),
            time_to_flow: ms_boundaries(flow_t0, last),
            event_to_gray: floor_lookup(event_ts, gray_ts),
            event_to_flow: floor_lookup(event_ts, flow_t0),
        }
    }

    pub fn duration_ms(&self) -> u64 {
        self.time_to_event.len().saturating_sub(1) as u64
    }
}
