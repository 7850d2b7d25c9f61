use std::fs::{self, File};
use std::io::{BufReader, Seek, SeekFrom};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use ndarray::Array2;

use super::codec::Codec;
use super::format::*;
use super::maps::TimeIndexMaps;
use super::ContainerProps;
use crate::error::{Error, Result};
use crate::flow;
use crate::types::{EventStream, FlowField};

/// A gray frame together with its index and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub index: usize,
    pub ts: i64,
    pub image: Array2<u8>,
}

/// Events of a window plus its bounding gray frames and synchronized flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub events: EventStream,
    /// Index of the first event in the container.
    pub first_index: usize,
    /// Half-open time window `[t0, t1)` in microseconds.
    pub t0: i64,
    pub t1: i64,
    /// Last gray frame at or before the window start.
    pub gray_start: Option<GrayFrame>,
    /// First gray frame at or after the window end.
    pub gray_end: Option<GrayFrame>,
    /// Flow over `[t0, t1]`; `None` when the flow channel is empty or does
    /// not cover the window.
    pub flow: Option<FlowField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    Events(usize),
    Millis(u64),
    GrayFrames(usize),
}

struct Channel {
    file: Mutex<BufReader<File>>,
    codec: Codec,
}

/// Read handle on a container. Shareable across threads; slices may be
/// taken concurrently.
pub struct Reader {
    path: PathBuf,
    props: ContainerProps,
    header: EventsHeader,
    maps: TimeIndexMaps,
    chunk_offsets: Vec<u64>,
    events: Mutex<BufReader<File>>,
    gray: Channel,
    gray_ts: Vec<i64>,
    gray_offsets: Vec<u64>,
    flow: Channel,
    flow_intervals: Vec<(i64, i64)>,
    flow_offsets: Vec<u64>,
    chunks_read: AtomicU64,
}

impl std::fmt::Debug for Reader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reader")
            .field("path", &self.path)
            .field("header", &self.header)
            .field("num_gray", &self.gray_ts.len())
            .field("num_flows", &self.flow_intervals.len())
            .finish()
    }
}

fn open_channel(
    path: &Path,
    magic: &[u8; 4],
    header: &EventsHeader,
) -> Result<(BufReader<File>, ChannelHeader)> {
    let (file, b) = read_header::<{ ChannelHeader::LEN }>(path)?;
    let h = ChannelHeader::parse(&b, magic, path)?;
    if (h.width, h.height) != (header.width, header.height) {
        return Err(Error::Corrupt(format!(
            "{} is {}x{} but events are {}x{}",
            path.display(),
            h.width,
            h.height,
            header.width,
            header.height
        )));
    }
    Ok((BufReader::new(file), h))
}

/// Offsets of `count` consecutive groups of `per_group` blocks starting at
/// the current position.
fn block_offsets(r: &mut BufReader<File>, count: usize, per_group: usize) -> Result<Vec<u64>> {
    let mut pos = r.stream_position()?;
    let mut offsets = Vec::with_capacity(count);
    for _ in 0..count {
        offsets.push(pos);
        for _ in 0..per_group {
            pos += skip_block(r)?;
        }
    }
    Ok(offsets)
}

impl Reader {
    pub(super) fn open(dir: &Path) -> Result<Self> {
        let events_path = dir.join(EVENTS_FILE);
        let (file, b) = read_header::<{ EventsHeader::LEN }>(&events_path)?;
        let header = EventsHeader::parse(&b, &events_path)?;
        if header.chunk_size == 0 {
            return Err(Error::Corrupt("chunk_size is zero".into()));
        }
        let mut events = BufReader::new(file);
        let chunk_offsets = block_offsets(&mut events, header.num_chunks(), 4)?;

        let props_text = fs::read_to_string(dir.join(PROPS_FILE))
            .map_err(|e| Error::Corrupt(format!("props.json: {e}")))?;
        let props = ContainerProps::from_json(&props_text)?;

        let (mut gray, gh) = open_channel(&dir.join(GRAY_FILE), &GRAY_MAGIC, &header)?;
        let n_gray = gh.count as usize;
        let gray_ts = bytes_to_i64s(&read_block(&mut gray, gh.codec, n_gray * 8, GRAY_FILE, 0)?);
        let gray_offsets = block_offsets(&mut gray, n_gray, 1)?;

        let (mut flow, fh) = open_channel(&dir.join(FLOW_FILE), &FLOW_MAGIC, &header)?;
        let n_flow = fh.count as usize;
        let raw = bytes_to_i64s(&read_block(&mut flow, fh.codec, n_flow * 16, FLOW_FILE, 0)?);
        let flow_intervals: Vec<_> = raw.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let flow_offsets = block_offsets(&mut flow, n_flow, 2)?;

        let maps = read_maps(&dir.join(MAPS_FILE))?;
        if maps.event_to_gray.len() as u64 != header.num_events
            || maps.event_to_flow.len() as u64 != header.num_events
            || maps.time_to_event.is_empty()
        {
            return Err(Error::Corrupt("index maps do not match the event count".into()));
        }

        Ok(Self {
            path: dir.to_path_buf(),
            props,
            header,
            maps,
            chunk_offsets,
            events: Mutex::new(events),
            gray: Channel {
                file: Mutex::new(gray),
                codec: gh.codec,
            },
            gray_ts,
            gray_offsets,
            flow: Channel {
                file: Mutex::new(flow),
                codec: fh.codec,
            },
            flow_intervals,
            flow_offsets,
            chunks_read: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn props(&self) -> &ContainerProps {
        &self.props
    }

    pub fn header(&self) -> &EventsHeader {
        &self.header
    }

    pub fn maps(&self) -> &TimeIndexMaps {
        &self.maps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.header.height as usize, self.header.width as usize)
    }

    /// Number of events.
    pub fn len(&self) -> usize {
        self.header.num_events as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.num_events == 0
    }

    pub fn num_gray(&self) -> usize {
        self.gray_ts.len()
    }

    pub fn num_flows(&self) -> usize {
        self.flow_intervals.len()
    }

    pub fn gray_ts(&self) -> &[i64] {
        &self.gray_ts
    }

    pub fn flow_intervals(&self) -> &[(i64, i64)] {
        &self.flow_intervals
    }

    pub fn duration_ms(&self) -> u64 {
        self.maps.duration_ms()
    }

    /// Event chunks decompressed since open (or the last reset).
    pub fn chunks_decompressed(&self) -> u64 {
        self.chunks_read.load(Ordering::Relaxed)
    }

    pub fn reset_chunk_counter(&self) {
        self.chunks_read.store(0, Ordering::Relaxed);
    }

    fn read_chunk(&self, chunk: usize) -> Result<EventStream> {
        let cs = self.header.chunk_size as usize;
        let start = chunk * cs;
        let n = (self.len() - start).min(cs);
        let codec = self.header.codec;
        let mut f = self.events.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(self.chunk_offsets[chunk]))?;
        let xs = bytes_to_u16s(&read_block(&mut *f, codec, n * 2, EVENTS_FILE, chunk)?);
        let ys = bytes_to_u16s(&read_block(&mut *f, codec, n * 2, EVENTS_FILE, chunk)?);
        let ts = delta_decode(&bytes_to_i64s(&read_block(&mut *f, codec, n * 8, EVENTS_FILE, chunk)?));
        let ps_raw = read_block(&mut *f, codec, n, EVENTS_FILE, chunk)?;
        drop(f);
        self.chunks_read.fetch_add(1, Ordering::Relaxed);
        let ps = ps_raw
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Corrupt(format!("polarity byte {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EventStream::new(xs, ys, ts, ps))
    }

    /// Events `range`, decompressing only the chunks that overlap it.
    pub fn read_events(&self, range: Range<usize>) -> Result<EventStream> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::OutOfRange(format!(
                "event range {range:?} outside 0..{}",
                self.len()
            )));
        }
        let mut out = EventStream::with_capacity(range.len());
        if range.is_empty() {
            return Ok(out);
        }
        let cs = self.header.chunk_size as usize;
        for chunk in range.start / cs..=(range.end - 1) / cs {
            let base = chunk * cs;
            let events = self.read_chunk(chunk)?;
            let lo = range.start.max(base) - base;
            let hi = range.end.min(base + events.len()) - base;
            out.extend_from(&events.slice(lo..hi));
        }
        Ok(out)
    }

    pub fn read_gray(&self, index: usize) -> Result<Array2<u8>> {
        if index >= self.num_gray() {
            return Err(Error::OutOfRange(format!("gray index {index}")));
        }
        let shape = self.shape();
        let mut f = self.gray.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(self.gray_offsets[index]))?;
        let raw = read_block(&mut *f, self.gray.codec, shape.0 * shape.1, GRAY_FILE, index + 1)?;
        Array2::from_shape_vec(shape, raw).map_err(|e| Error::Corrupt(e.to_string()))
    }

    fn gray_frame(&self, index: usize) -> Result<GrayFrame> {
        Ok(GrayFrame {
            index,
            ts: self.gray_ts[index],
            image: self.read_gray(index)?,
        })
    }

    pub fn read_flow(&self, index: usize) -> Result<FlowField> {
        if index >= self.num_flows() {
            return Err(Error::OutOfRange(format!("flow index {index}")));
        }
        let shape = self.shape();
        let n = shape.0 * shape.1;
        let mut f = self.flow.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(self.flow_offsets[index]))?;
        let u = bytes_to_f64s(&read_block(&mut *f, self.flow.codec, n * 8, FLOW_FILE, 2 * index + 1)?);
        let v = bytes_to_f64s(&read_block(&mut *f, self.flow.codec, n * 8, FLOW_FILE, 2 * index + 2)?);
        let (t0, t1) = self.flow_intervals[index];
        let corrupt = |e: ndarray::ShapeError| Error::Corrupt(e.to_string());
        Ok(FlowField {
            u: Array2::from_shape_vec(shape, u).map_err(corrupt)?,
            v: Array2::from_shape_vec(shape, v).map_err(corrupt)?,
            t0,
            t1,
        })
    }

    /// Flow over `[t0, t1]` µs, reading only the overlapping fields.
    pub fn synchronized_flow(&self, t0: i64, t1: i64) -> Result<FlowField> {
        let iv = &self.flow_intervals;
        let covered = match (iv.first(), iv.last()) {
            (Some(a), Some(b)) => a.0 <= t0 && b.1 >= t1 && t1 > t0,
            _ => false,
        };
        if !covered {
            return Err(Error::FlowCoverage { t0, t1 });
        }
        let lo = iv.partition_point(|f| f.1 <= t0);
        let hi = iv.partition_point(|f| f.0 < t1);
        let fields = (lo..hi).map(|i| self.read_flow(i)).collect::<Result<Vec<_>>>()?;
        flow::synchronize(&fields, t0, t1)
    }

    fn optional_flow(&self, t0: i64, t1: i64) -> Result<Option<FlowField>> {
        match self.synchronized_flow(t0, t1) {
            Ok(f) => Ok(Some(f)),
            Err(Error::FlowCoverage { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Leftmost event index with `ts >= t` µs. Uses the millisecond map and
    /// only reads events inside the one millisecond that contains `t`.
    pub fn event_index_at(&self, t: i64) -> Result<usize> {
        let map = &self.maps.time_to_event;
        if t <= 0 {
            return Ok(0);
        }
        let m = (t / 1000) as usize;
        // every event precedes the last boundary
        if m + 1 >= map.len() {
            return Ok(self.len());
        }
        let lo = map[m] as usize;
        if t % 1000 == 0 {
            return Ok(lo);
        }
        let hi = map[m + 1] as usize;
        if lo == hi {
            return Ok(lo);
        }
        let window = self.read_events(lo..hi)?;
        Ok(lo + window.ts.partition_point(|&x| x < t))
    }

    fn slice_events(&self, i0: usize, i1: usize, t0: i64, t1: i64) -> Result<Slice> {
        Ok(Slice {
            events: self.read_events(i0..i1)?,
            first_index: i0,
            t0,
            t1,
            gray_start: None,
            gray_end: None,
            flow: None,
        })
    }

    /// Events with `t0_ms * 1000 <= ts < t1_ms * 1000`, the gray frames
    /// bracketing the window, and the flow across it.
    pub fn slice_by_time(&self, t0_ms: u64, t1_ms: u64) -> Result<Slice> {
        let duration = self.duration_ms();
        if t0_ms >= t1_ms || t1_ms > duration {
            return Err(Error::OutOfRange(format!(
                "[{t0_ms}, {t1_ms}) ms outside [0, {duration}] ms"
            )));
        }
        let map = &self.maps.time_to_event;
        let (i0, i1) = (map[t0_ms as usize] as usize, map[t1_ms as usize] as usize);
        let (t0, t1) = (t0_ms as i64 * 1000, t1_ms as i64 * 1000);
        let mut slice = self.slice_events(i0, i1, t0, t1)?;

        let n_gray = self.num_gray();
        let j = self.maps.time_to_gray[t0_ms as usize] as usize;
        let start = if j < n_gray && self.gray_ts[j] == t0 {
            Some(j)
        } else {
            j.checked_sub(1)
        };
        let end = Some(self.maps.time_to_gray[t1_ms as usize] as usize).filter(|&k| k < n_gray);
        slice.gray_start = start.map(|i| self.gray_frame(i)).transpose()?;
        slice.gray_end = end.map(|i| self.gray_frame(i)).transpose()?;
        slice.flow = self.optional_flow(t0, t1)?;
        Ok(slice)
    }

    /// Events `[i0, i1)` with the gray pair `(event_to_gray[i0],
    /// event_to_gray[i1 - 1] + 1)` and the flow over their time span.
    pub fn slice_by_event_index(&self, i0: usize, i1: usize) -> Result<Slice> {
        if i0 == i1 {
            return Err(Error::EmptyRange);
        }
        if i0 > i1 || i1 > self.len() {
            return Err(Error::OutOfRange(format!(
                "event range [{i0}, {i1}) outside 0..{}",
                self.len()
            )));
        }
        let events = self.read_events(i0..i1)?;
        let t0 = events.ts[0];
        let t1 = events.ts[events.len() - 1] + 1;
        let n_gray = self.num_gray() as i64;
        let g0 = self.maps.event_to_gray[i0];
        let g1 = self.maps.event_to_gray[i1 - 1] + 1;
        Ok(Slice {
            events,
            first_index: i0,
            t0,
            t1,
            gray_start: (g0 >= 0).then(|| self.gray_frame(g0 as usize)).transpose()?,
            gray_end: (g1 < n_gray).then(|| self.gray_frame(g1 as usize)).transpose()?,
            flow: self.optional_flow(t0, t1)?,
        })
    }

    /// Events with `gray_ts[g0] <= ts < gray_ts[g1]`, bracketed by frames
    /// `g0` and `g1`.
    pub fn slice_by_gray_index(&self, g0: usize, g1: usize) -> Result<Slice> {
        if g0 >= g1 || g1 >= self.num_gray() {
            return Err(Error::OutOfRange(format!(
                "gray range [{g0}, {g1}] with {} frames",
                self.num_gray()
            )));
        }
        let (t0, t1) = (self.gray_ts[g0], self.gray_ts[g1]);
        let i0 = self.event_index_at(t0)?;
        let i1 = self.event_index_at(t1)?;
        let mut slice = self.slice_events(i0, i1, t0, t1)?;
        slice.gray_start = Some(self.gray_frame(g0)?);
        slice.gray_end = Some(self.gray_frame(g1)?);
        slice.flow = self.optional_flow(t0, t1)?;
        Ok(slice)
    }

    /// Consecutive, non-overlapping slices covering the sequence.
    pub fn iterate(&self, stride: Stride) -> Result<SliceIter<'_>> {
        let total = match stride {
            Stride::Events(0) | Stride::Millis(0) | Stride::GrayFrames(0) => {
                return Err(Error::InvalidInput("stride must be positive".into()))
            }
            Stride::Events(n) => self.len().div_ceil(n),
            Stride::Millis(m) => self.duration_ms().div_ceil(m) as usize,
            Stride::GrayFrames(g) => self.num_gray().saturating_sub(1).div_ceil(g),
        };
        Ok(SliceIter {
            reader: self,
            stride,
            next: 0,
            total,
        })
    }
}

fn read_maps(path: &Path) -> Result<TimeIndexMaps> {
    let (file, b) = read_header::<{ MapsHeader::LEN }>(path)?;
    let codec = MapsHeader::parse(&b, path)?.codec;
    let mut r = BufReader::new(file);
    let mut arrays = Vec::with_capacity(5);
    for k in 0..5 {
        let len_bytes = read_block(&mut r, codec, 8, MAPS_FILE, 2 * k)?;
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        arrays.push(bytes_to_i64s(&read_block(&mut r, codec, len * 8, MAPS_FILE, 2 * k + 1)?));
    }
    let unsigned = |v: &Vec<i64>| v.iter().map(|&x| x as u64).collect::<Vec<_>>();
    Ok(TimeIndexMaps {
        time_to_event: unsigned(&arrays[0]),
        time_to_gray: unsigned(&arrays[1]),
        time_to_flow: unsigned(&arrays[2]),
        event_to_gray: arrays[3].clone(),
        event_to_flow: arrays[4].clone(),
    })
}

/// Iterator returned by [`Reader::iterate`].
pub struct SliceIter<'a> {
    reader: &'a Reader,
    stride: Stride,
    next: usize,
    total: usize,
}

impl SliceIter<'_> {
    pub fn total(&self) -> usize {
        self.total
    }
}

impl Iterator for SliceIter<'_> {
    type Item = Result<Slice>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let r = self.reader;
        Some(match self.stride {
            Stride::Events(n) => r.slice_by_event_index(k * n, ((k + 1) * n).min(r.len())),
            Stride::Millis(m) => {
                let t0 = k as u64 * m;
                r.slice_by_time(t0, (t0 + m).min(r.duration_ms()))
            }
            Stride::GrayFrames(g) => r.slice_by_gray_index(k * g, ((k + 1) * g).min(r.num_gray() - 1)),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SliceIter<'_> {}
