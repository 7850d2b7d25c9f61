//! On-disk container: a directory holding chunked, compressed columnar
//! events plus gray frames, flow fields, precomputed index maps and
//! `props.json`.
//!
//! ```text
//! container/
//!   events.bin   header + chunks of (xs, ys, delta-ts, ps) blocks
//!   gray.bin     header + timestamp block + one block per frame
//!   flow.bin     header + interval block + (u, v) blocks per field
//!   maps.bin     header + five index-map blocks
//!   props.json   sensor properties and free-form metadata
//! ```

mod codec;
mod format;
mod import;
mod maps;
mod reader;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use codec::Codec;
pub use format::{EventsHeader, FORMAT_VERSION};
pub use import::{import_csv, parse_events_csv, parse_flows_json};
pub use maps::{duration_ms, TimeIndexMaps};
pub use reader::{GrayFrame, Reader, Slice, SliceIter, Stride};

use crate::error::{Error, Result};
use crate::types::{check_contiguous, validate_stream, EventStream, FlowField, GraySequence, SensorProps};
use format::*;

pub const DEFAULT_CHUNK_SIZE: u32 = 1 << 16;
/// Keeps every compressed block comfortably addressable.
pub const MAX_CHUNK_SIZE: u32 = 1 << 28;

/// Contents of `props.json`: sensor properties, a `meta` object, and any
/// other keys carried through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerProps {
    #[serde(flatten)]
    pub sensor: SensorProps,
    #[serde(default = "empty_object")]
    pub meta: Value,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl ContainerProps {
    pub fn new(sensor: SensorProps) -> Self {
        Self {
            sensor,
            meta: empty_object(),
            extra: Map::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl From<SensorProps> for ContainerProps {
    fn from(sensor: SensorProps) -> Self {
        Self::new(sensor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub codec: Codec,
    pub chunk_size: u32,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            codec: Codec::Zstd,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

impl WriteOptions {
    pub fn new(codec: Codec, chunk_size: u32) -> Self {
        Self { codec, chunk_size }
    }
}

/// A written container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub path: PathBuf,
    pub props: ContainerProps,
    pub chunk_size: u32,
    pub codec: Codec,
}

fn check_padding(events: &EventStream, grays: &GraySequence, flows: &[FlowField], sensor: &SensorProps) -> Result<()> {
    let (Some(first), Some(last)) = (events.first_ts(), events.last_ts()) else {
        return Ok(());
    };
    let gray_pad = (1e6 / sensor.gray_rate_hz).ceil() as i64;
    let flow_pad = (1e6 / sensor.flow_rate_hz).ceil() as i64;
    if let Some(t) = grays
        .ts
        .iter()
        .find(|&&t| t < first - gray_pad || t > last + gray_pad)
    {
        return Err(Error::InvalidInput(format!(
            "gray timestamp {t} outside event extent [{first}, {last}] padded by {gray_pad} us"
        )));
    }
    if let Some(f) = flows
        .iter()
        .find(|f| f.t0 < first - flow_pad || f.t1 > last + flow_pad)
    {
        return Err(Error::InvalidInput(format!(
            "flow interval [{}, {}] outside event extent [{first}, {last}] padded by {flow_pad} us",
            f.t0, f.t1
        )));
    }
    Ok(())
}

/// Validates every input, then writes the container directory.
///
/// Nothing is written if any input violates its invariants. `flows` may be
/// empty; otherwise it must be contiguous.
pub fn write_sequence(
    events: &EventStream,
    grays: &GraySequence,
    flows: &[FlowField],
    props: &ContainerProps,
    path: impl AsRef<Path>,
    options: WriteOptions,
) -> Result<Container> {
    let path = path.as_ref();
    let sensor = &props.sensor;
    sensor.validate()?;
    if options.chunk_size == 0 || options.chunk_size > MAX_CHUNK_SIZE {
        return Err(Error::InvalidInput(format!(
            "chunk_size must be in 1..={MAX_CHUNK_SIZE}"
        )));
    }
    validate_stream(events, sensor).into_result()?;
    let shape = sensor.shape();
    grays.validate(shape)?;
    if !flows.is_empty() {
        check_contiguous(flows)?;
        if flows[0].shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: flows[0].shape(),
            });
        }
    }
    check_padding(events, grays, flows, sensor)?;

    fs::create_dir_all(path)?;
    write_events(events, sensor, path, options)?;
    write_grays(grays, sensor, path, options.codec)?;
    write_flows(flows, sensor, path, options.codec)?;
    let flow_t0: Vec<i64> = flows.iter().map(|f| f.t0).collect();
    let maps = TimeIndexMaps::build(&events.ts, &grays.ts, &flow_t0, flows.last().map(|f| f.t1));
    write_maps(&maps, path, options.codec)?;
    fs::write(path.join(PROPS_FILE), props.to_json()?)?;

    Ok(Container {
        path: path.to_path_buf(),
        props: props.clone(),
        chunk_size: options.chunk_size,
        codec: options.codec,
    })
}

fn write_events(events: &EventStream, sensor: &SensorProps, dir: &Path, opts: WriteOptions) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    let header = EventsHeader {
        version: FORMAT_VERSION,
        codec: opts.codec,
        chunk_size: opts.chunk_size,
        num_events: events.len() as u64,
        width: sensor.width,
        height: sensor.height,
    };
    w.write_all(&header.to_bytes())?;
    let cs = opts.chunk_size as usize;
    for start in (0..events.len()).step_by(cs) {
        let end = (start + cs).min(events.len());
        write_block(&mut w, opts.codec, &u16s_to_bytes(&events.xs[start..end]))?;
        write_block(&mut w, opts.codec, &u16s_to_bytes(&events.ys[start..end]))?;
        write_block(&mut w, opts.codec, &i64s_to_bytes(&delta_encode(&events.ts[start..end])))?;
        let ps: Vec<u8> = events.ps[start..end].iter().map(|&p| p as u8).collect();
        write_block(&mut w, opts.codec, &ps)?;
    }
    w.flush()?;
    Ok(())
}

fn channel_header(codec: Codec, count: usize, sensor: &SensorProps) -> ChannelHeader {
    ChannelHeader {
        version: FORMAT_VERSION,
        codec,
        count: count as u64,
        width: sensor.width,
        height: sensor.height,
    }
}

fn write_grays(grays: &GraySequence, sensor: &SensorProps, dir: &Path, codec: Codec) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(GRAY_FILE))?);
    w.write_all(&channel_header(codec, grays.len(), sensor).to_bytes(&GRAY_MAGIC))?;
    write_block(&mut w, codec, &i64s_to_bytes(&grays.ts))?;
    for frame in &grays.frames {
        let raw: Vec<u8> = frame.iter().copied().collect();
        write_block(&mut w, codec, &raw)?;
    }
    w.flush()?;
    Ok(())
}

fn write_flows(flows: &[FlowField], sensor: &SensorProps, dir: &Path, codec: Codec) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(FLOW_FILE))?);
    w.write_all(&channel_header(codec, flows.len(), sensor).to_bytes(&FLOW_MAGIC))?;
    let intervals: Vec<i64> = flows.iter().flat_map(|f| [f.t0, f.t1]).collect();
    write_block(&mut w, codec, &i64s_to_bytes(&intervals))?;
    for f in flows {
        write_block(&mut w, codec, &f64s_to_bytes(f.u.iter().copied()))?;
        write_block(&mut w, codec, &f64s_to_bytes(f.v.iter().copied()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_maps(maps: &TimeIndexMaps, dir: &Path, codec: Codec) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(MAPS_FILE))?);
    w.write_all(&MapsHeader { codec }.to_bytes())?;
    let as_i64 = |v: &[u64]| v.iter().map(|&x| x as i64).collect::<Vec<_>>();
    for arr in [
        as_i64(&maps.time_to_event),
        as_i64(&maps.time_to_gray),
        as_i64(&maps.time_to_flow),
    ] {
        write_block(&mut w, codec, &(arr.len() as u64).to_le_bytes())?;
        write_block(&mut w, codec, &i64s_to_bytes(&arr))?;
    }
    for arr in [&maps.event_to_gray, &maps.event_to_flow] {
        write_block(&mut w, codec, &(arr.len() as u64).to_le_bytes())?;
        write_block(&mut w, codec, &i64s_to_bytes(arr))?;
    }
    w.flush()?;
    Ok(())
}

/// Opens a container for reading. Only headers, metadata blocks and index
/// maps are read here; event chunks, frames and fields are read on demand.
pub fn open(path: impl AsRef<Path>) -> Result<Reader> {
    Reader::open(path.as_ref())
}

/// Reads every channel of a container into memory.
pub fn read_all(reader: &Reader) -> Result<(EventStream, GraySequence, Vec<FlowField>)> {
    let events = reader.read_events(0..reader.len())?;
    let frames = (0..reader.num_gray())
        .map(|i| reader.read_gray(i))
        .collect::<Result<Vec<_>>>()?;
    let grays = GraySequence::new(frames, reader.gray_ts().to_vec());
    let flows = (0..reader.num_flows())
        .map(|i| reader.read_flow(i))
        .collect::<Result<Vec<_>>>()?;
    Ok((events, grays, flows))
}
