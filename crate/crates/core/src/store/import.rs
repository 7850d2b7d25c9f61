//! Plain-text import: events CSV, a directory of PNG gray frames and a JSON
//! flow file.
//!
//! * events CSV: columns `t_us, x, y, p`, optional header row, timestamps
//!   non-decreasing, polarity either `{0, 1}` or `{-1, 1}`.
//! * gray directory: 8-bit grayscale PNGs named `<t_us>.png`.
//! * flow JSON: `{"convention": "forward" | "backward", "fields": [{"t0",
//!   "t1", "u", "v"}]}` with `u`/`v` row-major. Backward fields are inverted
//!   here, once.

use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use super::{write_sequence, Container, ContainerProps, WriteOptions};
use crate::error::{Error, Result};
use crate::flow::invert_flow;
use crate::types::{EventStream, FlowField, GraySequence};

fn parse_field<T: std::str::FromStr>(s: &str, name: &str, line: u64) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name} value {s:?}"),
    })
}

/// Parses an events CSV. Line numbers in errors are 1-based.
pub fn parse_events_csv<R: Read>(input: R) -> Result<EventStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut events = EventStream::default();
    let mut saw_row = false;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_row && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("t_us")) {
            saw_row = true;
            continue;
        }
        saw_row = true;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 columns (t_us, x, y, p), got {}", record.len()),
            });
        }
        let t: i64 = parse_field(&record[0], "t_us", line)?;
        let x: u16 = parse_field(&record[1], "x", line)?;
        let y: u16 = parse_field(&record[2], "y", line)?;
        let p = match record[3].trim() {
            "1" | "+1" => true,
            "0" | "-1" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("bad polarity {other:?}"),
                })
            }
        };
        if t < 0 {
            return Err(Error::Parse {
                line,
                message: format!("negative timestamp {t}"),
            });
        }
        if events.last_ts().is_some_and(|last| t < last) {
            return Err(Error::Parse {
                line,
                message: "timestamps not sorted".into(),
            });
        }
        events.push(x, y, t, p);
    }
    Ok(events)
}

fn read_gray_png(path: &Path) -> Result<Array2<u8>> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::InvalidInput(format!(
            "{} is not an 8-bit grayscale PNG",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Array2::from_shape_vec((info.height as usize, info.width as usize), buf)
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn read_gray_dir(dir: &Path) -> Result<GraySequence> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let ts: i64 = stem.parse().map_err(|_| {
            Error::InvalidInput(format!("gray frame name {stem:?} is not a timestamp"))
        })?;
        entries.push((ts, path));
    }
    entries.sort_by_key(|e| e.0);
    let mut grays = GraySequence::default();
    for (ts, path) in entries {
        grays.frames.push(read_gray_png(&path)?);
        grays.ts.push(ts);
    }
    Ok(grays)
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum Convention {
    Forward,
    Backward,
}

#[derive(Deserialize)]
struct FlowFile {
    convention: Convention,
    fields: Vec<FlowEntry>,
}

#[derive(Deserialize)]
struct FlowEntry {
    t0: i64,
    t1: i64,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Parses a flow JSON document for a `(height, width)` sensor, returning
/// forward fields.
pub fn parse_flows_json(text: &str, shape: (usize, usize)) -> Result<Vec<FlowField>> {
    let file: FlowFile = serde_json::from_str(text)?;
    file.fields
        .into_iter()
        .map(|e| {
            let bad = |_| Error::ShapeMismatch {
                expected: shape,
                actual: (0, 0),
            };
            let f = FlowField::new(
                Array2::from_shape_vec(shape, e.u).map_err(bad)?,
                Array2::from_shape_vec(shape, e.v).map_err(bad)?,
                e.t0,
                e.t1,
            )?;
            Ok(match file.convention {
                Convention::Forward => f,
                Convention::Backward => invert_flow(&f),
            })
        })
        .collect()
}

/// Builds a container from plain-text sources. The result is identical to
/// calling [`write_sequence`] on the parsed arrays.
pub fn import_csv(
    events_csv: &Path,
    grays_dir: Option<&Path>,
    flows_file: Option<&Path>,
    props_json: &Path,
    out: &Path,
    options: WriteOptions,
) -> Result<Container> {
    let props = ContainerProps::from_json(&fs::read_to_string(props_json)?)?;
    let events = parse_events_csv(File::open(events_csv)?)?;
    let grays = match grays_dir {
        Some(dir) => read_gray_dir(dir)?,
        None => GraySequence::default(),
    };
    let flows = match flows_file {
        Some(f) => parse_flows_json(&fs::read_to_string(f)?, props.sensor.shape())?,
        None => Vec::new(),
    };
    write_sequence(&events, &grays, &flows, &props, out, options)
}
