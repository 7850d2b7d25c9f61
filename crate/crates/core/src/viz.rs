//! Flow colouring, event overlays and PNG export.
//!
//! Images are `(height, width, 3)` RGB arrays.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3};

use crate::encode::encode_count;
use crate::error::{Error, Result};
use crate::store::{Reader, Stride};
use crate::types::{EncodedFrame, EventStream, FlowField};

pub type RgbImage = Array3<u8>;

/// Overlay colour of pixels with only positive events.
pub const POSITIVE: [u8; 3] = [30, 90, 255];
/// Overlay colour of pixels with only negative events.
pub const NEGATIVE: [u8; 3] = [240, 40, 40];
/// Overlay colour of pixels with events of both polarities.
pub const MIXED: [u8; 3] = [255, 200, 0];

/// HSV with `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Direction of `(u, v)` in degrees, `[0, 360)`. With image rows growing
/// downwards, 90 degrees points down.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    v.atan2(u).to_degrees().rem_euclid(360.0)
}

/// Colour wheel rendering: hue is the flow direction, saturation is
/// `|flow| / max_magnitude` clamped to 1, value is 1, so zero flow is
/// white. `None` uses the largest magnitude in the field.
pub fn flow_to_color(field: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (h, w) = field.shape();
    let mags = Array2::from_shape_fn((h, w), |(y, x)| field.u[[y, x]].hypot(field.v[[y, x]]));
    let max = max_magnitude.unwrap_or_else(|| mags.iter().copied().filter(|m| m.is_finite()).fold(0.0, f64::max));
    let mut img = Array3::from_elem((h, w, 3), 255u8);
    if !(max > 0.0) {
        return img;
    }
    for y in 0..h {
        for x in 0..w {
            let m = mags[[y, x]];
            if !(m > 0.0) || !m.is_finite() {
                continue;
            }
            let rgb = hsv_to_rgb(flow_hue(field.u[[y, x]], field.v[[y, x]]), (m / max).min(1.0), 1.0);
            for c in 0..3 {
                img[[y, x, c]] = rgb[c];
            }
        }
    }
    img
}

pub fn gray_to_rgb(gray: &Array2<u8>) -> RgbImage {
    let (h, w) = gray.dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, _)| gray[[y, x]])
}

/// Gray frame with event pixels painted in [`POSITIVE`], [`NEGATIVE`] or
/// [`MIXED`]. Events outside the frame are ignored.
pub fn render_overlay(gray: &Array2<u8>, events: &EventStream) -> Result<RgbImage> {
    let (h, w) = gray.dim();
    // bit 0: positive seen, bit 1: negative seen
    let mut seen = Array2::<u8>::zeros((h, w));
    for (x, y, _, p) in events.iter() {
        if let Some(s) = seen.get_mut([y as usize, x as usize]) {
            *s |= if p { 1 } else { 2 };
        }
    }
    let mut img = gray_to_rgb(gray);
    for ((y, x), &s) in seen.indexed_iter() {
        let colour = match s {
            0 => continue,
            1 => POSITIVE,
            2 => NEGATIVE,
            _ => MIXED,
        };
        for c in 0..3 {
            img[[y, x, c]] = colour[c];
        }
    }
    Ok(img)
}

/// Like [`render_overlay`] but the background shape is checked against
/// `shape` first.
pub fn render_overlay_checked(gray: &Array2<u8>, events: &EventStream, shape: (usize, usize)) -> Result<RgbImage> {
    if gray.dim() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: gray.dim(),
        });
    }
    render_overlay(gray, events)
}

/// White background blended towards [`POSITIVE`] or [`NEGATIVE`] by the
/// signed count relative to the largest absolute value.
pub fn render_encoded(frame: &EncodedFrame) -> RgbImage {
    let s = frame.signed();
    let (h, w) = s.dim();
    let max = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut img = Array3::from_elem((h, w, 3), 255u8);
    if max == 0.0 {
        return img;
    }
    for ((y, x), &v) in s.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let (target, a) = if v > 0.0 { (POSITIVE, v / max) } else { (NEGATIVE, -v / max) };
        for c in 0..3 {
            img[[y, x, c]] = (255.0 + (target[c] as f64 - 255.0) * a).round() as u8;
        }
    }
    img
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let (h, w, _) = img.dim();
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let data: Vec<u8> = img.iter().copied().collect();
    writer.write_image_data(&data)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("expected 8-bit RGB, got {:?}", info.color_type)));
    }
    buf.truncate(info.buffer_size());
    Array3::from_shape_vec((info.height as usize, info.width as usize, 3), buf)
        .map_err(|e| Error::Png(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// Events over the gray frame at or before the slice start.
    Overlay,
    /// Synchronized flow of the slice; white where none is stored.
    Flow,
    /// Single-bin signed count image.
    Encoded,
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlay" => Ok(Self::Overlay),
            "flow" => Ok(Self::Flow),
            "encoded" => Ok(Self::Encoded),
            _ => Err(Error::InvalidInput(format!("unknown render kind {s:?}"))),
        }
    }
}

/// Writes one `NNNNNN.png` per slice of `reader.iterate(stride)` and
/// returns the paths in order.
pub fn export_sequence(reader: &Reader, stride: Stride, out_dir: impl AsRef<Path>, kind: ExportKind) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let shape = reader.shape();
    let mut paths = Vec::new();
    for (i, slice) in reader.iterate(stride)?.enumerate() {
        let slice = slice?;
        let img = match kind {
            ExportKind::Overlay => {
                let bg = slice
                    .gray_start
                    .as_ref()
                    .or(slice.gray_end.as_ref())
                    .map(|g| g.image.clone())
                    .unwrap_or_else(|| Array2::zeros(shape));
                render_overlay_checked(&bg, &slice.events, shape)?
            }
            ExportKind::Flow => match &slice.flow {
                Some(f) => flow_to_color(f, None),
                None => Array3::from_elem((shape.0, shape.1, 3), 255),
            },
            ExportKind::Encoded => {
                let frame = if slice.t1 > slice.t0 {
                    encode_count(&slice.events, shape, slice.t0, slice.t1, 1)?.remove(0)
                } else {
                    EncodedFrame::zeros(shape, slice.t0, slice.t1)
                };
                render_encoded(&frame)
            }
        };
        let path = out_dir.join(format!("{i:06}.png"));
        write_png(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Events as `t_us,x,y,p` rows with `p` in `{0, 1}`, the same layout the
/// CSV importer reads.
pub fn export_events_csv(events: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t_us", "x", "y", "p"]).map_err(csv_err)?;
    for (x, y, t, p) in events.iter() {
        w.serialize((t, x, y, p as u8)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}
