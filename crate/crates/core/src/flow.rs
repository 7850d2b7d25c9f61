//! Flow-field utilities: bilinear sampling, inversion of backward fields,
//! linear temporal scaling, composition and image warping.
//!
//! Sampling clamps to the border everywhere.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{check_contiguous, FlowField};

/// Border-clamped bilinear interpolation of `grid` at `(x, y)`.
pub fn sample_grid(grid: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
    let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear `(u, v)` at a real-valued position, clamped to the border.
pub fn sample_bilinear(field: &FlowField, x: f64, y: f64) -> (f64, f64) {
    (sample_grid(&field.u, x, y), sample_grid(&field.v, x, y))
}

/// Inverts a displacement field: the result `G` satisfies
/// `G(x + F(x)) ≈ -F(x)`.
///
/// Each source displacement is negated and splatted bilinearly at its landing
/// position; overlapping splats are weight-averaged. Pixels that receive no
/// weight are filled by repeated 3×3 averaging of valid neighbours. The
/// interval is kept, so a backward field over `[t0, t1]` comes back as the
/// forward field over the same interval.
pub fn invert_flow(field: &FlowField) -> FlowField {
    let (h, w) = field.shape();
    let mut acc_u = Array2::<f64>::zeros((h, w));
    let mut acc_v = Array2::<f64>::zeros((h, w));
    let mut weight = Array2::<f64>::zeros((h, w));

    for y in 0..h {
        for x in 0..w {
            let du = field.u[[y, x]];
            let dv = field.v[[y, x]];
            let tx = x as f64 + du;
            let ty = y as f64 + dv;
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            let corners = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for (cx, cy, wgt) in corners {
                if wgt <= 0.0 || cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                    continue;
                }
                let (cx, cy) = (cx as usize, cy as usize);
                acc_u[[cy, cx]] -= wgt * du;
                acc_v[[cy, cx]] -= wgt * dv;
                weight[[cy, cx]] += wgt;
            }
        }
    }

    let mut valid = Array2::from_elem((h, w), false);
    for ((y, x), &wgt) in weight.indexed_iter() {
        if wgt > 0.0 {
            acc_u[[y, x]] /= wgt;
            acc_v[[y, x]] /= wgt;
            valid[[y, x]] = true;
        }
    }
    fill_holes(&mut acc_u, &mut acc_v, &mut valid);

    FlowField {
        u: acc_u,
        v: acc_v,
        t0: field.t0,
        t1: field.t1,
    }
}

fn fill_holes(u: &mut Array2<f64>, v: &mut Array2<f64>, valid: &mut Array2<bool>) {
    let (h, w) = u.dim();
    loop {
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if valid[[y, x]] {
                    continue;
                }
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        if valid[[ny, nx]] {
                            su += u[[ny, nx]];
                            sv += v[[ny, nx]];
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    updates.push((y, x, su / n as f64, sv / n as f64));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (y, x, fu, fv) in updates {
            u[[y, x]] = fu;
            v[[y, x]] = fv;
            valid[[y, x]] = true;
        }
    }
    // Nothing landed inside the frame at all: leave zeros.
}

/// Linearly re-times a field to `[t0, t1]` without any containment check.
pub fn retime_flow(field: &FlowField, t0: i64, t1: i64) -> Result<FlowField> {
    if t1 <= t0 {
        return Err(Error::InvalidInput(format!("interval [{t0}, {t1}] is empty")));
    }
    let factor = (t1 - t0) as f64 / field.duration() as f64;
    Ok(FlowField {
        u: &field.u * factor,
        v: &field.v * factor,
        t0,
        t1,
    })
}

/// Scales a field to a sub-interval of its own interval.
pub fn scale_flow(field: &FlowField, t0: i64, t1: i64) -> Result<FlowField> {
    if t0 < field.t0 || t1 > field.t1 || t1 <= t0 {
        return Err(Error::OutOfRange(format!(
            "[{t0}, {t1}] is not a sub-interval of [{}, {}]",
            field.t0, field.t1
        )));
    }
    retime_flow(field, t0, t1)
}

/// Composes contiguous fields: `C(x) = F1(x) + F2(x + F1(x)) + …`.
pub fn accumulate(fields: &[FlowField]) -> Result<FlowField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidInput("no flow fields to accumulate".into()))?;
    check_contiguous(fields)?;
    if fields.len() == 1 {
        return Ok(first.clone());
    }
    let shape = first.shape();
    let mut total_u = Array2::<f64>::zeros(shape);
    let mut total_v = Array2::<f64>::zeros(shape);
    for y in 0..shape.0 {
        for x in 0..shape.1 {
            let (mut px, mut py) = (x as f64, y as f64);
            for f in fields {
                let (du, dv) = sample_bilinear(f, px, py);
                px += du;
                py += dv;
            }
            total_u[[y, x]] = px - x as f64;
            total_v[[y, x]] = py - y as f64;
        }
    }
    Ok(FlowField {
        u: total_u,
        v: total_v,
        t0: first.t0,
        t1: fields[fields.len() - 1].t1,
    })
}

/// Flow over `[t0, t1]` from a contiguous sequence: fields overlapping the
/// window are clipped (scaled) at partial intervals and composed.
pub fn synchronize(fields: &[FlowField], t0: i64, t1: i64) -> Result<FlowField> {
    if t1 <= t0 {
        return Err(Error::InvalidInput(format!("interval [{t0}, {t1}] is empty")));
    }
    let covered = match (fields.first(), fields.last()) {
        (Some(a), Some(b)) => a.t0 <= t0 && b.t1 >= t1,
        _ => false,
    };
    if !covered {
        return Err(Error::FlowCoverage { t0, t1 });
    }
    let lo = fields.partition_point(|f| f.t1 <= t0);
    let hi = fields.partition_point(|f| f.t0 < t1);
    let pieces = fields[lo..hi]
        .iter()
        .map(|f| {
            let a = f.t0.max(t0);
            let b = f.t1.min(t1);
            if a == f.t0 && b == f.t1 {
                Ok(f.clone())
            } else {
                scale_flow(f, a, b)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    accumulate(&pieces)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    /// Warp a `t0` image forward to the `t1` view.
    ForwardToT1,
    /// Warp a `t1` image back to the `t0` view.
    BackwardToT0,
}

/// Warps an image with a forward field by inverse bilinear sampling.
pub fn warp_image(
    image: &Array2<f64>,
    field: &FlowField,
    direction: WarpDirection,
) -> Result<Array2<f64>> {
    if image.dim() != field.shape() {
        return Err(Error::ShapeMismatch {
            expected: field.shape(),
            actual: image.dim(),
        });
    }
    let lookup = match direction {
        WarpDirection::BackwardToT0 => field.clone(),
        WarpDirection::ForwardToT1 => invert_flow(field),
    };
    Ok(Array2::from_shape_fn(image.dim(), |(y, x)| {
        let (du, dv) = sample_bilinear(&lookup, x as f64, y as f64);
        sample_grid(image, x as f64 + du, y as f64 + dv)
    }))
}

/// Converts an 8-bit frame to `f64` intensities in `[0, 255]`.
pub fn gray_to_f64(frame: &Array2<u8>) -> Array2<f64> {
    frame.mapv(f64::from)
}
