//! Event-to-frame encoders and the bilinear splat used for images of warped
//! events.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EncodedFrame, EventStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_bins: usize,
    /// Gaussian width in microseconds.
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_bins: 1,
            sigma: 10_000.0,
            lambda: 1.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins == 0 {
            return Err(Error::InvalidInput("num_bins must be >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput("sigma must be > 0".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput("lambda must be > 0".into()));
        }
        Ok(())
    }
}

fn bin_edges(t0: i64, t1: i64, num_bins: usize) -> Result<Vec<(i64, i64)>> {
    if t1 <= t0 {
        return Err(Error::InvalidInput(format!("empty interval [{t0}, {t1})")));
    }
    if num_bins == 0 {
        return Err(Error::InvalidInput("num_bins must be >= 1".into()));
    }
    let span = (t1 - t0) as i128;
    let n = num_bins as i128;
    Ok((0..n)
        .map(|b| {
            let a = t0 as i128 + span * b / n;
            let e = t0 as i128 + span * (b + 1) / n;
            (a as i64, e as i64)
        })
        .collect())
}

/// Bin of `t` in `[t0, t1)` split into `num_bins` equal parts.
fn bin_of(t: i64, t0: i64, t1: i64, num_bins: usize) -> Option<usize> {
    if t < t0 || t >= t1 {
        return None;
    }
    let b = ((t - t0) as i128 * num_bins as i128 / (t1 - t0) as i128) as usize;
    Some(b.min(num_bins - 1))
}

/// Per-bin absolute event counts split by polarity. Events outside
/// `[t0, t1)` are ignored.
pub fn encode_count(
    events: &EventStream,
    shape: (usize, usize),
    t0: i64,
    t1: i64,
    num_bins: usize,
) -> Result<Vec<EncodedFrame>> {
    let edges = bin_edges(t0, t1, num_bins)?;
    let mut frames: Vec<_> = edges
        .iter()
        .map(|&(a, b)| EncodedFrame::zeros(shape, a, b))
        .collect();
    for (x, y, t, p) in events.iter() {
        let Some(b) = bin_of(t, t0, t1, num_bins) else {
            continue;
        };
        let idx = [y as usize, x as usize];
        let channel = if p { &mut frames[b].pos } else { &mut frames[b].neg };
        if let Some(cell) = channel.get_mut(idx) {
            *cell += 1.0;
        }
    }
    Ok(frames)
}

/// Gaussian-weighted encoding: an event in bin `b` adds
/// `lambda * exp(-(t - c_b)^2 / (2 sigma^2))` to its polarity channel, where
/// `c_b` is the bin centre. The kernel peaks at 1 before `lambda`.
pub fn encode_gaussian(
    events: &EventStream,
    shape: (usize, usize),
    t0: i64,
    t1: i64,
    config: &EncoderConfig,
) -> Result<Vec<EncodedFrame>> {
    config.validate()?;
    let edges = bin_edges(t0, t1, config.num_bins)?;
    let bin_width = (t1 - t0) as f64 / config.num_bins as f64;
    let mut frames: Vec<_> = edges
        .iter()
        .map(|&(a, b)| EncodedFrame::zeros(shape, a, b))
        .collect();
    let inv_two_var = 1.0 / (2.0 * config.sigma * config.sigma);
    for (x, y, t, p) in events.iter() {
        let Some(b) = bin_of(t, t0, t1, config.num_bins) else {
            continue;
        };
        let center = t0 as f64 + (b as f64 + 0.5) * bin_width;
        let d = t as f64 - center;
        let weight = config.lambda * (-d * d * inv_two_var).exp();
        let channel = if p { &mut frames[b].pos } else { &mut frames[b].neg };
        if let Some(cell) = channel.get_mut([y as usize, x as usize]) {
            *cell += weight;
        }
    }
    Ok(frames)
}

/// A weighted real-valued point for splatting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Bilinear footprint of a point: up to four `(x, y, coefficient)` pixels
/// inside a `(h, w)` frame.
#[inline]
pub(crate) fn bilinear_footprint(
    x: f64,
    y: f64,
    shape: (usize, usize),
) -> impl Iterator<Item = (usize, usize, f64)> {
    let (h, w) = shape;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ]
    .into_iter()
    .filter(move |&(px, py, _)| px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64)
    .map(|(px, py, c)| (px as usize, py as usize, c))
}

/// Image of warped events: each point spreads its weight over its four
/// neighbouring pixels; the parts that fall outside the frame are dropped.
pub fn splat_iwe(points: &[SplatPoint], shape: (usize, usize)) -> Array2<f64> {
    let mut img = Array2::<f64>::zeros(shape);
    for p in points {
        if !(p.x.is_finite() && p.y.is_finite()) {
            continue;
        }
        for (px, py, c) in bilinear_footprint(p.x, p.y, shape) {
            img[[py, px]] += c * p.weight;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stream(n: usize, shape: (usize, usize), t1: i64, seed: u64) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts: Vec<i64> = (0..n).map(|_| rng.gen_range(0..t1)).collect();
        ts.sort_unstable();
        EventStream::new(
            (0..n).map(|_| rng.gen_range(0..shape.1 as u16)).collect(),
            (0..n).map(|_| rng.gen_range(0..shape.0 as u16)).collect(),
            ts,
            (0..n).map(|_| rng.gen_bool(0.5)).collect(),
        )
    }

    #[test]
    fn count_two_positive_events() {
        let ev = EventStream::new(vec![2, 2], vec![1, 1], vec![10, 20], vec![true, true]);
        let f = encode_count(&ev, (4, 4), 0, 100, 1).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].pos[[1, 2]], 2.0);
        assert_eq!(f[0].neg.sum(), 0.0);
    }

    #[test]
    fn count_conservation_and_signed_histogram() {
        let shape = (12, 15);
        let ev = random_stream(3000, shape, 50_000, 3);
        let frames = encode_count(&ev, shape, 0, 50_000, 7).unwrap();
        let total: f64 = frames.iter().map(|f| f.pos.sum() + f.neg.sum()).sum();
        assert_eq!(total, 3000.0);

        let mut hist = Array2::<f64>::zeros(shape);
        for (x, y, _, p) in ev.iter() {
            hist[[y as usize, x as usize]] += if p { 1.0 } else { -1.0 };
        }
        let mut signed = Array2::<f64>::zeros(shape);
        for f in &frames {
            signed = signed + f.signed();
        }
        assert_eq!(signed, hist);
    }

    #[test]
    fn bins_partition_the_interval() {
        let ev = EventStream::new(vec![0, 0, 0], vec![0, 0, 0], vec![0, 49, 99], vec![true; 3]);
        let f = encode_count(&ev, (1, 1), 0, 100, 2).unwrap();
        assert_eq!((f[0].t0, f[0].t1, f[1].t0, f[1].t1), (0, 50, 50, 100));
        assert_eq!(f[0].pos[[0, 0]], 2.0);
        assert_eq!(f[1].pos[[0, 0]], 1.0);
        assert!(encode_count(&ev, (1, 1), 10, 10, 1).is_err());
    }

    #[test]
    fn gaussian_peak_and_one_sigma() {
        let cfg = EncoderConfig {
            num_bins: 2,
            sigma: 100.0,
            lambda: 2.5,
        };
        // bin centres at 250 and 750
        let ev = EventStream::new(vec![1, 2], vec![0, 0], vec![250, 850], vec![true, false]);
        let f = encode_gaussian(&ev, (1, 3), 0, 1000, &cfg).unwrap();
        assert!((f[0].pos[[0, 1]] - 2.5).abs() < 1e-12);
        assert!((f[1].neg[[0, 2]] - 2.5 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((f[1].neg[[0, 2]] / 2.5 - 0.6065).abs() < 1e-4);
        assert_eq!(f[0].neg.sum(), 0.0);
    }

    #[test]
    fn gaussian_converges_to_count_for_wide_sigma() {
        let shape = (8, 8);
        let ev = random_stream(500, shape, 10_000, 11);
        let lambda = 0.7;
        let cfg = EncoderConfig {
            num_bins: 4,
            sigma: 1e6 * 10_000.0,
            lambda,
        };
        let g = encode_gaussian(&ev, shape, 0, 10_000, &cfg).unwrap();
        let c = encode_count(&ev, shape, 0, 10_000, 4).unwrap();
        for (a, b) in g.iter().zip(&c) {
            for (x, y) in a.pos.iter().zip(b.pos.iter()).chain(a.neg.iter().zip(b.neg.iter())) {
                assert!((x - lambda * y).abs() < 1e-3 * lambda);
            }
        }
    }

    #[test]
    fn splat_integer_and_half() {
        let img = splat_iwe(&[SplatPoint { x: 5.0, y: 5.0, weight: 1.0 }], (10, 10));
        assert_eq!(img[[5, 5]], 1.0);
        assert_eq!(img.sum(), 1.0);
        let img = splat_iwe(&[SplatPoint { x: 5.5, y: 5.0, weight: 1.0 }], (10, 10));
        assert_eq!(img[[5, 5]], 0.5);
        assert_eq!(img[[5, 6]], 0.5);
        let img = splat_iwe(&[SplatPoint { x: -3.0, y: 4.0, weight: 1.0 }], (10, 10));
        assert_eq!(img.sum(), 0.0);
    }

    #[test]
    fn splat_mass_conservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = (16, 20);
        let pts: Vec<_> = (0..2000)
            .map(|_| SplatPoint {
                x: rng.gen_range(-3.0..23.0),
                y: rng.gen_range(-3.0..19.0),
                weight: rng.gen_range(0.1..2.0),
            })
            .collect();
        let inside: f64 = pts
            .iter()
            .filter(|p| p.x >= 0.0 && p.x <= 19.0 && p.y >= 0.0 && p.y <= 15.0)
            .map(|p| p.weight)
            .sum();
        let inner: Vec<_> = pts
            .iter()
            .copied()
            .filter(|p| p.x >= 0.0 && p.x <= 19.0 && p.y >= 0.0 && p.y <= 15.0)
            .collect();
        let img = splat_iwe(&inner, shape);
        assert!((img.sum() - inside).abs() <= 1e-9 * inside);
        assert!(splat_iwe(&pts, shape).sum() >= inside - 1e-9);
    }
}
