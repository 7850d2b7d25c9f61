//! Flow evaluation on event pixels: endpoint error, angular error and
//! outlier percentages, with exact pixel-weighted accumulation.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Reader;
use crate::types::{EventStream, FlowField};

/// Vectors shorter than this (px) have no defined direction and are left
/// out of the angular error.
pub const ANGLE_CUTOFF: f64 = 1e-6;

/// True exactly at pixels that saw at least one event.
pub fn event_mask(events: &EventStream, shape: (usize, usize)) -> Array2<bool> {
    let mut mask = Array2::from_elem(shape, false);
    for (x, y) in events.xs.iter().zip(&events.ys) {
        if let Some(m) = mask.get_mut([*y as usize, *x as usize]) {
            *m = true;
        }
    }
    mask
}

fn check_shapes(pred: &FlowField, gt: &FlowField, mask: &Array2<bool>) -> Result<()> {
    for shape in [gt.shape(), mask.dim()] {
        if shape != pred.shape() {
            return Err(Error::ShapeMismatch {
                expected: pred.shape(),
                actual: shape,
            });
        }
    }
    Ok(())
}

fn masked<'a>(
    pred: &'a FlowField,
    gt: &'a FlowField,
    mask: &'a Array2<bool>,
) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + 'a {
    mask.indexed_iter().filter(|(_, &m)| m).map(move |(idx, _)| {
        (
            (pred.u[idx], pred.v[idx]),
            (gt.u[idx], gt.v[idx]),
        )
    })
}

fn endpoint_error(p: (f64, f64), g: (f64, f64)) -> f64 {
    (p.0 - g.0).hypot(p.1 - g.1)
}

/// Angle between two 2-D vectors in `[0, π]`, or `None` if either is
/// shorter than [`ANGLE_CUTOFF`].
fn vector_angle(p: (f64, f64), g: (f64, f64)) -> Option<f64> {
    if p.0.hypot(p.1) < ANGLE_CUTOFF || g.0.hypot(g.1) < ANGLE_CUTOFF {
        return None;
    }
    let cross = p.0 * g.1 - p.1 * g.0;
    let dot = p.0 * g.0 + p.1 * g.1;
    Some(cross.abs().atan2(dot))
}

/// Average endpoint error over masked pixels.
pub fn aee(pred: &FlowField, gt: &FlowField, mask: &Array2<bool>) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let (sum, n) = masked(pred, gt, mask).fold((0.0, 0usize), |(s, n), (p, g)| {
        (s + endpoint_error(p, g), n + 1)
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Average angular error in radians over masked pixels where both vectors
/// are longer than [`ANGLE_CUTOFF`].
pub fn aae(pred: &FlowField, gt: &FlowField, mask: &Array2<bool>) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let (sum, n) = masked(pred, gt, mask)
        .filter_map(|(p, g)| vector_angle(p, g))
        .fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Percentage of masked pixels whose endpoint error exceeds `threshold` px.
pub fn xpe(pred: &FlowField, gt: &FlowField, mask: &Array2<bool>, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput("outlier threshold must be > 0".into()));
    }
    check_shapes(pred, gt, mask)?;
    let (over, n) = masked(pred, gt, mask).fold((0usize, 0usize), |(o, n), (p, g)| {
        (o + (endpoint_error(p, g) > threshold) as usize, n + 1)
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(100.0 * over as f64 / n as f64)
}

/// Outlier label such as `"3PE"` or `"0.5PE"`.
pub fn outlier_label(threshold: f64) -> String {
    format!("{threshold}PE")
}

/// Running totals over many slices. Merging is associative, and the report
/// equals the metrics over the union of all masked pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    pub sum_epe: f64,
    pub sum_angle: f64,
    pub angle_pixels: u64,
    pub excluded_angle_pixels: u64,
    pub thresholds: Vec<f64>,
    pub outlier_counts: Vec<u64>,
    pub n_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub aee: f64,
    /// `None` when no pixel had a defined angle.
    pub aae_deg: Option<f64>,
    pub n_pixels: u64,
    pub outliers: BTreeMap<String, f64>,
    pub excluded_angle_pixels: u64,
}

impl MetricsAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            sum_epe: 0.0,
            sum_angle: 0.0,
            angle_pixels: 0,
            excluded_angle_pixels: 0,
            thresholds: thresholds.to_vec(),
            outlier_counts: vec![0; thresholds.len()],
            n_pixels: 0,
        }
    }

    pub fn add(&mut self, pred: &FlowField, gt: &FlowField, mask: &Array2<bool>) -> Result<()> {
        check_shapes(pred, gt, mask)?;
        for (p, g) in masked(pred, gt, mask) {
            let epe = endpoint_error(p, g);
            self.sum_epe += epe;
            self.n_pixels += 1;
            match vector_angle(p, g) {
                Some(a) => {
                    self.sum_angle += a;
                    self.angle_pixels += 1;
                }
                None => self.excluded_angle_pixels += 1,
            }
            for (count, &t) in self.outlier_counts.iter_mut().zip(&self.thresholds) {
                *count += (epe > t) as u64;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) -> Result<()> {
        if self.thresholds != other.thresholds {
            return Err(Error::InvalidInput("accumulators use different thresholds".into()));
        }
        self.sum_epe += other.sum_epe;
        self.sum_angle += other.sum_angle;
        self.angle_pixels += other.angle_pixels;
        self.excluded_angle_pixels += other.excluded_angle_pixels;
        self.n_pixels += other.n_pixels;
        for (a, b) in self.outlier_counts.iter_mut().zip(&other.outlier_counts) {
            *a += b;
        }
        Ok(())
    }

    /// `None` means no pixel has been accumulated yet.
    pub fn report(&self) -> Option<MetricsSummary> {
        if self.n_pixels == 0 {
            return None;
        }
        let n = self.n_pixels as f64;
        Some(MetricsSummary {
            aee: self.sum_epe / n,
            aae_deg: (self.angle_pixels > 0)
                .then(|| (self.sum_angle / self.angle_pixels as f64).to_degrees()),
            n_pixels: self.n_pixels,
            outliers: self
                .thresholds
                .iter()
                .zip(&self.outlier_counts)
                .map(|(&t, &c)| (outlier_label(t), 100.0 * c as f64 / n))
                .collect(),
            excluded_angle_pixels: self.excluded_angle_pixels,
        })
    }
}

/// Scores the flow of `pred` against every stored flow interval of `gt`,
/// masked by the events `gt` holds in that interval. Predictions are
/// resampled to each interval. `None` when no interval has events.
pub fn evaluate_readers(pred: &Reader, gt: &Reader, thresholds: &[f64]) -> Result<Option<MetricsSummary>> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: gt.shape(),
            actual: pred.shape(),
        });
    }
    let mut acc = MetricsAccumulator::new(thresholds);
    for (i, &(t0, t1)) in gt.flow_intervals().iter().enumerate() {
        let events = gt.read_events(gt.event_index_at(t0)?..gt.event_index_at(t1)?)?;
        if events.is_empty() {
            continue;
        }
        let mask = event_mask(&events, gt.shape());
        acc.add(&pred.synchronized_flow(t0, t1)?, &gt.read_flow(i)?, &mask)?;
    }
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(shape: (usize, usize), rng: &mut ChaCha8Rng) -> FlowField {
        FlowField {
            u: Array2::from_shape_fn(shape, |_| rng.gen_range(-4.0..4.0)),
            v: Array2::from_shape_fn(shape, |_| rng.gen_range(-4.0..4.0)),
            t0: 0,
            t1: 1,
        }
    }

    fn random_mask(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<bool> {
        Array2::from_shape_fn(shape, |_| rng.gen_bool(0.4))
    }

    #[test]
    fn mask_basics() {
        let shape = (6, 7);
        assert!(!event_mask(&EventStream::default(), shape).iter().any(|&m| m));
        let ev = EventStream::new(vec![3, 3], vec![4, 4], vec![0, 1], vec![true, false]);
        let m = event_mask(&ev, shape);
        assert_eq!(m.iter().filter(|&&b| b).count(), 1);
        assert!(m[[4, 3]]);
    }

    #[test]
    fn mask_counts_distinct_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 400;
        let ev = EventStream::new(
            (0..n).map(|_| rng.gen_range(0..20)).collect(),
            (0..n).map(|_| rng.gen_range(0..15)).collect(),
            (0..n as i64).collect(),
            vec![true; n],
        );
        let distinct: std::collections::HashSet<_> = ev.xs.iter().zip(&ev.ys).collect();
        let m = event_mask(&ev, (15, 20));
        assert_eq!(m.iter().filter(|&&b| b).count(), distinct.len());
    }

    #[test]
    fn analytic_cases() {
        let shape = (1, 1);
        let mask = Array2::from_elem(shape, true);
        let zero = FlowField::zeros(shape, 0, 1);
        let ux = FlowField::constant(shape, 1.0, 0.0, 0, 1);
        let uy = FlowField::constant(shape, 0.0, 1.0, 0, 1);
        assert_eq!(aee(&ux, &ux, &mask).unwrap(), 0.0);
        assert_eq!(aee(&ux, &zero, &mask).unwrap(), 1.0);
        assert!((aae(&ux, &uy, &mask).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let twice = FlowField::constant(shape, 2.0, 0.0, 0, 1);
        assert_eq!(aae(&twice, &ux, &mask).unwrap(), 0.0);
        assert_eq!(xpe(&ux, &ux, &mask, 3.0).unwrap(), 0.0);
        assert!(matches!(aae(&zero, &ux, &mask), Err(Error::EmptyMask)));
        let none = Array2::from_elem(shape, false);
        assert!(matches!(aee(&ux, &ux, &none), Err(Error::EmptyMask)));
    }

    #[test]
    fn half_outliers() {
        let shape = (2, 2);
        let x = 1.5;
        let gt = FlowField::zeros(shape, 0, 1);
        let mut pred = gt.clone();
        pred.u[[0, 0]] = 2.0 * x;
        pred.u[[0, 1]] = 2.0 * x;
        let mask = Array2::from_elem(shape, true);
        assert_eq!(xpe(&pred, &gt, &mask, x).unwrap(), 50.0);
    }

    #[test]
    fn loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = (17, 23);
        for _ in 0..5 {
            let p = random_field(shape, &mut rng);
            let g = random_field(shape, &mut rng);
            let m = random_mask(shape, &mut rng);
            let (mut se, mut sa, mut n, mut out) = (0.0, 0.0, 0, 0);
            for y in 0..shape.0 {
                for x in 0..shape.1 {
                    if !m[[y, x]] {
                        continue;
                    }
                    let du = p.u[[y, x]] - g.u[[y, x]];
                    let dv = p.v[[y, x]] - g.v[[y, x]];
                    let e = (du * du + dv * dv).sqrt();
                    se += e;
                    if e > 3.0 {
                        out += 1;
                    }
                    // difference of polar angles, wrapped to [0, π]
                    let mut d = (p.v[[y, x]].atan2(p.u[[y, x]]) - g.v[[y, x]].atan2(g.u[[y, x]])).abs();
                    if d > std::f64::consts::PI {
                        d = 2.0 * std::f64::consts::PI - d;
                    }
                    sa += d;
                    n += 1;
                }
            }
            assert!((aee(&p, &g, &m).unwrap() - se / n as f64).abs() < 1e-9);
            assert!((aae(&p, &g, &m).unwrap() - sa / n as f64).abs() < 1e-9);
            assert_eq!(xpe(&p, &g, &m, 3.0).unwrap(), 100.0 * out as f64 / n as f64);
        }
    }

    #[test]
    fn scale_and_monotonicity_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = (9, 9);
        let p = random_field(shape, &mut rng);
        let g = random_field(shape, &mut rng);
        let m = random_mask(shape, &mut rng);
        let base = aee(&p, &g, &m).unwrap();
        for c in [-2.5, 0.5, 3.0] {
            let ps = FlowField { u: &p.u * c, v: &p.v * c, ..p.clone() };
            let gs = FlowField { u: &g.u * c, v: &g.v * c, ..g.clone() };
            assert!((aee(&ps, &gs, &m).unwrap() - c.abs() * base).abs() < 1e-9);
        }
        let k = Array2::from_shape_fn(shape, |_| rng.gen_range(0.1..5.0));
        let ps = FlowField { u: &p.u * &k, v: &p.v * &k, ..p.clone() };
        let gs = FlowField { u: &g.u * &k, v: &g.v * &k, ..g.clone() };
        assert!((aae(&ps, &gs, &m).unwrap() - aae(&p, &g, &m).unwrap()).abs() < 1e-9);
        let mut last = 100.0;
        for x in [0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
            let v = xpe(&p, &g, &m, x).unwrap();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn accumulator_matches_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let shape = (10, 12);
        let thresholds = [1.0, 3.0];
        let slices: Vec<_> = (0..2)
            .map(|_| {
                (
                    random_field(shape, &mut rng),
                    random_field(shape, &mut rng),
                    random_mask(shape, &mut rng),
                )
            })
            .collect();
        let mut acc = MetricsAccumulator::new(&thresholds);
        assert!(acc.report().is_none());
        for (p, g, m) in &slices {
            acc.add(p, g, m).unwrap();
        }
        // one field twice as tall holding both slices
        let stack = |a: &Array2<f64>, b: &Array2<f64>| ndarray::concatenate![ndarray::Axis(0), *a, *b];
        let (p0, g0, m0) = &slices[0];
        let (p1, g1, m1) = &slices[1];
        let pc = FlowField { u: stack(&p0.u, &p1.u), v: stack(&p0.v, &p1.v), t0: 0, t1: 1 };
        let gc = FlowField { u: stack(&g0.u, &g1.u), v: stack(&g0.v, &g1.v), t0: 0, t1: 1 };
        let mc = ndarray::concatenate![ndarray::Axis(0), *m0, *m1];
        let r = acc.report().unwrap();
        assert!((r.aee - aee(&pc, &gc, &mc).unwrap()).abs() < 1e-9);
        assert!((r.aae_deg.unwrap() - aae(&pc, &gc, &mc).unwrap().to_degrees()).abs() < 1e-9);
        assert!((r.outliers["3PE"] - xpe(&pc, &gc, &mc, 3.0).unwrap()).abs() < 1e-9);
        assert!((r.outliers["1PE"] - xpe(&pc, &gc, &mc, 1.0).unwrap()).abs() < 1e-9);

        let mut single = MetricsAccumulator::new(&thresholds);
        single.add(p0, g0, m0).unwrap();
        assert!((single.report().unwrap().aee - aee(p0, g0, m0).unwrap()).abs() < 1e-12);
        let mut other = MetricsAccumulator::new(&thresholds);
        other.add(p1, g1, m1).unwrap();
        single.merge(&other).unwrap();
        assert_eq!(single.n_pixels, acc.n_pixels);
        assert_eq!(single.outlier_counts, acc.outlier_counts);
        assert!((single.sum_angle - acc.sum_angle).abs() < 1e-9);
        assert!((single.sum_epe - acc.sum_epe).abs() < 1e-9);
    }
}
