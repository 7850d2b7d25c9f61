#![allow(dead_code)]

use evkit::store::ContainerProps;
use evkit::{EventStream, FlowField, GraySequence, SensorProps};
use ndarray::Array2;
use rand::Rng;

pub struct RandomSequence {
    pub events: EventStream,
    pub grays: GraySequence,
    pub flows: Vec<FlowField>,
    pub props: ContainerProps,
}

/// Sorted random events with duplicate timestamps, plus gray frames and
/// contiguous flow fields spanning the event extent at the sensor rates.
pub fn random_sequence<R: Rng>(rng: &mut R, n: usize, with_frames: bool) -> RandomSequence {
    let width = rng.gen_range(1..=64u16);
    let height = rng.gen_range(1..=48u16);
    let sensor = SensorProps {
        gray_rate_hz: 50.0,
        flow_rate_hz: 100.0,
        ..SensorProps::with_size(width, height)
    };
    let mut events = EventStream::with_capacity(n);
    let mut t = rng.gen_range(0..5_000i64);
    for _ in 0..n {
        t += match rng.gen_range(0..10) {
            0..=2 => 0,
            3..=8 => rng.gen_range(1..40),
            _ => rng.gen_range(40..3_000),
        };
        events.push(rng.gen_range(0..width), rng.gen_range(0..height), t, rng.gen_bool(0.5));
    }
    let (mut grays, mut flows) = (GraySequence::default(), Vec::new());
    if with_frames && n > 0 {
        let (first, last) = (events.ts[0], events.ts[n - 1]);
        let mut g = first;
        while g <= last {
            grays.ts.push(g);
            grays.frames.push(Array2::from_shape_fn(sensor.shape(), |_| rng.gen()));
            g += 20_000;
        }
        let mut f = first;
        while f < last {
            let shape = sensor.shape();
            let u = Array2::from_shape_fn(shape, |_| rng.gen_range(-3.0..3.0));
            let v = Array2::from_shape_fn(shape, |_| rng.gen_range(-3.0..3.0));
            flows.push(FlowField::new(u, v, f, f + 10_000).unwrap());
            f += 10_000;
        }
    }
    RandomSequence {
        events,
        grays,
        flows,
        props: ContainerProps::new(sensor),
    }
}

/// Linear-scan filter `lo <= ts < hi`, returning the index range.
pub fn scan(ts: &[i64], lo: i64, hi: i64) -> std::ops::Range<usize> {
    let start = ts.iter().take_while(|&&t| t < lo).count();
    let end = ts.iter().take_while(|&&t| t < hi).count().max(start);
    start..end
}

/// Smooth time-varying velocity in px per unit time.
pub fn velocity(x: f64, y: f64, t: f64) -> (f64, f64) {
    (1.5 + 0.5 * (y / 10.0 + 0.3 * t).sin(), 0.8 * (x / 12.0 - 0.2 * t).cos())
}

/// RK4 particle position after moving from `t0` to `t1`.
pub fn advect(mut x: f64, mut y: f64, t0: f64, t1: f64, steps: usize) -> (f64, f64) {
    let h = (t1 - t0) / steps as f64;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let (a1, b1) = velocity(x, y, t);
        let (a2, b2) = velocity(x + 0.5 * h * a1, y + 0.5 * h * b1, t + 0.5 * h);
        let (a3, b3) = velocity(x + 0.5 * h * a2, y + 0.5 * h * b2, t + 0.5 * h);
        let (a4, b4) = velocity(x + h * a3, y + h * b3, t + h);
        x += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        y += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    }
    (x, y)
}

/// Displacement field of [`velocity`] over unit interval `k`, stamped with
/// `[k * dt, (k + 1) * dt]` µs.
pub fn displacement_field(shape: (usize, usize), k: usize, dt: i64) -> FlowField {
    let mut u = Array2::zeros(shape);
    let mut v = Array2::zeros(shape);
    for ((y, x), out) in u.indexed_iter_mut() {
        let (px, py) = advect(x as f64, y as f64, k as f64, k as f64 + 1.0, 200);
        *out = px - x as f64;
        v[[y, x]] = py - y as f64;
    }
    FlowField::new(u, v, k as i64 * dt, (k as i64 + 1) * dt).unwrap()
}

/// `(mean, max)` endpoint error of chaining `fields` against direct
/// advection, over pixels whose whole path stays `margin` px inside.
pub fn accumulate_error(fields: &[FlowField], margin: f64) -> (f64, f64) {
    let total = evkit::flow::accumulate(fields).unwrap();
    let (h, w) = total.shape();
    let n = fields.len();
    let (mut sum, mut max, mut count) = (0.0f64, 0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (mut px, mut py) = (x as f64, y as f64);
            let mut inside = true;
            for k in 0..n {
                (px, py) = advect(px, py, k as f64, k as f64 + 1.0, 200);
                inside &= px >= margin && py >= margin && px <= (w - 1) as f64 - margin && py <= (h - 1) as f64 - margin;
            }
            if !inside {
                continue;
            }
            let e = (x as f64 + total.u[[y, x]] - px).hypot(y as f64 + total.v[[y, x]] - py);
            sum += e;
            max = max.max(e);
            count += 1;
        }
    }
    assert!(count > 0);
    (sum / count as f64, max)
}
