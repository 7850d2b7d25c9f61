//! Estimates flow on simulated translating scenes and reports the error
//! against the exact ground truth.
//!
//!     cargo run --release --example contrast_max

use std::time::Instant;

use evkit::cmax::{estimate_flow, CmaxConfig};
use evkit::metrics::{aee, event_mask, xpe};
use evkit::simgen::{simulate, EventModelOptions, Motion, Pattern, SceneSpec};
use evkit::SensorProps;

fn main() -> evkit::Result<()> {
    let config = CmaxConfig::default();
    for (pattern, (du, dv)) in [
        (Pattern::Checkerboard { cell: 8.0 }, (3.0, -2.0)),
        (Pattern::GaussianBlobs { n: 40, radius: 2.0 }, (4.0, -3.0)),
        (Pattern::Checkerboard { cell: 6.0 }, (-4.0, 2.5)),
    ] {
        let spec = SceneSpec {
            pattern,
            // displacement per 40 ms slice
            motion: Motion::Translation { vx: du * 25.0, vy: dv * 25.0 },
            duration: 0.12,
            sim_rate: 1000.0,
            frame_rate: 25.0,
            flow_rate: 25.0,
            sensor: SensorProps {
                threshold_pos: 0.1,
                threshold_neg: 0.1,
                ..SensorProps::with_size(64, 64)
            },
            seed: 5,
            events: EventModelOptions::default(),
        };
        let (events, _, flows) = simulate(&spec)?;
        let gt = &flows.fields[1];
        let slice = events.between(gt.t0, gt.t1);
        let shape = (64, 64);
        let start = Instant::now();
        let est = estimate_flow(&slice, shape, gt.t0, gt.t1, &config)?;
        let mask = event_mask(&slice, shape);
        println!(
            "{:<40} events {:>6}  AEE {:.3}  3PE {:.2}%  objective {:.3} -> {:.3}  {:.2?}",
            format!("{:?}", spec.pattern),
            slice.len(),
            aee(&est.flow, gt, &mask)?,
            xpe(&est.flow, gt, &mask, 3.0)?,
            est.zero_objective,
            est.final_objective,
            start.elapsed()
        );
    }
    Ok(())
}
