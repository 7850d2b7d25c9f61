//! Augmentations on a simulated sequence.
//!
//!     cargo run --release --example augmentation

use evkit::augment::{
    flip_polarity, inject_noise, random_crop, spatial_flip, temporal_reverse, time_warp, FlipAxis, Sequence,
};
use evkit::simgen::{simulate, EventModelOptions, Motion, Pattern, SceneSpec};
use evkit::SensorProps;

fn main() -> evkit::Result<()> {
    let sensor = SensorProps::with_size(48, 32);
    let spec = SceneSpec {
        pattern: Pattern::Checkerboard { cell: 6.0 },
        motion: Motion::Translation { vx: 50.0, vy: 0.0 },
        duration: 0.08,
        sim_rate: 1000.0,
        frame_rate: 25.0,
        flow_rate: 25.0,
        sensor: sensor.clone(),
        seed: 0,
        events: EventModelOptions::default(),
    };
    let (events, grays, flows) = simulate(&spec)?;
    let seq = Sequence { events, grays, flows: flows.fields };
    let shape = sensor.shape();
    println!("source: {} events", seq.events.len());

    let warped = time_warp(&seq.events, 0.5)?;
    println!("time warp x0.5: last t {:?} -> {:?}", seq.events.last_ts(), warped.last_ts());
    let noisy = inject_noise(&seq.events, shape, 200.0, 7)?;
    println!("noise 200 ev/px/s: +{} events", noisy.len() - seq.events.len());
    let flipped = flip_polarity(&seq.events);
    println!("polarity flip: {} positive -> {}", seq.events.ps.iter().filter(|p| **p).count(), flipped.ps.iter().filter(|p| **p).count());
    let reversed = temporal_reverse(&seq.events);
    println!("reverse twice is identity: {}", temporal_reverse(&reversed) == seq.events);
    let mirrored = spatial_flip(&seq, shape, FlipAxis::Horizontal)?;
    println!("horizontal flip: flow u {} -> {}", seq.flows[0].u[[0, 0]], mirrored.flows[0].u[[0, 0]]);
    let crop = random_crop(&seq, &sensor, 24, 16, None, 3)?;
    println!("crop {:?}: {} events, {}x{}", crop.rect, crop.seq.events.len(), crop.props.width, crop.props.height);
    Ok(())
}
