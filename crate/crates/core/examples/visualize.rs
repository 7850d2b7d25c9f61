//! Exports overlay, flow and encoded PNG sequences of a simulated scene.
//!
//!     cargo run --release --example visualize

use evkit::simgen::{make_dataset, EventModelOptions, Motion, Pattern, SceneSpec};
use evkit::store::{self, Stride, WriteOptions};
use evkit::viz::{export_events_csv, export_sequence, ExportKind};
use evkit::SensorProps;

fn main() -> evkit::Result<()> {
    let spec = SceneSpec {
        pattern: Pattern::Sinusoid { period: 12.0 },
        motion: Motion::Rotation { omega: 1.5 },
        duration: 0.2,
        sim_rate: 1000.0,
        frame_rate: 25.0,
        flow_rate: 25.0,
        sensor: SensorProps::with_size(80, 60),
        seed: 0,
        events: EventModelOptions::default(),
    };
    let root = std::env::temp_dir().join("evkit_visualize");
    make_dataset(&spec, root.join("data"), WriteOptions::default())?;
    let reader = store::open(root.join("data"))?;
    for (kind, name) in [
        (ExportKind::Overlay, "overlay"),
        (ExportKind::Flow, "flow"),
        (ExportKind::Encoded, "encoded"),
    ] {
        let files = export_sequence(&reader, Stride::GrayFrames(1), root.join(name), kind)?;
        println!("{name}: {} frames", files.len());
    }
    export_events_csv(&reader.read_events(0..reader.len())?, root.join("events.csv"))?;
    println!("written under {}", root.display());
    Ok(())
}
