//! Renders a rotating scene to a container and prints what was written.
//!
//!     cargo run --release --example simulate

use evkit::simgen::{make_dataset, SceneSpec};
use evkit::store::{self, WriteOptions};

const SPEC: &str = r#"{
    "pattern": {"type": "gaussian_blobs", "n": 25, "radius": 3.0},
    "motion": {"type": "rotation", "omega": 3.0},
    "duration": 0.2,
    "sim_rate": 1000.0,
    "frame_rate": 25.0,
    "flow_rate": 50.0,
    "sensor": {"width": 96, "height": 72, "threshold_pos": 0.15, "threshold_neg": 0.15},
    "seed": 11
}"#;

fn main() -> evkit::Result<()> {
    let spec = SceneSpec::from_json(SPEC)?;
    let path = std::env::temp_dir().join("evkit_simulate");
    make_dataset(&spec, &path, WriteOptions::default())?;
    let reader = store::open(&path)?;
    let sensor = &reader.props().sensor;
    println!(
        "{}x{}, thresholds {}/{}: {} events, {} gray frames, {} flow fields, {} ms",
        sensor.width,
        sensor.height,
        sensor.threshold_pos,
        sensor.threshold_neg,
        reader.len(),
        reader.num_gray(),
        reader.num_flows(),
        reader.duration_ms()
    );
    let f = reader.read_flow(0)?;
    println!("corner flow over first interval: ({:.3}, {:.3})", f.u[[0, 0]], f.v[[0, 0]]);
    println!("written to {}", path.display());
    Ok(())
}
