//! Writes a small synthetic sequence with every codec and reads it back.
//!
//!     cargo run --example store_roundtrip

use evkit::store::{self, read_all, write_sequence, Codec, ContainerProps, WriteOptions};
use evkit::{EventStream, FlowField, GraySequence, SensorProps};
use ndarray::Array2;

fn main() -> evkit::Result<()> {
    let sensor = SensorProps::with_size(32, 24);
    let mut events = EventStream::default();
    for i in 0..10_000u32 {
        events.push((i * 7 % 32) as u16, (i * 13 % 24) as u16, i as i64 * 10, i % 3 == 0);
    }
    let grays = GraySequence::new(
        (0..3).map(|k| Array2::from_elem((24, 32), 60 * k as u8)).collect(),
        vec![0, 40_000, 80_000],
    );
    let flows = vec![
        FlowField::constant((24, 32), 1.0, 0.0, 0, 40_000),
        FlowField::constant((24, 32), 0.5, -0.5, 40_000, 80_000),
    ];
    let dir = std::env::temp_dir().join("evkit_store_roundtrip");
    for codec in Codec::ALL {
        let path = dir.join(codec.name());
        let container = write_sequence(
            &events,
            &grays,
            &flows,
            &ContainerProps::new(sensor.clone()),
            &path,
            WriteOptions::new(codec, 4096),
        )?;
        let bytes: u64 = std::fs::read_dir(&container.path)?
            .map(|e| e.map(|e| e.metadata().map(|m| m.len()).unwrap_or(0)))
            .sum::<std::io::Result<u64>>()?;
        let reader = store::open(&path)?;
        let (e, g, f) = read_all(&reader)?;
        println!(
            "{:<8} {:>8} bytes  identical: {}",
            codec.name(),
            bytes,
            e == events && g == grays && f == flows
        );
    }
    Ok(())
}
