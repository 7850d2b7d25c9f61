//! Time, event-index and gray-frame slicing plus strided iteration, with
//! the lazy-decompression counter.
//!
//!     cargo run --example slicing

use evkit::store::{self, write_sequence, Codec, ContainerProps, Stride, WriteOptions};
use evkit::{EventStream, GraySequence, SensorProps};
use ndarray::Array2;

fn main() -> evkit::Result<()> {
    let mut events = EventStream::default();
    // 200k events over two seconds
    for i in 0..200_000i64 {
        events.push((i % 64) as u16, (i / 64 % 48) as u16, i * 10, i % 2 == 0);
    }
    let grays = GraySequence::new(
        (0..=50).map(|_| Array2::zeros((48, 64))).collect(),
        (0..=50).map(|k| k * 40_000).collect(),
    );
    let path = std::env::temp_dir().join("evkit_slicing");
    write_sequence(
        &events,
        &grays,
        &[],
        &ContainerProps::new(SensorProps::with_size(64, 48)),
        &path,
        WriteOptions::new(Codec::Zstd, 10_000),
    )?;
    let reader = store::open(&path)?;

    reader.reset_chunk_counter();
    let s = reader.slice_by_time(500, 520)?;
    println!(
        "time [500, 520) ms: {} events from index {}, {} chunks decompressed",
        s.events.len(),
        s.first_index,
        reader.chunks_decompressed()
    );
    let s = reader.slice_by_event_index(1000, 1010)?;
    println!("events [1000, 1010): t = {:?}", s.events.ts);
    let s = reader.slice_by_gray_index(3, 4)?;
    println!(
        "gray frames 3..4: [{}, {}) us, {} events, frames {:?} / {:?}",
        s.t0,
        s.t1,
        s.events.len(),
        s.gray_start.map(|g| g.index),
        s.gray_end.map(|g| g.index)
    );
    for stride in [Stride::Millis(250), Stride::Events(60_000), Stride::GrayFrames(10)] {
        let it = reader.iterate(stride)?;
        let total = it.total();
        let sizes = it.map(|s| s.map(|s| s.events.len())).collect::<evkit::Result<Vec<_>>>()?;
        println!("{stride:?}: {total} slices, sizes {sizes:?}");
    }
    Ok(())
}
