//! Count and Gaussian encodings of one window, and a bilinear splat.
//!
//!     cargo run --example encoding

use evkit::encode::{encode_count, encode_gaussian, splat_iwe, EncoderConfig, SplatPoint};
use evkit::EventStream;

fn main() -> evkit::Result<()> {
    let mut events = EventStream::default();
    for i in 0..1000i64 {
        events.push((i % 8) as u16, (i / 8 % 8) as u16, i * 100, i % 3 != 0);
    }
    let shape = (8, 8);
    let counts = encode_count(&events, shape, 0, 100_000, 4)?;
    for f in &counts {
        println!("count bin [{:>6}, {:>6}): +{} -{}", f.t0, f.t1, f.pos.sum(), f.neg.sum());
    }
    let config = EncoderConfig { num_bins: 4, sigma: 5_000.0, lambda: 1.0 };
    for f in encode_gaussian(&events, shape, 0, 100_000, &config)? {
        println!("gaussian bin [{:>6}, {:>6}): +{:.2} -{:.2}", f.t0, f.t1, f.pos.sum(), f.neg.sum());
    }
    let iwe = splat_iwe(&[SplatPoint { x: 2.25, y: 3.5, weight: 1.0 }], shape);
    println!("splat of (2.25, 3.5):\n{:.3}", iwe.slice(ndarray::s![2..6, 1..5]));
    Ok(())
}
