//! Error metrics for a perturbed flow field.
//!
//!     cargo run --example metrics

use evkit::metrics::{aae, aee, event_mask, xpe, MetricsAccumulator};
use evkit::{EventStream, FlowField};

fn main() -> evkit::Result<()> {
    let shape = (16, 16);
    let gt = FlowField::constant(shape, 3.0, 0.0, 0, 1);
    let mut pred = gt.clone();
    // top quarter points down instead of right
    pred.u.slice_mut(ndarray::s![..4, ..]).fill(0.0);
    pred.v.slice_mut(ndarray::s![..4, ..]).fill(3.0);
    let mut events = EventStream::default();
    for i in 0..128u16 {
        events.push(i % 16, i / 16 * 2, i as i64, true);
    }
    let mask = event_mask(&events, shape);
    println!("AEE {:.3}", aee(&pred, &gt, &mask)?);
    println!("AAE {:.3} rad", aae(&pred, &gt, &mask)?);
    for t in [1.0, 3.0] {
        println!("{t}PE {:.2}%", xpe(&pred, &gt, &mask, t)?);
    }
    let mut acc = MetricsAccumulator::new(&[1.0, 3.0]);
    acc.add(&pred, &gt, &mask)?;
    acc.add(&gt, &gt, &mask)?;
    println!("{}", serde_json::to_string_pretty(&acc.report())?);
    Ok(())
}
