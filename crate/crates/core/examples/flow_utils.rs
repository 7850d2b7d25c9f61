//! Flow inversion, retiming and accumulation.
//!
//!     cargo run --example flow_utils

use evkit::flow::{accumulate, invert_flow, scale_flow, synchronize};
use evkit::FlowField;
use ndarray::Array2;

fn main() -> evkit::Result<()> {
    let shape = (32, 32);
    let constant = FlowField::constant(shape, 2.0, -1.0, 0, 10_000);
    let inv = invert_flow(&constant);
    println!("inverse of (2, -1) at centre: ({:.3}, {:.3})", inv.u[[16, 16]], inv.v[[16, 16]]);

    // smooth rotation-like field
    let u = Array2::from_shape_fn(shape, |(y, _)| 0.05 * (y as f64 - 15.5));
    let v = Array2::from_shape_fn(shape, |(_, x)| -0.05 * (x as f64 - 15.5));
    let field = FlowField::new(u, v, 0, 10_000)?;
    let back = invert_flow(&invert_flow(&field));
    let err = (&back.u - &field.u).mapv(f64::abs).mean().unwrap_or(0.0);
    println!("double inversion mean |du|: {err:.4}");

    let half = scale_flow(&field, 0, 5_000)?;
    println!("scaled to half interval: u[0,0] {:.3} -> {:.3}", field.u[[0, 0]], half.u[[0, 0]]);

    let second = FlowField::constant(shape, 1.0, 0.0, 10_000, 20_000);
    let total = accumulate(&[constant.clone(), second.clone()])?;
    println!("accumulated (2,-1) then (1,0): ({}, {})", total.u[[5, 5]], total.v[[5, 5]]);
    let mid = synchronize(&[constant, second], 5_000, 15_000)?;
    println!("synchronized [5, 15] ms: ({}, {})", mid.u[[5, 5]], mid.v[[5, 5]]);
    Ok(())
}
