//! Event-camera data toolkit.
//!
//! * [`store`]: chunked, compressed columnar container with millisecond index
//!   maps, lazy readers, slicers and iterators.
//! * [`encode`]: count and Gaussian frame encoders, bilinear event splatting.
//! * [`augment`]: temporal and spatial augmentations that co-transform gray
//!   frames and flow.
//! * [`flow`]: inversion, scaling, composition and warping of flow fields.
//! * [`cmax`]: contrast-maximization flow estimation and its objectives and
//!   losses.
//! * [`metrics`]: AEE, AAE, outlier percentages and dataset accumulation.
//! * [`simgen`]: analytic moving scenes turned into events with exact
//!   ground-truth flow.
//! * [`viz`]: flow colouring, event overlays and PNG export.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod augment;
pub mod cmax;
pub mod encode;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod simgen;
pub mod store;
pub mod types;
pub mod viz;

pub use error::{Error, Result};
pub use types::{
    validate_stream, EncodedFrame, EventStream, FlowField, FlowSequence, GraySequence, SensorProps,
    ValidationReport, Violation, ViolationKind,
};
