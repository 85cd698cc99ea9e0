//! Latency and detection-quality model for offloading camera perception from a
//! vehicle to an edge host or the cloud over a C-V2X link.
//!
//! The crate is organised bottom-up:
//!
//! * [`eval`] scores detections against ground truth (IoU, greedy matching,
//!   precision-recall, AP@50, mAP).
//! * [`dataset`] ingests normalized label files, projects 3D boxes into the
//!   image and counts instances per split.
//! * [`compression`] maps a codec setting to an expected payload size and
//!   codec time through measured size curves.
//! * [`network`] turns a payload into packetized transfer delay and frame
//!   delivery probability, and fits channel parameters to observed totals.
//! * [`pipeline`] composes the above into the per-frame end-to-end delay.
//! * [`tradeoff`] joins delay with mAP, filters the Pareto frontier and picks
//!   a strategy under a latency budget.
//! * [`presets`] carries the reference measurements (platform profiles,
//!   channel parameters, size curves and published quality figures).

pub mod compression;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod network;
pub mod pipeline;
pub mod presets;
pub mod tradeoff;

pub use error::{Error, Result};
