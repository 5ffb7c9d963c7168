//! Hierarchical multi-resource fair queueing for middlebox packet
//! processing.
//!
//! Middleboxes spend different amounts of different resources (CPU,
//! link bandwidth, ...) on each packet, and tenants arrange their flows in
//! weighted hierarchies. This crate implements dominant-resource fair
//! queueing over such hierarchies in two flavors — collapsing the tree into
//! corrected flat weights, or running dove-tailing DRFQ per sibling group —
//! together with the naive baselines they replace, start-of-service delay
//! bounds, ideal-share and worst-case-fairness analysis, and a deterministic
//! discrete-event simulator that drives all of it from scenario files.
//!
//! Entry points:
//!
//! * [`hierarchy::parse_hierarchy`] / [`hierarchy::HierarchySpec`] — the
//!   weighted tree;
//! * [`scheduler::build_scheduler`] — collapsed / dove-tailing H-DRFQ, the
//!   naive baselines and flat DRFQ behind one interface;
//! * [`sim::run`] — scenario execution producing a per-packet [`trace::Trace`];
//! * [`analysis`] — delay bounds, ideal shares, share-guarantee and
//!   strategy-proofness checks;
//! * [`presets`] — the canned experiments the `hdrfq` binary exposes.

pub mod analysis;
pub mod drfq;
pub mod error;
pub mod hierarchy;
pub mod presets;
pub mod profile;
pub mod randgen;
pub mod report;
pub mod scheduler;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
