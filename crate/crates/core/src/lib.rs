//! Time-slotted input-queued crossbar switch scheduling simulator and
//! analysis toolkit.
//!
//! The crate models an N x N input-queued switch with virtual output
//! queues. Per time slot a scheduler computes a crossbar matching from the
//! queue state, matched head-of-line packets depart, and a stochastic
//! source adds arrivals. Schedulers: QPS-r (queue-proportional sampling
//! with r propose/accept iterations), iSLIP, maximum weight matching, and
//! random-order greedy maximal matching. The analysis module evaluates the
//! associated queue-length/delay bounds and provides an exact enumeration
//! oracle for one QPS round.

pub mod analysis;
pub mod error;
pub mod matrix;
pub mod sampling;
pub mod scheduler;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
pub use matrix::{
    apply_slot, departures_from, is_matching, is_maximal, ArrivalMatrix, DepartureMatrix,
    Matching, QueueMatrix,
};
pub use sampling::ProportionalSampler;
pub use scheduler::{Scheduler, SchedulerKind};
pub use sim::{run, throughput_search, Engine, SimConfig, SimResult, StoppingRule};
pub use traffic::{
    max_load_factor, pattern_matrix, rate_matrix, ArrivalSource, PatternKind, TrafficRateMatrix,
};
