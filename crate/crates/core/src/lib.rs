//! Joint link scheduling and power allocation for interfering small cells.
//!
//! - [`topo`]: random drops and the channel model.
//! - [`linkmodel`]: schedule enumeration, per-schedule link problems, SINR and WSR.
//! - [`gp`]: successive-GP power control.
//! - [`nncore`]: dense network engine (forward, backprop, Adam, serialization).
//! - [`powernet`]: power-allocation network trained on GP labels.
//! - [`schednet`]: schedule-value network trained on power-network WSRs.
//! - [`harness`]: method implementations, timed benchmarks, CSV export.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linkmodel;
pub mod nncore;
pub mod powernet;
pub mod schednet;
pub mod topo;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use gp::{wsr_maximize, GpConfig, GpInit, GpObjective, GpResult};
pub use harness::{benchmark, run_method, BenchSeeds, MethodId, Models, RunReport};
pub use linkmodel::{
    build_link_problem, enumerate_schedules, evaluate, Direction, LinkChoice, LinkProblem,
    PowerAlloc, Schedule, ScheduleSpace,
};
pub use nncore::{MlpModel, MlpSpec, TrainConfig, TrainReport};
pub use powernet::{max_dnn_schedule, PowerNet};
pub use schednet::SchedNet;
pub use topo::{generate_many, generate_topology, NodeKind, SystemConfig, Topology};
