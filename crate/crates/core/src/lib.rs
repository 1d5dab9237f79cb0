//! Cycle-driven simulation of a stateful layer-4 load balancer, in a
//! software-only variant and a variant that offloads connection matching to
//! an emulated NIC exact-match table, with busy-poll utilization metrics and
//! an experiment harness.

pub mod cost;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nic;
pub mod pipeline;
pub mod tables;
pub mod trafficgen;
pub mod types;

pub use cost::{charge, CostModel, CycleClock, Cycles, OpKind};
pub use error::{Error, Result};
pub use metrics::{compute_util, compute_util_plus, UtilConfig, UtilCounters};
pub use nic::{nic_latency_us, HardwareMatchTable, Nic, NicConfig, NicQueues, QueueId};
pub use pipeline::{LoadBalancer, Mode, PipelineConfig, RunOptions, RunStats, StopAt};
pub use tables::{ConnectionTable, VipTable};
pub use types::{hash_five_tuple, rewrite_packet, Dip, FiveTuple, Packet, Protocol, Vip};
