//! Distributed collaborative flow monitoring.
//!
//! A central controller spreads per-flow monitoring tasks over the switches
//! on each flow's path. Switches classify packets with a two-stage Bloom
//! filter (an admission filter in front of per-action filters), count with
//! Count-Min sketches, and sample at dyadic rates so that no packet is
//! sampled twice across switches. The `experiment` module drives whole-network
//! simulations of the scheme against monitor-everything and rule-aggregation
//! baselines; `dcm-sim` is the command line front end.

mod bloom;
mod cms;
mod controller;
mod error;
mod flow;
mod hash;
mod sampling;
mod switch;
mod topology;
mod trace;
mod two_stage;

pub mod cli;
pub mod experiment;

pub use self::bloom::{false_positive_rate, size_for, BloomFilter};
pub use self::cms::CountMinSketch;
pub use self::controller::{
    AuditSink, Controller, ControllerConfig, FilterSizing, InstallOp, MonitorTask,
};
pub use self::error::Error;
pub use self::flow::{ActionId, Epoch, FlowKey, PacketId};
pub use self::hash::hash128;
pub use self::sampling::{
    action_interval, packet_hash, rate_to_actions, should_sample, SampleRate,
};
pub use self::switch::{
    decode_install, encode_install, ActionKind, ActionSpec, MonitorEvent, MonitorEventKind,
    SwitchReport, SwitchState, SwitchStats, WildcardRule, RULE_BYTES, SAMPLE_RECORD_BYTES,
};
pub use self::topology::{HostId, SwitchId, Topology};
pub use self::trace::{
    host_ip, load_csv, synthesize, write_csv, FlowRecord, SizeDist, TraceSpec, TRACE_HEADER,
};
pub use self::two_stage::TwoStageFilter;

pub type Result<T> = std::result::Result<T, Error>;
