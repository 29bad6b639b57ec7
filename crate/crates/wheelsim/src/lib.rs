//! Simulation of an integrated wheel-sensor node and its wireless telemetry link.
//!
//! The library models the full path from sensor sampling to recorded log:
//!
//! - [`sensor`] — sensor specifications, data-rate arithmetic and deterministic
//!   synthetic signal generation for the four on-wheel sensors (acoustic
//!   module, IMU, temperature/pressure, battery state of charge).
//! - [`sched`] — a deterministic tick-driven simulation of a dual-core
//!   fixed-priority preemptive scheduler with queues and event bits.
//! - [`wire`] / [`pubsub`] — a lightweight reliable publish-subscribe engine
//!   with sequence-numbered writers, per-reader proxies and HEARTBEAT/ACKNACK
//!   repair, plus its bit-exact datagram codec.
//! - [`transport`] — a seeded simulated wireless channel (latency, jitter,
//!   loss, reordering) and a real UDP datagram transport.
//! - [`node`] — the wheel node itself: five periodic sensor/publisher tasks on
//!   two cores producing one aggregated message stream, and the experiment
//!   runner tying node, channel and recorder together.
//! - [`recorder`] — subscriber-side recording with buffered and streaming sink
//!   modes and a self-describing binary log format (plus JSONL export).
//! - [`analysis`] — per-sensor gap/loss/throughput statistics over recorded
//!   logs and the requirements-driven technology/protocol candidate filter.
//! - [`batch`] — running many independent experiments at once (data-parallel
//!   when the `parallel` feature is enabled, sequential otherwise).
//!
//! Every simulated run is fully deterministic: one logical tick loop owns all
//! state and all randomness flows from explicit seeds. Parallelism only ever
//! spans *independent* runs, never the inside of a run.

pub mod analysis;
pub mod batch;
pub mod message;
pub mod node;
pub mod pubsub;
pub mod recorder;
pub mod sched;
pub mod sensor;
pub mod transport;
pub mod wire;

/// Scheduler time quantum, in integer milliseconds (the tick rate is fixed at
/// 1000 Hz, so one tick is one millisecond).
pub type Tick = u64;
