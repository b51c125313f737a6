//! Desk-scale benchmarks for proxyflow: task pipelining with futures,
//! streaming with decoupled metadata, and memory use under ownership.
//!
//! Every benchmark runs either on the wall clock, against a real store and
//! a local thread-pool engine, or on a simulated clock that replays the
//! same schedule deterministically.

pub mod config;
pub mod emit;
pub mod env;
pub mod error;
pub mod memory;
pub mod peer;
pub mod pipeline;
pub mod record;
pub mod recording;
pub mod sim;
pub mod stream;

pub use config::{Backend, BenchConfig, Benchmark, MemoryMode, PipelineMode, StreamMode};
pub use error::{BenchError, Result};
pub use memory::{run_memory, MemoryRun};
pub use pipeline::{run_pipeline, PipelineRun};
pub use stream::{run_stream, StreamRun};
