//! FIFO-connected stage graphs: construction, functional streaming execution
//! and cycle-level simulation.

mod exec;
mod sim;
mod spec;
mod stream;

pub use exec::{execute_streaming, execute_streaming_with, Scheduler};
pub use sim::{simulate_cycles, CycleReport, SimOptions, StageCycles};
pub use spec::{
    build_pipeline, FifoSpec, Granularity, PipelineSpec, StageKind, StageSpec, StreamKind,
    DEFAULT_FIFO_CAPACITY,
};
