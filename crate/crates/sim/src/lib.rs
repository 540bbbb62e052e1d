//! Seeded discrete-time plants for exercising self-tuning knobs: a bounded
//! RPC queue, a flushed write buffer, and a request/response queue pair.
//! One tick is one simulated second.

pub mod bounded_queue;
pub mod dual_queue;
pub mod scenario;
pub mod workload;
pub mod write_buffer;

pub use bounded_queue::{BoundedQueueConfig, BoundedQueuePlant};
pub use dual_queue::{DualQueueConfig, DualQueuePlant, DualReading};
pub use scenario::{make_scenario, KnobSpec, Plant, PlantConfig, Scenario, PRESETS};
pub use workload::{BaseMemory, Phase, WorkloadSchedule};
pub use write_buffer::{WriteBufferConfig, WriteBufferPlant};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown scenario '{name}' (presets: {})", PRESETS.join(", "))]
    UnknownScenario { name: String },
    #[error("bad scenario override on line {line}: {msg}")]
    Override { line: usize, msg: String },
}

/// What a plant reports after one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReading {
    pub metric: f64,
    /// Quantity the knob bounds: queue length or buffer fill.
    pub deputy: f64,
    pub throughput_cum: f64,
    pub violation: bool,
}
