//! Self-tuning configuration knobs.
//!
//! A knob's value is adjusted at run time by an integral controller whose
//! gain, pole and virtual goal are synthesized from profiling samples. The
//! controller and profiler are generic over the float type; the aliases below
//! fix it to `f64` or `f32`.

pub mod config_io;
pub mod controller;
pub mod error;
pub mod knob;
pub mod profiler;
pub mod scalar;

pub use controller::{
    compute_pole, compute_virtual_goal, control_step, Clamp, ControllerParams, ControllerState,
    Step, SynthesisReport,
};
pub use error::{Error, Result};
pub use knob::{AnyKnob, GoalRegistry, GoalSpec, IndirectKnob, Knob, KnobBuilder, ProfileSink};
pub use profiler::{
    compute_delta, compute_lambda, fit_alpha, group_stats, synthesize, GroupStats, ProfileSample,
    ProfileSet,
};
pub use scalar::Scalar;

pub type ControllerParamsF64 = ControllerParams<f64>;
pub type ControllerStateF64 = ControllerState<f64>;
pub type SynthesisReportF64 = SynthesisReport<f64>;
pub type ProfileSampleF64 = ProfileSample<f64>;
pub type GroupStatsF64 = GroupStats<f64>;
pub type KnobF64 = Knob<f64>;
pub type IndirectKnobF64 = IndirectKnob<f64>;

pub type ControllerParamsF32 = ControllerParams<f32>;
pub type ControllerStateF32 = ControllerState<f32>;
pub type SynthesisReportF32 = SynthesisReport<f32>;
pub type ProfileSampleF32 = ProfileSample<f32>;
pub type GroupStatsF32 = GroupStats<f32>;
pub type KnobF32 = Knob<f32>;
pub type IndirectKnobF32 = IndirectKnob<f32>;
