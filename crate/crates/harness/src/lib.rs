//! Experiment driver for self-tuning knobs on the simulated plants: profile,
//! synthesize, run under a control mode, sweep static settings, and compare
//! modes across seeds.

mod error;
mod experiment;
mod mode;
mod study;
mod trace;

pub use error::{Error, Result};
pub use experiment::{profile_knob, profile_sys_files, run, synthesize_file, RunOutcome, Summary};
pub use mode::Mode;
pub use study::{
    compare, parse_range, parse_seeds, sweep, Aggregate, CompareRow, CompareTable, SweepResult, SweepRow,
    DEFAULT_SWEEP_RANGE,
};
pub use trace::{write_trace, TraceRow, TRACE_HEADER};

use selftune_sim::{make_scenario, Scenario};

/// Resolve `spec` as a preset name, or else as a path to an override file.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    match make_scenario(spec) {
        Ok(s) => Ok(s),
        Err(e) => {
            let path = std::path::Path::new(spec);
            if !path.is_file() {
                return Err(e.into());
            }
            let text = selftune_core::config_io::read_text(path)?;
            Ok(Scenario::from_override_text(&text)?)
        }
    }
}

/// Default preset for a plant kind.
pub fn scenario_for_plant(plant: &str) -> Result<Scenario> {
    let name = match plant {
        "bounded-queue" => "hb3813-two-phase",
        "write-buffer" => "hb2149-goal-shift",
        "dual-queue" => "dualqueue-readwrite",
        _ => {
            return Err(Error::Usage(format!(
                "unknown plant '{plant}' (bounded-queue, write-buffer, dual-queue)"
            )))
        }
    };
    Ok(make_scenario(name)?)
}
