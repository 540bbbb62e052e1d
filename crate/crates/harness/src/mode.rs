use std::fmt;
use std::str::FromStr;

use selftune_core::config_io::{format_real, parse_real};

use crate::Error;

/// How the knobs are driven during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Virtual goal plus context-aware poles.
    SmartConf,
    /// Every knob fixed at one value; no controller.
    Static(f64),
    /// Virtual goal with the regular pole only.
    SinglePole,
    /// Both poles, tracking the real goal.
    NoVirtualGoal,
}

impl Mode {
    pub fn uses_controller(&self) -> bool {
        !matches!(self, Mode::Static(_))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::SmartConf => f.write_str("smartconf"),
            Mode::Static(v) => write!(f, "static:{}", format_real(*v)),
            Mode::SinglePole => f.write_str("single-pole"),
            Mode::NoVirtualGoal => f.write_str("no-virtual-goal"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "smartconf" => Ok(Mode::SmartConf),
            "single-pole" => Ok(Mode::SinglePole),
            "no-virtual-goal" => Ok(Mode::NoVirtualGoal),
            _ => match s.strip_prefix("static:").and_then(parse_real) {
                Some(v) => Ok(Mode::Static(v)),
                None => Err(Error::Usage(format!(
                    "bad mode '{s}' (smartconf, static:<value>, single-pole, no-virtual-goal)"
                ))),
            },
        }
    }
}
