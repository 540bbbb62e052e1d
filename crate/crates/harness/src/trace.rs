use std::io::Write;

use crate::Result;

pub const TRACE_HEADER: [&str; 9] = [
    "tick",
    "conf_value",
    "deputy_value",
    "metric",
    "goal",
    "virtual_goal",
    "effective_pole",
    "violation",
    "throughput_cum",
];

/// One tick of a run. `conf`, `deputy` and `effective_pole` hold one entry
/// per knob; the pole is absent before a knob's first control step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub conf: Vec<f64>,
    pub deputy: Vec<f64>,
    pub metric: f64,
    pub goal: f64,
    pub virtual_goal: f64,
    pub effective_pole: Vec<Option<f64>>,
    pub violation: bool,
    pub throughput_cum: f64,
}

fn pole_field(p: Option<f64>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

/// Write `trace` as CSV. Knobs after the first get `conf_value_<i>`,
/// `deputy_value_<i>` and `effective_pole_<i>` columns appended at the end.
pub fn write_trace<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let knobs = trace.first().map_or(1, |r| r.conf.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
    for i in 2..=knobs {
        header.push(format!("conf_value_{i}"));
        header.push(format!("deputy_value_{i}"));
        header.push(format!("effective_pole_{i}"));
    }
    w.write_record(&header)?;
    for r in trace {
        let mut rec = vec![
            r.tick.to_string(),
            r.conf[0].to_string(),
            r.deputy[0].to_string(),
            r.metric.to_string(),
            r.goal.to_string(),
            r.virtual_goal.to_string(),
            pole_field(r.effective_pole[0]),
            u8::from(r.violation).to_string(),
            r.throughput_cum.to_string(),
        ];
        for i in 1..knobs {
            rec.push(r.conf[i].to_string());
            rec.push(r.deputy[i].to_string());
            rec.push(pole_field(r.effective_pole[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::Error::Io {
        path: "trace".into(),
        source: e,
    })?;
    Ok(())
}
