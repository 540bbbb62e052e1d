use selftune_core::config_io::{KnobSysFile, Synthesized};
use selftune_core::{synthesize, GoalRegistry, IndirectKnob, Knob, ProfileSample, SynthesisReport};
use selftune_sim::Scenario;

use crate::trace::TraceRow;
use crate::{Error, Mode, Result};

/// Fixed-setting profile of knob `index`: for each setting a fresh plant on
/// the profiling workload runs `warmup` ticks, then `reps` ticks are sampled.
/// Sibling knobs sit at their hold values.
pub fn profile_knob(
    scenario: &Scenario,
    index: usize,
    settings: &[f64],
    reps: u64,
) -> Result<Vec<ProfileSample<f64>>> {
    if index >= scenario.knobs.len() {
        return Err(Error::Usage(format!("scenario has no knob #{index}")));
    }
    if settings.is_empty() || reps == 0 {
        return Err(Error::Usage("profiling needs at least one setting and one rep".into()));
    }
    let mut samples = Vec::with_capacity(settings.len() * reps as usize);
    for &setting in settings {
        let mut values: Vec<f64> = scenario.knobs.iter().map(|k| k.profile_hold).collect();
        values[index] = setting;
        let mut plant = scenario.profile_plant();
        for _ in 0..scenario.profile_warmup {
            plant.step(&values);
        }
        for _ in 0..reps {
            let r = plant.step(&values);
            samples.push(ProfileSample::new(setting, r.metric));
        }
    }
    Ok(samples)
}

fn to_synthesized(r: &SynthesisReport<f64>) -> Synthesized {
    Synthesized {
        alpha: r.alpha,
        delta: r.delta,
        lambda: r.lambda,
        pole: r.pole,
        virtual_goal: r.virtual_goal,
    }
}

/// Profile every knob of `scenario` and return one system file per knob
/// holding the samples and the synthesized controller.
pub fn profile_sys_files(
    scenario: &Scenario,
    settings: Option<&[f64]>,
    reps: Option<u64>,
) -> Result<Vec<KnobSysFile>> {
    let reps = reps.unwrap_or(scenario.profile_reps);
    scenario
        .knobs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let settings = settings.unwrap_or(&spec.profile_settings);
            let samples = profile_knob(scenario, i, settings, reps)?;
            let mut file = KnobSysFile::new(spec.name.clone(), scenario.metric.clone(), spec.initial);
            file.deputy_name = spec.deputy.clone();
            file.samples = samples;
            synthesize_file(&mut file, scenario.goal, scenario.hard)?;
            Ok(file)
        })
        .collect()
}

/// Fill in the synthesized section of `file` from its samples.
pub fn synthesize_file(file: &mut KnobSysFile, goal: f64, hard: bool) -> Result<SynthesisReport<f64>> {
    let report = synthesize(&file.samples, goal, hard)?;
    file.synthesized = Some(to_synthesized(&report));
    Ok(report)
}

enum Handle {
    Direct(Knob<f64>),
    Indirect(IndirectKnob<f64>),
}

impl Handle {
    fn get_conf(&self) -> f64 {
        match self {
            Handle::Direct(k) => k.get_conf(),
            Handle::Indirect(k) => k.get_conf(),
        }
    }

    fn set_perf(&self, measured: f64, deputy: f64) {
        match self {
            Handle::Direct(k) => k.set_perf(measured),
            Handle::Indirect(k) => k.set_perf(measured, deputy),
        }
    }

    fn set_goal(&self, goal: f64) -> Result<()> {
        match self {
            Handle::Direct(k) => k.set_goal(goal)?,
            Handle::Indirect(k) => k.set_goal(goal)?,
        }
        Ok(())
    }

    fn virtual_goal(&self) -> f64 {
        match self {
            Handle::Direct(k) => k.params().virtual_goal,
            Handle::Indirect(k) => k.params().virtual_goal,
        }
    }

    fn effective_pole(&self) -> Option<f64> {
        match self {
            Handle::Direct(k) => k.last_step(),
            Handle::Indirect(k) => k.last_step(),
        }
        .map(|s| s.effective_pole)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub ticks: u64,
    pub violations: u64,
    pub first_violation: Option<u64>,
    pub throughput_cum: f64,
    /// Mean |goal - metric| over the ticks after the first 10%.
    pub mean_abs_error: f64,
}

impl Summary {
    pub fn from_trace(trace: &[TraceRow]) -> Summary {
        let ticks = trace.len() as u64;
        let warmup = ticks.div_ceil(10) as usize;
        let tail = &trace[warmup.min(trace.len())..];
        let mean_abs_error = if tail.is_empty() {
            0.0
        } else {
            tail.iter().map(|r| (r.goal - r.metric).abs()).sum::<f64>() / tail.len() as f64
        };
        Summary {
            ticks,
            violations: trace.iter().filter(|r| r.violation).count() as u64,
            first_violation: trace.iter().find(|r| r.violation).map(|r| r.tick),
            throughput_cum: trace.last().map_or(0.0, |r| r.throughput_cum),
            mean_abs_error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    /// One per knob; empty in static mode.
    pub reports: Vec<SynthesisReport<f64>>,
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
}

fn build_knobs(scenario: &Scenario, mode: Mode) -> Result<(Vec<Handle>, Vec<SynthesisReport<f64>>)> {
    let registry = GoalRegistry::new();
    registry.set_goal(&scenario.metric, scenario.goal, scenario.hard, scenario.super_hard)?;
    let files = profile_sys_files(scenario, None, None)?;
    let mut handles = Vec::new();
    let mut reports = Vec::new();
    for (spec, file) in scenario.knobs.iter().zip(&files) {
        let mut b = Knob::builder(spec.name.clone(), scenario.metric.clone())
            .sys_file(file)
            .initial(spec.initial)
            .range(spec.min, spec.max)
            .integer_valued(spec.integer)
            .context_aware(mode != Mode::SinglePole);
        if let Some(p) = scenario.pole {
            b = b.pole(p);
        }
        if mode == Mode::NoVirtualGoal {
            b = b.lambda(0.0);
        }
        let s = file.synthesized.expect("profiling synthesizes");
        reports.push(SynthesisReport {
            alpha: s.alpha,
            delta: s.delta,
            lambda: s.lambda,
            pole: s.pole,
            virtual_goal: s.virtual_goal,
        });
        handles.push(match &spec.deputy {
            Some(d) => Handle::Indirect(b.build_indirect(d.clone(), &registry)?),
            None => Handle::Direct(b.build(&registry)?),
        });
    }
    Ok((handles, reports))
}

/// Run `scenario` for `ticks` (default: its schedule length) under `mode`.
/// Controller modes profile first on the scenario's profiling workload.
pub fn run(scenario: &Scenario, mode: Mode, ticks: Option<u64>) -> Result<RunOutcome> {
    let ticks = ticks.unwrap_or_else(|| scenario.ticks());
    let (handles, reports) = if mode.uses_controller() {
        build_knobs(scenario, mode)?
    } else {
        (Vec::new(), Vec::new())
    };
    let n = scenario.knobs.len();
    let mut plant = scenario.plant();
    let mut confs: Vec<f64> = match mode {
        Mode::Static(v) => vec![v; n],
        _ => scenario.knobs.iter().map(|k| k.initial).collect(),
    };
    let mut goal = scenario.goal;
    plant.set_goal(goal);
    let mut trace = Vec::with_capacity(ticks as usize);
    for tick in 0..ticks {
        let g = scenario.goal_at(tick);
        if g != goal {
            goal = g;
            plant.set_goal(goal);
            for h in &handles {
                h.set_goal(goal)?;
            }
        }
        if plant.control_due() {
            for (c, h) in confs.iter_mut().zip(&handles) {
                *c = h.get_conf();
            }
        }
        let reading = plant.step(&confs);
        let deputies = plant.deputies();
        for (h, d) in handles.iter().zip(&deputies) {
            h.set_perf(reading.metric, *d);
        }
        trace.push(TraceRow {
            tick,
            conf: confs.clone(),
            deputy: deputies,
            metric: reading.metric,
            goal,
            virtual_goal: handles.first().map_or(goal, Handle::virtual_goal),
            effective_pole: if handles.is_empty() {
                vec![None; n]
            } else {
                handles.iter().map(Handle::effective_pole).collect()
            },
            violation: reading.violation,
            throughput_cum: reading.throughput_cum,
        });
    }
    let summary = Summary::from_trace(&trace);
    Ok(RunOutcome {
        scenario: scenario.name.clone(),
        seed: scenario.seed(),
        mode,
        reports,
        trace,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use selftune_sim::make_scenario;

    #[test]
    fn profile_counts() {
        let s = make_scenario("hb3813-two-phase").unwrap();
        let settings: Vec<f64> = (0..5).map(|i| 10.0 + 20.0 * i as f64).collect();
        let samples = profile_knob(&s, 0, &settings, 20).unwrap();
        assert_eq!(samples.len(), 100);
        assert_eq!(samples[0].setting, 10.0);
        assert_eq!(samples[99].setting, 90.0);
    }

    #[test]
    fn zero_noise_profile_gives_pole_zero() {
        let text = "preset = hb3813-two-phase\nbase.amplitude = 0\nbase.jitter = 0\nsize_spread = 0\n";
        let mut s = Scenario::from_override_text(text).unwrap();
        s.profile_schedule.phases[0].read_fraction = 0.0;
        s.profile_schedule.phases[0].arrival_rate = 400.0;
        let files = profile_sys_files(&s, None, None).unwrap();
        let syn = files[0].synthesized.unwrap();
        assert_eq!(syn.delta, 1.0);
        assert_eq!(syn.pole, 0.0);
        assert_eq!(syn.lambda, 0.0);
    }

    #[test]
    fn static_mode_keeps_conf_constant() {
        let s = make_scenario("hb3813-two-phase").unwrap();
        let out = run(&s, Mode::Static(120.0), Some(100)).unwrap();
        assert!(out.reports.is_empty());
        assert!(out.trace.iter().all(|r| r.conf == [120.0]));
        assert!(out.trace.iter().all(|r| r.effective_pole == [None]));
    }

    #[test]
    fn summary_matches_trace() {
        let s = make_scenario("hb3813-two-phase").unwrap();
        let out = run(&s, Mode::Static(1000.0), None).unwrap();
        let rows = out.trace.iter().filter(|r| r.violation).count() as u64;
        assert_eq!(out.summary.violations, rows);
        assert!(rows > 0);
        assert_eq!(out.summary.ticks, 400);
    }

    #[test]
    fn goal_shift_reaches_knobs() {
        let s = make_scenario("hb2149-goal-shift").unwrap();
        let out = run(&s, Mode::SmartConf, None).unwrap();
        let (t, g) = s.goal_shift.unwrap();
        assert_eq!(out.trace[t as usize - 1].goal, s.goal);
        assert_eq!(out.trace[t as usize].goal, g);
        assert_eq!(out.trace[t as usize].virtual_goal, g);
    }
}
