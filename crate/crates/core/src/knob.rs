//! Runtime facade for self-tuning configuration values.
//!
//! A program reads a knob's value through [`Knob::get_conf`] (or
//! [`IndirectKnob::get_conf`]) at each place it uses the configuration, after
//! feeding the latest metric reading with `set_perf`. Values only change
//! inside `get_conf`, so a configuration that is not used is not adjusted.
//!
//! Knobs sharing a metric are registered in a [`GoalRegistry`]. When that
//! metric's goal is super-hard, each knob divides its correction by the live
//! number of knobs registered under it.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::config_io::{GoalFile, KnobSysFile, Synthesized};
use crate::controller::{
    compute_virtual_goal, control_step, Clamp, ControllerParams, ControllerState, Step,
    SynthesisReport,
};
use crate::error::{Error, Result};
use crate::profiler::{synthesize, ProfileSample};
use crate::scalar::Scalar;

/// Profiling samples are pushed to the sink once this many are buffered.
pub const PROFILE_FLUSH_EVERY: usize = 64;

/// Consecutive clamped steps at one bound before the goal is reported
/// unreachable.
pub const UNREACHABLE_STREAK: u32 = 20;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug)]
struct MetricGoal<T> {
    goal: T,
    hard: bool,
    super_hard: bool,
    knobs: Vec<String>,
    count: Arc<AtomicU32>,
}

/// Goals per metric and the knobs registered under each one.
#[derive(Debug, Clone)]
pub struct GoalRegistry<T = f64> {
    inner: Arc<Mutex<HashMap<String, MetricGoal<T>>>>,
}

impl<T: Scalar> Default for GoalRegistry<T> {
    fn default() -> Self {
        GoalRegistry {
            inner: Arc::new(Mutex::new(HashMap::new())),
        }
    }
}

/// Goal attributes for one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSpec<T> {
    pub goal: T,
    pub hard: bool,
    pub super_hard: bool,
}

impl<T: Scalar> GoalRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_goal_file(file: &GoalFile) -> Result<Self> {
        let registry = Self::new();
        for e in &file.entries {
            registry.set_goal(&e.metric, T::of(e.goal), e.hard, e.super_hard)?;
        }
        Ok(registry)
    }

    /// Add or replace the goal for `metric`. Registered knobs are kept.
    pub fn set_goal(&self, metric: &str, goal: T, hard: bool, super_hard: bool) -> Result<()> {
        if !(goal.is_finite() && goal > T::zero()) {
            return Err(Error::invalid(format!("goal for {metric} must be positive")));
        }
        if super_hard && !hard {
            return Err(Error::invalid(format!("{metric}: super-hard goals must be hard")));
        }
        let mut map = lock(&self.inner);
        let entry = map.entry(metric.to_string()).or_insert_with(|| MetricGoal {
            goal,
            hard,
            super_hard,
            knobs: Vec::new(),
            count: Arc::new(AtomicU32::new(1)),
        });
        entry.goal = goal;
        entry.hard = hard;
        entry.super_hard = super_hard;
        refresh_count(entry);
        Ok(())
    }

    pub fn goal(&self, metric: &str) -> Option<GoalSpec<T>> {
        lock(&self.inner).get(metric).map(|g| GoalSpec {
            goal: g.goal,
            hard: g.hard,
            super_hard: g.super_hard,
        })
    }

    /// Knob names registered under `metric`, in registration order.
    pub fn knobs(&self, metric: &str) -> Vec<String> {
        lock(&self.inner)
            .get(metric)
            .map(|g| g.knobs.clone())
            .unwrap_or_default()
    }

    /// The interaction factor knobs under `metric` currently apply.
    pub fn interaction_n(&self, metric: &str) -> u32 {
        lock(&self.inner)
            .get(metric)
            .map(|g| g.count.load(Ordering::SeqCst))
            .unwrap_or(1)
    }

    fn register(&self, metric: &str, conf_name: &str) -> Result<Registration<T>> {
        let mut map = lock(&self.inner);
        let entry = map
            .get_mut(metric)
            .ok_or_else(|| Error::Config(format!("no goal for metric {metric}")))?;
        if entry.knobs.iter().any(|k| k == conf_name) {
            return Err(Error::Config(format!(
                "knob {conf_name} is already registered under {metric}"
            )));
        }
        entry.knobs.push(conf_name.to_string());
        refresh_count(entry);
        Ok(Registration {
            registry: self.clone(),
            metric: metric.to_string(),
            conf_name: conf_name.to_string(),
            interaction: Arc::clone(&entry.count),
        })
    }
}

fn refresh_count<T>(entry: &mut MetricGoal<T>) {
    let n = if entry.super_hard {
        entry.knobs.len().max(1) as u32
    } else {
        1
    };
    entry.count.store(n, Ordering::SeqCst);
}

/// A knob's membership in the registry; dropping it deregisters the knob.
struct Registration<T: Scalar> {
    registry: GoalRegistry<T>,
    metric: String,
    conf_name: String,
    interaction: Arc<AtomicU32>,
}

impl<T: Scalar> Drop for Registration<T> {
    fn drop(&mut self) {
        let mut map = lock(&self.registry.inner);
        if let Some(entry) = map.get_mut(&self.metric) {
            entry.knobs.retain(|k| k != &self.conf_name);
            refresh_count(entry);
        }
    }
}

/// Receives profiling samples flushed from a knob.
pub trait ProfileSink<T>: Send {
    fn write(&mut self, conf_name: &str, samples: &[ProfileSample<T>]) -> Result<()>;
}

/// Appends flushed samples to a knob system file.
pub struct SysFileSink {
    path: std::path::PathBuf,
    template: KnobSysFile,
}

impl SysFileSink {
    /// `template` is written out if the file does not exist yet.
    pub fn new(path: impl Into<std::path::PathBuf>, template: KnobSysFile) -> Self {
        SysFileSink {
            path: path.into(),
            template,
        }
    }
}

impl ProfileSink<f64> for SysFileSink {
    fn write(&mut self, _conf_name: &str, samples: &[ProfileSample<f64>]) -> Result<()> {
        use crate::config_io::{load_knob_sys, serialize_knob_sys, write_atomic};
        let mut file = if self.path.exists() {
            load_knob_sys(&self.path)?
        } else {
            self.template.clone()
        };
        file.samples.extend_from_slice(samples);
        write_atomic(&self.path, &serialize_knob_sys(&file))
    }
}

/// Reported when a knob has sat at one end of its range for
/// [`UNREACHABLE_STREAK`] steps with the error pointing further out.
#[derive(Debug, Clone, PartialEq)]
pub struct UnreachableGoal {
    pub conf_name: String,
    pub metric: String,
    pub bound: Clamp,
    pub steps: u32,
}

impl fmt::Display for UnreachableGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = match self.bound {
            Clamp::Min => "minimum",
            Clamp::Max => "maximum",
        };
        write!(
            f,
            "goal for {} unreachable: {} held at its {end} for {} steps",
            self.metric, self.conf_name, self.steps
        )
    }
}

type AlertHook = Arc<dyn Fn(&UnreachableGoal) + Send + Sync>;
type Transducer<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Default)]
struct Streak {
    bound: Option<Clamp>,
    positive_error: bool,
    len: u32,
}

struct Inner<T> {
    params: ControllerParams<T>,
    state: ControllerState<T>,
    lambda: T,
    conf: T,
    measured: Option<T>,
    last_step: Option<Step<T>>,
    profiling: bool,
    buffer: Vec<ProfileSample<T>>,
    sink: Option<Box<dyn ProfileSink<T>>>,
    streak: Streak,
    alerts: u32,
}

/// Shared implementation behind direct and indirect knobs.
struct Core<T: Scalar> {
    name: String,
    metric: String,
    integer_valued: bool,
    inner: Mutex<Inner<T>>,
    on_unreachable: Option<AlertHook>,
    registration: Registration<T>,
}

impl<T: Scalar> Core<T> {
    fn set_perf(&self, measured: T, deputy: Option<T>) {
        let mut inner = lock(&self.inner);
        inner.measured = Some(measured);
        if let Some(d) = deputy {
            inner.state.last_value = d;
        }
        if inner.profiling {
            let setting = deputy.unwrap_or(inner.conf);
            inner.buffer.push(ProfileSample::new(setting, measured));
            if inner.buffer.len() >= PROFILE_FLUSH_EVERY && inner.sink.is_some() {
                if let Err(e) = flush_locked(&self.name, &mut inner) {
                    log::warn!("profiling flush for {} failed: {e}", self.name);
                }
            }
        }
    }

    fn round_safe(&self, value: T, alpha: T) -> T {
        if !self.integer_valued {
            value
        } else if alpha > T::zero() {
            value.floor()
        } else {
            value.ceil()
        }
    }

    /// Run one control step; returns (desired controlled value, step).
    fn step(&self, inner: &mut Inner<T>) -> Option<Step<T>> {
        let measured = inner.measured?;
        inner.params.interaction_n = self.registration.interaction.load(Ordering::SeqCst);
        let step = control_step(&mut inner.state, &inner.params, measured);
        inner.last_step = Some(step);
        self.track_streak(inner, &step);
        Some(step)
    }

    fn track_streak(&self, inner: &mut Inner<T>, step: &Step<T>) {
        let positive = step.error > T::zero();
        let s = &mut inner.streak;
        match step.clamped {
            Some(b) if s.bound == Some(b) && s.positive_error == positive => s.len += 1,
            Some(b) => {
                s.bound = Some(b);
                s.positive_error = positive;
                s.len = 1;
            }
            None => {
                s.bound = None;
                s.len = 0;
            }
        }
        if s.len == UNREACHABLE_STREAK {
            let alert = UnreachableGoal {
                conf_name: self.name.clone(),
                metric: self.metric.clone(),
                bound: s.bound.expect("streak has a bound"),
                steps: s.len,
            };
            inner.alerts += 1;
            log::warn!("{alert}");
            if let Some(hook) = &self.on_unreachable {
                hook(&alert);
            }
        }
    }

    fn set_goal(&self, goal: T) -> Result<()> {
        if !(goal.is_finite() && goal > T::zero()) {
            return Err(Error::invalid(format!("goal must be positive, got {goal}")));
        }
        let mut inner = lock(&self.inner);
        if inner.params.goal == goal {
            return Ok(());
        }
        let virtual_goal = compute_virtual_goal(goal, inner.lambda, inner.params.hard)?;
        inner.params.goal = goal;
        inner.params.virtual_goal = virtual_goal;
        Ok(())
    }
}

fn flush_locked<T>(name: &str, inner: &mut Inner<T>) -> Result<usize> {
    let n = inner.buffer.len();
    if n == 0 {
        return Ok(0);
    }
    if let Some(sink) = inner.sink.as_mut() {
        sink.write(name, &inner.buffer)?;
        inner.buffer.clear();
    }
    Ok(n)
}

macro_rules! common_accessors {
    () => {
        pub fn name(&self) -> &str {
            &self.core.name
        }

        pub fn metric(&self) -> &str {
            &self.core.metric
        }

        pub fn is_integer_valued(&self) -> bool {
            self.core.integer_valued
        }

        /// Snapshot of the controller parameters, with the current
        /// interaction factor.
        pub fn params(&self) -> ControllerParams<T> {
            let mut p = lock(&self.core.inner).params;
            p.interaction_n = self.core.registration.interaction.load(Ordering::SeqCst);
            p
        }

        pub fn state(&self) -> ControllerState<T> {
            lock(&self.core.inner).state
        }

        /// The current configuration value.
        pub fn value(&self) -> T {
            lock(&self.core.inner).conf
        }

        pub fn last_step(&self) -> Option<Step<T>> {
            lock(&self.core.inner).last_step
        }

        /// Replace the goal; the virtual goal is recomputed and the change
        /// applies from the next `get_conf`.
        pub fn set_goal(&self, goal: T) -> Result<()> {
            self.core.set_goal(goal)
        }

        pub fn set_profiling(&self, enabled: bool) {
            lock(&self.core.inner).profiling = enabled;
        }

        pub fn set_profile_sink(&self, sink: Box<dyn ProfileSink<T>>) {
            lock(&self.core.inner).sink = Some(sink);
        }

        /// Samples recorded since the last flush.
        pub fn buffered_samples(&self) -> Vec<ProfileSample<T>> {
            lock(&self.core.inner).buffer.clone()
        }

        /// Remove and return buffered samples without touching the sink.
        pub fn take_profile(&self) -> Vec<ProfileSample<T>> {
            std::mem::take(&mut lock(&self.core.inner).buffer)
        }

        /// Push buffered samples to the sink, returning how many were
        /// written. Without a sink the buffer is left in place.
        pub fn flush_profile(&self) -> Result<usize> {
            let mut inner = lock(&self.core.inner);
            if inner.sink.is_none() {
                return Ok(0);
            }
            flush_locked(&self.core.name, &mut inner)
        }

        /// Number of unreachable-goal alerts raised so far.
        pub fn unreachable_alerts(&self) -> u32 {
            lock(&self.core.inner).alerts
        }
    };
}

/// A configuration value that directly drives its metric.
pub struct Knob<T: Scalar = f64> {
    core: Core<T>,
}

impl<T: Scalar> Knob<T> {
    pub fn builder(name: impl Into<String>, metric: impl Into<String>) -> KnobBuilder<T> {
        KnobBuilder::new(name.into(), metric.into())
    }

    common_accessors!();

    /// Record the latest metric reading.
    pub fn set_perf(&self, measured: T) {
        self.core.set_perf(measured, None);
    }

    /// Compute, store and return the adjusted configuration value. Without a
    /// reading since construction the current value is returned unchanged.
    pub fn get_conf(&self) -> T {
        let mut inner = lock(&self.core.inner);
        let Some(step) = self.core.step(&mut inner) else {
            return inner.conf;
        };
        let conf = self.core.round_safe(step.next_value, inner.params.alpha);
        inner.state.last_value = conf;
        inner.conf = conf;
        conf
    }
}

/// A configuration that bounds a deputy variable (e.g. a queue-size limit
/// bounding the actual queue length). The controller acts on the deputy and
/// a transducer maps the desired deputy value to a configuration value.
pub struct IndirectKnob<T: Scalar = f64> {
    core: Core<T>,
    deputy_name: String,
    transducer: Transducer<T>,
}

impl<T: Scalar> IndirectKnob<T> {
    common_accessors!();

    pub fn deputy_name(&self) -> &str {
        &self.deputy_name
    }

    /// Record the latest metric reading together with the deputy's current
    /// value. The deputy may exceed the configuration after a recent drop.
    pub fn set_perf(&self, measured: T, deputy: T) {
        self.core.set_perf(measured, Some(deputy));
    }

    /// Desired deputy value from the last step, before transduction.
    pub fn desired_deputy(&self) -> Option<T> {
        lock(&self.core.inner).last_step.map(|s| s.next_value)
    }

    pub fn get_conf(&self) -> T {
        let mut inner = lock(&self.core.inner);
        let Some(step) = self.core.step(&mut inner) else {
            return inner.conf;
        };
        let conf = self
            .core
            .round_safe((self.transducer)(step.next_value), inner.params.alpha);
        inner.conf = conf;
        conf
    }
}

/// Where a knob's gains come from.
#[derive(Clone)]
enum Source<T> {
    Report(SynthesisReport<T>),
    Samples(Vec<ProfileSample<T>>),
}

/// Builds [`Knob`]s and [`IndirectKnob`]s.
pub struct KnobBuilder<T: Scalar> {
    name: String,
    metric: String,
    source: Option<Source<T>>,
    initial: T,
    conf_min: T,
    conf_max: T,
    integer_valued: bool,
    context_aware: bool,
    pole_override: Option<T>,
    lambda_override: Option<T>,
    profiling: bool,
    on_unreachable: Option<AlertHook>,
}

impl<T: Scalar> KnobBuilder<T> {
    fn new(name: String, metric: String) -> Self {
        KnobBuilder {
            name,
            metric,
            source: None,
            initial: T::zero(),
            conf_min: T::zero(),
            conf_max: T::max_value(),
            integer_valued: false,
            context_aware: true,
            pole_override: None,
            lambda_override: None,
            profiling: false,
            on_unreachable: None,
        }
    }

    /// Use an in-memory synthesis result.
    pub fn report(mut self, report: SynthesisReport<T>) -> Self {
        self.source = Some(Source::Report(report));
        self
    }

    /// Synthesize from raw profiling samples at build time.
    pub fn samples(mut self, samples: Vec<ProfileSample<T>>) -> Self {
        self.source = Some(Source::Samples(samples));
        self
    }

    /// Starting configuration value (for indirect knobs, the starting limit).
    pub fn initial(mut self, value: T) -> Self {
        self.initial = value;
        self
    }

    pub fn range(mut self, min: T, max: T) -> Self {
        self.conf_min = min;
        self.conf_max = max;
        self
    }

    pub fn integer_valued(mut self, yes: bool) -> Self {
        self.integer_valued = yes;
        self
    }

    /// Disable the switch to the aggressive pole above the virtual goal.
    pub fn context_aware(mut self, yes: bool) -> Self {
        self.context_aware = yes;
        self
    }

    pub fn pole(mut self, pole: T) -> Self {
        self.pole_override = Some(pole);
        self
    }

    /// Override the coefficient of variation used for the virtual goal; 0
    /// makes a hard goal track the real limit.
    pub fn lambda(mut self, lambda: T) -> Self {
        self.lambda_override = Some(lambda);
        self
    }

    pub fn profiling(mut self, enabled: bool) -> Self {
        self.profiling = enabled;
        self
    }

    pub fn on_unreachable(mut self, hook: impl Fn(&UnreachableGoal) + Send + Sync + 'static) -> Self {
        self.on_unreachable = Some(Arc::new(hook));
        self
    }

    /// Take the initial value and gains from a knob system file. Persisted
    /// synthesized values win over samples.
    pub fn sys_file(mut self, file: &KnobSysFile) -> Self {
        self.initial = T::of(file.initial_conf);
        self.source = match file.synthesized {
            Some(Synthesized {
                alpha,
                delta,
                lambda,
                pole,
                virtual_goal,
            }) => Some(Source::Report(SynthesisReport {
                alpha: T::of(alpha),
                delta: T::of(delta),
                lambda: T::of(lambda),
                pole: T::of(pole),
                virtual_goal: T::of(virtual_goal),
            })),
            None if !file.samples.is_empty() => Some(Source::Samples(
                file.samples
                    .iter()
                    .map(|s| ProfileSample::new(T::of(s.setting), T::of(s.perf)))
                    .collect(),
            )),
            None => None,
        };
        self
    }

    fn build_core(self, registry: &GoalRegistry<T>) -> Result<Core<T>> {
        let goal = registry
            .goal(&self.metric)
            .ok_or_else(|| Error::Config(format!("no goal for metric {}", self.metric)))?;
        let report = match self.source {
            Some(Source::Report(r)) => r,
            Some(Source::Samples(s)) => synthesize(&s, goal.goal, goal.hard)?,
            None => {
                return Err(Error::Config(format!(
                    "no synthesized parameters or profiling samples for {}",
                    self.name
                )))
            }
        };
        let lambda = self.lambda_override.unwrap_or(report.lambda);
        let pole = self.pole_override.unwrap_or(report.pole);
        let virtual_goal = compute_virtual_goal(goal.goal, lambda, goal.hard)?;
        let mut params = if goal.hard {
            ControllerParams::hard(report.alpha, pole, goal.goal, virtual_goal)
        } else {
            ControllerParams::soft(report.alpha, pole, goal.goal)
        }
        .with_range(self.conf_min, self.conf_max);
        params.context_aware = self.context_aware;
        params.validate()?;

        let registration = registry.register(&self.metric, &self.name)?;
        params.interaction_n = registration.interaction.load(Ordering::SeqCst);
        Ok(Core {
            name: self.name,
            metric: self.metric,
            integer_valued: self.integer_valued,
            inner: Mutex::new(Inner {
                params,
                state: ControllerState::new(self.initial),
                lambda,
                conf: self.initial,
                measured: None,
                last_step: None,
                profiling: self.profiling,
                buffer: Vec::new(),
                sink: None,
                streak: Streak::default(),
                alerts: 0,
            }),
            on_unreachable: self.on_unreachable,
            registration,
        })
    }

    pub fn build(self, registry: &GoalRegistry<T>) -> Result<Knob<T>> {
        Ok(Knob {
            core: self.build_core(registry)?,
        })
    }

    /// Build an indirect knob with the identity transducer.
    pub fn build_indirect(
        self,
        deputy_name: impl Into<String>,
        registry: &GoalRegistry<T>,
    ) -> Result<IndirectKnob<T>> {
        self.build_indirect_with(deputy_name, |d| d, registry)
    }

    pub fn build_indirect_with(
        self,
        deputy_name: impl Into<String>,
        transducer: impl Fn(T) -> T + Send + Sync + 'static,
        registry: &GoalRegistry<T>,
    ) -> Result<IndirectKnob<T>> {
        Ok(IndirectKnob {
            core: self.build_core(registry)?,
            deputy_name: deputy_name.into(),
            transducer: Arc::new(transducer),
        })
    }
}

/// Either kind of knob, as loaded from a system file.
pub enum AnyKnob<T: Scalar = f64> {
    Direct(Knob<T>),
    Indirect(IndirectKnob<T>),
}

impl<T: Scalar> AnyKnob<T> {
    /// Construct from a system file: files naming a deputy give an indirect
    /// knob with the identity transducer.
    pub fn from_sys_file(file: &KnobSysFile, registry: &GoalRegistry<T>) -> Result<Self> {
        let builder = KnobBuilder::new(file.conf_name.clone(), file.metric.clone()).sys_file(file);
        Ok(match &file.deputy_name {
            Some(d) => AnyKnob::Indirect(builder.build_indirect(d.clone(), registry)?),
            None => AnyKnob::Direct(builder.build(registry)?),
        })
    }

    pub fn value(&self) -> T {
        match self {
            AnyKnob::Direct(k) => k.value(),
            AnyKnob::Indirect(k) => k.value(),
        }
    }
}
