//! Named experiment presets: plant constants, evaluation and profiling
//! workloads, the goal, and the knobs under control.

use selftune_core::config_io::{parse_key_values, parse_real};

use crate::bounded_queue::{BoundedQueueConfig, BoundedQueuePlant};
use crate::dual_queue::{DualQueueConfig, DualQueuePlant};
use crate::workload::{BaseMemory, Phase, WorkloadSchedule};
use crate::write_buffer::{WriteBufferConfig, WriteBufferPlant};
use crate::{MetricReading, SimError};

pub const PRESETS: [&str; 4] = [
    "hb3813-two-phase",
    "hb3813-unstable",
    "hb2149-goal-shift",
    "dualqueue-readwrite",
];

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantConfig {
    BoundedQueue(BoundedQueueConfig),
    WriteBuffer(WriteBufferConfig),
    DualQueue(DualQueueConfig),
}

impl PlantConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            PlantConfig::BoundedQueue(_) => "bounded-queue",
            PlantConfig::WriteBuffer(_) => "write-buffer",
            PlantConfig::DualQueue(_) => "dual-queue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnobSpec {
    pub name: String,
    /// Set for knobs that bound a deputy rather than act directly.
    pub deputy: Option<String>,
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub integer: bool,
    /// Fixed values tried while profiling this knob.
    pub profile_settings: Vec<f64>,
    /// Value held while a sibling knob is being profiled.
    pub profile_hold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantConfig,
    pub schedule: WorkloadSchedule,
    pub profile_schedule: WorkloadSchedule,
    /// Samples recorded per profiled setting.
    pub profile_reps: u64,
    /// Ticks discarded at each profiled setting before sampling.
    pub profile_warmup: u64,
    pub metric: String,
    pub goal: f64,
    pub hard: bool,
    pub super_hard: bool,
    /// `(tick, new_goal)`: the goal is replaced at the start of `tick`.
    pub goal_shift: Option<(u64, f64)>,
    /// Replaces the synthesized pole when set.
    pub pole: Option<f64>,
    pub knobs: Vec<KnobSpec>,
}

fn settings(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|i| from + step * i as f64).collect()
}

fn schedule(phases: Vec<Phase>) -> WorkloadSchedule {
    WorkloadSchedule::new(phases, DEFAULT_SEED).expect("preset schedules are valid")
}

fn queue_knob(name: &str, deputy: &str, max: f64, profile: Vec<f64>, hold: f64) -> KnobSpec {
    KnobSpec {
        name: name.into(),
        deputy: Some(deputy.into()),
        initial: 0.0,
        min: 0.0,
        max,
        integer: true,
        profile_settings: profile,
        profile_hold: hold,
    }
}

fn hb3813(name: &str, base: BaseMemory, eval: Vec<Phase>, profile: Vec<Phase>) -> Scenario {
    Scenario {
        name: name.into(),
        plant: PlantConfig::BoundedQueue(BoundedQueueConfig {
            base,
            mem_limit: 495.0,
            service_fraction: 0.1,
            drain_rate: 1000,
            read_size_mb: 0.1,
            size_spread: 0.2,
        }),
        schedule: schedule(eval),
        profile_schedule: schedule(profile),
        profile_reps: 30,
        profile_warmup: 30,
        metric: "memory.used".into(),
        goal: 495.0,
        hard: true,
        super_hard: false,
        goal_shift: None,
        pole: None,
        knobs: vec![queue_knob(
            "max.queue.size",
            "queue.length",
            2000.0,
            settings(20.0, 200.0, 20.0),
            0.0,
        )],
    }
}

/// Build a preset by name with the default seed.
pub fn make_scenario(name: &str) -> Result<Scenario, SimError> {
    // Profiling uses a mixed read/write workload unlike any evaluation phase.
    let profile_mix = || vec![Phase::new(1, 40.0, 2.0).with_reads(0.5)];
    let s = match name {
        "hb3813-two-phase" => hb3813(
            name,
            BaseMemory {
                level: 270.0,
                amplitude: 45.0,
                period: 40.0,
                jitter: 3.0,
            },
            vec![Phase::new(200, 40.0, 1.0), Phase::new(200, 40.0, 2.0)],
            profile_mix(),
        ),
        "hb3813-unstable" => {
            let mut s = hb3813(
                name,
                BaseMemory {
                    level: 250.0,
                    amplitude: 50.0,
                    period: 25.0,
                    jitter: 3.0,
                },
                vec![Phase::new(300, 40.0, 2.0).with_reads(0.3)],
                profile_mix(),
            );
            s.pole = Some(0.9);
            s
        }
        "hb2149-goal-shift" => Scenario {
            name: name.into(),
            plant: PlantConfig::WriteBuffer(WriteBufferConfig {
                heap_mb: 1000.0,
                upper_limit: 0.4,
                flush_rate: 30.0,
                flush_spread: 0.2,
                write_spread: 0.3,
                flush_overhead: 1,
                window: 30,
                latency_limit: 10.0,
            }),
            schedule: schedule(vec![Phase::new(400, 40.0, 0.0)]),
            profile_schedule: schedule(vec![Phase::new(1, 45.0, 0.0)]),
            profile_reps: 30,
            profile_warmup: 30,
            metric: "write.latency.worst".into(),
            goal: 10.0,
            hard: false,
            super_hard: false,
            goal_shift: Some((200, 5.0)),
            pole: None,
            knobs: vec![KnobSpec {
                name: "memstore.lower.limit".into(),
                deputy: None,
                initial: 0.35,
                min: 0.0,
                max: 0.39,
                integer: false,
                profile_settings: settings(0.05, 0.35, 0.05),
                profile_hold: 0.35,
            }],
        },
        "dualqueue-readwrite" => Scenario {
            name: name.into(),
            plant: PlantConfig::DualQueue(DualQueueConfig {
                base: BaseMemory {
                    level: 250.0,
                    amplitude: 45.0,
                    period: 40.0,
                    jitter: 3.0,
                },
                mem_limit: 495.0,
                write_request_mb: 1.0,
                write_response_mb: 0.05,
                read_request_mb: 0.05,
                read_response_mb: 1.0,
                request_service: 0.1,
                response_bandwidth_mb: 12.0,
                size_spread: 0.2,
            }),
            schedule: schedule(vec![
                Phase::new(50, 30.0, 1.0),
                Phase::new(250, 50.0, 1.0).with_reads(0.5),
            ]),
            profile_schedule: schedule(vec![Phase::new(1, 40.0, 1.0).with_reads(0.5)]),
            profile_reps: 30,
            profile_warmup: 40,
            metric: "memory.used".into(),
            goal: 495.0,
            hard: true,
            super_hard: true,
            goal_shift: None,
            pole: None,
            knobs: vec![
                queue_knob(
                    "max.queue.size",
                    "request.queue.length",
                    2000.0,
                    settings(20.0, 200.0, 20.0),
                    300.0,
                ),
                queue_knob(
                    "max.response.queue.size",
                    "response.queue.length",
                    2000.0,
                    settings(10.0, 100.0, 10.0),
                    2000.0,
                ),
            ],
        },
        _ => return Err(SimError::UnknownScenario { name: name.into() }),
    };
    Ok(s)
}

impl Scenario {
    /// Same scenario driven by `seed` for both evaluation and profiling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.schedule.seed = seed;
        self.profile_schedule.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.schedule.seed
    }

    pub fn ticks(&self) -> u64 {
        self.schedule.total_ticks()
    }

    /// Goal in force at `tick`.
    pub fn goal_at(&self, tick: u64) -> f64 {
        match self.goal_shift {
            Some((t, g)) if tick >= t => g,
            _ => self.goal,
        }
    }

    pub fn plant(&self) -> Plant {
        Plant::new(&self.plant, self.schedule.clone())
    }

    pub fn profile_plant(&self) -> Plant {
        Plant::new(&self.plant, self.profile_schedule.clone())
    }

    /// Load a scenario from `key = value` text: `preset = <name>` picks the
    /// base and remaining keys override its constants.
    pub fn from_override_text(text: &str) -> Result<Scenario, SimError> {
        let pairs = parse_key_values(text).map_err(|e| SimError::Override {
            line: 0,
            msg: e.to_string(),
        })?;
        let (_, _, preset) = pairs
            .iter()
            .find(|(_, k, _)| k == "preset")
            .ok_or_else(|| SimError::Override {
                line: 1,
                msg: "missing `preset = <name>`".into(),
            })?;
        let mut s = make_scenario(preset)?;
        for (line, key, value) in &pairs {
            if key != "preset" {
                s.apply_override(*line, key, value)?;
            }
        }
        Ok(s)
    }

    fn apply_override(&mut self, line: usize, key: &str, value: &str) -> Result<(), SimError> {
        let bad = |msg: String| SimError::Override { line, msg };
        let real = || parse_real(value).ok_or_else(|| bad(format!("{key}: not a number: {value:?}")));
        let count = || {
            value
                .parse::<u64>()
                .map_err(|_| bad(format!("{key}: not a count: {value:?}")))
        };
        let kind = self.plant.kind();
        let wrong_plant = || bad(format!("{key} does not apply to a {kind} plant"));
        match key {
            "seed" => {
                let seed = count()?;
                *self = self.clone().with_seed(seed);
            }
            "goal" => self.goal = real()?,
            "pole" => self.pole = Some(real()?),
            "profile.reps" => self.profile_reps = count()?,
            "profile.warmup" => self.profile_warmup = count()?,
            "goal_shift.tick" => {
                let t = count()?;
                self.goal_shift = Some((t, self.goal_shift.map_or(self.goal, |g| g.1)));
            }
            "goal_shift.goal" => {
                let g = real()?;
                self.goal_shift = Some((self.goal_shift.map_or(self.ticks() / 2, |s| s.0), g));
            }
            "arrival_rate" => {
                let v = real()?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(format!("arrival_rate must be nonnegative, got {value}")));
                }
                for p in &mut self.schedule.phases {
                    p.arrival_rate = v;
                }
            }
            "initial" => {
                let v = real()?;
                for k in &mut self.knobs {
                    k.initial = v;
                }
            }
            "mem_limit" | "base.level" | "base.amplitude" | "base.period" | "base.jitter"
            | "size_spread" => {
                let v = real()?;
                let (base, limit, spread) = match &mut self.plant {
                    PlantConfig::BoundedQueue(c) => (&mut c.base, &mut c.mem_limit, &mut c.size_spread),
                    PlantConfig::DualQueue(c) => (&mut c.base, &mut c.mem_limit, &mut c.size_spread),
                    PlantConfig::WriteBuffer(_) => return Err(wrong_plant()),
                };
                match key {
                    "mem_limit" => *limit = v,
                    "base.level" => base.level = v,
                    "base.amplitude" => base.amplitude = v,
                    "base.period" if v > 0.0 => base.period = v,
                    "base.period" => return Err(bad("base.period must be positive".into())),
                    "base.jitter" => base.jitter = v,
                    _ => *spread = v,
                }
                if key == "mem_limit" && self.hard {
                    self.goal = v;
                }
            }
            "service_fraction" | "drain_rate" | "response_bandwidth" => match &mut self.plant {
                PlantConfig::BoundedQueue(c) if key == "drain_rate" => c.drain_rate = count()? as usize,
                PlantConfig::BoundedQueue(c) if key == "service_fraction" => c.service_fraction = real()?,
                PlantConfig::DualQueue(c) if key == "service_fraction" => c.request_service = real()?,
                PlantConfig::DualQueue(c) if key == "response_bandwidth" => c.response_bandwidth_mb = real()?,
                _ => return Err(wrong_plant()),
            },
            "heap_mb" | "upper_limit" | "flush_rate" | "flush_overhead" | "window" => {
                let PlantConfig::WriteBuffer(c) = &mut self.plant else {
                    return Err(wrong_plant());
                };
                match key {
                    "heap_mb" => c.heap_mb = real()?,
                    "upper_limit" => c.upper_limit = real()?,
                    "flush_rate" => c.flush_rate = real()?,
                    "flush_overhead" => c.flush_overhead = count()?,
                    _ => c.window = count()?.max(1),
                }
            }
            _ => return Err(bad(format!("unknown key {key}"))),
        }
        Ok(())
    }
}

/// A live plant of any kind behind one stepping interface. Knob values are
/// passed in the scenario's knob order.
#[derive(Debug, Clone)]
pub enum Plant {
    BoundedQueue(BoundedQueuePlant),
    WriteBuffer(WriteBufferPlant),
    DualQueue(DualQueuePlant, [f64; 2]),
}

impl Plant {
    pub fn new(config: &PlantConfig, schedule: WorkloadSchedule) -> Self {
        match *config {
            PlantConfig::BoundedQueue(c) => Plant::BoundedQueue(BoundedQueuePlant::new(c, schedule)),
            PlantConfig::WriteBuffer(c) => Plant::WriteBuffer(WriteBufferPlant::new(c, schedule)),
            PlantConfig::DualQueue(c) => Plant::DualQueue(DualQueuePlant::new(c, schedule), [0.0; 2]),
        }
    }

    pub fn knob_count(&self) -> usize {
        match self {
            Plant::DualQueue(..) => 2,
            _ => 1,
        }
    }

    pub fn tick(&self) -> u64 {
        match self {
            Plant::BoundedQueue(p) => p.tick(),
            Plant::WriteBuffer(p) => p.tick(),
            Plant::DualQueue(p, _) => p.tick(),
        }
    }

    /// Whether the knob is consulted on the next tick. The write buffer
    /// reads its knob only when a flush starts.
    pub fn control_due(&self) -> bool {
        match self {
            Plant::WriteBuffer(p) => p.flush_pending(),
            _ => true,
        }
    }

    /// Current deputy value per knob (empty entries for direct knobs are
    /// reported as the knob-side quantity the plant exposes).
    pub fn deputies(&self) -> Vec<f64> {
        match self {
            Plant::BoundedQueue(p) => vec![p.queue_len() as f64],
            Plant::WriteBuffer(p) => vec![p.fill()],
            Plant::DualQueue(_, d) => d.to_vec(),
        }
    }

    /// Track a goal change where the plant judges violations against it.
    pub fn set_goal(&mut self, goal: f64) {
        if let Plant::WriteBuffer(p) = self {
            p.set_latency_limit(goal);
        }
    }

    /// # Panics
    /// If fewer values than `knob_count` are given.
    pub fn step(&mut self, knobs: &[f64]) -> MetricReading {
        match self {
            Plant::BoundedQueue(p) => p.step(knobs[0]),
            Plant::WriteBuffer(p) => p.step(knobs[0]),
            Plant::DualQueue(p, deputies) => {
                let r = p.step(knobs[0], knobs[1]);
                *deputies = [r.request_len, r.response_len];
                MetricReading {
                    metric: r.metric,
                    deputy: r.request_len,
                    throughput_cum: r.throughput_cum,
                    violation: r.violation,
                }
            }
        }
    }
}
