use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::SimError;

/// One stretch of a workload with constant parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub duration: u64,
    /// Requests per tick (queue plants) or MB written per tick (write buffer).
    pub arrival_rate: f64,
    /// Size of a write request, MB.
    pub request_size_mb: f64,
    /// Fraction of arrivals that are reads.
    pub read_fraction: f64,
}

impl Phase {
    pub fn new(duration: u64, arrival_rate: f64, request_size_mb: f64) -> Self {
        Phase {
            duration,
            arrival_rate,
            request_size_mb,
            read_fraction: 0.0,
        }
    }

    pub fn with_reads(mut self, read_fraction: f64) -> Self {
        self.read_fraction = read_fraction;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSchedule {
    pub phases: Vec<Phase>,
    pub seed: u64,
}

impl WorkloadSchedule {
    pub fn new(phases: Vec<Phase>, seed: u64) -> Result<Self, SimError> {
        let s = WorkloadSchedule { phases, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.phases.is_empty() {
            return Err(SimError::Invalid("workload schedule has no phases".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.duration == 0 {
                return Err(SimError::Invalid(format!("phase {} has zero duration", i + 1)));
            }
            let ok = p.arrival_rate >= 0.0
                && p.arrival_rate.is_finite()
                && p.request_size_mb >= 0.0
                && (0.0..=1.0).contains(&p.read_fraction);
            if !ok {
                return Err(SimError::Invalid(format!("phase {} has invalid rates", i + 1)));
            }
        }
        Ok(())
    }

    pub fn total_ticks(&self) -> u64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Phase covering `tick`; the last phase extends past the schedule end.
    pub fn phase_at(&self, tick: u64) -> &Phase {
        let mut end = 0;
        for p in &self.phases {
            end += p.duration;
            if tick < end {
                return p;
            }
        }
        self.phases.last().expect("validated schedule is nonempty")
    }

    /// First tick of phase `index` (0-based).
    pub fn phase_start(&self, index: usize) -> u64 {
        self.phases.iter().take(index).map(|p| p.duration).sum()
    }
}

/// Independent random streams for a plant: arrivals and background noise
/// never share draws, so knob choices cannot shift either sequence.
#[derive(Debug, Clone)]
pub(crate) struct Streams {
    pub arrivals: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let mut arrivals = ChaCha8Rng::seed_from_u64(seed);
        arrivals.set_stream(1);
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2);
        Streams { arrivals, noise }
    }

    pub fn poisson(&mut self, rate: f64) -> u64 {
        if rate <= 0.0 {
            return 0;
        }
        Poisson::new(rate)
            .expect("positive finite rate")
            .sample(&mut self.arrivals) as u64
    }

    /// Uniform draw in `[-1, 1)` from the arrival stream.
    pub fn arrival_unit(&mut self) -> f64 {
        self.arrivals.random_range(-1.0..1.0)
    }

    pub fn arrival_uniform(&mut self) -> f64 {
        self.arrivals.random::<f64>()
    }

    /// Uniform draw in `[-1, 1)` from the noise stream.
    pub fn noise_unit(&mut self) -> f64 {
        self.noise.random_range(-1.0..1.0)
    }
}

/// Background memory (heap baseline, GC pressure) under a plant's queues:
/// `level + amplitude * sin(2 pi (t + offset) / period) + U(-jitter, jitter)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseMemory {
    pub level: f64,
    pub amplitude: f64,
    pub period: f64,
    pub jitter: f64,
}

impl BaseMemory {
    pub fn constant(level: f64) -> Self {
        BaseMemory {
            level,
            amplitude: 0.0,
            period: 1.0,
            jitter: 0.0,
        }
    }

    /// Value at `tick` given the seeded phase offset and a unit noise draw.
    pub fn at(&self, tick: u64, offset: f64, unit_noise: f64) -> f64 {
        let angle = std::f64::consts::TAU * (tick as f64 + offset) / self.period;
        (self.level + self.amplitude * angle.sin() + self.jitter * unit_noise).max(0.0)
    }

    /// Lowest value the baseline can take.
    pub fn floor(&self) -> f64 {
        (self.level - self.amplitude - self.jitter).max(0.0)
    }
}
