//! Request queue feeding a response queue, each with its own size limit, both
//! drawing on one memory budget. Writes are large in the request queue and
//! small in the response queue; reads are the reverse. Handlers complete a
//! share of the request queue per tick, while responses go out over a link
//! with a fixed MB-per-tick budget. A handled request whose response finds
//! the response queue full is failed and dropped.

use std::collections::VecDeque;

use crate::workload::{BaseMemory, Streams, WorkloadSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQueueConfig {
    pub base: BaseMemory,
    pub mem_limit: f64,
    pub write_request_mb: f64,
    pub write_response_mb: f64,
    pub read_request_mb: f64,
    pub read_response_mb: f64,
    /// Share of the request queue handled per tick.
    pub request_service: f64,
    /// MB of responses sent per tick. At least one response goes out per
    /// tick when any is waiting.
    pub response_bandwidth_mb: f64,
    pub size_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Call {
    is_read: bool,
    request_mb: f64,
    response_mb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualReading {
    pub metric: f64,
    pub request_len: f64,
    pub response_len: f64,
    pub throughput_cum: f64,
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct DualQueuePlant {
    config: DualQueueConfig,
    schedule: WorkloadSchedule,
    streams: Streams,
    offset: f64,
    tick: u64,
    requests: VecDeque<Call>,
    responses: VecDeque<Call>,
    base_now: f64,
    memory_used: f64,
    completed: u64,
    rejected: u64,
}

fn served(len: usize, share: f64) -> usize {
    if len == 0 {
        0
    } else {
        ((share * len as f64).floor() as usize).clamp(1, len)
    }
}

impl DualQueuePlant {
    pub fn new(config: DualQueueConfig, schedule: WorkloadSchedule) -> Self {
        let mut streams = Streams::new(schedule.seed);
        let offset = (streams.noise_unit() + 1.0) * 0.5 * config.base.period;
        DualQueuePlant {
            config,
            schedule,
            streams,
            offset,
            tick: 0,
            requests: VecDeque::new(),
            responses: VecDeque::new(),
            base_now: config.base.level,
            memory_used: config.base.level,
            completed: 0,
            rejected: 0,
        }
    }

    pub fn config(&self) -> &DualQueueConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn memory_used(&self) -> f64 {
        self.memory_used
    }

    pub fn base_mem(&self) -> f64 {
        self.base_now
    }

    /// Memory held by the request queue and by the response queue.
    pub fn queue_mb(&self) -> (f64, f64) {
        (
            self.requests.iter().map(|c| c.request_mb).sum(),
            self.responses.iter().map(|c| c.response_mb).sum(),
        )
    }

    pub fn queued_mb(&self) -> f64 {
        let (req, resp) = self.queue_mb();
        req + resp
    }

    /// Requests refused at either queue so far.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Advance one tick: responses are sent, handled requests move to the
    /// response queue while it is below its limit, then arrivals are admitted.
    pub fn step(&mut self, request_limit: f64, response_limit: f64) -> DualReading {
        let phase = *self.schedule.phase_at(self.tick);

        let mut budget = self.config.response_bandwidth_mb;
        let mut sent = 0;
        while let Some(front) = self.responses.front() {
            if sent > 0 && front.response_mb > budget {
                break;
            }
            budget -= front.response_mb;
            self.responses.pop_front();
            sent += 1;
        }
        self.completed += sent;

        let handled = served(self.requests.len(), self.config.request_service);
        for call in self.requests.drain(..handled) {
            if (self.responses.len() as f64) < response_limit {
                self.responses.push_back(call);
            } else {
                self.rejected += 1;
            }
        }

        let arrivals = self.streams.poisson(phase.arrival_rate);
        for _ in 0..arrivals {
            let is_read = self.streams.arrival_uniform() < phase.read_fraction;
            let spread = 1.0 + self.config.size_spread * self.streams.arrival_unit();
            let (req, resp) = if is_read {
                (self.config.read_request_mb, self.config.read_response_mb)
            } else {
                (self.config.write_request_mb, self.config.write_response_mb)
            };
            if (self.requests.len() as f64) < request_limit {
                self.requests.push_back(Call {
                    is_read,
                    request_mb: req * spread,
                    response_mb: resp * spread,
                });
            } else {
                self.rejected += 1;
            }
        }

        self.base_now = self
            .config
            .base
            .at(self.tick, self.offset, self.streams.noise_unit());
        self.memory_used = self.base_now + self.queued_mb();
        self.tick += 1;
        DualReading {
            metric: self.memory_used,
            request_len: self.requests.len() as f64,
            response_len: self.responses.len() as f64,
            throughput_cum: self.completed as f64,
            violation: self.memory_used > self.config.mem_limit,
        }
    }

    /// Reads currently waiting in either queue.
    pub fn reads_in_flight(&self) -> usize {
        self.requests
            .iter()
            .chain(&self.responses)
            .filter(|c| c.is_read)
            .count()
    }
}
