//! RPC receive queue whose length is capped by a size-limit knob. Memory is
//! the background baseline plus every queued request's size.

use std::collections::VecDeque;

use crate::workload::{BaseMemory, Streams, WorkloadSchedule};
use crate::MetricReading;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedQueueConfig {
    pub base: BaseMemory,
    /// Hard memory limit, MB.
    pub mem_limit: f64,
    /// Share of the queue the handlers complete per tick.
    pub service_fraction: f64,
    /// Most requests completed per tick.
    pub drain_rate: usize,
    /// Size of a read request, MB.
    pub read_size_mb: f64,
    /// Per-request relative size spread: sizes are `size * (1 + U(-s, s))`.
    pub size_spread: f64,
}

#[derive(Debug, Clone)]
pub struct BoundedQueuePlant {
    config: BoundedQueueConfig,
    schedule: WorkloadSchedule,
    streams: Streams,
    offset: f64,
    tick: u64,
    queue: VecDeque<f64>,
    base_now: f64,
    memory_used: f64,
    throughput_cum: u64,
    rejected_cum: u64,
}

impl BoundedQueuePlant {
    pub fn new(config: BoundedQueueConfig, schedule: WorkloadSchedule) -> Self {
        let mut streams = Streams::new(schedule.seed);
        let offset = (streams.noise_unit() + 1.0) * 0.5 * config.base.period;
        let base_now = config.base.level;
        BoundedQueuePlant {
            config,
            schedule,
            streams,
            offset,
            tick: 0,
            queue: VecDeque::new(),
            base_now,
            memory_used: base_now,
            throughput_cum: 0,
            rejected_cum: 0,
        }
    }

    pub fn config(&self) -> &BoundedQueueConfig {
        &self.config
    }

    pub fn schedule(&self) -> &WorkloadSchedule {
        &self.schedule
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Request sizes currently queued, oldest first.
    pub fn queued(&self) -> impl Iterator<Item = f64> + '_ {
        self.queue.iter().copied()
    }

    pub fn base_mem(&self) -> f64 {
        self.base_now
    }

    pub fn memory_used(&self) -> f64 {
        self.memory_used
    }

    pub fn throughput_cum(&self) -> u64 {
        self.throughput_cum
    }

    pub fn rejected_cum(&self) -> u64 {
        self.rejected_cum
    }

    fn drain_count(&self) -> usize {
        let len = self.queue.len();
        if len == 0 {
            return 0;
        }
        let share = (self.config.service_fraction * len as f64).floor() as usize;
        share.max(1).min(self.config.drain_rate).min(len)
    }

    /// Advance one tick with the queue limit at `max_queue_size`: drain,
    /// then admit arrivals while the queue is shorter than the limit.
    pub fn step(&mut self, max_queue_size: f64) -> MetricReading {
        let phase = *self.schedule.phase_at(self.tick);

        let served = self.drain_count();
        self.queue.drain(..served);
        self.throughput_cum += served as u64;

        let arrivals = self.streams.poisson(phase.arrival_rate);
        for _ in 0..arrivals {
            let is_read = self.streams.arrival_uniform() < phase.read_fraction;
            let spread = 1.0 + self.config.size_spread * self.streams.arrival_unit();
            let size = if is_read {
                self.config.read_size_mb
            } else {
                phase.request_size_mb
            } * spread;
            if (self.queue.len() as f64) < max_queue_size {
                self.queue.push_back(size);
            } else {
                self.rejected_cum += 1;
            }
        }

        self.base_now = self
            .config
            .base
            .at(self.tick, self.offset, self.streams.noise_unit());
        self.memory_used = self.base_now + self.queue.iter().sum::<f64>();
        self.tick += 1;

        MetricReading {
            metric: self.memory_used,
            deputy: self.queue.len() as f64,
            throughput_cum: self.throughput_cum as f64,
            violation: self.memory_used > self.config.mem_limit,
        }
    }
}
