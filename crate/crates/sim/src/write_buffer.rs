//! In-memory write buffer flushed between an upper and a lower watermark.
//!
//! Writes fill the buffer until it reaches `upper_limit * heap`; a flush then
//! blocks every write while the buffer drains to `lower_limit * heap`. The
//! knob is the lower watermark and is read only when a flush starts. The
//! metric is the longest contiguous blocked stretch seen in a sliding window.

use std::collections::VecDeque;

use crate::workload::{Streams, WorkloadSchedule};
use crate::MetricReading;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteBufferConfig {
    pub heap_mb: f64,
    /// Fraction of heap that triggers a flush.
    pub upper_limit: f64,
    /// Mean drain speed during a flush, MB/tick.
    pub flush_rate: f64,
    /// Relative spread of the per-tick flush speed.
    pub flush_spread: f64,
    /// Relative spread of the per-tick write volume.
    pub write_spread: f64,
    /// Blocked ticks spent setting up each flush before draining starts.
    pub flush_overhead: u64,
    /// Sliding window for the worst-latency sensor, ticks.
    pub window: u64,
    /// Worst latency beyond which a tick counts as a violation, seconds.
    pub latency_limit: f64,
}

#[derive(Debug, Clone)]
pub struct WriteBufferPlant {
    config: WriteBufferConfig,
    schedule: WorkloadSchedule,
    streams: Streams,
    tick: u64,
    fill: f64,
    flushing: bool,
    flush_target: f64,
    overhead_left: u64,
    lower_limit: f64,
    /// Completed blocked stretches as (start, end) in seconds.
    blocked: VecDeque<(f64, f64)>,
    run_start: Option<f64>,
    flushes: u64,
    worst_latency: f64,
    written_cum: f64,
}

impl WriteBufferPlant {
    pub fn new(config: WriteBufferConfig, schedule: WorkloadSchedule) -> Self {
        WriteBufferPlant {
            config,
            schedule: schedule.clone(),
            streams: Streams::new(schedule.seed),
            tick: 0,
            fill: 0.0,
            flushing: false,
            flush_target: 0.0,
            overhead_left: 0,
            lower_limit: 0.0,
            blocked: VecDeque::new(),
            run_start: None,
            flushes: 0,
            worst_latency: 0.0,
            written_cum: 0.0,
        }
    }

    pub fn config(&self) -> &WriteBufferConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    pub fn flushes(&self) -> u64 {
        self.flushes
    }

    pub fn worst_latency(&self) -> f64 {
        self.worst_latency
    }

    pub fn lower_limit(&self) -> f64 {
        self.lower_limit
    }

    pub fn set_latency_limit(&mut self, limit: f64) {
        self.config.latency_limit = limit;
    }

    /// True when the next `step` will start a flush and read the knob.
    pub fn flush_pending(&self) -> bool {
        !self.flushing && self.fill >= self.config.upper_limit * self.config.heap_mb
    }

    /// Longest blocked stretch overlapping the window that ends at `now`,
    /// counting only the part inside the window.
    fn window_worst(&self, now: f64) -> f64 {
        let lo = now - self.config.window as f64;
        let clipped = |start: f64, end: f64| (end.min(now) - start.max(lo)).max(0.0);
        let done = self.blocked.iter().map(|&(s, e)| clipped(s, e));
        let ongoing = self.run_start.map(|s| clipped(s, now));
        done.chain(ongoing).fold(0.0, f64::max)
    }

    /// Advance one tick. `lower_limit` (fraction of heap) only takes effect
    /// when a flush starts on this tick. A flush that reaches its target
    /// partway through a tick unblocks writes for the rest of that tick.
    pub fn step(&mut self, lower_limit: f64) -> MetricReading {
        let phase = *self.schedule.phase_at(self.tick);
        let heap = self.config.heap_mb;
        let write_noise = self.streams.noise_unit();
        let flush_noise = self.streams.noise_unit();
        let t = self.tick as f64;

        if self.flush_pending() {
            // The flush must drain something, so the lower limit stays below the upper.
            let lower = lower_limit.clamp(0.0, self.config.upper_limit.next_down());
            self.lower_limit = lower;
            self.flush_target = lower * heap;
            self.flushing = true;
            self.overhead_left = self.config.flush_overhead;
            self.flushes += 1;
            self.run_start = Some(t);
        }

        // Share of this tick during which writes are accepted.
        let mut open = 1.0;
        if self.flushing {
            open = 0.0;
            if self.overhead_left > 0 {
                self.overhead_left -= 1;
            } else {
                let rate = self.config.flush_rate * (1.0 + self.config.flush_spread * flush_noise);
                let left = self.fill - self.flush_target;
                if left <= rate {
                    let used = left / rate;
                    self.fill = self.flush_target;
                    self.flushing = false;
                    let start = self.run_start.take().expect("flush has a start");
                    self.blocked.push_back((start, t + used));
                    open = 1.0 - used;
                } else {
                    self.fill -= rate;
                }
            }
        }
        if open > 0.0 {
            let w = (phase.arrival_rate * (1.0 + self.config.write_spread * write_noise)).max(0.0) * open;
            self.fill += w;
            self.written_cum += w;
        }

        let now = t + 1.0;
        let lo = now - self.config.window as f64;
        while self.blocked.front().is_some_and(|&(_, e)| e <= lo) {
            self.blocked.pop_front();
        }

        self.worst_latency = self.window_worst(now);
        self.tick += 1;
        MetricReading {
            metric: self.worst_latency,
            deputy: self.fill,
            throughput_cum: self.written_cum,
            violation: self.worst_latency > self.config.latency_limit,
        }
    }
}
