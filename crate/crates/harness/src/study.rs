use rayon::prelude::*;
use selftune_core::config_io::parse_real;
use selftune_sim::Scenario;

use crate::{run, Error, Mode, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub violations: u64,
    pub throughput_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Highest-throughput value with no violations; ties go to the smaller value.
    pub best_static: Option<SweepRow>,
}

/// Static grid searched by `sweep` when none is given.
pub const DEFAULT_SWEEP_RANGE: &str = "1:300:1";

/// `a:b:step`, inclusive of `b` when it lies on the grid.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Usage(format!("bad range '{text}', expected a:b:step"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| parse_real(p.trim()).ok_or_else(bad))
        .collect::<Result<_>>()?;
    let [a, b, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || b < a {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + step * i as f64).collect())
}

/// `N` (seeds 1..=N), `a-b` (inclusive) or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Usage(format!("bad seeds '{text}', expected N, a-b or a,b,c"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if text.contains(',') {
        text.split(',').map(num).collect::<Result<_>>()?
    } else if let Some((a, b)) = text.split_once('-') {
        let (a, b) = (num(a)?, num(b)?);
        (a..=b).collect()
    } else {
        (1..=num(text)?).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Run every static value in `values` on `scenario` (one seed).
pub fn sweep(scenario: &Scenario, values: &[f64], ticks: Option<u64>) -> Result<SweepResult> {
    let rows = values
        .par_iter()
        .map(|&v| {
            let s = run(scenario, Mode::Static(v), ticks)?.summary;
            Ok(SweepRow {
                value: v,
                violations: s.violations,
                throughput_cum: s.throughput_cum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_static = rows
        .iter()
        .filter(|r| r.violations == 0)
        .fold(None::<SweepRow>, |best, r| match best {
            Some(b) if b.throughput_cum >= r.throughput_cum => Some(b),
            _ => Some(*r),
        });
    Ok(SweepResult { rows, best_static })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: Mode,
    pub seed: u64,
    pub violations: u64,
    pub throughput_cum: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mode: Mode,
    pub seeds: usize,
    pub violating_seeds: usize,
    pub mean_violations: f64,
    pub mean_throughput: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    /// Ordered by mode (as given), then seed (as given).
    pub rows: Vec<CompareRow>,
    pub aggregates: Vec<Aggregate>,
}

impl CompareTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed,violations,throughput_cum,mean_abs_error\n");
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{}\n",
                r.mode, r.seed, r.violations, r.throughput_cum, r.mean_abs_error
            );
        }
        for a in &self.aggregates {
            out += &format!(
                "{},all,{},{},{}\n",
                a.mode, a.mean_violations, a.mean_throughput, a.mean_abs_error
            );
        }
        out
    }
}

/// Every (mode, seed) pair as an independent run, fanned out over threads.
pub fn compare(scenario: &Scenario, seeds: &[u64], modes: &[Mode], ticks: Option<u64>) -> Result<CompareTable> {
    let jobs: Vec<(Mode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let s = run(&scenario.clone().with_seed(seed), mode, ticks)?.summary;
            Ok(CompareRow {
                mode,
                seed,
                violations: s.violations,
                throughput_cum: s.throughput_cum,
                mean_abs_error: s.mean_abs_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let mine = &rows[i * seeds.len()..(i + 1) * seeds.len()];
            let n = mine.len() as f64;
            Aggregate {
                mode,
                seeds: mine.len(),
                violating_seeds: mine.iter().filter(|r| r.violations > 0).count(),
                mean_violations: mine.iter().map(|r| r.violations as f64).sum::<f64>() / n,
                mean_throughput: mine.iter().map(|r| r.throughput_cum).sum::<f64>() / n,
                mean_abs_error: mine.iter().map(|r| r.mean_abs_error).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(CompareTable { rows, aggregates })
}
