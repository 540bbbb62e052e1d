//! Profiling statistics and controller synthesis.
//!
//! Samples are grouped by setting; per-group means and sample standard
//! deviations feed a least-squares gain estimate, the model-error bound
//! `delta = 1 + mean(3 sigma_i / m'_i)` and the coefficient of variation
//! `lambda = mean(sigma_i / m_i)`, where `m'_i` is the group mean measured
//! above the smallest sample seen anywhere in the profile.
//!
//! All sums are computed exactly and rounded once, so results do not depend
//! on sample order.

use std::cmp::Ordering;

use crate::controller::{compute_pole, compute_virtual_goal, SynthesisReport};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One profiling measurement. For indirect knobs `setting` is the deputy
/// value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample<T> {
    pub setting: T,
    pub perf: T,
}

impl<T> ProfileSample<T> {
    pub fn new(setting: T, perf: T) -> Self {
        ProfileSample { setting, perf }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats<T> {
    pub setting: T,
    pub count: usize,
    pub mean: T,
    pub stddev: T,
    pub mean_above_min: T,
}

/// Samples together with their per-setting statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet<T> {
    samples: Vec<ProfileSample<T>>,
    groups: Vec<GroupStats<T>>,
}

impl<T: Scalar> ProfileSet<T> {
    pub fn new(samples: Vec<ProfileSample<T>>) -> Result<Self> {
        let groups = group_stats(&samples)?;
        Ok(ProfileSet { samples, groups })
    }

    pub fn samples(&self) -> &[ProfileSample<T>] {
        &self.samples
    }

    /// Groups in ascending setting order.
    pub fn groups(&self) -> &[GroupStats<T>] {
        &self.groups
    }
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("finite values")
}

/// Correctly rounded sum (Shewchuk's algorithm with half-even fixup).
pub(crate) fn exact_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut partials: Vec<T> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != T::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return T::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = T::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != T::zero() {
            break;
        }
    }
    if n > 0
        && ((lo < T::zero() && partials[n - 1] < T::zero())
            || (lo > T::zero() && partials[n - 1] > T::zero()))
    {
        let y = lo + lo;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

fn mean_of<T: Scalar>(values: &[T]) -> T {
    exact_sum(values.iter().copied()) / T::of_usize(values.len())
}

/// Per-setting statistics, in ascending setting order.
pub fn group_stats<T: Scalar>(samples: &[ProfileSample<T>]) -> Result<Vec<GroupStats<T>>> {
    if samples.is_empty() {
        return Err(Error::invalid("no profiling samples"));
    }
    if let Some(bad) = samples
        .iter()
        .find(|s| !s.setting.is_finite() || !s.perf.is_finite() || s.perf < T::zero())
    {
        return Err(Error::invalid(format!(
            "sample ({}, {}) must be finite with nonnegative performance",
            bad.setting, bad.perf
        )));
    }

    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| cmp(&a.setting, &b.setting).then(cmp(&a.perf, &b.perf)));
    let global_min = sorted
        .iter()
        .map(|s| s.perf)
        .fold(T::infinity(), T::min);

    let mut groups = Vec::new();
    for chunk in sorted.chunk_by(|a, b| a.setting == b.setting) {
        let perfs: Vec<T> = chunk.iter().map(|s| s.perf).collect();
        let count = perfs.len();
        let mean = mean_of(&perfs);
        let stddev = if count < 2 {
            T::zero()
        } else {
            let ss = exact_sum(perfs.iter().map(|&p| (p - mean) * (p - mean)));
            (ss / T::of_usize(count - 1)).sqrt()
        };
        groups.push(GroupStats {
            setting: chunk[0].setting,
            count,
            mean,
            stddev,
            mean_above_min: (mean - global_min).max(T::zero()),
        });
    }
    Ok(groups)
}

/// Least-squares slope of group means against settings. The intercept is
/// fitted and discarded.
pub fn fit_alpha<T: Scalar>(groups: &[GroupStats<T>]) -> Result<T> {
    let mut settings: Vec<T> = groups.iter().map(|g| g.setting).collect();
    settings.sort_by(cmp);
    settings.dedup();
    if settings.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct settings to fit a gain, got {}",
            settings.len()
        )));
    }

    let xs: Vec<T> = groups.iter().map(|g| g.setting).collect();
    let ys: Vec<T> = groups.iter().map(|g| g.mean).collect();
    let x_bar = mean_of(&xs);
    let y_bar = mean_of(&ys);
    let sxy = exact_sum(xs.iter().zip(&ys).map(|(&x, &y)| (x - x_bar) * (y - y_bar)));
    let sxx = exact_sum(xs.iter().map(|&x| (x - x_bar) * (x - x_bar)));
    let slope = sxy / sxx;

    let span = settings[settings.len() - 1] - settings[0];
    let metric_scale = ys.iter().fold(T::zero(), |m, y| m.max(y.abs())) / span;
    if !slope.is_finite() || slope.abs() <= T::of(1e-9) * metric_scale {
        return Err(Error::DegenerateGain {
            slope: slope.as_f64(),
        });
    }
    Ok(slope)
}

/// `1 + mean(3 sigma_i / m'_i)` over groups measurably above the minimum.
pub fn compute_delta<T: Scalar>(groups: &[GroupStats<T>]) -> Result<T> {
    let max_above = groups
        .iter()
        .fold(T::zero(), |m, g| m.max(g.mean_above_min));
    let eps = T::of(1e-9) * max_above;
    let ratios: Vec<T> = groups
        .iter()
        .filter(|g| g.mean_above_min > T::zero() && g.mean_above_min >= eps)
        .map(|g| T::of(3.0) * g.stddev / g.mean_above_min)
        .collect();
    if ratios.is_empty() {
        return Err(Error::InsufficientData(
            "no profiled setting lies above the minimum performance".into(),
        ));
    }
    Ok(T::one() + mean_of(&ratios))
}

/// `mean(sigma_i / m_i)` over groups with a nonzero mean.
pub fn compute_lambda<T: Scalar>(groups: &[GroupStats<T>]) -> Result<T> {
    let ratios: Vec<T> = groups
        .iter()
        .filter(|g| g.mean != T::zero())
        .map(|g| g.stddev / g.mean)
        .collect();
    if ratios.is_empty() {
        return Err(Error::InsufficientData(
            "every profiled setting has zero mean performance".into(),
        ));
    }
    Ok(mean_of(&ratios))
}

/// Report derived from already grouped statistics.
pub fn synthesize_groups<T: Scalar>(
    groups: &[GroupStats<T>],
    goal: T,
    hard: bool,
) -> Result<SynthesisReport<T>> {
    let alpha = fit_alpha(groups)?;
    let delta = compute_delta(groups)?;
    let lambda = compute_lambda(groups)?;
    Ok(SynthesisReport {
        alpha,
        delta,
        lambda,
        pole: compute_pole(delta)?,
        virtual_goal: compute_virtual_goal(goal, lambda, hard)?,
    })
}

/// Full pipeline from raw samples to controller parameters.
pub fn synthesize<T: Scalar>(
    samples: &[ProfileSample<T>],
    goal: T,
    hard: bool,
) -> Result<SynthesisReport<T>> {
    synthesize_groups(&group_stats(samples)?, goal, hard)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(setting: f64, perf: f64) -> ProfileSample<f64> {
        ProfileSample::new(setting, perf)
    }

    fn g(setting: f64, mean: f64, stddev: f64, above: f64) -> GroupStats<f64> {
        GroupStats {
            setting,
            count: 2,
            mean,
            stddev,
            mean_above_min: above,
        }
    }

    #[test]
    fn zero_variance_groups() {
        let groups = group_stats(&[s(10.0, 4.0), s(10.0, 4.0), s(20.0, 8.0)]).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!((groups[0].setting, groups[0].mean), (10.0, 4.0));
        assert_eq!((groups[0].stddev, groups[0].mean_above_min), (0.0, 0.0));
        assert_eq!(groups[0].count, 2);
        assert_eq!((groups[1].mean, groups[1].stddev), (8.0, 0.0));
        assert_eq!(groups[1].mean_above_min, 4.0);
    }

    #[test]
    fn two_point_stddev() {
        let groups = group_stats(&[s(10.0, 3.0), s(10.0, 5.0)]).unwrap();
        assert_eq!(groups[0].mean, 4.0);
        assert!((groups[0].stddev - 1.41421356).abs() < 1e-8);
        assert_eq!(groups[0].mean_above_min, 1.0);
    }

    #[test]
    fn single_sample_group_has_zero_stddev() {
        let groups = group_stats(&[s(1.0, 7.0)]).unwrap();
        assert_eq!(groups[0].stddev, 0.0);
    }

    #[test]
    fn empty_and_bad_samples() {
        assert!(group_stats::<f64>(&[]).is_err());
        assert!(group_stats(&[s(1.0, -1.0)]).is_err());
        assert!(group_stats(&[s(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn exact_sum_is_correctly_rounded() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1f64; 10]), 1.0);
        assert_eq!(exact_sum(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn alpha_examples() {
        let groups = group_stats(&[s(10.0, 4.0), s(20.0, 8.0)]).unwrap();
        assert!((fit_alpha(&groups).unwrap() - 0.4).abs() < 1e-15);
        let line: Vec<_> = (0..6).map(|i| s(i as f64, 3.0 * i as f64 + 7.0)).collect();
        assert!((fit_alpha(&group_stats(&line).unwrap()).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_errors() {
        let one = group_stats(&[s(10.0, 4.0), s(10.0, 5.0)]).unwrap();
        assert!(matches!(fit_alpha(&one), Err(Error::InsufficientData(_))));
        let flat = group_stats(&[s(10.0, 4.0), s(20.0, 4.0)]).unwrap();
        assert!(matches!(fit_alpha(&flat), Err(Error::DegenerateGain { .. })));
    }

    #[test]
    fn delta_lambda_examples() {
        let det = [g(1.0, 5.0, 0.0, 0.0), g(2.0, 9.0, 0.0, 4.0)];
        assert_eq!(compute_delta(&det).unwrap(), 1.0);
        assert_eq!(compute_lambda(&det).unwrap(), 0.0);

        let noisy = [g(1.0, 10.0, 1.0, 3.0), g(2.0, 20.0, 2.0, 6.0)];
        assert!((compute_delta(&noisy).unwrap() - 2.0).abs() < 1e-15);
        assert!((compute_lambda(&noisy).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn delta_lambda_exclusions() {
        assert!(compute_delta(&[g(1.0, 5.0, 1.0, 0.0)]).is_err());
        assert!(compute_lambda(&[g(1.0, 0.0, 0.0, 0.0)]).is_err());
        let with_zero = [g(1.0, 0.0, 0.0, 0.0), g(2.0, 10.0, 1.0, 10.0)];
        assert!((compute_lambda(&with_zero).unwrap() - 0.1).abs() < 1e-15);
        assert!((compute_delta(&with_zero).unwrap() - 1.3).abs() < 1e-15);
    }

    #[test]
    fn synthesize_deterministic_plant() {
        let samples: Vec<_> = (1..=5)
            .flat_map(|c| (0..3).map(move |_| s(c as f64 * 10.0, 2.0 * c as f64 * 10.0 + 50.0)))
            .collect();
        let r = synthesize(&samples, 100.0, true).unwrap();
        assert_eq!(r.pole, 0.0);
        assert_eq!(r.virtual_goal, 100.0);
        assert_eq!(r.delta, 1.0);
        assert!((r.alpha - 2.0).abs() < 1e-12);
    }

    #[test]
    fn synthesize_composes_formulas() {
        // 3*1/1 and 3*3/3 average to 3; 1/10 and 3/30 average to 0.1.
        let groups = [g(0.0, 10.0, 1.0, 1.0), g(1.0, 30.0, 3.0, 3.0)];
        let r = synthesize_groups(&groups, 100.0, true).unwrap();
        assert!((r.delta - 4.0).abs() < 1e-15);
        assert!((r.lambda - 0.1).abs() < 1e-15);
        assert!((r.pole - 0.5).abs() < 1e-15);
        assert!((r.virtual_goal - 90.0).abs() < 1e-12);
        assert_eq!(r.alpha, 20.0);
    }
}
