//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use selftune_core::config_io::{
    parse_global_sys, parse_goal_file, parse_knob_sys, serialize_global_sys, serialize_goal_file,
    serialize_knob_sys, GlobalSysFile, GoalEntry, GoalFile, KnobEntry, KnobSysFile, Synthesized,
};
use selftune_core::{
    compute_delta, compute_lambda, compute_pole, compute_virtual_goal, control_step, fit_alpha,
    group_stats, ControllerParams, ControllerState, GoalRegistry, Knob, ProfileSample,
};
use selftune_harness::{compare, parse_range, run, sweep, Mode, DEFAULT_SWEEP_RANGE};
use selftune_sim::make_scenario;

const SEEDS: u64 = 50;

struct Check {
    name: &'static str,
    limit: Duration,
    run: fn() -> (bool, String),
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

// Brute-force oracles working straight from raw samples with plain loops.

fn oracle_groups(samples: &[(f64, f64)]) -> Vec<(f64, Vec<f64>)> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for &(x, y) in samples {
        match groups.iter_mut().find(|g| g.0 == x) {
            Some(g) => g.1.push(y),
            None => groups.push((x, vec![y])),
        }
    }
    groups
}

fn oracle_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn oracle_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = oracle_mean(v);
    let mut ss = 0.0;
    for x in v {
        ss += (x - m) * (x - m);
    }
    (ss / (v.len() - 1) as f64).sqrt()
}

fn oracle_alpha(samples: &[(f64, f64)]) -> f64 {
    let groups = oracle_groups(samples);
    let n = groups.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, ys) in &groups {
        let y = oracle_mean(ys);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn oracle_delta(samples: &[(f64, f64)]) -> f64 {
    let lowest = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let groups = oracle_groups(samples);
    let above: Vec<(f64, f64)> = groups
        .iter()
        .map(|(_, ys)| (oracle_mean(ys) - lowest, oracle_sd(ys)))
        .collect();
    let top = above.iter().map(|a| a.0).fold(0.0, f64::max);
    let mut total = 0.0;
    let mut n = 0;
    for (m, sd) in above {
        if m > 0.0 && m >= 1e-9 * top {
            total += 3.0 * sd / m;
            n += 1;
        }
    }
    1.0 + total / n as f64
}

fn oracle_lambda(samples: &[(f64, f64)]) -> f64 {
    let groups = oracle_groups(samples);
    let mut total = 0.0;
    for (_, ys) in &groups {
        total += oracle_sd(ys) / oracle_mean(ys);
    }
    total / groups.len() as f64
}

fn random_profile(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let settings = rng.random_range(3..10);
    let reps = rng.random_range(2..30);
    let base = rng.random_range(100.0..1000.0);
    let step = rng.random_range(1.0..50.0);
    // Total change across the grid stays within 80% of the base level.
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let slope = sign * rng.random_range(0.1..0.8) * base / (step * settings as f64);
    let noise = rng.random_range(0.01..0.2) * base;
    let mut out = Vec::new();
    for i in 0..settings {
        let x = step * (i as f64 + 1.0);
        for _ in 0..reps {
            let y = base + slope * x + noise * rng.random_range(-1.0..1.0);
            out.push((x, y));
        }
    }
    out
}

fn formula_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 1000;
    let mut worst = [0.0f64; 5];
    for _ in 0..cases {
        let delta = rng.random_range(0.0..6.0f64).exp();
        let want = if delta > 2.0 { (delta - 2.0) / delta } else { 0.0 };
        worst[0] = worst[0].max(rel_err(compute_pole(delta).unwrap(), want));

        let goal = rng.random_range(1.0..1e4);
        let lambda = rng.random_range(0.0..0.99);
        let vg = compute_virtual_goal(goal, lambda, true).unwrap();
        worst[1] = worst[1].max(rel_err(vg, goal - lambda * goal));

        let raw = random_profile(&mut rng);
        let samples: Vec<ProfileSample<f64>> =
            raw.iter().map(|&(x, y)| ProfileSample::new(x, y)).collect();
        let groups = group_stats(&samples).unwrap();
        worst[2] = worst[2].max(rel_err(compute_delta(&groups).unwrap(), oracle_delta(&raw)));
        worst[3] = worst[3].max(rel_err(compute_lambda(&groups).unwrap(), oracle_lambda(&raw)));
        worst[4] = worst[4].max(rel_err(fit_alpha(&groups).unwrap(), oracle_alpha(&raw)));
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    (
        max <= 1e-9,
        format!(
            "{cases} inputs per formula, max rel err pole={:.1e} vg={:.1e} delta={:.1e} lambda={:.1e} alpha={:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn noiseless_convergence() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut failures = 0;
    let mut slowest = 0;
    for _ in 0..100 {
        let alpha = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let pole: f64 = rng.random_range(0.0..=0.95);
        let goal = rng.random_range(1.0..1e4);
        let bound = ((1e-6f64).ln() / pole.max(0.01).ln()).ceil() as usize + 2;
        let params = ControllerParams::soft(alpha, pole, goal).with_range(-1e300, 1e300);
        let mut state = ControllerState::new(0.0);
        let mut reached = None;
        for k in 1..=bound {
            let measured = alpha * state.last_value;
            control_step(&mut state, &params, measured);
            if reached.is_none() && ((goal - alpha * state.last_value) / goal).abs() < 1e-6 {
                reached = Some(k);
            }
        }
        match reached {
            Some(k) => slowest = slowest.max(k),
            None => failures += 1,
        }
    }
    (
        failures == 0,
        format!("100 plants, {failures} missed the step bound, slowest converged in {slowest} steps"),
    )
}

fn hard_limit_safety() -> (bool, String) {
    let s = make_scenario("hb3813-two-phase").unwrap();
    let seeds: Vec<u64> = (1..=SEEDS).collect();
    let t = compare(&s, &seeds, &[Mode::SmartConf, Mode::Static(1000.0), Mode::NoVirtualGoal], None).unwrap();
    let [smart, stat, novg] = [0, 1, 2].map(|i| t.aggregates[i].violating_seeds);
    let ok = smart == 0 && stat * 10 >= 9 * seeds.len() && novg > smart;
    (
        ok,
        format!(
            "violating seeds of {}: smartconf={smart} static:1000={stat} no-virtual-goal={novg}",
            seeds.len()
        ),
    )
}

fn single_pole_ablation() -> (bool, String) {
    let s = make_scenario("hb3813-unstable").unwrap();
    let seeds: Vec<u64> = (1..=SEEDS).collect();
    let t = compare(&s, &seeds, &[Mode::SmartConf, Mode::SinglePole], None).unwrap();
    let smart = t.aggregates[0].violating_seeds;
    let single = t.aggregates[1].violating_seeds;
    (
        smart == 0 && single * 2 >= seeds.len(),
        format!("violating seeds of {}: smartconf={smart} single-pole={single}", seeds.len()),
    )
}

fn beats_best_static() -> (bool, String) {
    let base = make_scenario("hb3813-two-phase").unwrap();
    let grid = parse_range(DEFAULT_SWEEP_RANGE).unwrap();
    let ratios: Vec<f64> = (1..=SEEDS)
        .into_par_iter()
        .map(|seed| {
            let s = base.clone().with_seed(seed);
            let best = sweep(&s, &grid, None).unwrap().best_static.expect("some safe static");
            run(&s, Mode::SmartConf, None).unwrap().summary.throughput_cum / best.throughput_cum
        })
        .collect();
    let wins = ratios.iter().filter(|&&r| r >= 1.1).count();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    (
        wins >= 45,
        format!("{wins}/{SEEDS} seeds at >= 1.1x best static, ratio min={min:.3} mean={mean:.3}"),
    )
}

fn two_knob_composition() -> (bool, String) {
    let base = make_scenario("dualqueue-readwrite").unwrap();
    let switch = base.schedule.phases[0].duration as usize;
    let per_seed: Vec<(u64, [f64; 2])> = (1..=SEEDS)
        .into_par_iter()
        .map(|seed| {
            let out = run(&base.clone().with_seed(seed), Mode::SmartConf, None).unwrap();
            let change = [0, 1].map(|k| {
                let mean = |rows: &[selftune_harness::TraceRow]| {
                    rows.iter().map(|r| r.conf[k]).sum::<f64>() / rows.len() as f64
                };
                let (a, b) = (mean(&out.trace[..switch]), mean(&out.trace[switch..]));
                (b - a).abs() / a.abs().max(f64::MIN_POSITIVE)
            });
            (out.summary.violations, change)
        })
        .collect();
    let violating = per_seed.iter().filter(|p| p.0 > 0).count();
    let adapted = per_seed.iter().filter(|p| p.1.iter().all(|&c| c > 0.1)).count();
    let least = [0, 1].map(|k| per_seed.iter().map(|p| p.1[k]).fold(f64::INFINITY, f64::min));
    (
        violating == 0 && adapted == per_seed.len(),
        format!(
            "violating seeds {violating}/{SEEDS}, both knobs moved >10% on {adapted}/{SEEDS}, smallest change request={:.0}% response={:.0}%",
            least[0] * 100.0,
            least[1] * 100.0
        ),
    )
}

fn interaction_halves_step() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let alpha = rng.random_range(0.01..100.0);
        let pole = rng.random_range(0.0..0.99);
        let goal = rng.random_range(10.0..1000.0);
        let measured = rng.random_range(0.0..2000.0);
        let one = ControllerParams::hard(alpha, pole, goal, 0.9 * goal).with_range(-1e300, 1e300);
        let two = one.with_interaction(2);
        let mut s1 = ControllerState::new(0.0);
        let mut s2 = ControllerState::new(0.0);
        let a = control_step(&mut s1, &one, measured).next_value;
        let b = control_step(&mut s2, &two, measured).next_value;
        if b != a / 2.0 {
            mismatches += 1;
        }
    }

    // N comes from the registry: a second knob on the same super-hard goal
    // halves the first step taken from the same state.
    let first_step = |knobs: &[&str]| {
        let reg = GoalRegistry::new();
        reg.set_goal("mem", 500.0, true, true).unwrap();
        let built: Vec<Knob<f64>> = knobs
            .iter()
            .map(|name| {
                Knob::builder(*name, "mem")
                    .samples((1..=4).map(|i| ProfileSample::new(i as f64, 100.0 + 3.0 * i as f64)).collect())
                    .range(-1e6, 1e6)
                    .build(&reg)
                    .unwrap()
            })
            .collect();
        built[0].set_perf(300.0);
        (built[0].get_conf(), built[0].params().interaction_n)
    };
    let (alone, n1) = first_step(&["a"]);
    let (shared, n) = first_step(&["a", "b"]);
    let registry_ok = n1 == 1 && n == 2 && shared == alone / 2.0 && shared != 0.0;
    (
        mismatches == 0 && registry_ok,
        format!("1000 random steps, {mismatches} not exactly halved; registry N={n}, knob step halved={registry_ok}"),
    )
}

fn goal_shift_tracking() -> (bool, String) {
    let base = make_scenario("hb2149-goal-shift").unwrap();
    let (shift, new_goal) = base.goal_shift.expect("preset shifts its goal");
    let ticks = base.ticks();
    let from = (shift + ticks.div_ceil(10)) as usize;
    let means: Vec<f64> = (1..=SEEDS)
        .into_par_iter()
        .map(|seed| {
            let out = run(&base.clone().with_seed(seed), Mode::SmartConf, None).unwrap();
            let tail = &out.trace[from..];
            tail.iter().map(|r| r.metric).sum::<f64>() / tail.len() as f64
        })
        .collect();
    let ok = means.iter().filter(|&&m| m <= new_goal).count();
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    (
        ok >= 45,
        format!(
            "{ok}/{SEEDS} seeds with mean worst latency <= {new_goal} over ticks {from}..{ticks}, average {avg:.3}"
        ),
    )
}

fn name(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[char] = &['a', 'z', 'Q', '0', '9', '.', '_', '-', ':', '/', 'é', 'λ', '+'];
    let len = rng.random_range(1..16);
    (0..len).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect()
}

fn real(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-1e6..1e6),
        1 => rng.random_range(0..2000) as f64,
        2 => f64::from_bits(rng.random::<u64>() >> 2),
        _ => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300)),
    }
}

fn positive(rng: &mut ChaCha8Rng) -> f64 {
    let x = real(rng).abs();
    if x > 0.0 && x.is_finite() {
        x
    } else {
        1.5
    }
}

fn unique_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    while names.len() < n {
        let c = name(rng);
        if !names.contains(&c) {
            names.push(c);
        }
    }
    names
}

fn config_round_trip() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut bad = Vec::new();
    for i in 0..1000 {
        let mut sys = KnobSysFile::new(name(&mut rng), name(&mut rng), real(&mut rng));
        if rng.random_bool(0.5) {
            sys.deputy_name = Some(name(&mut rng));
        }
        if rng.random_bool(0.7) {
            let delta = 1.0 + positive(&mut rng) % 100.0;
            sys.synthesized = Some(Synthesized {
                alpha: positive(&mut rng) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                delta,
                lambda: positive(&mut rng) % 1.0,
                pole: compute_pole(delta).unwrap(),
                virtual_goal: positive(&mut rng),
            });
        }
        sys.samples = (0..rng.random_range(0..20))
            .map(|_| ProfileSample::new(real(&mut rng), real(&mut rng).abs()))
            .collect();

        let (n_goals, n_knobs) = (rng.random_range(0..5), rng.random_range(0..5));
        let goals = GoalFile {
            entries: unique_names(&mut rng, n_goals)
                .into_iter()
                .map(|metric| {
                    let hard = rng.random_bool(0.5);
                    GoalEntry {
                        metric,
                        goal: positive(&mut rng),
                        hard,
                        super_hard: hard && rng.random_bool(0.5),
                    }
                })
                .collect(),
        };

        let global = GlobalSysFile {
            profiling_enabled: rng.random_bool(0.5),
            knobs: unique_names(&mut rng, n_knobs)
                .into_iter()
                .map(|conf_name| KnobEntry {
                    conf_name,
                    metric: name(&mut rng),
                })
                .collect(),
        };

        let t = serialize_knob_sys(&sys);
        if parse_knob_sys(&t).map(|f| serialize_knob_sys(&f)).ok().as_ref() != Some(&t) {
            bad.push(format!("sys#{i}"));
        }
        let t = serialize_goal_file(&goals);
        if parse_goal_file(&t).map(|f| serialize_goal_file(&f)).ok().as_ref() != Some(&t) {
            bad.push(format!("goals#{i}"));
        }
        let t = serialize_global_sys(&global);
        if parse_global_sys(&t).map(|f| serialize_global_sys(&f)).ok().as_ref() != Some(&t) {
            bad.push(format!("global#{i}"));
        }
    }
    (
        bad.is_empty(),
        format!("1000 files of each kind, {} not byte-identical {:?}", bad.len(), &bad[..bad.len().min(5)]),
    )
}

fn run_determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let invocations: [&[&str]; 4] = [
        &["--scenario", "hb3813-two-phase", "--seed", "7"],
        &["--scenario", "hb3813-unstable", "--mode", "single-pole"],
        &["--scenario", "hb2149-goal-shift", "--seed", "3"],
        &["--plant", "dual-queue", "--mode", "static:120"],
    ];
    let mut differing = 0;
    for (i, flags) in invocations.iter().enumerate() {
        let outputs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
            .map(|rep| {
                let path = dir.path().join(format!("{i}-{rep}.csv"));
                let out = Command::new(env!("CARGO_BIN_EXE_selftune"))
                    .arg("run")
                    .args(*flags)
                    .arg("--out")
                    .arg(&path)
                    .output()
                    .unwrap();
                assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
                (std::fs::read(&path).unwrap(), out.stdout)
            })
            .collect();
        if outputs[0] != outputs[1] || outputs[0].0.is_empty() {
            differing += 1;
        }
    }
    (
        differing == 0,
        format!("{} invocations run twice, {differing} produced different bytes", invocations.len()),
    )
}

fn main() -> ExitCode {
    let checks = [
        Check { name: "formula-oracles", limit: Duration::from_secs(5), run: formula_oracles },
        Check { name: "noiseless-convergence", limit: Duration::from_secs(5), run: noiseless_convergence },
        Check { name: "hard-limit-safety", limit: Duration::from_secs(30), run: hard_limit_safety },
        Check { name: "single-pole-ablation", limit: Duration::from_secs(30), run: single_pole_ablation },
        Check { name: "beats-best-static", limit: Duration::from_secs(60), run: beats_best_static },
        Check { name: "two-knob-composition", limit: Duration::from_secs(30), run: two_knob_composition },
        Check { name: "interaction-halves-step", limit: Duration::from_secs(1), run: interaction_halves_step },
        Check { name: "goal-shift-tracking", limit: Duration::from_secs(30), run: goal_shift_tracking },
        Check { name: "config-round-trip", limit: Duration::from_secs(5), run: config_round_trip },
        Check { name: "run-determinism", limit: Duration::from_secs(5), run: run_determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in checks.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let (ok, detail) = (c.run)();
        let took = start.elapsed();
        let in_time = took <= c.limit;
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        let late = if in_time { "" } else { ", over time limit" };
        println!(
            "{} {}: {detail} ({:.2}s, limit {}s{late})",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
