use proptest::prelude::*;
use selftune_core::{compute_pole, control_step, ControllerParams, ControllerState};

fn nonzero_alpha() -> impl Strategy<Value = f64> {
    prop_oneof![0.001..1e3f64, -1e3..-0.001f64]
}

fn params() -> impl Strategy<Value = ControllerParams<f64>> {
    (nonzero_alpha(), 0.0..0.999f64, 1.0..1e4f64, 0.0..0.5f64, any::<bool>(), any::<bool>()).prop_map(
        |(alpha, pole, goal, lambda, hard, context_aware)| {
            let mut p = if hard {
                ControllerParams::hard(alpha, pole, goal, (1.0 - lambda) * goal)
            } else {
                ControllerParams::soft(alpha, pole, goal)
            };
            p.context_aware = context_aware;
            p
        },
    )
}

proptest! {
    #[test]
    fn pole_in_unit_interval(delta in 1.0..1e12f64) {
        let p = compute_pole(delta).unwrap();
        prop_assert!((0.0..1.0).contains(&p));
    }

    #[test]
    fn pole_grows_with_delta(a in 1.0..1e6f64, b in 1.0..1e6f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(compute_pole(lo).unwrap() <= compute_pole(hi).unwrap());
    }

    #[test]
    fn switching(p in params(), measured in 0.0..2e4f64, last in -1e3..1e3f64) {
        let mut state = ControllerState::new(last);
        let step = control_step(&mut state, &p.with_range(-1e300, 1e300), measured);
        let aggressive = p.hard && p.context_aware && measured > p.virtual_goal;
        prop_assert_eq!(step.effective_pole, if aggressive { 0.0 } else { p.pole });
    }

    #[test]
    fn clamped_to_range(p in params(), measured in 0.0..2e4f64, last in -1e3..1e3f64,
                        lo in -100.0..100.0f64, width in 0.0..200.0f64) {
        let p = p.with_range(lo, lo + width);
        let mut state = ControllerState::new(last);
        for m in [measured, 0.0, 2e4, measured / 2.0] {
            let step = control_step(&mut state, &p, m);
            prop_assert!(step.next_value >= lo && step.next_value <= lo + width);
            prop_assert_eq!(state.last_value, step.next_value);
        }
    }

    #[test]
    fn interaction_divides_adjustment(p in params(), e in -1e3..1e3f64, n in 1u32..16) {
        let one = p.adjustment(p.pole, e);
        let many = p.with_interaction(n).adjustment(p.pole, e);
        let want = one / n as f64;
        prop_assert!((many - want).abs() <= 4.0 * f64::EPSILON * want.abs());
        if n.is_power_of_two() {
            prop_assert_eq!(many, want);
        }
    }

    #[test]
    fn scale_covariance(p in params(), e in -1e3..1e3f64, t in 0.01..100.0f64, k in -4i32..5) {
        let base = p.adjustment(p.pole, e);
        let scaled = ControllerParams { alpha: p.alpha * t, ..p }.adjustment(p.pole, e);
        prop_assert!((scaled - base / t).abs() <= 8.0 * f64::EPSILON * (base / t).abs());
        let two_k = 2f64.powi(k);
        let exact = ControllerParams { alpha: p.alpha * two_k, ..p }.adjustment(p.pole, e);
        prop_assert_eq!(exact, base / two_k);
    }

    #[test]
    fn zero_error_is_a_fixed_point(p in params(), last in 0.0..1e3f64) {
        let mut state = ControllerState::new(last);
        let step = control_step(&mut state, &p, p.virtual_goal);
        prop_assert_eq!(step.next_value, last);
        prop_assert_eq!(step.error, 0.0);
    }

    #[test]
    fn nominal_plant_converges(alpha in nonzero_alpha(), pole in 0.0..0.99f64, goal in 1.0..1e4f64,
                               lambda in 0.0..0.5f64, hard in any::<bool>()) {
        let p = if hard {
            ControllerParams::hard(alpha, pole, goal, (1.0 - lambda) * goal)
        } else {
            ControllerParams::soft(alpha, pole, goal)
        }
        .with_range(-1e300, 1e300);
        let target = p.virtual_goal;
        let bound = if pole == 0.0 { 1 } else { ((1e-6f64).ln() / pole.ln()).ceil() as usize + 1 };
        let mut state = ControllerState::new(0.0);
        for _ in 0..bound {
            let s = alpha * state.last_value;
            control_step(&mut state, &p, s);
        }
        let s = alpha * state.last_value;
        prop_assert!((target - s).abs() < 1e-6 * target, "s={} target={} after {} steps", s, target, bound);
    }
}

#[test]
fn aggressive_step_lands_on_virtual_goal() {
    // Above the virtual goal the pole is 0, so one step fixes a linear plant exactly.
    let p = ControllerParams::hard(2.0, 0.9, 495.0, 445.5).with_range(0.0, 1e6);
    let mut state = ControllerState::new(300.0);
    let step = control_step(&mut state, &p, 600.0);
    assert_eq!(step.effective_pole, 0.0);
    assert_eq!(2.0 * step.next_value, 445.5);
}
