use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sepm_core::profile::{OcclusionMode, Profile};
use sepm_core::valve::{Tube, Valve, ValveError, ValveModel, ValveRecord};
use sepm_core::Sign;

fn model_with(edit: impl FnOnce(&mut Profile)) -> Arc<ValveModel> {
    let mut p = Profile::calibrated_default();
    edit(&mut p);
    Arc::new(ValveModel::from_profile(&p).unwrap())
}

fn model() -> Arc<ValveModel> {
    model_with(|_| {})
}

fn sign(b: bool) -> Sign {
    if b {
        Sign::Pos
    } else {
        Sign::Neg
    }
}

proptest! {
    #[test]
    fn seal_follows_logical_state(cmds in prop::collection::vec((any::<bool>(), 0.0..6e5f64), 1..30)) {
        let mut v = Valve::new("V", model(), Sign::Neg).unwrap();
        for (pos, p) in cmds {
            match v.switch(sign(pos), p) {
                Ok(r) => {
                    prop_assert!(r.occlusion_achieved);
                    let sealed = Tube::sealed_in(v.logical_state());
                    prop_assert_eq!(v.occluded(), Some(sealed));
                    prop_assert!(!v.is_open(sealed) && v.is_open(Tube::open_in(v.logical_state())));
                    let (up, low) = v.tube_conductances();
                    prop_assert!((up == 0.0) != (low == 0.0));
                    prop_assert_eq!(v.logical_state() == Sign::Pos, up == 0.0);
                }
                Err(ValveError::OcclusionFailed { .. }) => prop_assert_eq!(v.occluded(), None),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn energy_is_pulses_times_unit(cmds in prop::collection::vec((any::<bool>(), 0.0..4e5f64), 1..30)) {
        let mut v = Valve::new("V", model(), Sign::Pos).unwrap();
        let unit = v.model().per_pulse_energy();
        let mut total = 0.0;
        let mut pulses = 0u64;
        for (pos, p) in cmds {
            let (e, n) = match v.switch(sign(pos), p) {
                Ok(r) => (r.energy, r.pulses_used),
                Err(ValveError::OcclusionFailed { energy, pulses, .. }) => (energy, pulses),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert!(n >= 1);
            prop_assert_eq!(e, unit * n as f64);
            total += e;
            pulses += u64::from(n);
        }
        prop_assert_eq!(v.pulse_count(), pulses);
        prop_assert!((total - unit * pulses as f64).abs() <= 1e-12 * total);
    }

    #[test]
    fn first_pulse_failure_is_monotone_in_pressure(p in 2e5..5e5f64, dp in 0.0..2e5f64) {
        let single = model_with(|p| p.valve.max_retry = 0);
        let attempt = |pressure: f64| Valve::new("V", single.clone(), Sign::Neg).unwrap().switch(Sign::Pos, pressure).is_ok();
        if !attempt(p) {
            prop_assert!(!attempt(p + dp));
        }
    }

    #[test]
    fn record_round_trip_restores_valve(pos in any::<bool>(), flips in 0u32..5) {
        let m = model();
        let mut v = Valve::new("V7", m.clone(), sign(pos)).unwrap();
        for k in 0..flips {
            v.switch(sign(k % 2 == 0), 1e5).unwrap();
        }
        let text = toml::to_string(&v.record()).unwrap();
        let back: ValveRecord = toml::from_str(&text).unwrap();
        let restored = Valve::restore(&back, m).unwrap();
        prop_assert_eq!(restored.record(), v.record());
        prop_assert_eq!(restored.tube_conductances(), v.tube_conductances());
        prop_assert_eq!(restored.occluded(), v.occluded());
        prop_assert_eq!(restored.sepm(), v.sepm());
    }
}

#[test]
fn threshold_sits_at_three_hundred_twenty_kilopascal() {
    let v = Valve::new("V", model(), Sign::Neg).unwrap();
    assert!(
        (v.dynamic_threshold() - 320e3).abs() < 1e3,
        "{}",
        v.dynamic_threshold()
    );
    assert!(v.static_limit() >= 500e3, "{}", v.static_limit());
}

#[test]
fn retry_pulses_recover_above_threshold() {
    let m = model();
    let mut v = Valve::new("V", m.clone(), Sign::Neg).unwrap();
    let r = v.switch(Sign::Pos, 330e3).unwrap();
    assert!(r.pulses_used > 1);
    assert!(m.stroke_threshold(r.pulses_used - 1, &m.tube) >= 330e3);
    assert!(m.stroke_threshold(r.pulses_used - 2, &m.tube) < 330e3);

    let far = m.stroke_threshold(m.max_retry, &m.tube) + 1.0;
    let mut v = Valve::new("V", m.clone(), Sign::Neg).unwrap();
    match v.switch(Sign::Pos, far) {
        Err(ValveError::OcclusionFailed { pulses, .. }) => assert_eq!(pulses, m.max_retry + 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stochastic_mode_is_seed_deterministic_and_ramps() {
    let m = model_with(|p| p.valve.occlusion_mode = OcclusionMode::Stochastic);
    let threshold = m.stroke_threshold(0, &m.tube);
    let trial = |pressure: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..200)
            .map(|_| {
                let mut v = Valve::new("V", m.clone(), Sign::Neg).unwrap();
                v.switch_with_rng(Sign::Pos, pressure, &mut rng)
                    .map(|r| r.pulses_used)
                    .unwrap_or(0)
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(trial(threshold + 20e3, 7), trial(threshold + 20e3, 7));
    assert!(trial(threshold - 1.0, 1).iter().all(|&n| n == 1));
    let mid = trial(threshold + 0.5 * m.stochastic_ramp, 3);
    let first = mid.iter().filter(|&&n| n == 1).count();
    assert!((60..140).contains(&first), "{first}");
}

#[test]
fn repulsing_the_held_state_spends_one_pulse() {
    let mut v = Valve::new("V", model(), Sign::Pos).unwrap();
    let sepm = *v.sepm();
    let r = v.switch(Sign::Pos, 0.0).unwrap();
    assert!(!r.switched);
    assert_eq!(r.pulses_used, 1);
    assert_eq!(r.energy, v.model().per_pulse_energy());
    assert_eq!(v.logical_state(), Sign::Pos);
    assert_eq!(*v.sepm(), sepm);
    assert_eq!(v.pulse_count(), 1);
}
