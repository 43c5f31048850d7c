use approx::assert_relative_eq;
use proptest::prelude::*;

use sepm_core::magnetics::{
    apply_pulse, gap_flux_density, gap_force, hysteron_b, pulse_energy, solve_flux_balance,
    CircuitGeometry, MagnetSpec, Pulse, FLUX_TOLERANCE, MU_0,
};
use sepm_core::profile::Profile;
use sepm_core::Sign;

fn default_circuit() -> (CircuitGeometry, MagnetSpec) {
    let p = Profile::calibrated_default();
    (p.geometry, p.magnet)
}

/// Flux balance written out from scratch.
fn oracle_residual(g: &CircuitGeometry, m: &MagnetSpec, current: f64, s: f64, h: f64) -> f64 {
    let area = std::f64::consts::PI * g.d * g.d / 12.0 * g.n_rods as f64;
    let b_sat = m.b_r_alnico / (m.h_c_alnico / m.h_scale_alnico).tanh();
    let b_alnico = b_sat * ((h + s * m.h_c_alnico) / m.h_scale_alnico).tanh();
    let permeance = MU_0 * g.a * g.b / (2.0 * g.g) + g.p_leak;
    area * (b_alnico + 2.0 * s * m.b_r_ndfeb + 2.0 * MU_0 * h)
        - permeance * (m.n_turns as f64 * current - h * g.l)
}

/// Plain bisection on a wide bracket.
fn oracle_solve(g: &CircuitGeometry, m: &MagnetSpec, current: f64, s: f64) -> f64 {
    let (mut lo, mut hi) = (-1e9, 1e9);
    assert!(
        oracle_residual(g, m, current, s, lo) < 0.0 && oracle_residual(g, m, current, s, hi) > 0.0
    );
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if oracle_residual(g, m, current, s, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sign(positive: bool) -> Sign {
    if positive {
        Sign::Pos
    } else {
        Sign::Neg
    }
}

prop_compose! {
    fn circuit()(
        d in 1e-3..8e-3f64,
        n_rods in 1u32..6,
        a in 2e-3..1.2e-2f64,
        b in 1e-3..6e-3f64,
        g in 2e-5..1e-3f64,
        l in 5e-3..5e-2f64,
        leak in 0.0..0.5f64,
        b_r_ndfeb in 0.8..1.45f64,
        b_r_alnico in 0.6..1.35f64,
        h_c in 2e4..1.5e5f64,
        h_scale in 5e3..6e4f64,
        n_turns in 20u32..400,
    ) -> (CircuitGeometry, MagnetSpec) {
        let mut geom = CircuitGeometry { d, n_rods, a, b, g, l, p_leak: 0.0 };
        geom.p_leak = leak * geom.gap_permeance();
        let spec = MagnetSpec {
            b_r_ndfeb,
            b_r_alnico,
            h_c_alnico: h_c,
            h_scale_alnico: h_scale,
            n_turns,
            coil_resistance: 3.0,
            coil_inductance: 1e-3,
        };
        (geom, spec)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn solver_agrees_with_bisection_oracle((geom, spec) in circuit(), current in -20.0..20.0f64, pos in any::<bool>()) {
        let s = sign(pos);
        let state = solve_flux_balance(&geom, &spec, current, s).unwrap();
        let h = oracle_solve(&geom, &spec, current, s.value());
        prop_assert!((state.h_m - h).abs() <= 1e-6 * h.abs().max(1.0), "solver {} oracle {h}", state.h_m);
    }

    #[test]
    fn returned_states_satisfy_flux_balance((geom, spec) in circuit(), current in -20.0..20.0f64, pos in any::<bool>()) {
        let state = solve_flux_balance(&geom, &spec, current, sign(pos)).unwrap();
        let r = oracle_residual(&geom, &spec, current, sign(pos).value(), state.h_m);
        prop_assert!(r.abs() < FLUX_TOLERANCE, "residual {r}");
        let b_g = MU_0 * (spec.n_turns as f64 * current - state.h_m * geom.l) / (2.0 * geom.g);
        prop_assert!((state.b_g - b_g).abs() <= 1e-12 * b_g.abs().max(1.0));
    }

    #[test]
    fn negating_current_and_branch_negates_state((geom, spec) in circuit(), current in -20.0..20.0f64, pos in any::<bool>()) {
        let s = sign(pos);
        let a = solve_flux_balance(&geom, &spec, current, s).unwrap();
        let b = solve_flux_balance(&geom, &spec, -current, s.flip()).unwrap();
        prop_assert!((a.h_m + b.h_m).abs() <= 1e-9 * a.h_m.abs().max(1.0));
        prop_assert!((a.b_g + b.b_g).abs() <= 1e-9 * a.b_g.abs().max(1e-6));
        let fa = gap_force(&geom, &spec, current, a.h_m);
        let fb = gap_force(&geom, &spec, -current, b.h_m);
        prop_assert!((fa - fb).abs() <= 1e-8 * fa.max(1e-9));
    }

    #[test]
    fn zero_current_is_bistable((geom, spec) in circuit()) {
        let up = solve_flux_balance(&geom, &spec, 0.0, Sign::Pos).unwrap();
        let down = solve_flux_balance(&geom, &spec, 0.0, Sign::Neg).unwrap();
        prop_assert!(up.b_g > 0.0 && down.b_g < 0.0);
        prop_assert!(up.h_m != down.h_m);
    }

    #[test]
    fn hysteron_is_odd_and_monotone((_, spec) in circuit(), h in -3e5..3e5f64, dh in 0.0..1e4f64, pos in any::<bool>()) {
        let s = sign(pos);
        prop_assert_eq!(hysteron_b(-h, s.flip(), &spec), -hysteron_b(h, s, &spec));
        prop_assert!(hysteron_b(h + dh, s, &spec) >= hysteron_b(h, s, &spec));
    }

    /// Generalized force toward closing equals d/dg of the energy stored in
    /// both gaps at fixed flux.
    #[test]
    fn force_matches_energy_derivative((geom, spec) in circuit(), current in -20.0..20.0f64, pos in any::<bool>()) {
        let state = solve_flux_balance(&geom, &spec, current, sign(pos)).unwrap();
        let flux = state.b_g * geom.a * geom.b;
        let energy = |g: f64| {
            let b = flux / (geom.a * geom.b);
            b * b / (2.0 * MU_0) * geom.a * geom.b * 2.0 * g
        };
        let dg = 1e-6 * geom.g;
        let derivative = (energy(geom.g + dg) - energy(geom.g - dg)) / (2.0 * dg);
        let f = gap_force(&geom, &spec, current, state.h_m);
        prop_assert!((f - derivative).abs() <= 0.01 * derivative.abs().max(1e-12), "force {f} dW/dg {derivative}");
    }

    #[test]
    fn force_is_inverse_square_in_gap((geom, spec) in circuit(), mmf in -5000.0..5000.0f64) {
        let h_m = -mmf / geom.l;
        let f1 = gap_force(&geom, &spec, 0.0, h_m);
        let f2 = gap_force(&geom.with_gap(2.0 * geom.g), &spec, 0.0, h_m);
        prop_assert!(f1 >= 0.0);
        prop_assert!((f2 * 4.0 - f1).abs() <= 1e-12 * f1.max(1e-300));
    }

    /// Simpson quadrature of V I(t) for the series R-L coil.
    #[test]
    fn pulse_energy_matches_quadrature(v in 1.0..100.0f64, t in 1e-5..1e-2f64, r in 0.5..20.0f64, l in prop_oneof![Just(0.0), 1e-4..1e-2f64]) {
        let (_, mut spec) = default_circuit();
        spec.coil_resistance = r;
        spec.coil_inductance = l;
        let tau = l / r;
        let current = |s: f64| if tau > 0.0 { v / r * (1.0 - (-s / tau).exp()) } else { v / r };
        let n = 2 * ((20.0 * t / tau.max(t / 2000.0)) as usize / 2 + 1000);
        let h = t / n as f64;
        let mut sum = v * (current(0.0) + current(t));
        for k in 1..n {
            sum += v * current(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = sum * h / 3.0;
        let e = pulse_energy(v, t, &spec);
        prop_assert!((e - quad).abs() <= 1e-6 * quad, "closed form {e} quadrature {quad}");
    }
}

#[test]
fn default_pulse_energy_near_six_tenths_joule() {
    let p = Profile::calibrated_default();
    let e = pulse_energy(p.pulse.voltage, p.pulse.duration, &p.magnet);
    assert!((0.54..=0.66).contains(&e), "{e}");
}

#[test]
fn pulse_is_idempotent_in_state_but_not_energy() {
    let (geom, spec) = default_circuit();
    let start = solve_flux_balance(&geom, &spec, 0.0, Sign::Pos).unwrap();
    let pulse = Pulse::new(48.0, 1e-3, Sign::Pos).unwrap();
    let (same, e) = apply_pulse(&start, &pulse, &geom, &spec).unwrap();
    assert_eq!(same, start);
    assert!(e > 0.0);
    let (down, _) = apply_pulse(
        &same,
        &Pulse::new(48.0, 1e-3, Sign::Neg).unwrap(),
        &geom,
        &spec,
    )
    .unwrap();
    let (back, _) = apply_pulse(&down, &pulse, &geom, &spec).unwrap();
    assert_eq!(back, start);
}

#[test]
fn zero_net_mmf_gives_zero_force() {
    let (geom, spec) = default_circuit();
    let current = 2.0;
    let h_m = spec.n_turns as f64 * current / geom.l;
    assert_eq!(gap_force(&geom, &spec, current, h_m), 0.0);
}

#[test]
fn force_equals_gap_pressure_on_both_faces() {
    let (geom, spec) = default_circuit();
    let s = solve_flux_balance(&geom, &spec, 0.0, Sign::Neg).unwrap();
    let b = gap_flux_density(&geom, &spec, 0.0, s.h_m);
    let f = gap_force(&geom, &spec, 0.0, s.h_m);
    assert_relative_eq!(
        f,
        2.0 * b * b / (2.0 * MU_0) * geom.a * geom.b,
        max_relative = 1e-12
    );
}

#[test]
fn coercive_crossing_on_lower_branch() {
    let (_, spec) = default_circuit();
    assert!(hysteron_b(spec.h_c_alnico, Sign::Neg, &spec).abs() < 1e-12);
}
