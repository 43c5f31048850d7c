//! Lumped magnetic circuit of the switchable-polarity electropermanent magnet.
//!
//! The actuator is a low-coercivity Alnico core flanked by two NdFeB rods of
//! fixed, opposite magnetization, closed through iron pole pieces and a pair of
//! air gaps. Flux continuity through the stack and Ampere's law around the loop
//! give a single scalar equation in the internal field `H_m`:
//!
//! ```text
//! A_m (B_alnico(H_m, s_A) + 2 s_A B_r + 2 mu_0 H_m) = (mu_0 a b / 2g + P_leak) (N I - H_m l)
//! ```
//!
//! with `A_m = pi d^2 / 12 * n_rods`. The left side is strictly increasing in
//! `H_m` and the right side strictly decreasing, so each branch `s_A` has exactly
//! one operating point for a given coil current.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sign::Sign;

/// Vacuum permeability (T m / A).
pub const MU_0: f64 = 4.0e-7 * PI;

/// Residual tolerance on the flux balance (Wb).
pub const FLUX_TOLERANCE: f64 = 1e-9;

const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("flux balance did not converge after {iterations} iterations (last residual {residual:e} Wb)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid magnetic parameter: {0}")]
    InvalidParameter(String),
}

/// Geometry of the magnetic circuit. Lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitGeometry {
    /// Rod diameter.
    pub d: f64,
    pub n_rods: u32,
    /// Pole-piece width.
    pub a: f64,
    /// Pole-piece thickness.
    pub b: f64,
    /// Effective air-gap length (per gap; the loop crosses two).
    pub g: f64,
    /// Effective magnetic path length of the stack.
    pub l: f64,
    /// Leakage permeance (Wb/A).
    pub p_leak: f64,
}

impl CircuitGeometry {
    pub fn validate(&self) -> Result<(), MagneticsError> {
        for (name, v) in [
            ("d", self.d),
            ("a", self.a),
            ("b", self.b),
            ("g", self.g),
            ("l", self.l),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MagneticsError::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.n_rods < 1 {
            return Err(MagneticsError::InvalidParameter(
                "n_rods must be >= 1".into(),
            ));
        }
        if !(self.p_leak.is_finite() && self.p_leak >= 0.0) {
            return Err(MagneticsError::InvalidParameter(format!(
                "p_leak must be >= 0, got {}",
                self.p_leak
            )));
        }
        Ok(())
    }

    /// Cross-section term `pi d^2 / 12 * n_rods` (m^2).
    pub fn magnet_area(&self) -> f64 {
        PI * self.d * self.d / 12.0 * self.n_rods as f64
    }

    /// Permeance of the two series gaps, `mu_0 a b / 2g` (Wb/A).
    pub fn gap_permeance(&self) -> f64 {
        MU_0 * self.a * self.b / (2.0 * self.g)
    }

    pub fn total_permeance(&self) -> f64 {
        self.gap_permeance() + self.p_leak
    }

    pub fn pole_area(&self) -> f64 {
        self.a * self.b
    }

    /// Same circuit with a different gap length; leakage permeance is held.
    pub fn with_gap(&self, g: f64) -> CircuitGeometry {
        CircuitGeometry { g, ..*self }
    }
}

/// Material and coil parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetSpec {
    /// NdFeB remanence (T).
    pub b_r_ndfeb: f64,
    /// Alnico remanence (T).
    pub b_r_alnico: f64,
    /// Alnico coercivity (A/m).
    pub h_c_alnico: f64,
    /// Width of the hysteron transition (A/m).
    pub h_scale_alnico: f64,
    pub n_turns: u32,
    /// Coil resistance (ohm).
    pub coil_resistance: f64,
    /// Coil inductance (H).
    pub coil_inductance: f64,
}

impl MagnetSpec {
    pub fn validate(&self) -> Result<(), MagneticsError> {
        let positive = [
            ("b_r_ndfeb", self.b_r_ndfeb),
            ("b_r_alnico", self.b_r_alnico),
            ("h_c_alnico", self.h_c_alnico),
            ("h_scale_alnico", self.h_scale_alnico),
            ("coil_resistance", self.coil_resistance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MagneticsError::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.n_turns < 1 {
            return Err(MagneticsError::InvalidParameter(
                "n_turns must be >= 1".into(),
            ));
        }
        if !(self.coil_inductance.is_finite() && self.coil_inductance >= 0.0) {
            return Err(MagneticsError::InvalidParameter(
                "coil_inductance must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Saturation level of the hysteron, chosen so `B(0) = b_r_alnico` exactly.
    pub fn alnico_saturation(&self) -> f64 {
        self.b_r_alnico / (self.h_c_alnico / self.h_scale_alnico).tanh()
    }

    pub fn time_constant(&self) -> f64 {
        self.coil_inductance / self.coil_resistance
    }
}

/// Operating point of the actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SepmState {
    pub s_a: Sign,
    /// Internal field (A/m).
    pub h_m: f64,
    /// Gap flux density (T).
    pub b_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Volts.
    pub voltage: f64,
    /// Seconds.
    pub duration: f64,
    pub polarity: Sign,
}

impl Pulse {
    pub fn new(voltage: f64, duration: f64, polarity: Sign) -> Result<Pulse, MagneticsError> {
        if !(voltage.is_finite() && voltage > 0.0) {
            return Err(MagneticsError::InvalidParameter(format!(
                "pulse voltage must be > 0, got {voltage}"
            )));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(MagneticsError::InvalidParameter(format!(
                "pulse duration must be > 0, got {duration}"
            )));
        }
        Ok(Pulse {
            voltage,
            duration,
            polarity,
        })
    }
}

/// Alnico flux density on branch `s_a`.
///
/// Two-branch smooth hysteron `B_sat tanh((H + s_a H_c) / h_scale)`. The `s_a = +1`
/// branch is the descending limb: remanence `+b_r` at zero field, zero flux at
/// `H = -H_c`.
pub fn hysteron_b(h_m: f64, s_a: Sign, spec: &MagnetSpec) -> f64 {
    spec.alnico_saturation() * ((h_m + s_a.value() * spec.h_c_alnico) / spec.h_scale_alnico).tanh()
}

fn hysteron_slope(h_m: f64, s_a: Sign, spec: &MagnetSpec) -> f64 {
    let t = ((h_m + s_a.value() * spec.h_c_alnico) / spec.h_scale_alnico).tanh();
    spec.alnico_saturation() * (1.0 - t * t) / spec.h_scale_alnico
}

/// State-dependent remanent reinforcement from the NdFeB pair.
pub fn delta_br(s_a: Sign, spec: &MagnetSpec) -> f64 {
    2.0 * s_a.value() * spec.b_r_ndfeb
}

/// Flux-balance residual (left side minus right side), in Wb.
pub fn flux_residual(
    geom: &CircuitGeometry,
    spec: &MagnetSpec,
    current: f64,
    s_a: Sign,
    h_m: f64,
) -> f64 {
    let lhs =
        geom.magnet_area() * (hysteron_b(h_m, s_a, spec) + delta_br(s_a, spec) + 2.0 * MU_0 * h_m);
    let rhs = geom.total_permeance() * (spec.n_turns as f64 * current - h_m * geom.l);
    lhs - rhs
}

fn residual_slope(geom: &CircuitGeometry, spec: &MagnetSpec, s_a: Sign, h_m: f64) -> f64 {
    geom.magnet_area() * (hysteron_slope(h_m, s_a, spec) + 2.0 * MU_0)
        + geom.total_permeance() * geom.l
}

/// Gap flux density from the circuit relation `mu_0 (N I - H_m l) / 2g`.
pub fn gap_flux_density(geom: &CircuitGeometry, spec: &MagnetSpec, current: f64, h_m: f64) -> f64 {
    MU_0 * (spec.n_turns as f64 * current - h_m * geom.l) / (2.0 * geom.g)
}

/// Attractive force across the gaps, `mu_0 a b ((N I - H_m l) / 2g)^2`.
///
/// Equal to the gap magnetic pressure `B_g^2 / 2 mu_0` acting on both pole faces.
pub fn gap_force(geom: &CircuitGeometry, spec: &MagnetSpec, current: f64, h_m: f64) -> f64 {
    let h_gap = (spec.n_turns as f64 * current - h_m * geom.l) / (2.0 * geom.g);
    MU_0 * geom.a * geom.b * h_gap * h_gap
}

/// Solve the flux balance for `H_m` on branch `s_a`.
///
/// Bracketed Newton iteration with a bisection fallback. The residual is
/// monotone in `H_m`, so the bracket always holds exactly one root.
pub fn solve_flux_balance(
    geom: &CircuitGeometry,
    spec: &MagnetSpec,
    current: f64,
    s_a: Sign,
) -> Result<SepmState, MagneticsError> {
    geom.validate()?;
    spec.validate()?;
    if !current.is_finite() {
        return Err(MagneticsError::InvalidParameter(format!(
            "coil current must be finite, got {current}"
        )));
    }

    let area = geom.magnet_area();
    let ni = spec.n_turns as f64 * current;
    let linear = 2.0 * area * MU_0 + geom.total_permeance() * geom.l;
    let offset = area * (spec.alnico_saturation() + 2.0 * spec.b_r_ndfeb)
        + geom.total_permeance() * ni.abs();
    let bound = 1.01 * offset / linear + 1.0;

    let f = |h: f64| flux_residual(geom, spec, current, s_a, h);
    let (mut lo, mut hi) = (-bound, bound);
    let mut h = -delta_br(s_a, spec) * area / linear + geom.total_permeance() * ni / linear;
    h = h.clamp(lo, hi);
    let mut r = f(h);

    for _ in 0..MAX_ITERATIONS {
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = h;
        } else {
            lo = h;
        }
        let newton = h - r / residual_slope(geom, spec, s_a, h);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - h).abs();
        h = next;
        r = f(h);
        if step <= 1e-13 * (1.0 + h.abs()) || hi - lo <= 1e-13 * (1.0 + h.abs()) {
            break;
        }
    }

    if r.abs() >= FLUX_TOLERANCE || !r.is_finite() {
        return Err(MagneticsError::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual: r,
        });
    }
    Ok(SepmState {
        s_a,
        h_m: h,
        b_g: gap_flux_density(geom, spec, current, h),
    })
}

/// Energy drawn by a rectangular voltage pulse into a series R-L coil (J).
///
/// `I(t) = (V/R)(1 - exp(-t/tau))`, integrated as `V^2/R (T - tau (1 - exp(-T/tau)))`.
pub fn pulse_energy(voltage: f64, duration: f64, spec: &MagnetSpec) -> f64 {
    let r = spec.coil_resistance;
    let tau = spec.time_constant();
    let transient = if tau > 0.0 {
        tau * (-(-duration / tau).exp_m1())
    } else {
        0.0
    };
    voltage * voltage / r * (duration - transient)
}

/// Coil current at the end of a pulse (A).
pub fn pulse_peak_current(voltage: f64, duration: f64, spec: &MagnetSpec) -> f64 {
    let tau = spec.time_constant();
    let rise = if tau > 0.0 {
        -(-duration / tau).exp_m1()
    } else {
        1.0
    };
    voltage / spec.coil_resistance * rise
}

/// Drive the coil with `pulse`. The Alnico settles on the pulse polarity's branch
/// at the end of the pulse and the operating point is re-solved at zero current.
pub fn apply_pulse(
    _state: &SepmState,
    pulse: &Pulse,
    geom: &CircuitGeometry,
    spec: &MagnetSpec,
) -> Result<(SepmState, f64), MagneticsError> {
    let pulse = Pulse::new(pulse.voltage, pulse.duration, pulse.polarity)?;
    let next = solve_flux_balance(geom, spec, 0.0, pulse.polarity)?;
    Ok((next, pulse_energy(pulse.voltage, pulse.duration, spec)))
}
