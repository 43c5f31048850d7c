//! Fits the free profile parameters to the bench targets.
//!
//! Targets are fitted one at a time, each by a single parameter:
//! coil inductance for pulse energy, leakage permeance for the ratio of the
//! holding force at the closed gap to the force at the closing gap (which sets
//! the static limit once the dynamic threshold is pinned), tube contact length
//! for the dynamic threshold, and outlet capacitance for the closure time.
//! Parameters whose target is already met are left untouched.

use thiserror::Error;

use crate::magnetics::{self, MagneticsError};
use crate::pneumatics::PneumaticsError;
use crate::profile::{Bounds, Profile, ProfileError};
use crate::rig::measure_closure;
use crate::sign::Sign;
use crate::valve::{Valve, ValveError, ValveModel};

pub const ENERGY_TOLERANCE: f64 = 1e-6;
/// Relative window above the dynamic target accepted as "at" the target.
pub const THRESHOLD_WINDOW: f64 = 1e-4;
/// Fitted threshold sits this far (relative) above the target.
const THRESHOLD_AIM: f64 = 5e-5;
/// Static limit aimed for when the leakage has to be refitted.
const STATIC_MARGIN: f64 = 1.02;
pub const CLOSURE_TOLERANCE: f64 = 0.5e-3;
/// Sample interval of the closure measurement (s).
pub const CLOSURE_SAMPLE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration infeasible, unmet targets: {}", unmet.join(", "))]
    Infeasible { unmet: Vec<String> },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Valve(#[from] ValveError),
    #[error(transparent)]
    Pneumatics(#[from] PneumaticsError),
}

/// Measured values of the four targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub pulse_energy: f64,
    pub dynamic_threshold: f64,
    pub static_limit: f64,
    pub closure_settle: f64,
}

impl Measurements {
    pub fn of(profile: &Profile) -> Result<Measurements, CalibrationError> {
        let model = std::sync::Arc::new(ValveModel::from_profile(profile)?);
        let valve = Valve::new("probe", model.clone(), Sign::Pos)?;
        Ok(Measurements {
            pulse_energy: model.per_pulse_energy(),
            dynamic_threshold: valve.dynamic_threshold(),
            static_limit: valve.static_limit(),
            closure_settle: closure_settle(profile)?,
        })
    }

    /// Signed distance of each measurement from its target.
    pub fn residuals(&self, profile: &Profile) -> Measurements {
        let c = &profile.calibration;
        Measurements {
            pulse_energy: self.pulse_energy - c.pulse_energy,
            dynamic_threshold: self.dynamic_threshold - c.dynamic_threshold,
            static_limit: (self.static_limit - c.static_limit).min(0.0),
            closure_settle: self.closure_settle - c.closure_settle,
        }
    }

    pub fn unmet(&self, profile: &Profile) -> Vec<String> {
        let c = &profile.calibration;
        let mut unmet = Vec::new();
        if (self.pulse_energy - c.pulse_energy).abs() > ENERGY_TOLERANCE {
            unmet.push(format!(
                "pulse energy {:.6} J (target {} J)",
                self.pulse_energy, c.pulse_energy
            ));
        }
        let t = c.dynamic_threshold;
        if !(t..=t * (1.0 + THRESHOLD_WINDOW)).contains(&self.dynamic_threshold) {
            unmet.push(format!(
                "dynamic threshold {:.1} Pa (target {t} Pa)",
                self.dynamic_threshold
            ));
        }
        if self.static_limit < c.static_limit {
            unmet.push(format!(
                "static limit {:.1} Pa (target >= {} Pa)",
                self.static_limit, c.static_limit
            ));
        }
        if (self.closure_settle - c.closure_settle).abs() > CLOSURE_TOLERANCE {
            unmet.push(format!(
                "closure settle {:.5} s (target {} s)",
                self.closure_settle, c.closure_settle
            ));
        }
        unmet
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub before: Measurements,
    pub after: Measurements,
    pub profile: Profile,
    pub iterations: u32,
    /// Names of the parameters that were refitted.
    pub adjusted: Vec<&'static str>,
}

impl CalibrationReport {
    pub fn summary(&self) -> String {
        let row = |name: &str, target: String, b: f64, a: f64, rb: f64, ra: f64| {
            format!("{name:<18} {target:>14} {b:>14.6e} {a:>14.6e} {rb:>12.3e} {ra:>12.3e}\n")
        };
        let c = &self.profile.calibration;
        let (rb, ra) = (
            self.before.residuals(&self.profile),
            self.after.residuals(&self.profile),
        );
        let mut s = format!(
            "{:<18} {:>14} {:>14} {:>14} {:>12} {:>12}\n",
            "target", "goal", "before", "after", "resid before", "resid after"
        );
        s += &row(
            "pulse_energy_J",
            format!("{}", c.pulse_energy),
            self.before.pulse_energy,
            self.after.pulse_energy,
            rb.pulse_energy,
            ra.pulse_energy,
        );
        s += &row(
            "dynamic_Pa",
            format!("{}", c.dynamic_threshold),
            self.before.dynamic_threshold,
            self.after.dynamic_threshold,
            rb.dynamic_threshold,
            ra.dynamic_threshold,
        );
        s += &row(
            "static_Pa",
            format!(">={}", c.static_limit),
            self.before.static_limit,
            self.after.static_limit,
            rb.static_limit,
            ra.static_limit,
        );
        s += &row(
            "closure_s",
            format!("{}", c.closure_settle),
            self.before.closure_settle,
            self.after.closure_settle,
            rb.closure_settle,
            ra.closure_settle,
        );
        let adjusted = if self.adjusted.is_empty() {
            "none".to_string()
        } else {
            self.adjusted.join(", ")
        };
        s += &format!("adjusted: {adjusted}\niterations: {}\n", self.iterations);
        s
    }
}

struct Budget {
    left: u32,
    used: u32,
}

impl Budget {
    fn take(&mut self) -> bool {
        if self.left == 0 {
            return false;
        }
        self.left -= 1;
        self.used += 1;
        true
    }
}

/// Bisection for `f(x) = 0` with `f` monotone on `bounds`; stops when `done`
/// accepts the current point or the budget runs out.
fn bisect<F, D>(
    bounds: Bounds,
    budget: &mut Budget,
    mut f: F,
    done: D,
) -> Result<Option<f64>, CalibrationError>
where
    F: FnMut(f64) -> Result<f64, CalibrationError>,
    D: Fn(f64, f64) -> bool,
{
    let (mut lo, mut hi) = (bounds.min, bounds.max);
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Ok(None);
    }
    let rising = f_hi > f_lo;
    while budget.take() {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if done(mid, v) {
            return Ok(Some(mid));
        }
        if (v < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(None)
}

/// Closure time of the bench rig; infinite if the outlet does not settle
/// inside the measurement window.
pub fn closure_settle(profile: &Profile) -> Result<f64, CalibrationError> {
    match measure_closure(profile, CLOSURE_SAMPLE) {
        Ok(r) => Ok(r.settle),
        Err(PneumaticsError::NeverSettles { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

fn force_ratio(profile: &Profile) -> Result<f64, CalibrationError> {
    let model = ValveModel::from_profile(profile)?;
    Ok(model.force_at_gap(profile.geometry.g)? / model.force_at_gap(model.stroke_gap(0))?)
}

/// Fit `profile`; `max_iterations` overrides the profile's own budget.
pub fn calibrate(
    profile: &Profile,
    max_iterations: Option<u32>,
) -> Result<CalibrationReport, CalibrationError> {
    profile.validate()?;
    let before = Measurements::of(profile)?;
    let mut budget = Budget {
        left: max_iterations.unwrap_or(profile.calibration.max_iterations),
        used: 0,
    };
    let mut p = profile.clone();
    let mut adjusted = Vec::new();
    let c = profile.calibration;

    let energy =
        |p: &Profile| magnetics::pulse_energy(p.pulse.voltage, p.pulse.duration, &p.magnet);
    if (energy(&p) - c.pulse_energy).abs() > ENERGY_TOLERANCE {
        let mut trial = p.clone();
        let fit = bisect(
            c.coil_inductance,
            &mut budget,
            |l| {
                trial.magnet.coil_inductance = l;
                Ok(energy(&trial) - c.pulse_energy)
            },
            |_, r| r.abs() <= ENERGY_TOLERANCE,
        )?;
        if let Some(l) = fit {
            p.magnet.coil_inductance = l;
            adjusted.push("magnet.coil_inductance");
        }
    }

    let ratio_needed = c.static_limit / c.dynamic_threshold;
    if force_ratio(&p)? < ratio_needed {
        let goal = ratio_needed * STATIC_MARGIN;
        let mut trial = p.clone();
        let fit = bisect(
            c.p_leak,
            &mut budget,
            |leak| {
                trial.geometry.p_leak = leak;
                Ok(force_ratio(&trial)? - goal)
            },
            |_, r| (0.0..0.002 * goal).contains(&r),
        )?;
        if let Some(leak) = fit {
            p.geometry.p_leak = leak;
            adjusted.push("geometry.p_leak");
        }
    }

    let threshold = |p: &Profile| -> Result<f64, CalibrationError> {
        let model = ValveModel::from_profile(p)?;
        Ok(model.stroke_threshold(0, &p.valve.tube))
    };
    let t = threshold(&p)?;
    if !(c.dynamic_threshold..=c.dynamic_threshold * (1.0 + THRESHOLD_WINDOW)).contains(&t)
        && budget.take()
    {
        let model = ValveModel::from_profile(&p)?;
        let force = model.force_at_gap(model.stroke_gap(0))?;
        let tube = &p.valve.tube;
        let length = force
            / (0.5
                * std::f64::consts::PI
                * tube.outer_diameter
                * c.dynamic_threshold
                * (1.0 + THRESHOLD_AIM));
        let b = c.contact_length;
        if (b.min..=b.max).contains(&length) {
            p.valve.tube.contact_length = length;
            adjusted.push("valve.tube.contact_length");
        }
    }

    let settle = closure_settle;
    if (settle(&p)? - c.closure_settle).abs() > CLOSURE_TOLERANCE {
        let mut trial = p.clone();
        let fit = bisect(
            c.outlet_capacitance,
            &mut budget,
            |cap| {
                trial.rig.outlet_capacitance = cap;
                Ok(settle(&trial)? - c.closure_settle)
            },
            |_, r| r.abs() <= 0.5 * CLOSURE_TOLERANCE,
        )?;
        if let Some(cap) = fit {
            p.rig.outlet_capacitance = cap;
            adjusted.push("rig.outlet_capacitance");
        }
    }

    p.validate()?;
    let after = Measurements::of(&p)?;
    let unmet = after.unmet(&p);
    if !unmet.is_empty() {
        return Err(CalibrationError::Infeasible { unmet });
    }
    Ok(CalibrationReport {
        before,
        after,
        profile: p,
        iterations: budget.used,
        adjusted,
    })
}
