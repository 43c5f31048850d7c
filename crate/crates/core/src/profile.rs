//! Parameter profiles.
//!
//! A profile is a TOML document holding every physical constant the simulator
//! needs: magnet geometry and materials, drive pulse, valve and tube mechanics,
//! pneumatic defaults, the characterization rig, and the calibration targets.
//! The bundled `calibrated-default` profile is the reference all acceptance
//! checks run against; `seed` holds the uncalibrated starting point it was fitted
//! from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{CircuitGeometry, MagnetSpec, MagneticsError};
use crate::valve::TubeSpec;

/// Environment variable naming the profile used when a scenario does not.
pub const PROFILE_ENV: &str = "SEPM_PROFILE";

pub const DEFAULT_PROFILE_NAME: &str = "calibrated-default";

const CALIBRATED_DEFAULT: &str = include_str!("../profiles/calibrated-default.toml");
const SEED: &str = include_str!("../profiles/seed.toml");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse profile {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("unknown bundled profile `{0}`")]
    UnknownBundled(String),
}

impl From<MagneticsError> for ProfileError {
    fn from(e: MagneticsError) -> Self {
        ProfileError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSettings {
    pub voltage: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionMode {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValveSettings {
    /// Effective gap when the actuator starts its closing stroke (m).
    pub closing_gap: f64,
    /// Additional pulses after a failed stroke.
    pub max_retry: u32,
    /// Fraction of the remaining stroke recovered by each failed attempt.
    pub retry_gap_advance: f64,
    /// Mechanical latency between the pulse and the tube reaching its new position (s).
    pub dead_time: f64,
    pub occlusion_mode: OcclusionMode,
    /// Width of the success-probability ramp above the threshold in stochastic mode (Pa).
    pub stochastic_ramp: f64,
    pub tube: TubeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PneumaticSettings {
    /// Integrator step (s).
    pub dt: f64,
    /// Trace sample interval (s).
    pub sample_interval: f64,
    /// Capacitance of an internal routing junction (m^3/Pa).
    pub junction_capacitance: f64,
    /// Conductance of fixed channels inside routing modules ((m^3/s)/Pa).
    pub channel_conductance: f64,
}

/// Single-valve characterization rig: regulated supply, compliant upstream
/// line, valve, outlet volume and venting resistor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSettings {
    pub supply_pressure: f64,
    pub line_conductance: f64,
    /// Pneumatic inertance of the upstream line (Pa s^2/m^3).
    pub line_inertance: f64,
    pub inlet_capacitance: f64,
    pub outlet_capacitance: f64,
    pub vent_conductance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub max_iterations: u32,
    pub pulse_energy: f64,
    pub dynamic_threshold: f64,
    pub static_limit: f64,
    pub closure_settle: f64,
    /// Outlet band for the closure metric, as a fraction of supply pressure.
    pub closure_band: f64,
    pub coil_inductance: Bounds,
    pub p_leak: Bounds,
    pub contact_length: Bounds,
    pub outlet_capacitance: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub geometry: CircuitGeometry,
    pub magnet: MagnetSpec,
    pub pulse: PulseSettings,
    pub valve: ValveSettings,
    pub pneumatics: PneumaticSettings,
    pub rig: RigSettings,
    pub calibration: CalibrationSettings,
}

impl Profile {
    pub fn calibrated_default() -> Profile {
        Profile::parse(CALIBRATED_DEFAULT, DEFAULT_PROFILE_NAME)
            .expect("bundled default profile is valid")
    }

    pub fn seed() -> Profile {
        Profile::parse(SEED, "seed").expect("bundled seed profile is valid")
    }

    pub fn bundled(name: &str) -> Result<Profile, ProfileError> {
        match name {
            DEFAULT_PROFILE_NAME => Ok(Profile::calibrated_default()),
            "seed" => Ok(Profile::seed()),
            other => Err(ProfileError::UnknownBundled(other.to_string())),
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Profile, ProfileError> {
        let profile: Profile = toml::from_str(text).map_err(|e| ProfileError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Profile, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Profile::parse(&text, &path.display().to_string())
    }

    /// Resolve a profile reference: a bundled name, or a path relative to `base`.
    /// `None` falls back to `$SEPM_PROFILE`, then the bundled default.
    pub fn resolve(reference: Option<&str>, base: Option<&Path>) -> Result<Profile, ProfileError> {
        let env = std::env::var(PROFILE_ENV).ok();
        let reference = match reference {
            Some(r) => r.to_string(),
            None => match env {
                Some(p) if !p.is_empty() => return Profile::load(Path::new(&p)),
                _ => DEFAULT_PROFILE_NAME.to_string(),
            },
        };
        if let Ok(p) = Profile::bundled(&reference) {
            return Ok(p);
        }
        let path = match base {
            Some(b) if Path::new(&reference).is_relative() => b.join(&reference),
            _ => PathBuf::from(&reference),
        };
        Profile::load(&path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        self.geometry.validate()?;
        self.magnet.validate()?;
        let pos = |name: &str, v: f64| -> Result<(), ProfileError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ProfileError::Invalid(format!(
                    "{name} must be > 0, got {v}"
                )))
            }
        };
        pos("pulse.voltage", self.pulse.voltage)?;
        pos("pulse.duration", self.pulse.duration)?;
        pos("valve.closing_gap", self.valve.closing_gap)?;
        if self.valve.closing_gap < self.geometry.g {
            return Err(ProfileError::Invalid(
                "valve.closing_gap must not be smaller than geometry.g".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.valve.retry_gap_advance) {
            return Err(ProfileError::Invalid(
                "valve.retry_gap_advance must lie in [0, 1]".into(),
            ));
        }
        if !(self.valve.dead_time.is_finite() && self.valve.dead_time >= 0.0) {
            return Err(ProfileError::Invalid("valve.dead_time must be >= 0".into()));
        }
        pos("valve.stochastic_ramp", self.valve.stochastic_ramp)?;
        self.valve
            .tube
            .validate()
            .map_err(|e| ProfileError::Invalid(e.to_string()))?;
        pos("pneumatics.dt", self.pneumatics.dt)?;
        pos(
            "pneumatics.sample_interval",
            self.pneumatics.sample_interval,
        )?;
        pos(
            "pneumatics.junction_capacitance",
            self.pneumatics.junction_capacitance,
        )?;
        pos(
            "pneumatics.channel_conductance",
            self.pneumatics.channel_conductance,
        )?;
        pos("rig.line_conductance", self.rig.line_conductance)?;
        pos("rig.inlet_capacitance", self.rig.inlet_capacitance)?;
        pos("rig.outlet_capacitance", self.rig.outlet_capacitance)?;
        pos("rig.vent_conductance", self.rig.vent_conductance)?;
        if !(self.rig.line_inertance.is_finite() && self.rig.line_inertance >= 0.0) {
            return Err(ProfileError::Invalid(
                "rig.line_inertance must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_profiles_parse() {
        let p = Profile::calibrated_default();
        assert_eq!(p.name, DEFAULT_PROFILE_NAME);
        assert_eq!(p.magnet.n_turns, 150);
        Profile::seed();
    }

    #[test]
    fn serialization_round_trips() {
        let p = Profile::calibrated_default();
        let again = Profile::parse(&p.to_toml(), "roundtrip").unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let text = CALIBRATED_DEFAULT.replace("n_turns = 150", "n_turns = 0");
        assert!(matches!(
            Profile::parse(&text, "x"),
            Err(ProfileError::Invalid(_))
        ));
        let err = Profile::parse("name = 3", "x").unwrap_err();
        assert!(matches!(err, ProfileError::Parse { .. }));
    }
}
