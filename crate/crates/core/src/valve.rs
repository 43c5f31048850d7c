//! Bistable two-tube pinch valve driven by the magnetic actuator.
//!
//! Logical state `+1` seals the upper tube and leaves the lower one open;
//! `-1` seals the lower tube. A switch issues one drive pulse, after which the
//! actuator strokes across the closing gap; the stroke seals the target tube
//! only if the magnetic force at the start of the stroke beats the line
//! pressure acting on the seal area. Each failed stroke leaves the actuator
//! part-way down, so a retry starts from a smaller gap with more force.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::magnetics::{self, CircuitGeometry, MagnetSpec, MagneticsError, Pulse, SepmState};
use crate::profile::{OcclusionMode, Profile};
use crate::sign::Sign;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValveError {
    #[error("valve {valve}: occlusion failed against {line_pressure:.0} Pa after {pulses} pulses")]
    OcclusionFailed {
        valve: String,
        line_pressure: f64,
        pulses: u32,
        energy: f64,
    },
    #[error("valve {0} has no sealed tube")]
    NotOccluded(String),
    #[error("invalid tube: {0}")]
    InvalidTube(String),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tube {
    Upper,
    Lower,
}

impl Tube {
    /// The tube sealed in logical state `state`.
    pub fn sealed_in(state: Sign) -> Tube {
        match state {
            Sign::Pos => Tube::Upper,
            Sign::Neg => Tube::Lower,
        }
    }

    /// The tube left open in logical state `state`.
    pub fn open_in(state: Sign) -> Tube {
        Tube::sealed_in(-state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub outer_diameter: f64,
    pub inner_diameter: f64,
    /// Length of the raised-bar contact along the tube (m).
    pub contact_length: f64,
    pub open_conductance: f64,
    pub closed_leak_conductance: f64,
}

impl TubeSpec {
    pub fn validate(&self) -> Result<(), ValveError> {
        if !(self.inner_diameter > 0.0 && self.outer_diameter > self.inner_diameter) {
            return Err(ValveError::InvalidTube(
                "need outer_diameter > inner_diameter > 0".into(),
            ));
        }
        if !(self.contact_length.is_finite() && self.contact_length > 0.0) {
            return Err(ValveError::InvalidTube("contact_length must be > 0".into()));
        }
        if !(self.closed_leak_conductance >= 0.0
            && self.open_conductance > self.closed_leak_conductance)
        {
            return Err(ValveError::InvalidTube(
                "need open_conductance > closed_leak_conductance >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Seal area under the raised bar: flattened tube width times contact length.
    pub fn seal_area(&self) -> f64 {
        0.5 * PI * self.outer_diameter * self.contact_length
    }
}

/// Pressure a seal of `seal_area` withstands under the gap force at `h_m`.
pub fn seal_pressure_limit(
    geom: &CircuitGeometry,
    spec: &MagnetSpec,
    seal_area: f64,
    current: f64,
    h_m: f64,
) -> f64 {
    magnetics::gap_force(geom, spec, current, h_m) / seal_area
}

/// Shared physics of a valve design, derived once from a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ValveModel {
    pub geometry: CircuitGeometry,
    pub magnet: MagnetSpec,
    pub voltage: f64,
    pub duration: f64,
    pub closing_gap: f64,
    pub max_retry: u32,
    pub retry_gap_advance: f64,
    pub dead_time: f64,
    pub occlusion_mode: OcclusionMode,
    pub stochastic_ramp: f64,
    pub tube: TubeSpec,
    stroke_forces: Vec<f64>,
    pulse_energy: f64,
}

impl ValveModel {
    pub fn from_profile(profile: &Profile) -> Result<ValveModel, ValveError> {
        let v = &profile.valve;
        v.tube.validate()?;
        let mut model = ValveModel {
            geometry: profile.geometry,
            magnet: profile.magnet,
            voltage: profile.pulse.voltage,
            duration: profile.pulse.duration,
            closing_gap: v.closing_gap,
            max_retry: v.max_retry,
            retry_gap_advance: v.retry_gap_advance,
            dead_time: v.dead_time,
            occlusion_mode: v.occlusion_mode,
            stochastic_ramp: v.stochastic_ramp,
            tube: v.tube,
            stroke_forces: Vec::new(),
            pulse_energy: 0.0,
        };
        Pulse::new(model.voltage, model.duration, Sign::Pos)?;
        model.stroke_forces = (0..=model.max_retry)
            .map(|k| model.force_at_gap(model.stroke_gap(k)))
            .collect::<Result<_, _>>()?;
        model.pulse_energy = magnetics::pulse_energy(model.voltage, model.duration, &model.magnet);
        Ok(model)
    }

    /// Gap at the start of stroke `attempt` (0 = first pulse).
    pub fn stroke_gap(&self, attempt: u32) -> f64 {
        let g = self.geometry.g;
        g + (self.closing_gap - g) * (1.0 - self.retry_gap_advance).powi(attempt as i32)
    }

    /// Zero-current holding force with the actuator at gap `g` (N).
    pub fn force_at_gap(&self, g: f64) -> Result<f64, MagneticsError> {
        let geom = self.geometry.with_gap(g);
        let state = magnetics::solve_flux_balance(&geom, &self.magnet, 0.0, Sign::Pos)?;
        Ok(magnetics::gap_force(&geom, &self.magnet, 0.0, state.h_m))
    }

    pub fn stroke_threshold(&self, attempt: u32, tube: &TubeSpec) -> f64 {
        let k = (attempt as usize).min(self.stroke_forces.len() - 1);
        self.stroke_forces[k] / tube.seal_area()
    }

    pub fn per_pulse_energy(&self) -> f64 {
        self.pulse_energy
    }

    pub fn pulse(&self, polarity: Sign) -> Pulse {
        Pulse {
            voltage: self.voltage,
            duration: self.duration,
            polarity,
        }
    }

    fn sealed_state(&self, state: Sign) -> Result<SepmState, MagneticsError> {
        magnetics::solve_flux_balance(&self.geometry, &self.magnet, 0.0, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchResult {
    pub switched: bool,
    pub occlusion_achieved: bool,
    pub energy: f64,
    pub pulses_used: u32,
}

/// Persistent part of a valve: everything needed to restore it without power.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValveRecord {
    pub id: String,
    pub logical_state: Sign,
    pub pulse_count: u64,
}

#[derive(Debug, Clone)]
pub struct Valve {
    pub id: String,
    logical_state: Sign,
    sepm: SepmState,
    upper_tube: TubeSpec,
    lower_tube: TubeSpec,
    occluded: Option<Tube>,
    dynamic_threshold: f64,
    static_limit: f64,
    pulse_count: u64,
    model: Arc<ValveModel>,
}

impl Valve {
    /// A valve resting sealed in `state`.
    pub fn new(
        id: impl Into<String>,
        model: Arc<ValveModel>,
        state: Sign,
    ) -> Result<Valve, ValveError> {
        let sepm = model.sealed_state(state)?;
        let tube = model.tube;
        let static_limit = seal_pressure_limit(
            &model.geometry,
            &model.magnet,
            tube.seal_area(),
            0.0,
            sepm.h_m,
        );
        Ok(Valve {
            id: id.into(),
            logical_state: state,
            sepm,
            upper_tube: tube,
            lower_tube: tube,
            occluded: Some(Tube::sealed_in(state)),
            dynamic_threshold: model.stroke_threshold(0, &tube),
            static_limit,
            pulse_count: 0,
            model,
        })
    }

    pub fn restore(record: &ValveRecord, model: Arc<ValveModel>) -> Result<Valve, ValveError> {
        let mut v = Valve::new(record.id.clone(), model, record.logical_state)?;
        v.pulse_count = record.pulse_count;
        Ok(v)
    }

    pub fn record(&self) -> ValveRecord {
        ValveRecord {
            id: self.id.clone(),
            logical_state: self.logical_state,
            pulse_count: self.pulse_count,
        }
    }

    pub fn logical_state(&self) -> Sign {
        self.logical_state
    }

    pub fn sepm(&self) -> &SepmState {
        &self.sepm
    }

    pub fn occluded(&self) -> Option<Tube> {
        self.occluded
    }

    pub fn dynamic_threshold(&self) -> f64 {
        self.dynamic_threshold
    }

    pub fn static_limit(&self) -> f64 {
        self.static_limit
    }

    pub fn pulse_count(&self) -> u64 {
        self.pulse_count
    }

    pub fn model(&self) -> &Arc<ValveModel> {
        &self.model
    }

    pub fn tube_spec(&self, tube: Tube) -> &TubeSpec {
        match tube {
            Tube::Upper => &self.upper_tube,
            Tube::Lower => &self.lower_tube,
        }
    }

    pub fn set_tube_spec(&mut self, tube: Tube, spec: TubeSpec) {
        match tube {
            Tube::Upper => self.upper_tube = spec,
            Tube::Lower => self.lower_tube = spec,
        }
        self.dynamic_threshold = self
            .model
            .stroke_threshold(0, &self.upper_tube)
            .min(self.model.stroke_threshold(0, &self.lower_tube));
        let area = self.upper_tube.seal_area().max(self.lower_tube.seal_area());
        self.static_limit = seal_pressure_limit(
            &self.model.geometry,
            &self.model.magnet,
            area,
            0.0,
            self.sepm.h_m,
        );
    }

    /// Switch deterministically: a stroke seals iff the line pressure is at or
    /// below its force threshold. Ignores the profile's stochastic setting.
    pub fn switch(
        &mut self,
        polarity: Sign,
        line_pressure: f64,
    ) -> Result<SwitchResult, ValveError> {
        self.switch_inner(
            polarity,
            line_pressure,
            None::<&mut rand_chacha::ChaCha8Rng>,
        )
    }

    /// Switch honouring the occlusion mode; in stochastic mode each stroke seals
    /// with a probability that falls linearly from 1 at its threshold to 0 one
    /// ramp width above it.
    pub fn switch_with_rng<R: Rng + ?Sized>(
        &mut self,
        polarity: Sign,
        line_pressure: f64,
        rng: &mut R,
    ) -> Result<SwitchResult, ValveError> {
        self.switch_inner(polarity, line_pressure, Some(rng))
    }

    fn switch_inner<R: Rng + ?Sized>(
        &mut self,
        polarity: Sign,
        line_pressure: f64,
        mut rng: Option<&mut R>,
    ) -> Result<SwitchResult, ValveError> {
        let line_pressure = line_pressure.max(0.0);
        let target = Tube::sealed_in(polarity);
        let already_sealed = self.logical_state == polarity && self.occluded == Some(target);
        let per_pulse = self.model.per_pulse_energy();
        let mut energy = 0.0;
        let mut pulses = 0u32;

        for attempt in 0..=self.model.max_retry {
            let (next, e) = magnetics::apply_pulse(
                &self.sepm,
                &self.model.pulse(polarity),
                &self.model.geometry,
                &self.model.magnet,
            )?;
            debug_assert_eq!(e, per_pulse);
            self.sepm = next;
            self.pulse_count += 1;
            pulses += 1;
            energy = per_pulse * pulses as f64;

            if already_sealed {
                return Ok(SwitchResult {
                    switched: false,
                    occlusion_achieved: true,
                    energy,
                    pulses_used: pulses,
                });
            }

            let threshold = self.model.stroke_threshold(attempt, self.tube_spec(target));
            let sealed = match (self.model.occlusion_mode, rng.as_deref_mut()) {
                (OcclusionMode::Stochastic, Some(rng)) => {
                    let p = ((threshold + self.model.stochastic_ramp - line_pressure)
                        / self.model.stochastic_ramp)
                        .clamp(0.0, 1.0);
                    rng.random::<f64>() < p
                }
                _ => line_pressure <= threshold,
            };
            if sealed {
                let switched = self.logical_state != polarity;
                self.logical_state = polarity;
                self.occluded = Some(target);
                return Ok(SwitchResult {
                    switched,
                    occlusion_achieved: true,
                    energy,
                    pulses_used: pulses,
                });
            }
            // actuator left the old seal but did not reach the new one
            self.occluded = None;
        }

        Err(ValveError::OcclusionFailed {
            valve: self.id.clone(),
            line_pressure,
            pulses,
            energy,
        })
    }

    /// Highest pressure the sealed tube holds once closed.
    pub fn hold_pressure_limit(&self) -> Result<f64, ValveError> {
        let tube = self
            .occluded
            .ok_or_else(|| ValveError::NotOccluded(self.id.clone()))?;
        Ok(seal_pressure_limit(
            &self.model.geometry,
            &self.model.magnet,
            self.tube_spec(tube).seal_area(),
            0.0,
            self.sepm.h_m,
        ))
    }

    /// `(upper, lower)` conductances. A sealed tube passes its leak conductance;
    /// with no seal (after a failed stroke) both tubes are open.
    pub fn tube_conductances(&self) -> (f64, f64) {
        let c = |tube: Tube| {
            let spec = self.tube_spec(tube);
            if self.occluded == Some(tube) {
                spec.closed_leak_conductance
            } else {
                spec.open_conductance
            }
        };
        (c(Tube::Upper), c(Tube::Lower))
    }

    pub fn is_open(&self, tube: Tube) -> bool {
        self.occluded != Some(tube)
    }
}
