//! Simulator and routing compiler for networks of bistable
//! electropermanent-magnet pinch valves.
//!
//! The stack, bottom up: [`magnetics`] solves the actuator's magnetic circuit,
//! [`valve`] turns it into a latching two-tube pinch valve, [`pneumatics`]
//! integrates pressures and flows through valve-gated networks, [`routing`]
//! builds the valve topologies and decodes routing intents, and [`sequencer`]
//! compiles timed programs into pulse schedules and runs them. [`scenario`]
//! ties these to a single TOML file, [`calibrate`] fits a profile to the bench
//! targets and [`rig`] holds the bench networks.

pub mod calibrate;
pub mod magnetics;
pub mod pneumatics;
pub mod profile;
pub mod rig;
pub mod routing;
pub mod scenario;
pub mod sequencer;
pub mod sign;
pub mod valve;

pub use sign::Sign;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Profile(#[from] profile::ProfileError),
    #[error(transparent)]
    Magnetics(#[from] magnetics::MagneticsError),
    #[error(transparent)]
    Valve(#[from] valve::ValveError),
    #[error(transparent)]
    Pneumatics(pneumatics::PneumaticsError),
    #[error(transparent)]
    Routing(#[from] routing::RoutingError),
    #[error(transparent)]
    Sequencer(sequencer::SequencerError),
    #[error(transparent)]
    Registry(sequencer::SequencerError),
    #[error(transparent)]
    Calibration(calibrate::CalibrationError),
    #[error("{0}")]
    Io(String),
}

impl Error {
    /// Process exit code; distinct per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Scenario(_) => 3,
            Error::Profile(_) => 4,
            Error::Magnetics(_) => 5,
            Error::Valve(_) => 6,
            Error::Pneumatics(_) => 7,
            Error::Routing(_) => 8,
            Error::Sequencer(_) => 9,
            Error::Registry(_) => 10,
            Error::Calibration(_) => 11,
            Error::Io(_) => 12,
        }
    }
}

impl From<pneumatics::PneumaticsError> for Error {
    fn from(e: pneumatics::PneumaticsError) -> Self {
        match e {
            pneumatics::PneumaticsError::Valve(v) => Error::Valve(v),
            pneumatics::PneumaticsError::Occlusion { source, .. } => Error::Valve(source),
            other => Error::Pneumatics(other),
        }
    }
}

impl From<sequencer::SequencerError> for Error {
    fn from(e: sequencer::SequencerError) -> Self {
        use sequencer::SequencerError as S;
        match e {
            S::CorruptRegistry { .. } | S::Io { .. } => Error::Registry(e),
            S::Pneumatics(p) => p.into(),
            S::Routing(r) => Error::Routing(r),
            other => Error::Sequencer(other),
        }
    }
}

impl From<calibrate::CalibrationError> for Error {
    fn from(e: calibrate::CalibrationError) -> Self {
        use calibrate::CalibrationError as C;
        match e {
            C::Profile(p) => Error::Profile(p),
            C::Magnetics(m) => Error::Magnetics(m),
            C::Valve(v) => Error::Valve(v),
            C::Pneumatics(p) => p.into(),
            infeasible @ C::Infeasible { .. } => Error::Calibration(infeasible),
        }
    }
}
