//! Programs, pulse schedules, execution and the valve registry.
//!
//! A program is a list of timed routing intents. Compiling it against the
//! current valve states yields a pulse schedule holding only the pulses that
//! change a valve; don't-care entries keep whatever state the valve already
//! has. Pulses within one step are staggered so a single driver can fire them
//! in turn.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pneumatics::{Network, PneumaticsError, Trace, TraceRecorder};
use crate::routing::{
    active_paths_concrete, decode_address, media_select_state, six_port_mode, Cell, RoutePattern,
    RoutingError, SixPortMode, StateVector, Topology, TopologySpec, GAS, LIQUID,
};
use crate::sign::Sign;
use crate::valve::{ValveError, ValveRecord};

/// Spacing of pulses issued within one step (s).
pub const DEFAULT_STAGGER: f64 = 1e-3;
/// Media interval of the mix-decoder cycle (s).
pub const MEDIA_INTERVAL: f64 = 1.5;
/// Closing gas phase of the mix-decoder cycle (s).
pub const GAS_PHASE: f64 = 2.0;
/// Alternating media phases before the gas phase.
pub const MEDIA_PHASES: u32 = 5;
pub const MIX_CYCLE: f64 = MEDIA_PHASES as f64 * MEDIA_INTERVAL + GAS_PHASE;

#[derive(Debug, Error)]
pub enum SequencerError {
    #[error("step {step}: {source}")]
    IntentInvalid { step: usize, source: RoutingError },
    #[error("invalid program: {0}")]
    ProgramInvalid(String),
    #[error("corrupt registry {origin}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    CorruptRegistry {
        origin: String,
        line: Option<usize>,
        message: String,
    },
    #[error("registry {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("driver rejected pulse for `{0}`")]
    UnknownValve(String),
    #[error(transparent)]
    Pneumatics(#[from] PneumaticsError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Intent {
    /// Steer a decoder to `Y<address>`.
    Address(u32),
    /// Steer a mix-decoder to `Y<address>` with the given medium.
    Route {
        address: u32,
        medium: String,
    },
    SixPort(SixPortMode),
    /// Set only the media-select valve.
    Media(String),
    /// Flip the media-select valve.
    MediaToggle,
    Vector(StateVector),
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intent::Address(a) => write!(f, "address {a}"),
            Intent::Route { address, medium } => write!(f, "route {address} {medium}"),
            Intent::SixPort(m) => write!(f, "six-port {m}"),
            Intent::Media(m) => write!(f, "media {m}"),
            Intent::MediaToggle => f.write_str("media toggle"),
            Intent::Vector(v) => write!(f, "vector {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub time: f64,
    pub intent: Intent,
    pub dwell: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

impl Program {
    pub fn validate(&self) -> Result<(), SequencerError> {
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.time.is_finite() && s.time >= 0.0) {
                return Err(SequencerError::ProgramInvalid(format!(
                    "step {i}: time must be finite and >= 0"
                )));
            }
            if !(s.dwell.is_finite() && s.dwell > 0.0) {
                return Err(SequencerError::ProgramInvalid(format!(
                    "step {i}: dwell must be > 0"
                )));
            }
            if i > 0 && s.time <= self.steps[i - 1].time {
                return Err(SequencerError::ProgramInvalid(format!(
                    "step {i}: times must strictly increase"
                )));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time + s.dwell)
    }

    /// One mix-decoder cycle per well, starting at `start`: liquid and gas
    /// alternating every 1.5 s for five phases, then a 2 s gas phase. Media
    /// changes after the first are delayed by `phase_offset` (s) within their
    /// interval; every cycle lasts exactly 9.5 s.
    pub fn mix_decoder(
        wells: u32,
        start: f64,
        phase_offset: f64,
    ) -> Result<Program, SequencerError> {
        if !(0.0..MEDIA_INTERVAL).contains(&phase_offset) {
            return Err(SequencerError::ProgramInvalid(format!(
                "phase offset {phase_offset} outside [0, {MEDIA_INTERVAL})"
            )));
        }
        let mut steps = Vec::new();
        for well in 0..wells {
            let t0 = start + well as f64 * MIX_CYCLE;
            let mut times = vec![t0];
            let mut media = vec![LIQUID];
            for k in 1..=MEDIA_PHASES {
                times.push(t0 + k as f64 * MEDIA_INTERVAL + phase_offset);
                media.push(if k % 2 == 1 { GAS } else { LIQUID });
            }
            let end = t0 + MIX_CYCLE;
            for (i, (&t, &m)) in times.iter().zip(&media).enumerate() {
                let next = times.get(i + 1).copied().unwrap_or(end);
                steps.push(Step {
                    time: t,
                    intent: Intent::Route {
                        address: well,
                        medium: m.to_string(),
                    },
                    dwell: next - t,
                });
            }
        }
        Ok(Program { steps })
    }
}

/// Mix-decoder program generator settings as written in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixDecoderCycle {
    #[serde(default = "default_wells")]
    pub wells: u32,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub phase_offset: f64,
}

fn default_wells() -> u32 {
    8
}

/// Target vector of an intent; don't-care entries are left to the compiler.
pub fn resolve_intent(
    topology: &Topology,
    intent: &Intent,
    current: &[Sign],
) -> Result<StateVector, RoutingError> {
    let mix_only = || RoutingError::WrongTopology {
        expected: "mix-decoder",
        got: topology.spec.to_string(),
    };
    let is_mix = matches!(topology.spec, TopologySpec::MixDecoder { .. });
    match intent {
        Intent::Address(a) => decode_address(topology, *a),
        Intent::Route { address, medium } => {
            if !is_mix {
                return Err(mix_only());
            }
            let mut v = decode_address(topology, *address)?;
            v.0[0] = Cell::Set(media_select_state(medium)?);
            Ok(v)
        }
        Intent::SixPort(mode) => {
            if topology.spec != TopologySpec::SixPortRing {
                return Err(RoutingError::WrongTopology {
                    expected: "six-port-ring",
                    got: topology.spec.to_string(),
                });
            }
            six_port_mode(mode)
        }
        Intent::Media(medium) => {
            if !is_mix {
                return Err(mix_only());
            }
            let mut v = StateVector::dont_care(topology.valve_count());
            v.0[0] = Cell::Set(media_select_state(medium)?);
            Ok(v)
        }
        Intent::MediaToggle => {
            if !is_mix {
                return Err(mix_only());
            }
            let mut v = StateVector::dont_care(topology.valve_count());
            v.0[0] = Cell::Set(-current[0]);
            Ok(v)
        }
        Intent::Vector(v) => {
            if v.len() != topology.valve_count() {
                return Err(RoutingError::LengthMismatch {
                    expected: topology.valve_count(),
                    got: v.len(),
                });
            }
            Ok(v.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseCommand {
    pub time: f64,
    pub valve: String,
    pub polarity: Sign,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMark {
    pub index: usize,
    pub time: f64,
    pub dwell: f64,
    pub intent: String,
    /// Valve states once the step's pulses have landed.
    pub states: Vec<Sign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub valves: Vec<String>,
    pub initial: Vec<Sign>,
    pub commands: Vec<PulseCommand>,
    pub steps: Vec<StepMark>,
}

impl PulseSchedule {
    pub fn end_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time + s.dwell)
    }

    pub fn final_states(&self) -> &[Sign] {
        self.steps.last().map_or(&self.initial, |s| &s.states)
    }

    /// Readable listing of the schedule.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for mark in &self.steps {
            s += &format!(
                "step {:>3} t={:>9.4} s dwell={:.4} s  {}\n",
                mark.index, mark.time, mark.dwell, mark.intent
            );
            for c in self.commands.iter().filter(|c| c.step == mark.index) {
                s += &format!("    {:>9.4} s  {} {}\n", c.time, c.valve, c.polarity);
            }
        }
        s += &format!("{} pulses\n", self.commands.len());
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    pub stagger: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            stagger: DEFAULT_STAGGER,
        }
    }
}

/// Pulses needed to carry the valves from `current` through every step.
pub fn compile(
    program: &Program,
    topology: &Topology,
    current: &[Sign],
    opts: CompileOptions,
) -> Result<PulseSchedule, SequencerError> {
    program.validate()?;
    if current.len() != topology.valve_count() {
        return Err(RoutingError::LengthMismatch {
            expected: topology.valve_count(),
            got: current.len(),
        }
        .into());
    }
    let mut running = current.to_vec();
    let mut commands = Vec::new();
    let mut steps = Vec::new();
    for (i, step) in program.steps.iter().enumerate() {
        let target = resolve_intent(topology, &step.intent, &running)
            .map_err(|source| SequencerError::IntentInvalid { step: i, source })?;
        let mut n = 0;
        for (v, cell) in target.0.iter().enumerate() {
            if let Cell::Set(s) = *cell {
                if s != running[v] {
                    commands.push(PulseCommand {
                        time: step.time + n as f64 * opts.stagger,
                        valve: topology.valves[v].clone(),
                        polarity: s,
                        step: i,
                    });
                    running[v] = s;
                    n += 1;
                }
            }
        }
        steps.push(StepMark {
            index: i,
            time: step.time,
            dwell: step.dwell,
            intent: step.intent.to_string(),
            states: running.clone(),
        });
    }
    Ok(PulseSchedule {
        valves: topology.valves.clone(),
        initial: current.to_vec(),
        commands,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub switched: bool,
    pub pulses: u32,
    pub energy: f64,
}

/// Sink for pulse commands.
pub trait DriverPort {
    fn send_pulse(&mut self, cmd: &PulseCommand, network: &mut Network) -> Result<Ack, ValveError>;
}

/// Fires pulses into the simulated network.
#[derive(Debug, Default)]
pub struct SimulatorDriver;

impl DriverPort for SimulatorDriver {
    fn send_pulse(&mut self, cmd: &PulseCommand, network: &mut Network) -> Result<Ack, ValveError> {
        let r = network.actuate(&cmd.valve, cmd.polarity)?;
        Ok(Ack {
            switched: r.switched,
            pulses: r.pulses_used,
            energy: r.energy,
        })
    }
}

/// Records commands and acknowledges each with one pulse; the network is not touched.
#[derive(Debug, Default)]
pub struct RecordingDriver {
    pub sent: Vec<PulseCommand>,
}

impl DriverPort for RecordingDriver {
    fn send_pulse(&mut self, cmd: &PulseCommand, network: &mut Network) -> Result<Ack, ValveError> {
        let valve = network
            .valve(&cmd.valve)
            .ok_or_else(|| ValveError::InvalidTube(format!("unknown valve `{}`", cmd.valve)))?;
        let energy = valve.model().per_pulse_energy();
        self.sent.push(cmd.clone());
        Ok(Ack {
            switched: true,
            pulses: 1,
            energy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub per_pulse_energy: f64,
    pub pulses: BTreeMap<String, u64>,
    pub total_pulses: u64,
    pub total_energy: f64,
    /// Energy spent holding states between pulses; the magnets need none.
    pub holding_energy: f64,
}

impl EnergyLedger {
    pub fn new(valves: &[String], per_pulse_energy: f64) -> Self {
        EnergyLedger {
            per_pulse_energy,
            pulses: valves.iter().map(|v| (v.clone(), 0)).collect(),
            total_pulses: 0,
            total_energy: 0.0,
            holding_energy: 0.0,
        }
    }

    fn add(&mut self, valve: &str, pulses: u32) {
        *self.pulses.entry(valve.to_string()).or_default() += u64::from(pulses);
        self.total_pulses += u64::from(pulses);
        self.total_energy = self.total_pulses as f64 * self.per_pulse_energy;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub index: usize,
    pub time: f64,
    pub intent: String,
    pub states: Vec<Sign>,
    pub pattern: RoutePattern,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: usize,
    pub time: f64,
    pub valve: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trace: Trace,
    pub final_states: Vec<ValveRecord>,
    pub ledger: EnergyLedger,
    pub steps: Vec<StepOutcome>,
    pub failures: Vec<StepFailure>,
    pub halted: bool,
}

impl RunReport {
    pub fn final_vector(&self) -> Vec<Sign> {
        self.final_states.iter().map(|r| r.logical_state).collect()
    }

    /// Structured-text summary.
    pub fn summary_toml(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            total_energy_j: f64,
            holding_energy_j: f64,
            per_pulse_energy_j: f64,
            total_pulses: u64,
            halted: bool,
            pulses: &'a BTreeMap<String, u64>,
            step: Vec<StepSummary<'a>>,
            failure: &'a [StepFailure],
        }
        #[derive(Serialize)]
        struct StepSummary<'a> {
            index: usize,
            time: f64,
            intent: &'a str,
            states: &'a [Sign],
            pairs: String,
            media: String,
            failed: bool,
        }
        let s = Summary {
            total_energy_j: self.ledger.total_energy,
            holding_energy_j: self.ledger.holding_energy,
            per_pulse_energy_j: self.ledger.per_pulse_energy,
            total_pulses: self.ledger.total_pulses,
            halted: self.halted,
            pulses: &self.ledger.pulses,
            step: self
                .steps
                .iter()
                .map(|o| StepSummary {
                    index: o.index,
                    time: o.time,
                    intent: &o.intent,
                    states: &o.states,
                    pairs: o.pattern.pairs_label(),
                    media: o.pattern.media_label(),
                    failed: o.failed,
                })
                .collect(),
            failure: &self.failures,
        };
        toml::to_string(&s).expect("summary serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteOptions {
    pub halt_on_failure: bool,
    pub sample_interval: f64,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            halt_on_failure: true,
            sample_interval: 1e-3,
        }
    }
}

/// Dispatch `schedule` at its timestamps in simulated time.
pub fn execute(
    schedule: &PulseSchedule,
    topology: &Topology,
    driver: &mut dyn DriverPort,
    network: &mut Network,
    opts: ExecuteOptions,
) -> Result<RunReport, SequencerError> {
    let per_pulse = network
        .valves()
        .first()
        .map_or(0.0, |v| v.model().per_pulse_energy());
    let mut ledger = EnergyLedger::new(&schedule.valves, per_pulse);
    let mut states = schedule.initial.clone();
    let mut recorder = TraceRecorder::new(opts.sample_interval);
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut halted = false;
    let mut pulse_counts: BTreeMap<String, u64> = network
        .valves()
        .iter()
        .map(|v| (v.id.clone(), v.pulse_count()))
        .collect();

    for mark in &schedule.steps {
        let mut failed = false;
        for cmd in schedule.commands.iter().filter(|c| c.step == mark.index) {
            network.advance_to(cmd.time, &mut recorder)?;
            let v = topology
                .valve_index(&cmd.valve)
                .ok_or_else(|| SequencerError::UnknownValve(cmd.valve.clone()))?;
            recorder.note(
                network.time(),
                format!("pulse {} {}", cmd.valve, cmd.polarity),
            );
            match driver.send_pulse(cmd, network) {
                Ok(ack) => {
                    ledger.add(&cmd.valve, ack.pulses);
                    *pulse_counts.entry(cmd.valve.clone()).or_default() += u64::from(ack.pulses);
                    states[v] = cmd.polarity;
                }
                Err(e) => {
                    if let ValveError::OcclusionFailed { pulses, .. } = &e {
                        ledger.add(&cmd.valve, *pulses);
                        *pulse_counts.entry(cmd.valve.clone()).or_default() += u64::from(*pulses);
                        states[v] = cmd.polarity;
                    }
                    recorder.note(network.time(), format!("failure {}: {e}", cmd.valve));
                    failures.push(StepFailure {
                        step: mark.index,
                        time: network.time(),
                        valve: cmd.valve.clone(),
                        message: e.to_string(),
                    });
                    failed = true;
                    if opts.halt_on_failure {
                        halted = true;
                        break;
                    }
                }
            }
        }
        outcomes.push(StepOutcome {
            index: mark.index,
            time: mark.time,
            intent: mark.intent.clone(),
            states: states.clone(),
            pattern: active_paths_concrete(topology, &states)?,
            failed,
        });
        if halted {
            break;
        }
    }
    if !halted {
        network.advance_to(schedule.end_time().max(network.time()), &mut recorder)?;
    }
    let final_states = schedule
        .valves
        .iter()
        .zip(&states)
        .map(|(id, &s)| ValveRecord {
            id: id.clone(),
            logical_state: s,
            pulse_count: pulse_counts.get(id).copied().unwrap_or(0),
        })
        .collect();
    Ok(RunReport {
        trace: recorder.finish(),
        final_states,
        ledger,
        steps: outcomes,
        failures,
        halted,
    })
}

/// Nonvolatile valve states, one record per valve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(rename = "valve", default)]
    pub valves: Vec<ValveRecord>,
}

impl Registry {
    pub fn from_network(network: &Network) -> Registry {
        Registry {
            valves: network.valves().iter().map(|v| v.record()).collect(),
        }
    }

    pub fn states(&self) -> Vec<Sign> {
        self.valves.iter().map(|r| r.logical_state).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }

    /// Parse and check that exactly the `expected` valve ids are present, in order.
    pub fn parse(
        text: &str,
        origin: &str,
        expected: &[String],
    ) -> Result<Registry, SequencerError> {
        let corrupt = |line: Option<usize>, message: String| SequencerError::CorruptRegistry {
            origin: origin.to_string(),
            line,
            message,
        };
        let reg: Registry = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            corrupt(line, e.message().to_string())
        })?;
        let line_of = |id: &str| {
            text.lines()
                .position(|l| l.trim_start().starts_with("id") && l.contains(&format!("\"{id}\"")))
                .map(|i| i + 1)
        };
        for (i, want) in expected.iter().enumerate() {
            match reg.valves.get(i) {
                Some(r) if &r.id == want => {}
                Some(r) => {
                    return Err(corrupt(
                        line_of(&r.id),
                        format!("expected valve `{want}`, found `{}`", r.id),
                    ))
                }
                None => return Err(corrupt(None, format!("missing valve `{want}`"))),
            }
        }
        if let Some(extra) = reg.valves.get(expected.len()) {
            return Err(corrupt(
                line_of(&extra.id),
                format!("unexpected valve `{}`", extra.id),
            ));
        }
        Ok(reg)
    }

    pub fn persist(&self, path: &Path) -> Result<(), SequencerError> {
        std::fs::write(path, self.to_toml()).map_err(|source| SequencerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path, expected: &[String]) -> Result<Registry, SequencerError> {
        let text = std::fs::read_to_string(path).map_err(|source| SequencerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Registry::parse(&text, &path.display().to_string(), expected)
    }
}
