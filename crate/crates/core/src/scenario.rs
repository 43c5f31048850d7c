//! Scenario files: one TOML document naming a profile, a topology, the
//! pneumatic network to build around it, a program, outputs and metrics.
//!
//! ```toml
//! name = "example"
//! profile = "calibrated-default"      # bundled name or path; optional
//!
//! [topology]
//! kind = "tree-decoder"               # binary-unit | tree-decoder | six-port-ring
//! depth = 3                           # | dual-tree-mixer | mix-decoder
//!
//! [network]
//! preset = "from-topology"            # single-valve-rig | dual-outlet-rig | from-topology
//! supply_pressure = 100000.0          # Pa gauge; rig default when absent
//! sample_interval = 0.001             # s
//! initial_states = [-1, -1, -1, -1, -1, -1, -1]
//!
//! [[program.step]]
//! time = 0.5
//! intent = { address = 5 }            # route | six-port | media | media-toggle | vector
//! dwell = 0.5
//!
//! [program.mix_decoder]               # generated cycles, appended to the steps
//! wells = 8
//!
//! [[metric]]
//! kind = "settle"                     # settle | crossover | peak
//! name = "closure"
//! node = "outlet"
//! after = 1.0
//! target = 0.0
//! tolerance = 5000.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::pneumatics::{crossover_time, peak, settle_time, Network, PneumaticsError, Trace};
use crate::profile::Profile;
use crate::rig::{dual_outlet_rig, single_valve_rig, topology_network};
use crate::routing::{Topology, TopologySpec};
use crate::sequencer::{
    compile, execute, CompileOptions, ExecuteOptions, MixDecoderCycle, Program, PulseSchedule,
    Registry, RunReport, SimulatorDriver, Step, DEFAULT_STAGGER,
};
use crate::sign::Sign;
use crate::Error;

pub const BUNDLED: [&str; 6] = [
    "fig3_single_valve",
    "fig3_dual_outlet",
    "fig4_decoder_k3",
    "fig5_dual_tree",
    "fig6_six_port",
    "fig6_mix_decoder",
];

fn bundled_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig3_single_valve" => include_str!("../scenarios/fig3_single_valve.toml"),
        "fig3_dual_outlet" => include_str!("../scenarios/fig3_dual_outlet.toml"),
        "fig4_decoder_k3" => include_str!("../scenarios/fig4_decoder_k3.toml"),
        "fig5_dual_tree" => include_str!("../scenarios/fig5_dual_tree.toml"),
        "fig6_six_port" => include_str!("../scenarios/fig6_six_port.toml"),
        "fig6_mix_decoder" => include_str!("../scenarios/fig6_mix_decoder.toml"),
        _ => return None,
    })
}

#[derive(Debug, ThisError)]
pub enum ScenarioError {
    #[error("{origin}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        origin: String,
        line: Option<usize>,
        message: String,
    },
    #[error("scenario `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no scenario file or bundled scenario named `{0}`")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkPreset {
    SingleValveRig,
    DualOutletRig,
    FromTopology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub preset: NetworkPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply_pressure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<Vec<Sign>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stagger: Option<f64>,
    /// Keep executing after a failed occlusion.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub continue_on_failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    #[serde(default, rename = "step", skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_decoder: Option<MixDecoderCycle>,
}

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Write the sampled trace CSV.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub trace: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { trace: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricKind {
    /// Time after `after` until `node` stays within `tolerance` (Pa) of `target`.
    Settle {
        node: String,
        after: f64,
        target: f64,
        tolerance: f64,
    },
    /// Time after `after` until both outlets stay within `fraction` of supply
    /// of their final values.
    Crossover {
        rising: String,
        falling: String,
        after: f64,
        fraction: f64,
    },
    /// Peak pressure of `node` on `[from, to]`.
    Peak { node: String, from: f64, to: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(flatten)]
    pub kind: MetricKind,
    /// End of the evaluation window (s); end of run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    /// Whether the value lies in `[min, max]`; true when no bounds are given.
    pub within: bool,
}

impl Metric {
    pub fn evaluate(&self, trace: &Trace, supply: f64) -> Result<MetricResult, PneumaticsError> {
        let end = self.until.unwrap_or(f64::INFINITY);
        let windowed;
        let trace = if end.is_finite() {
            windowed = trace.window(f64::NEG_INFINITY, end);
            &windowed
        } else {
            trace
        };
        let value = match &self.kind {
            MetricKind::Settle {
                node,
                after,
                target,
                tolerance,
            } => settle_time(trace, node, *after, *target, *tolerance)?,
            MetricKind::Crossover {
                rising,
                falling,
                after,
                fraction,
            } => crossover_time(trace, rising, falling, *after, supply, *fraction)?,
            MetricKind::Peak { node, from, to } => peak(trace, node, *from, *to)?,
        };
        let within = self.min.is_none_or(|m| value >= m) && self.max.is_none_or(|m| value <= m);
        Ok(MetricResult {
            name: self.name.clone(),
            value,
            within,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub topology: TopologySpec,
    pub network: NetworkSpec,
    #[serde(default)]
    pub program: ProgramSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, rename = "metric", skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<Metric>,
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::parse(&text, &path.display().to_string())
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        bundled_text(name).map(|t| Scenario::parse(t, name).expect("bundled scenario parses"))
    }

    /// A path if one exists, otherwise a bundled name. Returns the directory
    /// that relative profile references resolve against.
    pub fn locate(reference: &str) -> Result<(Scenario, Option<PathBuf>), ScenarioError> {
        let path = Path::new(reference);
        if path.is_file() {
            let base = path.parent().map(Path::to_path_buf);
            return Ok((Scenario::load(path)?, base));
        }
        let stem = reference.trim_end_matches(".toml");
        Scenario::bundled(stem)
            .map(|s| (s, None))
            .ok_or_else(|| ScenarioError::NotFound(reference.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    /// Explicit steps followed by any generated mix-decoder cycles.
    pub fn program(&self) -> Result<Program, Error> {
        let mut steps = self.program.steps.clone();
        if let Some(cycle) = &self.program.mix_decoder {
            let start = steps
                .last()
                .map_or(cycle.start, |s| cycle.start.max(s.time + s.dwell));
            steps.extend(Program::mix_decoder(cycle.wells, start, cycle.phase_offset)?.steps);
        }
        Ok(Program { steps })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub dry_run: bool,
    /// Registry holding the valve states to start from.
    pub registry: Option<PathBuf>,
}

/// Everything built from a scenario before execution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub profile: Profile,
    pub topology: Topology,
    pub network: Network,
    pub schedule: PulseSchedule,
    pub supply_pressure: f64,
    pub sample_interval: f64,
}

pub fn prepare(
    scenario: &Scenario,
    base: Option<&Path>,
    opts: &RunOptions,
) -> Result<Prepared, Error> {
    let profile = Profile::resolve(scenario.profile.as_deref(), base)?;
    let topology = scenario.topology.build()?;
    let net = &scenario.network;
    let n = topology.valve_count();
    let mut states = match &net.initial_states {
        Some(s) if s.len() != n => {
            return Err(scenario
                .invalid(format!(
                    "initial_states has {} entries, topology has {n} valves",
                    s.len()
                ))
                .into())
        }
        Some(s) => s.clone(),
        None => vec![Sign::Neg; n],
    };
    let supply = net.supply_pressure.unwrap_or(profile.rig.supply_pressure);
    let mut rig_profile = profile.clone();
    rig_profile.rig.supply_pressure = supply;
    let rig_only = |p: NetworkPreset| -> Result<(), Error> {
        if scenario.topology != TopologySpec::BinaryUnit {
            return Err(scenario
                .invalid(format!("{p:?} needs a binary-unit topology"))
                .into());
        }
        Ok(())
    };
    let mut network = match net.preset {
        NetworkPreset::SingleValveRig => {
            rig_only(net.preset)?;
            single_valve_rig(&rig_profile, states[0])?
        }
        NetworkPreset::DualOutletRig => {
            rig_only(net.preset)?;
            dual_outlet_rig(&rig_profile, states[0])?
        }
        NetworkPreset::FromTopology => topology_network(&topology, &profile, supply, &states)?,
    }
    .with_seed(opts.seed);
    if let Some(path) = opts.registry.as_deref().filter(|p| p.exists()) {
        let registry = Registry::load(path, &topology.valves)?;
        network.restore_valves(&registry.valves)?;
        states = registry.states();
    }
    let stagger = net.stagger.unwrap_or(DEFAULT_STAGGER);
    let schedule = compile(
        &scenario.program()?,
        &topology,
        &states,
        CompileOptions { stagger },
    )?;
    let sample_interval = net
        .sample_interval
        .unwrap_or(profile.pneumatics.sample_interval);
    if !(sample_interval.is_finite() && sample_interval > 0.0) {
        return Err(scenario.invalid("sample_interval must be > 0").into());
    }
    Ok(Prepared {
        profile,
        topology,
        network,
        schedule,
        supply_pressure: supply,
        sample_interval,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub schedule: PulseSchedule,
    /// Absent for dry runs.
    pub report: Option<RunReport>,
    pub metrics: Vec<MetricResult>,
    pub registry: Option<Registry>,
    pub write_trace: bool,
}

pub fn run_scenario(
    scenario: &Scenario,
    base: Option<&Path>,
    opts: &RunOptions,
) -> Result<ScenarioOutcome, Error> {
    let mut prepared = prepare(scenario, base, opts)?;
    let mut outcome = ScenarioOutcome {
        name: scenario.name.clone(),
        schedule: prepared.schedule.clone(),
        report: None,
        metrics: Vec::new(),
        registry: None,
        write_trace: scenario.output.trace,
    };
    if opts.dry_run {
        return Ok(outcome);
    }
    let exec = ExecuteOptions {
        halt_on_failure: !scenario.network.continue_on_failure,
        sample_interval: prepared.sample_interval,
    };
    let report = execute(
        &prepared.schedule,
        &prepared.topology,
        &mut SimulatorDriver,
        &mut prepared.network,
        exec,
    )?;
    for m in &scenario.metrics {
        outcome
            .metrics
            .push(m.evaluate(&report.trace, prepared.supply_pressure)?);
    }
    outcome.registry = Some(Registry {
        valves: report.final_states.clone(),
    });
    outcome.report = Some(report);
    Ok(outcome)
}

impl ScenarioOutcome {
    /// Write `trace.csv`, `report.toml`, `schedule.txt` and `registry.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        let io = |path: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let put = |file: &str, text: &str| -> Result<(), Error> {
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|e| io(&path, e))
        };
        put("schedule.txt", &self.schedule.listing())?;
        let Some(report) = &self.report else {
            return Ok(());
        };
        if self.write_trace {
            let path = dir.join("trace.csv");
            let file = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
            report.trace.write_csv(std::io::BufWriter::new(file))?;
        }
        #[derive(Serialize)]
        struct Metrics<'a> {
            metric: &'a [MetricResult],
        }
        let mut text = report.summary_toml();
        if !self.metrics.is_empty() {
            text.push('\n');
            text += &toml::to_string(&Metrics {
                metric: &self.metrics,
            })
            .expect("metrics serialize");
        }
        put("report.toml", &text)?;
        if let Some(reg) = &self.registry {
            put("registry.toml", &reg.to_toml())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_round_trip() {
        for name in BUNDLED {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, name);
            let again = Scenario::parse(&s.to_toml(), "rt").unwrap();
            assert_eq!(again, s, "{name}");
            assert_eq!(again.to_toml(), s.to_toml());
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = Scenario::parse("name = \"x\"\n[topology]\nkind = \"moebius\"\n", "bad.toml")
            .unwrap_err();
        match err {
            ScenarioError::Parse { line: Some(l), .. } => assert!(l >= 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dry_run_compiles_only() {
        let s = Scenario::bundled("fig4_decoder_k3").unwrap();
        let out = run_scenario(
            &s,
            None,
            &RunOptions {
                dry_run: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(out.report.is_none());
        assert!(!out.schedule.commands.is_empty());
    }

    #[test]
    fn wrong_preset_topology_is_rejected() {
        let mut s = Scenario::bundled("fig3_single_valve").unwrap();
        s.topology = TopologySpec::TreeDecoder { depth: 2 };
        s.network.initial_states = None;
        assert!(matches!(
            prepare(&s, None, &RunOptions::default()),
            Err(Error::Scenario(_))
        ));
    }
}
