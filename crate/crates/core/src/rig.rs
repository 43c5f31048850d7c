//! Pneumatic networks for the bench rigs and for routing topologies, plus the
//! bench measurements run on them.

use std::sync::Arc;

use crate::pneumatics::{
    crossover_time, peak, settle_time, FlowEdge, Network, NetworkEvent, PneumaticsError,
    PressureNode, TimedEvent, Trace,
};
use crate::profile::Profile;
use crate::routing::{Gate, NodeRole, Topology};
use crate::sign::Sign;
use crate::valve::{Tube, Valve, ValveModel};

pub const SUPPLY: &str = "supply";
pub const INLET: &str = "inlet";
pub const OUTLET: &str = "outlet";
pub const OUTLET_A: &str = "outlet_a";
pub const OUTLET_B: &str = "outlet_b";
pub const AMBIENT: &str = "ambient";
pub const RIG_VALVE: &str = "V1";

/// Settling time before the first event of a bench run (s).
pub const PRE_ROLL: f64 = 1.0;

pub fn valve_model(profile: &Profile) -> Result<Arc<ValveModel>, PneumaticsError> {
    Ok(Arc::new(ValveModel::from_profile(profile)?))
}

fn rig_front(profile: &Profile, state: Sign) -> Result<Network, PneumaticsError> {
    let rig = &profile.rig;
    let mut n = Network::new(profile.pneumatics.dt);
    n.add_node(PressureNode::supply(SUPPLY, rig.supply_pressure))?;
    n.add_node(PressureNode::internal(INLET, rig.inlet_capacitance))?;
    n.add_node(PressureNode::vent(AMBIENT))?;
    n.add_valve(Valve::new(RIG_VALVE, valve_model(profile)?, state)?)?;
    n.add_edge(
        FlowEdge::fixed("line", SUPPLY, INLET, rig.line_conductance)
            .with_inertance(rig.line_inertance),
    )?;
    Ok(n)
}

fn rig_outlet(
    n: &mut Network,
    profile: &Profile,
    outlet: &str,
    tube: Tube,
) -> Result<(), PneumaticsError> {
    n.add_node(PressureNode::internal(
        outlet,
        profile.rig.outlet_capacitance,
    ))?;
    let tube_edge = format!("tube_{}", format!("{tube:?}").to_lowercase());
    n.add_edge(FlowEdge::valve_tube(
        tube_edge, INLET, outlet, RIG_VALVE, tube,
    ))?;
    let vent = if outlet == OUTLET {
        "vent".to_string()
    } else {
        format!("vent_{}", &outlet[outlet.len() - 1..])
    };
    n.add_edge(FlowEdge::fixed(
        vent,
        outlet,
        AMBIENT,
        profile.rig.vent_conductance,
    ))
}

/// Supply, compliant line, one valve whose upper tube feeds a vented outlet.
/// State `-1` leaves the outlet open, `+1` seals it.
pub fn single_valve_rig(profile: &Profile, state: Sign) -> Result<Network, PneumaticsError> {
    let mut n = rig_front(profile, state)?;
    rig_outlet(&mut n, profile, OUTLET, Tube::Upper)?;
    Ok(n)
}

/// As the single-valve rig, with the lower tube feeding a second vented
/// outlet; exactly one outlet is pressurized at a time.
pub fn dual_outlet_rig(profile: &Profile, state: Sign) -> Result<Network, PneumaticsError> {
    let mut n = rig_front(profile, state)?;
    rig_outlet(&mut n, profile, OUTLET_A, Tube::Upper)?;
    rig_outlet(&mut n, profile, OUTLET_B, Tube::Lower)?;
    Ok(n)
}

/// One pressure node per graph node (inputs become supplies, sinks wells,
/// junctions internal volumes) and one edge per graph edge.
pub fn topology_network(
    topology: &Topology,
    profile: &Profile,
    supply_pressure: f64,
    states: &[Sign],
) -> Result<Network, PneumaticsError> {
    if states.len() != topology.valve_count() {
        return Err(PneumaticsError::Invalid(format!(
            "{} initial states for {} valves",
            states.len(),
            topology.valve_count()
        )));
    }
    let mut n = Network::new(profile.pneumatics.dt);
    for node in &topology.nodes {
        let p = match node.role {
            NodeRole::Input { .. } => PressureNode::supply(&node.id, supply_pressure),
            NodeRole::Output | NodeRole::Recycle => PressureNode::well(&node.id),
            NodeRole::Junction => {
                PressureNode::internal(&node.id, profile.pneumatics.junction_capacitance)
            }
        };
        n.add_node(p)?;
    }
    let model = valve_model(profile)?;
    for (id, &s) in topology.valves.iter().zip(states) {
        n.add_valve(Valve::new(id, model.clone(), s)?)?;
    }
    for e in &topology.edges {
        let (from, to) = (&topology.nodes[e.from].id, &topology.nodes[e.to].id);
        let id = format!("{from}-{to}");
        let edge = match e.gate {
            Gate::Fixed => FlowEdge::fixed(id, from, to, profile.pneumatics.channel_conductance),
            Gate::Tube { valve, tube } => {
                FlowEdge::valve_tube(id, from, to, &topology.valves[valve], tube)
            }
        };
        n.add_edge(edge)?;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureReport {
    /// Time from the closing pulse until the outlet stays below the band (s).
    pub settle: f64,
    pub outlet_before: f64,
    pub inlet_before: f64,
    pub inlet_peak: f64,
    pub trace: Trace,
}

/// Open the rig's outlet, let it reach steady flow, then close it.
pub fn measure_closure(
    profile: &Profile,
    sample_interval: f64,
) -> Result<ClosureReport, PneumaticsError> {
    let mut n = single_valve_rig(profile, Sign::Neg)?;
    let close = TimedEvent {
        time: PRE_ROLL,
        event: NetworkEvent::Pulse {
            valve: RIG_VALVE.into(),
            polarity: Sign::Pos,
        },
    };
    let trace = n.run(PRE_ROLL + 0.5, &[close], sample_interval)?;
    closure_from_trace(
        trace,
        PRE_ROLL,
        profile.rig.supply_pressure,
        profile.calibration.closure_band,
    )
}

pub fn closure_from_trace(
    trace: Trace,
    at: f64,
    supply: f64,
    band: f64,
) -> Result<ClosureReport, PneumaticsError> {
    let settle = settle_time(&trace, OUTLET, at, 0.0, band * supply)?;
    let before = |node: &str| -> Result<f64, PneumaticsError> {
        let i = trace.times.iter().rposition(|&t| t <= at).unwrap_or(0);
        Ok(trace
            .pressure(node)
            .ok_or_else(|| PneumaticsError::UnknownNode(node.into()))?[i])
    };
    Ok(ClosureReport {
        settle,
        outlet_before: before(OUTLET)?,
        inlet_before: before(INLET)?,
        inlet_peak: peak(&trace, INLET, at, at + 0.5)?,
        trace,
    })
}

/// Swap the dual-outlet rig from outlet A to outlet B; returns the crossover
/// duration at a 10 % of supply band.
pub fn measure_crossover(profile: &Profile, sample_interval: f64) -> Result<f64, PneumaticsError> {
    let mut n = dual_outlet_rig(profile, Sign::Neg)?;
    let swap = TimedEvent {
        time: PRE_ROLL,
        event: NetworkEvent::Pulse {
            valve: RIG_VALVE.into(),
            polarity: Sign::Pos,
        },
    };
    let trace = n.run(PRE_ROLL + 1.0, &[swap], sample_interval)?;
    crossover_time(
        &trace,
        OUTLET_B,
        OUTLET_A,
        PRE_ROLL,
        profile.rig.supply_pressure,
        0.1,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticTest {
    pub hold_pressure: f64,
    pub hold_duration: f64,
    pub final_pressure: f64,
    pub step: f64,
    /// Time over which each pressure step is ramped (s).
    pub ramp: f64,
    /// Dwell at each step after its ramp (s).
    pub dwell: f64,
    pub sample_interval: f64,
}

impl Default for StaticTest {
    fn default() -> Self {
        StaticTest {
            hold_pressure: 300e3,
            hold_duration: 1200.0,
            final_pressure: 500e3,
            step: 50e3,
            ramp: 1.0,
            dwell: 60.0,
            sample_interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticReport {
    /// Largest |outlet| during the hold (Pa).
    pub hold_deviation: f64,
    /// Largest outlet pressure during the ramp (Pa).
    pub ramp_rise: f64,
    pub breached: bool,
    pub trace: Trace,
}

/// Seal the rig, bring the supply up to the hold pressure, hold, then step
/// the supply up to the final pressure.
pub fn static_hold(profile: &Profile, test: &StaticTest) -> Result<StaticReport, PneumaticsError> {
    let mut n = single_valve_rig(profile, Sign::Pos)?;
    n.set_pressure(SUPPLY, 0.0)?;
    let supply = |time: f64, pressure: f64| TimedEvent {
        time,
        event: NetworkEvent::SetSupply {
            node: SUPPLY.into(),
            pressure,
            ramp: test.ramp,
        },
    };
    let mut events = vec![supply(0.0, test.hold_pressure)];
    let hold_end = test.ramp + test.hold_duration;
    let mut t = hold_end;
    let mut p = test.hold_pressure;
    while p < test.final_pressure - 1e-9 {
        p = (p + test.step).min(test.final_pressure);
        events.push(supply(t, p));
        t += test.ramp + test.dwell;
    }
    let trace = n.run(t, &events, test.sample_interval)?;
    let outlet = trace.pressure(OUTLET).expect("rig outlet");
    let span = |from: f64, to: f64| {
        trace
            .times
            .iter()
            .zip(outlet)
            .filter(|(time, _)| **time >= from && **time <= to)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    };
    Ok(StaticReport {
        hold_deviation: span(test.ramp, hold_end),
        ramp_rise: span(hold_end, t),
        breached: trace
            .events
            .iter()
            .any(|e| e.label.starts_with("seal breach")),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{build_tree_decoder, decode_address};

    #[test]
    fn rig_steady_state_divides_supply() {
        let p = Profile::calibrated_default();
        let mut n = single_valve_rig(&p, Sign::Neg).unwrap();
        n.run(1.0, &[], 1e-2).unwrap();
        let r = &p.rig;
        let g = p.valve.tube.open_conductance;
        let series = 1.0 / (1.0 / r.line_conductance + 1.0 / g);
        let expect = r.supply_pressure * series / (series + r.vent_conductance);
        assert!((n.pressure(OUTLET).unwrap() - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn sealed_rig_keeps_outlet_at_ambient() {
        let p = Profile::calibrated_default();
        let mut n = single_valve_rig(&p, Sign::Pos).unwrap();
        n.run(0.5, &[], 1e-2).unwrap();
        assert!(n.pressure(OUTLET).unwrap().abs() < 1e-9);
    }

    #[test]
    fn decoder_network_feeds_addressed_well() {
        let p = Profile::calibrated_default();
        let t = build_tree_decoder(2).unwrap();
        let states: Vec<Sign> = decode_address(&t, 2)
            .unwrap()
            .0
            .iter()
            .map(|c| c.sign().unwrap_or(Sign::Neg))
            .collect();
        let mut n = topology_network(&t, &p, 1e5, &states).unwrap();
        let tr = n.run(0.2, &[], 1e-2).unwrap();
        let flow = |e: &str| *tr.flows[e].last().unwrap();
        assert!(flow("J3-Y2") > 1e-6);
        for e in ["J2-Y0", "J2-Y1", "J3-Y3"] {
            assert!(flow(e).abs() < 1e-9 * flow("J3-Y2").max(1.0), "{e}");
        }
    }
}
