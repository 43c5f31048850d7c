//! Lumped pressure/flow network.
//!
//! Nodes store gas as a pneumatic capacitance (`dP = Q dt / C`); edges pass a
//! flow linear in the pressure difference (`Q = G dP`). An edge may also carry
//! an inertance `L`, in which case its flow is a state that obeys
//! `L dQ/dt = dP - Q/G`; that is what produces the inlet spike when a flowing
//! line is suddenly shut. Supply, vent-terminal and well nodes hold their
//! pressure. Pressures are gauge (ambient = 0 Pa).
//!
//! Integration is forward Euler on the node pressures, with inertial flows
//! updated semi-implicitly first. `run` sub-steps automatically to stay inside
//! the stability bound; `step` refuses a step outside it.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sign::Sign;
use crate::valve::{SwitchResult, Tube, Valve, ValveError, ValveRecord};

#[derive(Debug, Error)]
pub enum PneumaticsError {
    #[error("step dt = {dt:e} s violates the stability bound {bound:e} s")]
    UnstableStep { dt: f64, bound: f64 },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown valve `{0}`")]
    UnknownValve(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid network element: {0}")]
    Invalid(String),
    #[error("events not sorted by time (event {index})")]
    EventsUnsorted { index: usize },
    #[error("node `{node}` never settles inside the band")]
    NeverSettles { node: String },
    #[error("at t = {time:.4} s: {source}")]
    Occlusion { time: f64, source: ValveError },
    #[error("trace export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Valve(#[from] ValveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Supply,
    Internal,
    VentTerminal,
    Well,
}

impl NodeKind {
    pub fn is_fixed(self) -> bool {
        !matches!(self, NodeKind::Internal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureNode {
    pub id: String,
    /// Gauge pressure (Pa).
    #[serde(default)]
    pub pressure: f64,
    /// m^3/Pa; ignored for fixed-pressure nodes.
    #[serde(default)]
    pub capacitance: f64,
    pub kind: NodeKind,
}

impl PressureNode {
    pub fn internal(id: impl Into<String>, capacitance: f64) -> Self {
        PressureNode {
            id: id.into(),
            pressure: 0.0,
            capacitance,
            kind: NodeKind::Internal,
        }
    }

    pub fn supply(id: impl Into<String>, pressure: f64) -> Self {
        PressureNode {
            id: id.into(),
            pressure,
            capacitance: 0.0,
            kind: NodeKind::Supply,
        }
    }

    pub fn vent(id: impl Into<String>) -> Self {
        PressureNode {
            id: id.into(),
            pressure: 0.0,
            capacitance: 0.0,
            kind: NodeKind::VentTerminal,
        }
    }

    pub fn well(id: impl Into<String>) -> Self {
        PressureNode {
            id: id.into(),
            pressure: 0.0,
            capacitance: 0.0,
            kind: NodeKind::Well,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeSource {
    Fixed,
    ValveTube { valve: String, tube: Tube },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub id: String,
    pub from: String,
    pub to: String,
    /// (m^3/s)/Pa. Refreshed from the valve before each step for valve tubes.
    #[serde(default)]
    pub conductance: f64,
    /// Pa s^2/m^3; zero for a purely resistive edge.
    #[serde(default)]
    pub inertance: f64,
    pub source: EdgeSource,
}

impl FlowEdge {
    pub fn fixed(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        conductance: f64,
    ) -> Self {
        FlowEdge {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            conductance,
            inertance: 0.0,
            source: EdgeSource::Fixed,
        }
    }

    pub fn valve_tube(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        valve: impl Into<String>,
        tube: Tube,
    ) -> Self {
        FlowEdge {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            conductance: 0.0,
            inertance: 0.0,
            source: EdgeSource::ValveTube {
                valve: valve.into(),
                tube,
            },
        }
    }

    pub fn with_inertance(mut self, inertance: f64) -> Self {
        self.inertance = inertance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NetworkEvent {
    Pulse {
        valve: String,
        polarity: Sign,
    },
    /// Move a supply to `pressure`, linearly over `ramp` seconds.
    SetSupply {
        node: String,
        pressure: f64,
        #[serde(default)]
        ramp: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time: f64,
    #[serde(flatten)]
    pub event: NetworkEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub label: String,
}

/// Uniformly sampled record of node pressures and edge flows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub sample_interval: f64,
    pub times: Vec<f64>,
    pub pressures: BTreeMap<String, Vec<f64>>,
    pub flows: BTreeMap<String, Vec<f64>>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn pressure(&self, node: &str) -> Option<&[f64]> {
        self.pressures.get(node).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `from <= t <= to`; events in the same span.
    pub fn window(&self, from: f64, to: f64) -> Trace {
        let keep: Vec<usize> = (0..self.times.len())
            .filter(|&i| self.times[i] >= from - TIME_EPS && self.times[i] <= to + TIME_EPS)
            .collect();
        let pick = |m: &BTreeMap<String, Vec<f64>>| {
            m.iter()
                .map(|(k, v)| (k.clone(), keep.iter().map(|&i| v[i]).collect()))
                .collect()
        };
        Trace {
            sample_interval: self.sample_interval,
            times: keep.iter().map(|&i| self.times[i]).collect(),
            pressures: pick(&self.pressures),
            flows: pick(&self.flows),
            events: self
                .events
                .iter()
                .filter(|e| e.time >= from && e.time <= to)
                .cloned()
                .collect(),
        }
    }

    /// Append another trace recorded on the same network after this one.
    pub fn extend(&mut self, other: Trace) {
        self.times.extend(other.times);
        for (k, v) in other.pressures {
            self.pressures.entry(k).or_default().extend(v);
        }
        for (k, v) in other.flows {
            self.flows.entry(k).or_default().extend(v);
        }
        self.events.extend(other.events);
    }

    /// CSV with `time_s`, then `p_<node>` columns (Pa), then `q_<edge>` columns
    /// (m^3/s), each group in id order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PneumaticsError> {
        let mut w = csv::Writer::from_writer(out);
        let export = |e: csv::Error| PneumaticsError::Export(e.to_string());
        let mut header = vec!["time_s".to_string()];
        header.extend(self.pressures.keys().map(|k| format!("p_{k}")));
        header.extend(self.flows.keys().map(|k| format!("q_{k}")));
        w.write_record(&header).map_err(export)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.pressures.values().map(|s| s[i].to_string()));
            row.extend(self.flows.values().map(|s| s[i].to_string()));
            w.write_record(&row).map_err(export)?;
        }
        w.flush()
            .map_err(|e| PneumaticsError::Export(e.to_string()))
    }
}

/// Collects samples on a fixed grid `k * interval`.
#[derive(Debug)]
pub struct TraceRecorder {
    trace: Trace,
    next_index: u64,
}

impl TraceRecorder {
    pub fn new(sample_interval: f64) -> Self {
        TraceRecorder {
            trace: Trace {
                sample_interval,
                ..Trace::default()
            },
            next_index: 0,
        }
    }

    fn next_time(&self) -> f64 {
        self.next_index as f64 * self.trace.sample_interval
    }

    pub fn finish(self) -> Trace {
        self.trace
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn note(&mut self, time: f64, label: impl Into<String>) {
        self.trace.events.push(TraceEvent {
            time,
            label: label.into(),
        });
    }
}

#[derive(Debug, Clone)]
struct PendingMove {
    at: f64,
    valve: usize,
    occluded: Option<Tube>,
}

#[derive(Debug, Clone)]
struct Ramp {
    node: usize,
    from: f64,
    to: f64,
    start: f64,
    end: f64,
}

const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<PressureNode>,
    edges: Vec<FlowEdge>,
    ends: Vec<(usize, usize)>,
    flows: Vec<f64>,
    valves: Vec<Valve>,
    node_index: HashMap<String, usize>,
    valve_index: HashMap<String, usize>,
    /// Physical occlusion of each valve; lags the logical state by the dead time.
    positions: Vec<Option<Tube>>,
    breached: Vec<bool>,
    pending: Vec<PendingMove>,
    ramps: Vec<Ramp>,
    time: f64,
    dt: f64,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(dt: f64) -> Self {
        Network {
            nodes: Vec::new(),
            edges: Vec::new(),
            ends: Vec::new(),
            flows: Vec::new(),
            valves: Vec::new(),
            node_index: HashMap::new(),
            valve_index: HashMap::new(),
            positions: Vec::new(),
            breached: Vec::new(),
            pending: Vec::new(),
            ramps: Vec::new(),
            time: 0.0,
            dt,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn add_node(&mut self, node: PressureNode) -> Result<(), PneumaticsError> {
        if self.node_index.contains_key(&node.id) {
            return Err(PneumaticsError::DuplicateId(node.id));
        }
        if node.kind == NodeKind::Internal
            && !(node.capacitance > 0.0 && node.capacitance.is_finite())
        {
            return Err(PneumaticsError::Invalid(format!(
                "internal node `{}` needs capacitance > 0",
                node.id
            )));
        }
        self.node_index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
        Ok(())
    }

    pub fn add_valve(&mut self, valve: Valve) -> Result<(), PneumaticsError> {
        if self.valve_index.contains_key(&valve.id) {
            return Err(PneumaticsError::DuplicateId(valve.id.clone()));
        }
        self.valve_index.insert(valve.id.clone(), self.valves.len());
        self.positions.push(valve.occluded());
        self.breached.push(false);
        self.valves.push(valve);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: FlowEdge) -> Result<(), PneumaticsError> {
        if self.edges.iter().any(|e| e.id == edge.id) {
            return Err(PneumaticsError::DuplicateId(edge.id));
        }
        let idx = |id: &str| {
            self.node_index
                .get(id)
                .copied()
                .ok_or_else(|| PneumaticsError::UnknownNode(id.to_string()))
        };
        let ends = (idx(&edge.from)?, idx(&edge.to)?);
        if !(edge.conductance >= 0.0 && edge.inertance >= 0.0) {
            return Err(PneumaticsError::Invalid(format!(
                "edge `{}` needs conductance, inertance >= 0",
                edge.id
            )));
        }
        if let EdgeSource::ValveTube { valve, .. } = &edge.source {
            if !self.valve_index.contains_key(valve) {
                return Err(PneumaticsError::UnknownValve(valve.clone()));
            }
        }
        self.ends.push(ends);
        self.flows.push(0.0);
        self.edges.push(edge);
        self.refresh_conductances();
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[PressureNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[FlowEdge] {
        &self.edges
    }

    pub fn valves(&self) -> &[Valve] {
        &self.valves
    }

    pub fn valve(&self, id: &str) -> Option<&Valve> {
        self.valve_index.get(id).map(|&i| &self.valves[i])
    }

    pub fn valve_mut(&mut self, id: &str) -> Option<&mut Valve> {
        self.valve_index.get(id).map(|&i| &mut self.valves[i])
    }

    pub fn pressure(&self, node: &str) -> Option<f64> {
        self.node_index.get(node).map(|&i| self.nodes[i].pressure)
    }

    pub fn set_pressure(&mut self, node: &str, pressure: f64) -> Result<(), PneumaticsError> {
        let i = *self
            .node_index
            .get(node)
            .ok_or_else(|| PneumaticsError::UnknownNode(node.to_string()))?;
        self.nodes[i].pressure = pressure;
        Ok(())
    }

    /// Flow on every edge, positive from `from` to `to`.
    pub fn flows(&self) -> Vec<f64> {
        (0..self.edges.len()).map(|i| self.edge_flow(i)).collect()
    }

    fn edge_flow(&self, i: usize) -> f64 {
        if self.edges[i].inertance > 0.0 {
            self.flows[i]
        } else {
            let (a, b) = self.ends[i];
            self.edges[i].conductance * (self.nodes[a].pressure - self.nodes[b].pressure)
        }
    }

    /// Stored gas `sum C P` over internal nodes.
    pub fn stored_mass(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Internal)
            .map(|n| n.capacitance * n.pressure)
            .sum()
    }

    /// Replace every valve's state with the registry record of the same id.
    pub fn restore_valves(&mut self, records: &[ValveRecord]) -> Result<(), PneumaticsError> {
        for rec in records {
            let i = *self
                .valve_index
                .get(&rec.id)
                .ok_or_else(|| PneumaticsError::UnknownValve(rec.id.clone()))?;
            let model: Arc<_> = self.valves[i].model().clone();
            self.valves[i] =
                Valve::restore(rec, model).map_err(|e| PneumaticsError::Invalid(e.to_string()))?;
            self.positions[i] = self.valves[i].occluded();
        }
        self.pending.clear();
        self.refresh_conductances();
        Ok(())
    }

    /// Pressure in the tube a switch would close: the highest endpoint
    /// pressure over the edges that tube feeds.
    pub fn tube_line_pressure(&self, valve: &str, tube: Tube) -> f64 {
        self.edges
            .iter()
            .zip(&self.ends)
            .filter(|(e, _)| matches!(&e.source, EdgeSource::ValveTube { valve: v, tube: t } if v == valve && *t == tube))
            .map(|(_, &(a, b))| self.nodes[a].pressure.max(self.nodes[b].pressure))
            .fold(0.0, f64::max)
    }

    /// Pulse a valve now. The tube moves after the valve's dead time.
    pub fn actuate(&mut self, valve: &str, polarity: Sign) -> Result<SwitchResult, ValveError> {
        let i = *self
            .valve_index
            .get(valve)
            .ok_or_else(|| ValveError::InvalidTube(format!("unknown valve `{valve}`")))?;
        let line_pressure = self.tube_line_pressure(valve, Tube::sealed_in(polarity));
        let result = self.valves[i].switch_with_rng(polarity, line_pressure, &mut self.rng);
        let at = self.time + self.valves[i].model().dead_time;
        self.pending.push(PendingMove {
            at,
            valve: i,
            occluded: self.valves[i].occluded(),
        });
        self.pending.sort_by(|a, b| a.at.total_cmp(&b.at));
        result
    }

    fn refresh_conductances(&mut self) {
        for edge in self.edges.iter_mut() {
            if let EdgeSource::ValveTube { valve, tube } = &edge.source {
                let v = self.valve_index[valve];
                let spec = self.valves[v].tube_spec(*tube);
                let sealed = self.positions[v] == Some(*tube) && !self.breached[v];
                edge.conductance = if sealed {
                    spec.closed_leak_conductance
                } else {
                    spec.open_conductance
                };
            }
        }
    }

    /// A sealed tube blows through while its line pressure exceeds the hold limit.
    fn update_breaches(&mut self, recorder: Option<&mut TraceRecorder>) {
        let mut notes = Vec::new();
        for v in 0..self.valves.len() {
            let breached = match self.positions[v] {
                Some(tube) if self.valves[v].occluded() == Some(tube) => {
                    let limit = self.valves[v].hold_pressure_limit().unwrap_or(0.0);
                    self.tube_line_pressure(&self.valves[v].id, tube) > limit
                }
                _ => false,
            };
            if breached != self.breached[v] {
                let what = if breached {
                    "seal breach"
                } else {
                    "seal restored"
                };
                notes.push(format!("{what} {}", self.valves[v].id));
                self.breached[v] = breached;
            }
        }
        if let Some(rec) = recorder {
            for n in notes {
                rec.note(self.time, n);
            }
        }
    }

    /// Largest step the explicit scheme accepts.
    pub fn stable_dt(&self) -> f64 {
        let mut sum_g = vec![0.0; self.nodes.len()];
        for (e, &(a, b)) in self.edges.iter().zip(&self.ends) {
            sum_g[a] += e.conductance;
            sum_g[b] += e.conductance;
        }
        let mut bound = f64::INFINITY;
        for (n, g) in self.nodes.iter().zip(&sum_g) {
            if n.kind == NodeKind::Internal && *g > 0.0 {
                bound = bound.min(n.capacitance / g);
            }
        }
        for (e, &(a, b)) in self.edges.iter().zip(&self.ends) {
            if e.inertance > 0.0 {
                let c = [a, b]
                    .iter()
                    .filter(|&&i| self.nodes[i].kind == NodeKind::Internal)
                    .map(|&i| self.nodes[i].capacitance)
                    .fold(f64::INFINITY, f64::min);
                if c.is_finite() {
                    bound = bound.min(2.0 * (e.inertance * c).sqrt());
                }
            }
        }
        bound
    }

    fn apply_ramps(&mut self) {
        let t = self.time;
        for r in &self.ramps {
            let p = if t >= r.end || r.end <= r.start {
                r.to
            } else if t <= r.start {
                r.from
            } else {
                r.from + (r.to - r.from) * (t - r.start) / (r.end - r.start)
            };
            self.nodes[r.node].pressure = p;
        }
        self.ramps.retain(|r| t < r.end);
    }

    /// One explicit step of `dt` seconds.
    pub fn step(&mut self, dt: f64) -> Result<(), PneumaticsError> {
        self.apply_ramps();
        self.refresh_conductances();
        let bound = self.stable_dt();
        if !(dt > 0.0 && dt < bound) {
            return Err(PneumaticsError::UnstableStep { dt, bound });
        }
        self.integrate(dt);
        Ok(())
    }

    fn integrate(&mut self, dt: f64) {
        for i in 0..self.edges.len() {
            let e = &self.edges[i];
            let (a, b) = self.ends[i];
            let dp = self.nodes[a].pressure - self.nodes[b].pressure;
            self.flows[i] = if e.inertance > 0.0 {
                if e.conductance > 0.0 {
                    (self.flows[i] + dt / e.inertance * dp)
                        / (1.0 + dt / (e.inertance * e.conductance))
                } else {
                    0.0
                }
            } else {
                e.conductance * dp
            };
        }
        let mut net = vec![0.0; self.nodes.len()];
        for (q, &(a, b)) in self.flows.iter().zip(&self.ends) {
            net[a] -= q;
            net[b] += q;
        }
        for (n, q) in self.nodes.iter_mut().zip(net) {
            if n.kind == NodeKind::Internal {
                n.pressure += q * dt / n.capacitance;
            }
        }
        self.time += dt;
    }

    fn sample(&self, recorder: &mut TraceRecorder) {
        let t = recorder.next_time();
        let tr = &mut recorder.trace;
        tr.times.push(t);
        for n in &self.nodes {
            tr.pressures
                .entry(n.id.clone())
                .or_default()
                .push(n.pressure);
        }
        for (i, e) in self.edges.iter().enumerate() {
            tr.flows
                .entry(e.id.clone())
                .or_default()
                .push(self.edge_flow(i));
        }
        recorder.next_index += 1;
    }

    fn apply_due_moves(&mut self, recorder: &mut TraceRecorder) {
        while let Some(m) = self.pending.first() {
            if m.at > self.time + TIME_EPS {
                break;
            }
            let m = self.pending.remove(0);
            self.positions[m.valve] = m.occluded;
            let label = match m.occluded {
                Some(t) => format!("{} sealed {:?}", self.valves[m.valve].id, t).to_lowercase(),
                None => format!("{} unsealed", self.valves[m.valve].id).to_lowercase(),
            };
            recorder.note(self.time, label);
        }
    }

    /// Integrate up to absolute time `t_end`, sampling on the recorder's grid.
    pub fn advance_to(
        &mut self,
        t_end: f64,
        recorder: &mut TraceRecorder,
    ) -> Result<(), PneumaticsError> {
        if recorder.next_index == 0 && recorder.trace.times.is_empty() {
            while recorder.next_time() < self.time - TIME_EPS {
                recorder.next_index += 1;
            }
        }
        loop {
            self.apply_ramps();
            self.apply_due_moves(recorder);
            self.refresh_conductances();
            self.update_breaches(Some(recorder));
            self.refresh_conductances();
            if (recorder.next_time() - self.time).abs() <= TIME_EPS * (1.0 + self.time.abs()) {
                self.sample(recorder);
            }
            if self.time >= t_end - TIME_EPS {
                self.time = self.time.max(t_end);
                return Ok(());
            }
            let mut boundary = t_end.min(recorder.next_time().max(self.time + TIME_EPS));
            if let Some(m) = self.pending.first() {
                boundary = boundary.min(m.at.max(self.time));
            }
            if let Some(r) = self.ramps.first() {
                if self.time < r.end {
                    boundary = boundary.min(self.time + self.dt.max(TIME_EPS));
                }
            }
            let segment = boundary - self.time;
            if segment <= TIME_EPS {
                self.time = boundary;
                continue;
            }
            let h_max = self.dt.min(0.5 * self.stable_dt());
            let n = (segment / h_max).ceil().max(1.0) as usize;
            let h = segment / n as f64;
            for _ in 0..n {
                self.refresh_conductances();
                self.integrate(h);
            }
            self.time = boundary;
        }
    }

    fn apply_event(
        &mut self,
        ev: &NetworkEvent,
        recorder: &mut TraceRecorder,
    ) -> Result<(), PneumaticsError> {
        match ev {
            NetworkEvent::Pulse { valve, polarity } => {
                if !self.valve_index.contains_key(valve) {
                    return Err(PneumaticsError::UnknownValve(valve.clone()));
                }
                recorder.note(self.time, format!("pulse {valve} {polarity}"));
                let time = self.time;
                self.actuate(valve, *polarity)
                    .map_err(|source| PneumaticsError::Occlusion { time, source })?;
            }
            NetworkEvent::SetSupply {
                node,
                pressure,
                ramp,
            } => {
                let i = *self
                    .node_index
                    .get(node)
                    .ok_or_else(|| PneumaticsError::UnknownNode(node.clone()))?;
                if self.nodes[i].kind != NodeKind::Supply {
                    return Err(PneumaticsError::Invalid(format!(
                        "`{node}` is not a supply"
                    )));
                }
                recorder.note(self.time, format!("supply {node} -> {pressure} Pa"));
                self.ramps.retain(|r| r.node != i);
                self.ramps.push(Ramp {
                    node: i,
                    from: self.nodes[i].pressure,
                    to: *pressure,
                    start: self.time,
                    end: self.time + ramp.max(0.0),
                });
                self.apply_ramps();
            }
        }
        Ok(())
    }

    /// Run for `duration` seconds from the current time, applying `events` at
    /// their absolute timestamps.
    pub fn run(
        &mut self,
        duration: f64,
        events: &[TimedEvent],
        sample_interval: f64,
    ) -> Result<Trace, PneumaticsError> {
        if let Some(i) = events.windows(2).position(|w| w[1].time < w[0].time) {
            return Err(PneumaticsError::EventsUnsorted { index: i + 1 });
        }
        let mut recorder = TraceRecorder::new(sample_interval);
        let end = self.time + duration;
        for ev in events.iter().filter(|e| e.time <= end) {
            self.advance_to(ev.time, &mut recorder)?;
            self.apply_event(&ev.event, &mut recorder)?;
        }
        self.advance_to(end, &mut recorder)?;
        Ok(recorder.finish())
    }
}

fn series<'a>(trace: &'a Trace, node: &str) -> Result<&'a [f64], PneumaticsError> {
    trace
        .pressure(node)
        .ok_or_else(|| PneumaticsError::UnknownNode(node.to_string()))
}

/// Time after `after` from which `node` stays within `tolerance` of `target`
/// for the rest of the trace.
pub fn settle_time(
    trace: &Trace,
    node: &str,
    after: f64,
    target: f64,
    tolerance: f64,
) -> Result<f64, PneumaticsError> {
    let p = series(trace, node)?;
    let never = || PneumaticsError::NeverSettles {
        node: node.to_string(),
    };
    let start = trace
        .times
        .iter()
        .position(|&t| t >= after - TIME_EPS)
        .ok_or_else(never)?;
    let outside = |i: usize| (p[i] - target).abs() > tolerance;
    if outside(p.len() - 1) {
        return Err(never());
    }
    let last_outside = (start..p.len()).rev().find(|&i| outside(i));
    let settled = last_outside.map_or(start, |i| i + 1);
    Ok(trace.times[settled] - after)
}

/// Settling time with the band given as a fraction of the step from the
/// pressure at `after` to `target`.
pub fn measure_settle(
    trace: &Trace,
    node: &str,
    after: f64,
    target: f64,
    fraction: f64,
) -> Result<f64, PneumaticsError> {
    let p = series(trace, node)?;
    let i = trace
        .times
        .iter()
        .position(|&t| t >= after - TIME_EPS)
        .ok_or_else(|| PneumaticsError::NeverSettles {
            node: node.to_string(),
        })?;
    let band = fraction * (p[i] - target).abs();
    settle_time(trace, node, after, target, band)
}

/// Duration after `after` until a dual-outlet swap completes: both outlets
/// within `fraction * supply` of their final values for the rest of the trace.
pub fn crossover_time(
    trace: &Trace,
    rising: &str,
    falling: &str,
    after: f64,
    supply: f64,
    fraction: f64,
) -> Result<f64, PneumaticsError> {
    let band = fraction * supply;
    let mut worst: f64 = 0.0;
    for node in [rising, falling] {
        let last = *series(trace, node)?
            .last()
            .ok_or_else(|| PneumaticsError::NeverSettles {
                node: node.to_string(),
            })?;
        worst = worst.max(settle_time(trace, node, after, last, band)?);
    }
    Ok(worst)
}

/// Maximum pressure of `node` over `[from, to]`.
pub fn peak(trace: &Trace, node: &str, from: f64, to: f64) -> Result<f64, PneumaticsError> {
    let p = series(trace, node)?;
    Ok(trace
        .times
        .iter()
        .zip(p)
        .filter(|(t, _)| **t >= from - TIME_EPS && **t <= to + TIME_EPS)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max))
}
