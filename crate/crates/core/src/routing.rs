//! Valve-gated routing graphs.
//!
//! Each architecture is a directed graph of ports and junctions. An edge is
//! either a fixed channel or one tube of one valve, and a tube edge conducts
//! when the valve's state leaves that tube open: state `-1` opens the upper
//! tube, `+1` the lower one. Routing is checked by breadth-first reachability
//! from the input ports.
//!
//! In tree decoders valves are numbered in heap order (`V1` is the root, the
//! children of `Vi` are `V2i` and `V2i+1`). The root reads the most significant
//! address bit; a clear bit takes the upper tube to the even child, a set bit
//! the lower tube to the odd child. So the leaf reached by address `a` is `Ya`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sign::Sign;
use crate::valve::Tube;

pub const MAX_DEPTH: u32 = 8;
/// Upper limit on don't-care expansion (2^16 concretizations).
pub const MAX_DONT_CARES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("address {address} out of range for {outputs} outputs")]
    AddressOutOfRange { address: u32, outputs: u32 },
    #[error("port {0} is not an output of the six-port ring")]
    InvalidPort(u32),
    #[error("state vector has don't-care entries (strict mode)")]
    DontCarePresent,
    #[error("don't-care entries change the routing outcome")]
    AmbiguousDontCare,
    #[error("{count} don't-care entries exceed the expansion limit of {MAX_DONT_CARES}")]
    TooManyDontCares { count: usize },
    #[error("state vector has {got} entries, topology has {expected} valves")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tree depth {0} outside 1..={MAX_DEPTH}")]
    InvalidDepth(u32),
    #[error("operation needs a {expected} topology, got {got}")]
    WrongTopology { expected: &'static str, got: String },
    #[error("unknown medium `{0}`")]
    UnknownMedium(String),
    #[error("invalid topology spec `{0}`")]
    InvalidSpec(String),
}

/// One state-vector entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Set(Sign),
    DontCare,
}

impl Cell {
    pub fn sign(self) -> Option<Sign> {
        match self {
            Cell::Set(s) => Some(s),
            Cell::DontCare => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        self.sign().map_or(0, Sign::as_i8)
    }

    pub fn from_i8(v: i8) -> Option<Cell> {
        match v {
            0 => Some(Cell::DontCare),
            v => Sign::from_i64(v.into()).map(Cell::Set),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Set(s) => s.fmt(f),
            Cell::DontCare => f.write_str("N/A"),
        }
    }
}

/// Serialized as `1`, `-1`, or `0` for don't-care.
impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        i8::try_from(v)
            .ok()
            .and_then(Cell::from_i8)
            .ok_or_else(|| serde::de::Error::custom(format!("expected 1, -1 or 0, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<Cell>);

impl StateVector {
    pub fn dont_care(len: usize) -> Self {
        StateVector(vec![Cell::DontCare; len])
    }

    pub fn concrete(states: &[Sign]) -> Self {
        StateVector(states.iter().map(|&s| Cell::Set(s)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dont_care_count(&self) -> usize {
        self.0.iter().filter(|c| **c == Cell::DontCare).count()
    }

    pub fn to_concrete(&self) -> Option<Vec<Sign>> {
        self.0.iter().map(|c| c.sign()).collect()
    }

    /// Every assignment of the don't-care entries, in binary counting order.
    pub fn concretizations(&self) -> Result<Vec<Vec<Sign>>, RoutingError> {
        let free: Vec<usize> = (0..self.len())
            .filter(|&i| self.0[i] == Cell::DontCare)
            .collect();
        if free.len() > MAX_DONT_CARES {
            return Err(RoutingError::TooManyDontCares { count: free.len() });
        }
        let base: Vec<Sign> = self
            .0
            .iter()
            .map(|c| c.sign().unwrap_or(Sign::Neg))
            .collect();
        Ok((0u32..1 << free.len())
            .map(|mask| {
                let mut v = base.clone();
                for (bit, &i) in free.iter().enumerate() {
                    v[i] = Sign::from_bit(mask >> bit & 1 == 1);
                }
                v
            })
            .collect())
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self.0.iter().map(Cell::to_string).collect();
        write!(f, "[{}]", cells.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DontCarePolicy {
    /// Reject vectors with don't-care entries.
    Strict,
    /// Evaluate every concretization and require a unique outcome.
    Expand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologySpec {
    BinaryUnit,
    TreeDecoder {
        depth: u32,
    },
    SixPortRing,
    DualTreeMixer,
    /// A media-select valve in front of a tree decoder.
    MixDecoder {
        depth: u32,
    },
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, RoutingError> {
        match *self {
            TopologySpec::BinaryUnit => binary_unit(),
            TopologySpec::TreeDecoder { depth } => build_tree_decoder(depth),
            TopologySpec::SixPortRing => Ok(build_six_port_ring()),
            TopologySpec::DualTreeMixer => Ok(build_dual_tree_mixer()),
            TopologySpec::MixDecoder { depth } => build_mix_decoder(depth),
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::BinaryUnit => f.write_str("binary"),
            TopologySpec::TreeDecoder { depth } => write!(f, "tree:{depth}"),
            TopologySpec::SixPortRing => f.write_str("six-port"),
            TopologySpec::DualTreeMixer => f.write_str("dual-tree"),
            TopologySpec::MixDecoder { depth } => write!(f, "mix-decoder:{depth}"),
        }
    }
}

/// `binary`, `tree:K`, `six-port`, `dual-tree`, `mix-decoder[:K]`.
impl FromStr for TopologySpec {
    type Err = RoutingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RoutingError::InvalidSpec(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a.parse::<u32>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (head, arg) {
            ("binary" | "binary-unit", None) => Ok(TopologySpec::BinaryUnit),
            ("tree" | "tree-decoder", Some(depth)) => Ok(TopologySpec::TreeDecoder { depth }),
            ("six-port" | "six-port-ring", None) => Ok(TopologySpec::SixPortRing),
            ("dual-tree" | "dual-tree-mixer", None) => Ok(TopologySpec::DualTreeMixer),
            ("mix-decoder", depth) => Ok(TopologySpec::MixDecoder {
                depth: depth.unwrap_or(3),
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeRole {
    Input {
        medium: String,
    },
    Output,
    /// Excess-flow return; reported like an output.
    Recycle,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: String,
    pub role: NodeRole,
}

impl GraphNode {
    pub fn is_sink(&self) -> bool {
        matches!(self.role, NodeRole::Output | NodeRole::Recycle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Fixed,
    Tube { valve: usize, tube: Tube },
}

impl Gate {
    fn conducts(self, states: &[Sign]) -> bool {
        match self {
            Gate::Fixed => true,
            Gate::Tube { valve, tube } => tube == Tube::open_in(states[valve]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEdge {
    pub from: usize,
    pub to: usize,
    pub gate: Gate,
}

/// Address tree embedded in a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeLayout {
    /// Index of the root valve in the topology's valve list.
    pub first_valve: usize,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub spec: TopologySpec,
    pub valves: Vec<String>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<RouteEdge>,
    pub tree: Option<TreeLayout>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl Topology {
    pub fn valve_count(&self) -> usize {
        self.valves.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn valve_index(&self, id: &str) -> Option<usize> {
        self.valves.iter().position(|v| v == id)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.role, NodeRole::Input { .. }))
    }

    /// Output and recycle ports.
    pub fn sinks(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| n.is_sink())
    }

    pub fn media(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.role {
                NodeRole::Input { medium } => Some(medium.clone()),
                _ => None,
            })
            .collect()
    }

    /// Number of addressable outputs of the embedded tree.
    pub fn tree_outputs(&self) -> Option<u32> {
        self.tree.map(|t| 1 << t.depth)
    }

    fn check_len(&self, len: usize) -> Result<(), RoutingError> {
        if len == self.valves.len() {
            Ok(())
        } else {
            Err(RoutingError::LengthMismatch {
                expected: self.valves.len(),
                got: len,
            })
        }
    }

    /// Nodes reachable from `start` over conducting edges; with `reverse` the
    /// edges are walked against their direction.
    pub fn reachable_from(&self, states: &[Sign], start: usize, reverse: bool) -> BTreeSet<usize> {
        let adjacency = if reverse {
            &self.incoming
        } else {
            &self.outgoing
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &e in &adjacency[n] {
                let edge = self.edges[e];
                if !edge.gate.conducts(states) {
                    continue;
                }
                let next = if reverse { edge.from } else { edge.to };
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    fn route_concrete(&self, states: &[Sign]) -> RoutePattern {
        let mut pattern = RoutePattern::default();
        for sink in self.sinks() {
            pattern.media.insert(sink.id.clone(), BTreeSet::new());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let NodeRole::Input { medium } = &node.role else {
                continue;
            };
            for r in self.reachable_from(states, i, false) {
                let target = &self.nodes[r];
                if target.is_sink() {
                    pattern.pairs.insert((node.id.clone(), target.id.clone()));
                    pattern
                        .media
                        .entry(target.id.clone())
                        .or_default()
                        .insert(medium.clone());
                }
            }
        }
        pattern
    }
}

/// Connected input-output pairs and the media each sink receives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePattern {
    pub pairs: BTreeSet<(String, String)>,
    /// Every sink, with the (possibly empty) set of media reaching it.
    pub media: BTreeMap<String, BTreeSet<String>>,
}

impl RoutePattern {
    pub fn reached(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(_, o)| o.as_str()).collect()
    }

    pub fn is_mixed(&self, sink: &str) -> bool {
        self.media.get(sink).is_some_and(|m| m.len() >= 2)
    }

    /// `in->out` pairs, comma separated.
    pub fn pairs_label(&self) -> String {
        let v: Vec<String> = self
            .pairs
            .iter()
            .map(|(i, o)| format!("{i}->{o}"))
            .collect();
        v.join(" ")
    }

    /// `sink=A+B` for every sink reached by at least one medium.
    pub fn media_label(&self) -> String {
        let v: Vec<String> = self
            .media
            .iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(s, m)| format!("{s}={}", m.iter().cloned().collect::<Vec<_>>().join("+")))
            .collect();
        v.join(" ")
    }
}

/// Reachability of every sink from every input under `vector`.
pub fn active_paths(
    topology: &Topology,
    vector: &StateVector,
    policy: DontCarePolicy,
) -> Result<RoutePattern, RoutingError> {
    topology.check_len(vector.len())?;
    if let Some(states) = vector.to_concrete() {
        return Ok(topology.route_concrete(&states));
    }
    if policy == DontCarePolicy::Strict {
        return Err(RoutingError::DontCarePresent);
    }
    let mut outcome: Option<RoutePattern> = None;
    for states in vector.concretizations()? {
        let p = topology.route_concrete(&states);
        match &outcome {
            None => outcome = Some(p),
            Some(prev) if *prev != p => return Err(RoutingError::AmbiguousDontCare),
            Some(_) => {}
        }
    }
    Ok(outcome.unwrap_or_default())
}

pub fn active_paths_concrete(
    topology: &Topology,
    states: &[Sign],
) -> Result<RoutePattern, RoutingError> {
    topology.check_len(states.len())?;
    Ok(topology.route_concrete(states))
}

struct Builder {
    nodes: Vec<GraphNode>,
    index: HashMap<String, usize>,
    edges: Vec<RouteEdge>,
    valves: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            nodes: Vec::new(),
            index: HashMap::new(),
            edges: Vec::new(),
            valves: Vec::new(),
        }
    }

    fn node(&mut self, id: &str, role: NodeRole) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.index.insert(id.to_string(), self.nodes.len());
        self.nodes.push(GraphNode {
            id: id.to_string(),
            role,
        });
        self.nodes.len() - 1
    }

    fn input(&mut self, id: &str, medium: &str) -> usize {
        self.node(
            id,
            NodeRole::Input {
                medium: medium.to_string(),
            },
        )
    }

    fn junction(&mut self, id: &str) -> usize {
        self.node(id, NodeRole::Junction)
    }

    fn valve(&mut self, id: String) -> usize {
        self.valves.push(id);
        self.valves.len() - 1
    }

    fn tube(&mut self, from: usize, to: usize, valve: usize, tube: Tube) {
        self.edges.push(RouteEdge {
            from,
            to,
            gate: Gate::Tube { valve, tube },
        });
    }

    fn fixed(&mut self, from: usize, to: usize) {
        self.edges.push(RouteEdge {
            from,
            to,
            gate: Gate::Fixed,
        });
    }

    /// Heap-ordered tree from `inlet`; returns the leaf nodes in address order.
    fn tree(
        &mut self,
        inlet: usize,
        depth: u32,
        valve_name: impl Fn(usize) -> String,
        junction: impl Fn(usize) -> String,
        leaf: &mut dyn FnMut(&mut Builder, usize) -> usize,
    ) -> (usize, Vec<usize>) {
        let count = (1usize << depth) - 1;
        let first = self.valves.len();
        for h in 1..=count {
            self.valve(valve_name(h));
        }
        let mut inlets = vec![usize::MAX; 2 * count + 2];
        inlets[1] = inlet;
        let mut leaves = vec![usize::MAX; count + 1];
        for h in 1..=count {
            for (child, tube) in [
                (2 * h, Tube::open_in(Sign::Neg)),
                (2 * h + 1, Tube::open_in(Sign::Pos)),
            ] {
                let target = if child <= count {
                    let j = self.junction(&junction(child));
                    inlets[child] = j;
                    j
                } else {
                    let l = leaf(self, child - count - 1);
                    leaves[child - count - 1] = l;
                    l
                };
                self.tube(inlets[h], target, first + h - 1, tube);
            }
        }
        (first, leaves)
    }

    fn finish(self, spec: TopologySpec, tree: Option<TreeLayout>) -> Topology {
        let mut outgoing = vec![Vec::new(); self.nodes.len()];
        let mut incoming = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            outgoing[e.from].push(i);
            incoming[e.to].push(i);
        }
        Topology {
            spec,
            valves: self.valves,
            nodes: self.nodes,
            edges: self.edges,
            tree,
            outgoing,
            incoming,
        }
    }
}

fn check_depth(depth: u32) -> Result<(), RoutingError> {
    if (1..=MAX_DEPTH).contains(&depth) {
        Ok(())
    } else {
        Err(RoutingError::InvalidDepth(depth))
    }
}

fn decoder_tree(b: &mut Builder, inlet: usize, depth: u32, valve_offset: usize) -> usize {
    let (first, _) = b.tree(
        inlet,
        depth,
        |h| format!("V{}", h + valve_offset),
        |h| format!("J{}", h + valve_offset),
        &mut |b, a| b.node(&format!("Y{a}"), NodeRole::Output),
    );
    first
}

/// Heap-ordered decoder with `2^depth` outputs `Y0..` fed from input `I0`.
pub fn build_tree_decoder(depth: u32) -> Result<Topology, RoutingError> {
    check_depth(depth)?;
    let mut b = Builder::new();
    let i0 = b.input("I0", "I0");
    let first = decoder_tree(&mut b, i0, depth, 0);
    Ok(b.finish(
        TopologySpec::TreeDecoder { depth },
        Some(TreeLayout {
            first_valve: first,
            depth,
        }),
    ))
}

/// A single valve steering `I0` to `Y0` (state -1) or `Y1` (state +1).
pub fn binary_unit() -> Result<Topology, RoutingError> {
    let mut t = build_tree_decoder(1)?;
    t.spec = TopologySpec::BinaryUnit;
    Ok(t)
}

pub const SIX_PORT_INPUTS: [u32; 3] = [1, 3, 5];
pub const SIX_PORT_OUTPUTS: [u32; 3] = [2, 4, 6];

/// Six valves on a ring, one per port, ports alternating input/output.
///
/// Input valve `i` sends its port to junction `J(i+1)` through the lower tube
/// and to `J(i-1)` through the upper tube. Output valve `j` connects `Jj` to its
/// port through the lower tube.
pub fn build_six_port_ring() -> Topology {
    let mut b = Builder::new();
    for p in 1..=6u32 {
        b.valve(format!("V{p}"));
    }
    for p in SIX_PORT_INPUTS {
        b.input(&p.to_string(), &format!("R{p}"));
    }
    for p in SIX_PORT_OUTPUTS {
        b.node(&p.to_string(), NodeRole::Output);
        b.junction(&format!("J{p}"));
    }
    let wrap = |p: i32| ((p - 1).rem_euclid(6) + 1) as u32;
    for p in SIX_PORT_INPUTS {
        let port = b.index[&p.to_string()];
        let next = b.index[&format!("J{}", wrap(p as i32 + 1))];
        let prev = b.index[&format!("J{}", wrap(p as i32 - 1))];
        let v = (p - 1) as usize;
        b.tube(port, next, v, Tube::open_in(Sign::Pos));
        b.tube(port, prev, v, Tube::open_in(Sign::Neg));
    }
    for p in SIX_PORT_OUTPUTS {
        let j = b.index[&format!("J{p}")];
        let port = b.index[&p.to_string()];
        b.tube(j, port, (p - 1) as usize, Tube::open_in(Sign::Pos));
    }
    b.finish(TopologySpec::SixPortRing, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SixPortMode {
    /// 1->2, 3->4, 5->6.
    Parallel,
    /// 1->6, 3->2, 5->4.
    Crossed,
    AllClosed,
    /// Parallel routing, or crossed when `crossed` is set, with the listed output ports shut.
    Isolate {
        outputs: Vec<u32>,
        #[serde(default)]
        crossed: bool,
    },
}

impl fmt::Display for SixPortMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SixPortMode::Parallel => f.write_str("parallel"),
            SixPortMode::Crossed => f.write_str("crossed"),
            SixPortMode::AllClosed => f.write_str("all-closed"),
            SixPortMode::Isolate { outputs, crossed } => {
                let ids: Vec<String> = outputs.iter().map(u32::to_string).collect();
                let base = if *crossed { "crossed-" } else { "" };
                write!(f, "{base}isolate({})", ids.join(","))
            }
        }
    }
}

pub fn six_port_mode(mode: &SixPortMode) -> Result<StateVector, RoutingError> {
    let mut v = vec![Cell::Set(Sign::Pos); 6];
    let set_inputs = |v: &mut Vec<Cell>, s: Cell| {
        for p in SIX_PORT_INPUTS {
            v[(p - 1) as usize] = s;
        }
    };
    match mode {
        SixPortMode::Parallel => {}
        SixPortMode::Crossed => set_inputs(&mut v, Cell::Set(Sign::Neg)),
        SixPortMode::AllClosed => {
            set_inputs(&mut v, Cell::DontCare);
            for p in SIX_PORT_OUTPUTS {
                v[(p - 1) as usize] = Cell::Set(Sign::Neg);
            }
        }
        SixPortMode::Isolate { outputs, crossed } => {
            if *crossed {
                set_inputs(&mut v, Cell::Set(Sign::Neg));
            }
            for &p in outputs {
                if !SIX_PORT_OUTPUTS.contains(&p) {
                    return Err(RoutingError::InvalidPort(p));
                }
                v[(p - 1) as usize] = Cell::Set(Sign::Neg);
            }
        }
    }
    Ok(StateVector(v))
}

pub const WELLS: [&str; 6] = ["A1", "A2", "B1", "B2", "C1", "C2"];

/// Two three-valve trees (inputs `A` through `V1..V3`, `B` through `V4..V6`)
/// around a mixing module.
///
/// Branch 3 of each tree splits to its own B-row well and the upper mixing
/// junction, which feeds row A; branch 0 likewise splits to the B-row well
/// and the lower mixing junction, which feeds row C. Branch 1 feeds the tree's
/// own C-row well directly and branch 2 returns to the tree's recycle port.
/// Column 1 belongs to tree A, column 2 to tree B.
pub fn build_dual_tree_mixer() -> Topology {
    let mut b = Builder::new();
    for w in WELLS {
        b.node(w, NodeRole::Output);
    }
    let m_top = b.junction("M_top");
    let m_bot = b.junction("M_bot");
    for (mixer, row) in [(m_top, "A"), (m_bot, "C")] {
        for col in ["1", "2"] {
            let well = b.index[&format!("{row}{col}")];
            b.fixed(mixer, well);
        }
    }
    for (module, col, offset) in [("A", "1", 0usize), ("B", "2", 3)] {
        let lower = module.to_lowercase();
        let inlet = b.input(&format!("IN_{module}"), module);
        let recycle = b.node(&format!("R_{module}"), NodeRole::Recycle);
        let row_b = b.index[&format!("B{col}")];
        let row_c = b.index[&format!("C{col}")];
        let (_, leaves) = b.tree(
            inlet,
            2,
            |h| format!("V{}", h + offset),
            |h| format!("{lower}J{h}"),
            &mut |b, a| b.junction(&format!("{lower}{a}")),
        );
        b.fixed(leaves[3], row_b);
        b.fixed(leaves[3], m_top);
        b.fixed(leaves[0], row_b);
        b.fixed(leaves[0], m_bot);
        b.fixed(leaves[1], row_c);
        b.fixed(leaves[2], recycle);
    }
    b.finish(TopologySpec::DualTreeMixer, None)
}

pub fn dual_tree_pattern(
    topology: &Topology,
    vector: &StateVector,
) -> Result<RoutePattern, RoutingError> {
    if topology.spec != TopologySpec::DualTreeMixer {
        return Err(RoutingError::WrongTopology {
            expected: "dual-tree-mixer",
            got: topology.spec.to_string(),
        });
    }
    active_paths(topology, vector, DontCarePolicy::Expand)
}

pub const LIQUID: &str = "liquid";
pub const GAS: &str = "gas";

/// Media-select valve `V1` (liquid through the upper tube, gas through the
/// lower) feeding `I0` of a decoder built from `V2` on.
pub fn build_mix_decoder(depth: u32) -> Result<Topology, RoutingError> {
    check_depth(depth)?;
    let mut b = Builder::new();
    let liquid = b.input("LIQ", LIQUID);
    let gas = b.input("GAS", GAS);
    let i0 = b.junction("I0");
    let sel = b.valve("V1".into());
    b.tube(liquid, i0, sel, Tube::open_in(Sign::Neg));
    b.tube(gas, i0, sel, Tube::open_in(Sign::Pos));
    let first = decoder_tree(&mut b, i0, depth, 1);
    Ok(b.finish(
        TopologySpec::MixDecoder { depth },
        Some(TreeLayout {
            first_valve: first,
            depth,
        }),
    ))
}

/// State of the media-select valve that admits `medium`.
pub fn media_select_state(medium: &str) -> Result<Sign, RoutingError> {
    match medium {
        LIQUID => Ok(Sign::Neg),
        GAS => Ok(Sign::Pos),
        other => Err(RoutingError::UnknownMedium(other.to_string())),
    }
}

/// Valve states steering the tree input to `Y<address>`; valves off the path
/// are don't-care.
pub fn decode_address(topology: &Topology, address: u32) -> Result<StateVector, RoutingError> {
    let tree = topology.tree.ok_or_else(|| RoutingError::WrongTopology {
        expected: "tree-decoder",
        got: topology.spec.to_string(),
    })?;
    let outputs = 1u32 << tree.depth;
    if address >= outputs {
        return Err(RoutingError::AddressOutOfRange { address, outputs });
    }
    let mut v = StateVector::dont_care(topology.valve_count());
    let mut h = 1usize;
    for level in (0..tree.depth).rev() {
        let bit = address >> level & 1 == 1;
        v.0[tree.first_valve + h - 1] = Cell::Set(Sign::from_bit(bit));
        h = 2 * h + bit as usize;
    }
    Ok(v)
}

/// Nodes from which `output` is reachable when edges are walked backwards: the
/// decoder read as a multiplexer.
pub fn multiplexer_sources(
    topology: &Topology,
    states: &[Sign],
    output: &str,
) -> Result<BTreeSet<String>, RoutingError> {
    topology.check_len(states.len())?;
    let start = topology
        .node_index(output)
        .ok_or_else(|| RoutingError::InvalidSpec(output.to_string()))?;
    Ok(topology
        .reachable_from(states, start, true)
        .into_iter()
        .filter(|&i| {
            matches!(topology.nodes[i].role, NodeRole::Input { .. }) || topology.nodes[i].id == "I0"
        })
        .map(|i| topology.nodes[i].id.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub label: String,
    pub vector: StateVector,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub valves: Vec<String>,
    pub outcome_header: String,
    pub rows: Vec<TruthRow>,
}

impl TruthTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["row".to_string()];
        h.extend(self.valves.iter().cloned());
        h.push(self.outcome_header.clone());
        h
    }

    fn cells(&self, row: &TruthRow) -> Vec<String> {
        let mut c = vec![row.label.clone()];
        c.extend(row.vector.0.iter().map(Cell::to_string));
        c.push(row.outcome.clone());
        c
    }

    pub fn to_text(&self) -> String {
        let mut table = vec![self.header()];
        table.extend(self.rows.iter().map(|r| self.cells(r)));
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &table {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c + 1 == cols {
                        s.clone()
                    } else {
                        format!("{s:<w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in &self.rows {
            w.write_record(self.cells(r)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn row(
    topology: &Topology,
    label: String,
    vector: StateVector,
    outcome: impl Fn(&RoutePattern) -> String,
) -> Result<TruthRow, RoutingError> {
    let pattern = active_paths(topology, &vector, DontCarePolicy::Expand)?;
    Ok(TruthRow {
        label,
        vector,
        outcome: outcome(&pattern),
    })
}

fn outputs_label(p: &RoutePattern) -> String {
    let r: Vec<&str> = p.reached().into_iter().collect();
    if r.is_empty() {
        "-".into()
    } else {
        r.join(" ")
    }
}

/// Truth table regenerated from reachability.
pub fn truth_table(topology: &Topology) -> Result<TruthTable, RoutingError> {
    let mut rows = Vec::new();
    let header;
    match &topology.spec {
        TopologySpec::BinaryUnit | TopologySpec::TreeDecoder { .. } => {
            header = "output";
            for a in 0..topology.tree_outputs().unwrap_or(0) {
                rows.push(row(
                    topology,
                    a.to_string(),
                    decode_address(topology, a)?,
                    outputs_label,
                )?);
            }
        }
        TopologySpec::MixDecoder { .. } => {
            header = "output";
            for a in 0..topology.tree_outputs().unwrap_or(0) {
                for medium in [LIQUID, GAS] {
                    let mut v = decode_address(topology, a)?;
                    v.0[0] = Cell::Set(media_select_state(medium)?);
                    rows.push(row(topology, format!("{a} {medium}"), v, |p| {
                        p.media_label()
                    })?);
                }
            }
        }
        TopologySpec::SixPortRing => {
            header = "pairs";
            let mut modes = vec![
                SixPortMode::Parallel,
                SixPortMode::Crossed,
                SixPortMode::AllClosed,
            ];
            for crossed in [false, true] {
                for p in SIX_PORT_OUTPUTS {
                    modes.push(SixPortMode::Isolate {
                        outputs: vec![p],
                        crossed,
                    });
                }
                for (p, q) in [(2, 4), (2, 6), (4, 6)] {
                    modes.push(SixPortMode::Isolate {
                        outputs: vec![p, q],
                        crossed,
                    });
                }
            }
            for m in modes {
                rows.push(row(topology, m.to_string(), six_port_mode(&m)?, |p| {
                    let s = p.pairs_label();
                    if s.is_empty() {
                        "-".into()
                    } else {
                        s
                    }
                })?);
            }
        }
        TopologySpec::DualTreeMixer => {
            header = "wells";
            for a in 0..4u32 {
                for b in 0..4u32 {
                    let mut v = Vec::new();
                    for addr in [a, b] {
                        let sub = decode_address(&build_tree_decoder(2)?, addr)?;
                        v.extend(sub.0);
                    }
                    rows.push(row(topology, format!("A{a} B{b}"), StateVector(v), |p| {
                        p.media_label()
                    })?);
                }
            }
        }
    }
    Ok(TruthTable {
        valves: topology.valves.clone(),
        outcome_header: header.to_string(),
        rows,
    })
}
