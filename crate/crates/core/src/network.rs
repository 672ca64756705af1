//! Road-network model: signalized junctions joined by directed edges.
//!
//! Networks are immutable once built. Edges and junctions are stored sorted by
//! their string id, so comparing [`EdgeIx`] values is the same as comparing
//! edge ids lexicographically. The routing layer relies on that for its
//! deterministic tie-breaks.
//!
//! The plain-text file format is line oriented:
//!
//! ```text
//! network v1
//! # comment
//! junction <id> <x> <y> <signalized:0|1>
//! edge <id> <from> <to> <length_m> <vmax_mps> <lanes>
//! signal <junction_id> <cycle_s> <edge_id>:<green_start>-<green_end> ... [offset=<s>]
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

/// Horizontal block length of the Manhattan grid, meters.
pub const MANHATTAN_HORIZONTAL_M: f64 = 300.0;
/// Vertical block length of the Manhattan grid, meters.
pub const MANHATTAN_VERTICAL_M: f64 = 200.0;
/// Block length of the 4x4 signal grid, meters.
pub const GRID4X4_BLOCK_M: f64 = 300.0;
/// Urban speed limit used by the generators (50 km/h).
pub const DEFAULT_VMAX_MPS: f64 = 13.89;

pub const DEFAULT_CYCLE_S: f64 = 60.0;
pub const DEFAULT_NS_GREEN: (f64, f64) = (0.0, 27.0);
pub const DEFAULT_EW_GREEN: (f64, f64) = (30.0, 57.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: reference to unknown junction \"{id}\"")]
    DanglingJunction { line: usize, id: String },
    #[error("line {line}: reference to unknown edge \"{id}\"")]
    DanglingEdge { line: usize, id: String },
    #[error("edge \"{id}\": {field} must be positive, got {value}")]
    NonPositive {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("duplicate {kind} id \"{id}\"")]
    Duplicate { kind: &'static str, id: String },
    #[error("edge \"{0}\" starts and ends at the same junction")]
    SelfLoop(String),
    #[error("junction \"{0}\" has a non-finite position")]
    NonFinitePosition(String),
    #[error("signal program at junction \"{junction}\": {reason}")]
    Signal { junction: String, reason: String },
    #[error("unknown edge \"{0}\"")]
    UnknownEdge(String),
    #[error("unknown junction \"{0}\"")]
    UnknownJunction(String),
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    Dimension { rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeIx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JunctionIx(pub usize);

/// One green interval, seconds into the cycle, half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenWindow {
    pub start: f64,
    pub end: f64,
}

/// Fixed-cycle signal plan for one junction, keyed by incoming edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalProgram {
    cycle: f64,
    offset: f64,
    windows: BTreeMap<String, Vec<GreenWindow>>,
}

impl SignalProgram {
    pub fn new(
        cycle: f64,
        offset: f64,
        windows: BTreeMap<String, Vec<GreenWindow>>,
    ) -> Result<Self, String> {
        if !(cycle.is_finite() && cycle > 0.0) {
            return Err(format!("cycle must be positive, got {cycle}"));
        }
        if !offset.is_finite() {
            return Err("offset must be finite".into());
        }
        for (edge, list) in &windows {
            if list.is_empty() {
                return Err(format!("edge {edge} has no green window"));
            }
            for w in list {
                if !(0.0 <= w.start && w.start < w.end && w.end <= cycle) {
                    return Err(format!(
                        "edge {edge}: window {}-{} outside 0..{cycle}",
                        w.start, w.end
                    ));
                }
            }
        }
        let mut program = SignalProgram {
            cycle,
            offset,
            windows,
        };
        for list in program.windows.values_mut() {
            list.sort_by(|a, b| a.start.total_cmp(&b.start));
        }
        Ok(program)
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn windows(&self) -> &BTreeMap<String, Vec<GreenWindow>> {
        &self.windows
    }

    pub fn governs(&self, edge_id: &str) -> bool {
        self.windows.contains_key(edge_id)
    }

    /// Whether `edge_id` has green at absolute time `t`. Edges the program does
    /// not govern are never held.
    pub fn is_green(&self, edge_id: &str, t: f64) -> bool {
        match self.windows.get(edge_id) {
            None => true,
            Some(list) => {
                let phase = (t + self.offset).rem_euclid(self.cycle);
                list.iter().any(|w| w.start <= phase && phase < w.end)
            }
        }
    }

    /// Red intervals of the cycle for `edge_id`, as lengths of the maximal
    /// cyclic red runs.
    pub fn red_runs(&self, edge_id: &str) -> Option<Vec<f64>> {
        let list = self.windows.get(edge_id)?;
        // Merge overlapping greens, then read the gaps cyclically.
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for w in list {
            match merged.last_mut() {
                Some(last) if w.start <= last.1 => last.1 = last.1.max(w.end),
                _ => merged.push((w.start, w.end)),
            }
        }
        let mut runs = Vec::new();
        for pair in merged.windows(2) {
            let gap = pair[1].0 - pair[0].1;
            if gap > 0.0 {
                runs.push(gap);
            }
        }
        let wrap = (self.cycle - merged.last().unwrap().1) + merged[0].0;
        if wrap > 0.0 {
            runs.push(wrap);
        }
        Some(runs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub signalized: bool,
    pub signal: Option<SignalProgram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: JunctionIx,
    pub to: JunctionIx,
    pub length: f64,
    pub v_max: f64,
    pub lanes: u32,
}

impl Edge {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.v_max
    }
}

/// Unvalidated description of a network, the input to [`RoadNetwork::build`].
#[derive(Debug, Clone, Default)]
pub struct NetworkSpec {
    pub junctions: Vec<JunctionSpec>,
    pub edges: Vec<EdgeSpec>,
    pub signals: Vec<SignalSpec>,
}

#[derive(Debug, Clone)]
pub struct JunctionSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub signalized: bool,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub v_max: f64,
    pub lanes: u32,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct SignalSpec {
    pub junction: String,
    pub cycle: f64,
    pub offset: f64,
    pub windows: Vec<(String, GreenWindow)>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    junctions: Vec<Junction>,
    edges: Vec<Edge>,
    junction_lookup: HashMap<String, JunctionIx>,
    edge_lookup: HashMap<String, EdgeIx>,
    out_edges: Vec<Vec<EdgeIx>>,
    in_edges: Vec<Vec<EdgeIx>>,
    successors: Vec<Vec<EdgeIx>>,
    u_turns: bool,
}

impl RoadNetwork {
    pub fn build(spec: NetworkSpec) -> Result<Self, NetworkError> {
        let mut jspecs = spec.junctions;
        jspecs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in jspecs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(NetworkError::Duplicate {
                    kind: "junction",
                    id: pair[0].id.clone(),
                });
            }
        }
        let mut junctions = Vec::with_capacity(jspecs.len());
        let mut junction_lookup = HashMap::new();
        for (i, j) in jspecs.iter().enumerate() {
            if !(j.x.is_finite() && j.y.is_finite()) {
                return Err(NetworkError::NonFinitePosition(j.id.clone()));
            }
            junction_lookup.insert(j.id.clone(), JunctionIx(i));
            junctions.push(Junction {
                id: j.id.clone(),
                x: j.x,
                y: j.y,
                signalized: j.signalized,
                signal: None,
            });
        }

        let mut especs = spec.edges;
        especs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in especs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(NetworkError::Duplicate {
                    kind: "edge",
                    id: pair[0].id.clone(),
                });
            }
        }
        let mut edges = Vec::with_capacity(especs.len());
        let mut edge_lookup = HashMap::new();
        for (i, e) in especs.iter().enumerate() {
            let lookup = |id: &str| {
                junction_lookup
                    .get(id)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingJunction {
                        line: e.line,
                        id: id.to_string(),
                    })
            };
            let from = lookup(&e.from)?;
            let to = lookup(&e.to)?;
            if from == to {
                return Err(NetworkError::SelfLoop(e.id.clone()));
            }
            for (field, value) in [("length", e.length), ("v_max", e.v_max)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(NetworkError::NonPositive {
                        id: e.id.clone(),
                        field,
                        value,
                    });
                }
            }
            if e.lanes == 0 {
                return Err(NetworkError::NonPositive {
                    id: e.id.clone(),
                    field: "lanes",
                    value: 0.0,
                });
            }
            edge_lookup.insert(e.id.clone(), EdgeIx(i));
            edges.push(Edge {
                id: e.id.clone(),
                from,
                to,
                length: e.length,
                v_max: e.v_max,
                lanes: e.lanes,
            });
        }

        let mut out_edges = vec![Vec::new(); junctions.len()];
        let mut in_edges = vec![Vec::new(); junctions.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from.0].push(EdgeIx(i));
            in_edges[e.to.0].push(EdgeIx(i));
        }

        for s in spec.signals {
            let jx = *junction_lookup.get(&s.junction).ok_or_else(|| {
                NetworkError::DanglingJunction {
                    line: s.line,
                    id: s.junction.clone(),
                }
            })?;
            let mut windows: BTreeMap<String, Vec<GreenWindow>> = BTreeMap::new();
            for (edge_id, w) in s.windows {
                let ex = edge_lookup
                    .get(&edge_id)
                    .ok_or_else(|| NetworkError::DanglingEdge {
                        line: s.line,
                        id: edge_id.clone(),
                    })?;
                if edges[ex.0].to != jx {
                    return Err(NetworkError::Signal {
                        junction: s.junction.clone(),
                        reason: format!("edge {edge_id} does not enter this junction"),
                    });
                }
                windows.entry(edge_id).or_default().push(w);
            }
            let program = SignalProgram::new(s.cycle, s.offset, windows).map_err(|reason| {
                NetworkError::Signal {
                    junction: s.junction.clone(),
                    reason,
                }
            })?;
            let junction = &mut junctions[jx.0];
            if junction.signal.is_some() {
                return Err(NetworkError::Duplicate {
                    kind: "signal",
                    id: s.junction,
                });
            }
            junction.signal = Some(program);
        }

        for (jx, junction) in junctions.iter_mut().enumerate() {
            if !junction.signalized {
                if junction.signal.is_some() {
                    return Err(NetworkError::Signal {
                        junction: junction.id.clone(),
                        reason: "junction is not signalized".into(),
                    });
                }
                continue;
            }
            if junction.signal.is_none() {
                junction.signal = Some(default_program(
                    (junction.x, junction.y),
                    in_edges[jx].iter().map(|&e| {
                        let from = &jspecs[edges[e.0].from.0];
                        (edges[e.0].id.clone(), (from.x, from.y))
                    }),
                ));
            }
            let program = junction.signal.as_ref().unwrap();
            for e in &in_edges[jx] {
                if !program.governs(&edges[e.0].id) {
                    return Err(NetworkError::Signal {
                        junction: junction.id.clone(),
                        reason: format!("incoming edge {} has no green window", edges[e.0].id),
                    });
                }
            }
        }

        let mut net = RoadNetwork {
            junctions,
            edges,
            junction_lookup,
            edge_lookup,
            out_edges,
            in_edges,
            successors: Vec::new(),
            u_turns: false,
        };
        net.rebuild_successors();
        Ok(net)
    }

    /// Same network with u-turns at junctions allowed or forbidden.
    pub fn with_u_turns(mut self, allowed: bool) -> Self {
        self.u_turns = allowed;
        self.rebuild_successors();
        self
    }

    pub fn u_turns(&self) -> bool {
        self.u_turns
    }

    fn rebuild_successors(&mut self) {
        self.successors = self
            .edges
            .iter()
            .map(|e| {
                self.out_edges[e.to.0]
                    .iter()
                    .copied()
                    .filter(|&next| self.u_turns || self.edges[next.0].to != e.from)
                    .collect()
            })
            .collect();
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: EdgeIx) -> &Edge {
        &self.edges[e.0]
    }

    pub fn junction(&self, j: JunctionIx) -> &Junction {
        &self.junctions[j.0]
    }

    pub fn edge_ix(&self, id: &str) -> Result<EdgeIx, NetworkError> {
        self.edge_lookup
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownEdge(id.to_string()))
    }

    pub fn junction_ix(&self, id: &str) -> Result<JunctionIx, NetworkError> {
        self.junction_lookup
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownJunction(id.to_string()))
    }

    pub fn edge_ids<'a>(&'a self, path: &'a [EdgeIx]) -> impl Iterator<Item = &'a str> + 'a {
        path.iter().map(move |e| self.edges[e.0].id.as_str())
    }

    pub fn out_edges(&self, j: JunctionIx) -> &[EdgeIx] {
        &self.out_edges[j.0]
    }

    pub fn in_edges(&self, j: JunctionIx) -> &[EdgeIx] {
        &self.in_edges[j.0]
    }

    /// Edges reachable from `e` through its downstream junction.
    pub fn successors_of(&self, e: EdgeIx) -> &[EdgeIx] {
        &self.successors[e.0]
    }

    /// Successors by edge id.
    pub fn successors(&self, edge_id: &str) -> Result<Vec<&str>, NetworkError> {
        let e = self.edge_ix(edge_id)?;
        Ok(self.successors[e.0]
            .iter()
            .map(|s| self.edges[s.0].id.as_str())
            .collect())
    }

    pub fn reverse_of(&self, e: EdgeIx) -> Option<EdgeIx> {
        let edge = &self.edges[e.0];
        self.out_edges[edge.to.0]
            .iter()
            .copied()
            .find(|&r| self.edges[r.0].to == edge.from)
    }

    /// Signal program that holds traffic at the end of `e`, if any.
    pub fn signal_for(&self, e: EdgeIx) -> Option<&SignalProgram> {
        self.junctions[self.edges[e.0].to.0].signal.as_ref()
    }

    /// Whether the junction at the end of `e` is signalized.
    pub fn ends_at_signal(&self, e: EdgeIx) -> bool {
        self.junctions[self.edges[e.0].to.0].signalized
    }

    /// Dead-end junctions: the only way out is back along the edge that came in.
    pub fn is_boundary_junction(&self, j: JunctionIx) -> bool {
        let outs = &self.out_edges[j.0];
        let ins = &self.in_edges[j.0];
        outs.len() <= 1 && ins.len() <= 1
    }

    /// Edges leaving a boundary junction, i.e. entries into the network.
    pub fn entry_edges(&self) -> Vec<EdgeIx> {
        (0..self.edges.len())
            .map(EdgeIx)
            .filter(|&e| self.is_boundary_junction(self.edges[e.0].from))
            .collect()
    }

    /// Edges entering a boundary junction, i.e. exits from the network.
    pub fn exit_edges(&self) -> Vec<EdgeIx> {
        (0..self.edges.len())
            .map(EdgeIx)
            .filter(|&e| self.is_boundary_junction(self.edges[e.0].to))
            .collect()
    }

    pub fn free_flow_weights(&self) -> Vec<f64> {
        self.edges.iter().map(Edge::free_flow_time).collect()
    }

    pub fn path_length(&self, path: &[EdgeIx]) -> f64 {
        path.iter().map(|e| self.edges[e.0].length).sum()
    }

    /// Render in the `network v1` text format.
    pub fn serialize(&self) -> String {
        let mut out = String::from("network v1\n");
        for j in &self.junctions {
            let _ = writeln!(
                out,
                "junction {} {} {} {}",
                j.id,
                j.x,
                j.y,
                u8::from(j.signalized)
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "edge {} {} {} {} {} {}",
                e.id,
                self.junctions[e.from.0].id,
                self.junctions[e.to.0].id,
                e.length,
                e.v_max,
                e.lanes
            );
        }
        for j in &self.junctions {
            if let Some(p) = &j.signal {
                let _ = write!(out, "signal {} {}", j.id, p.cycle);
                for (edge, list) in &p.windows {
                    for w in list {
                        let _ = write!(out, " {}:{}-{}", edge, w.start, w.end);
                    }
                }
                if p.offset != 0.0 {
                    let _ = write!(out, " offset={}", p.offset);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Two-phase plan: edges arriving along the y axis get the N-S window, the
/// rest get the E-W window.
fn default_program(
    at: (f64, f64),
    incoming: impl Iterator<Item = (String, (f64, f64))>,
) -> SignalProgram {
    let mut windows = BTreeMap::new();
    for (edge, from) in incoming {
        let (dx, dy) = (at.0 - from.0, at.1 - from.1);
        let (start, end) = if dy.abs() >= dx.abs() {
            DEFAULT_NS_GREEN
        } else {
            DEFAULT_EW_GREEN
        };
        windows.insert(edge, vec![GreenWindow { start, end }]);
    }
    SignalProgram::new(DEFAULT_CYCLE_S, 0.0, windows).expect("default program is valid")
}

struct Cursor<'a> {
    line_no: usize,
    line: &'a str,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line_no: usize, line: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in line.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push((s, &line[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            tokens.push((s, &line[s..]));
        }
        Cursor {
            line_no,
            line,
            tokens,
            pos: 0,
        }
    }

    fn error(&self, byte: usize, message: impl Into<String>) -> NetworkError {
        NetworkError::Syntax {
            line: self.line_no,
            column: self.line[..byte].chars().count() + 1,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), NetworkError> {
        match self.tokens.get(self.pos) {
            Some(&t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.error(self.line.len(), format!("expected {what}"))),
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str, NetworkError> {
        self.next(what).map(|(_, t)| t)
    }

    fn number(&mut self, what: &str) -> Result<f64, NetworkError> {
        let (at, tok) = self.next(what)?;
        parse_f64(tok).ok_or_else(|| self.error(at, format!("{what}: invalid number \"{tok}\"")))
    }

    fn rest(&mut self) -> &[(usize, &'a str)] {
        let rest = &self.tokens[self.pos..];
        self.pos = self.tokens.len();
        rest
    }

    fn finish(&self) -> Result<(), NetworkError> {
        match self.tokens.get(self.pos) {
            Some(&(at, tok)) => Err(self.error(at, format!("unexpected token \"{tok}\""))),
            None => Ok(()),
        }
    }
}

fn parse_f64(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parse the `network v1` text format.
pub fn parse_network(text: &str) -> Result<RoadNetwork, NetworkError> {
    let mut spec = NetworkSpec::default();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut cur = Cursor::new(line_no, raw);
        let (at, keyword) = cur.next("keyword")?;
        if !seen_header {
            if keyword != "network" {
                return Err(cur.error(at, "file must start with \"network v1\""));
            }
            let (vat, version) = cur.next("version")?;
            if version != "v1" {
                return Err(cur.error(vat, format!("unsupported version \"{version}\"")));
            }
            cur.finish()?;
            seen_header = true;
            continue;
        }
        match keyword {
            "junction" => {
                let id = cur.word("junction id")?.to_string();
                let x = cur.number("x")?;
                let y = cur.number("y")?;
                let (sat, flag) = cur.next("signalized flag")?;
                let signalized = match flag {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(
                            cur.error(sat, format!("signalized must be 0 or 1, got \"{other}\""))
                        )
                    }
                };
                cur.finish()?;
                spec.junctions.push(JunctionSpec {
                    id,
                    x,
                    y,
                    signalized,
                    line: line_no,
                });
            }
            "edge" => {
                let id = cur.word("edge id")?.to_string();
                let from = cur.word("from junction")?.to_string();
                let to = cur.word("to junction")?.to_string();
                let length = cur.number("length")?;
                let v_max = cur.number("vmax")?;
                let (lat, lanes_tok) = cur.next("lanes")?;
                let lanes = lanes_tok.parse::<u32>().map_err(|_| {
                    cur.error(lat, format!("lanes: invalid integer \"{lanes_tok}\""))
                })?;
                cur.finish()?;
                spec.edges.push(EdgeSpec {
                    id,
                    from,
                    to,
                    length,
                    v_max,
                    lanes,
                    line: line_no,
                });
            }
            "signal" => {
                let junction = cur.word("junction id")?.to_string();
                let cycle = cur.number("cycle")?;
                let mut windows = Vec::new();
                let mut offset = 0.0;
                let rest: Vec<(usize, &str)> = cur.rest().to_vec();
                for (at, tok) in rest {
                    if let Some(v) = tok.strip_prefix("offset=") {
                        offset = parse_f64(v)
                            .ok_or_else(|| cur.error(at, format!("invalid offset \"{v}\"")))?;
                        continue;
                    }
                    // Edge ids may contain ':' so split on the last one.
                    let (edge, span) = tok.rsplit_once(':').ok_or_else(|| {
                        cur.error(at, format!("expected <edge>:<start>-<end>, got \"{tok}\""))
                    })?;
                    let (s, e) = span.split_once('-').ok_or_else(|| {
                        cur.error(at, format!("expected <start>-<end>, got \"{span}\""))
                    })?;
                    let start = parse_f64(s)
                        .ok_or_else(|| cur.error(at, format!("invalid green start \"{s}\"")))?;
                    let end = parse_f64(e)
                        .ok_or_else(|| cur.error(at, format!("invalid green end \"{e}\"")))?;
                    windows.push((edge.to_string(), GreenWindow { start, end }));
                }
                if windows.is_empty() {
                    return Err(cur.error(raw.len(), "signal line needs at least one window"));
                }
                spec.signals.push(SignalSpec {
                    junction,
                    cycle,
                    offset,
                    windows,
                    line: line_no,
                });
            }
            other => return Err(cur.error(at, format!("unknown keyword \"{other}\""))),
        }
    }
    if !seen_header {
        return Err(NetworkError::Syntax {
            line: 1,
            column: 1,
            message: "missing \"network v1\" header".into(),
        });
    }
    RoadNetwork::build(spec)
}

/// Spreadsheet-style column letters: 0 -> A, 25 -> Z, 26 -> AA.
pub fn column_name(mut col: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (col % 26) as u8);
        if col < 26 {
            break;
        }
        col = col / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

/// Grid junction name, e.g. `B3` for column 1, row 3.
pub fn grid_junction_name(col: usize, row: usize) -> String {
    format!("{}{}", column_name(col), row)
}

#[derive(Debug, Clone, Copy)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub horizontal_m: f64,
    pub vertical_m: f64,
    pub v_max: f64,
    pub lanes: u32,
}

/// Signalized grid with one dead-end stub per boundary row/column on each side.
///
/// Rows count upward from 0, columns run A, B, C, ... left to right. Stub
/// junctions are `top<c>`, `bottom<c>`, `left<r>`, `right<r>`, so the edge from
/// the stub above column B of a 4-row grid is `top1B3`.
pub fn generate_grid(layout: GridLayout) -> Result<RoadNetwork, NetworkError> {
    let GridLayout {
        rows,
        cols,
        horizontal_m: h,
        vertical_m: v,
        v_max,
        lanes,
    } = layout;
    if rows < 2 || cols < 2 {
        return Err(NetworkError::Dimension { rows, cols });
    }
    let mut spec = NetworkSpec::default();
    let mut add_junction = |id: String, x: f64, y: f64, signalized: bool| {
        spec.junctions.push(JunctionSpec {
            id,
            x,
            y,
            signalized,
            line: 0,
        });
    };
    for c in 0..cols {
        for r in 0..rows {
            add_junction(grid_junction_name(c, r), c as f64 * h, r as f64 * v, true);
        }
    }
    let top = (rows - 1) as f64 * v;
    let right = (cols - 1) as f64 * h;
    for c in 0..cols {
        add_junction(format!("top{c}"), c as f64 * h, top + v, false);
        add_junction(format!("bottom{c}"), c as f64 * h, -v, false);
    }
    for r in 0..rows {
        add_junction(format!("left{r}"), -h, r as f64 * v, false);
        add_junction(format!("right{r}"), right + h, r as f64 * v, false);
    }

    let mut add_street = |a: String, b: String, length: f64| {
        for (from, to) in [(&a, &b), (&b, &a)] {
            spec.edges.push(EdgeSpec {
                id: format!("{from}{to}"),
                from: from.clone(),
                to: to.clone(),
                length,
                v_max,
                lanes,
                line: 0,
            });
        }
    };
    for c in 0..cols {
        for r in 0..rows {
            let here = grid_junction_name(c, r);
            if c + 1 < cols {
                add_street(here.clone(), grid_junction_name(c + 1, r), h);
            }
            if r + 1 < rows {
                add_street(here.clone(), grid_junction_name(c, r + 1), v);
            }
        }
    }
    for c in 0..cols {
        add_street(format!("top{c}"), grid_junction_name(c, rows - 1), v);
        add_street(format!("bottom{c}"), grid_junction_name(c, 0), v);
    }
    for r in 0..rows {
        add_street(format!("left{r}"), grid_junction_name(0, r), h);
        add_street(format!("right{r}"), grid_junction_name(cols - 1, r), h);
    }
    RoadNetwork::build(spec)
}

/// Manhattan-style grid: 300 m horizontal blocks, 200 m vertical blocks,
/// two lanes per direction.
pub fn generate_manhattan(rows: usize, cols: usize) -> Result<RoadNetwork, NetworkError> {
    generate_grid(GridLayout {
        rows,
        cols,
        horizontal_m: MANHATTAN_HORIZONTAL_M,
        vertical_m: MANHATTAN_VERTICAL_M,
        v_max: DEFAULT_VMAX_MPS,
        lanes: 2,
    })
}

/// 16 signalized intersections, every segment 300 m.
pub fn generate_grid4x4() -> RoadNetwork {
    generate_grid(GridLayout {
        rows: 4,
        cols: 4,
        horizontal_m: GRID4X4_BLOCK_M,
        vertical_m: GRID4X4_BLOCK_M,
        v_max: DEFAULT_VMAX_MPS,
        lanes: 2,
    })
    .expect("4x4 layout is valid")
}
