//! Radial feeder data model and the exact DistFlow power-flow oracle.
//!
//! Bus 0 is the substation (slack). Non-slack buses are numbered `1..=N` and
//! every per-bus vector in this crate is indexed by `bus - 1`. All powers are
//! per-unit, consumption-positive net loads (`p = p^c - p^g`, `q = q^c - q^g`).

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Per-unit base power of the embedded test feeder, in kVA.
pub const IEEE33_BASE_KVA: f64 = 1000.0;
/// Nominal line-to-line voltage of the embedded test feeder, in kV.
pub const IEEE33_BASE_KV: f64 = 12.66;

/// Default reactive bounds applied to every DER bus, injection-positive:
/// up to 0.6 pu supplied and 0.1 pu absorbed, so the net reactive load of a
/// DER bus ranges over `[q_c - 0.6, q_c + 0.1]`.
pub const DEFAULT_QG_MIN: f64 = -0.1;
pub const DEFAULT_QG_MAX: f64 = 0.6;

/// Sweep tolerance on squared voltages.
pub const DISTFLOW_TOL: f64 = 1e-10;
/// Maximum number of backward/forward sweeps.
pub const DISTFLOW_MAX_SWEEPS: usize = 200;

// Published 33-bus line and load table: (from, to, r ohm, x ohm, p kW, q kVAr)
// with the load belonging to the receiving bus. Bus 1 of the published data
// is the substation.
const IEEE33_TABLE: [(usize, usize, f64, f64, f64, f64); 32] = [
    (1, 2, 0.0922, 0.0470, 100.0, 60.0),
    (2, 3, 0.4930, 0.2511, 90.0, 40.0),
    (3, 4, 0.3660, 0.1864, 120.0, 80.0),
    (4, 5, 0.3811, 0.1941, 60.0, 30.0),
    (5, 6, 0.8190, 0.7070, 60.0, 20.0),
    (6, 7, 0.1872, 0.6188, 200.0, 100.0),
    (7, 8, 0.7114, 0.2351, 200.0, 100.0),
    (8, 9, 1.0300, 0.7400, 60.0, 20.0),
    (9, 10, 1.0440, 0.7400, 60.0, 20.0),
    (10, 11, 0.1966, 0.0650, 45.0, 30.0),
    (11, 12, 0.3744, 0.1238, 60.0, 35.0),
    (12, 13, 1.4680, 1.1550, 60.0, 35.0),
    (13, 14, 0.5416, 0.7129, 120.0, 80.0),
    (14, 15, 0.5910, 0.5260, 60.0, 10.0),
    (15, 16, 0.7463, 0.5450, 60.0, 20.0),
    (16, 17, 1.2890, 1.7210, 60.0, 20.0),
    (17, 18, 0.7320, 0.5740, 90.0, 40.0),
    (2, 19, 0.1640, 0.1565, 90.0, 40.0),
    (19, 20, 1.5042, 1.3554, 90.0, 40.0),
    (20, 21, 0.4095, 0.4784, 90.0, 40.0),
    (21, 22, 0.7089, 0.9373, 90.0, 40.0),
    (3, 23, 0.4512, 0.3083, 90.0, 50.0),
    (23, 24, 0.8980, 0.7091, 420.0, 200.0),
    (24, 25, 0.8960, 0.7011, 420.0, 200.0),
    (6, 26, 0.2030, 0.1034, 60.0, 25.0),
    (26, 27, 0.2842, 0.1447, 60.0, 25.0),
    (27, 28, 1.0590, 0.9337, 60.0, 20.0),
    (28, 29, 0.8042, 0.7006, 120.0, 70.0),
    (29, 30, 0.5075, 0.2585, 200.0, 600.0),
    (30, 31, 0.9744, 0.9630, 150.0, 70.0),
    (31, 32, 0.3105, 0.3619, 210.0, 100.0),
    (32, 33, 0.3410, 0.5302, 60.0, 40.0),
];

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("distflow sweep did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NonConvergence { sweeps: usize, last_change: f64 },
    #[error("voltage collapse at bus {bus} (squared voltage {squared_voltage})")]
    VoltageCollapse { bus: usize, squared_voltage: f64 },
    #[error("feeder is not radial: {0}")]
    NotRadial(TopologyReport),
    #[error("expected {expected} per-bus entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feeder file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series resistance, per-unit.
    pub r: f64,
    /// Series reactance, per-unit.
    pub x: f64,
}

/// Radial distribution feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    /// Number of non-slack buses `N`.
    pub n_buses: usize,
    pub slack_voltage: f64,
    pub lines: Vec<LineSegment>,
    /// Buses hosting an inverter, sorted ascending, each in `1..=N`.
    pub der_nodes: Vec<usize>,
    /// Per-DER reactive bounds, aligned with `der_nodes`.
    pub qg_min: Vec<f64>,
    pub qg_max: Vec<f64>,
    /// Nominal active demand per non-slack bus (index `bus - 1`).
    pub nominal_p: Vec<f64>,
    /// Nominal reactive demand per non-slack bus (index `bus - 1`).
    pub nominal_q: Vec<f64>,
}

/// One operating condition: demand and active generation per bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub p_c: Vec<f64>,
    pub p_g: Vec<f64>,
    pub q_c: Vec<f64>,
}

impl Scenario {
    pub fn nominal(model: &FeederModel) -> Self {
        Self {
            p_c: model.nominal_p.clone(),
            p_g: vec![0.0; model.n_buses],
            q_c: model.nominal_q.clone(),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.p_c.len()
    }

    /// Net active load `p^c - p^g`.
    pub fn net_p(&self) -> Vec<f64> {
        self.p_c.iter().zip(&self.p_g).map(|(c, g)| c - g).collect()
    }

    /// Net reactive load given per-bus reactive generation.
    pub fn net_q_with(&self, q_g: &[f64]) -> Vec<f64> {
        self.q_c.iter().zip(q_g).map(|(c, g)| c - g).collect()
    }
}

/// Voltage magnitudes at the non-slack buses, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    pub v: Vec<f64>,
}

impl VoltageProfile {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn max_abs_deviation(&self) -> f64 {
        self.v.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyViolation {
    /// Line closes a loop (including exact duplicates of an earlier line).
    Cycle { line: usize },
    Disconnected { bus: usize },
    DuplicateParent { bus: usize, lines: Vec<usize> },
    SelfLoop { line: usize },
    BusOutOfRange { line: usize, bus: usize },
    NegativeImpedance { line: usize },
    WrongLineCount { expected: usize, got: usize },
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cycle { line } => write!(f, "line {line} closes a cycle"),
            Self::Disconnected { bus } => write!(f, "bus {bus} is not connected to the slack"),
            Self::DuplicateParent { bus, lines } => {
                write!(f, "bus {bus} is the receiving end of lines {lines:?}")
            }
            Self::SelfLoop { line } => write!(f, "line {line} connects a bus to itself"),
            Self::BusOutOfRange { line, bus } => write!(f, "line {line} references bus {bus}"),
            Self::NegativeImpedance { line } => write!(f, "line {line} has negative r or x"),
            Self::WrongLineCount { expected, got } => {
                write!(f, "expected {expected} lines for a spanning tree, got {got}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyReport {
    pub violations: Vec<TopologyViolation>,
}

impl fmt::Display for TopologyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl TopologyReport {
    pub fn has_cycle(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::Cycle { .. }))
    }

    pub fn has_disconnected(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::Disconnected { .. }))
    }
}

/// Tree orientation of a validated feeder, rooted at the slack.
#[derive(Debug, Clone)]
pub struct RadialTopology {
    /// Parent bus of every bus; `None` for the slack.
    pub parent: Vec<Option<usize>>,
    /// Index into `FeederModel::lines` of the line feeding each bus.
    pub parent_line: Vec<Option<usize>>,
    /// Buses in breadth-first order from the slack (slack first).
    pub order: Vec<usize>,
}

/// Checks that the lines form a spanning tree over `0..=N` rooted at bus 0.
///
/// Never panics; every problem found is listed in the report.
pub fn validate_radial(model: &FeederModel) -> Result<RadialTopology, TopologyReport> {
    let n = model.n_buses;
    let mut violations = Vec::new();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
    let mut receiving: Vec<Vec<usize>> = vec![Vec::new(); n + 1];

    for (idx, line) in model.lines.iter().enumerate() {
        let mut ok = true;
        for bus in [line.from_bus, line.to_bus] {
            if bus > n {
                violations.push(TopologyViolation::BusOutOfRange { line: idx, bus });
                ok = false;
            }
        }
        if line.from_bus == line.to_bus {
            violations.push(TopologyViolation::SelfLoop { line: idx });
            ok = false;
        }
        if !(line.r >= 0.0 && line.x >= 0.0) {
            violations.push(TopologyViolation::NegativeImpedance { line: idx });
        }
        if ok {
            adjacency[line.from_bus].push((line.to_bus, idx));
            adjacency[line.to_bus].push((line.from_bus, idx));
            receiving[line.to_bus].push(idx);
        }
    }
    for (bus, lines) in receiving.iter().enumerate() {
        if lines.len() > 1 {
            violations.push(TopologyViolation::DuplicateParent {
                bus,
                lines: lines.clone(),
            });
        }
    }

    let mut parent = vec![None; n + 1];
    let mut parent_line = vec![None; n + 1];
    let mut visited = vec![false; n + 1];
    let mut used_line = vec![false; model.lines.len()];
    let mut order = Vec::with_capacity(n + 1);
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(bus) = queue.pop_front() {
        order.push(bus);
        for &(next, idx) in &adjacency[bus] {
            if used_line[idx] {
                continue;
            }
            used_line[idx] = true;
            if visited[next] {
                violations.push(TopologyViolation::Cycle { line: idx });
                continue;
            }
            visited[next] = true;
            parent[next] = Some(bus);
            parent_line[next] = Some(idx);
            queue.push_back(next);
        }
    }
    for (bus, seen) in visited.iter().enumerate() {
        if !seen {
            violations.push(TopologyViolation::Disconnected { bus });
        }
    }
    if violations.is_empty() && model.lines.len() != n {
        violations.push(TopologyViolation::WrongLineCount {
            expected: n,
            got: model.lines.len(),
        });
    }

    if violations.is_empty() {
        Ok(RadialTopology {
            parent,
            parent_line,
            order,
        })
    } else {
        Err(TopologyReport { violations })
    }
}

/// For every non-slack bus (index `bus - 1`), the indices of the lines on
/// its path from the slack, ordered from the slack outward.
pub fn downstream_path_sets(model: &FeederModel) -> Result<Vec<Vec<usize>>, FeederError> {
    let topo = validate_radial(model).map_err(FeederError::NotRadial)?;
    let mut paths: Vec<Vec<usize>> = vec![Vec::new(); model.n_buses + 1];
    for &bus in topo.order.iter().skip(1) {
        let parent = topo.parent[bus].expect("non-slack bus has a parent");
        let mut path = paths[parent].clone();
        path.push(topo.parent_line[bus].expect("non-slack bus has a line"));
        paths[bus] = path;
    }
    paths.remove(0);
    Ok(paths)
}

/// Full DistFlow state at convergence.
#[derive(Debug, Clone)]
pub struct DistFlowState {
    /// Squared voltage per bus `0..=N` (slack included).
    pub squared_voltage: Vec<f64>,
    /// Sending-end active flow into each bus from its parent (index by bus).
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Squared current magnitude on the line feeding each bus.
    pub current_sq: Vec<f64>,
    pub sweeps: usize,
}

impl DistFlowState {
    pub fn profile(&self) -> VoltageProfile {
        VoltageProfile {
            v: self.squared_voltage[1..].iter().map(|u| u.sqrt()).collect(),
        }
    }
}

/// Backward/forward sweep solver bound to one feeder.
#[derive(Debug, Clone)]
pub struct DistFlowSolver<'a> {
    model: &'a FeederModel,
    topo: RadialTopology,
    children: Vec<Vec<usize>>,
}

impl<'a> DistFlowSolver<'a> {
    pub fn new(model: &'a FeederModel) -> Result<Self, FeederError> {
        let topo = validate_radial(model).map_err(FeederError::NotRadial)?;
        let mut children = vec![Vec::new(); model.n_buses + 1];
        for &bus in topo.order.iter().skip(1) {
            children[topo.parent[bus].unwrap()].push(bus);
        }
        Ok(Self {
            model,
            topo,
            children,
        })
    }

    pub fn model(&self) -> &FeederModel {
        self.model
    }

    pub fn solve(&self, net_p: &[f64], net_q: &[f64]) -> Result<VoltageProfile, FeederError> {
        self.solve_state(net_p, net_q).map(|s| s.profile())
    }

    pub fn solve_state(&self, net_p: &[f64], net_q: &[f64]) -> Result<DistFlowState, FeederError> {
        let n = self.model.n_buses;
        for len in [net_p.len(), net_q.len()] {
            if len != n {
                return Err(FeederError::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let v0sq = self.model.slack_voltage * self.model.slack_voltage;
        let mut u = vec![v0sq; n + 1];
        let mut ell = vec![0.0; n + 1];
        let mut pf = vec![0.0; n + 1];
        let mut qf = vec![0.0; n + 1];
        let mut last_change = f64::INFINITY;

        for sweep in 1..=DISTFLOW_MAX_SWEEPS {
            // backward: accumulate branch flows from the leaves
            for &bus in self.topo.order.iter().rev() {
                if bus == 0 {
                    continue;
                }
                let line = &self.model.lines[self.topo.parent_line[bus].unwrap()];
                let mut p = net_p[bus - 1];
                let mut q = net_q[bus - 1];
                for &child in &self.children[bus] {
                    p += pf[child];
                    q += qf[child];
                }
                pf[bus] = p + line.r * ell[bus];
                qf[bus] = q + line.x * ell[bus];
            }
            // forward: squared voltage drop along each line
            last_change = 0.0;
            for &bus in self.topo.order.iter().skip(1) {
                let parent = self.topo.parent[bus].unwrap();
                let line = &self.model.lines[self.topo.parent_line[bus].unwrap()];
                let z2 = line.r * line.r + line.x * line.x;
                let next = u[parent] - 2.0 * (line.r * pf[bus] + line.x * qf[bus]) + z2 * ell[bus];
                if !(next > 0.0) {
                    return Err(FeederError::VoltageCollapse {
                        bus,
                        squared_voltage: next,
                    });
                }
                last_change = last_change.max((next - u[bus]).abs());
                u[bus] = next;
            }
            for &bus in self.topo.order.iter().skip(1) {
                let parent = self.topo.parent[bus].unwrap();
                ell[bus] = (pf[bus] * pf[bus] + qf[bus] * qf[bus]) / u[parent];
            }
            if last_change <= DISTFLOW_TOL && sweep > 1 {
                let state = DistFlowState {
                    squared_voltage: u,
                    p_flow: pf,
                    q_flow: qf,
                    current_sq: ell,
                    sweeps: sweep,
                };
                if self.residual(net_p, net_q, &state) <= DISTFLOW_TOL {
                    return Ok(state);
                }
                DistFlowState {
                    squared_voltage: u,
                    p_flow: pf,
                    q_flow: qf,
                    current_sq: ell,
                    ..
                } = state;
            }
        }
        Err(FeederError::NonConvergence {
            sweeps: DISTFLOW_MAX_SWEEPS,
            last_change,
        })
    }

    /// Largest residual of the DistFlow branch equations at `state`, taking
    /// the squared current from the sending-end flows and voltages.
    pub fn residual(&self, net_p: &[f64], net_q: &[f64], state: &DistFlowState) -> f64 {
        let u = &state.squared_voltage;
        let mut worst: f64 = (u[0] - self.model.slack_voltage.powi(2)).abs();
        for &bus in self.topo.order.iter().skip(1) {
            let parent = self.topo.parent[bus].unwrap();
            let line = &self.model.lines[self.topo.parent_line[bus].unwrap()];
            let ell = (state.p_flow[bus].powi(2) + state.q_flow[bus].powi(2)) / u[parent];
            let mut p = net_p[bus - 1] + line.r * ell;
            let mut q = net_q[bus - 1] + line.x * ell;
            for &child in &self.children[bus] {
                p += state.p_flow[child];
                q += state.q_flow[child];
            }
            let z2 = line.r * line.r + line.x * line.x;
            let drop = u[parent]
                - 2.0 * (line.r * state.p_flow[bus] + line.x * state.q_flow[bus])
                + z2 * ell;
            worst = worst
                .max((state.p_flow[bus] - p).abs())
                .max((state.q_flow[bus] - q).abs())
                .max((u[bus] - drop).abs());
        }
        worst
    }
}

/// Solves single-phase DistFlow with losses by backward/forward sweep.
pub fn solve_distflow(
    model: &FeederModel,
    net_p: &[f64],
    net_q: &[f64],
) -> Result<VoltageProfile, FeederError> {
    DistFlowSolver::new(model)?.solve(net_p, net_q)
}

/// The standard 33-bus radial test feeder on a 1 MVA / 12.66 kV base.
pub fn build_ieee33() -> FeederModel {
    let z_base = IEEE33_BASE_KV * IEEE33_BASE_KV * 1000.0 / IEEE33_BASE_KVA;
    let n = IEEE33_TABLE.len();
    let mut lines = Vec::with_capacity(n);
    let mut nominal_p = vec![0.0; n];
    let mut nominal_q = vec![0.0; n];
    for &(from, to, r, x, p, q) in &IEEE33_TABLE {
        lines.push(LineSegment {
            from_bus: from - 1,
            to_bus: to - 1,
            r: r / z_base,
            x: x / z_base,
        });
        nominal_p[to - 2] = p / IEEE33_BASE_KVA;
        nominal_q[to - 2] = q / IEEE33_BASE_KVA;
    }
    FeederModel::from_parts(n, 1.0, lines, nominal_p, nominal_q)
}

impl FeederModel {
    /// Assembles a feeder with the default DER configuration: every load bus
    /// hosts an inverter with bounds `[DEFAULT_QG_MIN, DEFAULT_QG_MAX]`.
    pub fn from_parts(
        n_buses: usize,
        slack_voltage: f64,
        lines: Vec<LineSegment>,
        nominal_p: Vec<f64>,
        nominal_q: Vec<f64>,
    ) -> Self {
        Self {
            n_buses,
            slack_voltage,
            lines,
            der_nodes: (1..=n_buses).collect(),
            qg_min: vec![DEFAULT_QG_MIN; n_buses],
            qg_max: vec![DEFAULT_QG_MAX; n_buses],
            nominal_p,
            nominal_q,
        }
    }

    /// Replaces the DER set with uniform reactive bounds.
    pub fn with_ders(mut self, der_nodes: Vec<usize>, qg_min: f64, qg_max: f64) -> Self {
        let mut der_nodes = der_nodes;
        der_nodes.sort_unstable();
        der_nodes.dedup();
        self.qg_min = vec![qg_min; der_nodes.len()];
        self.qg_max = vec![qg_max; der_nodes.len()];
        self.der_nodes = der_nodes;
        self
    }

    /// Per-DER symmetric capability `q̂`: the largest magnitude the rule may
    /// output while staying inside both reactive bounds.
    pub fn q_capability(&self) -> Vec<f64> {
        self.qg_min
            .iter()
            .zip(&self.qg_max)
            .map(|(lo, hi)| hi.min(-lo).max(0.0))
            .collect()
    }

    /// Spreads per-DER values onto a length-N per-bus vector (zero elsewhere).
    pub fn scatter_der(&self, per_der: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses];
        for (&bus, &val) in self.der_nodes.iter().zip(per_der) {
            out[bus - 1] = val;
        }
        out
    }

    /// Serializes in the plain-text feeder format.
    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "# from to r_pu x_pu p_c q_c\nbuses={} v0={:?}\n",
            self.n_buses, self.slack_voltage
        );
        for line in &self.lines {
            let (p, q) = if line.to_bus >= 1 && line.to_bus <= self.n_buses {
                (
                    self.nominal_p[line.to_bus - 1],
                    self.nominal_q[line.to_bus - 1],
                )
            } else {
                (0.0, 0.0)
            };
            out.push_str(&format!(
                "{} {} {:.16e} {:.16e} {:.16e} {:.16e}\n",
                line.from_bus, line.to_bus, line.r, line.x, p, q
            ));
        }
        out
    }

    /// Parses the plain-text feeder format. The DER set takes defaults.
    pub fn parse(text: &str) -> Result<Self, FeederError> {
        let mut header: Option<(usize, f64)> = None;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parse_err = |message: String| FeederError::Parse {
                line: lineno,
                message,
            };
            if header.is_none() {
                let mut buses = None;
                let mut v0 = None;
                for token in content.split_whitespace() {
                    match token.split_once('=') {
                        Some(("buses", val)) => {
                            buses = Some(val.parse::<usize>().map_err(|e| parse_err(e.to_string()))?)
                        }
                        Some(("v0", val)) => {
                            v0 = Some(val.parse::<f64>().map_err(|e| parse_err(e.to_string()))?)
                        }
                        _ => return Err(parse_err(format!("unexpected header token `{token}`"))),
                    }
                }
                match (buses, v0) {
                    (Some(b), Some(v)) => header = Some((b, v)),
                    _ => return Err(parse_err("header must be `buses=<N> v0=<v0>`".into())),
                }
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
            }
            let from = fields[0].parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
            let to = fields[1].parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
            let mut nums = [0.0; 4];
            for (slot, field) in nums.iter_mut().zip(&fields[2..]) {
                *slot = field.parse::<f64>().map_err(|e| parse_err(e.to_string()))?;
            }
            rows.push((lineno, from, to, nums));
        }
        let (n, v0) = header.ok_or(FeederError::Parse {
            line: 0,
            message: "missing header".into(),
        })?;
        let mut lines = Vec::with_capacity(rows.len());
        let mut nominal_p = vec![0.0; n];
        let mut nominal_q = vec![0.0; n];
        for (lineno, from, to, [r, x, p, q]) in rows {
            if to == 0 || to > n {
                return Err(FeederError::Parse {
                    line: lineno,
                    message: format!("receiving bus {to} outside 1..={n}"),
                });
            }
            lines.push(LineSegment {
                from_bus: from,
                to_bus: to,
                r,
                x,
            });
            nominal_p[to - 1] = p;
            nominal_q[to - 1] = q;
        }
        Ok(Self::from_parts(n, v0, lines, nominal_p, nominal_q))
    }

    pub fn load(path: &Path) -> Result<Self, FeederError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Content hash of the serialized feeder plus its DER configuration.
    pub fn identity_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_file_string().as_bytes());
        for ((bus, lo), hi) in self.der_nodes.iter().zip(&self.qg_min).zip(&self.qg_max) {
            hasher.update(format!("der {bus} {lo:?} {hi:?}\n").as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}
