//! Reactive setpoint optimization over a voltage surrogate.
//!
//! The problem minimizes `Σ |v_i - 1|` over DER setpoints `q_g` inside their
//! bounds, with `v` given by an affine model (pure LP) or by the relu network
//! (one binary per hidden unit, big-M encoded). Variables are laid out as
//! `[q_g | a | z | δ | t]` where the relu blocks are empty for affine models.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::feeder::{FeederError, FeederModel, Scenario, VoltageProfile};
use crate::linear::{LinDistFlowModel, LsModel};
use crate::lp::{solve_lp, LpError, LpOutcome, LpProblem, RowSense};
use crate::neural::NeuralPfModel;
use crate::report::{compute_stats, DeviationStats, ReportError};
use crate::VoltagePredictor;

/// Slack added on both sides of every pre-activation interval.
pub const BOUND_SLACK: f64 = 1e-6;
/// Distance from 0 or 1 below which an indicator counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-7;
pub const MAX_BRUTE_FORCE_UNITS: usize = 16;

#[derive(Debug, Error)]
pub enum VvoError {
    #[error("surrogate has {found} outputs, feeder has {expected} buses")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("surrogate is not trained: {0}")]
    UntrainedSurrogate(String),
    #[error("relaxation is infeasible")]
    Infeasible,
    #[error("relaxation is unbounded")]
    Unbounded,
    #[error("{units} relu units exceed the enumeration limit of {MAX_BRUTE_FORCE_UNITS}")]
    TooLarge { units: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, Copy)]
pub enum Surrogate<'a> {
    Neural(&'a NeuralPfModel),
    LinDistFlow(&'a LinDistFlowModel),
    LeastSquares(&'a LsModel),
}

impl Surrogate<'_> {
    pub fn predictor(&self) -> &dyn VoltagePredictor {
        match *self {
            Surrogate::Neural(m) => m,
            Surrogate::LinDistFlow(m) => m,
            Surrogate::LeastSquares(m) => m,
        }
    }

    fn n_outputs(&self) -> usize {
        match self {
            Surrogate::Neural(m) => m.n_outputs(),
            Surrogate::LinDistFlow(m) => m.n_buses(),
            Surrogate::LeastSquares(m) => m.intercept.len(),
        }
    }
}

/// Big-M data for the hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluEncoding {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub a_index: Vec<usize>,
    pub z_index: Vec<usize>,
    pub delta_index: Vec<usize>,
}

impl ReluEncoding {
    pub fn units(&self) -> usize {
        self.lower.len()
    }
}

/// Sound interval bounds on every hidden pre-activation for raw inputs in
/// `[input_lo, input_hi]`, widened to contain 0 and padded by [`BOUND_SLACK`].
pub fn compute_preactivation_bounds(
    nn: &NeuralPfModel,
    input_lo: &[f64],
    input_hi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = raw_preactivation_bounds(nn, input_lo, input_hi);
    let lower = lo.iter().map(|l| l.min(0.0) - BOUND_SLACK).collect();
    let upper = hi.iter().map(|u| u.max(0.0) + BOUND_SLACK).collect();
    (lower, upper)
}

/// Interval arithmetic through the scaler and first layer, no widening.
pub fn raw_preactivation_bounds(nn: &NeuralPfModel, input_lo: &[f64], input_hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = &nn.in_scaler;
    let (slo, shi): (Vec<f64>, Vec<f64>) = (0..nn.n_inputs())
        .map(|j| {
            let a = s.scale_one(j, input_lo[j]);
            let b = s.scale_one(j, input_hi[j]);
            (a.min(b), a.max(b))
        })
        .unzip();
    let mut lower = Vec::with_capacity(nn.hidden());
    let mut upper = Vec::with_capacity(nn.hidden());
    for k in 0..nn.hidden() {
        let (mut l, mut u) = (nn.b[k], nn.b[k]);
        for j in 0..nn.n_inputs() {
            let w = nn.w1[(k, j)];
            if w >= 0.0 {
                l += w * slo[j];
                u += w * shi[j];
            } else {
                l += w * shi[j];
                u += w * slo[j];
            }
        }
        lower.push(l);
        upper.push(u);
    }
    (lower, upper)
}

/// Adds `z = relu(a)` rows for unit `k`:
/// `a - z ≤ 0`, `z - a - Lδ ≤ -L`, `z - Uδ ≤ 0`, with `z ≥ 0` and `δ ∈ [0, 1]`
/// carried by the variable bounds.
pub fn encode_relu_bigm(lp: &mut LpProblem, enc: &ReluEncoding, k: usize) {
    let (a, z, d) = (enc.a_index[k], enc.z_index[k], enc.delta_index[k]);
    let (l, u) = (enc.lower[k], enc.upper[k]);
    lp.lower[a] = l;
    lp.upper[a] = u;
    lp.lower[z] = 0.0;
    lp.upper[z] = u.max(0.0);
    lp.lower[d] = 0.0;
    lp.upper[d] = 1.0;
    lp.add_row(&[(a, 1.0), (z, -1.0)], RowSense::Le, 0.0);
    lp.add_row(&[(z, 1.0), (a, -1.0), (d, -l)], RowSense::Le, -l);
    lp.add_row(&[(z, 1.0), (d, -u)], RowSense::Le, 0.0);
}

/// An assembled optimization for one scenario.
#[derive(Debug, Clone)]
pub struct VvoProblem<'a> {
    pub surrogate: Surrogate<'a>,
    pub scenario: Scenario,
    pub der_nodes: Vec<usize>,
    pub lp: LpProblem,
    pub encoding: Option<ReluEncoding>,
    pub t_index: Vec<usize>,
}

impl VvoProblem<'_> {
    pub fn n_der(&self) -> usize {
        self.der_nodes.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.encoding.as_ref().map_or(0, |e| e.units())
    }

    fn scatter(&self, q_g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.scenario.n_buses()];
        for (&bus, &q) in self.der_nodes.iter().zip(q_g) {
            out[bus - 1] = q;
        }
        out
    }

    /// Surrogate voltages at setpoints `q_g`.
    pub fn predict(&self, q_g: &[f64]) -> VoltageProfile {
        let q_net = self.scenario.net_q_with(&self.scatter(q_g));
        self.surrogate.predictor().predict(&self.scenario.net_p(), &q_net)
    }

    /// Exact objective `Σ |v_i - 1|` of the surrogate at `q_g`.
    pub fn objective_at(&self, q_g: &[f64]) -> f64 {
        self.predict(q_g).v.iter().map(|v| (v - 1.0).abs()).sum()
    }
}

/// Builds the LP/MILP for `scenario`.
pub fn assemble_vvo<'a>(
    surrogate: Surrogate<'a>,
    model: &FeederModel,
    scenario: &Scenario,
) -> Result<VvoProblem<'a>, VvoError> {
    let n = model.n_buses;
    if surrogate.n_outputs() != n {
        return Err(VvoError::DimensionMismatch {
            expected: n,
            found: surrogate.n_outputs(),
        });
    }
    let d = model.der_nodes.len();
    let net_p = scenario.net_p();
    let base_q = scenario.q_c.clone();

    // Affine part: v = c + G q_g (affine models) or the hidden pre-activation
    // a = c + G q_g (network).
    let (lp, encoding, t_index) = match surrogate {
        Surrogate::Neural(nn) => {
            if !nn.is_finite() {
                return Err(VvoError::UntrainedSurrogate("non-finite weights".into()));
            }
            let k_units = nn.hidden();
            let n_vars = d + 3 * k_units + n;
            let mut lp = LpProblem::new(n_vars);
            let enc = ReluEncoding {
                lower: Vec::new(),
                upper: Vec::new(),
                a_index: (d..d + k_units).collect(),
                z_index: (d + k_units..d + 2 * k_units).collect(),
                delta_index: (d + 2 * k_units..d + 3 * k_units).collect(),
            };
            let t_index: Vec<usize> = (d + 3 * k_units..n_vars).collect();

            let mut input_lo: Vec<f64> = net_p.iter().chain(&base_q).copied().collect();
            let mut input_hi = input_lo.clone();
            for (i, &bus) in model.der_nodes.iter().enumerate() {
                input_lo[n + bus - 1] = base_q[bus - 1] - model.qg_max[i];
                input_hi[n + bus - 1] = base_q[bus - 1] - model.qg_min[i];
            }
            let (lower, upper) = compute_preactivation_bounds(nn, &input_lo, &input_hi);
            let enc = ReluEncoding { lower, upper, ..enc };

            let base_input: Vec<f64> = net_p.iter().chain(&base_q).copied().collect();
            let a0 = nn.preactivation(&base_input);
            for k in 0..k_units {
                // a_k = a0_k - Σ_i W1[k, N + bus_i - 1] · gain · q_i
                let mut terms = vec![(enc.a_index[k], 1.0)];
                for (i, &bus) in model.der_nodes.iter().enumerate() {
                    let col = n + bus - 1;
                    let w = nn.w1[(k, col)] * nn.in_scaler.gain(col);
                    if w != 0.0 {
                        terms.push((i, w));
                    }
                }
                lp.add_row(&terms, RowSense::Eq, a0[k]);
                encode_relu_bigm(&mut lp, &enc, k);
            }
            // v_i = min_i + range_i · Σ_k W2[i, k] z_k
            for i in 0..n {
                let range = nn.out_scaler.range(i);
                let base = nn.out_scaler.min[i];
                let mut up: Vec<(usize, f64)> = (0..k_units)
                    .filter(|&k| nn.w2[(i, k)] != 0.0)
                    .map(|k| (enc.z_index[k], range * nn.w2[(i, k)]))
                    .collect();
                let mut down: Vec<(usize, f64)> = up.iter().map(|&(j, c)| (j, -c)).collect();
                up.push((t_index[i], -1.0));
                down.push((t_index[i], -1.0));
                lp.add_row(&up, RowSense::Le, 1.0 - base);
                lp.add_row(&down, RowSense::Le, base - 1.0);
            }
            (lp, Some(enc), t_index)
        }
        Surrogate::LinDistFlow(_) | Surrogate::LeastSquares(_) => {
            let predictor = surrogate.predictor();
            let c = predictor.predict(&net_p, &base_q).v;
            let g_cols: Vec<Vec<f64>> = model
                .der_nodes
                .iter()
                .map(|&bus| match surrogate {
                    Surrogate::LinDistFlow(ldf) => ldf.x.column(bus - 1).iter().copied().collect(),
                    Surrogate::LeastSquares(ls) => ls.coeffs.column(n + bus - 1).iter().map(|v| -v).collect(),
                    Surrogate::Neural(_) => unreachable!(),
                })
                .collect();
            let n_vars = d + n;
            let mut lp = LpProblem::new(n_vars);
            let t_index: Vec<usize> = (d..n_vars).collect();
            for i in 0..n {
                let mut up: Vec<(usize, f64)> = (0..d).map(|j| (j, g_cols[j][i])).collect();
                let mut down: Vec<(usize, f64)> = up.iter().map(|&(j, c)| (j, -c)).collect();
                up.push((t_index[i], -1.0));
                down.push((t_index[i], -1.0));
                lp.add_row(&up, RowSense::Le, 1.0 - c[i]);
                lp.add_row(&down, RowSense::Le, c[i] - 1.0);
            }
            (lp, None, t_index)
        }
    };

    let mut lp = lp;
    for i in 0..d {
        lp.lower[i] = model.qg_min[i];
        lp.upper[i] = model.qg_max[i];
    }
    for &t in &t_index {
        lp.cost[t] = 1.0;
    }
    Ok(VvoProblem {
        surrogate,
        scenario: scenario.clone(),
        der_nodes: model.der_nodes.clone(),
        lp,
        encoding,
        t_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvoStatus {
    Optimal,
    GapLimit,
    NodeLimit,
    TimeLimit,
}

impl VvoStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VvoStatus::Optimal => "optimal",
            VvoStatus::GapLimit => "gap-limit",
            VvoStatus::NodeLimit => "node-limit",
            VvoStatus::TimeLimit => "time-limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VvoSolution {
    pub q_g: Vec<f64>,
    pub v_pred: VoltageProfile,
    /// Surrogate `Σ |v_i - 1|` at `q_g`.
    pub objective: f64,
    /// Incumbent minus proven lower bound, never negative.
    pub gap: f64,
    pub status: VvoStatus,
    pub nodes: usize,
    /// Global lower bound after each processed node.
    pub bound_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    /// Absolute optimality gap at which the search stops.
    pub gap_tolerance: f64,
    pub node_limit: usize,
    pub time_limit: Option<Duration>,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-6,
            node_limit: 100_000,
            time_limit: None,
        }
    }
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<Option<bool>>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound, then older node, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

fn with_fixings(lp: &LpProblem, enc: &ReluEncoding, fixings: &[Option<bool>]) -> LpProblem {
    let mut p = lp.clone();
    for (k, f) in fixings.iter().enumerate() {
        if let Some(on) = f {
            let v = if *on { 1.0 } else { 0.0 };
            p.lower[enc.delta_index[k]] = v;
            p.upper[enc.delta_index[k]] = v;
        }
    }
    p
}

fn most_fractional(x: &[f64], enc: &ReluEncoding) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &di) in enc.delta_index.iter().enumerate() {
        let frac = x[di].clamp(0.0, 1.0);
        let dist = frac.min(1.0 - frac);
        if dist <= INTEGRALITY_TOL {
            continue;
        }
        if best.is_none_or(|(_, d)| dist > d) {
            best = Some((k, dist));
        }
    }
    best.map(|(k, _)| k)
}

fn finish(problem: &VvoProblem, q_g: Vec<f64>, gap: f64, status: VvoStatus, nodes: usize, trace: Vec<f64>) -> VvoSolution {
    let v_pred = problem.predict(&q_g);
    let objective = v_pred.v.iter().map(|v| (v - 1.0).abs()).sum();
    VvoSolution {
        q_g,
        v_pred,
        objective,
        gap: gap.max(0.0),
        status,
        nodes,
        bound_trace: trace,
    }
}

/// Solves the assembled problem: directly for affine surrogates, by
/// best-first branch-and-bound on the relu indicators otherwise.
pub fn solve_bnb(problem: &VvoProblem, config: &BnbConfig) -> Result<VvoSolution, VvoError> {
    let d = problem.n_der();
    let Some(enc) = &problem.encoding else {
        let sol = match solve_lp(&problem.lp)? {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => return Err(VvoError::Infeasible),
            LpOutcome::Unbounded => return Err(VvoError::Unbounded),
        };
        return Ok(finish(problem, sol.x[..d].to_vec(), 0.0, VvoStatus::Optimal, 1, vec![sol.objective]));
    };

    let start = Instant::now();
    let root = match solve_lp(&problem.lp)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => return Err(VvoError::Infeasible),
        LpOutcome::Unbounded => return Err(VvoError::Unbounded),
    };
    let mut nodes = 1;
    let mut next_id = 1;
    // Any LP point gives a feasible setpoint; its exact surrogate objective
    // is an upper bound.
    let mut incumbent_q = root.x[..d].to_vec();
    let mut incumbent = problem.objective_at(&incumbent_q);
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: root.objective,
        id: 0,
        fixings: vec![None; enc.units()],
        x: root.x,
    });
    let mut trace = vec![root.objective.min(incumbent)];
    let global_bound = |heap: &BinaryHeap<Node>, inc: f64| heap.peek().map_or(inc, |n| n.bound.min(inc));

    let status = loop {
        let bound = global_bound(&heap, incumbent);
        if incumbent - bound <= config.gap_tolerance {
            break VvoStatus::Optimal;
        }
        if nodes >= config.node_limit {
            break VvoStatus::NodeLimit;
        }
        if config.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break VvoStatus::TimeLimit;
        }
        let node = heap.pop().expect("gap positive implies open nodes");
        if node.bound >= incumbent - config.gap_tolerance {
            continue;
        }
        let Some(k) = most_fractional(&node.x, enc) else {
            // integral relaxation: its q_g is exactly optimal for this region
            let q = node.x[..d].to_vec();
            let obj = problem.objective_at(&q);
            if obj < incumbent {
                incumbent = obj;
                incumbent_q = q;
            }
            continue;
        };
        for on in [false, true] {
            if nodes >= config.node_limit {
                break;
            }
            let mut fixings = node.fixings.clone();
            fixings[k] = Some(on);
            let child = with_fixings(&problem.lp, enc, &fixings);
            nodes += 1;
            let LpOutcome::Optimal(sol) = solve_lp(&child)? else {
                continue;
            };
            let q = sol.x[..d].to_vec();
            let obj = problem.objective_at(&q);
            if obj < incumbent {
                incumbent = obj;
                incumbent_q = q;
            }
            let child_bound = sol.objective.max(node.bound);
            if child_bound < incumbent - config.gap_tolerance {
                heap.push(Node {
                    bound: child_bound,
                    id: next_id,
                    fixings,
                    x: sol.x,
                });
                next_id += 1;
            }
        }
        let b = global_bound(&heap, incumbent);
        let last = *trace.last().unwrap();
        trace.push(b.max(last));
    };
    let bound = global_bound(&heap, incumbent).max(*trace.last().unwrap()).min(incumbent);
    let mut sol = finish(problem, incumbent_q, incumbent - bound, status, nodes, trace);
    if sol.status != VvoStatus::Optimal && sol.gap <= config.gap_tolerance {
        sol.status = VvoStatus::Optimal;
    }
    Ok(sol)
}

/// Enumerates every activation pattern and solves the fixed-pattern LP:
/// active units get `z = a, a ≥ 0`, inactive ones `z = 0, a ≤ 0`.
pub fn brute_force_vvo(problem: &VvoProblem) -> Result<VvoSolution, VvoError> {
    let d = problem.n_der();
    let Some(enc) = &problem.encoding else {
        return solve_bnb(problem, &BnbConfig::default());
    };
    let k_units = enc.units();
    if k_units > MAX_BRUTE_FORCE_UNITS {
        return Err(VvoError::TooLarge { units: k_units });
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pattern in 0u32..(1u32 << k_units) {
        let mut lp = problem.lp.clone();
        for k in 0..k_units {
            let (a, z, di) = (enc.a_index[k], enc.z_index[k], enc.delta_index[k]);
            if pattern >> k & 1 == 1 {
                lp.lower[di] = 1.0;
                lp.upper[di] = 1.0;
                lp.lower[a] = lp.lower[a].max(0.0);
                lp.add_row(&[(z, 1.0), (a, -1.0)], RowSense::Eq, 0.0);
            } else {
                lp.lower[di] = 0.0;
                lp.upper[di] = 0.0;
                lp.upper[a] = lp.upper[a].min(0.0);
                lp.lower[z] = 0.0;
                lp.upper[z] = 0.0;
            }
        }
        if let LpOutcome::Optimal(sol) = solve_lp(&lp)? {
            if best.as_ref().is_none_or(|(b, _)| sol.objective < *b) {
                best = Some((sol.objective, sol.x[..d].to_vec()));
            }
        }
    }
    let (_, q) = best.ok_or(VvoError::Infeasible)?;
    Ok(finish(problem, q, 0.0, VvoStatus::Optimal, 1 << k_units, Vec::new()))
}

/// Realized voltages of a solution on the exact power flow.
#[derive(Debug, Clone, PartialEq)]
pub struct VvoEvaluation {
    pub v_true: VoltageProfile,
    pub stats: DeviationStats,
}

pub fn evaluate_vvo(
    model: &FeederModel,
    scenario: &Scenario,
    solution: &VvoSolution,
    thresholds: &[f64],
) -> Result<VvoEvaluation, VvoError> {
    let q = scenario.net_q_with(&model.scatter_der(&solution.q_g));
    let v_true = crate::feeder::solve_distflow(model, &scenario.net_p(), &q)?;
    let stats = compute_stats(std::slice::from_ref(&v_true.v), thresholds)?;
    Ok(VvoEvaluation { v_true, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    use crate::neural::MinMaxScaler;

    #[test]
    fn zero_weights_give_slack_bounds() {
        let nn = NeuralPfModel {
            w1: DMatrix::zeros(3, 4),
            b: DVector::zeros(3),
            w2: DMatrix::zeros(2, 3),
            in_scaler: MinMaxScaler::identity(4),
            out_scaler: MinMaxScaler::identity(2),
        };
        let (l, u) = compute_preactivation_bounds(&nn, &[0.0; 4], &[1.0; 4]);
        assert_eq!(l, vec![-1e-6; 3]);
        assert_eq!(u, vec![1e-6; 3]);
    }

    #[test]
    fn single_unit_interval() {
        let nn = NeuralPfModel {
            w1: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 1.0),
            w2: DMatrix::zeros(1, 1),
            in_scaler: MinMaxScaler { min: vec![0.0], max: vec![1.0] },
            out_scaler: MinMaxScaler::identity(1),
        };
        let (l, u) = raw_preactivation_bounds(&nn, &[-2.0], &[3.0]);
        assert_eq!((l[0], u[0]), (-1.0, 4.0));
    }

    fn one_unit_lp(delta: f64, a_fixed: f64) -> LpOutcome {
        let mut lp = LpProblem::new(3);
        let enc = ReluEncoding {
            lower: vec![-1.0],
            upper: vec![1.0],
            a_index: vec![0],
            z_index: vec![1],
            delta_index: vec![2],
        };
        encode_relu_bigm(&mut lp, &enc, 0);
        lp.lower[0] = a_fixed;
        lp.upper[0] = a_fixed;
        lp.lower[2] = delta;
        lp.upper[2] = delta;
        lp.cost[1] = -1.0;
        solve_lp(&lp).unwrap()
    }

    #[test]
    fn big_m_active_and_inactive() {
        let hi = one_unit_lp(1.0, 0.7);
        assert!((hi.optimal().unwrap().x[1] - 0.7).abs() < 1e-12);
        let lp = {
            let mut lp = LpProblem::new(3);
            let enc = ReluEncoding {
                lower: vec![-1.0],
                upper: vec![1.0],
                a_index: vec![0],
                z_index: vec![1],
                delta_index: vec![2],
            };
            encode_relu_bigm(&mut lp, &enc, 0);
            lp.lower[0] = 0.7;
            lp.upper[0] = 0.7;
            lp.lower[2] = 1.0;
            lp.cost[1] = 1.0;
            lp
        };
        let lo = solve_lp(&lp).unwrap();
        assert!((lo.optimal().unwrap().x[1] - 0.7).abs() < 1e-12);

        let off = one_unit_lp(0.0, -0.3);
        assert_eq!(off.optimal().unwrap().x[1], 0.0);
        assert_eq!(one_unit_lp(0.0, 0.3), LpOutcome::Infeasible);
    }
}
