//! Piecewise-linear volt-var droop rule.
//!
//! The curve outputs `+q̄` below `v̄ - σ`, ramps linearly to zero at `v̄ - δ`,
//! stays at zero across the deadband `[v̄ - δ, v̄ + δ]`, then ramps to `-q̄`
//! at `v̄ + σ`. Positive output is reactive injection.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::feeder::FeederModel;
use crate::linear::LinDistFlowModel;
use crate::textio::fmt_f64;

pub const V_SET_MIN: f64 = 0.95;
pub const V_SET_MAX: f64 = 1.05;
pub const DEADBAND_MAX: f64 = 0.03;
/// Minimum distance between the deadband edge and the saturation point.
pub const MIN_RAMP_WIDTH: f64 = 0.02;
pub const RAMP_END_MAX: f64 = 0.18;
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Curve parameters of one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleParams {
    pub v_set: f64,
    pub deadband: f64,
    pub ramp_end: f64,
    pub q_max: f64,
}

impl RuleParams {
    /// Ramp slope `α = q̄ / (σ - δ)`.
    pub fn slope(&self) -> f64 {
        self.q_max / (self.ramp_end - self.deadband)
    }

    /// Inside the admissible box, up to `tol`.
    pub fn is_feasible(&self, q_hat: f64, tol: f64) -> bool {
        self.v_set >= V_SET_MIN - tol
            && self.v_set <= V_SET_MAX + tol
            && self.deadband >= -tol
            && self.deadband <= DEADBAND_MAX + tol
            && self.ramp_end >= self.deadband + MIN_RAMP_WIDTH - tol
            && self.ramp_end <= RAMP_END_MAX + tol
            && self.q_max >= -tol
            && self.q_max <= q_hat + tol
    }

    /// Breakpoint offsets `(v̄-δ)-v, (v̄-σ)-v, v-(v̄+δ), v-(v̄+σ)`.
    fn arms(&self, v: f64) -> [f64; 4] {
        [
            (self.v_set - self.deadband) - v,
            (self.v_set - self.ramp_end) - v,
            v - (self.v_set + self.deadband),
            v - (self.v_set + self.ramp_end),
        ]
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Region-wise evaluation of the droop curve.
pub fn eval_rule(v: f64, p: &RuleParams) -> f64 {
    let alpha = p.slope();
    let [lo_edge, lo_sat, hi_edge, hi_sat] = p.arms(v);
    if lo_sat > 0.0 {
        alpha * (lo_edge - lo_sat)
    } else if lo_edge > 0.0 {
        alpha * lo_edge
    } else if hi_sat > 0.0 {
        alpha * (-hi_edge + hi_sat)
    } else if hi_edge > 0.0 {
        alpha * -hi_edge
    } else {
        0.0
    }
}

/// The same curve as a signed sum of four relus.
pub fn eval_rule_relu(v: f64, p: &RuleParams) -> f64 {
    let [a1, a2, a3, a4] = p.arms(v);
    p.slope() * (relu(a1) - relu(a2) - relu(a3) + relu(a4))
}

/// Partial derivatives of the rule output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RuleDerivatives {
    pub dv: f64,
    pub dv_set: f64,
    pub ddeadband: f64,
    pub dramp_end: f64,
    pub dq_max: f64,
}

/// Derivatives through the relu form with relu'(0) = 0.
pub fn rule_derivatives(v: f64, p: &RuleParams) -> RuleDerivatives {
    let [a1, a2, a3, a4] = p.arms(v);
    let ind = |a: f64| if a > 0.0 { 1.0 } else { 0.0 };
    let (i1, i2, i3, i4) = (ind(a1), ind(a2), ind(a3), ind(a4));
    let s = relu(a1) - relu(a2) - relu(a3) + relu(a4);
    let width = p.ramp_end - p.deadband;
    let alpha = p.q_max / width;
    let dalpha_dwidth = -p.q_max / (width * width);
    RuleDerivatives {
        dv: alpha * (-i1 + i2 - i3 + i4),
        dv_set: alpha * (i1 - i2 + i3 - i4),
        ddeadband: alpha * (-i1 + i3) - s * dalpha_dwidth,
        dramp_end: alpha * (i2 - i4) + s * dalpha_dwidth,
        dq_max: s / width,
    }
}

/// Sequential clamp into the admissible box, then the optional slope cap
/// applied by lowering `q̄`.
pub fn project_params(p: &RuleParams, q_hat: f64, slope_cap: Option<f64>) -> RuleParams {
    let v_set = p.v_set.clamp(V_SET_MIN, V_SET_MAX);
    let deadband = p.deadband.clamp(0.0, DEADBAND_MAX);
    let ramp_end = p.ramp_end.clamp(deadband + MIN_RAMP_WIDTH, RAMP_END_MAX);
    let mut q_max = p.q_max.clamp(0.0, q_hat.max(0.0));
    if let Some(cap) = slope_cap {
        q_max = q_max.min(cap * (ramp_end - deadband));
    }
    RuleParams {
        v_set,
        deadband,
        ramp_end,
        q_max,
    }
}

/// Rule parameters for every DER of a feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct VvcRuleParams {
    pub buses: Vec<usize>,
    pub nodes: Vec<RuleParams>,
}

impl VvcRuleParams {
    /// Uniform curve at every DER: `v̄ = 1, δ = 0.01, σ = 0.08, q̄ = q̂ / 2`.
    pub fn initial(model: &FeederModel) -> Self {
        let nodes = model
            .q_capability()
            .into_iter()
            .map(|q_hat| RuleParams {
                v_set: 1.0,
                deadband: 0.01,
                ramp_end: 0.08,
                q_max: 0.5 * q_hat,
            })
            .collect();
        Self {
            buses: model.der_nodes.clone(),
            nodes,
        }
    }

    /// Same breakpoints with every `q̄` set to zero.
    pub fn disabled(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.nodes {
            p.q_max = 0.0;
        }
        out
    }

    pub fn project(&self, q_hat: &[f64], caps: Option<&[f64]>) -> Self {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| project_params(p, q_hat[i], caps.map(|c| c[i])))
            .collect();
        Self {
            buses: self.buses.clone(),
            nodes,
        }
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.nodes.iter().map(RuleParams::slope).collect()
    }

    /// Per-DER outputs for per-bus voltages `v` (index `bus - 1`).
    pub fn outputs(&self, v: &[f64]) -> Vec<f64> {
        self.buses
            .iter()
            .zip(&self.nodes)
            .map(|(&bus, p)| eval_rule(v[bus - 1], p))
            .collect()
    }

    /// Parameters as a flat vector `[v̄, δ, σ, q̄]` per DER.
    pub fn to_flat(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .flat_map(|p| [p.v_set, p.deadband, p.ramp_end, p.q_max])
            .collect()
    }

    pub fn from_flat(buses: Vec<usize>, flat: &[f64]) -> Self {
        let nodes = flat
            .chunks_exact(4)
            .map(|c| RuleParams {
                v_set: c[0],
                deadband: c[1],
                ramp_end: c[2],
                q_max: c[3],
            })
            .collect();
        Self { buses, nodes }
    }

    /// One line per DER: `bus v_set deadband ramp_end q_max`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# bus v_set deadband ramp_end q_max\n");
        for (bus, p) in self.buses.iter().zip(&self.nodes) {
            let _ = writeln!(
                out,
                "{bus} {} {} {} {}",
                fmt_f64(p.v_set),
                fmt_f64(p.deadband),
                fmt_f64(p.ramp_end),
                fmt_f64(p.q_max)
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut buses = Vec::new();
        let mut nodes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(RuleError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let bus = fields[0].parse::<usize>().map_err(|e| RuleError::Parse {
                line,
                message: format!("bus: {e}"),
            })?;
            let vals: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| RuleError::Parse {
                    line,
                    message: e.to_string(),
                })?;
            buses.push(bus);
            nodes.push(RuleParams {
                v_set: vals[0],
                deadband: vals[1],
                ramp_end: vals[2],
                q_max: vals[3],
            });
        }
        Ok(Self { buses, nodes })
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Which entries of an `X` row enter the slope cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapScope {
    /// Every DER column of the row.
    AllDers,
    /// The bus itself and DERs adjacent to it.
    Neighbors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub epsilon: f64,
    pub scope: CapScope,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            scope: CapScope::AllDers,
        }
    }
}

/// `X` restricted to DER rows and columns.
pub fn der_reactance(ldf: &LinDistFlowModel, der_nodes: &[usize]) -> DMatrix<f64> {
    let d = der_nodes.len();
    DMatrix::from_fn(d, d, |i, j| ldf.x[(der_nodes[i] - 1, der_nodes[j] - 1)])
}

/// Per-DER slope caps `(1 - ε) / Σ_j X_ij`.
pub fn stability_caps(model: &FeederModel, ldf: &LinDistFlowModel, config: &StabilityConfig) -> Vec<f64> {
    let ders = &model.der_nodes;
    let xd = der_reactance(ldf, ders);
    (0..ders.len())
        .map(|i| {
            let sum: f64 = (0..ders.len())
                .filter(|&j| match config.scope {
                    CapScope::AllDers => true,
                    CapScope::Neighbors => {
                        i == j
                            || model.lines.iter().any(|l| {
                                (l.from_bus == ders[i] && l.to_bus == ders[j])
                                    || (l.to_bus == ders[i] && l.from_bus == ders[j])
                            })
                    }
                })
                .map(|j| xd[(i, j)])
                .sum();
            (1.0 - config.epsilon) / sum
        })
        .collect()
}

/// Largest singular value by power iteration on `MᵀM`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mtm = m.transpose() * m;
    let mut x = DVector::from_element(m.ncols(), 1.0 / (m.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let y = &mtm * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        x = y / norm;
        if (next - lambda).abs() <= 1e-14 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

/// `‖D_α X‖₂` over the DER block for the given slopes.
pub fn loop_gain_norm(ldf: &LinDistFlowModel, der_nodes: &[usize], slopes: &[f64]) -> f64 {
    let mut m = der_reactance(ldf, der_nodes);
    for (i, a) in slopes.iter().enumerate() {
        m.row_mut(i).scale_mut(*a);
    }
    spectral_norm(&m)
}
