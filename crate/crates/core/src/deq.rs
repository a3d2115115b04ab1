//! Closed-loop equilibrium of droop rules and a voltage model.
//!
//! The loop `v = F(v) = f(p, q^c - g(v; φ))` is solved by Anderson
//! acceleration and differentiated implicitly: with `J = ∂F/∂v` at the
//! equilibrium, the adjoint `λ` solves `(I - J)ᵀ λ = ∂L/∂v*` and the
//! parameter gradient is `λᵀ ∂F/∂φ`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::feeder::{DistFlowSolver, FeederError, FeederModel, Scenario};
use crate::neural::{nn_forward, NeuralPfModel};
use crate::report::{compute_stats, DeviationStats, ReportError};
use crate::vvc::{rule_derivatives, VvcRuleParams};

#[derive(Debug, Error)]
pub enum DeqError {
    #[error("epoch {epoch}, batch {batch}: I - J is singular (|J|_inf = {jacobian_norm:.3e})")]
    SingularSystem {
        epoch: usize,
        batch: usize,
        jacobian_norm: f64,
    },
    #[error("epoch {epoch}: {dropped} of {total} fixed points did not converge")]
    TooManyDropped {
        epoch: usize,
        dropped: usize,
        total: usize,
    },
    #[error("parameters left the admissible box after epoch {epoch}, batch {batch}")]
    InfeasibleParameters { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario {index}: closed loop did not converge (residual {residual:.3e})")]
    LoopNonConvergence { index: usize, residual: f64 },
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationScheme {
    Anderson,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AndersonConfig {
    pub memory: usize,
    pub relaxation: f64,
    /// Tikhonov term for the mixing least squares, relative to the mean
    /// diagonal of the residual-difference Gram matrix.
    pub ridge: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub scheme: IterationScheme,
}

impl Default for AndersonConfig {
    fn default() -> Self {
        Self {
            memory: 5,
            relaxation: 1.0,
            ridge: 1e-8,
            tolerance: 1e-8,
            max_iterations: 100,
            scheme: IterationScheme::Anderson,
        }
    }
}

impl AndersonConfig {
    pub fn picard() -> Self {
        Self {
            scheme: IterationScheme::Picard,
            max_iterations: 10_000,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub v_star: Vec<f64>,
    /// `‖v* - F(v*)‖∞`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Iterates `x ↦ map(x)` from `x0` until `‖map(x) - x‖∞ ≤ tolerance`.
pub fn solve_fixed_point_with<F>(map: F, x0: &[f64], config: &AndersonConfig) -> FixedPointResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = DVector::from_column_slice(x0);
    let mut best = (f64::INFINITY, x.clone());
    let mut hist_x: Vec<DVector<f64>> = Vec::new();
    let mut hist_f: Vec<DVector<f64>> = Vec::new();
    let memory = config.memory.max(1);
    for it in 0..=config.max_iterations {
        let g = DVector::from_vec(map(x.as_slice()));
        let f = &g - &x;
        let res = inf_norm(&f);
        if !res.is_finite() {
            break;
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= config.tolerance {
            return FixedPointResult {
                v_star: x.as_slice().to_vec(),
                residual: res,
                iterations: it,
                converged: true,
            };
        }
        if it == config.max_iterations {
            break;
        }
        let next = match config.scheme {
            IterationScheme::Picard => &x + config.relaxation * &f,
            IterationScheme::Anderson => {
                hist_x.push(x.clone());
                hist_f.push(f.clone());
                if hist_x.len() > memory + 1 {
                    hist_x.remove(0);
                    hist_f.remove(0);
                }
                anderson_step(&hist_x, &hist_f, config).unwrap_or_else(|| &x + config.relaxation * &f)
            }
        };
        x = next;
    }
    FixedPointResult {
        v_star: best.1.as_slice().to_vec(),
        residual: best.0,
        iterations: config.max_iterations,
        converged: false,
    }
}

/// Type-II Anderson update from the stored iterates and residuals.
fn anderson_step(xs: &[DVector<f64>], fs: &[DVector<f64>], config: &AndersonConfig) -> Option<DVector<f64>> {
    let k = xs.len() - 1;
    let (x, f) = (&xs[k], &fs[k]);
    if k == 0 {
        return Some(x + config.relaxation * f);
    }
    let n = x.len();
    let df = DMatrix::from_fn(n, k, |r, c| fs[c + 1][r] - fs[c][r]);
    let dx = DMatrix::from_fn(n, k, |r, c| xs[c + 1][r] - xs[c][r]);
    let mut gram = df.transpose() * &df;
    let scale = gram.trace() / k as f64;
    if !(scale > 0.0) {
        return None;
    }
    for i in 0..k {
        gram[(i, i)] += config.ridge * scale;
    }
    let gamma = gram.cholesky()?.solve(&(df.transpose() * f));
    let x_bar = x - &dx * &gamma;
    let f_bar = f - &df * &gamma;
    let next = x_bar + config.relaxation * f_bar;
    next.iter().all(|v| v.is_finite()).then_some(next)
}

/// Per-bus reactive generation produced by the rules at voltages `v`.
pub fn rule_injection(v: &[f64], params: &VvcRuleParams) -> Vec<f64> {
    let mut q_g = vec![0.0; v.len()];
    for (&bus, q) in params.buses.iter().zip(params.outputs(v)) {
        q_g[bus - 1] = q;
    }
    q_g
}

/// `F(v) = f_NN(p^c - p^g, q^c - g(v))`.
pub fn closed_loop_map(v: &[f64], scenario: &Scenario, nn: &NeuralPfModel, params: &VvcRuleParams) -> Vec<f64> {
    let q = scenario.net_q_with(&rule_injection(v, params));
    nn_forward(nn, &scenario.net_p(), &q).v
}

/// Equilibrium of the surrogate loop, starting from a flat profile.
pub fn solve_fixed_point(
    scenario: &Scenario,
    nn: &NeuralPfModel,
    params: &VvcRuleParams,
    config: &AndersonConfig,
) -> FixedPointResult {
    let v0 = vec![1.0; scenario.n_buses()];
    solve_fixed_point_with(|v| closed_loop_map(v, scenario, nn, params), &v0, config)
}

/// `‖v* - 1‖²`.
pub fn loss(v_star: &[f64]) -> f64 {
    v_star.iter().map(|v| (v - 1.0) * (v - 1.0)).sum()
}

/// `∂v/∂q_net`: the N × N reactive block of the network's input Jacobian.
fn reactive_sensitivity(v: &[f64], scenario: &Scenario, nn: &NeuralPfModel, params: &VvcRuleParams) -> DMatrix<f64> {
    let n = scenario.n_buses();
    let q = scenario.net_q_with(&rule_injection(v, params));
    let input: Vec<f64> = scenario.net_p().into_iter().chain(q).collect();
    nn.input_jacobian(&input).columns(n, n).into_owned()
}

/// `∂F/∂v` at `v`, with relu masks frozen at `v`.
pub fn jacobian_v(v: &[f64], scenario: &Scenario, nn: &NeuralPfModel, params: &VvcRuleParams) -> DMatrix<f64> {
    let n = scenario.n_buses();
    let jq = reactive_sensitivity(v, scenario, nn, params);
    let mut jac = DMatrix::zeros(n, n);
    for (&bus, p) in params.buses.iter().zip(&params.nodes) {
        let dq = rule_derivatives(v[bus - 1], p).dv;
        if dq != 0.0 {
            let col = bus - 1;
            jac.set_column(col, &(jq.column(col) * -dq));
        }
    }
    jac
}

/// Loss value and gradient with respect to the flattened parameters
/// `[v̄, δ, σ, q̄]` per DER.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradient {
    pub loss: f64,
    pub adjoint: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Adjoint gradient of `‖v* - 1‖²` at a converged equilibrium. Returns the
/// infinity norm of `J` as the error when `I - J` cannot be factored.
pub fn implicit_grad(
    v_star: &[f64],
    scenario: &Scenario,
    nn: &NeuralPfModel,
    params: &VvcRuleParams,
) -> Result<ImplicitGradient, f64> {
    let n = v_star.len();
    let jq = reactive_sensitivity(v_star, scenario, nn, params);
    let jac = jacobian_v(v_star, scenario, nn, params);
    let a = (DMatrix::identity(n, n) - &jac).transpose();
    let rhs = DVector::from_iterator(n, v_star.iter().map(|v| 2.0 * (v - 1.0)));
    let j_norm = jac.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lu = a.lu();
    if lu.determinant().abs() < 1e-12 {
        return Err(j_norm);
    }
    let lambda = lu.solve(&rhs).ok_or(j_norm)?;
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(j_norm);
    }
    let mut grad = Vec::with_capacity(4 * params.nodes.len());
    for (&bus, p) in params.buses.iter().zip(&params.nodes) {
        // ∂F/∂φ_i = -J_q[:, bus] · ∂g_i/∂φ_i
        let w = -lambda.dot(&jq.column(bus - 1));
        let d = rule_derivatives(v_star[bus - 1], p);
        grad.extend([w * d.dv_set, w * d.ddeadband, w * d.dramp_end, w * d.dq_max]);
    }
    Ok(ImplicitGradient {
        loss: loss(v_star),
        adjoint: lambda.as_slice().to_vec(),
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VvcTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub anderson: AndersonConfig,
    /// Slope caps applied at every projection; `None` keeps only the box.
    pub slope_caps: Option<Vec<f64>>,
    /// Fraction of non-converged samples in one epoch that aborts training.
    pub max_drop_fraction: f64,
}

impl Default for VvcTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            anderson: AndersonConfig::default(),
            slope_caps: None,
            max_drop_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub max_residual: f64,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVvc {
    pub params: VvcRuleParams,
    pub initial: VvcRuleParams,
    pub log: Vec<EpochLog>,
}

impl TrainedVvc {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,max_residual,dropped\n");
        for e in &self.log {
            out.push_str(&format!("{},{:e},{:e},{}\n", e.epoch, e.mean_loss, e.max_residual, e.dropped));
        }
        out
    }
}

/// Mean equilibrium loss over `scenarios`; non-converged samples are skipped.
pub fn mean_loss(
    scenarios: &[Scenario],
    nn: &NeuralPfModel,
    params: &VvcRuleParams,
    config: &AndersonConfig,
) -> f64 {
    let losses: Vec<f64> = scenarios
        .par_iter()
        .map(|s| solve_fixed_point(s, nn, params, config))
        .filter(|r| r.converged)
        .map(|r| loss(&r.v_star))
        .collect();
    losses.iter().sum::<f64>() / losses.len().max(1) as f64
}

/// Projected mini-batch gradient descent on the equilibrium loss.
pub fn train_vvc(
    scenarios: &[Scenario],
    model: &FeederModel,
    nn: &NeuralPfModel,
    config: &VvcTrainConfig,
) -> Result<TrainedVvc, DeqError> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(DeqError::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    if scenarios.is_empty() {
        return Err(DeqError::InvalidConfig("no training scenarios".into()));
    }
    let q_hat = model.q_capability();
    let caps = config.slope_caps.as_deref();
    let initial = VvcRuleParams::initial(model).project(&q_hat, caps);
    let mut params = initial.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut counted, mut dropped, mut max_res) = (0.0, 0usize, 0usize, 0.0f64);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(FixedPointResult, Option<Result<ImplicitGradient, f64>>)> = idx
                .par_iter()
                .map(|&i| {
                    let fp = solve_fixed_point(&scenarios[i], nn, &params, &config.anderson);
                    let g = fp
                        .converged
                        .then(|| implicit_grad(&fp.v_star, &scenarios[i], nn, &params));
                    (fp, g)
                })
                .collect();
            let mut grad = vec![0.0; 4 * params.nodes.len()];
            let mut used = 0usize;
            for (fp, g) in results {
                max_res = max_res.max(fp.residual);
                match g {
                    None => dropped += 1,
                    Some(Err(jacobian_norm)) => {
                        return Err(DeqError::SingularSystem {
                            epoch,
                            batch,
                            jacobian_norm,
                        })
                    }
                    Some(Ok(g)) => {
                        used += 1;
                        loss_sum += g.loss;
                        for (acc, v) in grad.iter_mut().zip(&g.grad) {
                            *acc += v;
                        }
                    }
                }
            }
            counted += used;
            if used == 0 {
                continue;
            }
            let mut flat = params.to_flat();
            for (p, g) in flat.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g / used as f64;
            }
            params = VvcRuleParams::from_flat(params.buses.clone(), &flat).project(&q_hat, caps);
            if !params.nodes.iter().zip(&q_hat).all(|(p, &qh)| p.is_feasible(qh, 1e-12)) {
                return Err(DeqError::InfeasibleParameters { epoch, batch });
            }
        }
        if dropped as f64 > config.max_drop_fraction * scenarios.len() as f64 {
            return Err(DeqError::TooManyDropped {
                epoch,
                dropped,
                total: scenarios.len(),
            });
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / counted.max(1) as f64,
            max_residual: max_res,
            dropped,
        });
    }
    Ok(TrainedVvc { params, initial, log })
}

/// Closed-loop equilibrium on the exact power flow.
pub fn oracle_fixed_point(
    solver: &DistFlowSolver,
    scenario: &Scenario,
    params: &VvcRuleParams,
    config: &AndersonConfig,
) -> Result<FixedPointResult, FeederError> {
    let net_p = scenario.net_p();
    let v0 = vec![1.0; scenario.n_buses()];
    let failure = std::sync::Mutex::new(None);
    let result = solve_fixed_point_with(
        |v| {
            let q = scenario.net_q_with(&rule_injection(v, params));
            match solver.solve(&net_p, &q) {
                Ok(p) => p.v,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    vec![f64::NAN; v.len()]
                }
            }
        },
        &v0,
        config,
    );
    match failure.into_inner().unwrap() {
        Some(e) if !result.converged => Err(e),
        _ => Ok(result),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VvcEvaluation {
    pub voltages: Vec<Vec<f64>>,
    pub results: Vec<FixedPointResult>,
    pub stats: DeviationStats,
}

/// Deviation statistics of the rules on the exact closed loop.
pub fn evaluate_vvc(
    scenarios: &[Scenario],
    model: &FeederModel,
    params: &VvcRuleParams,
    config: &AndersonConfig,
    thresholds: &[f64],
) -> Result<VvcEvaluation, DeqError> {
    let solver = DistFlowSolver::new(model)?;
    let results: Vec<FixedPointResult> = scenarios
        .par_iter()
        .map(|s| oracle_fixed_point(&solver, s, params, config))
        .collect::<Result<_, _>>()?;
    if let Some((index, r)) = results.iter().enumerate().find(|(_, r)| !r.converged) {
        return Err(DeqError::LoopNonConvergence {
            index,
            residual: r.residual,
        });
    }
    let voltages: Vec<Vec<f64>> = results.iter().map(|r| r.v_star.clone()).collect();
    let stats = compute_stats(&voltages, thresholds)?;
    Ok(VvcEvaluation {
        voltages,
        results,
        stats,
    })
}
