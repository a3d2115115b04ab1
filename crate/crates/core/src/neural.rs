//! One-hidden-layer ReLU surrogate of the power-flow map.
//!
//! ```text
//! v = descale( W2 · relu( W1 · scale([p; q]) + b ) )
//! ```
//!
//! Inputs and outputs go through min-max scalers fitted on the training
//! split. Training minimizes the mean squared error in scaled output space
//! with mini-batch Adam; reported errors are in unscaled per-unit volts.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::PfRow;
use crate::feeder::VoltageProfile;
use crate::textio::{write_matrix, write_vector, LineCursor, TextFormatError};
use crate::VoltagePredictor;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Format(#[from] TextFormatError),
    #[error("checkpoint: {0}")]
    Shape(String),
}

/// Per-feature affine map onto `[0, 1]`.
///
/// Degenerate features (`max == min`) scale to 0 and invert to `min`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(columns: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut min = vec![f64::INFINITY; columns];
        let mut max = vec![f64::NEG_INFINITY; columns];
        let mut seen = false;
        for row in rows {
            seen = true;
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if !seen {
            return Self::identity(columns);
        }
        Self { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `d scale(x)_j / d x_j`.
    pub fn gain(&self, j: usize) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            1.0 / range
        } else {
            0.0
        }
    }

    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    pub fn scale_one(&self, j: usize, x: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range > 0.0 {
            (x - self.min[j]) / range
        } else {
            0.0
        }
    }

    pub fn descale_one(&self, j: usize, y: f64) -> f64 {
        self.min[j] + y * (self.max[j] - self.min[j])
    }

    pub fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.scale_one(j, v)).collect()
    }

    pub fn descale(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(j, &v)| self.descale_one(j, v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPfModel {
    /// K × 2N hidden weights.
    pub w1: DMatrix<f64>,
    /// Hidden bias, length K.
    pub b: DVector<f64>,
    /// N × K output weights.
    pub w2: DMatrix<f64>,
    pub in_scaler: MinMaxScaler,
    pub out_scaler: MinMaxScaler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for PfTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 1e-4,
            epochs: 2000,
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl PfTrainConfig {
    /// Batch size 1 for 50,000 epochs.
    pub fn long_schedule() -> Self {
        Self {
            epochs: 50_000,
            batch_size: 1,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate > 0.0) {
            return Err(NeuralError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.hidden == 0 {
            return Err(NeuralError::InvalidConfig("hidden width must be ≥ 1".into()));
        }
        Ok(())
    }
}

impl NeuralPfModel {
    /// Glorot-uniform weights, zero bias, identity scalers.
    pub fn init(n_inputs: usize, n_outputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (n_inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + n_outputs) as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, n_inputs, |_, _| rng.random_range(-a1..a1));
        let w2 = DMatrix::from_fn(n_outputs, hidden, |_, _| rng.random_range(-a2..a2));
        Self {
            w1,
            b: DVector::zeros(hidden),
            w2,
            in_scaler: MinMaxScaler::identity(n_inputs),
            out_scaler: MinMaxScaler::identity(n_outputs),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.w2.nrows()
    }

    /// Hidden pre-activations for a raw `[p; q]` input.
    pub fn preactivation(&self, input: &[f64]) -> DVector<f64> {
        let x = DVector::from_vec(self.in_scaler.scale(input));
        &self.w1 * x + &self.b
    }

    pub fn forward_input(&self, input: &[f64]) -> Vec<f64> {
        let hidden = self.preactivation(input).map(relu);
        let y = &self.w2 * hidden;
        self.out_scaler.descale(y.as_slice())
    }

    /// Jacobian of the unscaled output with respect to the raw input
    /// (N × 2N), with relu derivative 0 at exactly 0.
    pub fn input_jacobian(&self, input: &[f64]) -> DMatrix<f64> {
        let pre = self.preactivation(input);
        let mut inner = self.w1.clone();
        for k in 0..self.hidden() {
            if !(pre[k] > 0.0) {
                inner.row_mut(k).fill(0.0);
            }
        }
        for j in 0..self.n_inputs() {
            let g = self.in_scaler.gain(j);
            inner.column_mut(j).scale_mut(g);
        }
        let mut jac = &self.w2 * inner;
        for i in 0..self.n_outputs() {
            let r = self.out_scaler.range(i);
            jac.row_mut(i).scale_mut(r);
        }
        jac
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.b.iter()).chain(self.w2.iter()).all(|v| v.is_finite())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("neural_pf {} {}\n", self.n_outputs(), self.hidden());
        write_vector(&mut out, &self.in_scaler.min);
        write_vector(&mut out, &self.in_scaler.max);
        write_vector(&mut out, &self.out_scaler.min);
        write_vector(&mut out, &self.out_scaler.max);
        write_matrix(&mut out, &self.w1);
        write_vector(&mut out, self.b.as_slice());
        write_matrix(&mut out, &self.w2);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NeuralError> {
        let mut cursor = LineCursor::new(text);
        let (_, fields) = cursor.expect_key("neural_pf")?;
        let dims: Vec<usize> = fields.iter().filter_map(|f| f.parse().ok()).collect();
        let [n, k] = dims[..] else {
            return Err(NeuralError::Shape("header must be `neural_pf N K`".into()));
        };
        let in_scaler = MinMaxScaler {
            min: cursor.read_vector("input min")?,
            max: cursor.read_vector("input max")?,
        };
        let out_scaler = MinMaxScaler {
            min: cursor.read_vector("output min")?,
            max: cursor.read_vector("output max")?,
        };
        let w1 = cursor.read_matrix("W1")?;
        let b = DVector::from_vec(cursor.read_vector("b")?);
        let w2 = cursor.read_matrix("W2")?;
        let consistent = w1.shape() == (k, 2 * n)
            && b.len() == k
            && w2.shape() == (n, k)
            && in_scaler.dim() == 2 * n
            && in_scaler.max.len() == 2 * n
            && out_scaler.dim() == n
            && out_scaler.max.len() == n;
        if !consistent {
            return Err(NeuralError::Shape(format!("blocks inconsistent with N={n}, K={k}")));
        }
        Ok(Self {
            w1,
            b,
            w2,
            in_scaler,
            out_scaler,
        })
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn nn_forward(model: &NeuralPfModel, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
    let mut input = Vec::with_capacity(net_p.len() + net_q.len());
    input.extend_from_slice(net_p);
    input.extend_from_slice(net_q);
    VoltageProfile {
        v: model.forward_input(&input),
    }
}

impl VoltagePredictor for NeuralPfModel {
    fn predict(&self, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
        nn_forward(self, net_p, net_q)
    }
}

/// Gradients of the scaled-space batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NnGradients {
    pub w1: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w2: DMatrix<f64>,
}

/// Scaled training data: one sample per row.
#[derive(Debug, Clone)]
pub struct ScaledBatch {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl ScaledBatch {
    pub fn from_rows(model: &NeuralPfModel, rows: &[PfRow]) -> Self {
        let n_in = model.n_inputs();
        let n_out = model.n_outputs();
        let inputs = DMatrix::from_fn(rows.len(), n_in, |i, j| {
            model.in_scaler.scale_one(j, rows[i].input[j])
        });
        let targets = DMatrix::from_fn(rows.len(), n_out, |i, j| {
            model.out_scaler.scale_one(j, rows[i].output[j])
        });
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select_rows(idx),
        }
    }
}

/// Mean over samples and outputs of the squared scaled-output error.
pub fn batch_loss(model: &NeuralPfModel, batch: &ScaledBatch) -> f64 {
    let pre = batch_preactivation(model, batch);
    let hidden = pre.map(relu);
    let err = output_error(model, &hidden, batch);
    err.norm_squared() / (err.nrows() * err.ncols()) as f64
}

/// `c = alpha * op(a) * op(b) + beta * c` on column-major storage, where
/// `op` transposes when the flag is set.
fn gemm(alpha: f64, a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool, beta: f64, c: &mut DMatrix<f64>) {
    let strides = |m: &DMatrix<f64>, t: bool| {
        let (rs, cs) = (1, m.nrows() as isize);
        if t {
            (m.ncols(), m.nrows(), cs, rs)
        } else {
            (m.nrows(), m.ncols(), rs, cs)
        }
    };
    let (m, k, rsa, csa) = strides(a, ta);
    let (kb, n, rsb, csb) = strides(b, tb);
    assert!(k == kb && c.nrows() == m && c.ncols() == n, "gemm shape mismatch");
    let rsc = 1;
    let csc = m as isize;
    // SAFETY: the shapes and strides above describe the three buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn batch_preactivation(model: &NeuralPfModel, batch: &ScaledBatch) -> DMatrix<f64> {
    let mut pre = DMatrix::from_fn(batch.len(), model.b.len(), |_, j| model.b[j]);
    gemm(1.0, &batch.inputs, false, &model.w1, true, 1.0, &mut pre);
    pre
}

fn output_error(model: &NeuralPfModel, hidden: &DMatrix<f64>, batch: &ScaledBatch) -> DMatrix<f64> {
    let mut err = batch.targets.clone();
    gemm(1.0, hidden, false, &model.w2, true, -1.0, &mut err);
    err
}

/// Exact gradients of [`batch_loss`]; relu subgradient at 0 is 0.
pub fn nn_backward(model: &NeuralPfModel, batch: &ScaledBatch) -> (f64, NnGradients) {
    let m = batch.len();
    let n_out = model.n_outputs();
    let pre = batch_preactivation(model, batch);
    let hidden = pre.map(relu);
    let err = output_error(model, &hidden, batch);
    let denom = (m * n_out) as f64;
    let loss = err.norm_squared() / denom;
    let d_out = err * (2.0 / denom);
    let k = model.b.len();
    let mut g_w2 = DMatrix::zeros(n_out, k);
    gemm(1.0, &d_out, true, &hidden, false, 0.0, &mut g_w2);
    let mut d_pre = DMatrix::zeros(m, k);
    gemm(1.0, &d_out, false, &model.w2, false, 0.0, &mut d_pre);
    d_pre.zip_apply(&pre, |d, p| {
        if !(p > 0.0) {
            *d = 0.0;
        }
    });
    let mut g_w1 = DMatrix::zeros(k, batch.inputs.ncols());
    gemm(1.0, &d_pre, true, &batch.inputs, false, 0.0, &mut g_w1);
    let g_b = d_pre.row_sum().transpose();
    (
        loss,
        NnGradients {
            w1: g_w1,
            b: g_b,
            w2: g_w2,
        },
    )
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &PfTrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (i, (pi, gi)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[offset + i];
                let v = &mut self.v[offset + i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                *pi -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
            offset += p.len();
        }
    }
}

/// Training outcome with the per-epoch loss curve (scaled space).
#[derive(Debug, Clone)]
pub struct TrainedPf {
    pub model: NeuralPfModel,
    /// Full training-set loss before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Full training-set loss after the last update.
    pub final_loss: f64,
}

/// Fits scalers on `train`, then runs seeded mini-batch Adam.
pub fn train_pf(train: &[PfRow], config: &PfTrainConfig) -> Result<TrainedPf, NeuralError> {
    config.validate()?;
    let first = train.first().ok_or(NeuralError::EmptyDataset)?;
    let n_in = first.input.len();
    let n_out = first.output.len();
    let mut model = NeuralPfModel::init(n_in, n_out, config.hidden, config.seed);
    model.in_scaler = MinMaxScaler::fit(n_in, train.iter().map(|r| r.input.as_slice()));
    model.out_scaler = MinMaxScaler::fit(n_out, train.iter().map(|r| r.output.as_slice()));

    let data = ScaledBatch::from_rows(&model, train);
    let initial_loss = batch_loss(&model, &data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed0fba7c4);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_params = model.w1.len() + model.b.len() + model.w2.len();
    let mut adam = AdamState::new(n_params);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let (loss, grads) = nn_backward(&model, &batch);
            if !loss.is_finite() {
                return Err(NeuralError::DivergenceDetected { epoch });
            }
            total += loss;
            batches += 1;
            adam.step(
                &mut [
                    model.w1.as_mut_slice(),
                    model.b.as_mut_slice(),
                    model.w2.as_mut_slice(),
                ],
                &[grads.w1.as_slice(), grads.b.as_slice(), grads.w2.as_slice()],
                config,
            );
        }
        let mean = total / batches as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(NeuralError::DivergenceDetected { epoch });
        }
        epoch_losses.push(mean);
    }
    let final_loss = batch_loss(&model, &data);
    Ok(TrainedPf {
        model,
        initial_loss,
        epoch_losses,
        final_loss,
    })
}

/// Mean squared voltage error over all rows and buses, unscaled.
pub fn mse_eval(predictor: &dyn VoltagePredictor, rows: &[PfRow]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in rows {
        let v = predictor.predict(row.net_p(), row.net_q());
        for (a, b) in v.v.iter().zip(&row.output) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
