//! Linear power-flow baselines: the LinDistFlow sensitivity model and a
//! least-squares affine fit.
//!
//! LinDistFlow drops the loss terms of DistFlow and linearizes `v^2 ≈ 2v - 1`
//! around 1 pu. The squared-voltage drop `2 Σ (r P + x Q)` then becomes a
//! magnitude drop `Σ (r P + x Q)`, so the sensitivity entries are plain path
//! sums of `r` and `x` over the lines shared by the two buses' slack paths:
//!
//! ```text
//! v = v0·1 − R p − X q        (consumption-positive p, q)
//! ```
//!
//! With injections instead of loads the signs of `R p` and `X q` flip.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dataset::PfRow;
use crate::feeder::{downstream_path_sets, FeederError, FeederModel, VoltageProfile};
use crate::textio::{write_matrix, write_vector, LineCursor, TextFormatError};
use crate::VoltagePredictor;

/// Ridge added to the normal equations when the plain solve is singular.
pub const LS_RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinearModelError {
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("least-squares needs at least {needed} rows, got {got}")]
    InsufficientRows { needed: usize, got: usize },
    #[error("normal equations are singular even with ridge {ridge:e}")]
    SingularSystem { ridge: f64 },
    #[error(transparent)]
    Format(#[from] TextFormatError),
    #[error("model file: {0}")]
    Shape(String),
}

/// LinDistFlow sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct LinDistFlowModel {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub v0: f64,
}

pub fn build_lindistflow(model: &FeederModel) -> Result<LinDistFlowModel, LinearModelError> {
    let paths = downstream_path_sets(model)?;
    let n = model.n_buses;
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // paths are ordered slack-outward, so the common part is a prefix
            let (mut rs, mut xs) = (0.0, 0.0);
            for (a, b) in paths[i].iter().zip(&paths[j]) {
                if a != b {
                    break;
                }
                rs += model.lines[*a].r;
                xs += model.lines[*a].x;
            }
            r[(i, j)] = rs;
            r[(j, i)] = rs;
            x[(i, j)] = xs;
            x[(j, i)] = xs;
        }
    }
    Ok(LinDistFlowModel {
        r,
        x,
        v0: model.slack_voltage,
    })
}

impl LinDistFlowModel {
    pub fn n_buses(&self) -> usize {
        self.r.nrows()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("lindistflow {} {:.16e}\n", self.n_buses(), self.v0);
        write_matrix(&mut out, &self.r);
        write_matrix(&mut out, &self.x);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LinearModelError> {
        let mut cursor = LineCursor::new(text);
        let (_, fields) = cursor.expect_key("lindistflow")?;
        let v0 = fields
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| LinearModelError::Shape("header needs `lindistflow N v0`".into()))?;
        let r = cursor.read_matrix("R")?;
        let x = cursor.read_matrix("X")?;
        if !r.is_square() || r.shape() != x.shape() {
            return Err(LinearModelError::Shape("R and X must be equal square blocks".into()));
        }
        Ok(Self { r, x, v0 })
    }
}

pub fn predict_lindistflow(ldf: &LinDistFlowModel, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
    let p = DVector::from_column_slice(net_p);
    let q = DVector::from_column_slice(net_q);
    let v = DVector::from_element(ldf.n_buses(), ldf.v0) - &ldf.r * p - &ldf.x * q;
    VoltageProfile { v: v.iter().copied().collect() }
}

impl VoltagePredictor for LinDistFlowModel {
    fn predict(&self, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
        predict_lindistflow(self, net_p, net_q)
    }
}

/// Affine map `v = intercept + coeffs · [p; q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsModel {
    /// N × 2N.
    pub coeffs: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

/// Ordinary least squares on raw per-unit values.
///
/// Columns are centered before forming the normal equations, which leaves
/// the minimizer unchanged and keeps the system well conditioned when the
/// inputs only vary a few percent around their means.
pub fn fit_least_squares(rows: &[PfRow]) -> Result<LsModel, LinearModelError> {
    let Some(first) = rows.first() else {
        return Err(LinearModelError::InsufficientRows { needed: 1, got: 0 });
    };
    let d_in = first.input.len();
    let d_out = first.output.len();
    if rows.len() < d_in + 1 {
        return Err(LinearModelError::InsufficientRows {
            needed: d_in + 1,
            got: rows.len(),
        });
    }
    let m = rows.len() as f64;
    let mut x_mean = DVector::zeros(d_in);
    let mut y_mean = DVector::zeros(d_out);
    for row in rows {
        x_mean += DVector::from_column_slice(&row.input);
        y_mean += DVector::from_column_slice(&row.output);
    }
    x_mean /= m;
    y_mean /= m;
    let a = DMatrix::from_fn(rows.len(), d_in, |i, j| rows[i].input[j] - x_mean[j]);
    let b = DMatrix::from_fn(rows.len(), d_out, |i, j| rows[i].output[j] - y_mean[j]);
    let gram = a.tr_mul(&a);
    let rhs = a.tr_mul(&b);

    let beta_t = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => {
            let ridged = gram + DMatrix::identity(d_in, d_in) * LS_RIDGE;
            ridged
                .cholesky()
                .ok_or(LinearModelError::SingularSystem { ridge: LS_RIDGE })?
                .solve(&rhs)
        }
    };
    if beta_t.iter().any(|v| !v.is_finite()) {
        return Err(LinearModelError::SingularSystem { ridge: LS_RIDGE });
    }
    let coeffs = beta_t.transpose();
    let intercept = &y_mean - &coeffs * &x_mean;
    Ok(LsModel { coeffs, intercept })
}

pub fn predict_ls(ls: &LsModel, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
    let input = DVector::from_iterator(net_p.len() + net_q.len(), net_p.iter().chain(net_q).copied());
    let v = &ls.intercept + &ls.coeffs * input;
    VoltageProfile { v: v.iter().copied().collect() }
}

impl VoltagePredictor for LsModel {
    fn predict(&self, net_p: &[f64], net_q: &[f64]) -> VoltageProfile {
        predict_ls(self, net_p, net_q)
    }
}

impl LsModel {
    pub fn to_text(&self) -> String {
        let mut out = format!("least_squares {}\n", self.intercept.len());
        write_vector(&mut out, self.intercept.as_slice());
        write_matrix(&mut out, &self.coeffs);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LinearModelError> {
        let mut cursor = LineCursor::new(text);
        cursor.expect_key("least_squares")?;
        let intercept = DVector::from_vec(cursor.read_vector("intercept")?);
        let coeffs = cursor.read_matrix("coeffs")?;
        if coeffs.nrows() != intercept.len() || coeffs.ncols() != 2 * intercept.len() {
            return Err(LinearModelError::Shape("coeffs must be N × 2N".into()));
        }
        Ok(Self { coeffs, intercept })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{build_ieee33, solve_distflow, LineSegment};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain3(r1: f64, r2: f64) -> FeederModel {
        let lines = vec![
            LineSegment { from_bus: 0, to_bus: 1, r: r1, x: 2.0 * r1 },
            LineSegment { from_bus: 1, to_bus: 2, r: r2, x: 2.0 * r2 },
        ];
        FeederModel::from_parts(2, 1.0, lines, vec![0.0; 2], vec![0.0; 2])
    }

    #[test]
    fn chain_common_paths() {
        let ldf = build_lindistflow(&chain3(0.3, 0.7)).unwrap();
        assert_eq!(ldf.r, DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.3, 1.0]));
        assert_eq!(ldf.x, DMatrix::from_row_slice(2, 2, &[0.6, 0.6, 0.6, 2.0]));
    }

    #[test]
    fn ieee33_sensitivities_symmetric_nonnegative_pd() {
        let ldf = build_lindistflow(&build_ieee33()).unwrap();
        for m in [&ldf.r, &ldf.x] {
            assert_eq!(m, &m.transpose());
            assert!(m.iter().all(|&v| v >= 0.0));
            assert!(m.clone().cholesky().is_some());
        }
    }

    #[test]
    fn zero_load_and_linearity() {
        let ldf = build_lindistflow(&build_ieee33()).unwrap();
        let zero = vec![0.0; 32];
        assert!(predict_lindistflow(&ldf, &zero, &zero).v.iter().all(|&v| v == 1.0));
        let model = build_ieee33();
        let one = predict_lindistflow(&ldf, &model.nominal_p, &model.nominal_q);
        let p2: Vec<f64> = model.nominal_p.iter().map(|v| 2.0 * v).collect();
        let q2: Vec<f64> = model.nominal_q.iter().map(|v| 2.0 * v).collect();
        let two = predict_lindistflow(&ldf, &p2, &q2);
        for (a, b) in one.v.iter().zip(&two.v) {
            assert!(((b - 1.0) - 2.0 * (a - 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn light_load_matches_oracle() {
        let model = build_ieee33();
        let ldf = build_lindistflow(&model).unwrap();
        let p: Vec<f64> = model.nominal_p.iter().map(|v| 0.01 * v).collect();
        let q: Vec<f64> = model.nominal_q.iter().map(|v| 0.01 * v).collect();
        let exact = solve_distflow(&model, &p, &q).unwrap();
        let approx = predict_lindistflow(&ldf, &p, &q);
        let err = exact.v.iter().zip(&approx.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-4, "{err}");
    }

    fn affine_rows(seed: u64, n_rows: usize, coeffs: &DMatrix<f64>, icpt: &DVector<f64>) -> Vec<PfRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_rows)
            .map(|_| {
                let input: Vec<f64> = (0..coeffs.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let out = icpt + coeffs * DVector::from_column_slice(&input);
                PfRow { input, output: out.iter().copied().collect() }
            })
            .collect()
    }

    #[test]
    fn recovers_exact_affine_map() {
        let coeffs = DMatrix::from_fn(3, 6, |i, j| (i as f64 + 1.0) * 0.1 - j as f64 * 0.05);
        let icpt = DVector::from_vec(vec![1.0, 0.9, 1.05]);
        let rows = affine_rows(7, 40, &coeffs, &icpt);
        let ls = fit_least_squares(&rows).unwrap();
        assert!((&ls.coeffs - &coeffs).amax() < 1e-8);
        assert!((&ls.intercept - &icpt).amax() < 1e-8);
        let pred = predict_ls(&ls, &rows[3].input[..3], &rows[3].input[3..]);
        for (a, b) in pred.v.iter().zip(&rows[3].output) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_output_gives_zero_coeffs() {
        let coeffs = DMatrix::zeros(2, 4);
        let icpt = DVector::from_vec(vec![0.97, 1.01]);
        let ls = fit_least_squares(&affine_rows(3, 30, &coeffs, &icpt)).unwrap();
        assert!(ls.coeffs.amax() < 1e-12);
        assert!((&ls.intercept - &icpt).amax() < 1e-12);
    }

    #[test]
    fn zero_coeffs_predict_intercept() {
        let ls = LsModel {
            coeffs: DMatrix::zeros(2, 4),
            intercept: DVector::from_vec(vec![0.5, 0.25]),
        };
        assert_eq!(predict_ls(&ls, &[1.0, 2.0], &[3.0, 4.0]).v, vec![0.5, 0.25]);
    }

    #[test]
    fn too_few_rows() {
        let rows = affine_rows(1, 4, &DMatrix::zeros(2, 4), &DVector::zeros(2));
        assert!(matches!(
            fit_least_squares(&rows),
            Err(LinearModelError::InsufficientRows { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn rank_deficient_inputs_fall_back_to_ridge() {
        // duplicate input column: plain normal equations are singular
        let mut rows = affine_rows(5, 20, &DMatrix::from_element(1, 2, 0.5), &DVector::from_element(1, 1.0));
        for row in &mut rows {
            row.input[1] = row.input[0];
            row.output[0] = 1.0 + row.input[0];
        }
        let ls = fit_least_squares(&rows).unwrap();
        let pred = predict_ls(&ls, &rows[0].input[..1], &rows[0].input[1..]);
        assert!((pred.v[0] - rows[0].output[0]).abs() < 1e-6);
    }

    #[test]
    fn text_round_trip() {
        let ldf = build_lindistflow(&build_ieee33()).unwrap();
        assert_eq!(LinDistFlowModel::from_text(&ldf.to_text()).unwrap(), ldf);
        let coeffs = DMatrix::from_fn(2, 4, |i, j| 0.1 * i as f64 - 0.3 * j as f64 + 1.0 / 7.0);
        let ls = LsModel { coeffs, intercept: DVector::from_vec(vec![1.0 / 3.0, 0.9]) };
        assert_eq!(LsModel::from_text(&ls.to_text()).unwrap(), ls);
    }
}
