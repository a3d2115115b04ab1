use proptest::prelude::*;
use voltvar::feeder::{build_ieee33, DistFlowSolver, FeederModel};
use voltvar::linear::{build_lindistflow, predict_lindistflow};

fn shipped_feeder() -> FeederModel {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ieee33.txt");
    FeederModel::load(&path).unwrap()
}

#[test]
fn data_file_matches_embedded_table() {
    let file = shipped_feeder();
    let built = build_ieee33();
    assert_eq!(file.n_buses, built.n_buses);
    assert_eq!(file.slack_voltage, built.slack_voltage);
    assert_eq!(file.lines.len(), built.lines.len());
    for (a, b) in file.lines.iter().zip(&built.lines) {
        assert_eq!((a.from_bus, a.to_bus), (b.from_bus, b.to_bus));
        assert!((a.r - b.r).abs() <= 1e-12 * b.r.abs());
        assert!((a.x - b.x).abs() <= 1e-12 * b.x.abs());
    }
    for (a, b) in file.nominal_p.iter().zip(&built.nominal_p) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in file.nominal_q.iter().zip(&built.nominal_q) {
        assert!((a - b).abs() < 1e-15);
    }
    let total_p: f64 = file.nominal_p.iter().sum();
    let total_q: f64 = file.nominal_q.iter().sum();
    assert!((total_p - 3.715).abs() < 1e-9, "{total_p}");
    assert!((total_q - 2.300).abs() < 1e-9, "{total_q}");
}

fn ldf_error(model: &FeederModel, scale: f64) -> f64 {
    let solver = DistFlowSolver::new(model).unwrap();
    let ldf = build_lindistflow(model).unwrap();
    let p: Vec<f64> = model.nominal_p.iter().map(|x| scale * x).collect();
    let q: Vec<f64> = model.nominal_q.iter().map(|x| scale * x).collect();
    let exact = solver.solve(&p, &q).unwrap();
    let lin = predict_lindistflow(&ldf, &p, &q);
    exact.v.iter().zip(&lin.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn linearization_error_is_quadratic_in_load() {
    let model = build_ieee33();
    let ratios: Vec<f64> = [0.1, 0.2, 0.4].iter().map(|&s| ldf_error(&model, s) / (s * s)).collect();
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(lo > 0.0);
    assert!(hi / lo <= 4.0, "{ratios:?}");
}

#[test]
fn zero_load_is_exactly_flat() {
    let model = build_ieee33();
    let v = DistFlowSolver::new(&model).unwrap().solve(&[0.0; 32], &[0.0; 32]).unwrap();
    assert!(v.v.iter().all(|&x| x == 1.0));
}

fn perturbed(model: &FeederModel, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = model.nominal_p.iter().zip(f).map(|(x, f)| x * f).collect();
    let q = model.nominal_q.iter().zip(f).map(|(x, f)| x * f).collect();
    (p, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_solve_meets_the_residual(
        f in prop::collection::vec(0.0f64..1.3, 32),
        qf in prop::collection::vec(-2.0f64..2.0, 32),
    ) {
        let model = build_ieee33();
        let solver = DistFlowSolver::new(&model).unwrap();
        let (p, q0) = perturbed(&model, &f);
        let q: Vec<f64> = q0.iter().zip(&qf).map(|(q, g)| q * g).collect();
        let state = solver.solve_state(&p, &q).unwrap();
        prop_assert!(solver.residual(&p, &q, &state) <= 1e-10);
    }

    #[test]
    fn scaling_consumption_down_shrinks_deviation(
        f in prop::collection::vec(0.9f64..1.1, 32),
        s in 0.01f64..=1.0,
    ) {
        let model = build_ieee33();
        let solver = DistFlowSolver::new(&model).unwrap();
        let (p, q) = perturbed(&model, &f);
        let full = solver.solve(&p, &q).unwrap().max_abs_deviation();
        let ps: Vec<f64> = p.iter().map(|x| s * x).collect();
        let qs: Vec<f64> = q.iter().map(|x| s * x).collect();
        let scaled = solver.solve(&ps, &qs).unwrap().max_abs_deviation();
        prop_assert!(scaled <= full + 1e-15);
    }
}
