use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use voltvar::lp::{solve_lp, LpOutcome, LpProblem, RowSense};

/// Best objective over all basic feasible points, by brute force.
fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.n_vars();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut equalities: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..p.n_rows() {
        let a: Vec<f64> = p.a.row(i).iter().copied().collect();
        match p.senses[i] {
            RowSense::Le => rows.push((a, p.rhs[i])),
            RowSense::Ge => rows.push((a.iter().map(|v| -v).collect(), -p.rhs[i])),
            RowSense::Eq => equalities.push((a, p.rhs[i])),
        }
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), p.upper[j]));
        e[j] = -1.0;
        rows.push((e, -p.lower[j]));
    }
    let free = n - equalities.len();
    let mut best: Option<f64> = None;
    let mut pick = Vec::new();
    combos(rows.len(), free, 0, &mut pick, &mut |idx| {
        let active: Vec<&(Vec<f64>, f64)> =
            equalities.iter().chain(idx.iter().map(|&k| &rows[k])).collect();
        let a = DMatrix::from_fn(n, n, |i, j| active[i].0[j]);
        let b = DVector::from_fn(n, |i, _| active[i].1);
        let lu = a.lu();
        if lu.determinant().abs() < 1e-10 {
            return;
        }
        let Some(x) = lu.solve(&b) else { return };
        if p.max_violation(x.as_slice()) > 1e-9 {
            return;
        }
        let obj = p.objective(x.as_slice());
        if best.is_none_or(|b| obj < b) {
            best = Some(obj);
        }
    });
    best
}

fn combos(n: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..n {
        if n - i < k - pick.len() {
            break;
        }
        pick.push(i);
        combos(n, k, i + 1, pick, f);
        pick.pop();
    }
}

fn random_lp() -> impl Strategy<Value = LpProblem> {
    (2usize..=8, 1usize..=5, 0usize..=1).prop_flat_map(|(n, m, n_eq)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * (m + n_eq)),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..0.5, m),
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(0.1f64..2.0, n),
        )
            .prop_map(move |(a, cost, x0, slack, lo, width)| {
                let mut p = LpProblem::new(n);
                p.cost = cost;
                let x0: Vec<f64> = (0..n).map(|j| lo[j] + x0[j] * width[j]).collect();
                for j in 0..n {
                    p.lower[j] = lo[j];
                    p.upper[j] = lo[j] + width[j];
                }
                for i in 0..m + n_eq {
                    let row = &a[i * n..(i + 1) * n];
                    let ax: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
                    let terms: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
                    if i < m {
                        p.add_row(&terms, RowSense::Le, ax + slack[i]);
                    } else {
                        p.add_row(&terms, RowSense::Eq, ax);
                    }
                }
                p
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn simplex_matches_vertex_enumeration(p in random_lp()) {
        let expected = vertex_enumeration(&p).expect("constructed feasible");
        let sol = solve_lp(&p).unwrap();
        let LpOutcome::Optimal(sol) = sol else { panic!("expected optimal, got {sol:?}") };
        prop_assert!(p.max_violation(&sol.x) <= 1e-9);
        prop_assert!((sol.objective - expected).abs() <= 1e-7, "{} vs {}", sol.objective, expected);
    }
}

#[test]
fn unbounded_direction_detected_with_free_variable() {
    let mut p = LpProblem::new(1);
    p.lower[0] = f64::NEG_INFINITY;
    p.cost[0] = 1.0;
    assert_eq!(solve_lp(&p).unwrap(), LpOutcome::Unbounded);
}

#[test]
fn redundant_equalities_are_tolerated() {
    let mut p = LpProblem::new(2);
    p.cost = vec![1.0, -1.0];
    p.upper = vec![3.0, 3.0];
    p.add_row(&[(0, 1.0), (1, 1.0)], RowSense::Eq, 2.0);
    p.add_row(&[(0, 2.0), (1, 2.0)], RowSense::Eq, 4.0);
    let sol = solve_lp(&p).unwrap();
    let s = sol.optimal().unwrap();
    assert!((s.objective + 2.0).abs() < 1e-12, "{s:?}");
}
