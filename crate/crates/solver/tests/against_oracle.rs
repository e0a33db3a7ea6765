use nqi_oracle::{solve as dense_solve, solve_binary_enumeration, Cmp, DenseLp, DenseResult};
use nqi_solver::{
    lp_solve, solve, BnbOptions, LpOptions, LpResult, MipModel, MipSolution, MipStatus, Sense,
    VarId, VarKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_dense(model: &MipModel) -> DenseLp {
    let n = model.num_vars();
    let mut lp = DenseLp::new(n);
    for (j, v) in model.vars.iter().enumerate() {
        lp.c[j] = v.obj;
        lp.lower[j] = v.lower;
        lp.upper[j] = v.upper;
    }
    for row in &model.rows {
        let mut a = vec![0.0; n];
        for &(v, c) in &row.terms {
            a[v.0] += c;
        }
        let cmp = match row.sense {
            Sense::Le => Cmp::Le,
            Sense::Ge => Cmp::Ge,
            Sense::Eq => Cmp::Eq,
        };
        lp.rows.push((a, cmp, row.rhs));
    }
    lp
}

fn random_model(rng: &mut ChaCha8Rng, binaries: bool) -> MipModel {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(1..=5);
    let mut model = MipModel::new("rand");
    for j in 0..n {
        let obj = rng.random_range(-5..=5) as f64;
        if binaries && j % 2 == 0 {
            model.add_binary(format!("x{j}"), obj);
        } else {
            let upper = if rng.random_bool(0.6) {
                rng.random_range(1..=8) as f64
            } else {
                f64::INFINITY
            };
            model.add_continuous(format!("y{j}"), 0.0, upper, obj);
        }
    }
    for i in 0..m {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                terms.push((nqi_solver::VarId(j), rng.random_range(-4..=4) as f64));
            }
        }
        let sense = match rng.random_range(0..4) {
            0 => Sense::Ge,
            1 => Sense::Eq,
            _ => Sense::Le,
        };
        model.add_row(
            format!("r{i}"),
            terms,
            sense,
            rng.random_range(-3..=10) as f64,
        );
    }
    model
}

#[test]
fn random_lps_match_dense_tableau() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut optimal, mut infeasible, mut unbounded) = (0, 0, 0);
    for case in 0..300 {
        let model = random_model(&mut rng, false);
        let ours = lp_solve(&model, &LpOptions::default()).unwrap();
        let reference = dense_solve(&to_dense(&model));
        match (&ours, &reference) {
            (
                LpResult::Optimal { objective, values },
                DenseResult::Optimal {
                    objective: want, ..
                },
            ) => {
                assert!(
                    (objective - want).abs() <= 1e-6,
                    "case {case}: {objective} vs {want}"
                );
                assert!(
                    model.max_violation(values) <= 1e-7,
                    "case {case}: infeasible point"
                );
                optimal += 1;
            }
            (LpResult::Infeasible, DenseResult::Infeasible) => infeasible += 1,
            (LpResult::Unbounded, DenseResult::Unbounded) => unbounded += 1,
            _ => panic!("case {case}: status mismatch {ours:?} vs {reference:?}"),
        }
    }
    // the generator should exercise every outcome
    assert!(
        optimal > 50 && infeasible > 5 && unbounded > 5,
        "{optimal}/{infeasible}/{unbounded}"
    );
}

#[test]
fn random_binary_programs_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut solved = 0;
    for case in 0..200 {
        let mut model = random_model(&mut rng, true);
        // keep the continuous part bounded so enumeration never sees rays
        for v in model.vars.iter_mut() {
            if v.kind == VarKind::Continuous && v.upper.is_infinite() {
                v.upper = 10.0;
            }
        }
        let binaries: Vec<usize> = model
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(j, _)| j)
            .collect();
        let reference = solve_binary_enumeration(&to_dense(&model), &binaries);
        // the tie-break costs only steer relaxations; any size must leave the optimum alone
        let tiebreak = binaries
            .iter()
            .map(|&j| (VarId(j), rng.random_range(0.0..0.5)))
            .collect();
        for opts in [
            BnbOptions::default(),
            BnbOptions {
                tiebreak,
                ..BnbOptions::default()
            },
        ] {
            check_against(
                &model,
                &binaries,
                &reference,
                solve(&model, &opts).unwrap(),
                case,
            );
        }
        if matches!(reference, DenseResult::Optimal { .. }) {
            solved += 1;
        }
    }
    assert!(solved > 60, "{solved}");
}

fn check_against(
    model: &MipModel,
    binaries: &[usize],
    reference: &DenseResult,
    ours: MipSolution,
    case: usize,
) {
    match *reference {
        DenseResult::Optimal { objective, .. } => {
            assert_eq!(ours.status, MipStatus::Optimal, "case {case}");
            let got = ours.objective.unwrap();
            assert!(
                (got - objective).abs() <= 1e-6,
                "case {case}: {got} vs {objective}"
            );
            let values = ours.values.unwrap();
            assert!(model.max_violation(&values) <= 1e-7);
            for &j in binaries {
                assert!(values[j] == 0.0 || values[j] == 1.0);
            }
        }
        DenseResult::Infeasible => assert_eq!(ours.status, MipStatus::Infeasible, "case {case}"),
        DenseResult::Unbounded => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Transportation-style LPs are always feasible and bounded.
    #[test]
    fn transport_lp_objective_matches(
        supply in prop::collection::vec(1u8..20, 2..4),
        costs in prop::collection::vec(0u8..9, 9),
    ) {
        let total: f64 = supply.iter().map(|&s| s as f64).sum();
        let sinks = 3;
        let mut model = MipModel::new("transport");
        let mut vars = Vec::new();
        for i in 0..supply.len() {
            for k in 0..sinks {
                vars.push(model.add_continuous(format!("t{i}_{k}"), 0.0, f64::INFINITY, costs[(i * sinks + k) % 9] as f64));
            }
        }
        for (i, &s) in supply.iter().enumerate() {
            let terms = (0..sinks).map(|k| (vars[i * sinks + k], 1.0)).collect();
            model.add_row(format!("s{i}"), terms, Sense::Eq, s as f64);
        }
        for k in 0..sinks {
            let terms = (0..supply.len()).map(|i| (vars[i * sinks + k], 1.0)).collect();
            model.add_row(format!("d{k}"), terms, Sense::Le, (total / 2.0).ceil());
        }
        let LpResult::Optimal { objective, .. } = lp_solve(&model, &LpOptions::default()).unwrap() else {
            panic!("transport LP must be solvable");
        };
        let want = dense_solve(&to_dense(&model)).objective().unwrap();
        prop_assert!((objective - want).abs() <= 1e-6);
    }
}
