//! Properties of the traffic -> slices -> solution -> metrics chain on the
//! desk-scale scenario.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use nqi_core::metrics::{evaluate_cost, redistribute, satisfaction};
use nqi_core::milp::SolveStatus;
use nqi_core::qos::{aggregate_all, generate_traffic, pdb_s};
use nqi_core::scenario::{build_point, prepare, run_point, Prepared, ScenarioConfig, SweepPoint};
use nqi_core::slicing::build_slices;
use proptest::prelude::*;

fn prepared() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| {
        let path =
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_small.toml");
        prepare(&ScenarioConfig::load(&path).unwrap()).unwrap()
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn slicing_loses_no_demand(cond in 0usize..6, flows_per_ue in 1usize..16, seed in 0u64..10_000, user_mbps in 5.0..100.0f64) {
        let p = prepared();
        let n_gnbs = p.topology.gnbs().len();
        let flows = generate_traffic(n_gnbs, 5, flows_per_ue, 1e6, &[0, 1], seed).unwrap();
        let (traffic, _) = aggregate_all(&flows, n_gnbs, |_| &p.conditions[cond], user_mbps * 1e6).unwrap();
        let slices = build_slices(&traffic, &p.policy, &p.edges).unwrap();

        let total_n: f64 = traffic.iter().map(|t| t.demand_bps).sum();
        let total_s: f64 = slices.iter().map(|s| s.demand_bps).sum();
        prop_assert!(rel_close(total_n, total_s, 1e-12));

        let mut owner = vec![None; traffic.len()];
        for (i, s) in slices.iter().enumerate() {
            prop_assert!(s.demand_bps > 0.0);
            let members: f64 = s.members.iter().map(|&t| traffic[t].demand_bps).sum();
            prop_assert!(rel_close(members, s.demand_bps, 1e-12));
            // singleton groups: the budget is the NQI's own
            prop_assert_eq!(s.nqi_group.len(), 1);
            prop_assert_eq!(s.governing_pdb_s, pdb_s(s.nqi_group[0]).unwrap());
            for &t in &s.members {
                prop_assert!(owner[t].is_none());
                owner[t] = Some(i);
                prop_assert_eq!(traffic[t].nqi, s.nqi_group[0]);
                prop_assert_eq!(traffic[t].destination, s.destination);
                prop_assert_eq!(p.edges[traffic[t].gnb], s.edge_satellite);
            }
        }
        for (t, o) in owner.iter().enumerate() {
            prop_assert!(o.is_some() || traffic[t].demand_bps == 0.0);
        }
        prop_assert_eq!(&slices, &build_slices(&traffic, &p.policy, &p.edges).unwrap());
    }
}

fn solved_points() -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for (condition, flows_per_ue, seed) in [
        (0, 4, 1),
        (1, 12, 2),
        (2, 8, 3),
        (3, 12, 4),
        (4, 8, 5),
        (5, 12, 6),
    ] {
        out.push(SweepPoint {
            condition,
            flows_per_ue,
            w_f: 0.5,
            w_l: 0.5,
            seed,
        });
    }
    out.push(SweepPoint {
        condition: 4,
        flows_per_ue: 12,
        w_f: 0.3,
        w_l: 0.7,
        seed: 7,
    });
    out
}

#[test]
fn solved_points_are_consistent() {
    let p = prepared();
    for point in solved_points() {
        let r = run_point(p, &point).unwrap();
        let sol = &r.solution;
        assert_eq!(sol.status, SolveStatus::Optimal, "{point:?}");
        let m = &r.model;

        // double entry: recomputed cost against the solver's objective
        let cost = evaluate_cost(&sol.flow_gaps_bps(), &sol.latency_gaps_s(), &m.weights);
        assert!(
            (cost.total - sol.objective.unwrap()).abs() <= 1e-6,
            "{point:?}"
        );
        assert!((0.0..=1.0).contains(&cost.flow_term));

        // conservation at every level and identical ratios inside a traffic
        let by_flow: BTreeMap<usize, f64> = r
            .outcomes
            .iter()
            .map(|o| (o.flow, o.allocated_bps))
            .collect();
        assert_eq!(by_flow.len(), m.flows.len());
        for (s, res) in m.slices.iter().zip(&sol.slices) {
            let mut slice_sum = 0.0;
            for &t in &s.members {
                let nt = &m.traffic[t];
                let got: f64 = nt.members.iter().map(|f| by_flow[f]).sum();
                assert!(rel_close(
                    got,
                    res.allocation_bps * nt.demand_bps / s.demand_bps,
                    1e-9
                ));
                let ratio = by_flow[&nt.members[0]] / m.flows[nt.members[0]].demand_bps;
                for f in &nt.members {
                    assert!(rel_close(by_flow[f] / m.flows[*f].demand_bps, ratio, 1e-12));
                }
                slice_sum += got;
            }
            assert!(rel_close(slice_sum, res.allocation_bps, 1e-9));
            let route_latency: f64 = res
                .route
                .iter()
                .map(|&l| p.topology.links[l].latency_s)
                .sum();
            assert!(rel_close(route_latency, res.latency_s, 1e-12));
        }
        for o in &r.outcomes {
            assert!(o.allocated_bps >= 0.0 && o.allocated_bps <= o.demand_bps * (1.0 + 1e-12));
            assert!(o.latency_s > 0.0);
        }
        let sat = satisfaction(&r.outcomes).unwrap();
        assert!((0.0..=1.0).contains(&sat.sbar_f));
        assert!(sat.sbar_l <= 1.0);
        assert_eq!(r.row.sbar_f, Some(sat.sbar_f));

        // slower slices on the same routes never raise sbar_l
        let mut slower = sol.clone();
        for s in &mut slower.slices {
            s.latency_s += 0.004;
        }
        let late =
            redistribute(&slower, &m.slices, &m.traffic, &m.flows, &p.topology, false).unwrap();
        assert!(satisfaction(&late).unwrap().sbar_l <= sat.sbar_l);
    }
}

#[test]
fn points_are_deterministic() {
    let p = prepared();
    let point = SweepPoint {
        condition: 2,
        flows_per_ue: 8,
        w_f: 0.5,
        w_l: 0.5,
        seed: 11,
    };
    let a = build_point(p, &point).unwrap();
    let b = build_point(p, &point).unwrap();
    assert_eq!(a.flows, b.flows);
    assert_eq!(a.slices, b.slices);
    let (ra, rb) = (run_point(p, &point).unwrap(), run_point(p, &point).unwrap());
    assert_eq!(ra.solution.values, rb.solution.values);
    assert_eq!(ra.outcomes, rb.outcomes);
}
