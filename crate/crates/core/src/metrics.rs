//! Redistribution of slice allocations to 5G flows, satisfaction ratios,
//! cost recomputation and the sweep CSV row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::Topology;
use crate::milp::{OptimizationWeights, Solution};
use crate::qos::{self, Flow5G, NtnTraffic, QosError};
use crate::slicing::Slice;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("solution has no incumbent to redistribute")]
    NoIncumbent,
    #[error("solution covers {got} slices, expected {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("flow {0} is not covered by any slice")]
    Uncovered(usize),
    #[error("no flows to average over")]
    Empty,
    #[error(transparent)]
    Qos(#[from] QosError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficOutcome {
    pub flow: usize,
    pub allocated_bps: f64,
    pub latency_s: f64,
    pub demand_bps: f64,
    /// Budget of the flow's own 5QI, not of the NQI it was mapped to.
    pub pdb_s: f64,
}

/// Splits each slice allocation over its NTN traffic in proportion to
/// `r_n`, then over each traffic's flows in proportion to `r_f`. Outcomes
/// are indexed by flow id. With `end_to_end`, the gNB user-link latency is
/// added to the slice latency.
pub fn redistribute(
    solution: &Solution,
    slices: &[Slice],
    traffic: &[NtnTraffic],
    flows: &[Flow5G],
    topology: &Topology,
    end_to_end: bool,
) -> Result<Vec<TrafficOutcome>, MetricsError> {
    if !solution.has_incumbent() {
        return Err(MetricsError::NoIncumbent);
    }
    if solution.slices.len() != slices.len() {
        return Err(MetricsError::ShapeMismatch {
            got: solution.slices.len(),
            want: slices.len(),
        });
    }
    let mut out: Vec<Option<TrafficOutcome>> = vec![None; flows.len()];
    for (s, r) in slices.iter().zip(&solution.slices) {
        for &t in &s.members {
            let nt = &traffic[t];
            let b_traffic = proportional(r.allocation_bps, nt.demand_bps, s.demand_bps);
            let member_demand: f64 = nt.members.iter().map(|&f| flows[f].demand_bps).sum();
            let user_latency = match (end_to_end, topology.user_link(nt.gnb)) {
                (true, Some(l)) => l.latency_s,
                _ => 0.0,
            };
            for &f in &nt.members {
                let flow = &flows[f];
                out[f] = Some(TrafficOutcome {
                    flow: f,
                    allocated_bps: proportional(b_traffic, flow.demand_bps, member_demand),
                    latency_s: r.latency_s + user_latency,
                    demand_bps: flow.demand_bps,
                    pdb_s: qos::pdb_s(flow.five_qi)?,
                });
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(f, o)| o.ok_or(MetricsError::Uncovered(f)))
        .collect()
}

fn proportional(total: f64, part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        total * part / whole
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Satisfaction {
    /// Mean of `b*/r_f` over all flows.
    pub sbar_f: f64,
    /// Mean of `1 - l*/pdb` over all flows; negative when latency exceeds budgets.
    pub sbar_l: f64,
    pub n_flows: usize,
}

pub fn satisfaction(outcomes: &[TrafficOutcome]) -> Result<Satisfaction, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = outcomes.len() as f64;
    let sbar_f = outcomes
        .iter()
        .map(|o| o.allocated_bps / o.demand_bps)
        .sum::<f64>()
        / n;
    let sbar_l = outcomes
        .iter()
        .map(|o| 1.0 - o.latency_s / o.pdb_s)
        .sum::<f64>()
        / n;
    Ok(Satisfaction {
        sbar_f,
        sbar_l,
        n_flows: outcomes.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cost {
    pub total: f64,
    pub flow_term: f64,
    pub latency_term: f64,
}

/// Cost from per-slice gaps (bits/s and seconds); `N_s` is the number of gaps.
pub fn evaluate_cost(
    flow_gaps_bps: &[f64],
    latency_gaps_s: &[f64],
    weights: &OptimizationWeights,
) -> Cost {
    let n_s = flow_gaps_bps.len().max(1) as f64;
    let flow_term = weights.w_f / (n_s * weights.flow_norm_bps) * flow_gaps_bps.iter().sum::<f64>();
    let latency_term =
        weights.w_l / (n_s * weights.latency_norm_s) * latency_gaps_s.iter().sum::<f64>();
    Cost {
        total: flow_term + latency_term,
        flow_term,
        latency_term,
    }
}

/// One line of the sweep CSV.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub condition: String,
    pub flows_per_ue: usize,
    pub w_f: f64,
    pub w_l: f64,
    pub seed: u64,
    pub sbar_f: Option<f64>,
    pub sbar_l: Option<f64>,
    pub J: Option<f64>,
    pub J_flow_term: Option<f64>,
    pub J_latency_term: Option<f64>,
    pub solve_time_s: f64,
    pub n_slices: usize,
    pub n_binaries: usize,
    pub status: String,
}

/// Columns that depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 1] = ["solve_time_s"];

pub const CSV_COLUMNS: [&str; 14] = [
    "condition",
    "flows_per_ue",
    "w_f",
    "w_l",
    "seed",
    "sbar_f",
    "sbar_l",
    "J",
    "J_flow_term",
    "J_latency_term",
    "solve_time_s",
    "n_slices",
    "n_binaries",
    "status",
];
