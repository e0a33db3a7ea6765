//! Joint slice flow-allocation and single-path routing MILP.
//!
//! Inside the model flows are in Mbps and latencies in milliseconds so that
//! coefficients stay near unit scale; the objective value is unitless and
//! unaffected. Everything this module returns is in bits/s and seconds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use nqi_solver::{
    write_mps_file, BnbError, BnbOptions, LpOptions, MipModel, MipStatus, MpsError, Sense, VarId,
};
use serde::Serialize;
use thiserror::Error;

use crate::constellation::{LinkKind, Topology};
use crate::metrics::evaluate_cost;
use crate::slicing::Slice;

const MBPS: f64 = 1e6;
const MS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("no slices to optimize")]
    NoSlices,
    #[error("topology has no feeder links")]
    NoFeeder,
    #[error("slice {slice}: edge node {node} is not a satellite")]
    UnknownEdge { slice: usize, node: usize },
    #[error("slice {slice}: destination {destination} is not a ground station")]
    UnknownDestination { slice: usize, destination: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("slice {slice}: active links do not form a route to the destination")]
    RouteExtraction { slice: usize },
    #[error(transparent)]
    Solver(#[from] BnbError),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

/// Cost weights and normalizers: `J = w_f/(N_s F) sum s_f + w_l/(N_s L) sum s_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizationWeights {
    pub w_f: f64,
    pub w_l: f64,
    /// F, total requested flow.
    pub flow_norm_bps: f64,
    /// L, total delay budget.
    pub latency_norm_s: f64,
}

impl OptimizationWeights {
    pub fn new(
        w_f: f64,
        w_l: f64,
        flow_norm_bps: f64,
        latency_norm_s: f64,
    ) -> Result<Self, MilpError> {
        let w = Self {
            w_f,
            w_l,
            flow_norm_bps,
            latency_norm_s,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let bad = |s: &str| Err(MilpError::InvalidWeights(s.to_string()));
        if !(self.w_f >= 0.0 && self.w_l >= 0.0) {
            return bad("weights must be non-negative");
        }
        if (self.w_f + self.w_l - 1.0).abs() > 1e-9 {
            return bad("w_f + w_l must equal 1");
        }
        if !(self.flow_norm_bps > 0.0 && self.latency_norm_s > 0.0) {
            return bad("normalizers must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkVars {
    pub link: usize,
    pub x: VarId,
    pub f: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceVars {
    pub b: VarId,
    pub sf: VarId,
    pub sl: VarId,
    /// Candidate links in ascending link id.
    pub links: Vec<LinkVars>,
}

/// A built model with the column map back to slices and links.
#[derive(Debug, Clone)]
pub struct SliceMilp {
    pub model: MipModel,
    pub vars: Vec<SliceVars>,
    pub weights: OptimizationWeights,
}

impl SliceMilp {
    pub fn num_slices(&self) -> usize {
        self.vars.len()
    }
}

/// Builds the MILP. Feeder links into ground stations other than a slice's
/// destination get no columns for that slice.
pub fn build_model(
    slices: &[Slice],
    topology: &Topology,
    weights: &OptimizationWeights,
) -> Result<SliceMilp, MilpError> {
    weights.validate()?;
    if slices.is_empty() {
        return Err(MilpError::NoSlices);
    }
    if topology.links_of_kind(LinkKind::Feeder).next().is_none() {
        return Err(MilpError::NoFeeder);
    }
    let n_s = slices.len() as f64;
    let sf_cost = weights.w_f / (n_s * weights.flow_norm_bps / MBPS);
    let sl_cost = weights.w_l / (n_s * weights.latency_norm_s / MS);

    let mut m = MipModel::new("nqi_slices");
    let mut all_vars = Vec::with_capacity(slices.len());
    let mut link_users: BTreeMap<usize, Vec<VarId>> = BTreeMap::new();

    for (i, s) in slices.iter().enumerate() {
        let a = s.edge_satellite;
        if !topology.is_satellite(a) {
            return Err(MilpError::UnknownEdge { slice: i, node: a });
        }
        let g = *topology.ground_stations().get(s.destination).ok_or(
            MilpError::UnknownDestination {
                slice: i,
                destination: s.destination,
            },
        )?;

        let candidates: Vec<_> = topology
            .links
            .iter()
            .filter(|l| {
                l.kind == LinkKind::InterSatellite || (l.kind == LinkKind::Feeder && l.to == g)
            })
            .collect();
        let xs: Vec<VarId> = candidates
            .iter()
            .map(|l| m.add_binary(format!("x_{i}_{}", l.id), 0.0))
            .collect();
        let fs: Vec<VarId> = candidates
            .iter()
            .map(|l| m.add_continuous(format!("f_{i}_{}", l.id), 0.0, f64::INFINITY, 0.0))
            .collect();
        let b = m.add_continuous(format!("b_{i}"), 0.0, s.demand_bps / MBPS, 0.0);
        let sf = m.add_continuous(format!("sf_{i}"), 0.0, f64::INFINITY, sf_cost);
        let sl = m.add_continuous(format!("sl_{i}"), 0.0, f64::INFINITY, sl_cost);
        let links: Vec<LinkVars> = candidates
            .iter()
            .zip(xs.iter().zip(&fs))
            .map(|(l, (&x, &f))| LinkVars { link: l.id, x, f })
            .collect();

        // b equals the gross flow leaving the slice-edge satellite
        let mut route = vec![(b, 1.0)];
        route.extend(
            links
                .iter()
                .filter(|lv| topology.links[lv.link].from == a)
                .map(|lv| (lv.f, -1.0)),
        );
        m.add_row(format!("route_{i}"), route, Sense::Eq, 0.0);

        for lv in &links {
            let cap = topology.links[lv.link].capacity_bps / MBPS;
            m.add_row(
                format!("feas_{i}_{}", lv.link),
                vec![(lv.f, 1.0), (lv.x, -cap)],
                Sense::Le,
                0.0,
            );
            link_users.entry(lv.link).or_default().push(lv.f);
        }

        let mut out_f: BTreeMap<usize, Vec<(VarId, f64)>> = BTreeMap::new();
        let mut out_x: BTreeMap<usize, Vec<(VarId, f64)>> = BTreeMap::new();
        let mut isl_in: BTreeMap<usize, Vec<(VarId, f64)>> = BTreeMap::new();
        let mut isl_out: BTreeMap<usize, Vec<(VarId, f64)>> = BTreeMap::new();
        for &sat in topology.satellites() {
            out_f.insert(sat, Vec::new());
            out_x.insert(sat, Vec::new());
            isl_in.insert(sat, Vec::new());
            isl_out.insert(sat, Vec::new());
        }
        for lv in &links {
            let l = &topology.links[lv.link];
            out_f.get_mut(&l.from).unwrap().extend([(lv.f, 1.0)]);
            out_x.get_mut(&l.from).unwrap().extend([(lv.x, 1.0)]);
            if l.kind == LinkKind::InterSatellite {
                out_f.get_mut(&l.to).unwrap().push((lv.f, -1.0));
                out_x.get_mut(&l.to).unwrap().push((lv.x, -1.0));
                isl_out.get_mut(&l.from).unwrap().push((lv.x, 1.0));
                isl_in.get_mut(&l.to).unwrap().push((lv.x, 1.0));
            }
        }
        for &sat in topology.satellites() {
            let mut cons = out_f.remove(&sat).unwrap();
            if sat == a {
                cons.push((b, -1.0));
            }
            m.add_row(format!("cons_{i}_{sat}"), cons, Sense::Eq, 0.0);
            let rhs = if sat == a { 1.0 } else { 0.0 };
            m.add_row(
                format!("xbal_{i}_{sat}"),
                out_x.remove(&sat).unwrap(),
                Sense::Eq,
                rhs,
            );
            m.add_row(
                format!("nlin_{i}_{sat}"),
                isl_in.remove(&sat).unwrap(),
                Sense::Le,
                1.0,
            );
            m.add_row(
                format!("nlout_{i}_{sat}"),
                isl_out.remove(&sat).unwrap(),
                Sense::Le,
                1.0,
            );
        }

        let feeders: Vec<&LinkVars> = links
            .iter()
            .filter(|lv| topology.links[lv.link].kind == LinkKind::Feeder)
            .collect();
        let mut dest = vec![(b, -1.0)];
        dest.extend(feeders.iter().map(|lv| (lv.f, 1.0)));
        m.add_row(format!("dest_{i}"), dest, Sense::Eq, 0.0);
        m.add_row(
            format!("feed_{i}"),
            feeders.iter().map(|lv| (lv.x, 1.0)).collect(),
            Sense::Le,
            1.0,
        );

        m.add_row(
            format!("gapf_{i}"),
            vec![(sf, 1.0), (b, 1.0)],
            Sense::Ge,
            s.demand_bps / MBPS,
        );
        let mut gapl = vec![(sl, 1.0)];
        gapl.extend(
            links
                .iter()
                .map(|lv| (lv.x, -topology.links[lv.link].latency_s / MS)),
        );
        m.add_row(
            format!("gapl_{i}"),
            gapl,
            Sense::Ge,
            -s.governing_pdb_s / MS,
        );

        all_vars.push(SliceVars { b, sf, sl, links });
    }
    for (link, users) in link_users {
        let cap = topology.links[link].capacity_bps / MBPS;
        m.add_row(
            format!("cap_{link}"),
            users.into_iter().map(|f| (f, 1.0)).collect(),
            Sense::Le,
            cap,
        );
    }
    Ok(SliceMilp {
        model: m,
        vars: all_vars,
        weights: *weights,
    })
}

pub fn export_mps(milp: &SliceMilp, path: &Path) -> Result<(), MilpError> {
    Ok(write_mps_file(&milp.model, path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub integrality_tol: f64,
    pub feasibility_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            abs_gap: 1e-6,
            rel_gap: 0.0,
            integrality_tol: 1e-6,
            feasibility_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NodeLimit => "node_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceResult {
    pub allocation_bps: f64,
    /// Links of the route in travel order, ending with the feeder link.
    pub route: Vec<usize>,
    pub latency_s: f64,
    /// Per-link flow; every route link carries the full allocation.
    pub link_flows_bps: Vec<(usize, f64)>,
    pub flow_gap_bps: f64,
    pub latency_gap_s: f64,
    /// Slack values exactly as the solver returned them.
    pub solver_flow_gap_bps: f64,
    pub solver_latency_gap_s: f64,
    /// Latency summed over every link the solver switched on, cycles included.
    pub solver_active_latency_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Empty when no feasible point was found.
    pub slices: Vec<SliceResult>,
    /// Solver objective (J) of the incumbent, before route clean-up.
    pub objective: Option<f64>,
    pub best_bound: f64,
    pub nodes: u64,
    pub lp_iterations: u64,
    pub solve_time: Duration,
    /// Raw column values of the incumbent.
    pub values: Option<Vec<f64>>,
}

impl Solution {
    pub fn has_incumbent(&self) -> bool {
        !self.slices.is_empty()
    }

    pub fn flow_gaps_bps(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.flow_gap_bps).collect()
    }

    pub fn latency_gaps_s(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.latency_gap_s).collect()
    }
}

/// Solves the model by branch-and-bound and turns the incumbent into one
/// simple route per slice. Links the solver switched on outside that route
/// (closed cycles) are dropped, route links carry exactly `b_i`, and the
/// gaps are recomputed from the route.
/// Relaxation-only cost per selected link, relative to the largest objective
/// coefficient: among equally good relaxation points the search prefers
/// routes with fewer links.
pub const ROUTE_TIEBREAK: f64 = 1e-6;

fn route_tiebreak(milp: &SliceMilp) -> Vec<(VarId, f64)> {
    let max_obj = milp
        .model
        .vars
        .iter()
        .map(|v| v.obj.abs())
        .fold(0.0, f64::max);
    if max_obj == 0.0 {
        return Vec::new();
    }
    let eps = ROUTE_TIEBREAK * max_obj;
    milp.vars
        .iter()
        .flat_map(|sv| &sv.links)
        .map(|lv| (lv.x, eps))
        .collect()
}

pub fn solve(
    milp: &SliceMilp,
    slices: &[Slice],
    topology: &Topology,
    opts: &SolveOptions,
) -> Result<Solution, MilpError> {
    let bnb = BnbOptions {
        time_limit: opts.time_limit,
        node_limit: opts.node_limit,
        abs_gap: opts.abs_gap,
        rel_gap: opts.rel_gap,
        integrality_tol: opts.integrality_tol,
        lp: LpOptions {
            feasibility_tol: opts.feasibility_tol,
        },
        tiebreak: route_tiebreak(milp),
        ..BnbOptions::default()
    };
    let raw = nqi_solver::solve(&milp.model, &bnb)?;
    let status = match raw.status {
        MipStatus::Optimal => SolveStatus::Optimal,
        MipStatus::Infeasible => SolveStatus::Infeasible,
        MipStatus::TimeLimit => SolveStatus::TimeLimit,
        MipStatus::NodeLimit => SolveStatus::NodeLimit,
    };
    let mut results = Vec::new();
    if let Some(values) = &raw.values {
        for (i, (sv, s)) in milp.vars.iter().zip(slices).enumerate() {
            results.push(extract(i, sv, s, values, topology)?);
        }
    }
    Ok(Solution {
        status,
        slices: results,
        objective: raw.objective,
        best_bound: raw.best_bound,
        nodes: raw.nodes,
        lp_iterations: raw.lp_iterations,
        solve_time: raw.elapsed,
        values: raw.values,
    })
}

fn extract(
    i: usize,
    sv: &SliceVars,
    slice: &Slice,
    values: &[f64],
    topology: &Topology,
) -> Result<SliceResult, MilpError> {
    let active: Vec<usize> = sv
        .links
        .iter()
        .filter(|lv| values[lv.x.0] > 0.5)
        .map(|lv| lv.link)
        .collect();
    let solver_active_latency_s = active.iter().map(|&l| topology.links[l].latency_s).sum();
    let mut route = Vec::new();
    let mut visited = BTreeSet::new();
    let mut node = slice.edge_satellite;
    loop {
        visited.insert(node);
        let outs: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&l| topology.links[l].from == node)
            .collect();
        if let Some(&feeder) = outs
            .iter()
            .find(|&&l| topology.links[l].kind == LinkKind::Feeder)
        {
            route.push(feeder);
            break;
        }
        let next = outs
            .first()
            .copied()
            .ok_or(MilpError::RouteExtraction { slice: i })?;
        node = topology.links[next].to;
        if visited.contains(&node) {
            return Err(MilpError::RouteExtraction { slice: i });
        }
        route.push(next);
    }
    let allocation_bps = (values[sv.b.0] * MBPS).clamp(0.0, slice.demand_bps);
    let latency_s: f64 = route.iter().map(|&l| topology.links[l].latency_s).sum();
    Ok(SliceResult {
        allocation_bps,
        link_flows_bps: route.iter().map(|&l| (l, allocation_bps)).collect(),
        flow_gap_bps: (slice.demand_bps - allocation_bps).max(0.0),
        latency_gap_s: (latency_s - slice.governing_pdb_s).max(0.0),
        route,
        latency_s,
        solver_flow_gap_bps: values[sv.sf.0] * MBPS,
        solver_latency_gap_s: values[sv.sl.0] * MS,
        solver_active_latency_s,
    })
}

/// One failed check found by [`verify`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub slice: Option<usize>,
    pub check: &'static str,
    pub detail: String,
}

fn close(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.abs().max(1.0)
}

/// Re-checks a solution against the routing and allocation rules using only
/// the slices and the topology (never the model matrix). `tol` is relative.
pub fn verify(
    solution: &Solution,
    slices: &[Slice],
    topology: &Topology,
    weights: &OptimizationWeights,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if !solution.has_incumbent() {
        return out;
    }
    if solution.slices.len() != slices.len() {
        out.push(Violation {
            slice: None,
            check: "shape",
            detail: "slice count mismatch".into(),
        });
        return out;
    }
    let mut load: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, (r, s)) in solution.slices.iter().zip(slices).enumerate() {
        let mut fail = |check: &'static str, detail: String| {
            out.push(Violation {
                slice: Some(i),
                check,
                detail,
            })
        };
        let a = s.edge_satellite;
        let Some(&g) = topology.ground_stations().get(s.destination) else {
            fail(
                "destination",
                format!("unknown destination {}", s.destination),
            );
            continue;
        };
        let b = r.allocation_bps;
        let x: BTreeSet<usize> = r.route.iter().copied().collect();
        let f: BTreeMap<usize, f64> = r.link_flows_bps.iter().copied().collect();
        if x.len() != r.route.len() {
            fail("path", "route repeats a link".into());
        }
        let mut known = true;
        for &l in x.iter().chain(f.keys()) {
            match topology.links.get(l) {
                None => {
                    fail("link", format!("unknown link {l}"));
                    known = false;
                }
                Some(link) if link.kind == LinkKind::User => {
                    fail("link", format!("user link {l} used for routing"))
                }
                Some(link) if link.kind == LinkKind::Feeder && link.to != g => fail(
                    "viii",
                    format!("feeder {l} leads to another ground station"),
                ),
                Some(_) => {}
            }
        }
        if !known {
            continue;
        }
        // (i) flow only on active links, within capacity
        for (&l, &v) in &f {
            let c = topology.links[l].capacity_bps;
            let bound = if x.contains(&l) { c } else { 0.0 };
            if v < -tol * c || v > bound + tol * c {
                fail(
                    "i",
                    format!("link {l}: flow {v} with x = {}", x.contains(&l) as u8),
                );
            }
            *load.entry(l).or_default() += v.max(0.0);
        }
        let flow = |l: usize| f.get(&l).copied().unwrap_or(0.0);
        let out_sum = |n: usize| topology.links_from(n).map(|l| flow(l.id)).sum::<f64>();
        let in_sum = |n: usize| {
            topology
                .links_into(n)
                .filter(|l| l.kind != LinkKind::User)
                .map(|l| flow(l.id))
                .sum::<f64>()
        };
        if !close(out_sum(a), b, s.demand_bps, tol) {
            fail(
                "route",
                format!("gross outflow {} at edge vs b = {b}", out_sum(a)),
            );
        }
        for &sat in topology.satellites() {
            let net = out_sum(sat) - in_sum(sat);
            let want = if sat == a { b } else { 0.0 };
            if !close(net, want, s.demand_bps, tol) {
                fail(
                    if sat == a { "iii" } else { "iv" },
                    format!("satellite {sat}: net outflow {net}, expected {want}"),
                );
            }
            let x_out = topology
                .links_from(sat)
                .filter(|l| x.contains(&l.id))
                .count() as i64;
            let x_in = topology
                .links_into(sat)
                .filter(|l| x.contains(&l.id))
                .count() as i64;
            if x_out - x_in != (sat == a) as i64 {
                fail(
                    "vi",
                    format!("satellite {sat}: {x_out} active out, {x_in} active in"),
                );
            }
            let isl = |it: &mut dyn Iterator<Item = &crate::constellation::Link>| {
                it.filter(|l| l.kind == LinkKind::InterSatellite && x.contains(&l.id))
                    .count()
            };
            if isl(&mut topology.links_from(sat)) > 1 || isl(&mut topology.links_into(sat)) > 1 {
                fail(
                    "vii",
                    format!("satellite {sat} has more than one active ISL in or out"),
                );
            }
        }
        for &gs in topology.ground_stations() {
            let received = in_sum(gs);
            let want = if gs == g { b } else { 0.0 };
            if !close(received, want, s.demand_bps, tol) {
                fail(
                    "v",
                    format!("ground station {gs} receives {received}, expected {want}"),
                );
            }
        }
        if topology.links_into(g).filter(|l| x.contains(&l.id)).count() > 1 {
            fail("viii", "more than one feeder into the destination".into());
        }
        if b < -tol * s.demand_bps || b > s.demand_bps * (1.0 + tol) {
            fail(
                "demand",
                format!("allocation {b} outside [0, {}]", s.demand_bps),
            );
        }
        let latency: f64 = x.iter().map(|&l| topology.links[l].latency_s).sum();
        if !close(latency, r.latency_s, r.latency_s, tol) {
            fail(
                "latency",
                format!("reported {} vs route sum {latency}", r.latency_s),
            );
        }
        if r.flow_gap_bps < 0.0 || r.flow_gap_bps + tol * s.demand_bps.max(1.0) < s.demand_bps - b {
            fail(
                "gap_f",
                format!("flow gap {} below demand shortfall", r.flow_gap_bps),
            );
        }
        if r.latency_gap_s < 0.0 || r.latency_gap_s + tol < latency - s.governing_pdb_s {
            fail(
                "gap_l",
                format!("latency gap {} below budget overrun", r.latency_gap_s),
            );
        }
        // the active links must be exactly one simple path from the edge to the destination
        let mut node = a;
        let mut seen = BTreeSet::from([a]);
        let mut used = 0;
        loop {
            let next: Vec<_> = topology
                .links_from(node)
                .filter(|l| x.contains(&l.id))
                .collect();
            match next.as_slice() {
                [l] => {
                    used += 1;
                    if l.to == g {
                        break;
                    }
                    if !seen.insert(l.to) {
                        fail("path", format!("route revisits node {}", l.to));
                        break;
                    }
                    node = l.to;
                }
                [] => {
                    fail("path", format!("route stops at node {node}"));
                    break;
                }
                _ => {
                    fail("path", format!("route branches at node {node}"));
                    break;
                }
            }
        }
        if used != x.len() {
            fail(
                "path",
                format!("{} active links off the route", x.len() - used.min(x.len())),
            );
        }
    }
    for (l, total) in load {
        let c = topology.links[l].capacity_bps;
        if total > c * (1.0 + tol) {
            out.push(Violation {
                slice: None,
                check: "ii",
                detail: format!("link {l}: load {total} over capacity {c}"),
            });
        }
    }
    let cost = evaluate_cost(
        &solution.flow_gaps_bps(),
        &solution.latency_gaps_s(),
        weights,
    );
    if let Some(obj) = solution.objective {
        // clean-up may only lower the cost
        if cost.total > obj + 1e-6 {
            out.push(Violation {
                slice: None,
                check: "objective",
                detail: format!("recomputed J {} above solver {obj}", cost.total),
            });
        }
    }
    out
}
