//! LP-based branch-and-bound for binary programs.
//!
//! Search order: a depth-first dive until the first incumbent, where both
//! children are solved and the one with the lower bound is followed, then
//! best-bound selection with ties broken by depth and then by creation order,
//! newest first. Branching picks the most fractional binary, lowest index
//! first. Child LPs are warm-started from the parent's simplex state; when
//! too many open nodes hold a state, new nodes instead replay their fixings
//! from the root state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::debug;
use thiserror::Error;

use crate::lp::{
    solve_relaxation, solve_relaxation_fixed, LpError, LpOptions, LpOutcome, Relaxation,
};
use crate::model::{MipModel, VarId, VarKind};

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    /// Search stops once `incumbent - bound <= max(abs_gap, rel_gap * |incumbent|)`.
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub integrality_tol: f64,
    pub lp: LpOptions,
    /// Cap on open nodes that keep a private warm-start state.
    pub max_stored_states: usize,
    /// Small non-negative costs added to binary columns inside the
    /// relaxations only, to pick among equally good relaxation points. Node
    /// bounds are lowered by the total of these costs, so they stay valid
    /// for the original objective; incumbents are always scored unperturbed.
    pub tiebreak: Vec<(VarId, f64)>,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            abs_gap: 1e-6,
            rel_gap: 0.0,
            integrality_tol: 1e-6,
            lp: LpOptions::default(),
            max_stored_states: 128,
            tiebreak: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Incumbent objective, if one was found.
    pub objective: Option<f64>,
    /// Proven lower bound on the optimum.
    pub best_bound: f64,
    /// Incumbent point with binaries exactly 0 or 1.
    pub values: Option<Vec<f64>>,
    pub nodes: u64,
    pub lp_iterations: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Error)]
pub enum BnbError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("relaxation is unbounded")]
    Unbounded,
    #[error("tie-break cost on {0:?} must be finite, non-negative and on a binary column")]
    Tiebreak(VarId),
}

type Fixings = Vec<(VarId, f64)>;

struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(VarId, f64)>,
    state: NodeState,
}

enum NodeState {
    /// Replay every fixing from the root state.
    Replay,
    /// Solved parent state; the last fixing still has to be applied.
    Parent(Arc<Relaxation>),
    /// The node's own relaxation, solved when it was created.
    Solved(Relaxation),
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound on top; equal bounds go to the
    // deepest node, then the newest, so plateaus are searched depth-first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| self.fixings.len().cmp(&other.fixings.len()))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

struct Search<'a> {
    model: &'a MipModel,
    /// `model` with the tie-break costs; every LP is solved on this one.
    relaxed: &'a MipModel,
    bound_shift: f64,
    opts: &'a BnbOptions,
    binaries: Vec<VarId>,
    root: Arc<Relaxation>,
    incumbent: Option<(f64, Vec<f64>)>,
    nodes: u64,
    lp_iterations: u64,
    seq: u64,
    stored_states: usize,
}

enum Evaluated {
    Pruned,
    /// Children in push order: the one to explore first comes last.
    Branched(Vec<Node>),
}

/// Solves `model` to the configured gap.
pub fn solve(model: &MipModel, opts: &BnbOptions) -> Result<MipSolution, BnbError> {
    let started = Instant::now();
    let perturbed;
    let mut bound_shift = 0.0;
    let relaxed = if opts.tiebreak.is_empty() {
        model
    } else {
        let mut m = model.clone();
        for &(var, cost) in &opts.tiebreak {
            let v = m.vars.get_mut(var.0).ok_or(BnbError::Tiebreak(var))?;
            if v.kind != VarKind::Binary || !(cost >= 0.0 && cost.is_finite()) {
                return Err(BnbError::Tiebreak(var));
            }
            v.obj += cost;
            bound_shift += cost;
        }
        perturbed = m;
        &perturbed
    };
    let root = match solve_relaxation(relaxed, &opts.lp)? {
        LpOutcome::Optimal(r) => r,
        LpOutcome::Infeasible => {
            return Ok(MipSolution {
                status: MipStatus::Infeasible,
                objective: None,
                best_bound: f64::INFINITY,
                values: None,
                nodes: 1,
                lp_iterations: 0,
                elapsed: started.elapsed(),
            })
        }
        LpOutcome::Unbounded => return Err(BnbError::Unbounded),
    };
    let binaries = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| VarId(i))
        .collect();
    debug!(
        "root bound {:.9e}, {} binaries",
        root.objective() - bound_shift,
        model.num_binaries()
    );
    let root = Arc::new(root);
    let search = Search {
        model,
        relaxed,
        bound_shift,
        opts,
        binaries,
        root: Arc::clone(&root),
        incumbent: None,
        nodes: 0,
        lp_iterations: root.iterations(),
        seq: 1,
        stored_states: 0,
    };
    search.run(root, started)
}

impl<'a> Search<'a> {
    fn gap_closed(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some((obj, _)) => obj - bound <= self.opts.abs_gap.max(self.opts.rel_gap * obj.abs()),
            None => false,
        }
    }

    fn limit_hit(&self, started: Instant) -> Option<MipStatus> {
        if let Some(limit) = self.opts.time_limit {
            if started.elapsed() >= limit {
                return Some(MipStatus::TimeLimit);
            }
        }
        match self.opts.node_limit {
            Some(limit) if self.nodes >= limit => Some(MipStatus::NodeLimit),
            _ => None,
        }
    }

    fn run(mut self, root: Arc<Relaxation>, started: Instant) -> Result<MipSolution, BnbError> {
        let mut dive: Vec<Node> = Vec::new();
        let mut heap: BinaryHeap<Node> = BinaryHeap::new();

        if let Evaluated::Branched(children) = self.evaluate(&root, &[])? {
            dive.extend(children);
        }
        drop(root);

        loop {
            let next = if self.incumbent.is_none() {
                dive.pop()
            } else {
                heap.extend(dive.drain(..));
                heap.pop()
            };
            let Some(node) = next else { break };

            if self.gap_closed(node.bound) {
                // Every remaining node is at least as bad.
                if self.incumbent.is_some() {
                    heap.clear();
                    break;
                }
                continue;
            }
            if let Some(status) = self.limit_hit(started) {
                let open_bound = heap
                    .iter()
                    .chain(dive.iter())
                    .map(|n| n.bound)
                    .fold(node.bound, f64::min);
                return Ok(self.finish(status, open_bound, started));
            }
            if self.nodes > 0 && self.nodes.is_multiple_of(500) {
                let open = heap
                    .iter()
                    .chain(dive.iter())
                    .map(|n| n.bound)
                    .fold(node.bound, f64::min);
                debug!(
                    "{} nodes, {} open, bound {open:.9e}, incumbent {:?}",
                    self.nodes,
                    heap.len() + dive.len(),
                    self.incumbent.as_ref().map(|i| i.0)
                );
            }
            if !matches!(node.state, NodeState::Replay) {
                self.stored_states -= 1;
            }
            let Some(relaxation) = self.node_relaxation(node)? else {
                continue;
            };
            let fixings = relaxation.1;
            let relaxation = Arc::new(relaxation.0);
            match self.evaluate(&relaxation, &fixings)? {
                Evaluated::Pruned => {}
                Evaluated::Branched(children) => {
                    if self.incumbent.is_none() {
                        dive.extend(children);
                    } else {
                        heap.extend(children);
                    }
                }
            }
        }
        let bound = self.incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
        let status = if self.incumbent.is_some() {
            MipStatus::Optimal
        } else {
            MipStatus::Infeasible
        };
        Ok(self.finish(status, bound, started))
    }

    fn finish(self, status: MipStatus, open_bound: f64, started: Instant) -> MipSolution {
        let best_bound = match &self.incumbent {
            Some((obj, _)) => open_bound.min(*obj),
            None => open_bound,
        };
        let (objective, values) = match self.incumbent {
            Some((o, v)) => (Some(o), Some(v)),
            None => (None, None),
        };
        debug!(
            "bnb finished: {status:?}, {} nodes, {} pivots",
            self.nodes, self.lp_iterations
        );
        MipSolution {
            status,
            objective,
            best_bound,
            values,
            nodes: self.nodes,
            lp_iterations: self.lp_iterations,
            elapsed: started.elapsed(),
        }
    }

    /// Solves the LP of `node`; `None` if infeasible.
    fn node_relaxation(&mut self, node: Node) -> Result<Option<(Relaxation, Fixings)>, BnbError> {
        let Node { fixings, state, .. } = node;
        let (state, pending): (Relaxation, &[(VarId, f64)]) = match state {
            NodeState::Solved(r) => return Ok(Some((r, fixings))),
            NodeState::Parent(p) => (Arc::unwrap_or_clone(p), &fixings[fixings.len() - 1..]),
            NodeState::Replay => ((*self.root).clone(), &fixings[..]),
        };
        let before = state.iterations();
        let mut state = state;
        for &(var, value) in pending {
            let spent = state.iterations().saturating_sub(before);
            let outcome = match state.fix(self.relaxed, var, value, &self.opts.lp) {
                Ok(o) => o,
                Err(e @ (LpError::Numerical(_) | LpError::Inaccurate { .. })) => {
                    debug!("warm start failed ({e}); re-solving node from scratch");
                    self.lp_iterations += spent;
                    return match self.cold_solve(&fixings)? {
                        LpOutcome::Optimal(cold) => Ok(Some((cold, fixings))),
                        LpOutcome::Infeasible => {
                            self.nodes += 1;
                            Ok(None)
                        }
                        LpOutcome::Unbounded => Err(BnbError::Unbounded),
                    };
                }
                Err(e) => return Err(e.into()),
            };
            match outcome {
                LpOutcome::Optimal(next) => state = next,
                LpOutcome::Infeasible => {
                    self.nodes += 1;
                    return Ok(None);
                }
                LpOutcome::Unbounded => return Err(BnbError::Unbounded),
            }
        }
        self.lp_iterations += state.iterations().saturating_sub(before);
        Ok(Some((state, fixings)))
    }

    fn cold_solve(&mut self, fixings: &[(VarId, f64)]) -> Result<LpOutcome, BnbError> {
        let outcome = solve_relaxation_fixed(self.relaxed, fixings, &self.opts.lp)?;
        if let LpOutcome::Optimal(r) = &outcome {
            self.lp_iterations += r.iterations();
        }
        Ok(outcome)
    }

    fn evaluate(
        &mut self,
        relaxation: &Arc<Relaxation>,
        fixings: &[(VarId, f64)],
    ) -> Result<Evaluated, BnbError> {
        self.nodes += 1;
        let bound = relaxation.objective() - self.bound_shift;
        if self.gap_closed(bound) {
            return Ok(Evaluated::Pruned);
        }
        let tol = self.opts.integrality_tol;
        let mut branch: Option<(VarId, f64, f64)> = None;
        for &var in &self.binaries {
            let value = relaxation.value(var);
            let frac = value - value.floor();
            if frac <= tol || frac >= 1.0 - tol {
                continue;
            }
            let distance = (frac - 0.5).abs();
            if branch.is_none_or(|(_, _, best)| distance < best) {
                branch = Some((var, value, distance));
            }
        }
        let Some((var, value, _)) = branch else {
            self.accept_incumbent(relaxation, fixings)?;
            return Ok(Evaluated::Pruned);
        };

        let preferred = if value >= 0.5 { 1.0 } else { 0.0 };
        if self.incumbent.is_none() {
            return self.probe_children(relaxation, fixings, var, preferred);
        }
        let store = self.stored_states + 2 <= self.opts.max_stored_states;
        let parent = store.then(|| Arc::clone(relaxation));
        if store {
            self.stored_states += 2;
        }
        let mut make = |v: f64| {
            let mut f = fixings.to_vec();
            f.push((var, v));
            self.seq += 1;
            let state = parent.clone().map_or(NodeState::Replay, NodeState::Parent);
            Node {
                bound,
                seq: self.seq,
                fixings: f,
                state,
            }
        };
        let other = make(1.0 - preferred);
        let first = make(preferred);
        Ok(Evaluated::Branched(vec![other, first]))
    }

    /// Dive step: solves both children and continues with the one whose
    /// bound is lower (the rounding direction on ties). Each child keeps its
    /// own bound, and its solved state while the state budget allows.
    fn probe_children(
        &mut self,
        relaxation: &Arc<Relaxation>,
        fixings: &[(VarId, f64)],
        var: VarId,
        preferred: f64,
    ) -> Result<Evaluated, BnbError> {
        let mut children = Vec::with_capacity(2);
        for value in [1.0 - preferred, preferred] {
            let mut f = fixings.to_vec();
            f.push((var, value));
            let node = Node {
                bound: f64::NEG_INFINITY,
                seq: 0,
                fixings: f,
                state: NodeState::Parent(Arc::clone(relaxation)),
            };
            let Some((state, f)) = self.node_relaxation(node)? else {
                continue;
            };
            self.seq += 1;
            let bound = state.objective() - self.bound_shift;
            let state = if self.stored_states < self.opts.max_stored_states {
                self.stored_states += 1;
                NodeState::Solved(state)
            } else {
                NodeState::Replay
            };
            children.push(Node {
                bound,
                seq: self.seq,
                fixings: f,
                state,
            });
        }
        if children.len() == 2 && children[0].bound < children[1].bound {
            children.swap(0, 1);
        }
        Ok(Evaluated::Branched(children))
    }

    /// Records an integral LP point, first pinning binaries that are only
    /// integral within tolerance so the continuous part is consistent with
    /// exact 0/1 values.
    fn accept_incumbent(
        &mut self,
        relaxation: &Arc<Relaxation>,
        fixings: &[(VarId, f64)],
    ) -> Result<(), BnbError> {
        let mut state = (**relaxation).clone();
        let mut pinned: Vec<VarId> = fixings.iter().map(|f| f.0).collect();
        for _round in 0..4 {
            let loose: Vec<(VarId, f64)> = self
                .binaries
                .iter()
                .map(|&v| (v, state.value(v)))
                .filter(|&(v, x)| x != 0.0 && x != 1.0 && !pinned.contains(&v))
                .collect();
            if loose.is_empty() {
                break;
            }
            let mut polished = Some(state.clone());
            for &(var, x) in &loose {
                let Some(s) = polished.take() else { break };
                match s.fix(self.relaxed, var, x.round(), &self.opts.lp) {
                    Ok(LpOutcome::Optimal(next)) => polished = Some(next),
                    Ok(_) => {}
                    Err(e) => debug!("polish stopped: {e}"),
                }
                pinned.push(var);
            }
            match polished {
                Some(next)
                    if self.binaries.iter().all(|&v| {
                        let x = next.value(v);
                        (x - x.round()).abs() <= self.opts.integrality_tol
                    }) =>
                {
                    state = next
                }
                _ => break,
            }
        }
        let mut values = state.values();
        for &v in &self.binaries {
            values[v.0] = values[v.0].round();
        }
        let objective = self.model.objective_value(&values);
        let better = self
            .incumbent
            .as_ref()
            .is_none_or(|(best, _)| objective < *best);
        if better {
            debug!("incumbent {objective:.9e} at node {}", self.nodes);
            self.incumbent = Some((objective, values));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sense;

    fn knapsack() -> MipModel {
        // max 5a + 4b + 3c  s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        let mut m = MipModel::new("knap");
        let a = m.add_binary("a", -5.0);
        let b = m.add_binary("b", -4.0);
        let c = m.add_binary("c", -3.0);
        m.add_row("r1", vec![(a, 2.0), (b, 3.0), (c, 1.0)], Sense::Le, 5.0);
        m.add_row("r2", vec![(a, 4.0), (b, 1.0), (c, 2.0)], Sense::Le, 11.0);
        m.add_row("r3", vec![(a, 3.0), (b, 4.0), (c, 2.0)], Sense::Le, 8.0);
        m
    }

    #[test]
    fn small_knapsack_matches_enumeration() {
        let m = knapsack();
        let sol = solve(&m, &BnbOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        let mut best = f64::INFINITY;
        for mask in 0..8u32 {
            let x: Vec<f64> = (0..3).map(|i| ((mask >> i) & 1) as f64).collect();
            if m.max_violation(&x) == 0.0 {
                best = best.min(m.objective_value(&x));
            }
        }
        assert!((sol.objective.unwrap() - best).abs() < 1e-9);
        assert!(sol.best_bound <= sol.objective.unwrap() + 1e-12);
    }

    #[test]
    fn infeasible_integer_program() {
        let mut m = MipModel::new("inf");
        let x = m.add_binary("x", 1.0);
        let y = m.add_binary("y", 1.0);
        // x + y = 1 and x = y has only the fractional solution 0.5
        m.add_row("sum", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 1.0);
        m.add_row("same", vec![(x, 1.0), (y, -1.0)], Sense::Eq, 0.0);
        let sol = solve(&m, &BnbOptions::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(sol.values.is_none());
    }

    #[test]
    fn node_limit_reports_incumbent_and_bound() {
        let m = knapsack();
        let opts = BnbOptions {
            node_limit: Some(1),
            ..BnbOptions::default()
        };
        let sol = solve(&m, &opts).unwrap();
        assert!(matches!(
            sol.status,
            MipStatus::NodeLimit | MipStatus::Optimal
        ));
        if let Some(obj) = sol.objective {
            assert!(sol.best_bound <= obj + 1e-12);
        }
    }

    #[test]
    fn node_order_is_best_bound_then_deepest() {
        let mut heap = BinaryHeap::new();
        let fix = |n: usize| vec![(VarId(0), 0.0); n];
        for (bound, depth, seq) in [
            (2.0, 5, 1),
            (1.0, 1, 3),
            (1.0, 2, 2),
            (1.0, 2, 4),
            (3.0, 0, 0),
        ] {
            heap.push(Node {
                bound,
                seq,
                fixings: fix(depth),
                state: NodeState::Replay,
            });
        }
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop().map(|n| n.seq)).collect();
        assert_eq!(order, vec![4, 2, 3, 1, 0]);
    }
}
