//! Slice-edge satellites and NTN slices.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::constellation::Topology;
use crate::qos::{self, NtnTraffic, QosError, QosId, CATALOG};

#[derive(Debug, Error, PartialEq)]
pub enum SliceError {
    #[error("gNB {0} has no user link, so no slice-edge satellite")]
    NoEdge(usize),
    #[error(
        "NTN traffic {traffic} carries NQI {nqi}, which no group covers at satellite {satellite}"
    )]
    Uncovered {
        traffic: usize,
        nqi: QosId,
        satellite: usize,
    },
    #[error("NQI {0} appears in more than one group")]
    Overlap(QosId),
    #[error("empty NQI group")]
    EmptyGroup,
    #[error(transparent)]
    Qos(#[from] QosError),
}

/// NQI groups: a default partition plus optional per-satellite overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePolicy {
    default: Vec<Vec<QosId>>,
    per_satellite: BTreeMap<usize, Vec<Vec<QosId>>>,
}

impl Default for SlicePolicy {
    /// One group per NQI.
    fn default() -> Self {
        Self {
            default: CATALOG.iter().map(|e| vec![e.id]).collect(),
            per_satellite: BTreeMap::new(),
        }
    }
}

fn check_groups(groups: &[Vec<QosId>]) -> Result<(), SliceError> {
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.is_empty() {
            return Err(SliceError::EmptyGroup);
        }
        for &q in g {
            qos::entry(q)?;
            if !seen.insert(q) {
                return Err(SliceError::Overlap(q));
            }
        }
    }
    Ok(())
}

impl SlicePolicy {
    pub fn new(default: Vec<Vec<QosId>>) -> Result<Self, SliceError> {
        check_groups(&default)?;
        Ok(Self {
            default,
            per_satellite: BTreeMap::new(),
        })
    }

    pub fn with_satellite(
        mut self,
        satellite: usize,
        groups: Vec<Vec<QosId>>,
    ) -> Result<Self, SliceError> {
        check_groups(&groups)?;
        self.per_satellite.insert(satellite, groups);
        Ok(self)
    }

    pub fn groups_at(&self, satellite: usize) -> &[Vec<QosId>] {
        self.per_satellite.get(&satellite).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice {
    pub id: usize,
    pub edge_satellite: usize,
    pub nqi_group: Vec<QosId>,
    pub governing_pdb_s: f64,
    /// Index into the ground-station list.
    pub destination: usize,
    /// NTN traffic ids in ascending order.
    pub members: Vec<usize>,
    pub demand_bps: f64,
}

/// Slice-edge satellite of every gNB (indexed by gNB), i.e. the satellite
/// its user link lands on.
pub fn assign_slice_edges(topology: &Topology) -> Result<Vec<usize>, SliceError> {
    (0..topology.gnbs().len())
        .map(|j| {
            topology
                .user_link(j)
                .map(|l| l.to)
                .ok_or(SliceError::NoEdge(j))
        })
        .collect()
}

/// One slice per (edge satellite, NQI group, destination) with positive demand.
pub fn build_slices(
    traffic: &[NtnTraffic],
    policy: &SlicePolicy,
    edges: &[usize],
) -> Result<Vec<Slice>, SliceError> {
    let mut buckets: BTreeMap<(usize, usize, usize), (f64, Vec<usize>)> = BTreeMap::new();
    for t in traffic {
        let sat = *edges.get(t.gnb).ok_or(SliceError::NoEdge(t.gnb))?;
        let group = policy
            .groups_at(sat)
            .iter()
            .position(|g| g.contains(&t.nqi))
            .ok_or(SliceError::Uncovered {
                traffic: t.id,
                nqi: t.nqi,
                satellite: sat,
            })?;
        let slot = buckets.entry((sat, group, t.destination)).or_default();
        slot.0 += t.demand_bps;
        slot.1.push(t.id);
    }
    let mut slices = Vec::new();
    for ((sat, group, destination), (demand, mut members)) in buckets {
        if demand <= 0.0 {
            continue;
        }
        members.sort_unstable();
        let nqi_group = policy.groups_at(sat)[group].clone();
        let governing_pdb_s = nqi_group
            .iter()
            .map(|&q| qos::pdb_s(q))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        slices.push(Slice {
            id: slices.len(),
            edge_satellite: sat,
            nqi_group,
            governing_pdb_s,
            destination,
            members,
            demand_bps: demand,
        });
    }
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traffic(id: usize, gnb: usize, nqi: u16, dest: usize, demand: f64) -> NtnTraffic {
        NtnTraffic {
            id,
            gnb,
            nqi: QosId(nqi),
            demand_bps: demand,
            destination: dest,
            members: vec![id],
        }
    }

    #[test]
    fn two_nqis_two_destinations_make_four_slices() {
        let t = [
            traffic(0, 0, 65, 0, 1e6),
            traffic(1, 0, 65, 1, 1e6),
            traffic(2, 0, 4, 0, 1e6),
            traffic(3, 0, 4, 1, 1e6),
        ];
        let slices = build_slices(&t, &SlicePolicy::default(), &[5]).unwrap();
        assert_eq!(slices.len(), 4);
        assert!(slices.iter().all(|s| s.edge_satellite == 5));
        assert_eq!(
            slices.iter().map(|s| s.id).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn empty_traffic_gives_no_slices() {
        assert!(build_slices(&[], &SlicePolicy::default(), &[])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn shared_edge_sums_demands() {
        let t = [traffic(0, 0, 3, 1, 2.5e6), traffic(1, 1, 3, 1, 4e6)];
        let slices = build_slices(&t, &SlicePolicy::default(), &[7, 7]).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].demand_bps, 6.5e6);
        assert_eq!(slices[0].members, vec![0, 1]);
        assert_eq!(slices[0].governing_pdb_s, 0.050);
    }

    #[test]
    fn grouped_policy_takes_strictest_budget() {
        let policy = SlicePolicy::new(vec![vec![QosId(4), QosId(65)], vec![QosId(80)]]).unwrap();
        let t = [traffic(0, 0, 4, 0, 1e6), traffic(1, 0, 65, 0, 1e6)];
        let slices = build_slices(&t, &policy, &[0]).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].governing_pdb_s, 0.075);
        let missing = [traffic(0, 0, 1, 0, 1e6)];
        assert!(matches!(
            build_slices(&missing, &policy, &[0]),
            Err(SliceError::Uncovered { .. })
        ));
    }

    #[test]
    fn zero_demand_slices_are_dropped() {
        let t = [traffic(0, 0, 4, 0, 0.0), traffic(1, 0, 80, 0, 1e6)];
        let slices = build_slices(&t, &SlicePolicy::default(), &[0]).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].nqi_group, vec![QosId(80)]);
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let r = SlicePolicy::new(vec![vec![QosId(4)], vec![QosId(4), QosId(1)]]);
        assert_eq!(r, Err(SliceError::Overlap(QosId(4))));
    }
}
