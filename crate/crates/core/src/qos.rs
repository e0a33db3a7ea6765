//! QoS identifier catalog, 5QI-to-NQI mapping conditions, traffic
//! generation and per-gNB aggregation.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A QoS identifier value; the same numbering serves 5QIs and NQIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QosId(pub u16);

impl fmt::Display for QosId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResourceType {
    Gbr,
    NonGbr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosEntry {
    pub id: QosId,
    pub pdb_s: f64,
    pub resource: ResourceType,
}

/// The simulated identifiers, ordered by increasing delay budget.
pub const CATALOG: [QosEntry; 7] = [
    QosEntry {
        id: QosId(80),
        pdb_s: 0.010,
        resource: ResourceType::NonGbr,
    },
    QosEntry {
        id: QosId(3),
        pdb_s: 0.050,
        resource: ResourceType::Gbr,
    },
    QosEntry {
        id: QosId(65),
        pdb_s: 0.075,
        resource: ResourceType::Gbr,
    },
    QosEntry {
        id: QosId(1),
        pdb_s: 0.100,
        resource: ResourceType::Gbr,
    },
    QosEntry {
        id: QosId(2),
        pdb_s: 0.150,
        resource: ResourceType::Gbr,
    },
    QosEntry {
        id: QosId(70),
        pdb_s: 0.200,
        resource: ResourceType::NonGbr,
    },
    QosEntry {
        id: QosId(4),
        pdb_s: 0.300,
        resource: ResourceType::Gbr,
    },
];

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("QoS identifier {0} is not in the catalog")]
    UnknownId(QosId),
    #[error("mapping condition {0} does not exist (built-in conditions are 1 to 6)")]
    UnknownCondition(u8),
    #[error("mapping `{name}` has no image for 5QI {id}")]
    NotInDomain { name: String, id: QosId },
    #[error("mapping `{name}` lists 5QI {id} more than once")]
    DuplicateEntry { name: String, id: QosId },
    #[error("traffic generation needs at least one destination")]
    NoDestinations,
    #[error("traffic generation needs positive counts and demand")]
    InvalidCounts,
    #[error("aggregation input mixes gNBs {0} and {1}")]
    MixedGnb(usize, usize),
}

pub fn entry(id: QosId) -> Result<&'static QosEntry, QosError> {
    CATALOG
        .iter()
        .find(|e| e.id == id)
        .ok_or(QosError::UnknownId(id))
}

pub fn pdb_s(id: QosId) -> Result<f64, QosError> {
    entry(id).map(|e| e.pdb_s)
}

/// A total 5QI-to-NQI function over the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingCondition {
    pub name: String,
    table: BTreeMap<QosId, QosId>,
}

impl MappingCondition {
    pub fn builtin(id: u8) -> Result<Self, QosError> {
        let q = QosId;
        let pairs: Vec<(u16, u16)> = match id {
            1 => CATALOG.iter().map(|e| (e.id.0, 1)).collect(),
            2 => CATALOG.iter().map(|e| (e.id.0, 4)).collect(),
            3 => vec![(80, 65), (3, 65), (65, 65), (1, 2), (2, 2), (70, 4), (4, 4)],
            4 => vec![
                (80, 80),
                (3, 65),
                (65, 65),
                (1, 1),
                (2, 70),
                (70, 70),
                (4, 4),
            ],
            5 => CATALOG.iter().map(|e| (e.id.0, e.id.0)).collect(),
            6 => vec![(80, 4), (3, 70), (65, 2), (1, 1), (2, 65), (70, 3), (4, 80)],
            other => return Err(QosError::UnknownCondition(other)),
        };
        Self::custom(id.to_string(), pairs.into_iter().map(|(a, b)| (q(a), q(b))))
    }

    /// Builds a mapping from explicit pairs; it must cover every catalog
    /// 5QI exactly once and map into the catalog.
    pub fn custom(
        name: impl Into<String>,
        pairs: impl IntoIterator<Item = (QosId, QosId)>,
    ) -> Result<Self, QosError> {
        let name = name.into();
        let mut table = BTreeMap::new();
        for (from, to) in pairs {
            entry(from)?;
            entry(to)?;
            if table.insert(from, to).is_some() {
                return Err(QosError::DuplicateEntry { name, id: from });
            }
        }
        if let Some(missing) = CATALOG.iter().find(|e| !table.contains_key(&e.id)) {
            return Err(QosError::NotInDomain {
                name,
                id: missing.id,
            });
        }
        Ok(Self { name, table })
    }

    pub fn map(&self, five_qi: QosId) -> Result<QosId, QosError> {
        self.table
            .get(&five_qi)
            .copied()
            .ok_or_else(|| QosError::NotInDomain {
                name: self.name.clone(),
                id: five_qi,
            })
    }
}

/// Free-function form of [`MappingCondition::map`].
pub fn map_5qi_to_nqi(cond: &MappingCondition, five_qi: QosId) -> Result<QosId, QosError> {
    cond.map(five_qi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flow5G {
    pub id: usize,
    pub gnb: usize,
    pub ue: usize,
    pub five_qi: QosId,
    pub demand_bps: f64,
    /// Index into the ground-station list.
    pub destination: usize,
}

/// Flows of one gNB sharing an NQI and destination, carried as one NTN traffic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NtnTraffic {
    pub id: usize,
    pub gnb: usize,
    pub nqi: QosId,
    pub demand_bps: f64,
    pub destination: usize,
    /// Flow ids in ascending order.
    pub members: Vec<usize>,
}

/// Uniform 5QI and destination per flow. Every UE draws from its own
/// random stream, so the first `k` flows of a UE do not depend on
/// `flows_per_ue`.
pub fn generate_traffic(
    n_gnbs: usize,
    ues_per_gnb: usize,
    flows_per_ue: usize,
    demand_per_flow_bps: f64,
    destinations: &[usize],
    seed: u64,
) -> Result<Vec<Flow5G>, QosError> {
    if destinations.is_empty() {
        return Err(QosError::NoDestinations);
    }
    if n_gnbs == 0
        || ues_per_gnb == 0
        || flows_per_ue == 0
        || !demand_per_flow_bps.is_finite()
        || demand_per_flow_bps <= 0.0
    {
        return Err(QosError::InvalidCounts);
    }
    let mut flows = Vec::with_capacity(n_gnbs * ues_per_gnb * flows_per_ue);
    for gnb in 0..n_gnbs {
        for ue in 0..ues_per_gnb {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((gnb * ues_per_gnb + ue) as u64);
            for _ in 0..flows_per_ue {
                let five_qi = CATALOG[rng.random_range(0..CATALOG.len())].id;
                let destination = destinations[rng.random_range(0..destinations.len())];
                flows.push(Flow5G {
                    id: flows.len(),
                    gnb,
                    ue,
                    five_qi,
                    demand_bps: demand_per_flow_bps,
                    destination,
                });
            }
        }
    }
    Ok(flows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnbAggregate {
    pub traffic: Vec<NtnTraffic>,
    /// Factor applied to every demand so the total fits the user link (1 when it already fits).
    pub scale: f64,
}

impl GnbAggregate {
    pub fn clipped(&self) -> bool {
        self.scale < 1.0
    }
}

/// Groups one gNB's flows by (NQI, destination). Traffic ids are local
/// (0-based); [`aggregate_all`] renumbers them.
pub fn aggregate_at_gnb(
    flows: &[Flow5G],
    cond: &MappingCondition,
    user_link_capacity_bps: f64,
) -> Result<GnbAggregate, QosError> {
    let Some(first) = flows.first() else {
        return Ok(GnbAggregate {
            traffic: Vec::new(),
            scale: 1.0,
        });
    };
    let mut groups: BTreeMap<(QosId, usize), (f64, Vec<usize>)> = BTreeMap::new();
    for f in flows {
        if f.gnb != first.gnb {
            return Err(QosError::MixedGnb(first.gnb, f.gnb));
        }
        let nqi = cond.map(f.five_qi)?;
        let slot = groups.entry((nqi, f.destination)).or_default();
        slot.0 += f.demand_bps;
        slot.1.push(f.id);
    }
    let total: f64 = groups.values().map(|g| g.0).sum();
    let scale = if total > user_link_capacity_bps {
        user_link_capacity_bps / total
    } else {
        1.0
    };
    let traffic = groups
        .into_iter()
        .filter(|(_, (demand, _))| *demand > 0.0)
        .enumerate()
        .map(|(id, ((nqi, destination), (demand, mut members)))| {
            members.sort_unstable();
            NtnTraffic {
                id,
                gnb: first.gnb,
                nqi,
                demand_bps: demand * scale,
                destination,
                members,
            }
        })
        .collect();
    Ok(GnbAggregate { traffic, scale })
}

/// Aggregates every gNB with its own condition (`cond_of(gnb)`), assigning
/// global traffic ids in gNB order. Returns the traffic and per-gNB scale factors.
pub fn aggregate_all<'a>(
    flows: &[Flow5G],
    n_gnbs: usize,
    cond_of: impl Fn(usize) -> &'a MappingCondition,
    user_link_capacity_bps: f64,
) -> Result<(Vec<NtnTraffic>, Vec<f64>), QosError> {
    let mut per_gnb: Vec<Vec<Flow5G>> = vec![Vec::new(); n_gnbs];
    for f in flows {
        per_gnb[f.gnb].push(f.clone());
    }
    let mut traffic = Vec::new();
    let mut scales = Vec::with_capacity(n_gnbs);
    for (gnb, fl) in per_gnb.iter().enumerate() {
        let agg = aggregate_at_gnb(fl, cond_of(gnb), user_link_capacity_bps)?;
        scales.push(agg.scale);
        for mut t in agg.traffic {
            t.id = traffic.len();
            traffic.push(t);
        }
    }
    Ok((traffic, scales))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(id: usize, q: u16, dest: usize) -> Flow5G {
        Flow5G {
            id,
            gnb: 0,
            ue: 0,
            five_qi: QosId(q),
            demand_bps: 1e6,
            destination: dest,
        }
    }

    #[test]
    fn mapping_examples() {
        let c3 = MappingCondition::builtin(3).unwrap();
        assert_eq!(map_5qi_to_nqi(&c3, QosId(80)), Ok(QosId(65)));
        let c5 = MappingCondition::builtin(5).unwrap();
        assert_eq!(c5.map(QosId(2)), Ok(QosId(2)));
        let c6 = MappingCondition::builtin(6).unwrap();
        assert_eq!(c6.map(QosId(4)), Ok(QosId(80)));
        assert!(matches!(
            c6.map(QosId(9)),
            Err(QosError::NotInDomain { .. })
        ));
        assert_eq!(
            MappingCondition::builtin(7),
            Err(QosError::UnknownCondition(7))
        );
    }

    #[test]
    fn custom_mapping_must_be_total() {
        let pairs = CATALOG.iter().skip(1).map(|e| (e.id, e.id));
        assert!(matches!(
            MappingCondition::custom("x", pairs),
            Err(QosError::NotInDomain { id: QosId(80), .. })
        ));
        let twice = CATALOG
            .iter()
            .map(|e| (e.id, QosId(1)))
            .chain([(QosId(80), QosId(1))]);
        assert!(matches!(
            MappingCondition::custom("x", twice),
            Err(QosError::DuplicateEntry { .. })
        ));
        let outside = CATALOG.iter().map(|e| (e.id, QosId(5)));
        assert_eq!(
            MappingCondition::custom("x", outside),
            Err(QosError::UnknownId(QosId(5)))
        );
    }

    #[test]
    fn generation_counts_and_determinism() {
        let a = generate_traffic(30, 5, 20, 1e6, &[0, 1, 2], 9).unwrap();
        assert_eq!(a.len(), 3000);
        assert!(a.iter().all(|f| f.demand_bps == 1e6));
        assert_eq!(a, generate_traffic(30, 5, 20, 1e6, &[0, 1, 2], 9).unwrap());
        let one = generate_traffic(1, 1, 1, 1e6, &[0], 3).unwrap();
        assert!(CATALOG.iter().any(|e| e.id == one[0].five_qi));
        assert_eq!(
            generate_traffic(1, 1, 1, 1e6, &[], 3),
            Err(QosError::NoDestinations)
        );
    }

    #[test]
    fn generation_is_nested_in_flows_per_ue() {
        let small = generate_traffic(3, 2, 4, 1e6, &[0, 1], 5).unwrap();
        let large = generate_traffic(3, 2, 9, 1e6, &[0, 1], 5).unwrap();
        for f in &small {
            let g = large
                .iter()
                .filter(|g| g.gnb == f.gnb && g.ue == f.ue)
                .nth(f.id % 4)
                .unwrap();
            assert_eq!((g.five_qi, g.destination), (f.five_qi, f.destination));
        }
    }

    #[test]
    fn aggregation_examples() {
        let c5 = MappingCondition::builtin(5).unwrap();
        let same = [flow(0, 65, 0), flow(1, 65, 0), flow(2, 65, 0)];
        let agg = aggregate_at_gnb(&same, &c5, 500e6).unwrap();
        assert_eq!(agg.traffic.len(), 1);
        assert_eq!(agg.traffic[0].demand_bps, 3e6);
        let mixed = [flow(0, 65, 0), flow(1, 65, 0), flow(2, 4, 0)];
        assert_eq!(
            aggregate_at_gnb(&mixed, &c5, 500e6).unwrap().traffic.len(),
            2
        );
    }

    #[test]
    fn full_user_link_is_not_scaled() {
        let c1 = MappingCondition::builtin(1).unwrap();
        let flows: Vec<Flow5G> = (0..500)
            .map(|i| Flow5G {
                ue: i / 100,
                ..flow(i, 80, 0)
            })
            .collect();
        let agg = aggregate_at_gnb(&flows, &c1, 500e6).unwrap();
        assert_eq!(agg.scale, 1.0);
        assert!(!agg.clipped());
        assert_eq!(agg.traffic[0].demand_bps, 500e6);
        let over = aggregate_at_gnb(&flows, &c1, 400e6).unwrap();
        assert!(over.clipped());
        assert!((over.traffic[0].demand_bps - 400e6).abs() < 1e-3);
    }

    #[test]
    fn aggregation_rejects_mixed_gnbs() {
        let c5 = MappingCondition::builtin(5).unwrap();
        let flows = [
            flow(0, 65, 0),
            Flow5G {
                gnb: 2,
                ..flow(1, 65, 0)
            },
        ];
        assert_eq!(
            aggregate_at_gnb(&flows, &c5, 1e9),
            Err(QosError::MixedGnb(0, 2))
        );
    }
}
