//! Snapshot NTN topology: Walker constellation, ground stations and gNB
//! attachments, with capacitated directed links.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
const EARTH_MU: f64 = 3.986_004_418e14;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid constellation: {0}")]
    InvalidWalker(String),
    #[error("invalid site {name}: {reason}")]
    InvalidSite { name: String, reason: String },
    #[error("at least one ground station is required")]
    NoGroundStation,
    #[error("at least one gNB is required")]
    NoGnb,
    #[error("no satellite visible above the elevation mask from gNB(s) {gnbs:?}")]
    NoVisibleSatellite { gnbs: Vec<usize> },
    #[error("link {id}: {reason}")]
    InvalidLink { id: usize, reason: String },
    #[error("could not place {wanted} gNBs with satellite visibility after {attempts} draws")]
    Placement { wanted: usize, attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub altitude_m: f64,
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Self {
        Self {
            latitude_deg,
            longitude_deg,
            altitude_m,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), TopologyError> {
        let bad = |reason: &str| TopologyError::InvalidSite {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if !(-90.0..=90.0).contains(&self.latitude_deg) {
            return Err(bad("latitude outside [-90, 90]"));
        }
        if !(-180.0..180.0).contains(&self.longitude_deg) {
            return Err(bad("longitude outside [-180, 180)"));
        }
        if !(self.altitude_m >= 0.0 && self.altitude_m.is_finite()) {
            return Err(bad("altitude must be finite and non-negative"));
        }
        Ok(())
    }

    /// Earth-centred Cartesian position on a spherical Earth.
    pub fn to_ecef(&self) -> Vec3 {
        let r = EARTH_RADIUS_M + self.altitude_m;
        let (lat, lon) = (
            self.latitude_deg.to_radians(),
            self.longitude_deg.to_radians(),
        );
        [
            r * lat.cos() * lon.cos(),
            r * lat.cos() * lon.sin(),
            r * lat.sin(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerParams {
    pub num_planes: usize,
    pub sats_per_plane: usize,
    pub altitude_m: f64,
    pub inclination_deg: f64,
    #[serde(default = "default_raan_spread")]
    pub raan_spread_deg: f64,
    #[serde(default)]
    pub phase_offset_deg: f64,
    #[serde(default)]
    pub epoch_s: f64,
}

fn default_raan_spread() -> f64 {
    180.0
}

impl WalkerParams {
    pub fn num_satellites(&self) -> usize {
        self.num_planes * self.sats_per_plane
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |s: &str| Err(TopologyError::InvalidWalker(s.to_string()));
        if self.num_planes == 0 || self.sats_per_plane == 0 {
            return bad("plane and per-plane satellite counts must be positive");
        }
        if !(self.altitude_m > 0.0 && self.altitude_m.is_finite()) {
            return bad("altitude must be positive");
        }
        if !(self.inclination_deg > 0.0 && self.inclination_deg <= 180.0) {
            return bad("inclination must lie in (0, 180]");
        }
        if !(self.raan_spread_deg.is_finite()
            && self.phase_offset_deg.is_finite()
            && self.epoch_s.is_finite())
        {
            return bad("angles and epoch must be finite");
        }
        Ok(())
    }
}

/// Satellite positions at `epoch_s`, plane-major (satellite `s` of plane `p`
/// has index `p * sats_per_plane + s`).
pub fn propagate_walker(params: &WalkerParams) -> Result<Vec<Vec3>, TopologyError> {
    params.validate()?;
    let r = EARTH_RADIUS_M + params.altitude_m;
    let mean_motion = (EARTH_MU / r.powi(3)).sqrt();
    let inc = params.inclination_deg.to_radians();
    let mut out = Vec::with_capacity(params.num_satellites());
    for p in 0..params.num_planes {
        let raan = (p as f64 * params.raan_spread_deg / params.num_planes as f64).to_radians();
        for s in 0..params.sats_per_plane {
            let arg_deg = s as f64 * 360.0 / params.sats_per_plane as f64
                + p as f64 * params.phase_offset_deg;
            let u = arg_deg.to_radians() + mean_motion * params.epoch_s;
            let (cu, su) = (u.cos(), u.sin());
            out.push([
                r * (raan.cos() * cu - raan.sin() * su * inc.cos()),
                r * (raan.sin() * cu + raan.cos() * su * inc.cos()),
                r * su * inc.sin(),
            ]);
        }
    }
    Ok(out)
}

/// Free-space propagation delay between two points.
pub fn link_latency(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b)) / SPEED_OF_LIGHT_M_S
}

/// Elevation of `target` seen from ground position `observer`, in degrees.
pub fn elevation_deg(observer: Vec3, target: Vec3) -> f64 {
    let los = sub(target, observer);
    let up = dot(los, observer) / (norm(los) * norm(observer));
    up.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Satellite with the smallest slant range among those at or above the
/// elevation mask; equal ranges go to the lower id.
pub fn nearest_visible_satellite(
    gnb: usize,
    site: &GeoPoint,
    satellites: &[Vec3],
    min_elevation_deg: f64,
) -> Result<usize, TopologyError> {
    let g = site.to_ecef();
    let mut best: Option<(usize, f64)> = None;
    for (id, &pos) in satellites.iter().enumerate() {
        if elevation_deg(g, pos) < min_elevation_deg {
            continue;
        }
        let range = norm(sub(pos, g));
        if best.is_none_or(|(_, r)| range < r) {
            best = Some((id, range));
        }
    }
    best.map(|(id, _)| id)
        .ok_or(TopologyError::NoVisibleSatellite { gnbs: vec![gnb] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Satellite,
    GroundStation,
    Gnb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(rename = "position_m")]
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    User,
    InterSatellite,
    Feeder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: usize,
    pub kind: LinkKind,
    #[serde(rename = "u")]
    pub from: usize,
    #[serde(rename = "v")]
    pub to: usize,
    pub capacity_bps: f64,
    pub latency_s: f64,
}

/// Link description for [`Topology::from_parts`]; latency is derived from
/// the endpoint positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub kind: LinkKind,
    pub from: usize,
    pub to: usize,
    pub capacity_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capacities {
    pub user_bps: f64,
    pub isl_bps: f64,
    pub feeder_bps: f64,
}

impl Default for Capacities {
    fn default() -> Self {
        Self {
            user_bps: 500e6,
            isl_bps: 10e9,
            feeder_bps: 10e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkOptions {
    pub capacities: Capacities,
    pub min_elevation_deg: f64,
    /// Connect the last plane back to the first, closing the ISL grid into a torus.
    pub close_seam: bool,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self {
            capacities: Capacities::default(),
            min_elevation_deg: 10.0,
            close_seam: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    satellites: Vec<usize>,
    ground_stations: Vec<usize>,
    gnbs: Vec<usize>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
}

impl Topology {
    /// Assembles a topology from explicit nodes and links, checking link
    /// kinds against endpoint kinds. Node ids must equal their index.
    pub fn from_parts(nodes: Vec<Node>, specs: &[LinkSpec]) -> Result<Self, TopologyError> {
        let mut links = Vec::with_capacity(specs.len());
        for (id, spec) in specs.iter().enumerate() {
            let bad = |reason: &str| TopologyError::InvalidLink {
                id,
                reason: reason.to_string(),
            };
            let (Some(u), Some(v)) = (nodes.get(spec.from), nodes.get(spec.to)) else {
                return Err(bad("endpoint is not a node"));
            };
            let expected = match spec.kind {
                LinkKind::User => (NodeKind::Gnb, NodeKind::Satellite),
                LinkKind::InterSatellite => (NodeKind::Satellite, NodeKind::Satellite),
                LinkKind::Feeder => (NodeKind::Satellite, NodeKind::GroundStation),
            };
            if (u.kind, v.kind) != expected {
                return Err(bad("endpoint kinds do not match the link kind"));
            }
            if !(spec.capacity_bps > 0.0 && spec.capacity_bps.is_finite()) {
                return Err(bad("capacity must be positive"));
            }
            let latency_s = link_latency(u.position, v.position);
            if latency_s <= 0.0 {
                return Err(bad("endpoints coincide"));
            }
            links.push(Link {
                id,
                kind: spec.kind,
                from: spec.from,
                to: spec.to,
                capacity_bps: spec.capacity_bps,
                latency_s,
            });
        }
        let mut out_links = vec![Vec::new(); nodes.len()];
        let mut in_links = vec![Vec::new(); nodes.len()];
        for l in &links {
            out_links[l.from].push(l.id);
            in_links[l.to].push(l.id);
        }
        let of_kind = |k: NodeKind| {
            nodes
                .iter()
                .filter(|n| n.kind == k)
                .map(|n| n.id)
                .collect::<Vec<_>>()
        };
        if nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(TopologyError::InvalidLink {
                id: 0,
                reason: "node ids must be dense and ordered".into(),
            });
        }
        Ok(Self {
            satellites: of_kind(NodeKind::Satellite),
            ground_stations: of_kind(NodeKind::GroundStation),
            gnbs: of_kind(NodeKind::Gnb),
            nodes,
            links,
            out_links,
            in_links,
        })
    }

    pub fn satellites(&self) -> &[usize] {
        &self.satellites
    }

    /// Node ids of the ground stations; destination `d` is `ground_stations()[d]`.
    pub fn ground_stations(&self) -> &[usize] {
        &self.ground_stations
    }

    /// Node ids of the gNBs, in gNB index order.
    pub fn gnbs(&self) -> &[usize] {
        &self.gnbs
    }

    pub fn links_from(&self, node: usize) -> impl Iterator<Item = &Link> + '_ {
        self.out_links[node].iter().map(|&l| &self.links[l])
    }

    pub fn links_into(&self, node: usize) -> impl Iterator<Item = &Link> + '_ {
        self.in_links[node].iter().map(|&l| &self.links[l])
    }

    pub fn links_of_kind(&self, kind: LinkKind) -> impl Iterator<Item = &Link> + '_ {
        self.links.iter().filter(move |l| l.kind == kind)
    }

    pub fn is_satellite(&self, node: usize) -> bool {
        self.nodes
            .get(node)
            .is_some_and(|n| n.kind == NodeKind::Satellite)
    }

    /// The user link of gNB index `gnb`, if any.
    pub fn user_link(&self, gnb: usize) -> Option<&Link> {
        let node = *self.gnbs.get(gnb)?;
        self.links_from(node).find(|l| l.kind == LinkKind::User)
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            nodes: &'a [Node],
            links: &'a [Link],
        }
        serde_json::to_writer_pretty(
            out,
            &Dump {
                nodes: &self.nodes,
                links: &self.links,
            },
        )
    }
}

/// Builds the snapshot topology. Node ids: satellites first (plane-major),
/// then ground stations, then gNBs. Link ids: ISLs, then feeders, then user links.
pub fn build_topology(
    walker: &WalkerParams,
    ogs_sites: &[GeoPoint],
    gnb_sites: &[GeoPoint],
    opts: &LinkOptions,
) -> Result<Topology, TopologyError> {
    if ogs_sites.is_empty() {
        return Err(TopologyError::NoGroundStation);
    }
    if gnb_sites.is_empty() {
        return Err(TopologyError::NoGnb);
    }
    for (k, s) in ogs_sites.iter().enumerate() {
        s.validate(&format!("ground station {k}"))?;
    }
    for (j, s) in gnb_sites.iter().enumerate() {
        s.validate(&format!("gNB {j}"))?;
    }
    let sats = propagate_walker(walker)?;
    let n_sat = sats.len();

    let mut nodes: Vec<Node> = Vec::with_capacity(n_sat + ogs_sites.len() + gnb_sites.len());
    for &position in &sats {
        nodes.push(Node {
            id: nodes.len(),
            kind: NodeKind::Satellite,
            position,
        });
    }
    for site in ogs_sites {
        nodes.push(Node {
            id: nodes.len(),
            kind: NodeKind::GroundStation,
            position: site.to_ecef(),
        });
    }
    for site in gnb_sites {
        nodes.push(Node {
            id: nodes.len(),
            kind: NodeKind::Gnb,
            position: site.to_ecef(),
        });
    }

    let caps = opts.capacities;
    let mut specs = Vec::new();
    let (planes, per_plane) = (walker.num_planes, walker.sats_per_plane);
    for p in 0..planes {
        for s in 0..per_plane {
            let mut neighbours = Vec::with_capacity(4);
            if per_plane > 1 {
                neighbours.push(p * per_plane + (s + 1) % per_plane);
                neighbours.push(p * per_plane + (s + per_plane - 1) % per_plane);
            }
            if p + 1 < planes || (opts.close_seam && planes > 1) {
                neighbours.push(((p + 1) % planes) * per_plane + s);
            }
            if p > 0 || (opts.close_seam && planes > 1) {
                neighbours.push(((p + planes - 1) % planes) * per_plane + s);
            }
            let from = p * per_plane + s;
            neighbours.sort_unstable();
            neighbours.dedup();
            neighbours.retain(|&t| t != from);
            for to in neighbours {
                specs.push(LinkSpec {
                    kind: LinkKind::InterSatellite,
                    from,
                    to,
                    capacity_bps: caps.isl_bps,
                });
            }
        }
    }
    for (sat, &pos) in sats.iter().enumerate() {
        for (k, site) in ogs_sites.iter().enumerate() {
            if elevation_deg(site.to_ecef(), pos) >= opts.min_elevation_deg {
                specs.push(LinkSpec {
                    kind: LinkKind::Feeder,
                    from: sat,
                    to: n_sat + k,
                    capacity_bps: caps.feeder_bps,
                });
            }
        }
    }
    let mut unreachable = Vec::new();
    let gnb_base = n_sat + ogs_sites.len();
    for (j, site) in gnb_sites.iter().enumerate() {
        match nearest_visible_satellite(j, site, &sats, opts.min_elevation_deg) {
            Ok(sat) => specs.push(LinkSpec {
                kind: LinkKind::User,
                from: gnb_base + j,
                to: sat,
                capacity_bps: caps.user_bps,
            }),
            Err(_) => unreachable.push(j),
        }
    }
    if !unreachable.is_empty() {
        return Err(TopologyError::NoVisibleSatellite { gnbs: unreachable });
    }
    Topology::from_parts(nodes, &specs)
}

/// Draws `count` gNB sites uniformly on the sphere, redrawing any site that
/// sees no satellite above the mask.
pub fn place_gnbs(
    count: usize,
    seed: u64,
    satellites: &[Vec3],
    min_elevation_deg: f64,
) -> Result<Vec<GeoPoint>, TopologyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_attempts = 1000 * count.max(1);
    let mut sites = Vec::with_capacity(count);
    let mut attempts = 0;
    while sites.len() < count {
        if attempts == max_attempts {
            return Err(TopologyError::Placement {
                wanted: count,
                attempts,
            });
        }
        attempts += 1;
        let z: f64 = rng.random_range(-1.0..1.0);
        let lon: f64 = rng.random_range(-PI..PI);
        let site = GeoPoint::new(z.asin().to_degrees(), lon.to_degrees(), 0.0);
        if nearest_visible_satellite(sites.len(), &site, satellites, min_elevation_deg).is_ok() {
            sites.push(site);
        }
    }
    Ok(sites)
}
