//! Scenario configuration, the per-point pipeline and resumable sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constellation::{
    build_topology, place_gnbs, propagate_walker, Capacities, GeoPoint, LinkOptions, Topology,
    TopologyError, WalkerParams,
};
use crate::metrics::{
    evaluate_cost, redistribute, satisfaction, MetricsError, SweepRow, TrafficOutcome,
};
use crate::milp::{
    build_model, solve, MilpError, OptimizationWeights, SliceMilp, Solution, SolveOptions,
};
use crate::qos::{
    self, aggregate_all, generate_traffic, Flow5G, MappingCondition, NtnTraffic, QosError, QosId,
};
use crate::slicing::{assign_slice_edges, build_slices, Slice, SliceError, SlicePolicy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{csv} holds results of a different configuration (hash {found}, current {current}); remove it or pick another output")]
    ResumeMismatch {
        csv: PathBuf,
        found: String,
        current: String,
    },
    #[error("bad --point `{0}`: expected cond=<id>,flows=<n>,w=<w_f>")]
    BadPoint(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: String,
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub capacities: Capacities,
    pub ground_stations: Vec<SiteConfig>,
    pub gnbs: GnbConfig,
    pub traffic: TrafficConfig,
    pub mapping: MappingConfig,
    #[serde(default)]
    pub slicing: SlicingConfig,
    pub optimization: OptimizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
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
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: f64,
    #[serde(default = "default_true")]
    pub close_seam: bool,
}

fn default_raan_spread() -> f64 {
    180.0
}

fn default_min_elevation() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

impl ConstellationConfig {
    pub fn walker(&self) -> WalkerParams {
        WalkerParams {
            num_planes: self.num_planes,
            sats_per_plane: self.sats_per_plane,
            altitude_m: self.altitude_m,
            inclination_deg: self.inclination_deg,
            raan_spread_deg: self.raan_spread_deg,
            phase_offset_deg: self.phase_offset_deg,
            epoch_s: self.epoch_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub name: String,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub altitude_m: f64,
}

impl SiteConfig {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.latitude_deg, self.longitude_deg, self.altitude_m)
    }
}

/// Either explicit sites or a seeded count drawn uniformly over the sphere
/// (each draw kept only if it sees a satellite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbConfig {
    pub count: Option<usize>,
    #[serde(default)]
    pub placement_seed: u64,
    pub sites: Option<Vec<SiteConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub ues_per_gnb: usize,
    pub flows_per_ue: Vec<usize>,
    pub demand_per_flow_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionRef {
    Builtin(u8),
    Named(String),
}

impl ConditionRef {
    pub fn label(&self) -> String {
        match self {
            ConditionRef::Builtin(n) => n.to_string(),
            ConditionRef::Named(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMapping {
    pub name: String,
    /// `[5QI, NQI]` pairs.
    pub pairs: Vec<[u16; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub conditions: Vec<ConditionRef>,
    #[serde(default)]
    pub custom: Vec<CustomMapping>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicingConfig {
    /// NQI groups; one group per NQI when absent.
    pub groups: Option<Vec<Vec<u16>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    /// `[w_f, w_l]` pairs.
    pub weights: Vec<[f64; 2]>,
    #[serde(default)]
    pub end_to_end_latency: bool,
    /// Overrides F (total requested flow by default).
    pub flow_norm_bps: Option<f64>,
    /// Overrides L (total delay budget of all flows by default).
    pub latency_norm_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub time_limit_s: Option<f64>,
    pub node_limit: Option<u64>,
    #[serde(default = "default_abs_gap")]
    pub abs_gap: f64,
    #[serde(default)]
    pub rel_gap: f64,
    #[serde(default = "default_integrality")]
    pub integrality_tol: f64,
    #[serde(default = "default_feasibility")]
    pub feasibility_tol: f64,
}

fn default_abs_gap() -> f64 {
    1e-6
}

fn default_integrality() -> f64 {
    1e-6
}

fn default_feasibility() -> f64 {
    1e-7
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit_s: None,
            node_limit: None,
            abs_gap: default_abs_gap(),
            rel_gap: 0.0,
            integrality_tol: default_integrality(),
            feasibility_tol: default_feasibility(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            time_limit: self.time_limit_s.map(Duration::from_secs_f64),
            node_limit: self.node_limit,
            abs_gap: self.abs_gap,
            rel_gap: self.rel_gap,
            integrality_tol: self.integrality_tol,
            feasibility_tol: self.feasibility_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: PathBuf,
    /// Defaults to the CSV path with a `.record.json` extension.
    pub record: Option<PathBuf>,
    pub per_flow_jsonl: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        self.constellation
            .walker()
            .validate()
            .map_err(|e| invalid("constellation", e.to_string()))?;
        if !(0.0..90.0).contains(&self.constellation.min_elevation_deg) {
            return Err(invalid(
                "constellation.min_elevation_deg",
                "must lie in [0, 90)",
            ));
        }
        let c = &self.capacities;
        for (field, v) in [
            ("capacities.user_bps", c.user_bps),
            ("capacities.isl_bps", c.isl_bps),
            ("capacities.feeder_bps", c.feeder_bps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.ground_stations.is_empty() {
            return Err(invalid(
                "ground_stations",
                "at least one ground station is required",
            ));
        }
        for (k, s) in self.ground_stations.iter().enumerate() {
            s.point()
                .validate(&s.name)
                .map_err(|e| invalid(format!("ground_stations[{k}]"), e.to_string()))?;
        }
        match (&self.gnbs.count, &self.gnbs.sites) {
            (Some(0), None) => return Err(invalid("gnbs.count", "must be positive")),
            (Some(_), None) => {}
            (None, Some(sites)) if !sites.is_empty() => {
                for (j, s) in sites.iter().enumerate() {
                    s.point()
                        .validate(&s.name)
                        .map_err(|e| invalid(format!("gnbs.sites[{j}]"), e.to_string()))?;
                }
            }
            _ => {
                return Err(invalid(
                    "gnbs",
                    "give exactly one of `count` or a non-empty `sites` list",
                ))
            }
        }
        let t = &self.traffic;
        if t.ues_per_gnb == 0 {
            return Err(invalid("traffic.ues_per_gnb", "must be positive"));
        }
        if t.flows_per_ue.is_empty() || t.flows_per_ue.contains(&0) {
            return Err(invalid(
                "traffic.flows_per_ue",
                "must be a non-empty list of positive counts",
            ));
        }
        if unique_count(&t.flows_per_ue) != t.flows_per_ue.len() {
            return Err(invalid("traffic.flows_per_ue", "duplicate entries"));
        }
        if !(t.demand_per_flow_bps > 0.0 && t.demand_per_flow_bps.is_finite()) {
            return Err(invalid("traffic.demand_per_flow_bps", "must be positive"));
        }
        self.mapping_conditions()?;
        self.slice_policy()?;
        let o = &self.optimization;
        if o.weights.is_empty() {
            return Err(invalid("optimization.weights", "must not be empty"));
        }
        for (k, [w_f, w_l]) in o.weights.iter().enumerate() {
            if !(*w_f >= 0.0 && *w_l >= 0.0) || (w_f + w_l - 1.0).abs() > 1e-9 {
                return Err(invalid(
                    format!("optimization.weights[{k}]"),
                    "w_f and w_l must be non-negative and sum to 1",
                ));
            }
        }
        let wf: Vec<u64> = o.weights.iter().map(|w| w[0].to_bits()).collect();
        if unique_count(&wf) != wf.len() {
            return Err(invalid("optimization.weights", "duplicate w_f values"));
        }
        for (field, v) in [
            ("optimization.flow_norm_bps", o.flow_norm_bps),
            ("optimization.latency_norm_s", o.latency_norm_s),
        ] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid(field, "must be positive"));
            }
        }
        let s = &self.solver;
        if s.time_limit_s.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("solver.time_limit_s", "must be positive"));
        }
        for (field, v) in [
            ("solver.abs_gap", s.abs_gap),
            ("solver.rel_gap", s.rel_gap),
            ("solver.integrality_tol", s.integrality_tol),
            ("solver.feasibility_tol", s.feasibility_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be a non-negative number"));
            }
        }
        if self.run.seeds.is_empty() || unique_count(&self.run.seeds) != self.run.seeds.len() {
            return Err(invalid(
                "run.seeds",
                "must be a non-empty list without duplicates",
            ));
        }
        if self.run.workers == 0 {
            return Err(invalid("run.workers", "must be at least 1"));
        }
        Ok(())
    }

    /// Mapping conditions in sweep order.
    pub fn mapping_conditions(&self) -> Result<Vec<MappingCondition>, ConfigError> {
        let m = &self.mapping;
        if m.conditions.is_empty() {
            return Err(invalid("mapping.conditions", "must not be empty"));
        }
        if unique_count(&m.conditions) != m.conditions.len() {
            return Err(invalid("mapping.conditions", "duplicate entries"));
        }
        let mut custom = BTreeMap::new();
        for (k, c) in m.custom.iter().enumerate() {
            let field = format!("mapping.custom[{k}]");
            if c.name.parse::<u8>().is_ok() {
                return Err(invalid(field, "custom names must not be numbers"));
            }
            let pairs = c.pairs.iter().map(|[a, b]| (QosId(*a), QosId(*b)));
            let cond = MappingCondition::custom(c.name.clone(), pairs)
                .map_err(|e| invalid(&field, e.to_string()))?;
            if custom.insert(c.name.clone(), cond).is_some() {
                return Err(invalid(field, "duplicate custom name"));
            }
        }
        m.conditions
            .iter()
            .map(|r| match r {
                ConditionRef::Builtin(n) => MappingCondition::builtin(*n)
                    .map_err(|e| invalid("mapping.conditions", e.to_string())),
                ConditionRef::Named(name) => custom.get(name).cloned().ok_or_else(|| {
                    invalid(
                        "mapping.conditions",
                        format!("no custom mapping named `{name}`"),
                    )
                }),
            })
            .collect()
    }

    pub fn slice_policy(&self) -> Result<SlicePolicy, ConfigError> {
        match &self.slicing.groups {
            None => Ok(SlicePolicy::default()),
            Some(groups) => {
                let groups = groups
                    .iter()
                    .map(|g| g.iter().map(|&q| QosId(q)).collect())
                    .collect();
                SlicePolicy::new(groups).map_err(|e| invalid("slicing.groups", e.to_string()))
            }
        }
    }

    /// SHA-256 over every field that can change results (outputs and the
    /// worker count are excluded).
    pub fn semantic_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is a table");
        obj.remove("output");
        if let Some(run) = obj.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("workers");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn record_path(&self) -> PathBuf {
        self.output
            .record
            .clone()
            .unwrap_or_else(|| self.output.csv.with_extension("record.json"))
    }
}

fn unique_count<T: Ord>(items: &[T]) -> usize {
    items.iter().collect::<BTreeSet<_>>().len()
}

/// Everything shared by all sweep points of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub edges: Vec<usize>,
    pub conditions: Vec<MappingCondition>,
    pub policy: SlicePolicy,
    pub hash: String,
}

pub fn prepare(config: &ScenarioConfig) -> Result<Prepared, ScenarioError> {
    config.validate()?;
    let walker = config.constellation.walker();
    let min_elevation_deg = config.constellation.min_elevation_deg;
    let gnb_sites = match (&config.gnbs.count, &config.gnbs.sites) {
        (_, Some(sites)) => sites.iter().map(SiteConfig::point).collect(),
        (Some(n), None) => place_gnbs(
            *n,
            config.gnbs.placement_seed,
            &propagate_walker(&walker)?,
            min_elevation_deg,
        )?,
        (None, None) => unreachable!("validated"),
    };
    let ogs: Vec<GeoPoint> = config
        .ground_stations
        .iter()
        .map(SiteConfig::point)
        .collect();
    let opts = LinkOptions {
        capacities: config.capacities,
        min_elevation_deg,
        close_seam: config.constellation.close_seam,
    };
    let topology = build_topology(&walker, &ogs, &gnb_sites, &opts)?;
    let edges = assign_slice_edges(&topology)?;
    let binaries_hint = walker.num_satellites() * gnb_sites.len();
    if binaries_hint > 1000 {
        warn!(
            "{}: {} satellites x {} gNBs is far beyond desk scale; a single point may take hours",
            config.name,
            walker.num_satellites(),
            gnb_sites.len()
        );
    }
    Ok(Prepared {
        config: config.clone(),
        edges,
        conditions: config.mapping_conditions()?,
        policy: config.slice_policy()?,
        hash: config.semantic_hash(),
        topology,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    /// Index into the config's condition list.
    pub condition: usize,
    pub flows_per_ue: usize,
    pub w_f: f64,
    pub w_l: f64,
    pub seed: u64,
}

impl Prepared {
    /// All points in canonical order: condition, flows, weights, seed.
    pub fn points(&self) -> Vec<SweepPoint> {
        let c = &self.config;
        let mut out = Vec::new();
        for condition in 0..self.conditions.len() {
            for &flows_per_ue in &c.traffic.flows_per_ue {
                for &[w_f, w_l] in &c.optimization.weights {
                    for &seed in &c.run.seeds {
                        out.push(SweepPoint {
                            condition,
                            flows_per_ue,
                            w_f,
                            w_l,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn condition_label(&self, point: &SweepPoint) -> &str {
        &self.conditions[point.condition].name
    }

    fn row_key(&self, point: &SweepPoint) -> RowKey {
        RowKey::new(
            self.condition_label(point),
            point.flows_per_ue,
            point.w_f,
            point.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey(String, usize, u64, u64);

impl RowKey {
    fn new(condition: &str, flows: usize, w_f: f64, seed: u64) -> Self {
        Self(condition.to_string(), flows, w_f.to_bits(), seed)
    }

    fn of(row: &SweepRow) -> Self {
        Self::new(&row.condition, row.flows_per_ue, row.w_f, row.seed)
    }
}

/// Traffic, slices and the built model of one point.
#[derive(Debug, Clone)]
pub struct PointModel {
    pub flows: Vec<Flow5G>,
    pub traffic: Vec<NtnTraffic>,
    /// Per-gNB user-link scale factor (1 when demand fits).
    pub gnb_scales: Vec<f64>,
    pub slices: Vec<Slice>,
    pub weights: OptimizationWeights,
    pub milp: SliceMilp,
}

pub fn build_point(prepared: &Prepared, point: &SweepPoint) -> Result<PointModel, ScenarioError> {
    let c = &prepared.config;
    let n_gnbs = prepared.topology.gnbs().len();
    let destinations: Vec<usize> = (0..prepared.topology.ground_stations().len()).collect();
    let flows = generate_traffic(
        n_gnbs,
        c.traffic.ues_per_gnb,
        point.flows_per_ue,
        c.traffic.demand_per_flow_bps,
        &destinations,
        point.seed,
    )?;
    let cond = &prepared.conditions[point.condition];
    let (traffic, gnb_scales) = aggregate_all(&flows, n_gnbs, |_| cond, c.capacities.user_bps)?;
    let slices = build_slices(&traffic, &prepared.policy, &prepared.edges)?;
    let flow_norm = c
        .optimization
        .flow_norm_bps
        .unwrap_or_else(|| flows.iter().map(|f| f.demand_bps).sum());
    let latency_norm = match c.optimization.latency_norm_s {
        Some(l) => l,
        None => flows
            .iter()
            .map(|f| qos::pdb_s(f.five_qi))
            .sum::<Result<f64, _>>()?,
    };
    let weights = OptimizationWeights::new(point.w_f, point.w_l, flow_norm, latency_norm)?;
    let milp = build_model(&slices, &prepared.topology, &weights)?;
    Ok(PointModel {
        flows,
        traffic,
        gnb_scales,
        slices,
        weights,
        milp,
    })
}

/// Full result of one sweep point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub model: PointModel,
    pub solution: Solution,
    pub outcomes: Vec<TrafficOutcome>,
    pub row: SweepRow,
}

pub fn run_point(prepared: &Prepared, point: &SweepPoint) -> Result<PointResult, ScenarioError> {
    let model = build_point(prepared, point)?;
    let solution = solve(
        &model.milp,
        &model.slices,
        &prepared.topology,
        &prepared.config.solver.options(),
    )?;
    let mut row = SweepRow {
        condition: prepared.condition_label(point).to_string(),
        flows_per_ue: point.flows_per_ue,
        w_f: point.w_f,
        w_l: point.w_l,
        seed: point.seed,
        sbar_f: None,
        sbar_l: None,
        J: None,
        J_flow_term: None,
        J_latency_term: None,
        solve_time_s: solution.solve_time.as_secs_f64(),
        n_slices: model.slices.len(),
        n_binaries: model.milp.model.num_binaries(),
        status: solution.status.as_str().to_string(),
    };
    let mut outcomes = Vec::new();
    if solution.has_incumbent() {
        outcomes = redistribute(
            &solution,
            &model.slices,
            &model.traffic,
            &model.flows,
            &prepared.topology,
            prepared.config.optimization.end_to_end_latency,
        )?;
        let sat = satisfaction(&outcomes)?;
        let cost = evaluate_cost(
            &solution.flow_gaps_bps(),
            &solution.latency_gaps_s(),
            &model.weights,
        );
        row.sbar_f = Some(sat.sbar_f);
        row.sbar_l = Some(sat.sbar_l);
        row.J = Some(cost.total);
        row.J_flow_term = Some(cost.flow_term);
        row.J_latency_term = Some(cost.latency_term);
    }
    Ok(PointResult {
        point: point.clone(),
        model,
        solution,
        outcomes,
        row,
    })
}

/// Parses `cond=5,flows=20,w=0.5`; `w` is w_f and w_l = 1 - w_f.
pub fn parse_point(
    prepared: &Prepared,
    spec: &str,
    seed: u64,
) -> Result<SweepPoint, ScenarioError> {
    let bad = || ScenarioError::BadPoint(spec.to_string());
    let mut fields = BTreeMap::new();
    for part in spec.split(',') {
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        if fields.insert(k.trim(), v.trim()).is_some() {
            return Err(bad());
        }
    }
    if fields.len() != 3 {
        return Err(bad());
    }
    let cond = *fields.get("cond").ok_or_else(bad)?;
    let condition = prepared
        .conditions
        .iter()
        .position(|c| c.name == cond)
        .ok_or_else(bad)?;
    let flows_per_ue: usize = fields
        .get("flows")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    let w_f: f64 = fields
        .get("w")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    if flows_per_ue == 0 || !(0.0..=1.0).contains(&w_f) {
        return Err(bad());
    }
    Ok(SweepPoint {
        condition,
        flows_per_ue,
        w_f,
        w_l: 1.0 - w_f,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTelemetry {
    pub condition: String,
    pub flows_per_ue: usize,
    pub w_f: f64,
    pub seed: u64,
    pub nodes: u64,
    pub lp_iterations: u64,
    pub solver_objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub clipped_gnbs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub scenario: String,
    pub complete: bool,
    /// Rows in canonical sweep order.
    pub points: Vec<SweepRow>,
    /// Solver telemetry for points computed by the latest invocation.
    pub telemetry: Vec<PointTelemetry>,
    pub csv: PathBuf,
    pub per_flow_jsonl: Option<PathBuf>,
}

#[derive(Serialize)]
struct FlowLine<'a> {
    condition: &'a str,
    flows_per_ue: usize,
    w_f: f64,
    seed: u64,
    flow: usize,
    gnb: usize,
    ue: usize,
    five_qi: QosId,
    destination: usize,
    demand_bps: f64,
    allocated_bps: f64,
    latency_s: f64,
    pdb_s: f64,
}

fn read_rows(path: &Path) -> Result<Vec<SweepRow>, ScenarioError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ScenarioError::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<SweepRow>() {
        match rec {
            Ok(row) => rows.push(row),
            // a torn last line from an interrupted run is recomputed
            Err(e) => warn!("{}: skipping unreadable row: {e}", path.display()),
        }
    }
    Ok(rows)
}

fn row_line(row: &SweepRow) -> Result<Vec<u8>, ScenarioError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(row).map_err(|e| ScenarioError::Csv {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    w.into_inner().map_err(|e| ScenarioError::Csv {
        path: PathBuf::new(),
        message: e.to_string(),
    })
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ScenarioError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| ScenarioError::Csv {
            path: tmp.clone(),
            message: e.to_string(),
        })?;
        for row in rows {
            w.serialize(row).map_err(|e| ScenarioError::Csv {
                path: tmp.clone(),
                message: e.to_string(),
            })?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_record(path: &Path, record: &RunRecord) -> Result<(), ScenarioError> {
    let tmp = path.with_extension("json.tmp");
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    serde_json::to_writer_pretty(BufWriter::new(file), record).map_err(|e| ScenarioError::Io {
        path: tmp.clone(),
        source: e.into(),
    })?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn failed_row(prepared: &Prepared, point: &SweepPoint) -> SweepRow {
    SweepRow {
        condition: prepared.condition_label(point).to_string(),
        flows_per_ue: point.flows_per_ue,
        w_f: point.w_f,
        w_l: point.w_l,
        seed: point.seed,
        sbar_f: None,
        sbar_l: None,
        J: None,
        J_flow_term: None,
        J_latency_term: None,
        solve_time_s: 0.0,
        n_slices: 0,
        n_binaries: 0,
        status: "error".into(),
    }
}

/// Runs every pending point of the sweep. Rows already present in the CSV
/// (from an interrupted run of the same config) are kept; the finished CSV
/// is rewritten in canonical order. `observe` sees each newly computed
/// point on the calling thread.
pub fn run_sweep(
    config: &ScenarioConfig,
    mut observe: impl FnMut(&PointResult),
) -> Result<RunRecord, ScenarioError> {
    let prepared = prepare(config)?;
    let csv_path = config.output.csv.clone();
    let record_path = config.record_path();
    for p in [
        Some(&csv_path),
        Some(&record_path),
        config.output.per_flow_jsonl.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }

    let mut done: BTreeMap<RowKey, SweepRow> = BTreeMap::new();
    if csv_path.exists() {
        let previous: Option<RunRecord> = fs::read(&record_path)
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok());
        match previous {
            Some(r) if r.config_hash == prepared.hash => {
                for row in read_rows(&csv_path)? {
                    done.insert(RowKey::of(&row), row);
                }
            }
            other => {
                return Err(ScenarioError::ResumeMismatch {
                    csv: csv_path,
                    found: other
                        .map(|r| r.config_hash)
                        .unwrap_or_else(|| "none".into()),
                    current: prepared.hash.clone(),
                })
            }
        }
    }
    let points = prepared.points();
    let wanted: BTreeSet<RowKey> = points.iter().map(|p| prepared.row_key(p)).collect();
    done.retain(|k, _| wanted.contains(k));
    let pending: Vec<SweepPoint> = points
        .iter()
        .filter(|p| !done.contains_key(&prepared.row_key(p)))
        .cloned()
        .collect();
    info!(
        "{}: {} points, {} already done",
        config.name,
        points.len(),
        points.len() - pending.len()
    );

    let mut record = RunRecord {
        config_hash: prepared.hash.clone(),
        scenario: config.name.clone(),
        complete: false,
        points: Vec::new(),
        telemetry: Vec::new(),
        csv: csv_path.clone(),
        per_flow_jsonl: config.output.per_flow_jsonl.clone(),
    };
    write_record(&record_path, &record)?;
    // keep the CSV consistent with `done` before appending
    write_csv(&csv_path, &done.values().cloned().collect::<Vec<_>>())?;
    let mut csv_out = OpenOptions::new()
        .append(true)
        .open(&csv_path)
        .map_err(io_err(&csv_path))?;
    let mut jsonl = match &config.output.per_flow_jsonl {
        Some(p) => Some(BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io_err(p))?,
        )),
        None => None,
    };

    let workers = config.run.workers.min(pending.len()).max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<PointResult, ScenarioError>)>();
    std::thread::scope(|scope| -> Result<(), ScenarioError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (prepared, pending, next) = (&prepared, &pending, &next);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = pending.get(k) else { break };
                if tx.send((k, run_point(prepared, point))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (k, result) in rx {
            let point = &pending[k];
            let (row, telemetry) = match result {
                Ok(res) => {
                    observe(&res);
                    if let Some(out) = jsonl.as_mut() {
                        write_flow_lines(out, &prepared, &res)
                            .map_err(io_err(config.output.per_flow_jsonl.as_ref().unwrap()))?;
                    }
                    let t = PointTelemetry {
                        condition: res.row.condition.clone(),
                        flows_per_ue: point.flows_per_ue,
                        w_f: point.w_f,
                        seed: point.seed,
                        nodes: res.solution.nodes,
                        lp_iterations: res.solution.lp_iterations,
                        solver_objective: res.solution.objective,
                        best_bound: res
                            .solution
                            .best_bound
                            .is_finite()
                            .then_some(res.solution.best_bound),
                        clipped_gnbs: res.model.gnb_scales.iter().filter(|&&s| s < 1.0).count(),
                        error: None,
                    };
                    (res.row, t)
                }
                Err(e) => {
                    warn!("point {point:?} failed: {e}");
                    let row = failed_row(&prepared, point);
                    let t = PointTelemetry {
                        condition: row.condition.clone(),
                        flows_per_ue: point.flows_per_ue,
                        w_f: point.w_f,
                        seed: point.seed,
                        nodes: 0,
                        lp_iterations: 0,
                        solver_objective: None,
                        best_bound: None,
                        clipped_gnbs: 0,
                        error: Some(e.to_string()),
                    };
                    (row, t)
                }
            };
            info!(
                "{} flows={} w_f={} seed={}: {}",
                row.condition, row.flows_per_ue, row.w_f, row.seed, row.status
            );
            csv_out
                .write_all(&row_line(&row)?)
                .map_err(io_err(&csv_path))?;
            csv_out.flush().map_err(io_err(&csv_path))?;
            record.telemetry.push(telemetry);
            done.insert(RowKey::of(&row), row);
        }
        Ok(())
    })?;
    if let Some(mut out) = jsonl {
        out.flush()
            .map_err(io_err(config.output.per_flow_jsonl.as_ref().unwrap()))?;
    }

    let ordered: Vec<SweepRow> = points
        .iter()
        .map(|p| done[&prepared.row_key(p)].clone())
        .collect();
    write_csv(&csv_path, &ordered)?;
    record.points = ordered;
    record.complete = true;
    record.telemetry.sort_by(|a, b| {
        (
            a.condition.as_str(),
            a.flows_per_ue,
            a.w_f.to_bits(),
            a.seed,
        )
            .cmp(&(
                b.condition.as_str(),
                b.flows_per_ue,
                b.w_f.to_bits(),
                b.seed,
            ))
    });
    write_record(&record_path, &record)?;
    Ok(record)
}

fn write_flow_lines<W: Write>(
    out: &mut W,
    prepared: &Prepared,
    res: &PointResult,
) -> io::Result<()> {
    for o in &res.outcomes {
        let f = &res.model.flows[o.flow];
        let line = FlowLine {
            condition: prepared.condition_label(&res.point),
            flows_per_ue: res.point.flows_per_ue,
            w_f: res.point.w_f,
            seed: res.point.seed,
            flow: f.id,
            gnb: f.gnb,
            ue: f.ue,
            five_qi: f.five_qi,
            destination: f.destination,
            demand_bps: f.demand_bps,
            allocated_bps: o.allocated_bps,
            latency_s: o.latency_s,
            pdb_s: o.pdb_s,
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
