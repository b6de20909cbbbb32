//! Domain model: per-configuration attack graphs, the MTD switching schedule,
//! sensor eligibility and budgets, false-negative rates, and loading plus
//! validation of the on-disk JSON model format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance when checking that probability rows sum to one.
pub const DIST_TOL: f64 = 1e-9;

/// Reserved identifier for the detection sink in the product MDP.
pub const SINK_NAME: &str = "sink";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Validation(msg.into())
}

/// A single configuration's attack graph: a probabilistic transition system
/// over security states and attack actions, with an initial distribution and
/// a set of goal states the attacker tries to reach.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackGraph {
    pub states: BTreeSet<String>,
    pub actions: BTreeSet<String>,
    /// state -> action -> next state -> probability. Absent keys mean the
    /// action is *undefined* at that state, which is distinct from a
    /// zero-probability outcome.
    pub transitions: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    pub initial_dist: BTreeMap<String, f64>,
    pub goal_states: BTreeSet<String>,
}

impl AttackGraph {
    /// The outcome distribution of `action` at `state`, if defined.
    pub fn row(&self, state: &str, action: &str) -> Option<&BTreeMap<String, f64>> {
        self.transitions.get(state).and_then(|m| m.get(action))
    }

    pub fn is_defined(&self, state: &str, action: &str) -> bool {
        self.row(state, action).is_some()
    }
}

/// The proactive defense strategy: a Markov chain over configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct MtdSchedule {
    /// Configuration identifiers, in the order matching the matrix rows.
    pub configs: Vec<String>,
    pub switch_matrix: Vec<Vec<f64>>,
    pub initial_config_dist: Vec<f64>,
}

impl MtdSchedule {
    pub fn config_index(&self, name: &str) -> Option<usize> {
        self.configs.iter().position(|c| c == name)
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.switch_matrix[from][to]
    }
}

/// Where sensors may be placed and how many fit per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConstraints {
    /// (state, action) pairs eligible for intrusion detectors.
    pub detector_sites: BTreeSet<(String, String)>,
    /// (state, action) pairs eligible for stealthy sensors.
    pub stealthy_sites: BTreeSet<(String, String)>,
    /// Max detectors per configuration.
    pub detector_budget: u32,
    /// Max stealthy sensors per configuration.
    pub stealthy_budget: u32,
}

/// Per-site false negative rates for intrusion detectors, with a global
/// default. Rates at the endpoints 0 and 1 are accepted with a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct FalseNegativeModel {
    pub default_rate: f64,
    /// state -> action -> rate overrides.
    pub overrides: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FalseNegativeModel {
    pub fn uniform(rate: f64) -> Self {
        FalseNegativeModel { default_rate: rate, overrides: BTreeMap::new() }
    }

    pub fn rate(&self, state: &str, action: &str) -> f64 {
        self.overrides
            .get(state)
            .and_then(|m| m.get(action))
            .copied()
            .unwrap_or(self.default_rate)
    }
}

/// A placement site: (state, configuration, action).
pub type Site = (String, String, String);

/// Boolean placement maps for both sensor kinds, as sets of placed sites.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorAllocation {
    /// Intrusion detector sites (state, configuration, action).
    pub x: BTreeSet<Site>,
    /// Stealthy sensor sites (state, configuration, action).
    pub y: BTreeSet<Site>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SensorKind {
    Detector,
    Stealthy,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorKind::Detector => write!(f, "detector"),
            SensorKind::Stealthy => write!(f, "stealthy sensor"),
        }
    }
}

/// One violated allocation invariant, with site coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownIdentifier { kind: SensorKind, site: Site, what: &'static str },
    Ineligible { kind: SensorKind, site: Site },
    UndefinedTransition { kind: SensorKind, site: Site },
    MutualExclusion { site: Site },
    BudgetExceeded { kind: SensorKind, config: String, count: usize, budget: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownIdentifier { kind, site, what } => write!(
                f,
                "{kind} site ({}, {}, {}) references unknown {what}",
                site.0, site.1, site.2
            ),
            Violation::Ineligible { kind, site } => write!(
                f,
                "{kind} site ({}, {}, {}) is not in the eligible site set",
                site.0, site.1, site.2
            ),
            Violation::UndefinedTransition { kind, site } => write!(
                f,
                "{kind} site ({}, {}, {}) has no defined transition in configuration {}",
                site.0, site.1, site.2, site.1
            ),
            Violation::MutualExclusion { site } => write!(
                f,
                "both sensor kinds placed on ({}, {}, {})",
                site.0, site.1, site.2
            ),
            Violation::BudgetExceeded { kind, config, count, budget } => write!(
                f,
                "{count} {kind}s in configuration {config} exceed the budget of {budget}"
            ),
        }
    }
}

/// The full model: one attack graph per configuration (sharing states,
/// actions, initial distribution, and goals), the MTD schedule, sensor
/// constraints, and the false-negative model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    /// Aligned with `schedule.configs`.
    pub graphs: Vec<AttackGraph>,
    pub schedule: MtdSchedule,
    pub constraints: SensorConstraints,
    pub fn_model: FalseNegativeModel,
}

impl ModelBundle {
    pub fn graph(&self, config: usize) -> &AttackGraph {
        &self.graphs[config]
    }

    /// Shared state set (identical across configurations after load).
    pub fn states(&self) -> &BTreeSet<String> {
        &self.graphs[0].states
    }

    pub fn actions(&self) -> &BTreeSet<String> {
        &self.graphs[0].actions
    }

    pub fn goal_states(&self) -> &BTreeSet<String> {
        &self.graphs[0].goal_states
    }

    pub fn initial_dist(&self) -> &BTreeMap<String, f64> {
        &self.graphs[0].initial_dist
    }

    pub fn with_detector_budget(mut self, k: u32) -> Self {
        self.constraints.detector_budget = k;
        self
    }

    pub fn with_stealthy_budget(mut self, h: u32) -> Self {
        self.constraints.stealthy_budget = h;
        self
    }

    pub fn with_uniform_eps(mut self, eps: f64) -> Self {
        self.fn_model = FalseNegativeModel::uniform(eps);
        self
    }
}

// ---------------------------------------------------------------------------
// On-disk JSON format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    states: Vec<String>,
    actions: Vec<String>,
    goal_states: Vec<String>,
    initial_dist: BTreeMap<String, f64>,
    /// Configuration name -> per-configuration data. Configurations are
    /// ordered by name (lexicographic); MTD matrix rows follow that order.
    configs: BTreeMap<String, ConfigFile>,
    mtd: MtdFile,
    sensors: SensorsFile,
    false_negative: FnFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    transitions: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MtdFile {
    matrix: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SensorsFile {
    detector_sites: Vec<(String, String)>,
    stealthy_sites: Vec<(String, String)>,
    detector_budget: i64,
    stealthy_budget: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FnFile {
    default: f64,
    #[serde(default)]
    overrides: BTreeMap<String, BTreeMap<String, f64>>,
}

fn check_dist(sum: f64, what: &str) -> Result<(), ModelError> {
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(invalid(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

fn check_rate(rate: f64, what: &str) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(invalid(format!("{what} is {rate}, outside [0, 1]")));
    }
    if rate == 0.0 || rate == 1.0 {
        log::warn!("{what} is the degenerate rate {rate}");
    }
    Ok(())
}

impl ModelBundle {
    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        let states: BTreeSet<String> = file.states.into_iter().collect();
        let actions: BTreeSet<String> = file.actions.into_iter().collect();
        if states.is_empty() {
            return Err(invalid("state set is empty"));
        }
        if actions.is_empty() {
            return Err(invalid("action set is empty"));
        }
        if states.contains(SINK_NAME) {
            return Err(invalid(format!("state identifier '{SINK_NAME}' is reserved")));
        }
        let goal_states: BTreeSet<String> = file.goal_states.into_iter().collect();
        for g in &goal_states {
            if !states.contains(g) {
                return Err(invalid(format!("goal state {g} is not a declared state")));
            }
        }

        let mut init_sum = 0.0;
        for (s, p) in &file.initial_dist {
            if !states.contains(s) {
                return Err(invalid(format!("initial_dist references unknown state {s}")));
            }
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(invalid(format!("initial_dist[{s}] = {p} is outside [0, 1]")));
            }
            init_sum += p;
        }
        check_dist(init_sum, "initial_dist")?;

        if file.configs.is_empty() {
            return Err(invalid("no configurations declared"));
        }
        let config_names: Vec<String> = file.configs.keys().cloned().collect();
        let n = config_names.len();
        if file.mtd.matrix.len() != n {
            return Err(invalid(format!(
                "mtd.matrix has {} rows for {n} configurations",
                file.mtd.matrix.len()
            )));
        }
        for (i, row) in file.mtd.matrix.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!(
                    "mtd.matrix row {} has {} entries for {n} configurations",
                    config_names[i],
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for &p in row {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(invalid(format!(
                        "mtd.matrix row {} entry {p} is outside [0, 1]",
                        config_names[i]
                    )));
                }
                sum += p;
            }
            check_dist(sum, &format!("mtd.matrix row {}", config_names[i]))?;
        }
        if file.mtd.initial.len() != n {
            return Err(invalid("mtd.initial length does not match configurations"));
        }
        check_dist(file.mtd.initial.iter().sum(), "mtd.initial")?;

        // Per-configuration transition functions; state/action sets are the
        // union (the declared sets), missing rows stay undefined.
        let mut graphs = Vec::with_capacity(n);
        for name in &config_names {
            let cfg = &file.configs[name];
            for (s, by_action) in &cfg.transitions {
                if !states.contains(s) {
                    return Err(invalid(format!(
                        "configuration {name}: transitions reference unknown state {s}"
                    )));
                }
                for (a, row) in by_action {
                    if !actions.contains(a) {
                        return Err(invalid(format!(
                            "configuration {name}: transitions at {s} reference unknown action {a}"
                        )));
                    }
                    if row.is_empty() {
                        return Err(invalid(format!(
                            "configuration {name}: empty transition row at ({s}, {a})"
                        )));
                    }
                    let mut sum = 0.0;
                    for (ns, p) in row {
                        if !states.contains(ns) {
                            return Err(invalid(format!(
                                "configuration {name}: transition ({s}, {a}) references unknown state {ns}"
                            )));
                        }
                        if !(*p > 0.0 && *p <= 1.0) {
                            return Err(invalid(format!(
                                "configuration {name}: transition ({s}, {a}) -> {ns} has probability {p}, expected (0, 1]"
                            )));
                        }
                        sum += p;
                    }
                    check_dist(sum, &format!("configuration {name}: transition row ({s}, {a})"))?;
                }
            }
            graphs.push(AttackGraph {
                states: states.clone(),
                actions: actions.clone(),
                transitions: cfg.transitions.clone(),
                initial_dist: file.initial_dist.clone(),
                goal_states: goal_states.clone(),
            });
        }

        if file.sensors.detector_budget < 0 {
            return Err(invalid("detector_budget is negative"));
        }
        if file.sensors.stealthy_budget < 0 {
            return Err(invalid("stealthy_budget is negative"));
        }
        let check_sites = |sites: &[(String, String)], what: &str| -> Result<(), ModelError> {
            for (s, a) in sites {
                if !states.contains(s) || !actions.contains(a) {
                    return Err(invalid(format!("{what} ({s}, {a}) references unknown identifiers")));
                }
                if !graphs.iter().any(|g| g.is_defined(s, a)) {
                    return Err(invalid(format!(
                        "{what} ({s}, {a}) has no defined transition in any configuration"
                    )));
                }
            }
            Ok(())
        };
        check_sites(&file.sensors.detector_sites, "detector site")?;
        check_sites(&file.sensors.stealthy_sites, "stealthy site")?;

        check_rate(file.false_negative.default, "false_negative default")?;
        for (s, by_action) in &file.false_negative.overrides {
            if !states.contains(s) {
                return Err(invalid(format!("false_negative override references unknown state {s}")));
            }
            for (a, rate) in by_action {
                if !actions.contains(a) {
                    return Err(invalid(format!(
                        "false_negative override references unknown action {a}"
                    )));
                }
                check_rate(*rate, &format!("false_negative override ({s}, {a})"))?;
            }
        }

        Ok(ModelBundle {
            graphs,
            schedule: MtdSchedule {
                configs: config_names,
                switch_matrix: file.mtd.matrix,
                initial_config_dist: file.mtd.initial,
            },
            constraints: SensorConstraints {
                detector_sites: file.sensors.detector_sites.into_iter().collect(),
                stealthy_sites: file.sensors.stealthy_sites.into_iter().collect(),
                detector_budget: file.sensors.detector_budget as u32,
                stealthy_budget: file.sensors.stealthy_budget as u32,
            },
            fn_model: FalseNegativeModel {
                default_rate: file.false_negative.default,
                overrides: file.false_negative.overrides,
            },
        })
    }

    fn to_file(&self) -> ModelFile {
        let g0 = &self.graphs[0];
        ModelFile {
            states: g0.states.iter().cloned().collect(),
            actions: g0.actions.iter().cloned().collect(),
            goal_states: g0.goal_states.iter().cloned().collect(),
            initial_dist: g0.initial_dist.clone(),
            configs: self
                .schedule
                .configs
                .iter()
                .zip(&self.graphs)
                .map(|(name, g)| (name.clone(), ConfigFile { transitions: g.transitions.clone() }))
                .collect(),
            mtd: MtdFile {
                matrix: self.schedule.switch_matrix.clone(),
                initial: self.schedule.initial_config_dist.clone(),
            },
            sensors: SensorsFile {
                detector_sites: self.constraints.detector_sites.iter().cloned().collect(),
                stealthy_sites: self.constraints.stealthy_sites.iter().cloned().collect(),
                detector_budget: self.constraints.detector_budget as i64,
                stealthy_budget: self.constraints.stealthy_budget as i64,
            },
            false_negative: FnFile {
                default: self.fn_model.default_rate,
                overrides: self.fn_model.overrides.clone(),
            },
        }
    }
}

/// Loads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, ModelError> {
    let text = std::fs::read_to_string(path)?;
    load_model_str(&text)
}

/// Loads and validates a model from JSON text.
pub fn load_model_str(text: &str) -> Result<ModelBundle, ModelError> {
    let file: ModelFile = serde_json::from_str(text)?;
    ModelBundle::from_file(file)
}

/// Serializes a bundle back into the on-disk JSON format.
pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let text = model_to_string(bundle)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn model_to_string(bundle: &ModelBundle) -> Result<String, ModelError> {
    Ok(serde_json::to_string_pretty(&bundle.to_file())?)
}

/// Checks a sensor allocation against the bundle. Violations are data, not
/// failures: the list is empty iff the allocation is feasible.
pub fn validate_allocation(bundle: &ModelBundle, alloc: &SensorAllocation) -> Vec<Violation> {
    let mut out = Vec::new();
    let states = bundle.states();
    let actions = bundle.actions();

    let mut per_config: BTreeMap<(String, SensorKind), usize> = BTreeMap::new();
    let mut check_side = |sites: &BTreeSet<Site>, kind: SensorKind, eligible: &BTreeSet<(String, String)>, out: &mut Vec<Violation>| {
        for site in sites {
            let (s, i, a) = site;
            if !states.contains(s) {
                out.push(Violation::UnknownIdentifier { kind, site: site.clone(), what: "state" });
                continue;
            }
            if !actions.contains(a) {
                out.push(Violation::UnknownIdentifier { kind, site: site.clone(), what: "action" });
                continue;
            }
            let Some(cfg) = bundle.schedule.config_index(i) else {
                out.push(Violation::UnknownIdentifier {
                    kind,
                    site: site.clone(),
                    what: "configuration",
                });
                continue;
            };
            if !eligible.contains(&(s.clone(), a.clone())) {
                out.push(Violation::Ineligible { kind, site: site.clone() });
                continue;
            }
            if !bundle.graph(cfg).is_defined(s, a) {
                out.push(Violation::UndefinedTransition { kind, site: site.clone() });
                continue;
            }
            *per_config.entry((i.clone(), kind)).or_default() += 1;
        }
    };
    check_side(&alloc.x, SensorKind::Detector, &bundle.constraints.detector_sites, &mut out);
    check_side(&alloc.y, SensorKind::Stealthy, &bundle.constraints.stealthy_sites, &mut out);

    for site in alloc.x.intersection(&alloc.y) {
        out.push(Violation::MutualExclusion { site: site.clone() });
    }

    for ((config, kind), count) in per_config {
        let budget = match kind {
            SensorKind::Detector => bundle.constraints.detector_budget,
            SensorKind::Stealthy => bundle.constraints.stealthy_budget,
        };
        if count > budget as usize {
            out.push(Violation::BudgetExceeded { kind, config, count, budget });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::example_bundle;

    #[test]
    fn bundled_example_loads() {
        let bundle = example_bundle();
        assert_eq!(bundle.schedule.configs.len(), 2);
        assert_eq!(bundle.schedule.switch_matrix, vec![vec![0.3, 0.7], vec![0.4, 0.6]]);
        assert_eq!(bundle.goal_states().len(), 1);
    }

    #[test]
    fn nonstochastic_row_is_rejected() {
        let text = crate::testutil::example_json();
        // Corrupt one transition row so it sums to 0.9.
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["configs"]["0"]["transitions"]["A"]["w1"]["h1_user"] = serde_json::json!(0.6);
        let err = load_model_str(&v.to_string()).unwrap_err();
        match err {
            ModelError::Validation(msg) => assert!(msg.contains("(A, w1)"), "{msg}"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn single_config_identity_schedule() {
        let text = r#"{
            "states": ["s", "g"],
            "actions": ["a"],
            "goal_states": ["g"],
            "initial_dist": {"s": 1.0},
            "configs": {"only": {"transitions": {"s": {"a": {"g": 1.0}}}}},
            "mtd": {"matrix": [[1.0]], "initial": [1.0]},
            "sensors": {"detector_sites": [["s","a"]], "stealthy_sites": [],
                        "detector_budget": 1, "stealthy_budget": 0},
            "false_negative": {"default": 0.3}
        }"#;
        let bundle = load_model_str(text).unwrap();
        assert_eq!(bundle.schedule.configs, vec!["only"]);
        assert_eq!(bundle.schedule.switch_matrix, vec![vec![1.0]]);
    }

    #[test]
    fn negative_budget_is_rejected() {
        let text = crate::testutil::example_json().replace(
            "\"detector_budget\": 2",
            "\"detector_budget\": -1",
        );
        let err = load_model_str(&text).unwrap_err();
        assert!(matches!(err, ModelError::Validation(ref m) if m.contains("negative")), "{err}");
    }

    #[test]
    fn round_trip_is_identical() {
        let bundle = example_bundle();
        let text = model_to_string(&bundle).unwrap();
        let reloaded = load_model_str(&text).unwrap();
        assert_eq!(bundle, reloaded);
    }

    #[test]
    fn all_zero_allocation_is_feasible() {
        let bundle = example_bundle();
        assert!(validate_allocation(&bundle, &SensorAllocation::default()).is_empty());
    }

    #[test]
    fn mutual_exclusion_is_one_violation() {
        let bundle = example_bundle();
        let site = ("A".to_string(), "0".to_string(), "w1".to_string());
        let mut alloc = SensorAllocation::default();
        alloc.x.insert(site.clone());
        alloc.y.insert(site.clone());
        let violations = validate_allocation(&bundle, &alloc);
        assert_eq!(
            violations.iter().filter(|v| matches!(v, Violation::MutualExclusion { .. })).count(),
            1
        );
    }

    #[test]
    fn over_budget_is_reported() {
        let bundle = example_bundle().with_detector_budget(1);
        let mut alloc = SensorAllocation::default();
        alloc.x.insert(("A".into(), "0".into(), "w1".into()));
        alloc.x.insert(("A".into(), "0".into(), "r1".into()));
        let violations = validate_allocation(&bundle, &alloc);
        assert_eq!(violations.len(), 1);
        assert!(matches!(violations[0], Violation::BudgetExceeded { count: 2, budget: 1, .. }));
    }
}
