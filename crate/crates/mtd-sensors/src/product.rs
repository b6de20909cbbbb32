//! Construction of the joint attacker/defender MDPs over the product space
//! Z = S x configurations plus a detection sink: the sensor-free base MDP,
//! the attacker's MDP under a detector allocation, and the defender's MDP
//! under detectors plus stealthy sensors.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{FalseNegativeModel, ModelBundle, Site, SINK_NAME};

/// Index-space placement site: (state, configuration, action) indices.
pub type SiteIdx = (usize, usize, usize);

#[derive(Debug, Error)]
pub enum ProductError {
    #[error("invalid sensor site ({0}, {1}, {2}): {3}")]
    InvalidSite(String, String, String, String),
    #[error("site ({0}, {1}, {2}) already carries an intrusion detector")]
    MutualExclusion(String, String, String),
}

/// One outgoing probability entry. `site` names the monitoring coordinates
/// (source state, target configuration, action) when the entry arises from a
/// defined exploit in the target configuration; entries from invalid-action
/// configuration shuffles and sink entries carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub target: usize,
    pub prob: f64,
    pub site: Option<SiteIdx>,
}

/// The product MDP. Product states are indexed `state * n_configs + config`,
/// with the sink at index `n_states * n_configs`.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    pub states: Vec<String>,
    pub configs: Vec<String>,
    pub actions: Vec<String>,
    /// Outgoing transitions per non-absorbing product state and action.
    rows: Vec<Vec<Option<Vec<Transition>>>>,
    /// Initial distribution over product states (zero at sink).
    pub initial: Vec<f64>,
    final_flags: Vec<bool>,
    /// Sites with a defined transition in the target configuration.
    valid_sites: BTreeSet<SiteIdx>,
    /// Detector sites applied by `apply_detectors`.
    detector_sites: BTreeSet<SiteIdx>,
    /// Stealthy sites applied by `apply_stealthy`.
    stealthy_sites: BTreeSet<SiteIdx>,
}

impl ProductMdp {
    pub fn num_nodes(&self) -> usize {
        self.states.len() * self.configs.len()
    }

    /// Total number of product states including the sink.
    pub fn num_states(&self) -> usize {
        self.num_nodes() + 1
    }

    pub fn sink(&self) -> usize {
        self.num_nodes()
    }

    pub fn z_index(&self, state: usize, config: usize) -> usize {
        state * self.configs.len() + config
    }

    /// (state index, configuration index) of a non-sink product state.
    pub fn node(&self, z: usize) -> Option<(usize, usize)> {
        if z < self.num_nodes() {
            Some((z / self.configs.len(), z % self.configs.len()))
        } else {
            None
        }
    }

    pub fn z_name(&self, z: usize) -> String {
        match self.node(z) {
            Some((s, c)) => format!("{}@{}", self.states[s], self.configs[c]),
            None => SINK_NAME.to_string(),
        }
    }

    pub fn is_final(&self, z: usize) -> bool {
        self.final_flags[z]
    }

    pub fn is_sink(&self, z: usize) -> bool {
        z == self.sink()
    }

    pub fn is_absorbing(&self, z: usize) -> bool {
        self.is_final(z) || self.is_sink(z)
    }

    pub fn non_absorbing(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_states()).filter(|&z| !self.is_absorbing(z))
    }

    pub fn transitions(&self, z: usize, action: usize) -> Option<&[Transition]> {
        self.rows.get(z)?.get(action)?.as_deref()
    }

    /// Actions with a defined row at `z` (empty for absorbing states).
    pub fn actions_at(&self, z: usize) -> impl Iterator<Item = usize> + '_ {
        let row = self.rows.get(z);
        (0..self.actions.len())
            .filter(move |&a| row.map_or(false, |r| r[a].is_some()))
    }

    /// Aggregated next-state distribution for (z, a), summing over sites.
    pub fn transition_map(&self, z: usize, action: usize) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        if let Some(trs) = self.transitions(z, action) {
            for tr in trs {
                *out.entry(tr.target).or_insert(0.0) += tr.prob;
            }
        }
        out
    }

    /// iota-weighted sum of a per-state vector.
    pub fn initial_value(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    pub fn valid_sites(&self) -> &BTreeSet<SiteIdx> {
        &self.valid_sites
    }

    pub fn detector_sites(&self) -> &BTreeSet<SiteIdx> {
        &self.detector_sites
    }

    pub fn stealthy_sites(&self) -> &BTreeSet<SiteIdx> {
        &self.stealthy_sites
    }

    pub fn site_names(&self, site: SiteIdx) -> Site {
        (
            self.states[site.0].clone(),
            self.configs[site.1].clone(),
            self.actions[site.2].clone(),
        )
    }

    /// Resolves a named site to index space, requiring a defined transition
    /// in the target configuration.
    pub fn resolve_site(&self, site: &Site) -> Result<SiteIdx, ProductError> {
        let (s, i, a) = site;
        let err = |reason: &str| {
            ProductError::InvalidSite(s.clone(), i.clone(), a.clone(), reason.to_string())
        };
        let si = self.states.iter().position(|x| x == s).ok_or_else(|| err("unknown state"))?;
        let ci = self.configs.iter().position(|x| x == i).ok_or_else(|| err("unknown configuration"))?;
        let ai = self.actions.iter().position(|x| x == a).ok_or_else(|| err("unknown action"))?;
        let idx = (si, ci, ai);
        if !self.valid_sites.contains(&idx) {
            return Err(err("no defined transition in this configuration"));
        }
        Ok(idx)
    }

    fn resolve_sites(&self, sites: &BTreeSet<Site>) -> Result<BTreeSet<SiteIdx>, ProductError> {
        sites.iter().map(|s| self.resolve_site(s)).collect()
    }

    /// DOT dump for inspection.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("digraph product_mdp {\n  rankdir=LR;\n");
        for z in 0..self.num_states() {
            let shape = if self.is_final(z) {
                "doublecircle"
            } else if self.is_sink(z) {
                "box"
            } else {
                "ellipse"
            };
            let _ = writeln!(out, "  \"{}\" [shape={}];", self.z_name(z), shape);
        }
        for z in 0..self.num_states() {
            for a in self.actions_at(z) {
                for (target, prob) in self.transition_map(z, a) {
                    let _ = writeln!(
                        out,
                        "  \"{}\" -> \"{}\" [label=\"{}: {:.6}\"];",
                        self.z_name(z),
                        self.z_name(target),
                        self.actions[a],
                        prob
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn merge_row(mut row: Vec<Transition>) -> Vec<Transition> {
    let mut merged: BTreeMap<(usize, Option<SiteIdx>), f64> = BTreeMap::new();
    for tr in row.drain(..) {
        *merged.entry((tr.target, tr.site)).or_insert(0.0) += tr.prob;
    }
    merged
        .into_iter()
        .map(|((target, site), prob)| Transition { target, prob, site })
        .collect()
}

#[cfg(debug_assertions)]
fn debug_check_rows(mdp: &ProductMdp) {
    for z in mdp.non_absorbing() {
        for a in mdp.actions_at(z) {
            let sum: f64 = mdp.transitions(z, a).unwrap().iter().map(|t| t.prob).sum();
            debug_assert!(
                (sum - 1.0).abs() < 1e-9,
                "row ({}, {}) sums to {sum}",
                mdp.z_name(z),
                mdp.actions[a]
            );
        }
    }
}

/// Builds the sensor-free attacker MDP from the bundle. For each product
/// state (s, i) and action a defined at s in at least one configuration, the
/// outgoing mass to configuration j is P(i, j) spread over T^j outcomes when
/// T^j(. | s, a) is defined, and a configuration-shuffle self-move to (s, j)
/// otherwise.
pub fn build_base_mdp(bundle: &ModelBundle) -> ProductMdp {
    let states: Vec<String> = bundle.states().iter().cloned().collect();
    let actions: Vec<String> = bundle.actions().iter().cloned().collect();
    let configs = bundle.schedule.configs.clone();
    let ns = states.len();
    let nc = configs.len();
    let na = actions.len();
    let num_nodes = ns * nc;

    let mut final_flags = vec![false; num_nodes + 1];
    for (si, s) in states.iter().enumerate() {
        if bundle.goal_states().contains(s) {
            for c in 0..nc {
                final_flags[si * nc + c] = true;
            }
        }
    }

    let mut initial = vec![0.0; num_nodes + 1];
    for (s, p) in bundle.initial_dist() {
        let si = states.iter().position(|x| x == s).unwrap();
        for c in 0..nc {
            initial[si * nc + c] += p * bundle.schedule.initial_config_dist[c];
        }
    }

    let mut valid_sites = BTreeSet::new();
    for (ci, graph) in bundle.graphs.iter().enumerate() {
        for (s, by_action) in &graph.transitions {
            let si = states.iter().position(|x| x == s).unwrap();
            for a in by_action.keys() {
                let ai = actions.iter().position(|x| x == a).unwrap();
                valid_sites.insert((si, ci, ai));
            }
        }
    }

    let mut rows: Vec<Vec<Option<Vec<Transition>>>> = vec![vec![None; na]; num_nodes + 1];
    for si in 0..ns {
        let s = &states[si];
        for ai in 0..na {
            let a = &actions[ai];
            if !bundle.graphs.iter().any(|g| g.is_defined(s, a)) {
                continue;
            }
            for ci in 0..nc {
                let z = si * nc + ci;
                if final_flags[z] {
                    continue;
                }
                let mut row = Vec::new();
                for j in 0..nc {
                    let pij = bundle.schedule.prob(ci, j);
                    if pij == 0.0 {
                        continue;
                    }
                    match bundle.graph(j).row(s, a) {
                        Some(dist) => {
                            for (ns_name, p) in dist {
                                let ti = states.iter().position(|x| x == ns_name).unwrap();
                                row.push(Transition {
                                    target: ti * nc + j,
                                    prob: pij * p,
                                    site: Some((si, j, ai)),
                                });
                            }
                        }
                        None => {
                            row.push(Transition { target: si * nc + j, prob: pij, site: None });
                        }
                    }
                }
                rows[z][ai] = Some(merge_row(row));
            }
        }
    }

    let mdp = ProductMdp {
        states,
        configs,
        actions,
        rows,
        initial,
        final_flags,
        valid_sites,
        detector_sites: BTreeSet::new(),
        stealthy_sites: BTreeSet::new(),
    };
    #[cfg(debug_assertions)]
    debug_check_rows(&mdp);
    mdp
}

/// Applies an intrusion-detector allocation: monitored exploit outcomes keep
/// a fraction eps(s, a) of their mass, the rest flows to the sink.
pub fn apply_detectors(
    mdp: &ProductMdp,
    x: &BTreeSet<Site>,
    fn_model: &FalseNegativeModel,
) -> Result<ProductMdp, ProductError> {
    let xset = mdp.resolve_sites(x)?;
    let sink = mdp.sink();
    let mut out = mdp.clone();
    for z in 0..mdp.num_states() {
        for a in 0..mdp.actions.len() {
            let Some(trs) = mdp.transitions(z, a) else { continue };
            let mut row = Vec::with_capacity(trs.len() + 1);
            let mut sink_mass = 0.0;
            for tr in trs {
                match tr.site {
                    Some(site) if xset.contains(&site) => {
                        let eps = fn_model.rate(&mdp.states[site.0], &mdp.actions[site.2]);
                        sink_mass += tr.prob * (1.0 - eps);
                        if tr.prob * eps > 0.0 {
                            row.push(Transition { prob: tr.prob * eps, ..tr.clone() });
                        }
                    }
                    _ => row.push(tr.clone()),
                }
            }
            if sink_mass > 0.0 {
                row.push(Transition { target: sink, prob: sink_mass, site: None });
            }
            out.rows[z][a] = Some(merge_row(row));
        }
    }
    out.detector_sites = xset;
    #[cfg(debug_assertions)]
    debug_check_rows(&out);
    Ok(out)
}

/// Applies a stealthy-sensor allocation on top of a (possibly detector-laden)
/// MDP: all exploit mass through a monitored site is diverted to the sink.
pub fn apply_stealthy(mdp: &ProductMdp, y: &BTreeSet<Site>) -> Result<ProductMdp, ProductError> {
    let yset = mdp.resolve_sites(y)?;
    if let Some(&site) = yset.intersection(&mdp.detector_sites).next() {
        let (s, i, a) = mdp.site_names(site);
        return Err(ProductError::MutualExclusion(s, i, a));
    }
    let sink = mdp.sink();
    let mut out = mdp.clone();
    for z in 0..mdp.num_states() {
        for a in 0..mdp.actions.len() {
            let Some(trs) = mdp.transitions(z, a) else { continue };
            let mut row = Vec::with_capacity(trs.len() + 1);
            let mut sink_mass = 0.0;
            for tr in trs {
                match tr.site {
                    Some(site) if yset.contains(&site) => sink_mass += tr.prob,
                    _ => row.push(tr.clone()),
                }
            }
            if sink_mass > 0.0 {
                row.push(Transition { target: sink, prob: sink_mass, site: None });
            }
            out.rows[z][a] = Some(merge_row(row));
        }
    }
    out.stealthy_sites = mdp.stealthy_sites.union(&yset).copied().collect();
    #[cfg(debug_assertions)]
    debug_check_rows(&out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model_str;
    use crate::testutil::example_bundle;
    use std::collections::BTreeSet;

    fn site(s: &str, i: &str, a: &str) -> Site {
        (s.to_string(), i.to_string(), a.to_string())
    }

    fn named_map(mdp: &ProductMdp, z: usize, a: &str) -> BTreeMap<String, f64> {
        let ai = mdp.actions.iter().position(|x| x == a).unwrap();
        mdp.transition_map(z, ai)
            .into_iter()
            .map(|(t, p)| (mdp.z_name(t), p))
            .collect()
    }

    #[test]
    fn single_config_identity_schedule_lifts_graph() {
        let text = r#"{
            "states": ["s", "t", "g"],
            "actions": ["a"],
            "goal_states": ["g"],
            "initial_dist": {"s": 1.0},
            "configs": {"only": {"transitions": {
                "s": {"a": {"t": 0.4, "s": 0.6}},
                "t": {"a": {"g": 1.0}}
            }}},
            "mtd": {"matrix": [[1.0]], "initial": [1.0]},
            "sensors": {"detector_sites": [], "stealthy_sites": [],
                        "detector_budget": 0, "stealthy_budget": 0},
            "false_negative": {"default": 0.3}
        }"#;
        let mdp = build_base_mdp(&load_model_str(text).unwrap());
        let m = named_map(&mdp, mdp.z_index(1, 0), "a"); // "s" sorts after "g", "t" last
        assert_eq!(m.len(), 2);
        assert!((m["s@only"] - 0.6).abs() < 1e-15);
        assert!((m["t@only"] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn action_defined_in_one_config_splits_by_schedule() {
        // Action defined only in config c1, deterministic success: from (s, c0)
        // the mass is P(0,0) on the shuffle self-move and P(0,1) on success.
        let text = r#"{
            "states": ["s", "t", "g"],
            "actions": ["a", "b"],
            "goal_states": ["g"],
            "initial_dist": {"s": 1.0},
            "configs": {
                "c0": {"transitions": {"t": {"b": {"g": 1.0}}}},
                "c1": {"transitions": {"s": {"a": {"t": 1.0}}, "t": {"b": {"g": 1.0}}}}
            },
            "mtd": {"matrix": [[0.25, 0.75], [0.5, 0.5]], "initial": [1.0, 0.0]},
            "sensors": {"detector_sites": [], "stealthy_sites": [],
                        "detector_budget": 0, "stealthy_budget": 0},
            "false_negative": {"default": 0.3}
        }"#;
        let mdp = build_base_mdp(&load_model_str(text).unwrap());
        let s_idx = mdp.states.iter().position(|x| x == "s").unwrap();
        let m = named_map(&mdp, mdp.z_index(s_idx, 0), "a");
        assert_eq!(m.len(), 2);
        assert!((m["s@c0"] - 0.25).abs() < 1e-15);
        assert!((m["t@c1"] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rows_are_stochastic_on_example() {
        let mdp = build_base_mdp(&example_bundle());
        for z in mdp.non_absorbing() {
            for a in mdp.actions_at(z) {
                let sum: f64 = mdp.transitions(z, a).unwrap().iter().map(|t| t.prob).sum();
                assert!((sum - 1.0).abs() < 1e-9, "row {} {}", mdp.z_name(z), a);
            }
        }
    }

    #[test]
    fn empty_detector_allocation_is_identity() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let same = apply_detectors(&base, &BTreeSet::new(), &bundle.fn_model).unwrap();
        for z in 0..base.num_states() {
            for a in 0..base.actions.len() {
                assert_eq!(base.transitions(z, a), same.transitions(z, a));
            }
        }
    }

    #[test]
    fn useless_detector_changes_nothing() {
        let bundle = example_bundle().with_uniform_eps(1.0);
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<Site> = [site("A", "0", "w1"), site("A", "1", "ws3")].into();
        let out = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        for z in 0..base.num_states() {
            for a in 0..base.actions.len() {
                assert_eq!(base.transition_map(z, a), out.transition_map(z, a));
            }
        }
    }

    #[test]
    fn detector_on_undefined_site_is_rejected() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        // w1 is undefined in configuration 1.
        let x: BTreeSet<Site> = [site("A", "1", "w1")].into();
        let err = apply_detectors(&base, &x, &bundle.fn_model).unwrap_err();
        assert!(matches!(err, ProductError::InvalidSite(..)), "{err}");
    }

    #[test]
    fn fig4_fragment_with_detector() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<Site> = [site("A", "0", "w1")].into();
        let out = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let a_idx = out.states.iter().position(|x| x == "A").unwrap();
        let m = named_map(&out, out.z_index(a_idx, 0), "w1");
        assert_eq!(m.len(), 4);
        assert!((m["sink"] - 0.21).abs() < 1e-12);
        assert!((m["A@0"] - 0.027).abs() < 1e-12);
        assert!((m["A@1"] - 0.7).abs() < 1e-12);
        assert!((m["h1_user@0"] - 0.063).abs() < 1e-12);
    }

    #[test]
    fn empty_stealthy_allocation_is_identity() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<Site> = [site("A", "0", "w1")].into();
        let mdp_x = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let same = apply_stealthy(&mdp_x, &BTreeSet::new()).unwrap();
        for z in 0..mdp_x.num_states() {
            for a in 0..mdp_x.actions.len() {
                assert_eq!(mdp_x.transitions(z, a), same.transitions(z, a));
            }
        }
    }

    #[test]
    fn stealthy_diverts_config_mass_to_sink() {
        // Stealthy sensor in configuration 1 only: the removed mass
        // P(i, 1) * T^1 reappears at the sink as P(i, 1).
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let y: BTreeSet<Site> = [site("A", "1", "ws3")].into();
        let out = apply_stealthy(&base, &y).unwrap();
        let a_idx = out.states.iter().position(|x| x == "A").unwrap();
        let m = named_map(&out, out.z_index(a_idx, 0), "ws3");
        // From (A, 0): config-0 shuffle keeps 0.3, everything routed through
        // config 1's ws3 row (mass 0.7) is intercepted.
        assert!((m["sink"] - 0.7).abs() < 1e-12);
        assert!((m["A@0"] - 0.3).abs() < 1e-12);
        let sum: f64 = m.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stealthy_on_detector_site_is_rejected() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<Site> = [site("A", "0", "w1")].into();
        let mdp_x = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let err = apply_stealthy(&mdp_x, &x).unwrap_err();
        assert!(matches!(err, ProductError::MutualExclusion(..)), "{err}");
    }

    #[test]
    fn sink_mass_grows_monotonically() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<Site> = [site("A", "0", "w1"), site("h1_root", "1", "b3")].into();
        let y: BTreeSet<Site> = [site("A", "1", "r1")].into();
        let mdp_x = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let mdp_xy = apply_stealthy(&mdp_x, &y).unwrap();
        let sink = base.sink();
        for z in base.non_absorbing() {
            for a in base.actions_at(z) {
                let s0 = *base.transition_map(z, a).get(&sink).unwrap_or(&0.0);
                let s1 = *mdp_x.transition_map(z, a).get(&sink).unwrap_or(&0.0);
                let s2 = *mdp_xy.transition_map(z, a).get(&sink).unwrap_or(&0.0);
                assert!(s1 >= s0 - 1e-12 && s2 >= s1 - 1e-12);
            }
        }
    }

    #[test]
    fn dot_dump_mentions_sink_and_goal() {
        let mdp = build_base_mdp(&example_bundle());
        let dot = mdp.to_dot();
        assert!(dot.contains("\"sink\""));
        assert!(dot.contains("h3_root@0"));
    }
}
