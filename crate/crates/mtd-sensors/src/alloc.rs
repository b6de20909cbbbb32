//! Sensor allocation: big-M mixed-integer programs for the two placement
//! stages (intrusion detectors against the worst-case attacker, then stealthy
//! sensors against the induced attack policy), plus exhaustive-search oracles
//! used for validation on small models.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::milp::{
    self, MilpError, MilpModel, Relation, SolveOptions, SolveStats, SolveStatus, VarId,
};
use crate::model::{ModelBundle, Site};
use crate::product::{
    apply_detectors, apply_stealthy, build_base_mdp, ProductError, ProductMdp, SiteIdx,
};
use crate::ssp::{
    evaluate_policy, extract_policy, value_iteration, SspError, StateRelevanceWeights,
    StochasticPolicy, ValueVector, VI_MAX_ITER, VI_TOL,
};

/// Big-M constants; values and per-transition contributions live in [0, 1],
/// so unit bounds are valid and as tight as possible.
pub const BIG_M: f64 = 1.0;
pub const LITTLE_M: f64 = -1.0;

/// Allowed disagreement between a MILP optimum and its independent
/// re-evaluation (value iteration or exact policy evaluation).
pub const CERT_TOL: f64 = 1e-4;

/// Cap on exhaustive-search candidates.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Ssp(#[from] SspError),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error("allocation program is infeasible: {0}")]
    Infeasible(String),
    #[error("MILP optimum {milp} disagrees with re-evaluated value {oracle}")]
    CertificateMismatch { milp: f64, oracle: f64 },
    #[error("exhaustive search space of {0} candidates exceeds the limit")]
    SearchSpace(usize),
}

/// The detector-placement program with handles into its variables, so the
/// relaxation can be probed and binaries pinned externally.
pub struct Step1Milp {
    pub model: MilpModel,
    /// Value variable per product state.
    pub v_vars: Vec<VarId>,
    /// Placement binaries, one per eligible site that occurs on a transition.
    pub x_vars: BTreeMap<SiteIdx, VarId>,
}

/// The stealthy-placement program, analogous to [`Step1Milp`].
pub struct Step2Milp {
    pub model: MilpModel,
    pub v_vars: Vec<VarId>,
    pub y_vars: BTreeMap<SiteIdx, VarId>,
}

#[derive(Debug)]
pub struct DetectorAllocResult {
    pub x: BTreeSet<Site>,
    /// Optimal attacker values on the detector-laden MDP (re-solved
    /// independently of the MILP).
    pub values: ValueVector,
    /// MILP objective: weighted sum of values.
    pub objective: f64,
    /// Attacker value from the initial distribution.
    pub attacker_value: f64,
    pub stats: SolveStats,
}

#[derive(Debug)]
pub struct StealthyAllocResult {
    pub y: BTreeSet<Site>,
    /// Values of the fixed attack policy on the fully instrumented MDP.
    pub values: ValueVector,
    pub objective: f64,
    /// Policy value from the initial distribution.
    pub defender_value: f64,
    pub stats: SolveStats,
}

fn site_pair_eligible(
    mdp: &ProductMdp,
    site: SiteIdx,
    pairs: &BTreeSet<(String, String)>,
) -> bool {
    pairs.contains(&(mdp.states[site.0].clone(), mdp.actions[site.2].clone()))
}

fn add_value_vars(model: &mut MilpModel, mdp: &ProductMdp) -> Vec<VarId> {
    (0..mdp.num_states())
        .map(|z| {
            let (lb, ub) = if mdp.is_final(z) {
                (1.0, 1.0)
            } else if mdp.is_sink(z) || mdp.actions_at(z).next().is_none() {
                (0.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            model.add_var(format!("v[{}]", mdp.z_name(z)), lb, ub)
        })
        .collect()
}

fn budget_rows(
    model: &mut MilpModel,
    mdp: &ProductMdp,
    vars: &BTreeMap<SiteIdx, VarId>,
    budget: u32,
    label: &str,
) {
    for (j, config) in mdp.configs.iter().enumerate() {
        let terms: Vec<(VarId, f64)> =
            vars.iter().filter(|((_, cj, _), _)| *cj == j).map(|(_, id)| (*id, 1.0)).collect();
        if !terms.is_empty() {
            model.add_constraint(
                format!("{label}_budget[{config}]"),
                terms,
                Relation::Le,
                budget as f64,
            );
        }
    }
}

/// Builds the detector MILP on the sensor-free MDP: minimize the weighted
/// optimal attacker values over placements x within the per-configuration
/// budget. Monitored transition terms p v' in the Bellman inequalities are
/// replaced by auxiliaries w linearized with unit big-M rows so that
/// w = p v' when x = 0 and w = eps p v' when x = 1.
pub fn build_step1_milp(
    mdp: &ProductMdp,
    bundle: &ModelBundle,
    c: &StateRelevanceWeights,
) -> Step1Milp {
    let mut model = MilpModel::new();
    let v_vars = add_value_vars(&mut model, mdp);
    for (z, v) in v_vars.iter().enumerate() {
        model.set_objective(*v, c.weights[z]);
    }

    // Placement binaries for eligible sites that occur on some transition.
    let mut x_vars: BTreeMap<SiteIdx, VarId> = BTreeMap::new();
    for z in mdp.non_absorbing() {
        for a in mdp.actions_at(z) {
            for tr in mdp.transitions(z, a).unwrap() {
                if let Some(site) = tr.site {
                    if !x_vars.contains_key(&site)
                        && site_pair_eligible(mdp, site, &bundle.constraints.detector_sites)
                    {
                        let (s, i, act) = mdp.site_names(site);
                        x_vars.insert(site, model.add_binary(format!("x[{s}][{i}][{act}]")));
                    }
                }
            }
        }
    }

    for z in mdp.non_absorbing() {
        for a in mdp.actions_at(z) {
            let mut bellman: Vec<(VarId, f64)> = vec![(v_vars[z], 1.0)];
            for (t, tr) in mdp.transitions(z, a).unwrap().iter().enumerate() {
                let x = tr.site.and_then(|s| x_vars.get(&s).copied());
                let Some(x) = x else {
                    // Unmonitorable mass contributes p v' directly.
                    bellman.push((v_vars[tr.target], -tr.prob));
                    continue;
                };
                let site = tr.site.unwrap();
                let eps = bundle.fn_model.rate(&mdp.states[site.0], &mdp.actions[site.2]);
                let p = tr.prob;
                let vt = v_vars[tr.target];
                let w = model.add_var(
                    format!("w[{}][{}][{t}]", mdp.z_name(z), mdp.actions[a]),
                    0.0,
                    f64::INFINITY,
                );
                bellman.push((w, -1.0));
                let tag = format!("[{}][{}][{t}]", mdp.z_name(z), mdp.actions[a]);
                // Off-branch: w = p v' when x = 0.
                model.add_constraint(
                    format!("w_off_ub{tag}"),
                    [(w, 1.0), (vt, -p), (x, LITTLE_M)],
                    Relation::Le,
                    0.0,
                );
                model.add_constraint(
                    format!("w_off_lb{tag}"),
                    [(w, 1.0), (vt, -p), (x, -LITTLE_M)],
                    Relation::Ge,
                    0.0,
                );
                // On-branch: w = eps p v' when x = 1.
                model.add_constraint(
                    format!("w_on_ub{tag}"),
                    [(w, 1.0), (vt, -eps * p), (x, BIG_M)],
                    Relation::Le,
                    BIG_M,
                );
                model.add_constraint(
                    format!("w_on_lb{tag}"),
                    [(w, 1.0), (vt, -eps * p), (x, -BIG_M)],
                    Relation::Ge,
                    -BIG_M,
                );
            }
            model.add_constraint(
                format!("bellman[{}][{}]", mdp.z_name(z), mdp.actions[a]),
                bellman,
                Relation::Ge,
                0.0,
            );
        }
    }

    budget_rows(&mut model, mdp, &x_vars, bundle.constraints.detector_budget, "detector");
    Step1Milp { model, v_vars, x_vars }
}

fn extract_sites(
    mdp: &ProductMdp,
    vars: &BTreeMap<SiteIdx, VarId>,
    sol: &milp::MilpSolution,
) -> BTreeSet<Site> {
    vars.iter()
        .filter(|(_, id)| sol.value(**id) > 0.5)
        .map(|(site, _)| mdp.site_names(*site))
        .collect()
}

fn require_optimal(sol: &milp::MilpSolution, what: &str) -> Result<(), AllocError> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(AllocError::Infeasible(what.to_string())),
        other => Err(AllocError::Milp(MilpError::NumericalFailure(format!(
            "{what} terminated with status {other:?}"
        )))),
    }
}

/// Optimal intrusion-detector placement for the bundle's detector budget.
/// The MILP optimum is certified by re-solving the induced MDP with value
/// iteration.
pub fn allocate_detectors(bundle: &ModelBundle) -> Result<DetectorAllocResult, AllocError> {
    let mdp = build_base_mdp(bundle);
    let c = StateRelevanceWeights::from_initial(&mdp);
    let step1 = build_step1_milp(&mdp, bundle, &c);
    let sol = milp::solve(&step1.model, &SolveOptions::default())?;
    require_optimal(&sol, "detector placement")?;
    let x = extract_sites(&mdp, &step1.x_vars, &sol);

    let mdp_x = apply_detectors(&mdp, &x, &bundle.fn_model)?;
    let values = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER)?;
    let oracle = c.weighted_sum(&values.values);
    if (oracle - sol.objective_value).abs() > CERT_TOL {
        return Err(AllocError::CertificateMismatch { milp: sol.objective_value, oracle });
    }
    let attacker_value = mdp_x.initial_value(&values.values);
    Ok(DetectorAllocResult {
        x,
        values,
        objective: sol.objective_value,
        attacker_value,
        stats: sol.stats,
    })
}

/// Builds the stealthy-sensor MILP on the detector-laden MDP `mdp_x` for the
/// fixed attack policy `pi`. Value variables satisfy the policy-evaluation
/// equalities; each interceptable term kappa v' (kappa = pi(a|z) p) is
/// replaced by an auxiliary q pinned to kappa v' when y = 0 and to 0 when
/// y = 1.
pub fn build_step2_milp(
    mdp_x: &ProductMdp,
    bundle: &ModelBundle,
    pi: &StochasticPolicy,
    c: &StateRelevanceWeights,
) -> Step2Milp {
    let mut model = MilpModel::new();
    let v_vars = add_value_vars(&mut model, mdp_x);
    for (z, v) in v_vars.iter().enumerate() {
        model.set_objective(*v, c.weights[z]);
    }

    let mut y_vars: BTreeMap<SiteIdx, VarId> = BTreeMap::new();
    let mut eligible = |model: &mut MilpModel, site: Option<SiteIdx>| -> Option<VarId> {
        let site = site?;
        if mdp_x.detector_sites().contains(&site)
            || !site_pair_eligible(mdp_x, site, &bundle.constraints.stealthy_sites)
        {
            return None;
        }
        Some(*y_vars.entry(site).or_insert_with(|| {
            let (s, i, a) = mdp_x.site_names(site);
            model.add_binary(format!("y[{s}][{i}][{a}]"))
        }))
    };

    for z in mdp_x.non_absorbing() {
        if mdp_x.actions_at(z).next().is_none() {
            continue;
        }
        let mut balance: Vec<(VarId, f64)> = vec![(v_vars[z], 1.0)];
        for &(a, pa) in pi.action_dist(z) {
            if pa == 0.0 {
                continue;
            }
            for (t, tr) in mdp_x.transitions(z, a).unwrap().iter().enumerate() {
                let kappa = pa * tr.prob;
                if kappa == 0.0 {
                    continue;
                }
                let Some(y) = eligible(&mut model, tr.site) else {
                    balance.push((v_vars[tr.target], -kappa));
                    continue;
                };
                let vt = v_vars[tr.target];
                let q = model.add_var(
                    format!("q[{}][{}][{t}]", mdp_x.z_name(z), mdp_x.actions[a]),
                    0.0,
                    1.0,
                );
                balance.push((q, -1.0));
                let tag = format!("[{}][{}][{t}]", mdp_x.z_name(z), mdp_x.actions[a]);
                // y = 1 forces q = 0; y = 0 pins q = kappa v'.
                model.add_constraint(
                    format!("q_cut{tag}"),
                    [(q, 1.0), (y, BIG_M)],
                    Relation::Le,
                    BIG_M,
                );
                model.add_constraint(
                    format!("q_pin_ub{tag}"),
                    [(vt, kappa), (q, -1.0), (y, BIG_M)],
                    Relation::Ge,
                    0.0,
                );
                model.add_constraint(
                    format!("q_pin_lb{tag}"),
                    [(vt, kappa), (q, -1.0), (y, -BIG_M)],
                    Relation::Le,
                    0.0,
                );
            }
        }
        model.add_constraint(format!("eval[{}]", mdp_x.z_name(z)), balance, Relation::Eq, 0.0);
    }

    budget_rows(&mut model, mdp_x, &y_vars, bundle.constraints.stealthy_budget, "stealthy");
    Step2Milp { model, v_vars, y_vars }
}

/// Optimal stealthy-sensor placement against the softmax attack policy
/// induced by a fixed detector placement. The MILP optimum is certified by
/// exact policy evaluation on the instrumented MDP.
pub fn allocate_stealthy(
    bundle: &ModelBundle,
    det: &DetectorAllocResult,
    mu: f64,
) -> Result<StealthyAllocResult, AllocError> {
    let mdp = build_base_mdp(bundle);
    let c = StateRelevanceWeights::from_initial(&mdp);
    let mdp_x = apply_detectors(&mdp, &det.x, &bundle.fn_model)?;
    let pi = extract_policy(&mdp_x, &det.values, mu)?;

    let step2 = build_step2_milp(&mdp_x, bundle, &pi, &c);
    let sol = milp::solve(&step2.model, &SolveOptions::default())?;
    require_optimal(&sol, "stealthy placement")?;
    let y = extract_sites(&mdp_x, &step2.y_vars, &sol);

    let mdp_xy = apply_stealthy(&mdp_x, &y)?;
    let values = evaluate_policy(&mdp_xy, &pi)?;
    let oracle = c.weighted_sum(&values.values);
    if (oracle - sol.objective_value).abs() > CERT_TOL {
        return Err(AllocError::CertificateMismatch { milp: sol.objective_value, oracle });
    }
    let defender_value = mdp_xy.initial_value(&values.values);
    Ok(StealthyAllocResult {
        y,
        values,
        objective: sol.objective_value,
        defender_value,
        stats: sol.stats,
    })
}

// ---------------------------------------------------------------------------
// Exhaustive-search oracles
// ---------------------------------------------------------------------------

/// Per-configuration lists of sites eligible for a sensor kind, excluding
/// `exclude`, restricted to sites that occur on some transition.
fn eligible_by_config(
    mdp: &ProductMdp,
    pairs: &BTreeSet<(String, String)>,
    exclude: &BTreeSet<SiteIdx>,
) -> Vec<Vec<SiteIdx>> {
    let mut used: BTreeSet<SiteIdx> = BTreeSet::new();
    for z in mdp.non_absorbing() {
        for a in mdp.actions_at(z) {
            for tr in mdp.transitions(z, a).unwrap() {
                if let Some(site) = tr.site {
                    used.insert(site);
                }
            }
        }
    }
    let mut out = vec![Vec::new(); mdp.configs.len()];
    for site in used {
        if !exclude.contains(&site) && site_pair_eligible(mdp, site, pairs) {
            out[site.1].push(site);
        }
    }
    out
}

fn subsets_up_to(items: &[SiteIdx], k: usize) -> Vec<Vec<SiteIdx>> {
    assert!(items.len() <= 24, "site list too long for bitmask enumeration");
    let mut out = Vec::new();
    for mask in 0u32..(1 << items.len()) {
        if mask.count_ones() as usize <= k {
            out.push(
                (0..items.len()).filter(|i| mask >> i & 1 == 1).map(|i| items[i]).collect(),
            );
        }
    }
    out
}

/// All per-configuration-feasible allocations, in deterministic order.
fn enumerate_allocations(
    per_config: &[Vec<SiteIdx>],
    budget: u32,
) -> Result<Vec<BTreeSet<SiteIdx>>, AllocError> {
    let choices: Vec<Vec<Vec<SiteIdx>>> =
        per_config.iter().map(|sites| subsets_up_to(sites, budget as usize)).collect();
    let total: usize = choices.iter().map(|c| c.len()).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(AllocError::SearchSpace(total));
    }
    let mut out: Vec<BTreeSet<SiteIdx>> = vec![BTreeSet::new()];
    for config_choices in &choices {
        let mut next = Vec::with_capacity(out.len() * config_choices.len());
        for base in &out {
            for extra in config_choices {
                let mut combined = base.clone();
                combined.extend(extra.iter().copied());
                next.push(combined);
            }
        }
        out = next;
    }
    Ok(out)
}

fn named(mdp: &ProductMdp, sites: &BTreeSet<SiteIdx>) -> BTreeSet<Site> {
    sites.iter().map(|&s| mdp.site_names(s)).collect()
}

/// Exhaustive detector placement: scores every feasible allocation with the
/// weighted LP values of the induced MDP. First minimizer in enumeration
/// order wins ties.
pub fn brute_force_detectors(bundle: &ModelBundle) -> Result<(BTreeSet<Site>, f64), AllocError> {
    let mdp = build_base_mdp(bundle);
    let c = StateRelevanceWeights::from_initial(&mdp);
    let per_config =
        eligible_by_config(&mdp, &bundle.constraints.detector_sites, &BTreeSet::new());
    let mut best: Option<(BTreeSet<Site>, f64)> = None;
    for candidate in enumerate_allocations(&per_config, bundle.constraints.detector_budget)? {
        let x = named(&mdp, &candidate);
        let mdp_x = apply_detectors(&mdp, &x, &bundle.fn_model)?;
        let v = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER)?;
        let score = c.weighted_sum(&v.values);
        if best.as_ref().map_or(true, |(_, s)| score < *s) {
            best = Some((x, score));
        }
    }
    best.ok_or_else(|| AllocError::Infeasible("no feasible detector allocation".into()))
}

/// Exhaustive stealthy placement against the softmax policy induced by `x`.
pub fn brute_force_stealthy(
    bundle: &ModelBundle,
    x: &BTreeSet<Site>,
    mu: f64,
) -> Result<(BTreeSet<Site>, f64), AllocError> {
    let mdp = build_base_mdp(bundle);
    let c = StateRelevanceWeights::from_initial(&mdp);
    let mdp_x = apply_detectors(&mdp, x, &bundle.fn_model)?;
    let v_star = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER)?;
    let pi = extract_policy(&mdp_x, &v_star, mu)?;
    let per_config = eligible_by_config(
        &mdp_x,
        &bundle.constraints.stealthy_sites,
        mdp_x.detector_sites(),
    );
    let mut best: Option<(BTreeSet<Site>, f64)> = None;
    for candidate in enumerate_allocations(&per_config, bundle.constraints.stealthy_budget)? {
        let y = named(&mdp_x, &candidate);
        let mdp_xy = apply_stealthy(&mdp_x, &y)?;
        let v = evaluate_policy(&mdp_xy, &pi)?;
        let score = c.weighted_sum(&v.values);
        if best.as_ref().map_or(true, |(_, s)| score < *s) {
            best = Some((y, score));
        }
    }
    best.ok_or_else(|| AllocError::Infeasible("no feasible stealthy allocation".into()))
}
