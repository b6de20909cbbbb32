//! The attacker's reachability problem: LP and value-iteration solvers for
//! max-reachability values, softmax policy extraction, and evaluation of a
//! fixed policy on a (possibly sensor-laden) product MDP.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::milp::{self, MilpModel, Relation, SolveStatus};
use crate::product::ProductMdp;

/// Value-iteration defaults: monotone from below, tight tolerance so the
/// oracle stays authoritative.
pub const VI_TOL: f64 = 1e-9;
pub const VI_MAX_ITER: usize = 100_000;

/// Floor added to the initial distribution when deriving state-relevance
/// weights; the LP needs strictly positive weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Above this many product states, `evaluate_policy` switches from direct
/// Gaussian elimination to iterative evaluation.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum SspError {
    #[error("LP solver failure: {0}")]
    SolverFailure(String),
    #[error("value iteration did not converge: residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("non-absorbing state {0} has no defined actions")]
    DegenerateState(String),
    #[error("policy does not cover non-absorbing state {0}")]
    PolicyCoverage(String),
    #[error("singular policy-evaluation system at pivot {0}")]
    SingularSystem(usize),
}

impl From<milp::MilpError> for SspError {
    fn from(e: milp::MilpError) -> Self {
        SspError::SolverFailure(e.to_string())
    }
}

/// Per-state probabilities of reaching the goal set, indexed like the MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

impl ValueVector {
    pub fn get(&self, z: usize) -> f64 {
        self.values[z]
    }

    pub fn to_named(&self, mdp: &ProductMdp) -> BTreeMap<String, f64> {
        self.values.iter().enumerate().map(|(z, &v)| (mdp.z_name(z), v)).collect()
    }
}

/// Strictly positive LP objective weights.
#[derive(Debug, Clone)]
pub struct StateRelevanceWeights {
    pub weights: Vec<f64>,
}

impl StateRelevanceWeights {
    /// Initial distribution plus a small floor, so every weight is positive.
    pub fn from_initial(mdp: &ProductMdp) -> Self {
        StateRelevanceWeights {
            weights: mdp.initial.iter().map(|p| p + WEIGHT_FLOOR).collect(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        StateRelevanceWeights { weights: vec![1.0; n] }
    }

    /// Objective value Sum c_z v_z.
    pub fn weighted_sum(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(c, v)| c * v).sum()
    }
}

/// A stochastic attack policy over product states.
#[derive(Debug, Clone)]
pub struct StochasticPolicy {
    /// Per state, (action index, probability) pairs; empty at absorbing or
    /// action-less states.
    pub probs: Vec<Vec<(usize, f64)>>,
    pub temperature: f64,
}

impl StochasticPolicy {
    pub fn action_dist(&self, z: usize) -> &[(usize, f64)] {
        &self.probs[z]
    }

    pub fn prob(&self, z: usize, action: usize) -> f64 {
        self.probs[z].iter().find(|(a, _)| *a == action).map_or(0.0, |(_, p)| *p)
    }

    pub fn to_named(&self, mdp: &ProductMdp) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, dist)| !dist.is_empty())
            .map(|(z, dist)| {
                (
                    mdp.z_name(z),
                    dist.iter().map(|(a, p)| (mdp.actions[*a].clone(), *p)).collect(),
                )
            })
            .collect()
    }
}

/// Solves the max-reachability LP: minimize Sum c_z v_z subject to
/// v_z >= Sum P(z'|z,a) v_z' for every defined (z, a), with v fixed to 1 on
/// goal states and 0 at the sink.
pub fn solve_ssp_lp(mdp: &ProductMdp, c: &StateRelevanceWeights) -> Result<ValueVector, SspError> {
    let n = mdp.num_states();
    let mut model = MilpModel::new();
    let vars: Vec<_> = (0..n)
        .map(|z| {
            let (lb, ub) = if mdp.is_final(z) {
                (1.0, 1.0)
            } else if mdp.is_sink(z) {
                (0.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            model.add_var(format!("v[{}]", mdp.z_name(z)), lb, ub)
        })
        .collect();
    for z in 0..n {
        model.set_objective(vars[z], c.weights[z]);
    }
    for z in mdp.non_absorbing() {
        for a in mdp.actions_at(z) {
            let mut terms: BTreeMap<usize, f64> = BTreeMap::new();
            *terms.entry(z).or_insert(0.0) += 1.0;
            for (target, p) in mdp.transition_map(z, a) {
                *terms.entry(target).or_insert(0.0) -= p;
            }
            model.add_constraint(
                format!("bellman[{}][{}]", mdp.z_name(z), mdp.actions[a]),
                terms.into_iter().map(|(z2, coef)| (vars[z2], coef)),
                Relation::Ge,
                0.0,
            );
        }
    }
    let sol = milp::solve_lp_relaxation(&model)?;
    if sol.status != SolveStatus::Optimal {
        return Err(SspError::SolverFailure(format!("LP status {:?}", sol.status)));
    }
    let values = vars.iter().map(|v| sol.value(*v).clamp(0.0, 1.0)).collect();
    Ok(ValueVector { values })
}

/// Bellman iteration for max reachability, starting from the reward vector;
/// iterates are monotone non-decreasing.
pub fn value_iteration(
    mdp: &ProductMdp,
    tol: f64,
    max_iter: usize,
) -> Result<ValueVector, SspError> {
    let n = mdp.num_states();
    let mut v: Vec<f64> = (0..n).map(|z| if mdp.is_final(z) { 1.0 } else { 0.0 }).collect();
    let mut next = v.clone();
    let mut residual = f64::INFINITY;
    for iterations in 0..max_iter {
        residual = 0.0;
        for z in mdp.non_absorbing() {
            let mut best = 0.0f64;
            let mut any = false;
            for a in mdp.actions_at(z) {
                any = true;
                let q: f64 =
                    mdp.transitions(z, a).unwrap().iter().map(|t| t.prob * v[t.target]).sum();
                best = best.max(q);
            }
            let val = if any { best } else { 0.0 };
            residual = residual.max((val - v[z]).abs());
            next[z] = val;
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            return Ok(ValueVector { values: v });
        }
        let _ = iterations;
    }
    Err(SspError::NonConvergence { residual, iterations: max_iter })
}

/// State-action value Q(z, a) = Sum P(z'|z,a) v_z'.
pub fn q_value(mdp: &ProductMdp, v: &ValueVector, z: usize, action: usize) -> f64 {
    mdp.transitions(z, action)
        .map(|trs| trs.iter().map(|t| t.prob * v.values[t.target]).sum())
        .unwrap_or(0.0)
}

/// Softmax policy with temperature `mu`, normalized over the defined action
/// set; as mu -> 0 this recovers the hardmax policy.
pub fn extract_policy(
    mdp: &ProductMdp,
    v: &ValueVector,
    mu: f64,
) -> Result<StochasticPolicy, SspError> {
    assert!(mu > 0.0, "temperature must be positive");
    let mut probs = vec![Vec::new(); mdp.num_states()];
    for z in mdp.non_absorbing() {
        let actions: Vec<usize> = mdp.actions_at(z).collect();
        if actions.is_empty() {
            return Err(SspError::DegenerateState(mdp.z_name(z)));
        }
        let qs: Vec<f64> = actions.iter().map(|&a| q_value(mdp, v, z, a)).collect();
        // exp((Q - v_z)/mu) normalized is the softmax of Q/mu; shift by the
        // max Q for numerical stability.
        let qmax = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = qs.iter().map(|q| ((q - qmax) / mu).exp()).collect();
        let total: f64 = weights.iter().sum();
        probs[z] = actions.iter().zip(&weights).map(|(&a, w)| (a, w / total)).collect();
    }
    Ok(StochasticPolicy { probs, temperature: mu })
}

/// Evaluates a fixed policy: solves v = P_pi v with v = 1 on goal states and
/// 0 at the sink, directly for small systems and iteratively otherwise.
pub fn evaluate_policy(mdp: &ProductMdp, pi: &StochasticPolicy) -> Result<ValueVector, SspError> {
    let n = mdp.num_states();
    for z in mdp.non_absorbing() {
        if mdp.actions_at(z).next().is_some() && pi.action_dist(z).is_empty() {
            return Err(SspError::PolicyCoverage(mdp.z_name(z)));
        }
    }

    // States that can reach the goal set through the policy's support; all
    // others have value 0 and would make the linear system singular (e.g. a
    // recurrent class without goal states).
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for z in mdp.non_absorbing() {
        for &(a, pa) in pi.action_dist(z) {
            if pa == 0.0 {
                continue;
            }
            if let Some(trs) = mdp.transitions(z, a) {
                for tr in trs {
                    if tr.prob > 0.0 {
                        reverse[tr.target].push(z);
                    }
                }
            }
        }
    }
    let mut can_reach = vec![false; n];
    let mut queue: Vec<usize> = (0..n).filter(|&z| mdp.is_final(z)).collect();
    for &z in &queue {
        can_reach[z] = true;
    }
    while let Some(t) = queue.pop() {
        for &z in &reverse[t] {
            if !can_reach[z] {
                can_reach[z] = true;
                queue.push(z);
            }
        }
    }

    // Unknowns: non-absorbing states with actions that can reach the goal.
    let mut index = vec![usize::MAX; n];
    let mut unknowns = Vec::new();
    for z in mdp.non_absorbing() {
        if can_reach[z] && mdp.actions_at(z).next().is_some() {
            index[z] = unknowns.len();
            unknowns.push(z);
        }
    }
    let k = unknowns.len();
    let mut values = vec![0.0; n];
    for z in 0..n {
        if mdp.is_final(z) {
            values[z] = 1.0;
        }
    }
    if k == 0 {
        return Ok(ValueVector { values });
    }

    // Row r: v_z - Sum_{z' unknown} M[z][z'] v_z' = Sum_{z' final} M[z][z'].
    let mut mat = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (r, &z) in unknowns.iter().enumerate() {
        mat[r * k + r] = 1.0;
        for &(a, pa) in pi.action_dist(z) {
            if pa == 0.0 {
                continue;
            }
            if mdp.transitions(z, a).is_none() {
                return Err(SspError::PolicyCoverage(mdp.z_name(z)));
            }
            for tr in mdp.transitions(z, a).unwrap() {
                let w = pa * tr.prob;
                if mdp.is_final(tr.target) {
                    rhs[r] += w;
                } else if index[tr.target] != usize::MAX {
                    mat[r * k + index[tr.target]] -= w;
                }
            }
        }
    }

    let sol = if k < DIRECT_SOLVE_LIMIT {
        gaussian_solve(&mut mat, &mut rhs, k)?
    } else {
        iterative_solve(&mat, &rhs, k)
    };
    for (r, &z) in unknowns.iter().enumerate() {
        values[z] = sol[r].clamp(0.0, 1.0);
    }
    Ok(ValueVector { values })
}

/// Gaussian elimination with partial pivoting on a dense k x k system.
fn gaussian_solve(mat: &mut [f64], rhs: &mut [f64], k: usize) -> Result<Vec<f64>, SspError> {
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if mat[r * k + col].abs() > mat[piv * k + col].abs() {
                piv = r;
            }
        }
        if mat[piv * k + col].abs() < 1e-12 {
            return Err(SspError::SingularSystem(col));
        }
        if piv != col {
            for j in 0..k {
                mat.swap(col * k + j, piv * k + j);
            }
            rhs.swap(col, piv);
        }
        let inv = 1.0 / mat[col * k + col];
        for r in col + 1..k {
            let factor = mat[r * k + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for j in col..k {
                mat[r * k + j] -= factor * mat[col * k + j];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut acc = rhs[col];
        for j in col + 1..k {
            acc -= mat[col * k + j] * x[j];
        }
        x[col] = acc / mat[col * k + col];
    }
    Ok(x)
}

/// Fixed-point iteration v <- (I - A) v + b for the system A v = b built
/// above (A = I - M), converging for almost-surely absorbing chains.
fn iterative_solve(mat: &[f64], rhs: &[f64], k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    let mut next = vec![0.0; k];
    for _ in 0..1_000_000 {
        let mut residual = 0.0f64;
        for r in 0..k {
            let mut acc = rhs[r];
            for j in 0..k {
                if j != r {
                    acc -= mat[r * k + j] * v[j];
                }
            }
            // Diagonal is 1 - self-loop mass.
            let val = acc / mat[r * k + r];
            residual = residual.max((val - v[r]).abs());
            next[r] = val;
        }
        std::mem::swap(&mut v, &mut next);
        if residual < 1e-9 {
            break;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model_str;
    use crate::product::{apply_detectors, apply_stealthy, build_base_mdp};
    use crate::testutil::example_bundle;
    use std::collections::BTreeSet;

    fn chain(rows: &str) -> ProductMdp {
        // Single-configuration helper; `rows` is the transitions JSON.
        let text = format!(
            r#"{{
            "states": ["s", "t", "d", "g"],
            "actions": ["a", "b"],
            "goal_states": ["g"],
            "initial_dist": {{"s": 1.0}},
            "configs": {{"c": {{"transitions": {rows}}}}},
            "mtd": {{"matrix": [[1.0]], "initial": [1.0]}},
            "sensors": {{"detector_sites": [["s","a"]], "stealthy_sites": [["s","a"]],
                        "detector_budget": 1, "stealthy_budget": 1}},
            "false_negative": {{"default": 0.3}}
        }}"#
        );
        build_base_mdp(&load_model_str(&text).unwrap())
    }

    fn z(mdp: &ProductMdp, name: &str) -> usize {
        (0..mdp.num_states()).find(|&z| mdp.z_name(z) == name).unwrap()
    }

    #[test]
    fn boundary_and_one_step_expectation() {
        // d is a dead end, so from s: 0.5 to goal, 0.5 lost.
        let mdp = chain(r#"{"s": {"a": {"g": 0.5, "d": 0.5}}}"#);
        let c = StateRelevanceWeights::from_initial(&mdp);
        let lp = solve_ssp_lp(&mdp, &c).unwrap();
        let vi = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        assert!((lp.get(z(&mdp, "g@c")) - 1.0).abs() < 1e-9);
        assert!((lp.get(z(&mdp, "s@c")) - 0.5).abs() < 1e-6);
        assert!((vi.get(z(&mdp, "s@c")) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn self_loop_retry_reaches_goal_surely() {
        let mdp = chain(r#"{"s": {"a": {"g": 0.5, "s": 0.5}}}"#);
        let c = StateRelevanceWeights::from_initial(&mdp);
        let lp = solve_ssp_lp(&mdp, &c).unwrap();
        let vi = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        assert!((lp.get(z(&mdp, "s@c")) - 1.0).abs() < 1e-6);
        assert!((vi.get(z(&mdp, "s@c")) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unreachable_goal_has_value_zero() {
        let mdp = chain(r#"{"s": {"a": {"s": 0.4, "d": 0.6}}}"#);
        let c = StateRelevanceWeights::from_initial(&mdp);
        let lp = solve_ssp_lp(&mdp, &c).unwrap();
        let vi = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        assert!(lp.get(z(&mdp, "s@c")).abs() < 1e-9);
        assert!(vi.get(z(&mdp, "s@c")).abs() < 1e-9);
    }

    #[test]
    fn lp_matches_vi_on_example_model() {
        let mdp = build_base_mdp(&example_bundle());
        let c = StateRelevanceWeights::from_initial(&mdp);
        let lp = solve_ssp_lp(&mdp, &c).unwrap();
        let vi = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        for zidx in 0..mdp.num_states() {
            assert!(
                (lp.get(zidx) - vi.get(zidx)).abs() < 1e-6,
                "{}: {} vs {}",
                mdp.z_name(zidx),
                lp.get(zidx),
                vi.get(zidx)
            );
        }
    }

    #[test]
    fn weights_scaling_leaves_values_unchanged() {
        let mdp = build_base_mdp(&example_bundle());
        let c1 = StateRelevanceWeights::from_initial(&mdp);
        let c2 = StateRelevanceWeights {
            weights: c1.weights.iter().map(|w| w * 37.5).collect(),
        };
        let v1 = solve_ssp_lp(&mdp, &c1).unwrap();
        let v2 = solve_ssp_lp(&mdp, &c2).unwrap();
        for zidx in 0..mdp.num_states() {
            assert!((v1.get(zidx) - v2.get(zidx)).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_q_values_split_evenly() {
        let mdp = chain(
            r#"{"s": {"a": {"g": 1.0}, "b": {"g": 1.0}},
                "t": {"a": {"t": 1.0}}, "d": {"a": {"d": 1.0}}}"#,
        );
        let v = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp, &v, 0.1).unwrap();
        let dist = pi.action_dist(z(&mdp, "s@c"));
        assert_eq!(dist.len(), 2);
        assert!((dist[0].1 - 0.5).abs() < 1e-12);
        assert!((dist[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_temperature_recovers_hardmax() {
        let mdp = chain(
            r#"{"s": {"a": {"g": 1.0}, "b": {"d": 1.0}},
                "t": {"a": {"t": 1.0}}, "d": {"a": {"d": 1.0}}}"#,
        );
        let v = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp, &v, 1e-6).unwrap();
        let a = mdp.actions.iter().position(|x| x == "a").unwrap();
        assert!(pi.prob(z(&mdp, "s@c"), a) >= 1.0 - 1e-6);
    }

    #[test]
    fn policy_sums_to_one_everywhere() {
        let mdp = build_base_mdp(&example_bundle());
        let v = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp, &v, 0.1).unwrap();
        for zidx in mdp.non_absorbing() {
            let sum: f64 = pi.action_dist(zidx).iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-9, "{}", mdp.z_name(zidx));
        }
    }

    #[test]
    fn certain_path_evaluates_to_one() {
        let mdp = chain(
            r#"{"s": {"a": {"t": 1.0}}, "t": {"a": {"g": 1.0}}, "d": {"a": {"d": 1.0}}}"#,
        );
        let v = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp, &v, 0.1).unwrap();
        let val = evaluate_policy(&mdp, &pi).unwrap();
        assert!((val.get(z(&mdp, "s@c")) - 1.0).abs() < 1e-9);
        assert!((val.get(z(&mdp, "t@c")) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_policy_value_matches_lp_optimum() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<_> =
            [("A".to_string(), "0".to_string(), "w1".to_string())].into();
        let mdp_x = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let c = StateRelevanceWeights::from_initial(&mdp_x);
        let v_star = solve_ssp_lp(&mdp_x, &c).unwrap();
        let pi = extract_policy(&mdp_x, &v_star, 1e-7).unwrap();
        let v_pi = evaluate_policy(&mdp_x, &pi).unwrap();
        assert!(
            (mdp_x.initial_value(&v_star.values) - mdp_x.initial_value(&v_pi.values)).abs() < 1e-4
        );
    }

    #[test]
    fn severed_path_gives_zero_initial_value() {
        let base = chain(
            r#"{"s": {"a": {"t": 1.0}}, "t": {"b": {"g": 1.0}}, "d": {"a": {"d": 1.0}}}"#,
        );
        let y: BTreeSet<_> =
            [("s".to_string(), "c".to_string(), "a".to_string())].into();
        let mdp = apply_stealthy(&base, &y).unwrap();
        let v = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp, &v, 0.1).unwrap();
        let val = evaluate_policy(&mdp, &pi).unwrap();
        assert!(mdp.initial_value(&val.values).abs() < 1e-12);
    }

    #[test]
    fn stealthy_never_raises_policy_value() {
        let bundle = example_bundle();
        let base = build_base_mdp(&bundle);
        let x: BTreeSet<_> =
            [("A".to_string(), "0".to_string(), "w1".to_string())].into();
        let y: BTreeSet<_> =
            [("h1_root".to_string(), "1".to_string(), "b3".to_string())].into();
        let mdp_x = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
        let mdp_xy = apply_stealthy(&mdp_x, &y).unwrap();
        let v = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp_x, &v, 0.1).unwrap();
        let vx = evaluate_policy(&mdp_x, &pi).unwrap();
        let vxy = evaluate_policy(&mdp_xy, &pi).unwrap();
        for zidx in 0..mdp_x.num_states() {
            assert!(vx.get(zidx) >= vxy.get(zidx) - 1e-9, "{}", mdp_x.z_name(zidx));
        }
    }
}
