//! End-to-end acceptance checks. Each test prints a PASS/FAIL line for its
//! criterion (visible with `cargo test --test acceptance -- --nocapture`).

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtd_sensors::alloc::{
    allocate_detectors, allocate_stealthy, brute_force_detectors, brute_force_stealthy,
    build_step1_milp,
};
use mtd_sensors::milp::{solve_lp_relaxation, SolveStatus};
use mtd_sensors::model::{ModelBundle, Site};
use mtd_sensors::product::{apply_detectors, apply_stealthy, build_base_mdp, ProductMdp};
use mtd_sensors::sim::{simulate, DEFAULT_MAX_STEPS};
use mtd_sensors::ssp::{
    evaluate_policy, extract_policy, solve_ssp_lp, value_iteration, StateRelevanceWeights,
    VI_MAX_ITER, VI_TOL,
};
use mtd_sensors::testutil::{example_bundle, random_bundle};

fn report(name: &str, ok: bool, detail: &str) {
    println!("{}: {name}{}", if ok { "PASS" } else { "FAIL" }, if detail.is_empty() {
        String::new()
    } else {
        format!(" ({detail})")
    });
    assert!(ok, "{name}: {detail}");
}

fn site(s: &str, i: &str, a: &str) -> Site {
    (s.to_string(), i.to_string(), a.to_string())
}

fn named_row(mdp: &ProductMdp, state: &str, config: &str, action: &str) -> Vec<(String, f64)> {
    let s = mdp.states.iter().position(|x| x == state).unwrap();
    let c = mdp.configs.iter().position(|x| x == config).unwrap();
    let a = mdp.actions.iter().position(|x| x == action).unwrap();
    mdp.transition_map(mdp.z_index(s, c), a)
        .into_iter()
        .map(|(t, p)| (mdp.z_name(t), p))
        .collect()
}

/// Product construction reproduces the worked single-detector fragment of the
/// bundled example to 1e-12.
#[test]
fn product_golden_fragment() {
    let bundle = example_bundle();
    let base = build_base_mdp(&bundle);
    let x: BTreeSet<Site> = [site("A", "0", "w1")].into();
    let mdp = apply_detectors(&base, &x, &bundle.fn_model).unwrap();
    let row = named_row(&mdp, "A", "0", "w1");
    let expected = [
        ("A@0", 0.027),
        ("A@1", 0.7),
        ("h1_user@0", 0.063),
        ("sink", 0.21),
    ];
    let mut worst = 0.0f64;
    for (name, want) in expected {
        let got = row.iter().find(|(n, _)| n == name).map_or(f64::NAN, |(_, p)| *p);
        worst = worst.max((got - want).abs());
    }
    worst = worst.max((row.len() as f64 - 4.0).abs());
    report("product golden fragment", worst < 1e-12, &format!("max dev {worst:.3e}"));
}

/// LP and value-iteration solutions agree to 1e-6 on 20 random models with at
/// most 50 product states.
#[test]
fn lp_value_iteration_equivalence() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let n_states = 3 + (seed % 5) as usize;
        let n_configs = 1 + (seed % 3) as usize;
        let n_actions = 2 + (seed % 2) as usize;
        let bundle = random_bundle(seed, n_states, n_configs, n_actions, usize::MAX);
        let mdp = build_base_mdp(&bundle);
        assert!(mdp.num_states() <= 50);
        let c = StateRelevanceWeights::from_initial(&mdp);
        let lp = solve_ssp_lp(&mdp, &c).unwrap();
        let vi = value_iteration(&mdp, VI_TOL, VI_MAX_ITER).unwrap();
        for z in 0..mdp.num_states() {
            worst = worst.max((lp.get(z) - vi.get(z)).abs());
        }
    }
    report("LP / value-iteration equivalence", worst < 1e-6, &format!("max dev {worst:.3e}"));
}

/// Both placement MILPs match exhaustive search on 10 small random models.
#[test]
fn milp_matches_brute_force() {
    let mut worst = 0.0f64;
    for seed in 100..110u64 {
        let bundle = random_bundle(seed, 3, 2, 2, 3);
        let det = allocate_detectors(&bundle).unwrap();
        let (_, brute1) = brute_force_detectors(&bundle).unwrap();
        worst = worst.max((det.objective - brute1).abs());

        let ste = allocate_stealthy(&bundle, &det, 0.1).unwrap();
        let (_, brute2) = brute_force_stealthy(&bundle, &det.x, 0.1).unwrap();
        worst = worst.max((ste.objective - brute2).abs());
    }
    report("MILP matches exhaustive search", worst < 1e-6, &format!("max dev {worst:.3e}"));
}

/// Attacker value is monotone: non-increasing in the detector budget,
/// non-decreasing in the false-negative rate; the induced policy value is
/// non-increasing in the stealthy budget.
#[test]
fn value_monotonicity_trends() {
    let eps_grid = [0.1, 0.3, 0.5];
    let mut v2 = vec![vec![0.0f64; 5]; eps_grid.len()];
    let mut det_at_03 = Vec::new();
    for (ei, &eps) in eps_grid.iter().enumerate() {
        for k in 0..=4u32 {
            let bundle = example_bundle().with_uniform_eps(eps).with_detector_budget(k);
            let det = allocate_detectors(&bundle).unwrap();
            v2[ei][k as usize] = det.attacker_value;
            if eps == 0.3 {
                det_at_03.push(det);
            }
        }
    }
    let mut ok = true;
    for row in &v2 {
        for k in 1..row.len() {
            ok &= row[k] <= row[k - 1] + 1e-9;
        }
    }
    for k in 0..5 {
        for ei in 1..eps_grid.len() {
            ok &= v2[ei][k] + 1e-9 >= v2[ei - 1][k];
        }
    }
    report("attacker value monotone in budget and false-negative rate", ok, "");

    let mut ok_h = true;
    for k in 0..=3usize {
        let mut prev = f64::INFINITY;
        for h in 0..=3u32 {
            let bundle = example_bundle()
                .with_uniform_eps(0.3)
                .with_detector_budget(k as u32)
                .with_stealthy_budget(h);
            let ste = allocate_stealthy(&bundle, &det_at_03[k], 0.1).unwrap();
            ok_h &= ste.defender_value <= prev + 1e-9;
            prev = ste.defender_value;
        }
    }
    report("policy value monotone in stealthy budget", ok_h, "");
}

/// Trading one detector for one stealthy sensor is at least as good for the
/// defender on the bundled example.
#[test]
fn stealthy_sensor_advantage() {
    let eps = 0.3;
    let mixed = {
        let bundle = example_bundle()
            .with_uniform_eps(eps)
            .with_detector_budget(1)
            .with_stealthy_budget(1);
        let det = allocate_detectors(&bundle).unwrap();
        allocate_stealthy(&bundle, &det, 0.1).unwrap().defender_value
    };
    let detectors_only = {
        let bundle = example_bundle().with_uniform_eps(eps).with_detector_budget(2);
        allocate_detectors(&bundle).unwrap().attacker_value
    };
    report(
        "stealthy sensor advantage",
        mixed <= detectors_only + 1e-9,
        &format!("{mixed:.6} vs {detectors_only:.6}"),
    );
}

/// Monte Carlo success rates agree with exact policy evaluation within four
/// standard errors on five model/allocation pairs.
#[test]
fn simulation_consistency() {
    let bundle = example_bundle();
    let k2 = allocate_detectors(&bundle.clone().with_detector_budget(2)).unwrap();
    let pairs: Vec<(ModelBundle, BTreeSet<Site>, BTreeSet<Site>)> = vec![
        (bundle.clone(), BTreeSet::new(), BTreeSet::new()),
        (bundle.clone(), [site("A", "0", "w1")].into(), BTreeSet::new()),
        (bundle.clone(), k2.x.clone(), BTreeSet::new()),
        (
            bundle.clone(),
            [site("A", "0", "w1")].into(),
            [site("h2_root", "1", "b3")].into(),
        ),
        (random_bundle(7, 4, 2, 2, usize::MAX), BTreeSet::new(), BTreeSet::new()),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (idx, (b, x, y)) in pairs.iter().enumerate() {
        let base = build_base_mdp(b);
        let mdp_x = apply_detectors(&base, x, &b.fn_model).unwrap();
        let v = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER).unwrap();
        let pi = extract_policy(&mdp_x, &v, 0.1).unwrap();
        let mdp_xy = apply_stealthy(&mdp_x, y).unwrap();
        let exact = mdp_xy.initial_value(&evaluate_policy(&mdp_xy, &pi).unwrap().values);
        let rep = simulate(&mdp_xy, &pi, 100_000, 1234 + idx as u64, DEFAULT_MAX_STEPS).unwrap();
        let sigma = (exact * (1.0 - exact) / rep.trials as f64).sqrt();
        let dev = (rep.empirical_success_rate - exact).abs();
        if dev > 4.0 * sigma + 1e-6 {
            ok = false;
            detail = format!("pair {idx}: dev {dev:.5} exceeds 4 sigma {:.5}", 4.0 * sigma);
        }
    }
    report("simulation consistency", ok, &detail);
}

/// With placements pinned, the big-M program reproduces the LP values of the
/// explicitly instrumented MDP (50 random placements within budget).
#[test]
fn big_m_soundness() {
    let bundle = example_bundle();
    let mdp = build_base_mdp(&bundle);
    let c = StateRelevanceWeights::from_initial(&mdp);
    let step1 = build_step1_milp(&mdp, &bundle, &c);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        // Sample at most `detector_budget` sites per configuration.
        let mut chosen: BTreeSet<_> = BTreeSet::new();
        for j in 0..mdp.configs.len() {
            let sites: Vec<_> = step1.x_vars.keys().filter(|s| s.1 == j).copied().collect();
            let take = rng.gen_range(0..=bundle.constraints.detector_budget as usize);
            let mut pool = sites;
            for _ in 0..take.min(pool.len()) {
                let pick = rng.gen_range(0..pool.len());
                chosen.insert(pool.swap_remove(pick));
            }
        }
        let mut fixed = step1.model.clone();
        for (s, var) in &step1.x_vars {
            fixed.fix_var(*var, if chosen.contains(s) { 1.0 } else { 0.0 });
        }
        let sol = solve_lp_relaxation(&fixed).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let x: BTreeSet<Site> = chosen.iter().map(|&s| mdp.site_names(s)).collect();
        let mdp_x = apply_detectors(&mdp, &x, &bundle.fn_model).unwrap();
        let direct = solve_ssp_lp(&mdp_x, &c).unwrap();
        worst = worst.max((sol.objective_value - c.weighted_sum(&direct.values)).abs());
    }
    report("big-M linearization soundness", worst < 1e-6, &format!("max dev {worst:.3e}"));
}

/// Soft performance check: the full two-stage allocation on the bundled
/// example should finish within ten seconds.
#[test]
fn solver_speed() {
    let bundle = example_bundle().with_detector_budget(2).with_stealthy_budget(1);
    let start = Instant::now();
    let det = allocate_detectors(&bundle).unwrap();
    let _ = allocate_stealthy(&bundle, &det, 0.1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        println!("warning: joint allocation took {secs:.1}s, exceeding the 10s target");
    }
    report("solver speed", true, &format!("{secs:.2}s"));
}
