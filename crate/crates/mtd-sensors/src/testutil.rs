//! Shared fixtures for unit and integration tests: the bundled example model
//! and a seeded random-model generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::model::{load_model_str, ModelBundle};

/// JSON text of the bundled example model.
pub fn example_json() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/example.json"))
        .expect("bundled example model")
}

/// The bundled example model, loaded and validated.
pub fn example_bundle() -> ModelBundle {
    load_model_str(&example_json()).expect("bundled example model is valid")
}

/// Generates a random, valid model bundle: `n_states` ordinary states plus a
/// goal state, `n_configs` configurations, `n_actions` actions. Sensor
/// eligibility covers defined non-goal (state, action) pairs, truncated to at
/// most `max_sites` pairs. Action "a0" is defined at every ordinary state in
/// configuration 0, so every non-absorbing product state has an action.
pub fn random_bundle(
    seed: u64,
    n_states: usize,
    n_configs: usize,
    n_actions: usize,
    max_sites: usize,
) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let actions: Vec<String> = (0..n_actions).map(|i| format!("a{i}")).collect();
    let mut all_states = states.clone();
    all_states.push("goal".to_string());

    let normalized = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    };

    let mut configs = serde_json::Map::new();
    for c in 0..n_configs {
        let mut transitions = serde_json::Map::new();
        for s in &states {
            let mut by_action = serde_json::Map::new();
            for (ai, a) in actions.iter().enumerate() {
                let guaranteed = c == 0 && ai == 0;
                if !guaranteed && !rng.gen_bool(0.6) {
                    continue;
                }
                // 1..=3 distinct targets, goal included with decent odds.
                let mut targets: Vec<&str> = Vec::new();
                if rng.gen_bool(0.4) {
                    targets.push("goal");
                }
                while targets.len() < rng.gen_range(1..=3) {
                    let t = &all_states[rng.gen_range(0..all_states.len())];
                    if !targets.contains(&t.as_str()) {
                        targets.push(t);
                    }
                }
                let probs = normalized(&mut rng, targets.len());
                let row: serde_json::Map<String, serde_json::Value> = targets
                    .iter()
                    .zip(&probs)
                    .map(|(t, p)| (t.to_string(), json!(p)))
                    .collect();
                by_action.insert(a.clone(), serde_json::Value::Object(row));
            }
            if !by_action.is_empty() {
                transitions.insert(s.clone(), serde_json::Value::Object(by_action));
            }
        }
        configs.insert(format!("c{c}"), json!({ "transitions": transitions }));
    }

    // Defined non-goal (state, action) pairs, in deterministic order.
    let mut sites: Vec<(String, String)> = Vec::new();
    for s in &states {
        for a in &actions {
            let defined = configs.values().any(|cfg| {
                cfg["transitions"].get(s).map_or(false, |row| row.get(a).is_some())
            });
            if defined {
                sites.push((s.clone(), a.clone()));
            }
        }
    }
    sites.truncate(max_sites);

    let matrix: Vec<Vec<f64>> = (0..n_configs).map(|_| normalized(&mut rng, n_configs)).collect();
    let initial_config = normalized(&mut rng, n_configs);

    let text = json!({
        "states": all_states,
        "actions": actions,
        "goal_states": ["goal"],
        "initial_dist": { "s0": 1.0 },
        "configs": configs,
        "mtd": { "matrix": matrix, "initial": initial_config },
        "sensors": {
            "detector_sites": sites,
            "stealthy_sites": sites,
            "detector_budget": rng.gen_range(1..=2),
            "stealthy_budget": 1
        },
        "false_negative": { "default": rng.gen_range(0.1..0.9) }
    })
    .to_string();
    load_model_str(&text).expect("generated model is valid")
}
