use ott_wasm::{simulate, solve_allocation, threshold_heatmap};
use serde_json::Value;

fn call(f: fn(&str) -> String, input: &str) -> Value {
    serde_json::from_str(&f(input)).unwrap()
}

#[test]
fn simulate_returns_three_curves() {
    let v = call(simulate, r#"{"seed": 11, "n": 2000}"#);
    assert!(v.get("error").is_none(), "{v}");
    let runs = v["runs"].as_array().unwrap();
    let names: Vec<&str> = runs.iter().map(|r| r["strategy"].as_str().unwrap()).collect();
    assert_eq!(names, ["OTT", "DM", "BH"]);
    for r in runs {
        assert_eq!(r["equity"].as_array().unwrap().len(), 1000);
        assert_eq!(r["timestamps"].as_array().unwrap().len(), 1000);
    }
    assert!(runs[0]["round_trips"].as_u64().unwrap() > 0);
    // Same parameters, same bytes.
    assert_eq!(simulate(r#"{"seed": 11, "n": 2000}"#), simulate(r#"{"n": 2000}"#));
}

#[test]
fn bad_parameters_come_back_as_errors() {
    assert!(call(simulate, "{").get("error").is_some());
    assert!(call(simulate, r#"{"k_open": 1, "k_close": 2}"#)["error"].is_string());
    assert!(call(simulate, r#"{"n": 5}"#)["error"]
        .as_str()
        .unwrap()
        .contains("n must"));
}

#[test]
fn solver_respects_budget_and_neutrality() {
    let problem = r#"{
        "currencies": ["CAD", "EUR", "USD"],
        "entries": [
            {"pair_index": 0, "label": "CAD/EUR", "long": 0, "short": 1,
             "ep": [0.002, 0.001], "cov": [[1e-4, 2e-5], [2e-5, 1e-4]]},
            {"pair_index": 1, "label": "CAD/USD", "long": 0, "short": 2,
             "ep": [0.002, 0.0005], "cov": [[1e-4, 1e-5], [1e-5, 2e-4]]}
        ],
        "tw": [0.2, 0.0, 0.0],
        "tc": 0.001,
        "lambda": 1.0,
        "prices": [2500.0, 1750.0, 2000.0]
    }"#;
    let v = call(solve_allocation, problem);
    assert!(v.get("error").is_none(), "{v}");
    let pairs = v["weights"]["pairs"].as_array().unwrap();
    let long_sum: f64 = pairs.iter().map(|p| p["long"].as_f64().unwrap()).sum();
    assert!(long_sum > 0.0 && long_sum <= 0.8 + 1e-9);
    for (p, short_price) in pairs.iter().zip([1750.0, 2000.0]) {
        let (l, s) = (p["long"].as_f64().unwrap(), p["short"].as_f64().unwrap());
        assert!((-s * 1.001 * 2500.0 - l * 0.999 * short_price).abs() < 1e-9);
    }
    assert!(v["kkt_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn heatmap_lists_admissible_cells() {
    let v = call(
        threshold_heatmap,
        r#"{"n": 3000, "k_open": [2, 5], "k_close": [0, 3], "step": 1}"#,
    );
    assert!(v.get("error").is_none(), "{v}");
    let cells = v["cells"].as_array().unwrap();
    // (2,0) (2,1) (3,0) (3,1) (3,2) (4,0) (4,1) (4,2)
    assert_eq!(cells.len(), 8);
    assert!(cells.iter().all(|c| c["k_close"].as_f64() < c["k_open"].as_f64()));

    let big = call(
        threshold_heatmap,
        r#"{"k_open": [1, 100], "k_close": [0, 50], "step": 0.1}"#,
    );
    assert!(big["error"].as_str().unwrap().contains("too large"));
}
