use std::process::Command;

use approx::assert_abs_diff_eq;
use endow::cli::{exit, run, Outcome};
use endow::market::{instance_a, instance_b, Market};
use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn endow(args: &[&str]) -> Outcome {
    run(std::iter::once("endow").chain(args.iter().copied()))
}

fn json(o: &Outcome) -> Value {
    assert_eq!(o.code, exit::OK, "stderr: {}", o.stderr);
    serde_json::from_str(&o.stdout).expect("report is json")
}

fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

#[test]
fn shipped_fixtures_match_builtins() {
    for (file, m) in [("instance_a.json", instance_a()), ("instance_b.json", instance_b())] {
        let text = std::fs::read_to_string(fixture(file)).unwrap();
        assert_eq!(text, m.to_json());
        assert_eq!(Market::from_json(&text).unwrap(), m);
    }
}

#[test]
fn solve_instance_b_at_one_one() {
    let r = json(&endow(&["solve", "--market", &fixture("instance_b.json"), "--x", "1", "--q", "1"]));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["echo"]["command"], "solve");
    assert_abs_diff_eq!(r["primal"]["u"].as_f64().unwrap(), 2f64.ln() / 3.0, epsilon = 1e-9);
    assert_abs_diff_eq!(r["utility_price"][0].as_f64().unwrap(), 0.2, epsilon = 1e-8);
    assert_abs_diff_eq!(r["dual"]["y"].as_f64().unwrap(), 5.0 / 6.0, epsilon = 1e-8);
    assert!(r["dual"]["conjugacy_gap"].as_f64().unwrap() <= 1e-7);
    assert_eq!(r["certificate"]["passed"], true);
    assert!(r.get("timing_ms").is_none());
}

#[test]
fn builtin_names_and_files_agree() {
    let a = endow(&["solve", "--market", "builtin:b", "--x", "1", "--q", "1"]);
    let b = endow(&["solve", "--market", &fixture("instance_b.json"), "--x", "1", "--q", "1"]);
    let (ra, rb) = (json(&a), json(&b));
    assert_eq!(ra["primal"], rb["primal"]);
    assert_eq!(ra["dual"], rb["dual"]);
}

#[test]
fn reports_are_byte_deterministic() {
    for args in [
        vec!["solve", "--market", "builtin:a", "--x", "2", "--q", "0.5"],
        vec!["price", "--market", "builtin:b", "--x", "1", "--q", "1", "--format", "text"],
        vec!["verify", "--random", "3", "--seed", "11", "--format", "csv"],
    ] {
        let first = endow(&args);
        assert_eq!(first.code, exit::OK, "{}", first.stderr);
        assert_eq!(first, endow(&args));
    }
}

#[test]
fn timing_is_opt_in() {
    let r = json(&endow(&["solve", "--market", "builtin:a", "--x", "1", "--timing"]));
    assert!(r["timing_ms"].as_f64().unwrap() >= 0.0);
}

#[test]
fn boundary_portfolio_exits_three_without_stdout() {
    let o = endow(&["solve", "--market", "builtin:b", "--x", "0.3333333333333333", "--q", "-1"]);
    assert_eq!(o.code, exit::NOT_IN_K);
    assert!(o.stdout.is_empty());
    assert!(o.stderr.contains("acceptable cone"));
}

#[test]
fn arbitrage_market_exits_two_with_certificate() {
    let o = endow(&["solve", "--market", &fixture("arbitrage.json"), "--x", "1"]);
    assert_eq!(o.code, exit::NO_EMM);
    assert!(o.stdout.is_empty());
    let line = o.stderr.lines().find(|l| l.starts_with("arbitrage certificate: ")).unwrap();
    let cert: Value = serde_json::from_str(line.trim_start_matches("arbitrage certificate: ")).unwrap();
    let gains: Vec<f64> = cert["gains"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(gains.iter().all(|g| *g >= -1e-12) && gains.iter().any(|g| *g > 1e-9));
    assert_eq!(endow(&["price", "--market", &fixture("arbitrage.json"), "--x", "1"]).code, exit::NO_EMM);
}

#[test]
fn price_reports_intervals_and_utility_prices() {
    let b = json(&endow(&["price", "--market", "builtin:b", "--x", "1"]));
    assert_abs_diff_eq!(b["bounds"][0]["lower"].as_f64().unwrap(), 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(b["bounds"][0]["upper"].as_f64().unwrap(), 1.0 / 3.0, epsilon = 1e-9);
    assert_eq!(b["bounds"][0]["replicable"], false);
    assert_abs_diff_eq!(b["utility_price"][0].as_f64().unwrap(), 2.0 / 9.0, epsilon = 1e-8);
    assert_eq!(b["witness"]["member"], true);
    assert_eq!(b["consistency"]["passed"], true);

    let a = json(&endow(&["price", "--market", "builtin:a", "--x", "1", "--q", "1"]));
    assert_eq!(a["bounds"][0]["replicable"], true);
    assert_abs_diff_eq!(a["bounds"][0]["upper"].as_f64().unwrap(), 1.0 / 3.0, epsilon = 1e-9);
    assert_abs_diff_eq!(a["utility_price"][0].as_f64().unwrap(), 1.0 / 3.0, epsilon = 1e-9);
}

#[test]
fn zero_claim_prices_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = instance_b();
    m.claims[0].payoff = vec![0.0; 3];
    let path = dir.path().join("zero.json");
    std::fs::write(&path, m.to_json()).unwrap();
    let r = json(&endow(&["price", "--market", path.to_str().unwrap(), "--x", "1", "--q", "2"]));
    assert_abs_diff_eq!(r["utility_price"][0].as_f64().unwrap(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r["bounds"][0]["upper"].as_f64().unwrap(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r["certainty_equivalent"]["value"].as_f64().unwrap(), 0.0, epsilon = 1e-9);
}

#[test]
fn default_verify_passes_on_fixtures() {
    let r = json(&endow(&["verify"]));
    assert_eq!(r["summary"]["instances"], 4);
    assert_eq!(r["summary"]["failed"], 0);
    let ids: Vec<&str> = r["instances"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["builtin:a", "builtin:a", "builtin:b", "builtin:b"]);
}

#[test]
fn injected_fault_fails_the_marginal_relation() {
    let o = endow(&["verify", "--market", "builtin:b", "--utility", "log", "--inject-fault"]);
    assert_eq!(o.code, exit::VERIFY_FAILED);
    let r: Value = serde_json::from_str(&o.stdout).unwrap();
    let checks = r["instances"][0]["checks"].as_array().unwrap();
    let marginal = checks.iter().find(|c| c["name"] == "marginal relation").unwrap();
    assert_eq!(marginal["passed"], false);
}

#[test]
fn csv_is_reserved_for_verify() {
    let o = endow(&["solve", "--market", "builtin:a", "--x", "1", "--format", "csv"]);
    assert_eq!(o.code, exit::USAGE);
    assert!(o.stdout.is_empty());
    let v = endow(&["verify", "--format", "csv"]);
    assert_eq!(v.code, exit::OK);
    let mut rows = csv::Reader::from_reader(v.stdout.as_bytes());
    assert_eq!(rows.headers().unwrap().get(0), Some("id"));
    assert_eq!(rows.records().count(), 4);
}

#[test]
fn gen_is_deterministic_and_flags_completeness() {
    let a = endow(&["gen", "--seed", "42"]);
    assert_eq!(a.code, exit::OK);
    assert_eq!(a, endow(&["gen", "--seed", "42"]));
    let m = Market::from_json(&a.stdout).unwrap();
    assert_eq!(m.metadata.as_ref().unwrap()["complete"], false);
    let c = Market::from_json(&endow(&["gen", "--branches", "2"]).stdout).unwrap();
    assert_eq!(c.metadata.as_ref().unwrap()["complete"], true);
    assert_eq!(endow(&["gen", "--branches", "1"]).code, exit::USAGE);
}

#[test]
fn generated_file_feeds_solve() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let path = path.to_str().unwrap();
    let g = endow(&["gen", "--seed", "5", "--periods", "2", "--assets", "1", "--out", path]);
    assert_eq!(g.code, exit::OK);
    assert!(g.stdout.is_empty());
    let r = json(&endow(&["solve", "--market", path, "--x", "1"]));
    assert_eq!(r["certificate"]["passed"], true);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"market": "builtin:b", "utility": "power:0.5", "x": 1.0, "q": [1.0], "format": "text"}"#)
        .unwrap();
    let cfg = cfg.to_str().unwrap();
    let text = endow(&["solve", "--config", cfg]);
    assert_eq!(text.code, exit::OK, "{}", text.stderr);
    assert!(text.stdout.contains("power"));
    let r = json(&endow(&["solve", "--config", cfg, "--format", "json", "--utility", "log"]));
    assert_abs_diff_eq!(r["primal"]["u"].as_f64().unwrap(), 2f64.ln() / 3.0, epsilon = 1e-9);

    let obj = dir.path().join("obj.json");
    std::fs::write(&obj, r#"{"market": "builtin:b", "utility": {"kind": "power", "gamma": 0.5}, "x": 1.0}"#).unwrap();
    let r = json(&endow(&["solve", "--config", obj.to_str().unwrap()]));
    assert_eq!(r["echo"]["utility"], "power:0.5");

    std::fs::write(dir.path().join("bad.json"), r#"{"colour": 1}"#).unwrap();
    let bad = dir.path().join("bad.json");
    assert_eq!(endow(&["solve", "--config", bad.to_str().unwrap()]).code, exit::USAGE);
}

#[test]
fn usage_errors_exit_five() {
    assert_eq!(endow(&["solve", "--market", "builtin:a"]).code, exit::USAGE);
    assert_eq!(endow(&["solve", "--market", "builtin:a", "--x", "1", "--tol-grad", "-1"]).code, exit::USAGE);
    assert_eq!(endow(&["solve", "--market", "builtin:a", "--x", "1", "--q", "1,2"]).code, exit::USAGE);
    assert_eq!(endow(&["solve", "--market", "/no/such/file.json", "--x", "1"]).code, exit::USAGE);
    assert_eq!(endow(&["solve", "--bogus"]).code, exit::USAGE);
    assert_eq!(endow(&["solve", "--market", "builtin:a", "--x", "1", "--utility", "cubic"]).code, exit::USAGE);
    let help = endow(&["--help"]);
    assert_eq!(help.code, exit::OK);
    assert!(help.stdout.contains("verify"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_endow");
    let ok = Command::new(bin).args(["solve", "--market", "builtin:a", "--x", "1"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(!ok.stdout.is_empty());
    let arb = Command::new(bin).args(["solve", "--market", &fixture("arbitrage.json"), "--x", "1"]).output().unwrap();
    assert_eq!(arb.status.code(), Some(2));
    assert!(arb.stdout.is_empty());
    let k = Command::new(bin)
        .args(["solve", "--market", "builtin:b", "--x", "0.3333333333333333", "--q", "-1"])
        .output()
        .unwrap();
    assert_eq!(k.status.code(), Some(3));
}

#[test]
fn generated_files_round_trip_exactly() {
    for seed in [42, 7, 1234] {
        let g = endow(&["gen", "--seed", &seed.to_string(), "--periods", "2", "--claims", "3"]).stdout;
        assert_eq!(Market::from_json(&g).unwrap().to_json(), g);
    }
}
