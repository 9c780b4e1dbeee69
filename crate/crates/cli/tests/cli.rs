mod common;

use std::io::Write;

use common::*;
use genrisk::rag_theory::{rag_benefit_probability, KnowledgeComposition, MarginCdf, RetrievalModelSpec};
use genrisk::risk_bounds::{conformal_risk, hb_p_value, CalibrationSummary};
use genrisk::simulation::{calibrate, RiskTable};

fn round12(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap()
}

fn temp_csv(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

fn constant_table(id: &str, n: usize, risk: f64) -> String {
    let mut s = String::from("config_id,sample_id,risk\n");
    for i in 0..n {
        s.push_str(&format!("{id},{i},{risk}\n"));
    }
    s
}

#[test]
fn bound_matches_library_on_fixture() {
    let report = json(&genrisk(&["--json", "bound", "risk_table.csv", "--config", "nrag5_g3"]));
    let table = RiskTable::from_csv_path(fixtures().join("risk_table.csv"), false).unwrap();
    let summary = calibrate(&table, "nrag5_g3", 0.1).unwrap();
    let alpha = conformal_risk(&summary).unwrap();
    assert_eq!(report["results"]["alpha_hat"].as_f64().unwrap(), round12(alpha));
    assert_eq!(report["command"], "bound");
    assert_eq!(report["seed"], serde_json::Value::Null);
    assert_eq!(report["inputs"]["risk_table"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn bound_trivial_tables() {
    let zeros = temp_csv(&constant_table("z", 300, 0.0));
    let r = json(&genrisk(&[
        "--json",
        "bound",
        zeros.path().to_str().unwrap(),
        "--config",
        "z",
    ]));
    let expected = conformal_risk(&CalibrationSummary::from_mean(300, 0.0, 0.1).unwrap()).unwrap();
    assert_eq!(r["results"]["alpha_hat"].as_f64().unwrap(), round12(expected));

    let ones = temp_csv(&constant_table("o", 50, 1.0));
    let r = json(&genrisk(&[
        "--json",
        "bound",
        ones.path().to_str().unwrap(),
        "--config",
        "o",
    ]));
    assert_eq!(r["results"]["alpha_hat"].as_f64().unwrap(), 1.0);
}

#[test]
fn bound_reports_bad_rows_with_line_numbers() {
    let bad = temp_csv("config_id,sample_id,risk\na,1,0.2\na,2,1.7\n");
    let out = genrisk(&["bound", bad.path().to_str().unwrap(), "--config", "a"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = genrisk(&["bound", "risk_table.csv", "--config", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown config"));
}

#[test]
fn strict_and_lenient_csv() {
    let extra = temp_csv("config_id,sample_id,risk,note\na,1,0.2,x\na,2,0.4,y\n");
    let path = extra.path().to_str().unwrap();
    let out = genrisk(&["bound", path, "--config", "a"]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&genrisk(&["--json", "--lenient", "bound", path, "--config", "a"]));
    assert!(r["warnings"][0].as_str().unwrap().contains("note"));
}

#[test]
fn human_table_output() {
    let out = genrisk(&["bound", "risk_table.csv", "--config", "nrag10_g5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("results.alpha_hat"));
    assert!(text.contains("results.branch"));
}

#[test]
fn shift_bound_cases() {
    let zero = json(&genrisk(&[
        "--json",
        "shift-bound",
        "risk_table.csv",
        "--config",
        "nrag5_g3",
        "--rho",
        "0",
    ]));
    let plain = zero["results"]["alpha_hat_unshifted"].as_f64().unwrap();
    assert!(zero["results"]["alpha_hat_rho"].as_f64().unwrap() >= plain);

    let out = genrisk(&["shift-bound", "risk_table.csv", "--config", "nrag0_g1", "--rho", "0.9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("largest feasible radius is 0.46"),
        "{}",
        stderr(&out)
    );

    let theorem = json(&genrisk(&[
        "--json",
        "shift-bound",
        "risk_table.csv",
        "--config",
        "nrag0_g1",
        "--rho",
        "0.5",
        "--exponent-variant",
        "theorem",
    ]));
    assert_eq!(theorem["parameters"]["exponent_variant"], "theorem");
}

#[test]
fn valid_configs_all_bad_and_single_pass() {
    let mut body = String::from("config_id,sample_id,risk\n");
    for id in ["x", "y"] {
        for i in 0..100 {
            body.push_str(&format!("{id},{i},0.9\n"));
        }
    }
    let bad = temp_csv(&body);
    let r = json(&genrisk(&[
        "--json",
        "valid-configs",
        bad.path().to_str().unwrap(),
        "--alpha",
        "0.3",
    ]));
    assert_eq!(r["results"]["accepted"].as_array().unwrap().len(), 0);
    assert!(r["warnings"][0].as_str().unwrap().contains("no configuration"));

    for i in 0..100 {
        body.push_str(&format!("good,{i},0.0\n"));
    }
    let one = temp_csv(&body);
    for method in ["bonferroni", "graph"] {
        let r = json(&genrisk(&[
            "--json",
            "valid-configs",
            one.path().to_str().unwrap(),
            "--alpha",
            "0.3",
            "--method",
            method,
        ]));
        assert_eq!(r["results"]["accepted"], serde_json::json!(["good"]));
    }
}

#[test]
fn valid_configs_two_node_hand_trace() {
    // B's p-value lies in (δ/2, δ]: Bonferroni rejects only A, the graph
    // procedure passes A's budget on and then rejects B as well.
    let n = 100;
    let k = (0..n)
        .find(|&k| {
            let p = hb_p_value(n, k as f64 / n as f64, 0.3).unwrap();
            p > 0.05 && p <= 0.1
        })
        .expect("a count with p-value in (0.05, 0.1]");
    let mut body = String::from("config_id,sample_id,risk\n");
    for i in 0..n {
        body.push_str(&format!("A,{i},0\n"));
    }
    for i in 0..n {
        body.push_str(&format!("B,{i},{}\n", u8::from(i < k)));
    }
    let f = temp_csv(&body);
    let path = f.path().to_str().unwrap();
    let bonf = json(&genrisk(&[
        "--json",
        "valid-configs",
        path,
        "--alpha",
        "0.3",
        "--method",
        "bonferroni",
    ]));
    assert_eq!(bonf["results"]["accepted"], serde_json::json!(["A"]));
    let graph = json(&genrisk(&[
        "--json",
        "valid-configs",
        path,
        "--alpha",
        "0.3",
        "--method",
        "graph",
    ]));
    assert_eq!(graph["results"]["accepted"], serde_json::json!(["A", "B"]));
    assert_eq!(graph["results"]["steps"][1]["budget"].as_f64().unwrap(), 0.1);
}

#[test]
fn graph_spec_requires_graph_method_and_known_ids() {
    let out = genrisk(&[
        "valid-configs",
        "risk_table.csv",
        "--alpha",
        "0.3",
        "--graph-spec",
        "graph_spec.json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("g.json");
    std::fs::write(&spec, r#"{"ids": ["a", "b"], "weights": [[0, 1], [1, 0]]}"#).unwrap();
    let out = genrisk(&[
        "valid-configs",
        "risk_table.csv",
        "--alpha",
        "0.3",
        "--method",
        "graph",
        "--graph-spec",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn theory_cases() {
    let r = json(&genrisk(&["--json", "theory", "theory.json"]));
    assert_eq!(r["results"]["benefit"]["raw"].as_f64().unwrap(), 0.921875);
    assert_eq!(
        r["results"]["shifted"]["benefit"]["raw"].as_f64().unwrap(),
        round12(0.921_829_208_895_989_4)
    );

    let out = genrisk(&["theory", "theory_uniform.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("must exceed 1"));

    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("t.json");
    std::fs::write(
        &spec,
        r#"{"retrieval": {"v_rag": 0.0},
            "knowledge": {"n_ext": 100000, "r_ext": [0.5, 0.5], "r_cal": [0.5, 0.5]},
            "transformer": {"d_plus": 0.5, "margin_cdf": [[-1, 0], [0, 0.8], [1, 1]]},
            "n_cal": 500, "n_rag": 20}"#,
    )
    .unwrap();
    let r = json(&genrisk(&["--json", "theory", spec.to_str().unwrap()]));
    let cdf = MarginCdf::new(vec![(-1.0, 0.0), (0.0, 0.8), (1.0, 1.0)]).unwrap();
    let comp = KnowledgeComposition::new(100_000, vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
    let spec = RetrievalModelSpec::new(0.0).unwrap();
    let b = rag_benefit_probability(&cdf, 0.5, 500, 20, &spec, &comp).unwrap();
    assert_eq!(r["results"]["benefit"]["raw"].as_f64().unwrap(), round12(b.raw));
    assert_eq!(r["results"]["benefit"]["p_r"].as_f64().unwrap(), round12(b.p_r));
}

#[test]
fn unknown_fields_are_rejected_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("t.json");
    let text = std::fs::read_to_string(fixtures().join("theory.json")).unwrap();
    std::fs::write(&spec, text.replacen("\"n_cal\"", "\"colour\": \"blue\", \"n_cal\"", 1)).unwrap();
    let out = genrisk(&["theory", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("colour"));
    let r = json(&genrisk(&["--json", "--lenient", "theory", spec.to_str().unwrap()]));
    assert!(r["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w.as_str().unwrap().contains("colour")));

    std::fs::write(&spec, text.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
    assert_eq!(genrisk(&["theory", spec.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible_under_seed() {
    let a = json(&genrisk(&[
        "--json",
        "--seed",
        "99",
        "simulate",
        "simulate_coverage.json",
    ]));
    let b = json(&genrisk(&[
        "--json",
        "--seed",
        "99",
        "--threads",
        "1",
        "simulate",
        "simulate_coverage.json",
    ]));
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["seed"], 99);
    assert!(a["results"]["rate"].as_f64().unwrap() <= 0.1);

    let out = genrisk(&["--json", "simulate", "simulate_fwer.json"]);
    assert!(out.status.success());
    let printed = stderr(&out);
    let seed: u64 = printed.trim().strip_prefix("seed: ").unwrap().parse().unwrap();
    assert_eq!(json(&out)["seed"], seed);

    let env = std::process::Command::new(env!("CARGO_BIN_EXE_genrisk"))
        .args(["--json", "simulate", "simulate_fwer.json"])
        .current_dir(fixtures())
        .env("GENRISK_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(json(&env)["seed"], 3);
    assert!(stderr(&env).is_empty());
}

#[test]
fn protocol_demo_cases() {
    let args = [
        "--json",
        "--seed",
        "5",
        "protocol-demo",
        "--kb",
        "kb.jsonl",
        "--generator",
        "generator.json",
        "--query",
        "1,0.05,0",
        "--n-rag",
        "2",
        "--lambda-g",
        "3",
        "--lambda-s",
        "0.5",
    ];
    let a = json(&genrisk(&args));
    let b = json(&genrisk(&args));
    assert_eq!(a["results"], b["results"]);
    assert_eq!(a["results"]["items"].as_array().unwrap().len(), 3);
    assert_eq!(a["results"]["retrieved"][0]["index"], 0);

    let vacuous = json(&genrisk(&[
        "--json",
        "--seed",
        "5",
        "protocol-demo",
        "--kb",
        "kb.jsonl",
        "--generator",
        "generator.json",
        "--query",
        "1,0.05,0",
        "--n-rag",
        "0",
        "--lambda-g",
        "6",
        "--lambda-s",
        "1",
    ]));
    assert_eq!(vacuous["results"]["rejections"], 0);

    let saturated = json(&genrisk(&[
        "--json",
        "--seed",
        "5",
        "protocol-demo",
        "--kb",
        "kb.jsonl",
        "--generator",
        "generator.json",
        "--query",
        "1,0.05,0",
        "--n-rag",
        "1",
        "--lambda-g",
        "6",
        "--lambda-s",
        "0.0",
    ]));
    assert_eq!(saturated["results"]["saturated"], true);
    assert_eq!(saturated["results"]["draws"], 200);

    let out = genrisk(&[
        "protocol-demo",
        "--kb",
        "kb.jsonl",
        "--generator",
        "generator.json",
        "--query",
        "1,0",
        "--n-rag",
        "1",
        "--lambda-g",
        "1",
        "--lambda-s",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn goldens() {
    let cases: [(&str, &[&str]); 6] = [
        ("bound", &["--json", "bound", "risk_table.csv", "--config", "nrag5_g3"]),
        (
            "shift_bound",
            &[
                "--json",
                "shift-bound",
                "risk_table.csv",
                "--config",
                "nrag5_g3",
                "--rho",
                "0.1",
            ],
        ),
        (
            "valid_configs_graph",
            &[
                "--json",
                "valid-configs",
                "risk_table.csv",
                "--alpha",
                "0.3",
                "--method",
                "graph",
                "--graph-spec",
                "graph_spec.json",
            ],
        ),
        ("theory", &["--json", "theory", "theory.json"]),
        (
            "simulate_fwer",
            &["--json", "--seed", "3", "simulate", "simulate_fwer.json"],
        ),
        (
            "protocol_demo",
            &[
                "--json",
                "--seed",
                "5",
                "protocol-demo",
                "--kb",
                "kb.jsonl",
                "--generator",
                "generator.json",
                "--query",
                "1,0.05,0",
                "--n-rag",
                "2",
                "--lambda-g",
                "3",
                "--lambda-s",
                "0.5",
                "--reference",
                "paris is the capital of france",
            ],
        ),
    ];
    for (name, args) in cases {
        check_golden(name, args).unwrap();
    }
}
