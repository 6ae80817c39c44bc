use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bidlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bidlab"))
        .args(args)
        .env_remove("BIDLAB_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_AXIS_A: &str = r#"{
  "experiment": "axis-a",
  "seeds": [3],
  "episodes": 20,
  "threads": 2,
  "single_node": { "demand": { "periods": 24 } },
  "bid_surface_period": 11
}"#;

/// Relative path and bytes of every file under `root`.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_field_exits_1_with_line() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "bad.json",
        "{\n  \"experiment\": \"axis-a\",\n  \"single_node\": {\n    \"segmnts\": 4\n  }\n}\n",
    );
    let o = bidlab(&["run", s(&cfg), "--output", s(&t.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    assert!(!t.path().join("out").exists());
}

#[test]
fn syntax_error_and_missing_file_exit_1() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "bad.json",
        "{\n  \"experiment\": \"axis-a\"\n  \"seeds\": [1]\n}\n",
    );
    let o = bidlab(&["run", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert_eq!(
        bidlab(&["run", s(&t.path().join("absent.json"))])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(bidlab(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn subcommand_rejects_other_experiments() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "a.json", TINY_AXIS_A);
    assert_eq!(bidlab(&["nc-check", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn referenced_files_must_exist() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "x.json",
        r#"{"experiment": "exploitability", "exploitability": {"baseline_policies": "/nonexistent/p.json"}}"#,
    );
    assert_eq!(bidlab(&["run", s(&cfg)]).status.code(), Some(1));
    let cfg = write(
        t.path(),
        "y.json",
        r#"{"experiment": "multi-agent", "case_file": "/nonexistent/case.json"}"#,
    );
    assert_eq!(bidlab(&["run", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn axis_a_writes_curves_summary_and_metadata() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "a.json", TINY_AXIS_A);
    let out = t.path().join("out");
    let o = bidlab(&["run", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for m in ["DPMP", "SORT", "CLIP", "PROJECT"] {
        let curve = fs::read_to_string(out.join(format!("curves/{m}_PPO_seed3.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 21);
        assert!(curve.starts_with("episode,profit,oracle_profit,gap,ma10\n"));
        let bids = fs::read_to_string(out.join(format!("bids/{m}_PPO_seed3_t11.csv"))).unwrap();
        assert_eq!(bids.lines().count(), 1 + 20 * 10);
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let header = summary.lines().next().unwrap();
    for col in [
        "method",
        "steady_state",
        "episode_to_10pct",
        "episode_to_5pct",
        "best_ma_gap",
        "compliance_last10",
    ] {
        assert!(header.split(',').any(|c| c == col), "{col}");
    }
    assert_eq!(summary.lines().filter(|l| l.contains(",all,")).count(), 4);

    let meta: Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let ppo = &meta["config"]["learners"]["PPO"];
    assert_eq!(ppo["clip_ratio"], 0.2);
    assert_eq!(ppo["gae_lambda"], 0.95);
    assert_eq!(meta["config"]["single_node"]["demand"]["mean_level"], 500.0);
    assert!(meta["derived"]["gamma_by_seed"]["3"]
        .as_f64()
        .is_some_and(|g| (1.0..2.0).contains(&g)));
    assert!(meta["config"].get("output_dir").is_none());
}

#[test]
fn rerun_is_byte_identical_and_report_recomputes_summary() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "a.json", TINY_AXIS_A);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert!(
        bidlab(&["run", s(&cfg), "--output", s(&a), "--threads", "1"])
            .status
            .success()
    );
    assert!(
        bidlab(&["run", s(&cfg), "--output", s(&b), "--threads", "3"])
            .status
            .success()
    );
    let snap = snapshot(&a);
    assert_eq!(snap, snapshot(&b));

    fs::remove_file(a.join("summary.csv")).unwrap();
    fs::remove_dir_all(a.join("report")).unwrap();
    let o = bidlab(&["report", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(snapshot(&a), snap);
}

#[test]
fn report_lists_missing_curves() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "a.json", TINY_AXIS_A);
    let out = t.path().join("out");
    assert!(bidlab(&["run", s(&cfg), "--output", s(&out)])
        .status
        .success());
    fs::remove_file(out.join("curves/SORT_PPO_seed3.csv")).unwrap();
    let o = bidlab(&["report", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stderr(&o).contains("missing artifact curves/SORT_PPO_seed3.csv"),
        "{}",
        stderr(&o)
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["missing"].as_array().unwrap().len(), 1);
    assert_eq!(summary["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn report_on_empty_dir_warns() {
    let t = tempfile::tempdir().unwrap();
    let o = bidlab(&["report", s(t.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning: no run artifacts"));
    let summary = fs::read_to_string(t.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
    assert_eq!(
        bidlab(&["report", s(&t.path().join("nope"))]).status.code(),
        Some(1)
    );
}

#[test]
fn output_root_env_places_named_runs() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "n.json",
        r#"{"experiment": "nc-check", "name": "tiny-nc", "nc": {"atom_samples": 2000, "preimage_bases": 2, "preimage_probes": 200, "jacobian_points": 5}}"#,
    );
    let o = Command::new(env!("CARGO_BIN_EXE_bidlab"))
        .args(["nc-check", s(&cfg)])
        .env("BIDLAB_OUTPUT_ROOT", t.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = t.path().join("root/tiny-nc/nc");
    for m in ["DPMP", "SORT", "CLIP", "PROJECT"] {
        let r: Value =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{m}_seed0.json"))).unwrap())
                .unwrap();
        assert_eq!(r["mapping_id"], m);
    }
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.contains("DPMP,0,pass,pass,pass"), "{summary}");
}

#[test]
fn oracle_audit_small_run_passes() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "o.json",
        r#"{"experiment": "oracle-audit", "audit": {"instances": 300, "brute_force_instances": 5, "price_step": 0.5, "q_step": 2.0, "example_price_step": 0.05, "example_q_step": 0.5}}"#,
    );
    let out = t.path().join("out");
    let o = bidlab(&["oracle-audit", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sum: Value =
        serde_json::from_str(&fs::read_to_string(out.join("audit/summary.json")).unwrap()).unwrap();
    assert_eq!(sum["instances"], 300);
    assert_eq!(sum["reenumeration_mismatches"], 0);
    assert_eq!(sum["passed"], true);
    assert_eq!(sum["worked_example"]["oracle"]["pi_star"], 615.0);
    assert_eq!(
        fs::read_to_string(out.join("audit/instances.csv"))
            .unwrap()
            .lines()
            .count(),
        301
    );
}

#[test]
fn runtime_failure_exits_2_with_failure_report() {
    let t = tempfile::tempdir().unwrap();
    let multi = write(
        t.path(),
        "m.json",
        r#"{"experiment": "multi-agent", "episodes": 1, "network": {"periods": 2}, "learner": {"hidden": [4]}}"#,
    );
    let m_out = t.path().join("m");
    let o = bidlab(&["run", s(&multi), "--output", s(&m_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(m_out.join("multi/seed0/metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    let policies: Vec<Value> =
        serde_json::from_str(&fs::read_to_string(m_out.join("multi/seed0/policies.json")).unwrap())
            .unwrap();
    assert_eq!(policies.len(), 10);

    // A one-agent baseline for a ten-agent market fails once the run is underway.
    let short = write(
        t.path(),
        "short.json",
        &serde_json::to_string(&policies[..1]).unwrap(),
    );
    let cfg = write(
        t.path(),
        "x.json",
        &format!(
            r#"{{"experiment": "exploitability", "episodes": 1, "network": {{"periods": 2}}, "exploitability": {{"baseline_policies": {:?}, "agents": [1]}}}}"#,
            s(&short)
        ),
    );
    let out = t.path().join("x");
    let o = bidlab(&["run", s(&cfg), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let f: Value =
        serde_json::from_str(&fs::read_to_string(out.join("failure.json")).unwrap()).unwrap();
    assert_eq!(f["failures"][0]["job"], "exploitability_seed0");
    assert!(out.join("metadata.json").exists());
}
