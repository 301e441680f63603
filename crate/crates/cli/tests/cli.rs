use std::path::Path;
use std::process::{Command, Output};

fn dcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsim"))
        .args(args)
        .env_remove("SIM_LOG")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fig3_ndn_producer_sees_one_interest() {
    let dir = tempfile::tempdir().unwrap();
    let sum = dir.path().join("s.json");
    let out = dcsim(&["run", "fig3.ndn", "--seed", "42", "--summary", sum.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&sum);
    assert_eq!(s["nodes"]["E"]["interest_rx"], 1);
    assert_eq!(s["protocol"], "ndn");
}

#[test]
fn summary_goes_to_stdout_without_a_path() {
    let out = dcsim(&["run", "fig1.srm"]);
    assert!(out.status.success());
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["rq_sent"], 1);
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..2 {
        let t = dir.path().join(format!("t{i}.jsonl"));
        let s = dir.path().join(format!("s{i}.csv"));
        let out = dcsim(&[
            "run", "fig1.srm", "--seed", "42",
            "--out", t.to_str().unwrap(),
            "--summary", s.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        files.push((std::fs::read(&t).unwrap(), std::fs::read(&s).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let csv = String::from_utf8(files[0].1.clone()).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("node,member"));
}

#[test]
fn schema_violation_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(
        &p,
        r#"{"name":"bad","end_ms":1000,
            "topology":{"nodes":[{"id":"A","kind":"host"},{"id":"B","kind":"host"}],
                        "links":[{"a":"A","b":"B","delay_ms":-1}]}}"#,
    )
    .unwrap();
    for cmd in ["run", "validate"] {
        let out = dcsim(&[cmd, p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("topology.links[0].delay_ms"), "{err}");
    }
}

#[test]
fn unknown_target_and_param_exit_2() {
    assert_eq!(dcsim(&["run", "no-such-preset"]).status.code(), Some(2));
    let out = dcsim(&["sweep", "fig1", "--param", "srm.zzz", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("srm.zzz"));
}

#[test]
fn unwritable_output_exits_3() {
    let out = dcsim(&["run", "fig1.srm", "--out", "/nonexistent-dir/x/t.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validate_accepts_presets() {
    for p in ["fig1", "fig3", "fig3-loss"] {
        let out = dcsim(&["validate", p]);
        assert!(out.status.success(), "{p}");
    }
}

#[test]
fn compare_prints_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("cmp.json");
    let out = dcsim(&["compare", "fig3-loss", "--protocols", "srm,ndn", "--out", j.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().contains("srm"));
    assert!(table.contains("extra[A]"));
    let v = json(&j);
    assert_eq!(v["runs"][0]["protocol"], "srm");
    assert_eq!(v["runs"][1]["summary"]["extra_recovery_packets"]["A"], 0);
}

#[test]
fn sweep_emits_one_row_per_value_and_seed() {
    let out = dcsim(&[
        "sweep", "fig3-loss.srm", "--param", "srm.d1,srm.d2", "--values", "1,2", "--seeds", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("value,seed,duplicate_rq,duplicate_rr,mean_recovery_latency"));
    assert!(lines[1].starts_with("1,42,"));
    assert!(lines[6].starts_with("2,44,"));
}

#[test]
fn end_override_is_respected() {
    let out = dcsim(&["run", "fig3.ndn", "--end-ms", "2000"]);
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["end_us"], 2_000_000);
}
