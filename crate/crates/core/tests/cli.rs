use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
  "n": 40, "k": 3, "i_count": 6, "b_count": 2, "m_per_device": 40,
  "q": 0.15, "theta": 0.1, "p_outlier": 0.01, "sigma_w": 1.0, "seed": 3
}"#;

fn mvpr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvpr")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("c.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn gen_writes_a_loadable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("s.json");
    let o = mvpr(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sc: mvpr::model::Scenario = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(sc.views.len(), 6);
    assert_eq!(sc.signal.support.len(), 3);
}

#[test]
fn run_prints_a_trial_and_dumps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let trace = dir.path().join("t.jsonl");
    let o = mvpr(&["run", "--config", &cfg, "--seed", "11", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["mode"], "proposed");
    let lines = std::fs::read_to_string(trace).unwrap();
    let n_msgs = v["comm"]["total_messages"].as_u64().unwrap() as usize;
    assert_eq!(lines.lines().count(), n_msgs);

    let o = mvpr(&["run", "--config", &cfg, "--mode", "no_collab"]);
    assert_eq!(o.status.code(), Some(0));
    let o = mvpr(&["run", "--config", &cfg, "--mode", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_emits_header_plus_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a.csv");
    let args = |out: &str| {
        vec![
            "sweep".to_owned(),
            "--config".into(),
            cfg.clone(),
            "--axis".into(),
            "theta".into(),
            "--values".into(),
            "0,0.2,0.4".into(),
            "--trials".into(),
            "3".into(),
            "--out".into(),
            out.to_owned(),
        ]
    };
    let run = |out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_mvpr")).args(args(out)).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let first = run(a.to_str().unwrap());
    let second = run(dir.path().join("b.csv").to_str().unwrap());
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().next().unwrap(), "axis,value,mode,trials,success_rate,mean_rel_err");

    let o = mvpr(&["sweep", "--config", &cfg, "--axis", "theta", "--values", "0", "--trials", "1", "--modes", "proposed"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}

#[test]
fn verify_prints_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = mvpr(&["verify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["disjunct"]["t_per_group"].as_array().unwrap().len(), 2);
    assert!(v["conditions"]["thm1_satisfied"].is_boolean());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &CONFIG.replace("\"k\": 3", "\"k\": 1"));
    assert_eq!(mvpr(&["verify", "--config", &bad]).status.code(), Some(2));
    let junk = write_config(dir.path(), "{ not json");
    assert_eq!(mvpr(&["run", "--config", &junk]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(mvpr(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(3));
    let cfg = write_config(dir.path(), CONFIG);
    let unwritable = dir.path().join("no/such/dir/s.json");
    assert_eq!(
        mvpr(&["gen", "--config", &cfg, "--out", unwritable.to_str().unwrap()]).status.code(),
        Some(3)
    );
    assert_eq!(mvpr(&["sweep", "--config", &cfg, "--axis", "zeta", "--values", "0"]).status.code(), Some(2));
}
