use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regionsim"));
    // keep the caller's environment from leaking overrides into the tests
    for (k, _) in std::env::vars() {
        if k.starts_with("REGIONSIM_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.arg("--out").arg(out).args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn regionsim")
}

fn ok(out: &Path, args: &[&str], env: &[(&str, &str)]) -> String {
    let o = run(out, args, env);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn error_record(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json error record");
    serde_json::from_str(line).unwrap()
}

const FAST: [(&str, &str); 2] = [("REGIONSIM_TRANSITION__SCORER__MAX_EPOCHS", "5"), ("REGIONSIM_TRANSITION__SCORER__HIDDEN", "8")];

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["synth", "--episodes", "60", "--seed", "7"], &[]);
    ok(b.path(), &["synth", "--episodes", "60", "--seed", "7"], &[]);
    for rel in ["corpus/baseline.json", "corpus/robot.json", "corpus/baseline_visits.csv", "layout.json"] {
        assert_eq!(read(a.path().join(rel)), read(b.path().join(rel)), "{rel}");
    }
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["synth", "--episodes", "60", "--seed", "8"], &[]);
    assert_ne!(read(a.path().join("corpus/baseline.json")), read(c.path().join("corpus/baseline.json")));
    let m: serde_json::Value = serde_json::from_slice(&read(a.path().join("manifests/synth.json"))).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 6);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_prerequisite_names_its_producer() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["simulate", "--seed", "1"], &[]);
    assert_eq!(o.status.code(), Some(3));
    let rec = error_record(&o);
    assert_eq!(rec["command"], "simulate");
    assert_eq!(rec["kind"], "missing-artifact");
    assert_eq!(rec["producer"], "synth");

    ok(d.path(), &["synth", "--episodes", "20", "--robot-episodes", "0", "--seed", "1"], &[]);
    let o = run(d.path(), &["fit-effects", "--lambda", "0.5"], &[]);
    assert_eq!(error_record(&o)["producer"], "fit-events");
    ok(d.path(), &["fit-events"], &[]);
    let o = run(d.path(), &["fit-effects", "--lambda", "0.5"], &[]);
    assert_eq!(error_record(&o)["producer"], "synth");
    assert!(error_record(&o)["artifact"].as_str().unwrap().ends_with("robot.json"));
}

#[test]
fn seed_is_required_for_random_commands() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["synth"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["kind"], "missing-seed");
    // the environment can supply it
    ok(d.path(), &["synth", "--episodes", "10", "--robot-episodes", "0"], &[("REGIONSIM_SEED", "4")]);
}

#[test]
fn bad_config_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "seed = 1\n[synth]\nepisodez = 3\n").unwrap();
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "synth"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["kind"], "config");
}

#[test]
fn full_workflow_on_synthetic_data() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path();
    ok(out, &["synth", "--episodes", "40", "--robot-episodes", "40", "--seed", "11"], &[]);
    ok(out, &["fit-events", "--variant", "region-sampling"], &[]);
    ok(out, &["train-transition", "--seed", "11"], &FAST);
    ok(out, &["fit-effects", "--lambda", "0.5"], &[]);

    let row = ok(out, &["simulate", "--seed", "5", "--policy", "pursue", "--multi-floor", "--episodes", "120"], &[]);
    let cells: Vec<&str> = row.trim().split(',').collect();
    assert_eq!(cells.len(), 3, "{row}");
    assert_eq!(cells[0], "Move to shooter region (multi-floor)");
    assert!(cells[1].contains(" ± "));
    assert!(cells[2].ends_with('%'));
    let table = String::from_utf8(read(out.join("sim/pursue-multi-floor.csv"))).unwrap();
    assert!(table.starts_with("strategy,victims,delta\nNot present,"));

    // worker count does not change results
    let first = read(out.join("sim/pursue-multi-floor.json"));
    ok(out, &["simulate", "--seed", "5", "--policy", "pursue", "--multi-floor", "--episodes", "120", "--workers", "1"], &[]);
    assert_eq!(read(out.join("sim/pursue-multi-floor.json")), first);

    // the resolved config in the manifest reproduces the run
    let replay = out.join("replay");
    let cfg = out.join("manifests/simulate.toml");
    let mut c = bin();
    let o = c.args(["--config", cfg.to_str().unwrap(), "--out", replay.to_str().unwrap(), "simulate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3), "replay reads prerequisites from its own out dir");
    for rel in ["layout.json", "models/transition.json", "models/events.json", "models/effects.json"] {
        let dst = replay.join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(out.join(rel), dst).unwrap();
    }
    let o = bin().args(["--config", cfg.to_str().unwrap(), "--out", replay.to_str().unwrap(), "simulate"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(replay.join("sim/pursue-multi-floor.json")), first);

    ok(out, &["evaluate", "--seed", "5", "--variant", "region-sampling", "--episodes", "120"], &[]);
    let t1 = String::from_utf8(read(out.join("eval/outcome_table.csv"))).unwrap();
    let lines: Vec<&str> = t1.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("pooling,variant,nodes,time,shots,victims"));
    assert!(lines[1].starts_with("---,Participants,"));
    assert!(lines[2].starts_with("Region,Sampling,"));
    assert!(lines[2].contains('✓') || lines[2].contains('✗'));

    ok(out, &["simulate", "--seed", "5", "--policy", "no-robots", "--episodes", "120"], &[]);
    let msg = ok(out, &["report"], &[]);
    assert!(msg.contains("section"));
    let md = String::from_utf8(read(out.join("report/report.md"))).unwrap();
    assert!(md.contains("Move to shooter region"));
}

#[test]
fn ingest_round_trips_visit_csv() {
    let d = tempfile::tempdir().unwrap();
    let src = d.path().join("src");
    ok(&src, &["synth", "--episodes", "12", "--robot-episodes", "0", "--seed", "3"], &[]);
    let dst = d.path().join("dst");
    let layout = src.join("layout.json");
    let visits = src.join("corpus/baseline_visits.csv");
    let msg = ok(
        &dst,
        &["ingest", "--layout", layout.to_str().unwrap(), "--visits", visits.to_str().unwrap(), "--condition", "baseline"],
        &[],
    );
    assert!(msg.contains("12 episodes"), "{msg}");
    let a: serde_json::Value = serde_json::from_slice(&read(src.join("corpus/baseline.json"))).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&read(dst.join("corpus/baseline.json"))).unwrap();
    let count = |v: &serde_json::Value| v["episodes"].as_array().unwrap().iter().map(|e| e["visits"].as_array().unwrap().len()).sum::<usize>();
    assert_eq!(count(&a), count(&b));
    assert_eq!(b["provenance"], "ingested");
}
