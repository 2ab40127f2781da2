use std::path::Path;
use std::process::{Command, Output};

fn furnibench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_furnibench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scripted_eval_succeeds() {
    let o = furnibench(&["eval", "--furniture", "one_leg", "--level", "low", "--episodes", "10", "--policy", "scripted"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("success_rate: 1.000"), "{}", stdout(&o));
    assert!(stdout(&o).contains("phases: mean 5.00, min 5, max 5"));
}

#[test]
fn eval_json_output() {
    let o = furnibench(&["eval", "--furniture", "lamp", "--episodes", "3", "--jobs", "2", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["success_rate"], 1.0);
    assert_eq!(v["per_episode"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_furniture_is_a_usage_error() {
    let o = furnibench(&["eval", "--furniture", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("furniture not found"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_2() {
    for args in [
        &["eval", "--level", "extreme"][..],
        &["eval", "--episodes", "many"],
        &["frobnicate"],
        &["eval", "--policy", "genius"],
    ] {
        let o = furnibench(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).starts_with("error:"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = furnibench(&["eval", "--furniture", "drawer", "--level", "med", "--dump-config"]);
    assert!(o.status.success());
    let path = dir.path().join("run.json");
    std::fs::write(&path, stdout(&o)).unwrap();
    let again = furnibench(&["eval", "--config", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(stdout(&again), stdout(&o));

    let a = furnibench(&["eval", "--config", path.to_str().unwrap(), "--episodes", "2", "--format", "json"]);
    let b = furnibench(&["eval", "--furniture", "drawer", "--level", "med", "--episodes", "2", "--format", "json"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(stdout(&a), stdout(&b));

    std::fs::write(&path, r#"{"furniture":"lamp","colour":"red"}"#).unwrap();
    let bad = furnibench(&["eval", "--config", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
}

#[test]
fn collect_replay_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demos");
    let out_s = out.to_str().unwrap();
    let o = furnibench(&["collect", "--furniture", "one_leg", "--episodes", "3", "--seed", "5", "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("collected 3 episodes, 3 successful"));
    let file = out.join("one_leg_low_000005.jsonl");
    assert!(file.exists());

    // collection is deterministic given the seed
    let out2 = dir.path().join("again");
    furnibench(&["collect", "--furniture", "one_leg", "--episodes", "1", "--seed", "5", "--out", out2.to_str().unwrap()]);
    assert_eq!(std::fs::read(&file).unwrap(), std::fs::read(out2.join("one_leg_low_000005.jsonl")).unwrap());

    let r = furnibench(&["replay", file.to_str().unwrap(), "--strict"]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).contains("first_divergent_step: none"));

    let r = furnibench(&["replay", file.to_str().unwrap(), "--seed", "6", "--format", "json"]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert!(v["max_deviation"].as_f64().unwrap() > 0.0);
    let strict = furnibench(&["replay", file.to_str().unwrap(), "--seed", "6", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));

    let s = furnibench(&["stats", out_s, "--format", "json"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&s)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["count"], 3);
}

fn synthetic_corpus(dir: &Path) {
    use furnibench::dataset::{write_episode, EpisodeHeader, Operator, StepRecord};
    use furnibench::env::{Observation, RunConfig};
    use furnibench::init::RandomnessLevel;
    let obs = Observation {
        ee_position: [0.0, 0.0, 0.2],
        ee_orientation: [1.0, 0.0, 0.0, 0.0],
        ee_linear_velocity: [0.0; 3],
        ee_angular_velocity: [0.0; 3],
        gripper_width: 0.08,
        part_poses: None,
        image: None,
    };
    // 6 lamp/low episodes of 100 steps, 4 one_leg/med episodes of 30..60
    let mut specs: Vec<(&str, RandomnessLevel, usize)> = vec![("lamp", RandomnessLevel::Low, 100); 6];
    for n in [30, 40, 50, 60] {
        specs.push(("one_leg", RandomnessLevel::Medium, n));
    }
    for (i, (f, level, n)) in specs.into_iter().enumerate() {
        let cfg = RunConfig {
            furniture: f.into(),
            level,
            ..RunConfig::default()
        };
        let mut header = EpisodeHeader::new(&cfg, i as u64, Operator::Policy);
        header.config = None;
        let steps: Vec<StepRecord> = (1..=n as u32)
            .map(|k| StepRecord {
                step: k,
                tick: 99 * k as u64,
                observation: obs.clone(),
                action: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                reward: 0,
                phase: 0,
            })
            .collect();
        write_episode(&header, &steps, &dir.join(format!("ep{i:02}.jsonl"))).unwrap();
    }
}

#[test]
fn stats_on_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_corpus(dir.path());
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let o = furnibench(&["stats", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Vec<String>> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    // lamp: 600 steps at 10 Hz = 1/60 h; one_leg: 180 steps = 0.005 h
    assert_eq!(rows[0], ["lamp", "low", "6", "100.0", "0.0167"]);
    assert_eq!(rows[1], ["one_leg", "med", "4", "45.0", "0.0050"]);

    let o = furnibench(&["stats", dir.path().to_str().unwrap(), "--frequency", "5", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((rows[0]["total_hours"].as_f64().unwrap() - 600.0 / 5.0 / 3600.0).abs() < 1e-15);
}

#[test]
fn init_sample_is_deterministic() {
    let a = furnibench(&["init-sample", "--furniture", "lamp", "--level", "high", "--seed", "3", "--count", "2"]);
    let b = furnibench(&["init-sample", "--furniture", "lamp", "--level", "high", "--seed", "3", "--count", "2"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).matches("seed ").count(), 2);
    let j = furnibench(&["init-sample", "--skill", "2", "--level", "med", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&j)).unwrap();
    assert!(v[0]["ee_pose"].is_object());
    let bad = furnibench(&["init-sample", "--skill", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn serve_teleop_rejects_missing_ui_dir() {
    let o = furnibench(&["serve-teleop", "--ui-dir", "/definitely/not/here", "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ui dir not found"));
}
