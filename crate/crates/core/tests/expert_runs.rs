//! Closed-loop expert runs over every built-in model.

use furnibench::catalog::BUILTIN_FURNITURE;
use furnibench::env::{run_episode, Env, EpisodeSummary, RunConfig, TerminationCause};
use furnibench::expert::ScriptedExpert;
use furnibench::init::RandomnessLevel;

fn run(furniture: &str, level: RandomnessLevel, seed: u64) -> (EpisodeSummary, ScriptedExpert) {
    let cfg = RunConfig {
        furniture: furniture.into(),
        level,
        ..RunConfig::default()
    };
    let mut env = Env::new(cfg).unwrap();
    let mut expert = ScriptedExpert::new();
    let out = run_episode(&mut env, &mut expert, seed, false).unwrap();
    (out.summary, expert)
}

#[test]
fn expert_assembles_every_model_at_every_level() {
    for f in BUILTIN_FURNITURE {
        let graph = furnibench::catalog::load_furniture(f).unwrap();
        for level in [RandomnessLevel::Low, RandomnessLevel::Medium, RandomnessLevel::High] {
            for seed in 0..20 {
                let (s, _) = run(f, level, seed);
                assert!(s.success, "{f} {level} seed {seed}: {s:?}");
                assert_eq!(s.cause, TerminationCause::Success);
                assert_eq!(s.reward_total as usize, graph.max_reward());
                assert_eq!(s.phases_completed, graph.n_phases());
            }
        }
    }
}

#[test]
fn drawer_expert_slides_both_boxes() {
    let (s, e) = run("drawer", RandomnessLevel::Low, 4);
    assert!(s.success);
    assert!(e.transcript.screws.is_empty());
    assert!(e.transcript.primitives.contains(&furnibench::expert::Primitive::Slide));
}

#[test]
fn expert_actions_stay_in_unit_range() {
    let cfg = RunConfig {
        furniture: "lamp".into(),
        ..RunConfig::default()
    };
    let mut env = Env::new(cfg).unwrap();
    let mut expert = ScriptedExpert::new();
    let out = run_episode(&mut env, &mut expert, 11, true).unwrap();
    for r in &out.records {
        assert!(r.action.iter().all(|c| c.abs() <= 1.0));
        let dp = (r.action[0].powi(2) + r.action[1].powi(2) + r.action[2].powi(2)).sqrt();
        assert!(dp <= 0.1 + 1e-12);
    }
}
