//! The benchmark environment: run configuration, reset/step loop, termination
//! rules, observations and policy evaluation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{load_furniture, AssemblyGraph};
use crate::controller::{run_action, Action, ControllerConfig};
use crate::dataset::StepRecord;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, rot_axis, Pose, Vec3};
use crate::image::{preprocess_image, render_topdown, EncodedImage, ImageRole};
use crate::init::{sample_initial_poses, skill_start_state, stream_rng, InitConfig, RandomnessLevel};
use crate::perception::{Perception, PerceptionConfig};
use crate::reward::{update_phase, PhaseState, RewardConfig, RewardTracker};
use crate::world::{reset_world, set_ee_pose, WorldConfig, WorldState};

pub const RUN_CONFIG_VERSION: u32 = 1;
pub const PERCEPTION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    pub no_motion_seconds: f64,
    /// Largest EE displacement over the window that still counts as idle, m.
    pub motion_epsilon: f64,
    /// Largest EE rotation over the window that still counts as idle, rad.
    pub rotation_epsilon: f64,
    pub max_steps_per_skill: u32,
    pub max_steps_total: u32,
    pub unsafe_min: [f64; 3],
    pub unsafe_max: [f64; 3],
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig {
            no_motion_seconds: 5.0,
            motion_epsilon: 1e-3,
            rotation_epsilon: 1e-2,
            max_steps_per_skill: 350,
            max_steps_total: 3000,
            unsafe_min: [-0.45, -0.35, -0.02],
            unsafe_max: [0.45, 0.35, 0.5],
        }
    }
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("no_motion_seconds", self.no_motion_seconds),
            ("motion_epsilon", self.motion_epsilon),
            ("rotation_epsilon", self.rotation_epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("termination.{name} must be positive")));
            }
        }
        if self.max_steps_per_skill == 0 || self.max_steps_total == 0 {
            return Err(Error::InvalidConfig("termination step limits must be positive".into()));
        }
        if (0..3).any(|i| self.unsafe_min[i] >= self.unsafe_max[i]) {
            return Err(Error::InvalidConfig("termination unsafe box is empty".into()));
        }
        Ok(())
    }

    /// Idle window length in actions.
    pub fn window(&self, action_frequency: f64) -> usize {
        (self.no_motion_seconds * action_frequency).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Success,
    NoMotion,
    Unsafe,
    MaxSkill,
    MaxTotal,
    PolicyError,
}

impl TerminationCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationCause::Success => "success",
            TerminationCause::NoMotion => "no_motion",
            TerminationCause::Unsafe => "unsafe",
            TerminationCause::MaxSkill => "max_skill",
            TerminationCause::MaxTotal => "max_total",
            TerminationCause::PolicyError => "policy_error",
        }
    }
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// EE state recorded once per action for the idle check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub pose: Pose,
    pub gripper_width: f64,
}

/// Everything the termination rules look at.
#[derive(Debug, Clone, Default)]
pub struct TerminationHistory {
    /// Most recent samples, oldest first; holds at most `window + 1`.
    pub samples: VecDeque<MotionSample>,
    pub skill_steps: u32,
    pub total_steps: u32,
}

impl TerminationHistory {
    pub fn push(&mut self, s: MotionSample, window: usize) {
        self.samples.push_back(s);
        while self.samples.len() > window + 1 {
            self.samples.pop_front();
        }
    }
}

/// First triggered failure cause, checked in the order no_motion, unsafe,
/// max_skill, max_total.
pub fn check_termination(h: &TerminationHistory, cfg: &TerminationConfig, window: usize) -> Option<TerminationCause> {
    if h.samples.len() > window {
        let first = h.samples[h.samples.len() - 1 - window];
        let idle = h.samples.iter().rev().take(window + 1).all(|s| {
            (s.pose.position - first.pose.position).norm() < cfg.motion_epsilon
                && geodesic_angle(&s.pose.orientation, &first.pose.orientation) < cfg.rotation_epsilon
                && (s.gripper_width - first.gripper_width).abs() < cfg.motion_epsilon
        });
        if idle {
            return Some(TerminationCause::NoMotion);
        }
    }
    if let Some(last) = h.samples.back() {
        let p = last.pose.position;
        if (0..3).any(|i| p[i] < cfg.unsafe_min[i] || p[i] > cfg.unsafe_max[i]) {
            return Some(TerminationCause::Unsafe);
        }
    }
    if h.skill_steps > cfg.max_steps_per_skill {
        return Some(TerminationCause::MaxSkill);
    }
    if h.total_steps >= cfg.max_steps_total {
        return Some(TerminationCause::MaxTotal);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationChannels {
    /// Fused marker-based part poses. Off by default: policies see only
    /// proprioception and images.
    pub part_poses: bool,
    /// Preprocessed 224×224 front image of the top-down render.
    pub image: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub furniture: String,
    pub level: RandomnessLevel,
    /// Episode seeds; when empty, callers derive them from a base seed.
    pub seeds: Vec<u64>,
    /// At high randomness, cycle the fixed evaluation layouts.
    pub eval_mode: bool,
    pub controller: ControllerConfig,
    pub world: WorldConfig,
    pub perception: PerceptionConfig,
    pub reward: RewardConfig,
    pub termination: TerminationConfig,
    pub init: InitConfig,
    pub observation: ObservationChannels,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: RUN_CONFIG_VERSION,
            furniture: "one_leg".into(),
            level: RandomnessLevel::Low,
            seeds: Vec::new(),
            eval_mode: false,
            controller: ControllerConfig::default(),
            world: WorldConfig::default(),
            perception: PerceptionConfig::default(),
            reward: RewardConfig::default(),
            termination: TerminationConfig::default(),
            init: InitConfig::default(),
            observation: ObservationChannels::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != RUN_CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported run config version {}", self.format_version)));
        }
        self.controller.validate()?;
        self.world.validate()?;
        self.perception.noise.validate()?;
        self.reward.validate()?;
        self.termination.validate()?;
        self.init.validate()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartObservation {
    pub pose: Option<Pose>,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ee_position: [f64; 3],
    /// w, x, y, z
    pub ee_orientation: [f64; 4],
    pub ee_linear_velocity: [f64; 3],
    pub ee_angular_velocity: [f64; 3],
    pub gripper_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_poses: Option<Vec<PartObservation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<EncodedImage>,
}

impl Observation {
    /// Largest absolute difference across all numeric fields. A channel
    /// present on one side only, or differing image bytes, counts as infinite.
    pub fn max_deviation(&self, other: &Observation) -> f64 {
        let mut d: f64 = 0.0;
        let mut acc = |a: &[f64], b: &[f64]| {
            for (x, y) in a.iter().zip(b) {
                d = d.max((x - y).abs());
            }
        };
        acc(&self.ee_position, &other.ee_position);
        acc(&self.ee_orientation, &other.ee_orientation);
        acc(&self.ee_linear_velocity, &other.ee_linear_velocity);
        acc(&self.ee_angular_velocity, &other.ee_angular_velocity);
        acc(&[self.gripper_width], &[other.gripper_width]);
        match (&self.part_poses, &other.part_poses) {
            (None, None) => {}
            (Some(a), Some(b)) if a.len() == b.len() => {
                for (pa, pb) in a.iter().zip(b) {
                    match (pa.pose, pb.pose) {
                        (Some(x), Some(y)) => acc(&x.to_array(), &y.to_array()),
                        (None, None) => {}
                        _ => return f64::INFINITY,
                    }
                    if pa.observed != pb.observed {
                        return f64::INFINITY;
                    }
                }
            }
            _ => return f64::INFINITY,
        }
        if self.image != other.image {
            return f64::INFINITY;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub phase_completed: usize,
    /// Pairs credited by the estimate-based reward so far.
    pub assembled_pairs: Vec<usize>,
    pub termination_cause: Option<TerminationCause>,
    /// Reward the same step would earn from exact part poses.
    pub ground_truth_reward: u32,
    pub reward_total: u32,
    pub unobserved_parts: Vec<String>,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: u32,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    seed: u64,
    world: WorldState,
    perception: Perception,
    rng: ChaCha8Rng,
    reward: RewardTracker,
    gt_reward: RewardTracker,
    phase: PhaseState,
    history: TerminationHistory,
    done: bool,
    cause: Option<TerminationCause>,
}

/// One environment instance. Single-threaded; independent instances may run
/// in parallel.
#[derive(Debug, Clone)]
pub struct Env {
    graph: AssemblyGraph,
    cfg: RunConfig,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let graph = load_furniture(&cfg.furniture)?;
        Self::with_graph(graph, cfg)
    }

    pub fn with_graph(graph: AssemblyGraph, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        graph.validate()?;
        Ok(Env {
            graph,
            cfg,
            episode: None,
        })
    }

    pub fn graph(&self) -> &AssemblyGraph {
        &self.graph
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn ep(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or(Error::NotReset)
    }

    pub fn world(&self) -> Result<&WorldState> {
        Ok(&self.ep()?.world)
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.ep()?.seed)
    }

    pub fn phase(&self) -> Result<&PhaseState> {
        Ok(&self.ep()?.phase)
    }

    pub fn reward_total(&self) -> Result<u32> {
        Ok(self.ep()?.reward.total)
    }

    pub fn ground_truth_total(&self) -> Result<u32> {
        Ok(self.ep()?.gt_reward.total)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    pub fn termination_cause(&self) -> Option<TerminationCause> {
        self.episode.as_ref().and_then(|e| e.cause)
    }

    pub fn steps_taken(&self) -> u32 {
        self.episode.as_ref().map_or(0, |e| e.history.total_steps)
    }

    /// Starts an episode from sampled initial part poses.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let ws = &self.cfg.world.workspace;
        let poses = sample_initial_poses(&self.graph, self.cfg.level, &self.cfg.init, ws, seed, self.cfg.eval_mode)?;
        self.reset_to(&poses, None, seed)
    }

    /// Starts an episode at the start state of one of the first skills.
    pub fn reset_to_skill(&mut self, skill_index: usize, seed: u64) -> Result<Observation> {
        let s = skill_start_state(
            &self.graph,
            skill_index,
            self.cfg.level,
            &self.cfg.init,
            &self.cfg.world.workspace,
            seed,
        )?;
        self.reset_to(&s.part_poses, Some(s.ee_pose), seed)
    }

    /// Starts an episode from explicit part poses and an optional EE pose.
    pub fn reset_to(&mut self, part_poses: &[Pose], ee_pose: Option<Pose>, seed: u64) -> Result<Observation> {
        let mut world = reset_world(&self.graph, part_poses, seed, &self.cfg.world)?;
        if let Some(p) = ee_pose {
            set_ee_pose(&mut world, p);
        }
        let mut perception = Perception::new(self.graph.n_parts());
        let mut rng = stream_rng(seed, PERCEPTION_STREAM);
        for _ in 0..self.cfg.perception.warmup_frames {
            perception.process_frame(&world, &self.graph, &self.cfg.perception, &mut rng);
        }
        let phase = update_phase(&PhaseState::new(self.graph.n_phases()), &world, &self.graph);
        let mut history = TerminationHistory::default();
        history.push(sample_of(&world), self.window());
        let n_pairs = self.graph.pairs.len();
        self.episode = Some(Episode {
            seed,
            world,
            perception,
            rng,
            reward: RewardTracker::new(n_pairs),
            gt_reward: RewardTracker::new(n_pairs),
            phase,
            history,
            done: false,
            cause: None,
        });
        Ok(self.observe())
    }

    fn window(&self) -> usize {
        self.cfg.termination.window(self.cfg.controller.action_frequency)
    }

    /// Applies one action: 99 plant ticks, one perception frame, reward,
    /// phase and termination updates.
    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let window = self.window();
        let cfg = &self.cfg;
        let graph = &self.graph;
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        if ep.done {
            return Err(Error::EpisodeFinished);
        }
        action.validate()?;
        run_action(&mut ep.world, graph, action, &cfg.controller, &cfg.world)?;
        ep.perception.process_frame(&ep.world, graph, &cfg.perception, &mut ep.rng);

        let estimates = ep.perception.usable_poses(cfg.perception.max_staleness);
        let reward = ep.reward.update(&estimates, graph, &cfg.reward);
        let truth: Vec<Option<Pose>> = ep.world.parts.iter().map(|p| Some(p.pose)).collect();
        let gt = ep.gt_reward.update(&truth, graph, &cfg.reward);

        let before = ep.phase.completed;
        ep.phase = update_phase(&ep.phase, &ep.world, graph);
        ep.history.total_steps += 1;
        if ep.phase.completed > before {
            ep.history.skill_steps = 0;
        } else {
            ep.history.skill_steps += 1;
        }
        ep.history.push(sample_of(&ep.world), window);

        let complete = ep.reward.total as usize >= graph.max_reward() && ep.phase.completed == graph.n_phases();
        let cause = if complete {
            Some(TerminationCause::Success)
        } else {
            check_termination(&ep.history, &cfg.termination, window)
        };
        ep.done = cause.is_some();
        ep.cause = cause;

        let unobserved_parts = ep
            .perception
            .estimates
            .iter()
            .zip(&graph.parts)
            .filter(|(e, _)| !e.observed(cfg.perception.max_staleness))
            .map(|(_, p)| p.id.clone())
            .collect();
        let info = StepInfo {
            phase_completed: ep.phase.completed,
            assembled_pairs: ep.reward.credited.iter().copied().collect(),
            termination_cause: cause,
            ground_truth_reward: gt,
            reward_total: ep.reward.total,
            unobserved_parts,
            tick: ep.world.tick,
        };
        let done = ep.done;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done,
            info,
        })
    }

    /// Observation of the current state per the configured channels.
    pub fn observe(&self) -> Observation {
        let ep = self.episode.as_ref().expect("observe after reset");
        let ee = &ep.world.ee;
        let q = ee.pose.orientation;
        let part_poses = self.cfg.observation.part_poses.then(|| {
            ep.perception
                .estimates
                .iter()
                .map(|e| PartObservation {
                    pose: e.pose,
                    observed: e.observed(self.cfg.perception.max_staleness),
                })
                .collect()
        });
        let image = self.cfg.observation.image.then(|| {
            let raw = render_topdown(&ep.world, &self.graph, &self.cfg.world.workspace);
            EncodedImage::encode(&preprocess_image(&raw, ImageRole::Front).expect("render is large enough"))
        });
        Observation {
            ee_position: ee.pose.position.into(),
            ee_orientation: [q.w, q.i, q.j, q.k],
            ee_linear_velocity: ee.linear_velocity.into(),
            ee_angular_velocity: ee.angular_velocity.into(),
            gripper_width: ee.gripper_width,
            part_poses,
            image,
        }
    }
}

fn sample_of(world: &WorldState) -> MotionSample {
    MotionSample {
        pose: world.ee.pose,
        gripper_width: world.ee.gripper_width,
    }
}

/// A controller that maps observations to actions. Policies may also read
/// the environment directly; scripted experts use that privileged access.
pub trait Policy {
    fn reset(&mut self, _env: &Env) {}
    /// Called once after the episode terminates.
    fn finish(&mut self, _env: &Env) {}
    fn act(&mut self, obs: &Observation, env: &Env) -> std::result::Result<Action, String>;
}

/// Always the zero action.
#[derive(Debug, Default, Clone)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    fn act(&mut self, _obs: &Observation, _env: &Env) -> std::result::Result<Action, String> {
        Ok(Action::zero())
    }
}

/// Uniformly random actions within the valid component range.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: stream_rng(seed, 4),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation, _env: &Env) -> std::result::Result<Action, String> {
        let r = &mut self.rng;
        let d = Vec3::new(r.random_range(-0.1..=0.1), r.random_range(-0.1..=0.1), r.random_range(-0.1..=0.1));
        let axis = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let q = if axis.norm() > 1e-6 {
            rot_axis(&axis.normalize(), r.random_range(-0.3..0.3))
        } else {
            crate::geometry::Quat::identity()
        };
        Ok(Action::translate(d.x, d.y, d.z)
            .with_rotation(&q)
            .with_gripper(r.random_range(-1.0..=1.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub reward_total: u32,
    pub ground_truth_reward: u32,
    pub phases_completed: usize,
    pub length: u32,
    pub cause: TerminationCause,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub summary: EpisodeSummary,
    pub initial_observation: Observation,
    pub records: Vec<StepRecord>,
}

/// Resets to `seed` and drives `policy` until the episode terminates.
pub fn run_episode(env: &mut Env, policy: &mut dyn Policy, seed: u64, record: bool) -> Result<EpisodeOutcome> {
    let initial = env.reset(seed)?;
    policy.reset(env);
    drive_episode(env, policy, initial, record)
}

/// Runs an already reset environment to termination.
pub fn drive_episode(env: &mut Env, policy: &mut dyn Policy, initial: Observation, record: bool) -> Result<EpisodeOutcome> {
    let seed = env.seed()?;
    let mut obs = initial.clone();
    let mut records = Vec::new();
    let mut error_note = None;
    let mut step = 0u32;
    let cause = loop {
        let action = match policy.act(&obs, env) {
            Ok(a) => a,
            Err(e) => {
                error_note = Some(e);
                break TerminationCause::PolicyError;
            }
        };
        let res = match env.step(&action) {
            Ok(r) => r,
            Err(Error::InvalidAction(msg)) => {
                error_note = Some(format!("invalid action: {msg}"));
                break TerminationCause::PolicyError;
            }
            Err(e) => return Err(e),
        };
        step += 1;
        if record {
            records.push(StepRecord {
                step,
                tick: res.info.tick,
                observation: res.observation.clone(),
                action: action.to_array(),
                reward: res.reward,
                phase: res.info.phase_completed,
            });
        }
        obs = res.observation;
        if let Some(c) = res.info.termination_cause {
            break c;
        }
    };
    policy.finish(env);
    let reward_total = env.reward_total()?;
    Ok(EpisodeOutcome {
        summary: EpisodeSummary {
            seed,
            reward_total,
            ground_truth_reward: env.ground_truth_total()?,
            phases_completed: env.phase()?.completed,
            length: step,
            cause,
            success: reward_total as usize >= env.graph().max_reward(),
            error_note,
        },
        initial_observation: initial,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub furniture: String,
    pub level: RandomnessLevel,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_phases: f64,
    pub min_phases: usize,
    pub max_phases: usize,
    pub mean_length: f64,
    pub causes: BTreeMap<TerminationCause, usize>,
    pub per_episode: Vec<EpisodeSummary>,
}

impl EvalMetrics {
    pub fn from_summaries(furniture: &str, level: RandomnessLevel, per_episode: Vec<EpisodeSummary>) -> Self {
        let n = per_episode.len();
        let nf = n.max(1) as f64;
        let mut causes = BTreeMap::new();
        for s in &per_episode {
            *causes.entry(s.cause).or_insert(0) += 1;
        }
        EvalMetrics {
            furniture: furniture.into(),
            level,
            episodes: n,
            success_rate: per_episode.iter().filter(|s| s.success).count() as f64 / nf,
            mean_phases: per_episode.iter().map(|s| s.phases_completed as f64).sum::<f64>() / nf,
            min_phases: per_episode.iter().map(|s| s.phases_completed).min().unwrap_or(0),
            max_phases: per_episode.iter().map(|s| s.phases_completed).max().unwrap_or(0),
            mean_length: per_episode.iter().map(|s| s.length as f64).sum::<f64>() / nf,
            causes,
            per_episode,
        }
    }
}

/// Runs one episode per seed, spread over `jobs` worker threads. Results are
/// ordered by seed position and do not depend on scheduling.
pub fn evaluate_policy<F>(cfg: &RunConfig, make_policy: F, seeds: &[u64], jobs: usize) -> Result<EvalMetrics>
where
    F: Fn(u64) -> Box<dyn Policy> + Sync,
{
    let graph = load_furniture(&cfg.furniture)?;
    evaluate_with(cfg, &graph, |env, seed| {
        let mut policy = make_policy(seed);
        run_episode(env, policy.as_mut(), seed, false).map(|o| o.summary)
    }, seeds, jobs)
}

/// Shared worker pool for evaluation and collection.
pub fn evaluate_with<F>(cfg: &RunConfig, graph: &AssemblyGraph, run: F, seeds: &[u64], jobs: usize) -> Result<EvalMetrics>
where
    F: Fn(&mut Env, u64) -> Result<EpisodeSummary> + Sync,
{
    let jobs = jobs.clamp(1, seeds.len().max(1));
    let mut slots: Vec<Option<Result<EpisodeSummary>>> = (0..seeds.len()).map(|_| None).collect();
    let chunk = seeds.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        for (seed_chunk, slot_chunk) in seeds.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let run = &run;
            s.spawn(move || {
                let mut env = match Env::with_graph(graph.clone(), cfg.clone()) {
                    Ok(e) => e,
                    Err(e) => {
                        slot_chunk[0] = Some(Err(e));
                        return;
                    }
                };
                for (seed, slot) in seed_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(run(&mut env, *seed));
                }
            });
        }
    });
    let mut out = Vec::with_capacity(seeds.len());
    for s in slots {
        match s {
            Some(r) => out.push(r?),
            None => continue,
        }
    }
    Ok(EvalMetrics::from_summaries(&cfg.furniture, cfg.level, out))
}

/// Pairs credited from exact part poses; used by tests and diagnostics.
pub fn ground_truth_pairs(world: &WorldState, graph: &AssemblyGraph, cfg: &RewardConfig) -> BTreeSet<usize> {
    let truth: Vec<Option<Pose>> = world.parts.iter().map(|p| Some(p.pose)).collect();
    crate::reward::step_reward(&BTreeSet::new(), &truth, graph, cfg).1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.perception.noise = crate::perception::NoiseModel::zero();
        cfg
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = Env::new(RunConfig::default()).unwrap();
        let mut b = Env::new(RunConfig::default()).unwrap();
        assert_eq!(a.reset(7).unwrap(), b.reset(7).unwrap());
        let act = Action::translate(0.02, 0.0, -0.01);
        assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
    }

    #[test]
    fn step_advances_99_ticks() {
        let mut env = Env::new(RunConfig::default()).unwrap();
        env.reset(1).unwrap();
        let r = env.step(&Action::zero()).unwrap();
        assert_eq!(r.info.tick, 99);
        let r = env.step(&Action::zero()).unwrap();
        assert_eq!(r.info.tick, 198);
    }

    #[test]
    fn step_before_reset_and_after_done() {
        let mut env = Env::new(RunConfig::default()).unwrap();
        assert!(matches!(env.step(&Action::zero()), Err(Error::NotReset)));
        env.reset(0).unwrap();
        let mut n = 0;
        loop {
            n += 1;
            if env.step(&Action::zero()).unwrap().done {
                break;
            }
        }
        assert_eq!(n, 50);
        assert_eq!(env.termination_cause(), Some(TerminationCause::NoMotion));
        let err = env.step(&Action::zero()).unwrap_err();
        assert_eq!(err.to_string(), "episode finished");
    }

    #[test]
    fn unknown_furniture() {
        let cfg = RunConfig {
            furniture: "bogus".into(),
            ..RunConfig::default()
        };
        assert!(matches!(Env::new(cfg), Err(Error::FurnitureNotFound(_))));
    }

    #[test]
    fn high_eval_cycles_three_layouts() {
        let cfg = RunConfig {
            level: RandomnessLevel::High,
            eval_mode: true,
            ..RunConfig::default()
        };
        let mut env = Env::new(cfg).unwrap();
        let obs: Vec<Vec<Pose>> = (0..6)
            .map(|s| {
                env.reset(s).unwrap();
                env.world().unwrap().parts.iter().map(|p| p.pose).collect()
            })
            .collect();
        assert_ne!(obs[0], obs[1]);
        assert_ne!(obs[1], obs[2]);
        assert_ne!(obs[0], obs[2]);
        assert_eq!(obs[0], obs[3]);
        assert_eq!(obs[2], obs[5]);
    }

    #[test]
    fn channels_control_fields() {
        let mut cfg = quiet_cfg();
        let mut env = Env::new(cfg.clone()).unwrap();
        let o = env.reset(3).unwrap();
        assert!(o.part_poses.is_none() && o.image.is_none());
        cfg.observation = ObservationChannels {
            part_poses: true,
            image: true,
        };
        let mut env = Env::new(cfg).unwrap();
        let o = env.reset(3).unwrap();
        let parts = o.part_poses.unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.observed));
        let img = o.image.unwrap().decode().unwrap();
        assert_eq!((img.width, img.height), (224, 224));
    }

    #[test]
    fn unsafe_when_driven_below_table() {
        let mut env = Env::new(RunConfig::default()).unwrap();
        env.reset(0).unwrap();
        let mut cause = None;
        for _ in 0..10 {
            let r = env.step(&Action::translate(0.0, 0.0, -0.5)).unwrap();
            if r.done {
                cause = r.info.termination_cause;
                break;
            }
        }
        assert_eq!(cause, Some(TerminationCause::Unsafe));
    }

    #[test]
    fn termination_priority() {
        let cfg = TerminationConfig::default();
        let mut h = TerminationHistory::default();
        let far = MotionSample {
            pose: Pose::from_translation(2.0, 0.0, 0.1),
            gripper_width: 0.08,
        };
        for _ in 0..51 {
            h.push(far, 50);
        }
        h.skill_steps = 400;
        h.total_steps = 4000;
        assert_eq!(check_termination(&h, &cfg, 50), Some(TerminationCause::NoMotion));
        h.samples.push_back(MotionSample {
            pose: Pose::from_translation(2.1, 0.0, 0.1),
            gripper_width: 0.08,
        });
        assert_eq!(check_termination(&h, &cfg, 50), Some(TerminationCause::Unsafe));
    }

    #[test]
    fn run_config_rejects_unknown_keys_and_round_trips() {
        assert!(RunConfig::from_json_str(r#"{"furniture":"lamp","bogus":1}"#).is_err());
        let cfg = RunConfig::from_json_str(r#"{"furniture":"lamp","level":"med"}"#).unwrap();
        assert_eq!(cfg.level, RandomnessLevel::Medium);
        let back = RunConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn zero_noise_reward_matches_ground_truth() {
        let mut env = Env::new(quiet_cfg()).unwrap();
        env.reset(5).unwrap();
        let mut policy = RandomPolicy::new(5);
        for _ in 0..40 {
            let obs = env.observe();
            let a = policy.act(&obs, &env).unwrap();
            let r = env.step(&a).unwrap();
            assert_eq!(r.reward, r.info.ground_truth_reward);
            if r.done {
                break;
            }
        }
    }
}
