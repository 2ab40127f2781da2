//! Episode files: one JSON header line followed by one JSON line per step.
//!
//! Reals are written with the shortest decimal that parses back to the same
//! `f64`, so a write/read cycle is bit-exact. See `docs/episode-format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::Action;
use crate::env::{Env, Observation, RunConfig};
use crate::error::{Error, Result};
use crate::init::RandomnessLevel;

pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Scripted,
    Teleop,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub format_version: u32,
    pub furniture_id: String,
    pub randomness_level: RandomnessLevel,
    pub seed: u64,
    pub control_frequency_hz: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_note: Option<String>,
    pub operator: Operator,
    /// Skill start the episode was reset to, if not a full-task episode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<usize>,
    /// Run configuration used for recording; replay uses it when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_observation: Option<Observation>,
}

impl EpisodeHeader {
    pub fn new(cfg: &RunConfig, seed: u64, operator: Operator) -> Self {
        EpisodeHeader {
            format_version: EPISODE_FORMAT_VERSION,
            furniture_id: cfg.furniture.clone(),
            randomness_level: cfg.level,
            seed,
            control_frequency_hz: cfg.controller.action_frequency,
            success: false,
            error_note: None,
            operator,
            skill: None,
            config: Some(cfg.clone()),
            initial_observation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    /// 1-based action index.
    pub step: u32,
    /// World tick after the action.
    pub tick: u64,
    /// Observation after the action.
    pub observation: Observation,
    pub action: [f64; 8],
    pub reward: u32,
    /// Phases completed after the action.
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
}

fn observation_finite(o: &Observation) -> bool {
    let mut v: Vec<f64> = Vec::new();
    v.extend(o.ee_position);
    v.extend(o.ee_orientation);
    v.extend(o.ee_linear_velocity);
    v.extend(o.ee_angular_velocity);
    v.push(o.gripper_width);
    if let Some(parts) = &o.part_poses {
        for p in parts.iter().filter_map(|p| p.pose) {
            v.extend(p.to_array());
        }
    }
    v.iter().all(|x| x.is_finite())
}

/// Checks header and record invariants.
pub fn validate_episode(header: &EpisodeHeader, steps: &[StepRecord]) -> Result<()> {
    if header.format_version != EPISODE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.format_version));
    }
    if !(header.control_frequency_hz > 0.0 && header.control_frequency_hz.is_finite()) {
        return Err(Error::EpisodeValidation("control_frequency_hz must be positive".into()));
    }
    if steps.is_empty() {
        return Err(Error::EpisodeValidation("episode has no steps".into()));
    }
    if let Some(o) = &header.initial_observation {
        if !observation_finite(o) {
            return Err(Error::EpisodeValidation("initial observation has non-finite values".into()));
        }
    }
    let mut prev: Option<&StepRecord> = None;
    for r in steps {
        if let Some(p) = prev {
            if r.tick <= p.tick {
                return Err(Error::EpisodeValidation(format!("tick not increasing at step {}", r.step)));
            }
            if r.phase < p.phase {
                return Err(Error::EpisodeValidation(format!("phase decreased at step {}", r.step)));
            }
            if r.step <= p.step {
                return Err(Error::EpisodeValidation(format!("step index not increasing at step {}", r.step)));
            }
        }
        if !r.action.iter().all(|a| a.is_finite()) || !observation_finite(&r.observation) {
            return Err(Error::EpisodeValidation(format!("non-finite value at step {}", r.step)));
        }
        prev = Some(r);
    }
    Ok(())
}

/// Serializes an episode to its file text after validation.
pub fn encode_episode(header: &EpisodeHeader, steps: &[StepRecord]) -> Result<String> {
    validate_episode(header, steps)?;
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in steps {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_episode(header: &EpisodeHeader, steps: &[StepRecord], path: &Path) -> Result<()> {
    let text = encode_episode(header, steps)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Parses episode text; errors carry 1-based line numbers.
pub fn decode_episode(text: &str) -> Result<Episode> {
    let mut lines = text.split_inclusive('\n').enumerate();
    let (_, first) = lines.next().ok_or(Error::MalformedRecord {
        line: 1,
        message: "empty file, expected header".into(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(first.trim_end()).map_err(|e| Error::MalformedRecord {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == EPISODE_FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedVersion(v.min(u32::MAX as u64) as u32)),
        None => {
            return Err(Error::MalformedRecord {
                line: 1,
                message: "header lacks format_version".into(),
            })
        }
    }
    let header: EpisodeHeader = serde_json::from_value(raw).map_err(|e| Error::MalformedRecord {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    let mut steps: Vec<StepRecord> = Vec::new();
    for (i, line) in lines {
        let body = line.trim_end();
        if body.is_empty() {
            continue;
        }
        let last_valid = match steps.last() {
            Some(r) => format!("last valid record is step {} (line {})", r.step, i),
            None => "no valid step record before it".to_string(),
        };
        if !line.ends_with('\n') {
            // a final line without terminator only parses if it was written whole
            if serde_json::from_str::<StepRecord>(body).is_err() {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    message: format!("truncated record; {last_valid}"),
                });
            }
        }
        let rec: StepRecord = serde_json::from_str(body).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: format!("{e}; {last_valid}"),
        })?;
        steps.push(rec);
    }
    validate_episode(&header, &steps)?;
    Ok(Episode { header, steps })
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    decode_episode(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub steps_replayed: usize,
    pub max_deviation: f64,
    /// 1-based step of the first mismatch in observation, reward or phase.
    pub first_divergent_step: Option<u32>,
    pub recorded_reward: u32,
    pub replayed_reward: u32,
    pub recorded_phase: usize,
    pub replayed_phase: usize,
}

impl DivergenceReport {
    pub fn is_exact(&self) -> bool {
        self.first_divergent_step.is_none() && self.max_deviation == 0.0
    }
}

/// Re-runs the recorded actions from the recorded seed.
pub fn replay_episode(env: &mut Env, episode: &Episode) -> Result<DivergenceReport> {
    replay_episode_with_seed(env, episode, episode.header.seed)
}

/// Replays the recorded actions from an arbitrary seed.
pub fn replay_episode_with_seed(env: &mut Env, episode: &Episode, seed: u64) -> Result<DivergenceReport> {
    let h = &episode.header;
    let cfg = env.config();
    if cfg.furniture != h.furniture_id {
        return Err(Error::ConfigMismatch(format!(
            "episode furniture {} but environment has {}",
            h.furniture_id, cfg.furniture
        )));
    }
    if cfg.level != h.randomness_level {
        return Err(Error::ConfigMismatch(format!(
            "episode level {} but environment has {}",
            h.randomness_level, cfg.level
        )));
    }
    if cfg.controller.action_frequency != h.control_frequency_hz {
        return Err(Error::ConfigMismatch("control frequency differs".into()));
    }
    if let Some(rec) = &h.config {
        if rec != cfg {
            return Err(Error::ConfigMismatch("run configuration differs from the recorded one".into()));
        }
    }
    let initial = match h.skill {
        Some(k) => env.reset_to_skill(k, seed)?,
        None => env.reset(seed)?,
    };
    let mut max_dev: f64 = 0.0;
    let mut first: Option<u32> = None;
    if let Some(o) = &h.initial_observation {
        let d = initial.max_deviation(o);
        max_dev = max_dev.max(d);
    }
    let mut replayed = 0;
    let mut reward = 0;
    let mut phase = 0;
    for rec in &episode.steps {
        if env.is_done() {
            first.get_or_insert(rec.step);
            max_dev = f64::INFINITY;
            break;
        }
        let action = Action::from_array(&rec.action);
        let r = env.step(&action)?;
        replayed += 1;
        reward += r.reward;
        phase = r.info.phase_completed;
        let d = r.observation.max_deviation(&rec.observation);
        max_dev = max_dev.max(d);
        if d > 0.0 || r.reward != rec.reward || r.info.phase_completed != rec.phase || r.info.tick != rec.tick {
            first.get_or_insert(rec.step);
        }
    }
    Ok(DivergenceReport {
        steps_replayed: replayed,
        max_deviation: max_dev,
        first_divergent_step: first,
        recorded_reward: episode.steps.iter().map(|s| s.reward).sum(),
        replayed_reward: reward,
        recorded_phase: episode.steps.last().map_or(0, |s| s.phase),
        replayed_phase: phase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub furniture: String,
    pub level: RandomnessLevel,
    pub count: usize,
    pub avg_length: f64,
    pub total_hours: f64,
}

/// Demonstration counts, mean step count and hours per (furniture, level).
///
/// Step totals are summed as integers, so the result does not depend on the
/// order of `episodes`.
pub fn compute_stats<'a, I>(episodes: I, control_frequency_hz: f64) -> Result<Vec<StatsRow>>
where
    I: IntoIterator<Item = (&'a str, RandomnessLevel, usize)>,
{
    if !(control_frequency_hz > 0.0 && control_frequency_hz.is_finite()) {
        return Err(Error::InvalidConfig("control frequency must be positive".into()));
    }
    let mut groups: BTreeMap<(String, RandomnessLevel), (usize, u64)> = BTreeMap::new();
    for (f, level, len) in episodes {
        let g = groups.entry((f.to_string(), level)).or_default();
        g.0 += 1;
        g.1 += len as u64;
    }
    Ok(groups
        .into_iter()
        .map(|((furniture, level), (count, steps))| StatsRow {
            furniture,
            level,
            count,
            avg_length: steps as f64 / count as f64,
            total_hours: steps as f64 / control_frequency_hz / 3600.0,
        })
        .collect())
}

/// Convenience over loaded episodes.
pub fn episode_stats(episodes: &[Episode], control_frequency_hz: f64) -> Result<Vec<StatsRow>> {
    compute_stats(
        episodes
            .iter()
            .map(|e| (e.header.furniture_id.as_str(), e.header.randomness_level, e.steps.len())),
        control_frequency_hz,
    )
}

/// Loads every `.jsonl` episode under a directory, sorted by file name.
pub fn read_episode_dir(dir: &Path) -> Result<Vec<Episode>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_episode(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64) -> Observation {
        Observation {
            ee_position: [x, 0.1 + 1e-17, 0.3],
            ee_orientation: [1.0, 0.0, 0.0, 0.0],
            ee_linear_velocity: [0.1, 0.2, 1.0 / 3.0],
            ee_angular_velocity: [0.0; 3],
            gripper_width: 0.08,
            part_poses: None,
            image: None,
        }
    }

    fn tiny(n: u32) -> (EpisodeHeader, Vec<StepRecord>) {
        let header = EpisodeHeader {
            config: None,
            ..EpisodeHeader::new(&RunConfig::default(), 3, Operator::Scripted)
        };
        let steps = (1..=n)
            .map(|i| StepRecord {
                step: i,
                tick: 99 * i as u64,
                observation: obs(i as f64 * 0.1),
                action: [0.01, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0],
                reward: 0,
                phase: 0,
            })
            .collect();
        (header, steps)
    }

    #[test]
    fn round_trip_is_exact() {
        let (h, s) = tiny(4);
        let text = encode_episode(&h, &s).unwrap();
        let back = decode_episode(&text).unwrap();
        assert_eq!(back.header, h);
        assert_eq!(back.steps, s);
        assert_eq!(encode_episode(&back.header, &back.steps).unwrap(), text);
    }

    #[test]
    fn refuses_empty_and_bad_phase() {
        let (h, mut s) = tiny(3);
        assert!(encode_episode(&h, &[]).is_err());
        s[2].phase = 0;
        s[1].phase = 1;
        assert!(matches!(encode_episode(&h, &s), Err(Error::EpisodeValidation(_))));
    }

    #[test]
    fn unknown_version_rejected_on_read() {
        let (h, s) = tiny(1);
        let text = encode_episode(&h, &s).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(matches!(decode_episode(&text), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn truncated_names_last_valid_record() {
        let (h, s) = tiny(3);
        let text = encode_episode(&h, &s).unwrap();
        let cut = &text[..text.len() - 20];
        match decode_episode(cut) {
            Err(Error::MalformedRecord { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("last valid record is step 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hand_written_minimal_file() {
        let text = concat!(
            r#"{"format_version":1,"furniture_id":"one_leg","randomness_level":"low","seed":0,"control_frequency_hz":10.0,"success":false,"operator":"teleop"}"#,
            "\n",
            r#"{"step":1,"tick":99,"observation":{"ee_position":[0,0,0.2],"ee_orientation":[0,1,0,0],"ee_linear_velocity":[0,0,0],"ee_angular_velocity":[0,0,0],"gripper_width":0.08},"action":[0,0,0,1,0,0,0,0],"reward":0,"phase":0}"#,
            "\n"
        );
        let ep = decode_episode(text).unwrap();
        assert_eq!(ep.steps.len(), 1);
        assert_eq!(ep.header.operator, Operator::Teleop);
    }

    #[test]
    fn malformed_line_number() {
        let (h, s) = tiny(2);
        let mut text = encode_episode(&h, &s).unwrap();
        text.push_str("{not json}\n");
        assert!(matches!(decode_episode(&text), Err(Error::MalformedRecord { line: 4, .. })));
    }

    #[test]
    fn stats_hand_values() {
        let eps: Vec<(&str, RandomnessLevel, usize)> = (0..10).map(|_| ("one_leg", RandomnessLevel::Low, 100)).collect();
        let rows = compute_stats(eps, 10.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 10);
        assert_eq!(rows[0].avg_length, 100.0);
        assert!((rows[0].total_hours - 1000.0 / 36000.0).abs() < 1e-15);
        assert!(compute_stats(Vec::new(), 10.0).unwrap().is_empty());
    }
}
