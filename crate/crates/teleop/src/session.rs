//! The simulation side of the bridge: one environment, one pending command,
//! optional recording.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use furnibench::dataset::{write_episode, EpisodeHeader, Operator, StepRecord};
use furnibench::env::{Env, Observation, RunConfig};
use furnibench::error::Result;

use crate::protocol::{Command, Control, Snapshot};

/// Single-slot mailbox: a newer command replaces an unconsumed older one.
#[derive(Debug, Default)]
pub struct CommandSlot(Mutex<Option<Command>>);

impl CommandSlot {
    pub fn submit(&self, cmd: Command) {
        *self.0.lock().unwrap() = Some(cmd);
    }

    pub fn take(&self) -> Option<Command> {
        self.0.lock().unwrap().take()
    }
}

struct Recording {
    header: EpisodeHeader,
    steps: Vec<StepRecord>,
}

pub struct TeleopSession {
    env: Env,
    out_dir: PathBuf,
    next_seed: u64,
    recording: Option<Recording>,
    written: Vec<PathBuf>,
}

impl TeleopSession {
    /// Creates the environment and resets it with `seed`.
    pub fn new(cfg: RunConfig, seed: u64, out_dir: &Path) -> Result<Self> {
        let mut env = Env::new(cfg)?;
        env.reset(seed)?;
        Ok(TeleopSession {
            env,
            out_dir: out_dir.to_path_buf(),
            next_seed: seed.wrapping_add(1),
            recording: None,
            written: Vec::new(),
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Episode files written so far.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::capture(&self.env, self.is_recording())
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<Observation> {
        let seed = seed.unwrap_or(self.next_seed);
        self.next_seed = seed.wrapping_add(1);
        self.env.reset(seed)
    }

    fn finish_recording(&mut self) -> Result<()> {
        let Some(rec) = self.recording.take() else {
            return Ok(());
        };
        if rec.steps.is_empty() {
            return Ok(());
        }
        let mut header = rec.header;
        header.success = self.env.termination_cause() == Some(furnibench::env::TerminationCause::Success);
        let name = format!(
            "teleop_{}_{}_{}_{:03}.jsonl",
            header.furniture_id,
            header.randomness_level,
            header.seed,
            self.written.len()
        );
        let path = self.out_dir.join(name);
        write_episode(&header, &rec.steps, &path)?;
        self.written.push(path);
        Ok(())
    }

    /// One server tick. Control commands act without stepping; otherwise
    /// the command (or the zero action) is applied for one env step.
    /// Returns `None` when nothing changed, i.e. the episode is over and
    /// no control arrived.
    pub fn tick(&mut self, cmd: Option<Command>) -> Result<Option<Snapshot>> {
        let cmd = cmd.unwrap_or_default();
        match cmd.control {
            Control::Reset => {
                self.finish_recording()?;
                self.reset(cmd.seed)?;
                return Ok(Some(self.snapshot()));
            }
            Control::StartRecord => {
                // recordings always begin at a reset so they replay from their seed
                self.finish_recording()?;
                let initial = self.reset(cmd.seed)?;
                let cfg = self.env.config();
                let mut header = EpisodeHeader::new(cfg, self.env.seed()?, Operator::Teleop);
                header.initial_observation = Some(initial);
                self.recording = Some(Recording {
                    header,
                    steps: Vec::new(),
                });
                return Ok(Some(self.snapshot()));
            }
            Control::StopRecord => {
                self.finish_recording()?;
                return Ok(Some(self.snapshot()));
            }
            Control::None => {}
        }
        if self.env.is_done() {
            return Ok(None);
        }
        let action = cmd.to_action();
        let res = self.env.step(&action)?;
        if let Some(rec) = &mut self.recording {
            rec.steps.push(StepRecord {
                step: self.env.steps_taken(),
                tick: res.info.tick,
                observation: res.observation,
                action: action.to_array(),
                reward: res.reward,
                phase: res.info.phase_completed,
            });
        }
        if res.done {
            self.finish_recording()?;
        }
        Ok(Some(self.snapshot()))
    }

    /// Writes any open recording; call before dropping the session.
    pub fn close(&mut self) -> Result<()> {
        self.finish_recording()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use furnibench::dataset::{read_episode, replay_episode};

    fn session(dir: &Path) -> TeleopSession {
        TeleopSession::new(RunConfig::default(), 0, dir).unwrap()
    }

    #[test]
    fn last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let slot = CommandSlot::default();
        let start = s.snapshot().ee_pose.position;
        slot.submit(Command::motion(0.02, 0.0, 0.0));
        slot.submit(Command::motion(0.0, 0.02, 0.0));
        let snap = s.tick(slot.take()).unwrap().unwrap();
        let moved = snap.ee_pose.position - start;
        assert!(moved.y > 0.015, "{moved:?}");
        assert!(moved.x.abs() < 1e-3, "{moved:?}");
        assert!(slot.take().is_none());
    }

    #[test]
    fn reset_gives_tick_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        s.tick(Some(Command::motion(0.01, 0.0, 0.0))).unwrap();
        assert_eq!(s.snapshot().tick, 99);
        let snap = s.tick(Some(Command::control(Control::Reset))).unwrap().unwrap();
        assert_eq!((snap.tick, snap.step), (0, 0));
    }

    #[test]
    fn no_command_steps_zero_action() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let before = s.snapshot();
        let after = s.tick(None).unwrap().unwrap();
        assert_eq!(after.step, 1);
        assert!((after.ee_pose.position - before.ee_pose.position).norm() < 1e-6);
    }

    #[test]
    fn recorded_session_replays_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let mut start = Command::control(Control::StartRecord);
        start.seed = Some(17);
        s.tick(Some(start)).unwrap();
        assert!(s.is_recording());
        let mut inputs = vec![Command::motion(0.02, 0.0, -0.01); 5];
        inputs.push(Command {
            wrist_yaw_delta: 0.2,
            gripper: 1.0,
            ..Command::default()
        });
        inputs.extend(vec![Command::motion(-0.01, 0.01, 0.0); 4]);
        for c in inputs {
            s.tick(Some(c)).unwrap();
        }
        let reward = s.snapshot().reward_total;
        s.tick(Some(Command::control(Control::StopRecord))).unwrap();
        assert_eq!(s.written().len(), 1);
        let ep = read_episode(&s.written()[0]).unwrap();
        assert_eq!(ep.steps.len(), 10);
        assert_eq!(ep.header.seed, 17);
        let mut env = Env::new(RunConfig::default()).unwrap();
        let rep = replay_episode(&mut env, &ep).unwrap();
        assert!(rep.is_exact(), "{rep:?}");
        assert_eq!(rep.replayed_reward, reward);
    }

    #[test]
    fn episode_end_writes_recording_and_idles() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        s.tick(Some(Command::control(Control::StartRecord))).unwrap();
        let mut n = 0;
        while s.tick(None).unwrap().is_some() {
            n += 1;
        }
        // idle episode ends on the no-motion rule
        assert_eq!(n, 50);
        assert!(!s.is_recording());
        assert_eq!(s.written().len(), 1);
        assert_eq!(read_episode(&s.written()[0]).unwrap().steps.len(), 50);
    }
}
