//! Wire messages of the `/teleop` websocket. Every message is one JSON text
//! frame with a `type` tag.

use furnibench::catalog::AssemblyGraph;
use furnibench::controller::Action;
use furnibench::env::{Env, TerminationCause};
use furnibench::geometry::{rot_z, Pose};
use furnibench::workspace::Rect;
use furnibench::world::PartStatus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("gripper must be -1, 0 or 1, got {0}")]
    Gripper(f64),
    #[error("{0}")]
    OutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    #[default]
    None,
    Reset,
    StartRecord,
    StopRecord,
}

/// Operator input for one action step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Command {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// World-frame translation, meters.
    pub delta_position: [f64; 3],
    /// Rotation about the gripper's approach axis, radians.
    pub wrist_yaw_delta: f64,
    /// -1 open, 0 hold, +1 close.
    pub gripper: f64,
    pub control: Control,
    /// Seed for `reset`/`start_record`; the server picks the next one if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Command {
    pub fn motion(dx: f64, dy: f64, dz: f64) -> Self {
        Command {
            delta_position: [dx, dy, dz],
            ..Command::default()
        }
    }

    pub fn control(control: Control) -> Self {
        Command {
            control,
            ..Command::default()
        }
    }

    pub fn to_action(&self) -> Action {
        let [dx, dy, dz] = self.delta_position;
        Action::translate(dx, dy, dz)
            .with_rotation(&rot_z(self.wrist_yaw_delta))
            .with_gripper(self.gripper)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if let Some(k) = &self.kind {
            if k != "command" {
                return Err(ProtocolError::Malformed(format!("unexpected message type '{k}'")));
            }
        }
        if ![-1.0, 0.0, 1.0].contains(&self.gripper) {
            return Err(ProtocolError::Gripper(self.gripper));
        }
        if !self.wrist_yaw_delta.is_finite() || self.wrist_yaw_delta.abs() > std::f64::consts::PI {
            return Err(ProtocolError::OutOfRange("wrist_yaw_delta must lie in [-pi, pi]".into()));
        }
        self.to_action()
            .validate()
            .map_err(|e| ProtocolError::OutOfRange(e.to_string()))
    }
}

pub fn decode_command(text: &str) -> Result<Command, ProtocolError> {
    let cmd: Command = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    cmd.validate()?;
    Ok(cmd)
}

pub fn encode_command(cmd: &Command) -> String {
    let mut c = cmd.clone();
    c.kind = Some("command".into());
    serde_json::to_string(&c).expect("command serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSnapshot {
    pub id: String,
    pub pose: Pose,
    pub status: PartStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub step: u32,
    pub ee_pose: Pose,
    pub gripper_width: f64,
    pub held_part: Option<String>,
    pub parts: Vec<PartSnapshot>,
    pub phase: usize,
    pub n_phases: usize,
    pub reward_total: u32,
    pub recording: bool,
    pub done: bool,
    pub termination_cause: Option<TerminationCause>,
}

impl Snapshot {
    pub fn capture(env: &Env, recording: bool) -> Self {
        let w = env.world().expect("snapshot after reset");
        let g = env.graph();
        Snapshot {
            tick: w.tick,
            step: env.steps_taken(),
            ee_pose: w.ee.pose,
            gripper_width: w.ee.gripper_width,
            held_part: w.held_part().map(|i| g.parts[i].id.clone()),
            parts: w
                .parts
                .iter()
                .zip(&g.parts)
                .map(|(p, s)| PartSnapshot {
                    id: s.id.clone(),
                    pose: p.pose,
                    status: p.status,
                })
                .collect(),
            phase: env.phase().map_or(0, |p| p.completed),
            n_phases: g.n_phases(),
            reward_total: env.reward_total().unwrap_or(0),
            recording,
            done: env.is_done(),
            termination_cause: env.termination_cause(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartOutline {
    pub id: String,
    pub footprint: f64,
}

/// Static scene description sent once on connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub protocol_version: u32,
    pub furniture: String,
    pub table: Rect,
    pub walls: Vec<Rect>,
    pub parts: Vec<PartOutline>,
    pub n_phases: usize,
    pub action_frequency: f64,
}

impl Scene {
    pub fn describe(env: &Env) -> Self {
        let g: &AssemblyGraph = env.graph();
        let ws = &env.config().world.workspace;
        Scene {
            protocol_version: PROTOCOL_VERSION,
            furniture: g.furniture_id.clone(),
            table: ws.table,
            walls: ws.walls.to_vec(),
            parts: g
                .parts
                .iter()
                .map(|p| PartOutline {
                    id: p.id.clone(),
                    footprint: p.footprint,
                })
                .collect(),
            n_phases: g.n_phases(),
            action_frequency: env.config().controller.action_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Scene(Scene),
    Snapshot(Snapshot),
    Error { message: String },
}

pub fn encode_snapshot(s: &Snapshot) -> String {
    encode_server(&ServerMessage::Snapshot(s.clone()))
}

pub fn encode_server(m: &ServerMessage) -> String {
    serde_json::to_string(m).expect("server message serializes")
}

pub fn decode_server(text: &str) -> Result<ServerMessage, ProtocolError> {
    serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
}
