//! Delta-pose action pipeline: clip, interpolate into sub-goals, and track
//! each sub-goal with a task-space PD law held over several plant steps.

use serde::{Deserialize, Serialize};

use crate::catalog::AssemblyGraph;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, quat_wxyz, rotation_vector, Pose, Quat, Vec3};
use crate::world::{resolve_mechanics, step_world, EeState, GripperCommand, WorldConfig, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub action_frequency: f64,
    pub torque_frequency: f64,
    pub lowlevel_frequency: f64,
    pub torque_repeat: u32,
    /// Bound on the Euclidean norm of the commanded translation, meters.
    pub delta_position_clip: f64,
    /// Bound on the commanded rotation angle, radians.
    pub delta_rotation_clip: f64,
    pub gripper_threshold: f64,
    /// Gains on (x, y, z, rx, ry, rz).
    pub kp: [f64; 6],
    pub kd: [f64; 6],
    /// Linear velocity damping in the plant, N s/m.
    pub joint_damping: f64,
    pub max_force: f64,
    pub max_torque: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            action_frequency: 10.0,
            torque_frequency: 1000.0 / 3.0,
            lowlevel_frequency: 1000.0,
            torque_repeat: 3,
            delta_position_clip: 0.10,
            delta_rotation_clip: 30f64.to_radians(),
            gripper_threshold: 0.019,
            kp: [60000.0, 60000.0, 60000.0, 600.0, 600.0, 600.0],
            kd: [250.0, 250.0, 250.0, 2.5, 2.5, 2.5],
            joint_damping: 2.0,
            max_force: 5000.0,
            max_torque: 100.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("controller: {m}")));
        if !(self.action_frequency > 0.0 && self.torque_frequency > 0.0 && self.lowlevel_frequency > 0.0) {
            return bad("frequencies must be positive");
        }
        if self.torque_repeat == 0 {
            return bad("torque_repeat must be at least 1");
        }
        let implied = self.torque_frequency * self.torque_repeat as f64;
        if (implied - self.lowlevel_frequency).abs() > 1e-6 * self.lowlevel_frequency {
            return bad("lowlevel_frequency must equal torque_frequency * torque_repeat");
        }
        if self.kp.iter().chain(&self.kd).any(|g| !(*g > 0.0)) {
            return bad("gains must be positive");
        }
        if !(self.delta_position_clip > 0.0 && self.delta_rotation_clip > 0.0) {
            return bad("clip bounds must be positive");
        }
        if !(0.0..1.0).contains(&self.gripper_threshold) {
            return bad("gripper_threshold must lie in [0, 1)");
        }
        if !(self.joint_damping >= 0.0 && self.max_force > 0.0 && self.max_torque > 0.0) {
            return bad("damping must be non-negative and force bounds positive");
        }
        if self.subgoal_count() == 0 {
            return bad("action_frequency too high for the low-level rate");
        }
        Ok(())
    }

    /// Number of interpolated sub-goals per action (33 at the defaults).
    pub fn subgoal_count(&self) -> usize {
        (self.lowlevel_frequency / self.action_frequency / self.torque_repeat as f64).round() as usize
    }

    /// Low-level plant steps per action (99 at the defaults).
    pub fn ticks_per_action(&self) -> usize {
        self.subgoal_count() * self.torque_repeat as usize
    }

    pub fn lowlevel_dt(&self) -> f64 {
        1.0 / self.lowlevel_frequency
    }
}

/// Policy command: translation delta (m), rotation delta as a quaternion in
/// the gripper frame, and a gripper scalar (−1 open, +1 close).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta_position: [f64; 3],
    /// `(w, x, y, z)`
    pub delta_orientation: [f64; 4],
    pub gripper: f64,
}

impl Default for Action {
    fn default() -> Self {
        Self::zero()
    }
}

impl Action {
    pub fn zero() -> Self {
        Action {
            delta_position: [0.0; 3],
            delta_orientation: [1.0, 0.0, 0.0, 0.0],
            gripper: 0.0,
        }
    }

    pub fn translate(dx: f64, dy: f64, dz: f64) -> Self {
        Action {
            delta_position: [dx, dy, dz],
            ..Self::zero()
        }
    }

    pub fn with_gripper(mut self, g: f64) -> Self {
        self.gripper = g;
        self
    }

    pub fn with_rotation(mut self, q: &Quat) -> Self {
        let q = crate::geometry::canonical(q);
        // unit components can round a hair past 1
        self.delta_orientation = crate::geometry::quat_to_wxyz(&q).map(|c| c.clamp(-1.0, 1.0));
        self
    }

    pub fn to_array(&self) -> [f64; 8] {
        let p = self.delta_position;
        let q = self.delta_orientation;
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3], self.gripper]
    }

    pub fn from_array(a: &[f64; 8]) -> Self {
        Action {
            delta_position: [a[0], a[1], a[2]],
            delta_orientation: [a[3], a[4], a[5], a[6]],
            gripper: a[7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if let Some(v) = a.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidAction(format!("non-finite component {v}")));
        }
        if let Some(v) = a.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidAction(format!("component {v} outside [-1, 1]")));
        }
        let q = self.delta_orientation;
        if q.iter().map(|c| c * c).sum::<f64>() < 1e-12 {
            return Err(Error::InvalidAction("zero delta orientation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedAction {
    pub goal: Pose,
    pub subgoals: Vec<Pose>,
    pub gripper: GripperCommand,
}

pub fn gripper_command(g: f64, threshold: f64) -> GripperCommand {
    if g > threshold {
        GripperCommand::Close
    } else if g < -threshold {
        GripperCommand::Open
    } else {
        GripperCommand::Hold
    }
}

/// Clips an action against the current gripper pose and interpolates it.
///
/// The translation is applied in the world frame and the rotation in the
/// gripper frame: `goal.p = p + Δp`, `goal.q = q · Δq`.
pub fn process_action(current: &Pose, action: &Action, cfg: &ControllerConfig) -> Result<ProcessedAction> {
    action.validate()?;
    let mut dp = Vec3::from(action.delta_position);
    let n = dp.norm();
    if n > cfg.delta_position_clip {
        dp *= cfg.delta_position_clip / n;
    }
    let q = action.delta_orientation;
    let mut dq = crate::geometry::canonical(&quat_wxyz(q[0], q[1], q[2], q[3]));
    let angle = geodesic_angle(&Quat::identity(), &dq);
    if angle > cfg.delta_rotation_clip {
        let rv = rotation_vector(&dq);
        dq = crate::geometry::from_rotation_vector(&(rv * (cfg.delta_rotation_clip / angle)));
    }
    let goal = Pose::new(current.position + dp, current.orientation * dq);
    let count = cfg.subgoal_count();
    let start = current.orientation;
    let subgoals = (1..=count)
        .map(|i| {
            if i == count {
                return goal;
            }
            let t = i as f64 / count as f64;
            Pose::new(current.position + dp * t, start.slerp(&goal.orientation, t))
        })
        .collect();
    Ok(ProcessedAction {
        goal,
        subgoals,
        gripper: gripper_command(action.gripper, cfg.gripper_threshold),
    })
}

/// Task-space PD force toward a sub-goal, bounded per channel.
pub fn control_substep(subgoal: &Pose, ee: &EeState, cfg: &ControllerConfig) -> [f64; 6] {
    let ep = subgoal.position - ee.pose.position;
    let er = rotation_vector(&(subgoal.orientation * ee.pose.orientation.inverse()));
    let v = ee.linear_velocity;
    let w = ee.angular_velocity;
    let mut f = Vec3::zeros();
    let mut t = Vec3::zeros();
    for i in 0..3 {
        f[i] = cfg.kp[i] * ep[i] - cfg.kd[i] * v[i];
        t[i] = cfg.kp[i + 3] * er[i] - cfg.kd[i + 3] * w[i];
    }
    let fn_ = f.norm();
    if fn_ > cfg.max_force {
        f *= cfg.max_force / fn_;
    }
    let tn = t.norm();
    if tn > cfg.max_torque {
        t *= cfg.max_torque / tn;
    }
    [f.x, f.y, f.z, t.x, t.y, t.z]
}

/// Runs one full action cycle: each sub-goal's force is held for
/// `torque_repeat` plant steps, with mechanics resolved after every step.
pub fn run_action(
    world: &mut WorldState,
    graph: &AssemblyGraph,
    action: &Action,
    cfg: &ControllerConfig,
    world_cfg: &WorldConfig,
) -> Result<ProcessedAction> {
    let processed = process_action(&world.ee.pose, action, cfg)?;
    let dt = cfg.lowlevel_dt();
    for sub in &processed.subgoals {
        let force = control_substep(sub, &world.ee, cfg);
        for _ in 0..cfg.torque_repeat {
            step_world(world, graph, world_cfg, &force, processed.gripper, dt, cfg.joint_damping);
            resolve_mechanics(world, graph, world_cfg);
        }
    }
    Ok(processed)
}
