//! Rigid-pose world: table, corner walls, part states and a task-space plant
//! for the end-effector.
//!
//! The end-effector is a damped double integrator driven by a 6-D generalized
//! force. Parts are kinematic: a held part rides on the gripper, inserted or
//! assembled parts ride on the part they are mated to, everything else rests
//! on the table.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::catalog::{AssemblyGraph, Mechanic};
use crate::error::{Error, Result};
use crate::geometry::{
    compose_poses, from_rotation_vector, geodesic_angle, relative_pose, renormalize, rot_x, rot_z, twist_angle,
    yaw_of, Pose, Vec3,
};
use crate::workspace::{circles_overlap, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartStatus {
    Free,
    Grasped,
    Inserted,
    Assembled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Open,
    Inserted,
    Assembled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Virtual mass of the end-effector body, kg.
    pub mass: f64,
    /// Isotropic rotational inertia, kg m².
    pub inertia: f64,
    /// Norm bound on the linear force, N.
    pub max_force: f64,
    /// Norm bound on the torque, N m.
    pub max_torque: f64,
    /// Finger slew speed, m/s.
    pub gripper_speed: f64,
    pub max_gripper_width: f64,
    /// Grip point to grasp frame distance that still attaches on close.
    pub grasp_radius: f64,
    /// Per-axis position tolerance for engaging a mate.
    pub insert_position_tolerance: f64,
    /// Angular tolerance for engaging a mate, radians.
    pub insert_angle_tolerance: f64,
    /// Screw rotation available per grasp, radians.
    pub yaw_budget: f64,
    pub home: Pose,
    pub workspace: Workspace,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            mass: 1.0,
            inertia: 0.01,
            max_force: 5000.0,
            max_torque: 100.0,
            gripper_speed: 1.0,
            max_gripper_width: 0.08,
            grasp_radius: 0.02,
            insert_position_tolerance: 0.010,
            insert_angle_tolerance: 15f64.to_radians(),
            yaw_budget: FRAC_PI_2,
            home: Pose::new(Vec3::new(0.0, 0.0, 0.20), rot_x(PI)),
            workspace: Workspace::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("max_force", self.max_force),
            ("max_torque", self.max_torque),
            ("gripper_speed", self.gripper_speed),
            ("max_gripper_width", self.max_gripper_width),
            ("grasp_radius", self.grasp_radius),
            ("insert_position_tolerance", self.insert_position_tolerance),
            ("insert_angle_tolerance", self.insert_angle_tolerance),
            ("yaw_budget", self.yaw_budget),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("world.{name} must be positive")));
            }
        }
        self.workspace.validate().map_err(Error::InvalidConfig)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartState {
    pub pose: Pose,
    pub status: PartStatus,
    /// Screw rotation accrued on the pair that attaches this part.
    pub screw_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairState {
    pub status: PairStatus,
    /// Screw angle (radians) or slid distance (meters).
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EeState {
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub gripper_width: f64,
    /// Latched finger target; `Hold` commands leave it unchanged.
    pub gripper_closing: bool,
    pub held_part: Option<usize>,
    /// Pose of the held part in the gripper frame, fixed at grasp time.
    pub grasp_offset: Pose,
    pub grasp_yaw_budget: f64,
    prev_pose: Pose,
}

/// Per-graph index tables, so the tick loop avoids string lookups.
#[derive(Debug, Clone, PartialEq)]
struct Topology {
    pair_parts: Vec<(usize, usize)>,
    /// Pair in which each part is the moving member.
    attach_pair: Vec<Option<usize>>,
    /// Pairs ordered so a part's own mate is resolved before anything mated onto it.
    pair_order: Vec<usize>,
}

impl Topology {
    fn new(graph: &AssemblyGraph) -> Self {
        let pair_parts: Vec<(usize, usize)> = (0..graph.pairs.len()).map(|k| graph.pair_parts(k)).collect();
        let mut attach_pair = vec![None; graph.n_parts()];
        for (k, &(_, b)) in pair_parts.iter().enumerate() {
            attach_pair[b] = Some(k);
        }
        let depth = |mut part: usize| {
            let mut d = 0;
            while let Some(k) = attach_pair[part] {
                part = pair_parts[k].0;
                d += 1;
                if d > pair_parts.len() {
                    break;
                }
            }
            d
        };
        let mut pair_order: Vec<usize> = (0..pair_parts.len()).collect();
        pair_order.sort_by_key(|&k| (depth(pair_parts[k].0), k));
        Topology {
            pair_parts,
            attach_pair,
            pair_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub parts: Vec<PartState>,
    pub pairs: Vec<PairState>,
    pub ee: EeState,
    pub assembled_pairs: BTreeSet<usize>,
    pub seed: u64,
    pending_release: Option<usize>,
    topology: Topology,
}

impl WorldState {
    pub fn held_part(&self) -> Option<usize> {
        self.ee.held_part
    }

    /// Part indices `(a, b)` of a pair.
    pub fn pair_parts(&self, pair: usize) -> (usize, usize) {
        self.topology.pair_parts[pair]
    }

    pub fn attach_pair(&self, part: usize) -> Option<usize> {
        self.topology.attach_pair[part]
    }

    /// True when the part hangs off another part through an engaged mate.
    pub fn is_mated(&self, part: usize) -> bool {
        self.attach_pair(part)
            .is_some_and(|k| self.pairs[k].status != PairStatus::Open)
    }

    pub fn all_pairs_assembled(&self) -> bool {
        self.assembled_pairs.len() == self.pairs.len()
    }

    /// Ground-truth pose of `part_b` relative to `part_a` for a pair.
    pub fn pair_relative_pose(&self, pair: usize) -> Pose {
        let (a, b) = self.pair_parts(pair);
        relative_pose(&self.parts[a].pose, &self.parts[b].pose)
    }

    fn refresh_status(&mut self, graph: &AssemblyGraph) {
        for i in 0..self.parts.len() {
            let (status, angle) = match self.attach_pair(i) {
                Some(k) if self.pairs[k].status != PairStatus::Open => {
                    let angle = if graph.pairs[k].mechanic == Mechanic::Screw {
                        self.pairs[k].progress
                    } else {
                        0.0
                    };
                    let s = if self.pairs[k].status == PairStatus::Assembled {
                        PartStatus::Assembled
                    } else {
                        PartStatus::Inserted
                    };
                    (s, angle)
                }
                _ if self.ee.held_part == Some(i) => (PartStatus::Grasped, 0.0),
                _ => (PartStatus::Free, 0.0),
            };
            self.parts[i].status = status;
            self.parts[i].screw_angle = angle;
        }
    }
}

/// Validates an initial layout and builds the world with the gripper at home.
pub fn reset_world(graph: &AssemblyGraph, part_poses: &[Pose], seed: u64, cfg: &WorldConfig) -> Result<WorldState> {
    let n = graph.n_parts();
    let mut problems = Vec::new();
    if part_poses.len() != n {
        problems.push(format!("expected {n} part poses, got {}", part_poses.len()));
        return Err(Error::InvalidInitialConfiguration(problems));
    }
    let ws = &cfg.workspace;
    for (i, (spec, pose)) in graph.parts.iter().zip(part_poses).enumerate() {
        if !pose.is_finite() {
            problems.push(format!("{}: non-finite pose", spec.id));
            continue;
        }
        let c = [pose.position.x, pose.position.y];
        if !ws.table.contains_circle(c, spec.footprint) {
            problems.push(format!("{}: outside table bounds", spec.id));
        }
        if ws.obstacle_clearance(c, spec.footprint) < -1e-9 {
            problems.push(format!("{}: intersects the corner obstacle", spec.id));
        }
        for (other, opose) in graph.parts.iter().zip(part_poses).skip(i + 1) {
            let d = [opose.position.x, opose.position.y];
            if circles_overlap(c, spec.footprint - 1e-9, d, other.footprint) {
                problems.push(format!("{}: overlaps {}", spec.id, other.id));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidInitialConfiguration(problems));
    }
    let parts = part_poses
        .iter()
        .map(|&pose| PartState {
            pose,
            status: PartStatus::Free,
            screw_angle: 0.0,
        })
        .collect();
    let pairs = graph
        .pairs
        .iter()
        .map(|_| PairState {
            status: PairStatus::Open,
            progress: 0.0,
        })
        .collect();
    Ok(WorldState {
        tick: 0,
        parts,
        pairs,
        ee: EeState {
            pose: cfg.home,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            gripper_width: cfg.max_gripper_width,
            gripper_closing: false,
            held_part: None,
            grasp_offset: Pose::identity(),
            grasp_yaw_budget: 0.0,
            prev_pose: cfg.home,
        },
        assembled_pairs: BTreeSet::new(),
        seed,
        pending_release: None,
        topology: Topology::new(graph),
    })
}

/// Places the gripper somewhere other than home, at rest and open.
pub fn set_ee_pose(state: &mut WorldState, pose: Pose) {
    state.ee.pose = pose;
    state.ee.prev_pose = pose;
    state.ee.linear_velocity = Vec3::zeros();
    state.ee.angular_velocity = Vec3::zeros();
}

fn clamp_norm(v: Vec3, bound: f64) -> Vec3 {
    let n = v.norm();
    if n > bound {
        v * (bound / n)
    } else {
        v
    }
}

/// Integrates the end-effector plant for one low-level step.
///
/// Semi-implicit Euler on `m v' = f - c v`, `I w' = t - c (I/m) w`; the
/// angular damping is scaled so both channels share one time constant.
#[allow(clippy::too_many_arguments)]
pub fn step_world(
    state: &mut WorldState,
    graph: &AssemblyGraph,
    cfg: &WorldConfig,
    force: &[f64; 6],
    gripper: GripperCommand,
    dt: f64,
    damping: f64,
) {
    let f = clamp_norm(Vec3::new(force[0], force[1], force[2]), cfg.max_force);
    let t = clamp_norm(Vec3::new(force[3], force[4], force[5]), cfg.max_torque);
    let ee = &mut state.ee;
    ee.prev_pose = ee.pose;

    ee.linear_velocity += (f - ee.linear_velocity * damping) * (dt / cfg.mass);
    ee.pose.position += ee.linear_velocity * dt;
    let angular_damping = damping * cfg.inertia / cfg.mass;
    ee.angular_velocity += (t - ee.angular_velocity * angular_damping) * (dt / cfg.inertia);
    ee.pose.orientation = renormalize(&(from_rotation_vector(&(ee.angular_velocity * dt)) * ee.pose.orientation));

    match gripper {
        GripperCommand::Open => {
            ee.gripper_closing = false;
            if let Some(h) = ee.held_part.take() {
                state.pending_release = Some(h);
            }
        }
        GripperCommand::Close => ee.gripper_closing = true,
        GripperCommand::Hold => {}
    }

    if ee.gripper_closing && ee.held_part.is_none() {
        let grip = ee.pose.position;
        let mut best: Option<(usize, f64)> = None;
        for (i, (spec, part)) in graph.parts.iter().zip(&state.parts).enumerate() {
            if spec.graspable_width >= ee.gripper_width {
                continue;
            }
            for gf in &spec.grasp_frames {
                let d = (compose_poses(&part.pose, gf).position - grip).norm();
                if d <= cfg.grasp_radius && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        if let Some((i, _)) = best {
            ee.held_part = Some(i);
            ee.grasp_offset = relative_pose(&ee.pose, &state.parts[i].pose);
            ee.grasp_yaw_budget = cfg.yaw_budget;
        }
    }

    let target_width = if ee.gripper_closing {
        ee.held_part.map_or(0.0, |h| graph.parts[h].graspable_width)
    } else {
        cfg.max_gripper_width
    };
    let slew = cfg.gripper_speed * dt;
    ee.gripper_width += (target_width - ee.gripper_width).clamp(-slew, slew);

    if let Some(h) = ee.held_part {
        let mated = state.topology.attach_pair[h].is_some_and(|k| state.pairs[k].status != PairStatus::Open);
        if !mated {
            state.parts[h].pose = compose_poses(&ee.pose, &ee.grasp_offset);
        }
    }
    state.tick += 1;
}

/// Applies contact-free mechanics after a plant step: mate engagement,
/// screwing and sliding, release settling, wall clamping and propagation of
/// poses down mated chains.
pub fn resolve_mechanics(state: &mut WorldState, graph: &AssemblyGraph, cfg: &WorldConfig) {
    if let Some(h) = state.ee.held_part {
        match state.attach_pair(h) {
            Some(k) => match state.pairs[k].status {
                PairStatus::Open => {
                    try_engage(state, graph, cfg, k);
                    if state.pairs[k].status == PairStatus::Open {
                        clamp_held(state, graph, cfg, h);
                    }
                }
                PairStatus::Inserted => drive_mate(state, graph, k),
                PairStatus::Assembled => lock_to_part(state, h, graph, k),
            },
            None => clamp_held(state, graph, cfg, h),
        }
    }

    if let Some(r) = state.pending_release.take() {
        if !state.is_mated(r) {
            let spec = &graph.parts[r];
            let p = state.parts[r].pose;
            state.parts[r].pose = Pose::planar(p.position.x, p.position.y, spec.rest_height(), yaw_of(&p.orientation));
        }
    }

    for i in 0..state.parts.len() {
        if state.ee.held_part == Some(i) || state.is_mated(i) {
            continue;
        }
        push_out_of_walls(&mut state.parts[i].pose, graph.parts[i].footprint, &cfg.workspace);
    }

    propagate_mates(state, graph);
    state.refresh_status(graph);
}

fn entry_world(state: &WorldState, graph: &AssemblyGraph, pair: usize) -> Pose {
    let (a, _) = state.pair_parts(pair);
    compose_poses(&state.parts[a].pose, &graph.pairs[pair].entry_frame())
}

/// Mate axis (the receiving frame's +z) in world coordinates.
pub fn mate_axis_world(state: &WorldState, graph: &AssemblyGraph, pair: usize) -> Vec3 {
    let (a, _) = state.pair_parts(pair);
    (state.parts[a].pose.orientation * graph.pairs[pair].frame_a.orientation) * Vec3::z()
}

fn prerequisites_met(state: &WorldState, graph: &AssemblyGraph, pair: usize) -> bool {
    graph.pairs[pair]
        .prerequisites
        .iter()
        .all(|p| state.pairs[*p].status == PairStatus::Assembled)
}

/// Whether the held part is positioned to engage its mate this step.
pub fn engagement_check(state: &WorldState, graph: &AssemblyGraph, cfg: &WorldConfig, pair: usize) -> bool {
    let (a, b) = state.pair_parts(pair);
    if state.pairs[pair].status != PairStatus::Open || !prerequisites_met(state, graph, pair) {
        return false;
    }
    // the receiving part must itself be settled or mated, not dangling from the gripper
    if state.ee.held_part == Some(a) {
        return false;
    }
    let entry = entry_world(state, graph, pair);
    let mating = compose_poses(&state.parts[b].pose, &graph.pairs[pair].frame_b);
    let dp = mating.position - entry.position;
    if dp.iter().any(|d| d.abs() >= cfg.insert_position_tolerance) {
        return false;
    }
    if geodesic_angle(&mating.orientation, &entry.orientation) >= cfg.insert_angle_tolerance {
        return false;
    }
    let axis = entry.orientation * Vec3::z();
    let moved = state.ee.pose.position - state.ee.prev_pose.position;
    moved.dot(&-axis) > 0.0
}

fn try_engage(state: &mut WorldState, graph: &AssemblyGraph, cfg: &WorldConfig, pair: usize) {
    if !engagement_check(state, graph, cfg, pair) {
        return;
    }
    let (a, b) = state.pair_parts(pair);
    let spec = &graph.pairs[pair];
    state.parts[b].pose = compose_poses(&state.parts[a].pose, &spec.mated_relative_pose(0.0));
    state.pairs[pair].progress = 0.0;
    if spec.mechanic == Mechanic::Insert {
        state.pairs[pair].status = PairStatus::Assembled;
        state.assembled_pairs.insert(pair);
    } else {
        state.pairs[pair].status = PairStatus::Inserted;
    }
    snap_ee_to_part(state, b);
}

fn snap_ee_to_part(state: &mut WorldState, part: usize) {
    state.ee.pose = compose_poses(&state.parts[part].pose, &state.ee.grasp_offset.inverse());
    state.ee.linear_velocity = Vec3::zeros();
    state.ee.angular_velocity = Vec3::zeros();
}

/// Advances an engaged screw or slide from the gripper's motion this step.
fn drive_mate(state: &mut WorldState, graph: &AssemblyGraph, pair: usize) {
    let (a, b) = state.pair_parts(pair);
    let spec = &graph.pairs[pair];
    let axis = mate_axis_world(state, graph, pair);
    let mut keep_angular = Vec3::zeros();
    let mut keep_linear = Vec3::zeros();
    match spec.mechanic {
        Mechanic::Screw => {
            let delta = state.ee.pose.orientation * state.ee.prev_pose.orientation.inverse();
            let twist = twist_angle(&delta, &axis);
            if twist > 0.0 {
                let gained = twist.min(state.ee.grasp_yaw_budget);
                state.ee.grasp_yaw_budget -= gained;
                state.pairs[pair].progress += gained;
            }
            let w = state.ee.angular_velocity.dot(&axis);
            if w > 0.0 && state.ee.grasp_yaw_budget > 0.0 {
                keep_angular = axis * w;
            }
        }
        Mechanic::Slide => {
            let moved = (state.ee.pose.position - state.ee.prev_pose.position).dot(&-axis);
            if moved > 0.0 {
                state.pairs[pair].progress = (state.pairs[pair].progress + moved).min(spec.travel);
            }
            let v = state.ee.linear_velocity.dot(&-axis);
            if v > 0.0 {
                keep_linear = -axis * v;
            }
        }
        Mechanic::Insert => {}
    }
    if state.pairs[pair].progress >= spec.completion() - 1e-9 {
        state.pairs[pair].progress = spec.completion();
        state.pairs[pair].status = PairStatus::Assembled;
        state.assembled_pairs.insert(pair);
        keep_angular = Vec3::zeros();
        keep_linear = Vec3::zeros();
    }
    state.parts[b].pose = compose_poses(&state.parts[a].pose, &spec.mated_relative_pose(state.pairs[pair].progress));
    snap_ee_to_part(state, b);
    state.ee.linear_velocity = keep_linear;
    state.ee.angular_velocity = keep_angular;
}

fn lock_to_part(state: &mut WorldState, part: usize, graph: &AssemblyGraph, pair: usize) {
    let (a, _) = state.pair_parts(pair);
    let spec = &graph.pairs[pair];
    state.parts[part].pose = compose_poses(&state.parts[a].pose, &spec.mated_relative_pose(state.pairs[pair].progress));
    snap_ee_to_part(state, part);
}

fn push_out_of_walls(pose: &mut Pose, radius: f64, ws: &Workspace) -> Vec3 {
    let mut total = Vec3::zeros();
    for wall in &ws.walls {
        let c = [pose.position.x, pose.position.y];
        if let Some(d) = wall.circle_push_out(c, radius) {
            pose.position.x += d[0];
            pose.position.y += d[1];
            total += Vec3::new(d[0], d[1], 0.0);
        }
    }
    total
}

/// Keeps a carried part above the table and out of the walls, dragging the
/// gripper back with it and cancelling the offending velocity.
fn clamp_held(state: &mut WorldState, graph: &AssemblyGraph, cfg: &WorldConfig, part: usize) {
    let spec = &graph.parts[part];
    let mut pose = state.parts[part].pose;
    let mut shift = Vec3::zeros();
    let bottom = pose.position.z - spec.height / 2.0;
    if bottom < 0.0 {
        pose.position.z -= bottom;
        shift.z -= bottom;
    }
    if pose.position.z - spec.height / 2.0 < cfg.workspace.wall_height {
        shift += push_out_of_walls(&mut pose, spec.footprint, &cfg.workspace);
    }
    if shift == Vec3::zeros() {
        return;
    }
    state.parts[part].pose = pose;
    state.ee.pose.position += shift;
    let n = shift.normalize();
    let v = state.ee.linear_velocity.dot(&n);
    if v < 0.0 {
        state.ee.linear_velocity -= n * v;
    }
}

fn propagate_mates(state: &mut WorldState, graph: &AssemblyGraph) {
    for idx in 0..state.topology.pair_order.len() {
        let k = state.topology.pair_order[idx];
        if state.pairs[k].status == PairStatus::Open {
            continue;
        }
        let (a, b) = state.topology.pair_parts[k];
        state.parts[b].pose = compose_poses(
            &state.parts[a].pose,
            &graph.pairs[k].mated_relative_pose(state.pairs[k].progress),
        );
    }
    if let Some(h) = state.ee.held_part {
        if state.is_mated(h) {
            let ee = compose_poses(&state.parts[h].pose, &state.ee.grasp_offset.inverse());
            state.ee.pose = ee;
        }
    }
}

/// Yaw of a part about world z; convenience for planar tooling.
pub fn part_yaw(state: &WorldState, part: usize) -> f64 {
    yaw_of(&state.parts[part].pose.orientation)
}

/// Resting pose of a part at a planar location.
pub fn resting_pose(graph: &AssemblyGraph, part: usize, x: f64, y: f64, yaw: f64) -> Pose {
    Pose::new(Vec3::new(x, y, graph.parts[part].rest_height()), rot_z(yaw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_furniture;
    use crate::geometry::rot_axis;

    fn one_leg_world() -> (AssemblyGraph, WorldState, WorldConfig) {
        let g = load_furniture("one_leg").unwrap();
        let cfg = WorldConfig::default();
        let w = reset_world(&g, &g.base_poses, 0, &cfg).unwrap();
        (g, w, cfg)
    }

    #[test]
    fn reset_starts_clean() {
        let (g, w, cfg) = one_leg_world();
        assert_eq!(w.tick, 0);
        assert!(w.assembled_pairs.is_empty());
        assert_eq!(w.ee.pose, cfg.home);
        assert!(w.parts.iter().all(|p| p.status == PartStatus::Free));
        assert_eq!(w.parts.len(), g.n_parts());
    }

    #[test]
    fn reset_rejects_overlap_and_bounds() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = WorldConfig::default();
        let same = vec![g.base_poses[0]; 2];
        match reset_world(&g, &same, 0, &cfg) {
            Err(Error::InvalidInitialConfiguration(p)) => assert!(p.iter().any(|m| m.contains("overlaps"))),
            other => panic!("{other:?}"),
        }
        let mut out = g.base_poses.clone();
        out[1] = resting_pose(&g, 1, 0.9, 0.0, 0.0);
        match reset_world(&g, &out, 0, &cfg) {
            Err(Error::InvalidInitialConfiguration(p)) => assert!(p[0].starts_with("leg")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_force_keeps_pose() {
        let (g, mut w, cfg) = one_leg_world();
        let before = w.ee.pose;
        for _ in 0..10 {
            step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Hold, 1e-3, 2.0);
        }
        assert_eq!(w.ee.pose, before);
        assert_eq!(w.tick, 10);
    }

    #[test]
    fn constant_force_matches_recurrence_closed_form() {
        let (g, mut w, cfg) = one_leg_world();
        let (f, c, m, dt) = (3.0, 2.0, cfg.mass, 1e-3);
        let k = 250;
        let x0 = w.ee.pose.position.x;
        for _ in 0..k {
            step_world(&mut w, &g, &cfg, &[f, 0.0, 0.0, 0.0, 0.0, 0.0], GripperCommand::Hold, dt, c);
        }
        // v_j = (f/c)(1 - r^j), x_k = dt * sum_{j=1..k} v_j with r = 1 - c dt / m
        let r: f64 = 1.0 - c * dt / m;
        let kf = k as f64;
        let expected = dt * (f / c) * (kf - r * (1.0 - r.powi(k)) / (1.0 - r));
        assert!((w.ee.pose.position.x - x0 - expected).abs() < 1e-12);
        // and it stays close to the continuous-time solution
        let t = kf * dt;
        let continuous = (f / c) * (t - (m / c) * (1.0 - (-c * t / m).exp()));
        // first-order scheme: relative gap shrinks like 1/k
        assert!((expected - continuous).abs() < 2.0 / kf * continuous);
    }

    #[test]
    fn force_is_clamped() {
        let (g, mut w, cfg) = one_leg_world();
        step_world(&mut w, &g, &cfg, &[1e9, 0.0, 0.0, 0.0, 0.0, 0.0], GripperCommand::Hold, 1e-3, 0.0);
        assert!((w.ee.linear_velocity.x - cfg.max_force * 1e-3).abs() < 1e-9);
    }

    fn place_ee_at_grasp(w: &mut WorldState, g: &AssemblyGraph, part: usize) {
        let gp = compose_poses(&w.parts[part].pose, &g.parts[part].grasp_frames[0]);
        set_ee_pose(w, gp);
    }

    #[test]
    fn close_near_grasp_frame_attaches() {
        let (g, mut w, cfg) = one_leg_world();
        place_ee_at_grasp(&mut w, &g, 1);
        w.ee.pose.position.x += 0.015;
        w.ee.prev_pose = w.ee.pose;
        step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Close, 1e-3, 2.0);
        assert_eq!(w.ee.held_part, Some(1));
        assert!((w.ee.grasp_yaw_budget - FRAC_PI_2).abs() < 1e-15);

        let (g, mut w, cfg) = one_leg_world();
        place_ee_at_grasp(&mut w, &g, 1);
        w.ee.pose.position.x += 0.025;
        step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Close, 1e-3, 2.0);
        assert_eq!(w.ee.held_part, None);
    }

    fn hold(w: &mut WorldState, g: &AssemblyGraph, cfg: &WorldConfig, part: usize) {
        place_ee_at_grasp(w, g, part);
        step_world(w, g, cfg, &[0.0; 6], GripperCommand::Close, 1e-3, 2.0);
        resolve_mechanics(w, g, cfg);
        assert_eq!(w.ee.held_part, Some(part));
    }

    /// Moves the gripper by a rigid increment, as the plant would.
    fn nudge(w: &mut WorldState, g: &AssemblyGraph, cfg: &WorldConfig, dp: Vec3, dq: crate::geometry::Quat) {
        w.ee.prev_pose = w.ee.pose;
        w.ee.pose.position += dp;
        w.ee.pose.orientation = dq * w.ee.pose.orientation;
        if let Some(h) = w.ee.held_part {
            if !w.is_mated(h) {
                w.parts[h].pose = compose_poses(&w.ee.pose, &w.ee.grasp_offset);
            }
        }
        resolve_mechanics(w, g, cfg);
    }

    /// Carries the leg so its mating frame sits `above` meters over the
    /// engagement point, with an extra tilt about world x.
    fn present_leg(w: &mut WorldState, g: &AssemblyGraph, cfg: &WorldConfig, above: f64, tilt: f64) {
        hold(w, g, cfg, 1);
        let pair = &g.pairs[0];
        let entry = compose_poses(&w.parts[0].pose, &pair.entry_frame());
        let mut target = compose_poses(&entry, &pair.frame_b.inverse());
        target.position.z += above;
        target.orientation = rot_x(tilt) * target.orientation;
        let ee = compose_poses(&target, &w.ee.grasp_offset.inverse());
        set_ee_pose(w, ee);
        w.parts[1].pose = target;
    }

    #[test]
    fn aligned_downward_push_engages() {
        let (g, mut w, cfg) = one_leg_world();
        present_leg(&mut w, &g, &cfg, 0.012, 0.0);
        for _ in 0..5 {
            nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, -0.002), crate::geometry::Quat::identity());
        }
        assert_eq!(w.pairs[0].status, PairStatus::Inserted);
        assert_eq!(w.parts[1].status, PartStatus::Inserted);
        let expected = compose_poses(&w.parts[0].pose, &g.pairs[0].mated_relative_pose(0.0));
        assert!((w.parts[1].pose.position - expected.position).norm() < 1e-12);
    }

    #[test]
    fn tilted_push_does_not_engage() {
        let (g, mut w, cfg) = one_leg_world();
        present_leg(&mut w, &g, &cfg, 0.012, 20f64.to_radians());
        for _ in 0..5 {
            nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, -0.002), crate::geometry::Quat::identity());
        }
        assert_eq!(w.pairs[0].status, PairStatus::Open);
    }

    #[test]
    fn upward_motion_does_not_engage() {
        let (g, mut w, cfg) = one_leg_world();
        present_leg(&mut w, &g, &cfg, -0.004, 0.0);
        nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, 0.001), crate::geometry::Quat::identity());
        assert_eq!(w.pairs[0].status, PairStatus::Open);
    }

    #[test]
    fn screw_needs_six_quarter_turns() {
        let (g, mut w, cfg) = one_leg_world();
        present_leg(&mut w, &g, &cfg, 0.005, 0.0);
        nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, -0.002), crate::geometry::Quat::identity());
        assert_eq!(w.pairs[0].status, PairStatus::Inserted);
        let axis = Vec3::z();
        let mut grasps = 1;
        let mut last = 0.0;
        while w.pairs[0].status != PairStatus::Assembled {
            // turn well past the budget in small increments
            for _ in 0..60 {
                nudge(&mut w, &g, &cfg, Vec3::zeros(), rot_axis(&axis, 2f64.to_radians()));
                assert!(w.pairs[0].progress >= last);
                last = w.pairs[0].progress;
            }
            if w.pairs[0].status == PairStatus::Assembled {
                break;
            }
            assert!(w.ee.grasp_yaw_budget.abs() < 1e-12);
            // regrasp
            step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Open, 1e-3, 2.0);
            resolve_mechanics(&mut w, &g, &cfg);
            assert_eq!(w.parts[1].status, PartStatus::Inserted);
            w.ee.gripper_width = cfg.max_gripper_width;
            step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Close, 1e-3, 2.0);
            resolve_mechanics(&mut w, &g, &cfg);
            assert_eq!(w.ee.held_part, Some(1));
            grasps += 1;
        }
        assert_eq!(grasps, 6);
        assert!(w.assembled_pairs.contains(&0));
        let rel = w.pair_relative_pose(0);
        assert!((rel.position - g.pairs[0].gt_relative_pose.position).norm() < 1e-9);
        assert!(geodesic_angle(&rel.orientation, &g.pairs[0].gt_relative_pose.orientation) < 1e-9);
    }

    #[test]
    fn reverse_rotation_does_not_unscrew() {
        let (g, mut w, cfg) = one_leg_world();
        present_leg(&mut w, &g, &cfg, 0.005, 0.0);
        nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, -0.002), crate::geometry::Quat::identity());
        nudge(&mut w, &g, &cfg, Vec3::zeros(), rot_z(0.3));
        let p = w.pairs[0].progress;
        nudge(&mut w, &g, &cfg, Vec3::zeros(), rot_z(-0.2));
        assert_eq!(w.pairs[0].progress, p);
    }

    #[test]
    fn held_part_is_clamped_at_wall_face() {
        let (g, mut w, cfg) = one_leg_world();
        hold(&mut w, &g, &cfg, 1);
        let r = g.parts[1].footprint;
        let start = resting_pose(&g, 1, 0.20, 0.15, 0.0);
        let ee = compose_poses(&start, &w.ee.grasp_offset.inverse());
        set_ee_pose(&mut w, ee);
        w.parts[1].pose = start;
        for _ in 0..40 {
            nudge(&mut w, &g, &cfg, Vec3::new(0.005, 0.0, 0.0), crate::geometry::Quat::identity());
        }
        let x = w.parts[1].pose.position.x;
        assert!((x - (cfg.workspace.walls[0].min[0] - r)).abs() < 1e-12, "x = {x}");
    }

    #[test]
    fn free_part_projected_out_of_wall() {
        let (g, mut w, cfg) = one_leg_world();
        w.parts[1].pose = resting_pose(&g, 1, 0.255, 0.15, 0.0);
        resolve_mechanics(&mut w, &g, &cfg);
        let x = w.parts[1].pose.position.x;
        assert!((x - (0.26 - g.parts[1].footprint)).abs() < 1e-12);
    }

    #[test]
    fn release_settles_to_table() {
        let (g, mut w, cfg) = one_leg_world();
        hold(&mut w, &g, &cfg, 1);
        nudge(&mut w, &g, &cfg, Vec3::new(0.0, 0.0, 0.05), rot_x(0.1));
        step_world(&mut w, &g, &cfg, &[0.0; 6], GripperCommand::Open, 1e-3, 2.0);
        resolve_mechanics(&mut w, &g, &cfg);
        let p = w.parts[1].pose;
        assert_eq!(w.ee.held_part, None);
        assert!((p.position.z - g.parts[1].rest_height()).abs() < 1e-15);
        assert!((p.orientation * Vec3::z() - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn held_part_stays_rigid() {
        let (g, mut w, cfg) = one_leg_world();
        hold(&mut w, &g, &cfg, 0);
        let rel0 = relative_pose(&w.ee.pose, &w.parts[0].pose);
        for i in 0..200 {
            let f = [5.0 * (i as f64 * 0.1).sin(), 3.0, 40.0, 0.1, -0.05, 0.2];
            step_world(&mut w, &g, &cfg, &f, GripperCommand::Hold, 1e-3, 2.0);
            resolve_mechanics(&mut w, &g, &cfg);
            let rel = relative_pose(&w.ee.pose, &w.parts[0].pose);
            assert!((rel.position - rel0.position).norm() < 1e-9);
            assert!(geodesic_angle(&rel.orientation, &rel0.orientation) < 1e-9);
        }
    }
}
