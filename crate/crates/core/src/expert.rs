//! Scripted expert: a reactive waypoint machine driven by the furniture's
//! phase list and the exact world state.

use serde::{Deserialize, Serialize};

use crate::catalog::{AssemblyGraph, Mechanic, PhasePredicate};
use crate::controller::Action;
use crate::env::{Env, Observation, Policy};
use crate::geometry::{compose_poses, geodesic_angle, rot_axis, rot_z, yaw_of, Pose, Quat, Vec3};
use crate::workspace::Workspace;
use crate::world::{mate_axis_world, PairStatus, WorldState};

/// Bottom height of a carried part while in transit, above the corner walls.
const CARRY_BOTTOM: f64 = 0.095;
const HOVER_ABOVE_GRASP: f64 = 0.05;
const HOVER_ALONG_AXIS: f64 = 0.03;
const PUSH_PAST_ENTRY: f64 = 0.01;
const PLACE_CLEARANCE: f64 = 0.003;
const CORNER_MARGIN: f64 = 0.002;
const SCREW_STEP: f64 = std::f64::consts::FRAC_PI_6;
const SLIDE_STEP: f64 = 0.02;
const MAX_STEP: f64 = 0.10;
const POS_TOL: f64 = 0.0015;
const ANG_TOL: f64 = 1.0 * std::f64::consts::PI / 180.0;
const OPEN: f64 = -1.0;
const CLOSE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Approach,
    Grasp,
    Lift,
    Transport,
    Align,
    InsertPush,
    ScrewQuarter,
    Regrasp,
    Release,
    PushToCorner,
    Slide,
    Idle,
}

/// Screw progress gained per grasp for one pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScrewLog {
    pub pair: usize,
    /// Radians turned during each grasp.
    pub segments: Vec<f64>,
    pub regrasps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertTranscript {
    pub primitives: Vec<Primitive>,
    pub screws: Vec<ScrewLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Start,
    // grasping
    Hover,
    Descend,
    Close(u32),
    // carrying
    Lift,
    Carry,
    Lower,
    // mating
    Above,
    AtHover,
    Push,
    // screwing
    Turn,
    RegraspOpen,
    RegraspRotate(Quat),
    RegraspClose(u32),
}

#[derive(Debug, Clone)]
struct ActiveScrew {
    pair: usize,
    start: f64,
}

/// Expert policy for any catalog model whose phases follow the standard
/// grasp, place, insert, screw/slide pattern.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    key: Option<(usize, Option<usize>)>,
    stage: Stage,
    screw: Option<ActiveScrew>,
    push_attempts: u32,
    pub transcript: ExpertTranscript,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        Self::new()
    }
}

struct Ctx<'a> {
    w: &'a WorldState,
    g: &'a AssemblyGraph,
    ws: &'a Workspace,
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Delta action from the current EE pose toward `target`.
fn move_to(ee: &Pose, target: &Pose, gripper: f64) -> Action {
    let dp = clamp_norm(target.position - ee.position, MAX_STEP);
    let dq = ee.orientation.inverse() * target.orientation;
    Action::translate(dp.x, dp.y, dp.z).with_rotation(&dq).with_gripper(gripper)
}

fn reached(ee: &Pose, target: &Pose) -> bool {
    (ee.position - target.position).norm() < POS_TOL && geodesic_angle(&ee.orientation, &target.orientation) < ANG_TOL
}

fn hold_still(gripper: f64) -> Action {
    Action::zero().with_gripper(gripper)
}

impl ScriptedExpert {
    pub fn new() -> Self {
        ScriptedExpert {
            key: None,
            stage: Stage::Start,
            screw: None,
            push_attempts: 0,
            transcript: ExpertTranscript::default(),
        }
    }

    /// Next action for the given world state and phase count.
    pub fn next_action(&mut self, w: &WorldState, g: &AssemblyGraph, ws: &Workspace, phases_completed: usize) -> Action {
        self.finish_screw_log(w, g);
        let key = (phases_completed, w.ee.held_part);
        if self.key != Some(key) {
            self.key = Some(key);
            if !matches!(self.stage, Stage::RegraspOpen | Stage::RegraspRotate(_) | Stage::RegraspClose(_)) {
                self.stage = Stage::Start;
            }
            self.push_attempts = 0;
        }
        let c = Ctx { w, g, ws };
        let (prim, action) = match g.phases.get(phases_completed).map(|p| &p.predicate) {
            None => self.finish(&c),
            Some(PhasePredicate::PartGrasped { part }) => {
                let i = g.part_index(part).expect("phase part exists");
                self.grasp(&c, i)
            }
            Some(PhasePredicate::PartPlaced { part, target, .. }) => {
                let i = g.part_index(part).expect("phase part exists");
                self.place(&c, i, *target)
            }
            Some(PhasePredicate::PairInserted { pair }) => self.insert(&c, *pair),
            Some(PhasePredicate::PairAssembled { pair }) => match (g.pairs[*pair].mechanic, w.pairs[*pair].status) {
                (_, PairStatus::Open) => self.insert(&c, *pair),
                (Mechanic::Screw, _) => self.screw_turn(&c, *pair),
                (Mechanic::Slide, _) => self.slide(&c, *pair),
                (Mechanic::Insert, _) => (Primitive::Idle, Action::zero()),
            },
        };
        self.transcript.primitives.push(prim);
        action
    }

    fn finish_screw_log(&mut self, w: &WorldState, g: &AssemblyGraph) {
        if let Some(s) = &self.screw {
            if w.pairs[s.pair].status == PairStatus::Assembled {
                let total = g.pairs[s.pair].completion();
                let pair = s.pair;
                let seg = total - s.start;
                self.log(pair).segments.push(seg);
                self.screw = None;
            }
        }
    }

    fn log(&mut self, pair: usize) -> &mut ScrewLog {
        if let Some(i) = self.transcript.screws.iter().position(|l| l.pair == pair) {
            return &mut self.transcript.screws[i];
        }
        self.transcript.screws.push(ScrewLog {
            pair,
            ..ScrewLog::default()
        });
        self.transcript.screws.last_mut().unwrap()
    }

    /// Open the gripper and back away when something else is held.
    fn release_held(&mut self) -> (Primitive, Action) {
        self.stage = Stage::Start;
        (Primitive::Release, hold_still(OPEN))
    }

    fn grasp(&mut self, c: &Ctx, part: usize) -> (Primitive, Action) {
        let ee = c.w.ee.pose;
        if c.w.ee.held_part.is_some_and(|h| h != part) {
            return self.release_held();
        }
        let gp = compose_poses(&c.w.parts[part].pose, &c.g.parts[part].grasp_frames[0]);
        let mut hover = gp;
        hover.position.z += HOVER_ABOVE_GRASP;
        loop {
            match self.stage {
                Stage::Hover | Stage::Start => {
                    self.stage = Stage::Hover;
                    let xy = ((ee.position.x - gp.position.x).powi(2) + (ee.position.y - gp.position.y).powi(2)).sqrt();
                    if xy > 0.01 && ee.position.z < hover.position.z - 0.005 {
                        // rise first so the fingers do not sweep low across the table
                        let mut up = ee;
                        up.position.z = hover.position.z;
                        return (Primitive::Approach, move_to(&ee, &up, OPEN));
                    }
                    if reached(&ee, &hover) {
                        self.stage = Stage::Descend;
                        continue;
                    }
                    return (Primitive::Approach, move_to(&ee, &hover, OPEN));
                }
                Stage::Descend => {
                    if (ee.position - gp.position).norm() < POS_TOL {
                        self.stage = Stage::Close(0);
                        continue;
                    }
                    return (Primitive::Approach, move_to(&ee, &gp, OPEN));
                }
                Stage::Close(n) => {
                    if n >= 3 {
                        self.stage = Stage::Hover;
                        return (Primitive::Grasp, hold_still(OPEN));
                    }
                    self.stage = Stage::Close(n + 1);
                    return (Primitive::Grasp, move_to(&ee, &gp, CLOSE));
                }
                _ => self.stage = Stage::Hover,
            }
        }
    }

    /// EE pose that puts the held part at `part_target`.
    fn ee_for_part(c: &Ctx, part_target: &Pose) -> Pose {
        compose_poses(part_target, &c.w.ee.grasp_offset.inverse())
    }

    fn carry_z(c: &Ctx, part: usize) -> f64 {
        CARRY_BOTTOM + c.g.parts[part].height / 2.0
    }

    fn place(&mut self, c: &Ctx, part: usize, target: [f64; 2]) -> (Primitive, Action) {
        if c.w.ee.held_part != Some(part) {
            return self.grasp(c, part);
        }
        let ee = c.w.ee.pose;
        let p = c.w.parts[part].pose;
        let spec = &c.g.parts[part];
        let ws = c.ws;
        let mut goal = target;
        // keep a small gap to the corner walls
        let corner = [ws.walls[0].min[0], ws.walls[1].min[1]];
        let away = Vec3::new(target[0] - corner[0], target[1] - corner[1], 0.0);
        if away.norm() > 1e-9 {
            let a = away.normalize() * CORNER_MARGIN * std::f64::consts::SQRT_2;
            goal = [target[0] + a.x, target[1] + a.y];
        }
        let carry = Self::carry_z(c, part);
        // settle in the catalog's reference yaw so mates face open space
        let upright = rot_z(yaw_of(&c.g.base_poses[part].orientation));
        let at = |x: f64, y: f64, z: f64, q: Quat| Self::ee_for_part(c, &Pose::new(Vec3::new(x, y, z), q));
        let xy_err = ((p.position.x - goal[0]).powi(2) + (p.position.y - goal[1]).powi(2)).sqrt();
        loop {
            match self.stage {
                Stage::Start | Stage::Hover | Stage::Descend | Stage::Close(_) => {
                    self.stage = if xy_err < 0.003 { Stage::Lower } else { Stage::Lift };
                }
                Stage::Lift => {
                    if (p.position.z - carry).abs() < 0.002 {
                        self.stage = Stage::Carry;
                        continue;
                    }
                    let t = at(p.position.x, p.position.y, carry, p.orientation);
                    return (Primitive::Lift, move_to(&ee, &t, CLOSE));
                }
                Stage::Carry => {
                    let t = at(goal[0], goal[1], carry, upright);
                    if reached(&ee, &t) {
                        self.stage = Stage::Lower;
                        continue;
                    }
                    return (Primitive::PushToCorner, move_to(&ee, &t, CLOSE));
                }
                Stage::Lower => {
                    let t = at(goal[0], goal[1], spec.rest_height() + PLACE_CLEARANCE, upright);
                    if reached(&ee, &t) {
                        return (Primitive::Release, hold_still(OPEN));
                    }
                    return (Primitive::Transport, move_to(&ee, &t, CLOSE));
                }
                _ => self.stage = Stage::Start,
            }
        }
    }

    /// Part pose whose mating frame sits `s` meters out along the mate axis
    /// from the entry frame.
    fn part_at_axis_offset(c: &Ctx, pair: usize, s: f64) -> Pose {
        let spec = &c.g.pairs[pair];
        let (a, _) = c.g.pair_parts(pair);
        let entry = compose_poses(&c.w.parts[a].pose, &spec.entry_frame());
        let axis = entry.orientation * Vec3::z();
        let mate = Pose::new(entry.position + axis * s, entry.orientation);
        compose_poses(&mate, &spec.frame_b.inverse())
    }

    fn insert(&mut self, c: &Ctx, pair: usize) -> (Primitive, Action) {
        let (_, b) = c.g.pair_parts(pair);
        if c.w.ee.held_part != Some(b) {
            return self.grasp(c, b);
        }
        let ee = c.w.ee.pose;
        let p = c.w.parts[b].pose;
        let hover_part = Self::part_at_axis_offset(c, pair, HOVER_ALONG_AXIS);
        let mut above_part = hover_part;
        above_part.position.z = above_part.position.z.max(Self::carry_z(c, b));
        let hover = Self::ee_for_part(c, &hover_part);
        let above = Self::ee_for_part(c, &above_part);
        loop {
            match self.stage {
                Stage::Start | Stage::Hover | Stage::Descend | Stage::Close(_) | Stage::Lift => {
                    self.stage = Stage::Lift;
                    let xy = ((p.position.x - above_part.position.x).powi(2)
                        + (p.position.y - above_part.position.y).powi(2))
                    .sqrt();
                    if xy > 0.01 && p.position.z < above_part.position.z - 0.005 {
                        let mut t = ee;
                        t.position.z += above_part.position.z - p.position.z;
                        return (Primitive::Lift, move_to(&ee, &t, CLOSE));
                    }
                    self.stage = Stage::Above;
                }
                Stage::Above => {
                    if reached(&ee, &above) {
                        self.stage = Stage::AtHover;
                        continue;
                    }
                    return (Primitive::Transport, move_to(&ee, &above, CLOSE));
                }
                Stage::AtHover => {
                    if reached(&ee, &hover) {
                        self.stage = Stage::Push;
                        continue;
                    }
                    return (Primitive::Align, move_to(&ee, &hover, CLOSE));
                }
                Stage::Push => {
                    let push = Self::ee_for_part(c, &Self::part_at_axis_offset(c, pair, -PUSH_PAST_ENTRY));
                    if reached(&ee, &push) {
                        // the mate did not catch; back off and retry
                        self.push_attempts += 1;
                        self.stage = Stage::AtHover;
                        continue;
                    }
                    return (Primitive::InsertPush, move_to(&ee, &push, CLOSE));
                }
                _ => self.stage = Stage::Start,
            }
        }
    }

    fn screw_turn(&mut self, c: &Ctx, pair: usize) -> (Primitive, Action) {
        let (_, b) = c.g.pair_parts(pair);
        let ee = c.w.ee.pose;
        let axis = mate_axis_world(c.w, c.g, pair);
        let progress = c.w.pairs[pair].progress;
        loop {
            match self.stage {
                Stage::RegraspOpen => {
                    if c.w.ee.held_part.is_some() {
                        return (Primitive::Regrasp, hold_still(OPEN));
                    }
                    // unwind the wrist by the turn just made
                    let back = rot_axis(&axis, -std::f64::consts::FRAC_PI_2) * ee.orientation;
                    self.stage = Stage::RegraspRotate(back);
                }
                Stage::RegraspRotate(q) => {
                    let t = Pose::new(ee.position, q);
                    if reached(&ee, &t) {
                        self.stage = Stage::RegraspClose(0);
                        continue;
                    }
                    return (Primitive::Regrasp, move_to(&ee, &t, OPEN));
                }
                Stage::RegraspClose(n) => {
                    if c.w.ee.held_part == Some(b) {
                        self.log(pair).regrasps += 1;
                        self.stage = Stage::Turn;
                        continue;
                    }
                    if n >= 3 {
                        self.stage = Stage::Start;
                        continue;
                    }
                    self.stage = Stage::RegraspClose(n + 1);
                    return (Primitive::Regrasp, hold_still(CLOSE));
                }
                Stage::Turn => {
                    if c.w.ee.held_part != Some(b) {
                        self.stage = Stage::Start;
                        continue;
                    }
                    if c.w.ee.grasp_yaw_budget > 1e-9 {
                        let goal = rot_axis(&axis, SCREW_STEP) * ee.orientation;
                        return (Primitive::ScrewQuarter, move_to(&ee, &Pose::new(ee.position, goal), CLOSE));
                    }
                    if let Some(s) = self.screw.take() {
                        self.log(pair).segments.push(progress - s.start);
                    }
                    // the thread cannot turn while released, so the next
                    // segment starts here
                    self.screw = Some(ActiveScrew { pair, start: progress });
                    self.stage = Stage::RegraspOpen;
                }
                _ => {
                    if c.w.ee.held_part == Some(b) {
                        if self.screw.as_ref().is_none_or(|s| s.pair != pair) {
                            self.screw = Some(ActiveScrew { pair, start: progress });
                        }
                        self.stage = Stage::Turn;
                        continue;
                    }
                    // lost the grip somehow: take hold again from above
                    return self.grasp(c, b);
                }
            }
        }
    }

    fn slide(&mut self, c: &Ctx, pair: usize) -> (Primitive, Action) {
        let (_, b) = c.g.pair_parts(pair);
        if c.w.ee.held_part != Some(b) {
            return self.grasp(c, b);
        }
        let ee = c.w.ee.pose;
        let axis = mate_axis_world(c.w, c.g, pair);
        let remaining = c.g.pairs[pair].travel - c.w.pairs[pair].progress;
        let mut t = ee;
        t.position -= axis * (remaining + 0.005).min(SLIDE_STEP);
        (Primitive::Slide, move_to(&ee, &t, CLOSE))
    }

    fn finish(&mut self, c: &Ctx) -> (Primitive, Action) {
        if c.w.ee.held_part.is_some() {
            return self.release_held();
        }
        let ee = c.w.ee.pose;
        if ee.position.z < 0.15 - POS_TOL {
            let mut t = ee;
            t.position.z = 0.15;
            return (Primitive::Lift, move_to(&ee, &t, OPEN));
        }
        (Primitive::Idle, Action::zero())
    }
}

impl Policy for ScriptedExpert {
    fn reset(&mut self, _env: &Env) {
        *self = ScriptedExpert::new();
    }

    fn finish(&mut self, env: &Env) {
        if let Ok(w) = env.world() {
            self.finish_screw_log(w, env.graph());
        }
    }

    fn act(&mut self, _obs: &Observation, env: &Env) -> Result<Action, String> {
        let w = env.world().map_err(|e| e.to_string())?;
        let phases = env.phase().map_err(|e| e.to_string())?.completed;
        Ok(self.next_action(w, env.graph(), &env.config().world.workspace, phases))
    }
}
