//! Furniture models as assembly graphs.
//!
//! Geometry is reduced to a bounding circle (footprint) and height per part,
//! plus named frames: grasp frames, fiducial marker mounts and the mating
//! frames of each assembly pair. Parts rest upright; a part's frame origin is
//! its center of mass, so a resting part sits at `z = height / 2`.
//!
//! A pair couples `part_a` (the receiving part) with `part_b` (the part that
//! is moved in). The pair is assembled when `part_a ∘ frame_a` coincides with
//! `part_b ∘ frame_b`, so the ground-truth relative pose of `part_b` in
//! `part_a`'s frame is `frame_a ∘ frame_b⁻¹`.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_poses, geodesic_angle, rot_x, rot_y, Pose, Vec3};
use crate::workspace::Workspace;

pub const CATALOG_FORMAT_VERSION: u32 = 1;

/// Total wrist rotation needed to drive a screw home (540°).
pub const SCREW_COMPLETION_ANGLE: f64 = 3.0 * PI;

pub const BUILTIN_FURNITURE: [&str; 9] = [
    "one_leg",
    "lamp",
    "square_table",
    "desk",
    "drawer",
    "cabinet",
    "round_table",
    "stool",
    "chair",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSpec {
    pub marker_id: u32,
    /// Marker frame in the part frame; the marker faces along its local +z.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub id: String,
    /// Bounding-circle radius in the table plane.
    pub footprint: f64,
    pub height: f64,
    pub graspable_width: f64,
    pub grasp_frames: Vec<Pose>,
    pub marker_specs: Vec<MarkerSpec>,
}

impl PartSpec {
    /// Height of the part origin when resting on the table.
    pub fn rest_height(&self) -> f64 {
        self.height / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanic {
    Insert,
    Screw,
    Slide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub part_a: String,
    pub frame_a: Pose,
    pub part_b: String,
    pub frame_b: Pose,
    pub mechanic: Mechanic,
    pub gt_relative_pose: Pose,
    /// Axial distance along `frame_a`'s +z at which the mate engages:
    /// thread length for screws, rail length for slides, 0 for plain inserts.
    pub travel: f64,
    /// Pairs that must be assembled before this one can engage.
    #[serde(default)]
    pub prerequisites: Vec<usize>,
}

impl PairSpec {
    /// Relative pose of `part_b` in `part_a`'s frame given mate progress.
    ///
    /// `progress` is the accrued screw angle for screws, the slid distance for
    /// slides and ignored for inserts.
    pub fn mated_relative_pose(&self, progress: f64) -> Pose {
        let (axial, twist) = match self.mechanic {
            Mechanic::Insert => (0.0, 0.0),
            Mechanic::Screw => {
                let frac = (progress / SCREW_COMPLETION_ANGLE).clamp(0.0, 1.0);
                (self.travel * (1.0 - frac), progress.min(SCREW_COMPLETION_ANGLE) - SCREW_COMPLETION_ANGLE)
            }
            Mechanic::Slide => ((self.travel - progress).max(0.0), 0.0),
        };
        let lift = Pose::new(Vec3::new(0.0, 0.0, axial), crate::geometry::rot_z(twist));
        compose_poses(&compose_poses(&self.frame_a, &lift), &self.frame_b.inverse())
    }

    /// Pose (in `part_a`'s frame) that `part_b`'s mating frame must reach to engage.
    pub fn entry_frame(&self) -> Pose {
        compose_poses(&self.mated_relative_pose(0.0), &self.frame_b)
    }

    /// Progress at which the pair counts as assembled.
    pub fn completion(&self) -> f64 {
        match self.mechanic {
            Mechanic::Insert => 0.0,
            Mechanic::Screw => SCREW_COMPLETION_ANGLE,
            Mechanic::Slide => self.travel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhasePredicate {
    /// The part is held by the gripper.
    PartGrasped { part: String },
    /// The part rests near a planar target (yaw ignored).
    PartPlaced {
        part: String,
        target: [f64; 2],
        tolerance: f64,
        released: bool,
    },
    /// The pair's mate has engaged (inserted or further).
    PairInserted { pair: usize },
    PairAssembled { pair: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    pub predicate: PhasePredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillStart {
    pub name: String,
    pub part_poses: Vec<Pose>,
    pub ee_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyGraph {
    pub format_version: u32,
    pub furniture_id: String,
    pub parts: Vec<PartSpec>,
    pub pairs: Vec<PairSpec>,
    pub phases: Vec<PhaseSpec>,
    /// Canonical low-randomness initial poses, one per part.
    pub base_poses: Vec<Pose>,
    /// Three fixed configurations used for high-randomness evaluation.
    pub high_eval_poses: Vec<Vec<Pose>>,
    /// Reference start states of the first skills.
    pub skill_starts: Vec<SkillStart>,
}

impl AssemblyGraph {
    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn max_reward(&self) -> usize {
        self.parts.len() - 1
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn part_index(&self, id: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.id == id)
    }

    /// Part indices `(a, b)` of a pair. Panics on an unvalidated graph.
    pub fn pair_parts(&self, pair: usize) -> (usize, usize) {
        let p = &self.pairs[pair];
        (
            self.part_index(&p.part_a).expect("validated pair"),
            self.part_index(&p.part_b).expect("validated pair"),
        )
    }

    /// The pair in which `part` is the moving member, if any.
    pub fn pair_attaching(&self, part: usize) -> Option<usize> {
        let id = &self.parts[part].id;
        self.pairs.iter().position(|p| &p.part_b == id)
    }

    pub fn marker_owner(&self, marker_id: u32) -> Option<(usize, &MarkerSpec)> {
        self.parts.iter().enumerate().find_map(|(i, p)| {
            p.marker_specs
                .iter()
                .find(|m| m.marker_id == marker_id)
                .map(|m| (i, m))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCatalog(format!("{}: {m}", self.furniture_id)));
        if self.format_version != CATALOG_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        let n = self.parts.len();
        if n < 2 {
            return bad("needs at least two parts".into());
        }
        let mut ids = HashSet::new();
        let mut markers = HashSet::new();
        for p in &self.parts {
            if !ids.insert(p.id.as_str()) {
                return bad(format!("duplicate part id {}", p.id));
            }
            if !(p.footprint > 0.0) || !(p.height > 0.0) || !(p.graspable_width > 0.0) {
                return bad(format!("part {} needs positive footprint, height and graspable width", p.id));
            }
            if p.grasp_frames.is_empty() {
                return bad(format!("part {} has no grasp frame", p.id));
            }
            for m in &p.marker_specs {
                if !markers.insert(m.marker_id) {
                    return bad(format!("duplicate marker id {}", m.marker_id));
                }
            }
        }
        if self.pairs.len() != n - 1 {
            return bad(format!("expected {} pairs for {} parts, found {}", n - 1, n, self.pairs.len()));
        }
        let mut attached = HashSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for (k, pair) in self.pairs.iter().enumerate() {
            let (Some(a), Some(b)) = (self.part_index(&pair.part_a), self.part_index(&pair.part_b)) else {
                return bad(format!("pair {k} references an unknown part"));
            };
            if a == b {
                return bad(format!("pair {k} mates a part with itself"));
            }
            if !attached.insert(b) {
                return bad(format!("part {} is the moving member of two pairs", pair.part_b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
            let derived = compose_poses(&pair.frame_a, &pair.frame_b.inverse());
            if (derived.position - pair.gt_relative_pose.position).norm() > 1e-9
                || geodesic_angle(&derived.orientation, &pair.gt_relative_pose.orientation) > 1e-9
            {
                return bad(format!("pair {k} ground truth disagrees with its mating frames"));
            }
            let travel_ok = match pair.mechanic {
                Mechanic::Insert => pair.travel == 0.0,
                Mechanic::Screw | Mechanic::Slide => pair.travel > 0.0,
            };
            if !travel_ok {
                return bad(format!("pair {k} has an invalid travel for its mechanic"));
            }
            if pair.prerequisites.iter().any(|&p| p >= self.pairs.len() || p == k) {
                return bad(format!("pair {k} has an invalid prerequisite"));
            }
        }
        // connectivity over all parts
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("pair graph does not connect all parts".into());
        }
        if self.phases.is_empty() {
            return bad("no phases".into());
        }
        for ph in &self.phases {
            let ok = match &ph.predicate {
                PhasePredicate::PartGrasped { part } => self.part_index(part).is_some(),
                PhasePredicate::PartPlaced { part, tolerance, .. } => {
                    self.part_index(part).is_some() && *tolerance > 0.0
                }
                PhasePredicate::PairInserted { pair } | PhasePredicate::PairAssembled { pair } => {
                    *pair < self.pairs.len()
                }
            };
            if !ok {
                return bad(format!("phase '{}' has an invalid predicate", ph.name));
            }
        }
        if self.base_poses.len() != n {
            return bad("base_poses must list one pose per part".into());
        }
        if self.high_eval_poses.len() != 3 || self.high_eval_poses.iter().any(|c| c.len() != n) {
            return bad("high_eval_poses must hold three full configurations".into());
        }
        for s in &self.skill_starts {
            if s.part_poses.len() != n {
                return bad(format!("skill start '{}' must list one pose per part", s.name));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let graph: AssemblyGraph = serde_json::from_str(text).map_err(|e| Error::CatalogParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        graph.validate()?;
        Ok(graph)
    }
}

/// Loads a built-in furniture model by id, or a catalog file by path.
pub fn load_furniture(furniture_id: &str) -> Result<AssemblyGraph> {
    if let Some(g) = builtin(furniture_id) {
        return Ok(g);
    }
    let path = Path::new(furniture_id);
    if path.extension().is_some_and(|e| e == "json") && path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return AssemblyGraph::from_json_str(&text);
    }
    Err(Error::FurnitureNotFound(furniture_id.to_string()))
}

pub fn builtin(furniture_id: &str) -> Option<AssemblyGraph> {
    let graph = match furniture_id {
        "one_leg" => one_leg(),
        "lamp" => lamp(),
        "square_table" => table_with_legs("square_table", 0.08, 0.02, 0.015, 0.07, 0.04),
        "desk" => table_with_legs("desk", 0.09, 0.02, 0.018, 0.08, 0.05),
        "drawer" => drawer(),
        "cabinet" => cabinet(),
        "round_table" => round_table(),
        "stool" => stool(),
        "chair" => chair(),
        _ => return None,
    };
    graph.validate().expect("built-in catalog is valid");
    Some(graph)
}

// ---------------------------------------------------------------------------
// built-in models
// ---------------------------------------------------------------------------

struct Builder {
    id: String,
    parts: Vec<PartSpec>,
    pairs: Vec<PairSpec>,
    phases: Vec<PhaseSpec>,
    base: Vec<[f64; 3]>,
    next_marker: u32,
    workspace: Workspace,
}

/// Gripper pointing straight down.
fn down() -> crate::geometry::Quat {
    rot_x(PI)
}

impl Builder {
    fn new(id: &str) -> Self {
        Builder {
            id: id.into(),
            parts: Vec::new(),
            pairs: Vec::new(),
            phases: Vec::new(),
            base: Vec::new(),
            next_marker: 0,
            workspace: Workspace::default(),
        }
    }

    fn markers(&mut self, r: f64, h: f64, top: &[[f64; 2]]) -> Vec<MarkerSpec> {
        let mut out = Vec::new();
        for xy in top {
            out.push(MarkerSpec {
                marker_id: self.next_marker,
                pose: Pose::from_translation(xy[0], xy[1], h / 2.0),
            });
            self.next_marker += 1;
        }
        let sides = [
            (Vec3::new(r, 0.0, 0.0), rot_y(FRAC_PI_2)),
            (Vec3::new(0.0, r, 0.0), rot_x(-FRAC_PI_2)),
            (Vec3::new(-r, 0.0, 0.0), rot_y(-FRAC_PI_2)),
            (Vec3::new(0.0, -r, 0.0), rot_x(FRAC_PI_2)),
        ];
        for (p, q) in sides {
            out.push(MarkerSpec {
                marker_id: self.next_marker,
                pose: Pose::new(p, q),
            });
            self.next_marker += 1;
        }
        out
    }

    /// Flat part (tabletop, seat, base) grasped at its rim.
    fn disc(&mut self, id: &str, r: f64, h: f64, xy: [f64; 2], yaw: f64) {
        let marker_specs = self.markers(r, h, &[[r * 0.5, 0.0], [-r * 0.5, 0.0]]);
        self.parts.push(PartSpec {
            id: id.into(),
            footprint: r,
            height: h,
            graspable_width: h.clamp(0.015, 0.05),
            grasp_frames: vec![Pose::new(Vec3::new(0.0, -(r - 0.015), 0.0), down())],
            marker_specs,
        });
        self.base.push([xy[0], xy[1], yaw]);
    }

    /// Upright part (leg, bulb, door, nut) grasped near its top.
    fn post(&mut self, id: &str, r: f64, h: f64, grasp_width: f64, xy: [f64; 2], yaw: f64) {
        let marker_specs = self.markers(r, h, &[]);
        let grip_z = (h / 2.0 - 0.01).max(0.0);
        self.parts.push(PartSpec {
            id: id.into(),
            footprint: r,
            height: h,
            graspable_width: grasp_width,
            grasp_frames: vec![Pose::new(Vec3::new(0.0, 0.0, grip_z), down())],
            marker_specs,
        });
        self.base.push([xy[0], xy[1], yaw]);
    }

    fn height(&self, id: &str) -> f64 {
        self.parts.iter().find(|p| p.id == id).unwrap().height
    }

    fn footprint(&self, id: &str) -> f64 {
        self.parts.iter().find(|p| p.id == id).unwrap().footprint
    }

    /// Vertical mate: `b`'s bottom onto a point of `a`'s top surface.
    fn stack_pair(&mut self, a: &str, b: &str, at: [f64; 2], mechanic: Mechanic, travel: f64, prereq: &[usize]) -> usize {
        let frame_a = Pose::from_translation(at[0], at[1], self.height(a) / 2.0);
        let frame_b = Pose::from_translation(0.0, 0.0, -self.height(b) / 2.0);
        self.pair(a, frame_a, b, frame_b, mechanic, travel, prereq)
    }

    #[allow(clippy::too_many_arguments)]
    fn pair(&mut self, a: &str, frame_a: Pose, b: &str, frame_b: Pose, mechanic: Mechanic, travel: f64, prereq: &[usize]) -> usize {
        self.pairs.push(PairSpec {
            part_a: a.into(),
            frame_a,
            part_b: b.into(),
            frame_b,
            mechanic,
            gt_relative_pose: compose_poses(&frame_a, &frame_b.inverse()),
            travel,
            prerequisites: prereq.to_vec(),
        });
        self.pairs.len() - 1
    }

    fn phase(&mut self, name: &str, predicate: PhasePredicate) {
        self.phases.push(PhaseSpec {
            name: name.into(),
            predicate,
        });
    }

    fn grasp_phase(&mut self, part: &str) {
        self.phase(&format!("grasp {part}"), PhasePredicate::PartGrasped { part: part.into() });
    }

    fn corner_phase(&mut self, part: &str) {
        let target = self.workspace.corner_slot(self.footprint(part));
        self.phase(
            &format!("place {part} in corner"),
            PhasePredicate::PartPlaced {
                part: part.into(),
                target,
                tolerance: 0.02,
                released: true,
            },
        );
    }

    /// grasp, insert and complete the mate of one pair
    fn mate_phases(&mut self, pair: usize) {
        let b = self.pairs[pair].part_b.clone();
        let verb = match self.pairs[pair].mechanic {
            Mechanic::Screw => "screw",
            Mechanic::Slide => "slide",
            Mechanic::Insert => "seat",
        };
        self.grasp_phase(&b);
        if self.pairs[pair].mechanic != Mechanic::Insert {
            self.phase(&format!("insert {b}"), PhasePredicate::PairInserted { pair });
        }
        self.phase(&format!("{verb} {b}"), PhasePredicate::PairAssembled { pair });
    }

    fn build(self) -> AssemblyGraph {
        let base_poses: Vec<Pose> = self
            .parts
            .iter()
            .zip(&self.base)
            .map(|(p, b)| Pose::planar(b[0], b[1], p.rest_height(), b[2]))
            .collect();
        let mut graph = AssemblyGraph {
            format_version: CATALOG_FORMAT_VERSION,
            furniture_id: self.id,
            parts: self.parts,
            pairs: self.pairs,
            phases: self.phases,
            base_poses,
            high_eval_poses: Vec::new(),
            skill_starts: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + graph.parts.len() as u64);
        for _ in 0..3 {
            let cfg = crate::init::scatter_parts(&graph, &self.workspace, &mut rng)
                .expect("built-in models fit the workspace");
            graph.high_eval_poses.push(cfg);
        }
        graph.skill_starts = reference_skill_starts(&graph);
        graph
    }
}

/// Start states for the first five skills: earlier placements applied, the
/// gripper hovering above the part the skill manipulates.
fn reference_skill_starts(graph: &AssemblyGraph) -> Vec<SkillStart> {
    let mut poses = graph.base_poses.clone();
    let mut out = Vec::new();
    for phase in graph.phases.iter().take(5) {
        let subject = match &phase.predicate {
            PhasePredicate::PartGrasped { part } | PhasePredicate::PartPlaced { part, .. } => {
                graph.part_index(part).unwrap()
            }
            PhasePredicate::PairInserted { pair } | PhasePredicate::PairAssembled { pair } => graph.pair_parts(*pair).1,
        };
        let grasp = compose_poses(&poses[subject], &graph.parts[subject].grasp_frames[0]);
        let mut ee = grasp;
        ee.position.z += 0.05;
        out.push(SkillStart {
            name: phase.name.clone(),
            part_poses: poses.clone(),
            ee_pose: ee,
        });
        if let PhasePredicate::PartPlaced { target, .. } = &phase.predicate {
            let p = &mut poses[subject];
            p.position.x = target[0];
            p.position.y = target[1];
        }
    }
    out
}

fn one_leg() -> AssemblyGraph {
    let mut b = Builder::new("one_leg");
    b.disc("tabletop", 0.08, 0.02, [-0.15, -0.10], 0.0);
    b.post("leg", 0.015, 0.07, 0.03, [0.10, -0.15], 0.0);
    let p = b.stack_pair("tabletop", "leg", [0.04, 0.04], Mechanic::Screw, 0.015, &[]);
    b.grasp_phase("tabletop");
    b.corner_phase("tabletop");
    b.mate_phases(p);
    b.build()
}

fn lamp() -> AssemblyGraph {
    let mut b = Builder::new("lamp");
    b.disc("lamp_base", 0.06, 0.03, [-0.22, -0.05], 0.0);
    b.post("bulb", 0.02, 0.05, 0.04, [0.0, -0.20], 0.0);
    b.post("hood", 0.05, 0.05, 0.04, [0.20, -0.10], 0.0);
    let bulb = b.stack_pair("lamp_base", "bulb", [0.0, 0.0], Mechanic::Screw, 0.015, &[]);
    let hood = b.stack_pair("lamp_base", "hood", [0.0, 0.0], Mechanic::Insert, 0.0, &[bulb]);
    b.grasp_phase("lamp_base");
    b.corner_phase("lamp_base");
    b.mate_phases(bulb);
    b.mate_phases(hood);
    b.build()
}

fn table_with_legs(id: &str, top_r: f64, top_h: f64, leg_r: f64, leg_h: f64, hole: f64) -> AssemblyGraph {
    let mut b = Builder::new(id);
    b.disc("tabletop", top_r, top_h, [-0.22, -0.10], 0.0);
    let legs = [[0.02, -0.20], [0.22, -0.20], [-0.02, 0.05], [0.17, 0.05]];
    for (i, xy) in legs.iter().enumerate() {
        b.post(&format!("leg{}", i + 1), leg_r, leg_h, 2.0 * leg_r, *xy, 0.0);
    }
    let holes = [[hole, hole], [-hole, hole], [-hole, -hole], [hole, -hole]];
    let pairs: Vec<usize> = (0..4)
        .map(|i| b.stack_pair("tabletop", &format!("leg{}", i + 1), holes[i], Mechanic::Screw, 0.015, &[]))
        .collect();
    b.grasp_phase("tabletop");
    b.corner_phase("tabletop");
    for p in pairs {
        b.mate_phases(p);
    }
    b.grasp_phase("tabletop");
    b.phase(
        "move finished table to center",
        PhasePredicate::PartPlaced {
            part: "tabletop".into(),
            target: [-0.10, -0.05],
            tolerance: 0.03,
            released: true,
        },
    );
    b.build()
}

fn drawer() -> AssemblyGraph {
    let mut b = Builder::new("drawer");
    b.disc("drawer_body", 0.09, 0.06, [-0.24, -0.08], 0.0);
    b.post("box1", 0.04, 0.025, 0.025, [0.04, -0.19], 0.0);
    b.post("box2", 0.04, 0.025, 0.025, [0.05, 0.09], 0.0);
    // rails open toward -y; slide axis is the frame's +z
    let rail = rot_x(FRAC_PI_2);
    let p1 = b.pair(
        "drawer_body",
        Pose::new(Vec3::new(-0.04, 0.0, 0.0), rail),
        "box1",
        Pose::new(Vec3::zeros(), rail),
        Mechanic::Slide,
        0.03,
        &[],
    );
    let p2 = b.pair(
        "drawer_body",
        Pose::new(Vec3::new(0.04, 0.0, 0.0), rail),
        "box2",
        Pose::new(Vec3::zeros(), rail),
        Mechanic::Slide,
        0.03,
        &[],
    );
    b.grasp_phase("drawer_body");
    b.corner_phase("drawer_body");
    b.mate_phases(p1);
    b.mate_phases(p2);
    b.build()
}

fn cabinet() -> AssemblyGraph {
    let mut b = Builder::new("cabinet");
    b.disc("cabinet_body", 0.07, 0.08, [-0.22, -0.10], 0.0);
    b.post("door_left", 0.03, 0.06, 0.02, [0.02, -0.18], 0.0);
    b.post("door_right", 0.03, 0.06, 0.02, [0.23, -0.19], 0.0);
    b.disc("cabinet_top", 0.06, 0.015, [0.0, 0.10], 0.0);
    let l = b.stack_pair("cabinet_body", "door_left", [-0.045, 0.0], Mechanic::Slide, 0.03, &[]);
    let r = b.stack_pair("cabinet_body", "door_right", [0.045, 0.0], Mechanic::Slide, 0.03, &[]);
    let t = b.stack_pair("cabinet_body", "cabinet_top", [0.0, 0.0], Mechanic::Screw, 0.015, &[l, r]);
    b.grasp_phase("cabinet_body");
    b.corner_phase("cabinet_body");
    b.mate_phases(l);
    b.mate_phases(r);
    b.mate_phases(t);
    b.build()
}

fn round_table() -> AssemblyGraph {
    let mut b = Builder::new("round_table");
    b.disc("round_top", 0.08, 0.02, [-0.22, -0.08], 0.0);
    b.post("round_leg", 0.025, 0.08, 0.05, [0.02, -0.18], 0.0);
    b.disc("cross_base", 0.07, 0.02, [0.0, 0.12], 0.0);
    let leg = b.stack_pair("round_top", "round_leg", [0.0, 0.0], Mechanic::Screw, 0.015, &[]);
    let base = b.stack_pair("round_leg", "cross_base", [0.0, 0.0], Mechanic::Screw, 0.015, &[leg]);
    b.grasp_phase("round_top");
    b.corner_phase("round_top");
    b.mate_phases(leg);
    b.mate_phases(base);
    b.build()
}

fn stool() -> AssemblyGraph {
    let mut b = Builder::new("stool");
    b.disc("seat", 0.07, 0.02, [-0.22, -0.08], 0.0);
    let legs = [[0.02, -0.20], [0.22, -0.20], [0.0, 0.06]];
    for (i, xy) in legs.iter().enumerate() {
        b.post(&format!("leg{}", i + 1), 0.015, 0.07, 0.03, *xy, 0.0);
    }
    let pairs: Vec<usize> = (0..3)
        .map(|i| {
            let a = (90.0 + 120.0 * i as f64).to_radians();
            b.stack_pair("seat", &format!("leg{}", i + 1), [0.04 * a.cos(), 0.04 * a.sin()], Mechanic::Screw, 0.015, &[])
        })
        .collect();
    b.grasp_phase("seat");
    b.corner_phase("seat");
    for p in pairs {
        b.mate_phases(p);
    }
    b.build()
}

fn chair() -> AssemblyGraph {
    let mut b = Builder::new("chair");
    b.disc("chair_seat", 0.07, 0.02, [-0.24, -0.12], 0.0);
    b.post("chair_back", 0.05, 0.06, 0.03, [-0.20, 0.14], 0.0);
    b.post("leg1", 0.015, 0.06, 0.03, [0.0, -0.20], 0.0);
    b.post("leg2", 0.015, 0.06, 0.03, [0.20, -0.20], 0.0);
    b.post("nut1", 0.012, 0.015, 0.02, [-0.02, 0.0], 0.0);
    b.post("nut2", 0.012, 0.015, 0.02, [0.16, 0.02], 0.0);
    let l1 = b.stack_pair("chair_seat", "leg1", [0.035, -0.03], Mechanic::Screw, 0.015, &[]);
    let l2 = b.stack_pair("chair_seat", "leg2", [-0.035, -0.03], Mechanic::Screw, 0.015, &[]);
    let back = b.stack_pair("chair_seat", "chair_back", [0.0, 0.045], Mechanic::Slide, 0.03, &[]);
    let n1 = b.stack_pair("chair_back", "nut1", [0.02, 0.0], Mechanic::Screw, 0.015, &[back]);
    let n2 = b.stack_pair("chair_back", "nut2", [-0.02, 0.0], Mechanic::Screw, 0.015, &[back]);
    b.grasp_phase("chair_seat");
    b.corner_phase("chair_seat");
    for p in [l1, l2, back, n1, n2] {
        b.mate_phases(p);
    }
    b.build()
}

/// Ids of every built-in model, in table order.
pub fn builtin_ids() -> BTreeSet<&'static str> {
    BUILTIN_FURNITURE.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workspace::circles_overlap;

    #[test]
    fn table_counts() {
        let expected = [
            ("one_leg", 2, 5),
            ("lamp", 3, 7),
            ("square_table", 5, 16),
            ("desk", 5, 16),
            ("drawer", 3, 8),
            ("cabinet", 4, 11),
            ("round_table", 3, 8),
            ("stool", 4, 11),
            ("chair", 6, 17),
        ];
        for (id, parts, phases) in expected {
            let g = load_furniture(id).unwrap();
            assert_eq!(g.n_parts(), parts, "{id} parts");
            assert_eq!(g.pairs.len(), parts - 1, "{id} pairs");
            assert_eq!(g.n_phases(), phases, "{id} phases");
            assert_eq!(g.max_reward(), parts - 1);
        }
    }

    #[test]
    fn one_leg_and_lamp_mechanics() {
        let g = load_furniture("one_leg").unwrap();
        assert_eq!(g.pairs[0].mechanic, Mechanic::Screw);
        let lamp = load_furniture("lamp").unwrap();
        let kinds: HashSet<Mechanic> = lamp.pairs.iter().map(|p| p.mechanic).collect();
        assert_eq!(kinds, HashSet::from([Mechanic::Screw, Mechanic::Insert]));
        let chair = load_furniture("chair").unwrap();
        assert_eq!((chair.n_parts(), chair.pairs.len(), chair.n_phases()), (6, 5, 17));
    }

    #[test]
    fn unknown_furniture() {
        assert!(matches!(load_furniture("bogus"), Err(Error::FurnitureNotFound(_))));
    }

    #[test]
    fn loading_is_deterministic() {
        for id in BUILTIN_FURNITURE {
            assert_eq!(load_furniture(id).unwrap(), load_furniture(id).unwrap());
        }
    }

    #[test]
    fn json_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        for id in BUILTIN_FURNITURE {
            let g = load_furniture(id).unwrap();
            let path = dir.path().join(format!("{id}.json"));
            std::fs::write(&path, g.to_json_pretty()).unwrap();
            let back = load_furniture(path.to_str().unwrap()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn malformed_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{\n  \"format_version\": 1,\n  \"furniture_id\": oops\n}").unwrap();
        match load_furniture(path.to_str().unwrap()) {
            Err(Error::CatalogParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_wrong_pair_count() {
        let mut g = load_furniture("lamp").unwrap();
        g.pairs.pop();
        assert!(g.validate().is_err());
    }

    #[test]
    fn validation_rejects_duplicate_markers() {
        let mut g = load_furniture("one_leg").unwrap();
        let dup = g.parts[0].marker_specs[0].marker_id;
        g.parts[1].marker_specs[0].marker_id = dup;
        assert!(g.validate().is_err());
    }

    #[test]
    fn gt_matches_fully_mated_pose() {
        for id in BUILTIN_FURNITURE {
            let g = load_furniture(id).unwrap();
            for pair in &g.pairs {
                let done = pair.mated_relative_pose(pair.completion());
                assert!((done.position - pair.gt_relative_pose.position).norm() < 1e-12);
                assert!(geodesic_angle(&done.orientation, &pair.gt_relative_pose.orientation) < 1e-9);
            }
        }
    }

    /// Base layouts leave room for the medium-level ±5 cm shift on both axes.
    #[test]
    fn base_layouts_tolerate_medium_noise() {
        let ws = Workspace::default();
        let slack = 0.05 * 2f64.sqrt();
        for id in BUILTIN_FURNITURE {
            let g = load_furniture(id).unwrap();
            for (i, (p, pose)) in g.parts.iter().zip(&g.base_poses).enumerate() {
                let c = [pose.position.x, pose.position.y];
                let mut inner = ws.table;
                inner.min = [inner.min[0] + 0.05, inner.min[1] + 0.05];
                inner.max = [inner.max[0] - 0.05, inner.max[1] - 0.05];
                assert!(inner.contains_circle(c, p.footprint), "{id}/{} near table edge", p.id);
                assert!(ws.obstacle_clearance(c, p.footprint) > slack, "{id}/{} near wall", p.id);
                for (q, qpose) in g.parts.iter().zip(&g.base_poses).skip(i + 1) {
                    let d = [qpose.position.x, qpose.position.y];
                    assert!(
                        !circles_overlap(c, p.footprint + slack, d, q.footprint + slack),
                        "{id}: {} and {} too close",
                        p.id,
                        q.id
                    );
                }
            }
        }
    }

    #[test]
    fn skill_starts_cover_first_five_phases() {
        for id in BUILTIN_FURNITURE {
            let g = load_furniture(id).unwrap();
            assert_eq!(g.skill_starts.len(), 5, "{id}");
        }
    }
}
