//! Initial part layouts for the three randomness levels, skill start states,
//! and the placement guide check.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::catalog::AssemblyGraph;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, rot_axis, rot_z, yaw_of, Pose, Vec3};
use crate::workspace::{circles_overlap, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RandomnessLevel {
    #[serde(rename = "low")]
    Low,
    #[serde(rename = "med", alias = "medium")]
    Medium,
    #[serde(rename = "high")]
    High,
}

impl RandomnessLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RandomnessLevel::Low => "low",
            RandomnessLevel::Medium => "med",
            RandomnessLevel::High => "high",
        }
    }
}

impl std::str::FromStr for RandomnessLevel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "low" => Ok(Self::Low),
            "med" | "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown randomness level '{other}' (expected low, med or high)")),
        }
    }
}

impl std::fmt::Display for RandomnessLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Standard deviation of the low-level placement error, meters.
    pub low_translation_sigma: f64,
    /// Standard deviation of the low-level yaw error, radians.
    pub low_rotation_sigma: f64,
    /// Low-level draws are truncated at this many standard deviations.
    pub low_truncation: f64,
    pub medium_translation_bound: f64,
    pub medium_rotation_bound: f64,
    pub skill_low_ee_translation: f64,
    pub skill_low_ee_rotation: f64,
    pub skill_medium_ee_translation: f64,
    pub skill_medium_ee_rotation: f64,
    pub guide_translation_tolerance: f64,
    pub guide_rotation_tolerance: f64,
    pub max_attempts: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            low_translation_sigma: 0.005,
            low_rotation_sigma: 5f64.to_radians(),
            low_truncation: 2.0,
            medium_translation_bound: 0.05,
            medium_rotation_bound: PI / 4.0,
            skill_low_ee_translation: 0.005,
            skill_low_ee_rotation: 5f64.to_radians(),
            skill_medium_ee_translation: 0.05,
            skill_medium_ee_rotation: 15f64.to_radians(),
            guide_translation_tolerance: 0.010,
            guide_rotation_tolerance: 10f64.to_radians(),
            max_attempts: 10_000,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.low_translation_sigma,
            self.low_rotation_sigma,
            self.low_truncation,
            self.medium_translation_bound,
            self.medium_rotation_bound,
            self.skill_low_ee_translation,
            self.skill_low_ee_rotation,
            self.skill_medium_ee_translation,
            self.skill_medium_ee_rotation,
            self.guide_translation_tolerance,
            self.guide_rotation_tolerance,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("init bounds must be finite and non-negative".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("init.max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Random stream for one purpose of one seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const INIT_STREAM: u64 = 1;
pub const SKILL_STREAM: u64 = 2;

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, k: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let x = n.sample(rng);
        if x.abs() <= k * sigma {
            return x;
        }
    }
}

fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound == 0.0 {
        return 0.0;
    }
    Uniform::new_inclusive(-bound, bound).expect("finite bound").sample(rng)
}

fn shifted(base: &Pose, dx: f64, dy: f64, dyaw: f64) -> Pose {
    Pose::new(base.position + Vec3::new(dx, dy, 0.0), rot_z(dyaw) * base.orientation)
}

/// Whether a planar layout is physically valid: on the table, clear of the
/// walls and free of footprint overlaps.
pub fn layout_is_valid(graph: &AssemblyGraph, poses: &[Pose], ws: &Workspace) -> bool {
    for (i, (spec, p)) in graph.parts.iter().zip(poses).enumerate() {
        let c = [p.position.x, p.position.y];
        if !ws.table.contains_circle(c, spec.footprint) || ws.obstacle_clearance(c, spec.footprint) < -1e-9 {
            return false;
        }
        for (other, q) in graph.parts.iter().zip(poses).skip(i + 1) {
            if circles_overlap(c, spec.footprint - 1e-9, [q.position.x, q.position.y], other.footprint) {
                return false;
            }
        }
    }
    true
}

/// Rejection-samples a uniform scatter of all parts over the table.
pub fn scatter_parts<R: Rng + ?Sized>(graph: &AssemblyGraph, ws: &Workspace, rng: &mut R) -> Result<Vec<Pose>> {
    scatter_parts_bounded(graph, ws, rng, InitConfig::default().max_attempts)
}

fn scatter_parts_bounded<R: Rng + ?Sized>(
    graph: &AssemblyGraph,
    ws: &Workspace,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Vec<Pose>> {
    let mut attempts = 0;
    let mut placed: Vec<Pose> = Vec::with_capacity(graph.n_parts());
    for spec in &graph.parts {
        let r = spec.footprint;
        loop {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::WorkspaceTooCrowded(max_attempts));
            }
            let x = rng.random_range(ws.table.min[0] + r..=ws.table.max[0] - r);
            let y = rng.random_range(ws.table.min[1] + r..=ws.table.max[1] - r);
            let yaw = rng.random_range(-PI..PI);
            if ws.obstacle_clearance([x, y], r) < 0.0 {
                continue;
            }
            let clear = graph
                .parts
                .iter()
                .zip(&placed)
                .all(|(o, p)| !circles_overlap([x, y], r, [p.position.x, p.position.y], o.footprint));
            if clear {
                placed.push(Pose::planar(x, y, spec.rest_height(), yaw));
                break;
            }
        }
    }
    Ok(placed)
}

/// Initial part poses for an episode.
pub fn sample_initial_poses(
    graph: &AssemblyGraph,
    level: RandomnessLevel,
    cfg: &InitConfig,
    ws: &Workspace,
    seed: u64,
    eval_mode: bool,
) -> Result<Vec<Pose>> {
    let mut rng = stream_rng(seed, INIT_STREAM);
    match level {
        RandomnessLevel::Low => Ok(graph
            .base_poses
            .iter()
            .map(|b| {
                let dx = truncated_normal(&mut rng, cfg.low_translation_sigma, cfg.low_truncation);
                let dy = truncated_normal(&mut rng, cfg.low_translation_sigma, cfg.low_truncation);
                let dyaw = truncated_normal(&mut rng, cfg.low_rotation_sigma, cfg.low_truncation);
                shifted(b, dx, dy, dyaw)
            })
            .collect()),
        RandomnessLevel::Medium => Ok(medium_perturb(&graph.base_poses, cfg, &mut rng)),
        RandomnessLevel::High if eval_mode => Ok(graph.high_eval_poses[(seed % 3) as usize].clone()),
        RandomnessLevel::High => scatter_parts_bounded(graph, ws, &mut rng, cfg.max_attempts),
    }
}

fn medium_perturb<R: Rng + ?Sized>(base: &[Pose], cfg: &InitConfig, rng: &mut R) -> Vec<Pose> {
    base.iter()
        .map(|b| {
            let dx = uniform_sym(rng, cfg.medium_translation_bound);
            let dy = uniform_sym(rng, cfg.medium_translation_bound);
            let dyaw = uniform_sym(rng, cfg.medium_rotation_bound);
            shifted(b, dx, dy, dyaw)
        })
        .collect()
}

/// Random rigid offset with translation norm and rotation angle both
/// uniformly distributed up to their bounds.
fn bounded_jitter<R: Rng + ?Sized>(rng: &mut R, max_t: f64, max_r: f64) -> (Vec3, f64, Vec3) {
    let dir = loop {
        let v = Vec3::new(uniform_sym(rng, 1.0), uniform_sym(rng, 1.0), uniform_sym(rng, 1.0));
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            break v / n;
        }
    };
    let t = dir * (rng.random::<f64>() * max_t);
    let axis = loop {
        let v = Vec3::new(uniform_sym(rng, 1.0), uniform_sym(rng, 1.0), uniform_sym(rng, 1.0));
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            break v / n;
        }
    };
    (t, rng.random::<f64>() * max_r, axis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillStart {
    pub part_poses: Vec<Pose>,
    pub ee_pose: Pose,
}

/// Start state for one of the first skills (1-based index).
pub fn skill_start_state(
    graph: &AssemblyGraph,
    skill_index: usize,
    level: RandomnessLevel,
    cfg: &InitConfig,
    ws: &Workspace,
    seed: u64,
) -> Result<SkillStart> {
    let max = graph.skill_starts.len();
    if skill_index == 0 || skill_index > max {
        return Err(Error::UnknownSkill {
            furniture: graph.furniture_id.clone(),
            index: skill_index,
            max,
        });
    }
    let reference = &graph.skill_starts[skill_index - 1];
    let mut rng = stream_rng(seed, SKILL_STREAM);
    let (max_t, max_r) = match level {
        RandomnessLevel::Low => (cfg.skill_low_ee_translation, cfg.skill_low_ee_rotation),
        _ => (cfg.skill_medium_ee_translation, cfg.skill_medium_ee_rotation),
    };
    let (dt, angle, axis) = bounded_jitter(&mut rng, max_t, max_r);
    let ee = Pose::new(reference.ee_pose.position + dt, rot_axis(&axis, angle) * reference.ee_pose.orientation);
    let parts = match level {
        RandomnessLevel::Low => reference.part_poses.clone(),
        _ => {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > cfg.max_attempts {
                    return Err(Error::WorkspaceTooCrowded(cfg.max_attempts));
                }
                let cand = medium_perturb(&reference.part_poses, cfg, &mut rng);
                if layout_is_valid(graph, &cand, ws) {
                    break cand;
                }
            }
        }
    };
    Ok(SkillStart {
        part_poses: parts,
        ee_pose: ee,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideEntry {
    pub part: String,
    pub delta_translation: f64,
    pub delta_rotation: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideReport {
    pub parts: Vec<GuideEntry>,
    pub all_matched: bool,
}

/// Compares estimated part poses with a sampled target layout.
pub fn init_guide(graph: &AssemblyGraph, current: &[Pose], target: &[Pose], cfg: &InitConfig) -> GuideReport {
    let parts: Vec<GuideEntry> = graph
        .parts
        .iter()
        .zip(current.iter().zip(target))
        .map(|(spec, (c, t))| {
            let dt = (c.position - t.position).norm();
            let dr = geodesic_angle(&c.orientation, &t.orientation);
            GuideEntry {
                part: spec.id.clone(),
                delta_translation: dt,
                delta_rotation: dr,
                matched: dt <= cfg.guide_translation_tolerance && dr <= cfg.guide_rotation_tolerance,
            }
        })
        .collect();
    let all_matched = parts.iter().all(|p| p.matched);
    GuideReport { parts, all_matched }
}

/// Planar offset of a pose from a reference, `(dx, dy, dyaw)`.
pub fn planar_delta(p: &Pose, base: &Pose) -> (f64, f64, f64) {
    let dyaw = crate::geometry::wrap_angle(yaw_of(&p.orientation) - yaw_of(&base.orientation));
    (p.position.x - base.position.x, p.position.y - base.position.y, dyaw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_furniture;

    #[test]
    fn low_with_zero_jitter_is_base() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = InitConfig {
            low_translation_sigma: 0.0,
            low_rotation_sigma: 0.0,
            ..InitConfig::default()
        };
        let p = sample_initial_poses(&g, RandomnessLevel::Low, &cfg, &Workspace::default(), 3, false).unwrap();
        assert_eq!(p, g.base_poses);
    }

    #[test]
    fn low_jitter_is_truncated() {
        let g = load_furniture("lamp").unwrap();
        let cfg = InitConfig::default();
        for seed in 0..200 {
            let p = sample_initial_poses(&g, RandomnessLevel::Low, &cfg, &Workspace::default(), seed, false).unwrap();
            for (q, b) in p.iter().zip(&g.base_poses) {
                let (dx, dy, dyaw) = planar_delta(q, b);
                assert!(dx.abs() <= 0.010 + 1e-12 && dy.abs() <= 0.010 + 1e-12);
                assert!(dyaw.abs() <= 10f64.to_radians() + 1e-12);
            }
        }
    }

    #[test]
    fn high_eval_cycles() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = InitConfig::default();
        let ws = Workspace::default();
        let c: Vec<Vec<Pose>> = (0..4)
            .map(|s| sample_initial_poses(&g, RandomnessLevel::High, &cfg, &ws, s, true).unwrap())
            .collect();
        assert_eq!(c[0], c[3]);
        assert_ne!(c[0], c[1]);
        assert_ne!(c[1], c[2]);
        assert_ne!(c[0], c[2]);
    }

    #[test]
    fn crowded_workspace_fails() {
        let g = load_furniture("chair").unwrap();
        let ws = Workspace {
            table: crate::workspace::Rect::new(-0.1, -0.1, 0.1, 0.1),
            walls: [crate::workspace::Rect::new(0.09, 0.09, 0.1, 0.1); 2],
            wall_height: 0.06,
        };
        let r = sample_initial_poses(&g, RandomnessLevel::High, &InitConfig::default(), &ws, 0, false);
        assert!(matches!(r, Err(Error::WorkspaceTooCrowded(10_000))));
    }

    #[test]
    fn skill_start_bounds() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = InitConfig::default();
        let ws = Workspace::default();
        assert!(skill_start_state(&g, 0, RandomnessLevel::Low, &cfg, &ws, 0).is_err());
        assert!(skill_start_state(&g, 6, RandomnessLevel::Low, &cfg, &ws, 0).is_err());
        let zero = InitConfig {
            skill_low_ee_translation: 0.0,
            skill_low_ee_rotation: 0.0,
            ..InitConfig::default()
        };
        let s = skill_start_state(&g, 2, RandomnessLevel::Low, &zero, &ws, 9).unwrap();
        assert_eq!(s.part_poses, g.skill_starts[1].part_poses);
        assert!((s.ee_pose.position - g.skill_starts[1].ee_pose.position).norm() < 1e-15);
    }

    #[test]
    fn guide_reports_deltas() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = InitConfig::default();
        let t = g.base_poses.clone();
        let r = init_guide(&g, &t, &t, &cfg);
        assert!(r.all_matched);
        assert!(r.parts.iter().all(|p| p.delta_translation == 0.0));
        let mut c = t.clone();
        c[1].position.x += 0.03;
        let r = init_guide(&g, &c, &t, &cfg);
        assert!(!r.all_matched && !r.parts[1].matched && r.parts[0].matched);
        assert!((r.parts[1].delta_translation - 0.03).abs() < 1e-12);
        let mut c = t.clone();
        c[0].orientation = rot_z(9f64.to_radians()) * c[0].orientation;
        assert!(init_guide(&g, &c, &t, &cfg).all_matched);
    }
}
