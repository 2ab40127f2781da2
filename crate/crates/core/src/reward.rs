//! Assembly success predicate, once-per-pair sparse reward, and phase tracking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{AssemblyGraph, PhasePredicate};
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Pose, RotationMatrix};
use crate::world::{PairStatus, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub column_cosine_threshold: f64,
    pub per_axis_distance_threshold: f64,
    /// Consecutive satisfying frames required before a pair is credited.
    pub persistence_frames: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            column_cosine_threshold: 0.96,
            per_axis_distance_threshold: 0.007,
            persistence_frames: 1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.column_cosine_threshold > 0.0 && self.column_cosine_threshold <= 1.0) {
            return Err(Error::InvalidConfig("reward.column_cosine_threshold must lie in (0, 1]".into()));
        }
        if !(self.per_axis_distance_threshold > 0.0) {
            return Err(Error::InvalidConfig("reward.per_axis_distance_threshold must be positive".into()));
        }
        if self.persistence_frames == 0 {
            return Err(Error::InvalidConfig("reward.persistence_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// True when `rel` matches `gt`: every rotation-matrix column of `rel` has
/// cosine above the threshold with the matching column of `gt`, and every
/// position axis differs by less than the distance threshold.
pub fn is_assembled(rel: &Pose, gt: &Pose, cfg: &RewardConfig) -> bool {
    let d = rel.position - gt.position;
    if d.iter().any(|c| c.abs() >= cfg.per_axis_distance_threshold) {
        return false;
    }
    let r = RotationMatrix::from_quat(&rel.orientation);
    let g = RotationMatrix::from_quat(&gt.orientation);
    (0..3).all(|i| r.column(i).dot(&g.column(i)) > cfg.column_cosine_threshold)
}

/// Tests every not-yet-credited pair against the pose estimates.
///
/// A pair whose parts are not both observed keeps its prior status. Credited
/// pairs are never tested again, so a pair is rewarded at most once.
pub fn step_reward(
    assembled_before: &BTreeSet<usize>,
    part_poses: &[Option<Pose>],
    graph: &AssemblyGraph,
    cfg: &RewardConfig,
) -> (u32, BTreeSet<usize>) {
    let mut after = assembled_before.clone();
    let mut reward = 0;
    for (k, pair) in graph.pairs.iter().enumerate() {
        if after.contains(&k) {
            continue;
        }
        let (a, b) = graph.pair_parts(k);
        let (Some(pa), Some(pb)) = (part_poses[a], part_poses[b]) else {
            continue;
        };
        if is_assembled(&relative_pose(&pa, &pb), &pair.gt_relative_pose, cfg) {
            after.insert(k);
            reward += 1;
        }
    }
    (reward, after)
}

/// Episode reward state with optional temporal persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTracker {
    pub credited: BTreeSet<usize>,
    streak: Vec<u32>,
    pub total: u32,
}

impl RewardTracker {
    pub fn new(n_pairs: usize) -> Self {
        RewardTracker {
            credited: BTreeSet::new(),
            streak: vec![0; n_pairs],
            total: 0,
        }
    }

    pub fn update(&mut self, part_poses: &[Option<Pose>], graph: &AssemblyGraph, cfg: &RewardConfig) -> u32 {
        if cfg.persistence_frames <= 1 {
            let (r, after) = step_reward(&self.credited, part_poses, graph, cfg);
            self.credited = after;
            self.total += r;
            return r;
        }
        let mut reward = 0;
        for (k, pair) in graph.pairs.iter().enumerate() {
            if self.credited.contains(&k) {
                continue;
            }
            let (a, b) = graph.pair_parts(k);
            let (Some(pa), Some(pb)) = (part_poses[a], part_poses[b]) else {
                continue;
            };
            if is_assembled(&relative_pose(&pa, &pb), &pair.gt_relative_pose, cfg) {
                self.streak[k] += 1;
                if self.streak[k] >= cfg.persistence_frames {
                    self.credited.insert(k);
                    reward += 1;
                }
            } else {
                self.streak[k] = 0;
            }
        }
        self.total += reward;
        reward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub completed: usize,
    pub satisfied: Vec<bool>,
}

impl PhaseState {
    pub fn new(n_phases: usize) -> Self {
        PhaseState {
            completed: 0,
            satisfied: vec![false; n_phases],
        }
    }
}

pub fn predicate_holds(pred: &PhasePredicate, world: &WorldState, graph: &AssemblyGraph) -> bool {
    match pred {
        PhasePredicate::PartGrasped { part } => {
            graph.part_index(part).is_some_and(|i| world.ee.held_part == Some(i))
        }
        PhasePredicate::PartPlaced {
            part,
            target,
            tolerance,
            released,
        } => {
            let Some(i) = graph.part_index(part) else {
                return false;
            };
            let p = world.parts[i].pose.position;
            let d = ((p.x - target[0]).powi(2) + (p.y - target[1]).powi(2)).sqrt();
            d <= *tolerance && !(*released && world.ee.held_part == Some(i))
        }
        PhasePredicate::PairInserted { pair } => world.pairs[*pair].status >= PairStatus::Inserted,
        PhasePredicate::PairAssembled { pair } => world.pairs[*pair].status == PairStatus::Assembled,
    }
}

/// Advances through consecutive satisfied phases; never moves backwards.
pub fn update_phase(state: &PhaseState, world: &WorldState, graph: &AssemblyGraph) -> PhaseState {
    let mut next = state.clone();
    while next.completed < graph.phases.len() && predicate_holds(&graph.phases[next.completed].predicate, world, graph) {
        next.satisfied[next.completed] = true;
        next.completed += 1;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_furniture;
    use crate::geometry::{rot_x, rot_z, Vec3};

    #[test]
    fn boundary_cases() {
        let cfg = RewardConfig::default();
        let gt = Pose::from_translation(0.04, 0.04, 0.045);
        assert!(is_assembled(&gt, &gt, &cfg));
        let rz = |deg: f64| Pose::new(gt.position, gt.orientation * rot_z(deg.to_radians()));
        assert!(is_assembled(&rz(15.0), &gt, &cfg));
        assert!(!is_assembled(&rz(20.0), &gt, &cfg));
        let shift = |d: Vec3| Pose::new(gt.position + d, gt.orientation);
        assert!(!is_assembled(&shift(Vec3::new(0.008, 0.0, 0.0)), &gt, &cfg));
        assert!(is_assembled(&shift(Vec3::new(0.006, 0.006, 0.006)), &gt, &cfg));
    }

    #[test]
    fn once_per_pair() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = RewardConfig::default();
        let top = Pose::planar(0.1, 0.1, 0.01, 0.3);
        let on = compose_gt(&top, &g);
        let off = Pose::from_translation(-0.2, -0.2, 0.035);
        let mut t = RewardTracker::new(1);
        let seq = [Some(on), Some(off), Some(on)];
        let rewards: Vec<u32> = seq.iter().map(|p| t.update(&[Some(top), *p], &g, &cfg)).collect();
        assert_eq!(rewards, vec![1, 0, 0]);
        assert_eq!(t.total, 1);
    }

    fn compose_gt(top: &Pose, g: &AssemblyGraph) -> Pose {
        crate::geometry::compose_poses(top, &g.pairs[0].gt_relative_pose)
    }

    #[test]
    fn unobserved_parts_are_skipped() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = RewardConfig::default();
        let top = Pose::identity();
        let (r, set) = step_reward(&BTreeSet::new(), &[Some(top), None], &g, &cfg);
        assert_eq!(r, 0);
        assert!(set.is_empty());
    }

    #[test]
    fn persistence_delays_credit() {
        let g = load_furniture("one_leg").unwrap();
        let cfg = RewardConfig {
            persistence_frames: 3,
            ..RewardConfig::default()
        };
        let top = Pose::identity();
        let on = Some(compose_gt(&top, &g));
        let mut t = RewardTracker::new(1);
        let r: Vec<u32> = (0..4).map(|_| t.update(&[Some(top), on], &g, &cfg)).collect();
        assert_eq!(r, vec![0, 0, 1, 0]);
    }

    #[test]
    fn tilt_about_x_counts() {
        let cfg = RewardConfig::default();
        let gt = Pose::identity();
        assert!(is_assembled(&Pose::from_rotation(rot_x(0.2)), &gt, &cfg));
        assert!(!is_assembled(&Pose::from_rotation(rot_x(0.3)), &gt, &cfg));
    }
}
