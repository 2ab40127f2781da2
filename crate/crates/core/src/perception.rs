//! Simulated fiducial detections and their fusion into part pose estimates.
//!
//! Each camera reports noisy marker poses. Detections are screened against
//! that camera's recent history of the same marker, converted into part
//! poses through the catalog marker offsets, averaged per camera, and the two
//! cameras are then averaged.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{AssemblyGraph, PartSpec};
use crate::error::{Error, Result};
use crate::geometry::{average_quaternions, compose_poses, from_rotation_vector, geodesic_angle, rot_axis, Pose, Vec3};
use crate::world::WorldState;

pub const HISTORY_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    Front,
    Rear,
}

impl CameraId {
    pub const ALL: [CameraId; 2] = [CameraId::Front, CameraId::Rear];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub front_position: [f64; 3],
    pub rear_position: [f64; 3],
    /// Markers seen more obliquely than this are not detected, radians.
    pub max_view_angle: f64,
    /// Markers closer than this to the grip point are hidden by the fingers.
    pub occlusion_radius: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            front_position: [0.0, -0.8, 0.6],
            rear_position: [0.0, 0.8, 0.6],
            max_view_angle: 75f64.to_radians(),
            occlusion_radius: 0.02,
        }
    }
}

impl CameraConfig {
    pub fn position(&self, cam: CameraId) -> Vec3 {
        Vec3::from(match cam {
            CameraId::Front => self.front_position,
            CameraId::Rear => self.rear_position,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
    pub dropout_probability: f64,
    /// Chance of a half-turn about a random marker axis.
    pub flip_probability: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            translation_sigma: 0.005,
            rotation_sigma: 0.03,
            dropout_probability: 0.1,
            flip_probability: 0.02,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            translation_sigma: 0.0,
            rotation_sigma: 0.0,
            dropout_probability: 0.0,
            flip_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.translation_sigma >= 0.0 && self.rotation_sigma >= 0.0)
            || !self.translation_sigma.is_finite()
            || !self.rotation_sigma.is_finite()
        {
            return Err(Error::InvalidConfig("noise sigmas must be finite and non-negative".into()));
        }
        if !p_ok(self.dropout_probability) || !p_ok(self.flip_probability) {
            return Err(Error::InvalidConfig("noise probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub camera_id: CameraId,
    pub marker_id: u32,
    pub pose: Pose,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_translation: f64,
    pub max_rotation: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_translation: 0.030,
            max_rotation: 20f64.to_radians(),
        }
    }
}

/// Ground-truth world poses of the markers a camera can currently see.
pub fn visible_markers(world: &WorldState, graph: &AssemblyGraph, camera: CameraId, cams: &CameraConfig) -> Vec<(u32, Pose)> {
    let eye = cams.position(camera);
    let min_cos = cams.max_view_angle.cos();
    let grip = world.ee.pose.position;
    let mut out = Vec::new();
    for (spec, part) in graph.parts.iter().zip(&world.parts) {
        for m in &spec.marker_specs {
            let pose = compose_poses(&part.pose, &m.pose);
            let normal = pose.orientation * Vec3::z();
            let to_eye = (eye - pose.position).normalize();
            if normal.dot(&to_eye) <= min_cos {
                continue;
            }
            if (pose.position - grip).norm() < cams.occlusion_radius {
                continue;
            }
            out.push((m.marker_id, pose));
        }
    }
    out
}

/// Noisy detections for one camera; consumes the random stream in marker order.
pub fn simulate_detections<R: Rng + ?Sized>(
    world: &WorldState,
    graph: &AssemblyGraph,
    camera: CameraId,
    cams: &CameraConfig,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<MarkerDetection> {
    let trans = Normal::new(0.0, noise.translation_sigma).expect("validated sigma");
    let rot = Normal::new(0.0, noise.rotation_sigma).expect("validated sigma");
    let mut out = Vec::new();
    for (marker_id, truth) in visible_markers(world, graph, camera, cams) {
        if rng.random::<f64>() < noise.dropout_probability {
            continue;
        }
        let dp = Vec3::new(trans.sample(rng), trans.sample(rng), trans.sample(rng));
        let dr = Vec3::new(rot.sample(rng), rot.sample(rng), rot.sample(rng));
        let mut q = truth.orientation * from_rotation_vector(&dr);
        if rng.random::<f64>() < noise.flip_probability {
            let axis = match rng.random_range(0..3) {
                0 => Vec3::x(),
                1 => Vec3::y(),
                _ => Vec3::z(),
            };
            q *= rot_axis(&axis, std::f64::consts::PI);
        }
        out.push(MarkerDetection {
            camera_id: camera,
            marker_id,
            pose: Pose::new(truth.position + dp, q),
            tick: world.tick,
        });
    }
    out
}

/// Recent detections of each marker, per camera.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionHistory {
    entries: BTreeMap<(CameraId, u32), VecDeque<MarkerDetection>>,
}

impl DetectionHistory {
    pub fn get(&self, camera: CameraId, marker_id: u32) -> Option<&VecDeque<MarkerDetection>> {
        self.entries.get(&(camera, marker_id))
    }

    pub fn push(&mut self, d: MarkerDetection) {
        let buf = self.entries.entry((d.camera_id, d.marker_id)).or_default();
        if buf.len() == HISTORY_LEN {
            buf.pop_front();
        }
        buf.push_back(d);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Robust center of a short pose history: component-wise median position
/// and the medoid orientation (the entry closest to all others).
pub fn history_center(entries: &VecDeque<MarkerDetection>) -> Pose {
    let pos = Vec3::new(
        median(entries.iter().map(|d| d.pose.position.x).collect()),
        median(entries.iter().map(|d| d.pose.position.y).collect()),
        median(entries.iter().map(|d| d.pose.position.z).collect()),
    );
    let medoid = entries
        .iter()
        .min_by(|a, b| {
            let cost = |d: &MarkerDetection| {
                entries
                    .iter()
                    .map(|o| geodesic_angle(&d.pose.orientation, &o.pose.orientation))
                    .sum::<f64>()
            };
            cost(a).total_cmp(&cost(b))
        })
        .expect("non-empty history");
    Pose::new(pos, medoid.pose.orientation)
}

/// Accepts a detection unless it departs from the marker's recent history.
/// Until the history is full every detection is accepted.
pub fn filter_outlier(candidate: &MarkerDetection, history: &DetectionHistory, cfg: &FilterConfig) -> bool {
    let Some(entries) = history.get(candidate.camera_id, candidate.marker_id) else {
        return true;
    };
    if entries.len() < HISTORY_LEN {
        return true;
    }
    let center = history_center(entries);
    let dt = (candidate.pose.position - center.position).norm();
    let dr = geodesic_angle(&candidate.pose.orientation, &center.orientation);
    dt <= cfg.max_translation && dr <= cfg.max_rotation
}

/// Part pose from the detections of its markers on one camera.
pub fn part_pose_from_markers(detections: &[MarkerDetection], part: &PartSpec) -> Option<Pose> {
    let mut dets: Vec<&MarkerDetection> = detections.iter().collect();
    // orientation sign reference follows the lowest marker id
    dets.sort_by_key(|d| d.marker_id);
    let mut positions = Vec3::zeros();
    let mut orientations = Vec::new();
    for d in dets {
        let spec = part.marker_specs.iter().find(|m| m.marker_id == d.marker_id)?;
        let canonical = compose_poses(&d.pose, &spec.pose.inverse());
        positions += canonical.position;
        orientations.push(canonical.orientation);
    }
    if orientations.is_empty() {
        return None;
    }
    let q = average_quaternions(&orientations).ok()?;
    Some(Pose::new(positions / orientations.len() as f64, q))
}

pub fn fuse_estimates(front: Option<Pose>, rear: Option<Pose>) -> Option<Pose> {
    match (front, rear) {
        (Some(a), Some(b)) => {
            let q = average_quaternions(&[a.orientation, b.orientation]).ok()?;
            Some(Pose::new((a.position + b.position) * 0.5, q))
        }
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartEstimate {
    /// Last fused pose, if the part was ever seen.
    pub pose: Option<Pose>,
    /// Frames since the part was last detected.
    pub staleness: u32,
}

impl PartEstimate {
    pub fn observed(&self, max_staleness: u32) -> bool {
        self.pose.is_some() && self.staleness <= max_staleness
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub noise: NoiseModel,
    pub filter: FilterConfig,
    pub cameras: CameraConfig,
    /// Frames a held-over estimate stays usable.
    pub max_staleness: u32,
    /// Frames run at reset to populate the detection history.
    pub warmup_frames: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            noise: NoiseModel::default(),
            filter: FilterConfig::default(),
            cameras: CameraConfig::default(),
            max_staleness: 10,
            warmup_frames: HISTORY_LEN as u32,
        }
    }
}

/// Per-frame outcome, kept for diagnostics and tests.
#[derive(Debug, Clone, Default)]
pub struct FrameReport {
    pub detections: Vec<MarkerDetection>,
    pub accepted: Vec<bool>,
    /// Per-camera per-part estimates before cross-camera fusion.
    pub per_camera: BTreeMap<CameraId, Vec<Option<Pose>>>,
}

/// Stateful estimator owned by one environment.
#[derive(Debug, Clone)]
pub struct Perception {
    pub history: DetectionHistory,
    pub estimates: Vec<PartEstimate>,
}

impl Perception {
    pub fn new(n_parts: usize) -> Self {
        Perception {
            history: DetectionHistory::default(),
            estimates: vec![
                PartEstimate {
                    pose: None,
                    staleness: 0
                };
                n_parts
            ],
        }
    }

    /// Observes the world from both cameras and updates the fused estimates.
    ///
    /// All detections of a frame are screened against the same history
    /// snapshot, then every detection enters the history. Feeding rejected
    /// detections back keeps a marker that really moved from being locked out.
    pub fn process_frame<R: Rng + ?Sized>(
        &mut self,
        world: &WorldState,
        graph: &AssemblyGraph,
        cfg: &PerceptionConfig,
        rng: &mut R,
    ) -> FrameReport {
        let mut report = FrameReport::default();
        for cam in CameraId::ALL {
            report
                .detections
                .extend(simulate_detections(world, graph, cam, &cfg.cameras, &cfg.noise, rng));
        }
        report.accepted = report
            .detections
            .iter()
            .map(|d| filter_outlier(d, &self.history, &cfg.filter))
            .collect();
        for d in &report.detections {
            self.history.push(*d);
        }
        for cam in CameraId::ALL {
            let per_part: Vec<Option<Pose>> = graph
                .parts
                .iter()
                .map(|spec| {
                    let mine: Vec<MarkerDetection> = report
                        .detections
                        .iter()
                        .zip(&report.accepted)
                        .filter(|(d, ok)| {
                            **ok && d.camera_id == cam && spec.marker_specs.iter().any(|m| m.marker_id == d.marker_id)
                        })
                        .map(|(d, _)| *d)
                        .collect();
                    part_pose_from_markers(&mine, spec)
                })
                .collect();
            report.per_camera.insert(cam, per_part);
        }
        for i in 0..graph.n_parts() {
            let fused = fuse_estimates(report.per_camera[&CameraId::Front][i], report.per_camera[&CameraId::Rear][i]);
            let est = &mut self.estimates[i];
            match fused {
                Some(p) => {
                    est.pose = Some(p);
                    est.staleness = 0;
                }
                None => est.staleness = est.staleness.saturating_add(1),
            }
        }
        report
    }

    /// Poses usable for reward evaluation; stale or never-seen parts are `None`.
    pub fn usable_poses(&self, max_staleness: u32) -> Vec<Option<Pose>> {
        self.estimates
            .iter()
            .map(|e| if e.observed(max_staleness) { e.pose } else { None })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::load_furniture;
    use crate::geometry::{rot_x, rot_z};
    use crate::world::{reset_world, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(marker_id: u32, pose: Pose) -> MarkerDetection {
        MarkerDetection {
            camera_id: CameraId::Front,
            marker_id,
            pose,
            tick: 0,
        }
    }

    #[test]
    fn warm_up_accepts_anything() {
        let mut h = DetectionHistory::default();
        let cfg = FilterConfig::default();
        for _ in 0..4 {
            h.push(det(1, Pose::identity()));
        }
        assert!(filter_outlier(&det(1, Pose::from_translation(1.0, 0.0, 0.0)), &h, &cfg));
    }

    #[test]
    fn stable_history_accepts_match_and_rejects_flip() {
        let mut h = DetectionHistory::default();
        let cfg = FilterConfig::default();
        let p = Pose::planar(0.1, 0.2, 0.0, 0.3);
        for _ in 0..5 {
            h.push(det(1, p));
        }
        assert!(filter_outlier(&det(1, p), &h, &cfg));
        let flipped = Pose::new(p.position, p.orientation * rot_x(std::f64::consts::PI));
        assert!(!filter_outlier(&det(1, flipped), &h, &cfg));
    }

    #[test]
    fn history_capacity_is_five() {
        let mut h = DetectionHistory::default();
        for i in 0..9 {
            let mut d = det(3, Pose::identity());
            d.tick = i;
            h.push(d);
        }
        let e = h.get(CameraId::Front, 3).unwrap();
        assert_eq!(e.len(), 5);
        assert_eq!(e.front().unwrap().tick, 4);
    }

    #[test]
    fn opposite_markers_give_same_part_pose() {
        let g = load_furniture("one_leg").unwrap();
        let part = &g.parts[1];
        let truth = Pose::planar(0.05, -0.1, 0.035, 0.7);
        let dets: Vec<MarkerDetection> = part
            .marker_specs
            .iter()
            .filter(|m| m.pose.position.y.abs() > 1e-9)
            .map(|m| det(m.marker_id, compose_poses(&truth, &m.pose)))
            .collect();
        assert_eq!(dets.len(), 2);
        let est = part_pose_from_markers(&dets, part).unwrap();
        assert!((est.position - truth.position).norm() < 1e-12);
        assert!(geodesic_angle(&est.orientation, &truth.orientation) < 1e-9);
        assert!(part_pose_from_markers(&[], part).is_none());
    }

    #[test]
    fn fusion_cases() {
        let a = Pose::from_translation(0.10, 0.0, 0.0);
        let b = Pose::from_translation(0.12, 0.0, 0.0);
        let f = fuse_estimates(Some(a), Some(b)).unwrap();
        assert!((f.position.x - 0.11).abs() < 1e-15);
        assert_eq!(fuse_estimates(Some(a), None), Some(a));
        assert_eq!(fuse_estimates(None, None), None);
        let p = Pose::planar(0.0, 0.1, 0.0, 0.5);
        let f = fuse_estimates(Some(p), Some(p)).unwrap();
        assert!((f.position - p.position).norm() < 1e-15);
        assert!(geodesic_angle(&f.orientation, &p.orientation) < 1e-12);
    }

    #[test]
    fn zero_noise_detections_are_exact() {
        let g = load_furniture("lamp").unwrap();
        let w = reset_world(&g, &g.base_poses, 0, &WorldConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams = CameraConfig::default();
        let d = simulate_detections(&w, &g, CameraId::Front, &cams, &NoiseModel::zero(), &mut rng);
        let truth = visible_markers(&w, &g, CameraId::Front, &cams);
        assert_eq!(d.len(), truth.len());
        for (d, (id, p)) in d.iter().zip(&truth) {
            assert_eq!(d.marker_id, *id);
            assert!((d.pose.position - p.position).norm() < 1e-15);
        }
        let mut all_drop = NoiseModel::zero();
        all_drop.dropout_probability = 1.0;
        assert!(simulate_detections(&w, &g, CameraId::Front, &cams, &all_drop, &mut rng).is_empty());
    }

    #[test]
    fn every_part_visible_to_both_cameras_at_rest() {
        for id in crate::catalog::BUILTIN_FURNITURE {
            let g = load_furniture(id).unwrap();
            let w = reset_world(&g, &g.base_poses, 0, &WorldConfig::default()).unwrap();
            let cams = CameraConfig::default();
            for cam in CameraId::ALL {
                let seen = visible_markers(&w, &g, cam, &cams);
                for spec in &g.parts {
                    assert!(
                        spec.marker_specs.iter().any(|m| seen.iter().any(|(i, _)| *i == m.marker_id)),
                        "{id}/{} hidden from {cam:?}",
                        spec.id
                    );
                }
            }
        }
    }

    #[test]
    fn yaw_invariance_of_medoid() {
        let mut buf = VecDeque::new();
        for a in [0.1, 0.12, 0.11, 2.0, 0.09] {
            buf.push_back(det(0, Pose::from_rotation(rot_z(a))));
        }
        let c = history_center(&buf);
        assert!(geodesic_angle(&c.orientation, &rot_z(0.11)) < 1e-12);
    }
}
