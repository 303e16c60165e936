//! Dressing episodes: observation construction, reward, metrics and the
//! per-step trajectory record.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clothsim::{
    build_sleeve, sample_garment_points, ClothParams, ClothState, GarmentSpec, GripperState,
    RigidDelta, SleeveTopology,
};
use crate::controllers::SelectionDiagnostics;
use crate::geometry::{ArmModel, ArmPoseSpec};
use crate::neural::{PointFeature, POINT_DIM};
use crate::rng::derive_seed;
use crate::{Error, Result, Vec3};

pub use crate::clothsim::ForceRecord;

pub const ACTION_DIM: usize = 6;

/// Penetration force level (sim units) above which `r_p` applies.
pub const PENETRATION_FORCE_MAX: f64 = 1000.0;
pub const PENETRATION_PENALTY_SLOPE: f64 = 0.001;
/// Gripper-to-arm distance (m) below which `r_c` applies.
pub const CONTACT_DISTANCE_MIN: f64 = 0.01;
pub const CONTACT_PENALTY: f64 = -0.01;
/// Opening-to-arm distance (m) under which `r_d` is a bonus.
pub const DEVIATION_NEAR: f64 = 0.03;
/// Opening-to-arm distance (m) over which `r_d` is a penalty.
pub const DEVIATION_FAR: f64 = 0.075;
pub const DEVIATION_BONUS: f64 = 0.02;
pub const DEVIATION_PENALTY: f64 = -0.05;
/// Reward per meter of dressing progress.
pub const PROGRESS_SCALE: f64 = 10.0;

/// Point coordinates are fed to networks relative to the end effector and
/// multiplied by this factor.
pub const FEATURE_SCALE: f64 = 5.0;

/// Normalized end-effector motion, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub translation: [f64; 3],
    /// Axis-angle.
    pub rotation: [f64; 3],
}

impl Action {
    pub fn from_array(a: [f64; ACTION_DIM]) -> Self {
        Self {
            translation: [a[0], a[1], a[2]],
            rotation: [a[3], a[4], a[5]],
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let (t, r) = (self.translation, self.rotation);
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }

    pub fn clamped(&self) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum()
    }
}

/// Segmented point cloud: garment, static arm, end effector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub garment: Vec<Vec3>,
    /// Captured at reset and shared by every observation of the episode.
    pub arm: Arc<Vec<Vec3>>,
    pub eef: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Garment,
    Arm,
    EndEffector,
}

impl PointSource {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            PointSource::Garment => [1.0, 0.0, 0.0],
            PointSource::Arm => [0.0, 1.0, 0.0],
            PointSource::EndEffector => [0.0, 0.0, 1.0],
        }
    }
}

impl Observation {
    pub fn len(&self) -> usize {
        self.garment.len() + self.arm.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[garment; arm; eef]` with their source tags, world coordinates.
    pub fn tagged_points(&self) -> Vec<(Vec3, PointSource)> {
        self.garment
            .iter()
            .map(|p| (*p, PointSource::Garment))
            .chain(self.arm.iter().map(|p| (*p, PointSource::Arm)))
            .chain(std::iter::once((self.eef, PointSource::EndEffector)))
            .collect()
    }

    /// Network input: eef-relative scaled coordinates plus one-hot tag.
    pub fn features(&self) -> Vec<PointFeature> {
        self.tagged_points()
            .into_iter()
            .map(|(p, src)| {
                let rel = (p - self.eef) * FEATURE_SCALE;
                let tag = src.one_hot();
                let mut f = [0.0; POINT_DIM];
                f[..3].copy_from_slice(rel.as_slice());
                f[3..].copy_from_slice(&tag);
                f
            })
            .collect()
    }

    /// Hex SHA-256 prefix over the bit patterns of every point.
    pub fn summary_hash(&self) -> String {
        let mut h = Sha256::new();
        for (p, src) in self.tagged_points() {
            for v in p.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([src as u8]);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSettings {
    /// Meters of gripper travel per unit translation action.
    pub translation_scale: f64,
    /// Radians of gripper rotation per unit rotation action.
    pub rotation_scale: f64,
    pub garment_samples: usize,
    pub arm_samples: usize,
    /// Zero-motion steps run at reset so the sleeve drapes before step 0.
    pub settle_steps: usize,
}

impl Default for EnvSettings {
    fn default() -> Self {
        Self {
            translation_scale: 0.012,
            rotation_scale: 0.05,
            garment_samples: 64,
            arm_samples: 32,
            settle_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub force_threshold: f64,
    pub arm_spec: ArmPoseSpec,
    pub cloth_params: ClothParams,
    pub garment: GarmentSpec,
    pub seed: u64,
    pub settings: EnvSettings,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Params("horizon must be >= 1".into()));
        }
        if !(self.force_threshold > 0.0) {
            return Err(Error::Params("force_threshold must be > 0".into()));
        }
        self.arm_spec.validate()?;
        self.cloth_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_m: f64,
    pub r_p: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub total: f64,
}

/// Dressing reward from the step's force `f` (sim units), gripper-to-arm
/// distance `d_e`, opening-to-arm-axis distance `d_g` and arc-length
/// progress (m).
pub fn compute_reward(f: f64, d_e: f64, d_g: f64, progress_delta: f64) -> RewardBreakdown {
    let r_m = PROGRESS_SCALE * progress_delta;
    let r_p = -PENETRATION_PENALTY_SLOPE * (f - PENETRATION_FORCE_MAX).max(0.0);
    let r_c = if d_e < CONTACT_DISTANCE_MIN {
        CONTACT_PENALTY
    } else {
        0.0
    };
    let r_d = if d_g < DEVIATION_NEAR {
        DEVIATION_BONUS
    } else if d_g > DEVIATION_FAR {
        DEVIATION_PENALTY
    } else {
        0.0
    };
    RewardBreakdown {
        r_m,
        r_p,
        r_c,
        r_d,
        total: r_m + r_p + r_c + r_d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub dressed_distance: f64,
    pub d_e: f64,
    pub d_g: f64,
    pub progress_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub force: ForceRecord,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct DressingEnv {
    config: EpisodeConfig,
    arm: ArmModel,
    topology: SleeveTopology,
    cloth: ClothState,
    arm_points: Arc<Vec<Vec3>>,
    t: usize,
    dressed: f64,
    done: bool,
    faulted: bool,
}

impl DressingEnv {
    pub fn reset(config: EpisodeConfig) -> Result<(Self, Observation)> {
        config.validate()?;
        let arm = ArmModel::from_pose(&config.arm_spec)?;
        let topology = SleeveTopology::tube(&config.garment)?;
        let gripper = GripperState::initial(&arm, &topology);
        let mut cloth = build_sleeve(&topology, &arm, &gripper)?;
        for _ in 0..config.settings.settle_steps {
            cloth.step(&topology, &config.cloth_params, &RigidDelta::default(), &arm)?;
        }
        let arm_points = Arc::new(arm.surface_points(config.settings.arm_samples));
        let mut env = Self {
            config,
            arm,
            topology,
            cloth,
            arm_points,
            t: 0,
            dressed: 0.0,
            done: false,
            faulted: false,
        };
        env.dressed = env.arm.dressed_distance(&env.leading_point());
        let obs = env.observe();
        Ok((env, obs))
    }

    fn observe(&self) -> Observation {
        let seed = derive_seed(self.config.seed, &[0x6f62_73, self.t as u64]);
        Observation {
            garment: sample_garment_points(&self.cloth, self.config.settings.garment_samples, seed),
            arm: Arc::clone(&self.arm_points),
            eef: self.cloth.gripper.position,
        }
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn arm(&self) -> &ArmModel {
        &self.arm
    }

    pub fn cloth(&self) -> &ClothState {
        &self.cloth
    }

    pub fn topology(&self) -> &SleeveTopology {
        &self.topology
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted
    }

    pub fn dressed_distance(&self) -> f64 {
        self.dressed
    }

    /// Centroid of the sleeve opening (ring 0).
    pub fn leading_point(&self) -> Vec3 {
        self.cloth.centroid(self.topology.ring(0))
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = action.clamped();
        let s = &self.config.settings;
        let delta = RigidDelta {
            translation: a.translation_vec() * s.translation_scale,
            rotation: Vec3::from(a.rotation) * s.rotation_scale,
        };
        let force = match self
            .cloth
            .step(&self.topology, &self.config.cloth_params, &delta, &self.arm)
        {
            Ok(f) => f,
            Err(e) => {
                self.done = true;
                self.faulted = true;
                return Err(e);
            }
        };
        self.t += 1;
        let leading = self.leading_point();
        let dressed = self.arm.dressed_distance(&leading);
        let info = StepInfo {
            dressed_distance: dressed,
            d_e: self.arm.signed_distance(&self.cloth.gripper.position).max(0.0),
            d_g: self.arm.axis_distance(&leading),
            progress_delta: dressed - self.dressed,
        };
        self.dressed = dressed;
        let reward = compute_reward(force.magnitude, info.d_e, info.d_g, info.progress_delta);
        self.done = self.t >= self.config.horizon;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            force,
            done: self.done,
            info,
        })
    }
}

/// Fraction of the arm covered when the opening is at `leading_point`.
pub fn dressed_ratio(arm: &ArmModel, leading_point: &Vec3) -> f64 {
    arm.dressed_distance(leading_point) / arm.total_length()
}

/// Mean of `max(0, f_t - tau)` over the steps after the first `skip`.
pub fn average_force_violation(forces: &[f64], tau: f64, skip: usize) -> Result<f64> {
    if forces.len() <= skip {
        return Err(Error::TrajectoryTooShort {
            len: forces.len(),
            skip,
        });
    }
    let tail = &forces[skip..];
    Ok(tail.iter().map(|f| (f - tau).max(0.0)).sum::<f64>() / tail.len() as f64)
}

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub method: String,
    pub pose_region: String,
    pub garment_id: String,
    pub seed: u64,
    pub arm_total_length: f64,
    pub forearm_length: f64,
    pub force_threshold: f64,
    pub initial_dressed_distance: f64,
    /// Set when the simulator diverged; the trajectory ends at the fault.
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub obs_hash: String,
    pub action: Action,
    pub force: ForceRecord,
    pub reward: RewardBreakdown,
    pub info: StepInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SelectionDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn final_dressed_distance(&self) -> f64 {
        self.steps
            .last()
            .map_or(self.header.initial_dressed_distance, |s| s.info.dressed_distance)
    }

    /// Final dressed distance over arm length.
    pub fn arm_dressed_ratio(&self) -> f64 {
        (self.final_dressed_distance() / self.header.arm_total_length).clamp(0.0, 1.0)
    }

    pub fn forces(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.force.magnitude).collect()
    }

    pub fn average_force_violation(&self, tau: f64, skip: usize) -> Result<f64> {
        average_force_violation(&self.forces(), tau, skip)
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn config(horizon: usize) -> EpisodeConfig {
        EpisodeConfig {
            horizon,
            force_threshold: 40.0,
            arm_spec: ArmPoseSpec::default(),
            cloth_params: ClothParams::sim_a(),
            garment: GarmentSpec::default(),
            seed: 17,
            settings: EnvSettings::default(),
        }
    }

    #[test]
    fn reward_constants() {
        let r = compute_reward(0.0, 0.05, 0.02, 0.0);
        assert_eq!(r.r_d, 0.02);
        let r = compute_reward(0.0, 0.005, 0.05, 0.0);
        assert_eq!(r.r_c, -0.01);
        assert_eq!(r.r_d, 0.0);
        let r = compute_reward(1200.0, 0.05, 0.08, 0.0);
        assert!((r.r_p + 0.2).abs() < 1e-12);
        assert_eq!(r.r_d, -0.05);
        let r = compute_reward(999.0, 0.01, 0.075, 0.01);
        assert_eq!((r.r_p, r.r_c, r.r_d), (0.0, 0.0, 0.0));
        assert!((r.r_m - 0.1).abs() < 1e-15);
    }

    #[test]
    fn violation_examples() {
        assert_eq!(average_force_violation(&[10.0, 20.0, 39.0], 40.0, 0).unwrap(), 0.0);
        let v = average_force_violation(&[0.0, 900.0, 50.0, 30.0, 45.0], 40.0, 2).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        let mut forces = vec![1e6; 25];
        forces.extend(vec![0.0; 10]);
        assert_eq!(average_force_violation(&forces, 40.0, 25).unwrap(), 0.0);
        assert!(matches!(
            average_force_violation(&[1.0; 25], 40.0, 25),
            Err(Error::TrajectoryTooShort { len: 25, skip: 25 })
        ));
    }

    #[test]
    fn dressed_ratio_examples() {
        let arm = ArmModel::new(
            Vec3::zeros(),
            Vec3::new(0.3, 0.0, 0.0),
            Vec3::new(0.3, 0.3, 0.0),
            0.04,
            0.05,
        )
        .unwrap();
        assert_eq!(dressed_ratio(&arm, &arm.shoulder()), 1.0);
        assert_eq!(dressed_ratio(&arm, &arm.fingertip()), 0.0);
        assert!((dressed_ratio(&arm, &arm.elbow()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn action_clamp() {
        let a = Action::from_array([2.0, -3.0, 0.5, 0.0, 1.5, -1.0]).clamped();
        assert_eq!(a.to_array(), [1.0, -1.0, 0.5, 0.0, 1.0, -1.0]);
        assert!(a.is_valid());
    }

    #[test]
    fn reset_contract() {
        let (env, obs) = DressingEnv::reset(config(5)).unwrap();
        assert_eq!(obs.len(), obs.garment.len() + obs.arm.len() + 1);
        assert!(env.dressed_distance() <= 0.05 * env.arm().total_length(), "{}", env.dressed_distance());
        let (_, again) = DressingEnv::reset(config(5)).unwrap();
        assert_eq!(obs, again);
        let feats = obs.features();
        assert_eq!(feats.len(), obs.len());
        assert_eq!(feats.last().unwrap(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(feats.iter().filter(|f| f[5] == 1.0).count(), 1);
    }

    #[test]
    fn horizon_one_finishes_after_one_step() {
        let (mut env, _) = DressingEnv::reset(config(1)).unwrap();
        let out = env.step(&Action::default()).unwrap();
        assert!(out.done);
        assert!(matches!(env.step(&Action::default()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn zero_action_in_equilibrium() {
        let mut cfg = config(3);
        cfg.cloth_params.gravity = [0.0; 3];
        let (mut env, _) = DressingEnv::reset(cfg).unwrap();
        let out = env.step(&Action::default()).unwrap();
        assert_eq!(out.reward.r_m, 0.0);
        assert_eq!(out.force.magnitude, 0.0);
    }

    #[test]
    fn arm_points_static_and_total_consistent() {
        let (mut env, first) = DressingEnv::reset(config(8)).unwrap();
        let push = Action::from_array([-1.0, 0.3, 0.0, 0.0, 0.0, 0.2]);
        while !env.is_done() {
            let out = env.step(&push).unwrap();
            assert!(Arc::ptr_eq(&out.observation.arm, &first.arm));
            assert_eq!(*out.observation.arm, *first.arm);
            let r = out.reward;
            assert_eq!(r.total, r.r_m + r.r_p + r.r_c + r.r_d);
        }
    }
}
