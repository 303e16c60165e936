//! Action selection: the force-constrained controller, its baselines and
//! the episode rollout loop shared by training, collection and evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    Action, DressingEnv, EpisodeConfig, Observation, StepRecord, Trajectory, TrajectoryHeader,
};
use crate::force::{mixture_draw, CandidateSource, ForceHistory, ForceModel};
use crate::geometry::ArmModel;
use crate::neural::PointFeature;
use crate::policy::{gaussian_log_prob, ActionProposer};
use crate::rng::{derive_seed, rng_for};
use crate::{Error, Result, Vec3};

/// Everything a controller may look at when choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub observation: &'a Observation,
    pub features: &'a [PointFeature],
    pub history: &'a ForceHistory,
    pub arm: &'a ArmModel,
    pub dressed_distance: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDiagnostics {
    pub candidates: usize,
    pub feasible_count: usize,
    pub chosen_source: CandidateSource,
    pub chosen_predicted_force: f64,
    /// Filled in after the step executes.
    pub realized_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub actions: Vec<Action>,
    pub sources: Vec<CandidateSource>,
    pub log_probs: Vec<f64>,
    pub predicted_forces: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcvpConfig {
    pub k: usize,
    pub tau: f64,
    pub p: f64,
    /// Extra candidate batches drawn while nothing is feasible.
    #[serde(default)]
    pub resample_budget: usize,
}

impl Default for FcvpConfig {
    fn default() -> Self {
        Self {
            k: 64,
            tau: 400.0,
            p: 0.1,
            resample_budget: 0,
        }
    }
}

impl FcvpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Params("K must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Params("tau must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Params("p must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Highest log-probability candidate with predicted force at most `tau`,
/// lowest index on ties; the lowest predicted force if none qualifies.
/// Returns the chosen index and the feasible count.
pub fn select_index(predicted_forces: &[f64], log_probs: &[f64], tau: f64) -> (usize, usize) {
    assert_eq!(predicted_forces.len(), log_probs.len());
    assert!(!predicted_forces.is_empty());
    let mut best: Option<usize> = None;
    let mut feasible = 0;
    for (i, (&f, &lp)) in predicted_forces.iter().zip(log_probs).enumerate() {
        if f <= tau {
            feasible += 1;
            if best.is_none_or(|b| lp > log_probs[b]) {
                best = Some(i);
            }
        }
    }
    let idx = best.unwrap_or_else(|| {
        let mut lo = 0;
        for (i, &f) in predicted_forces.iter().enumerate() {
            if f < predicted_forces[lo] {
                lo = i;
            }
        }
        lo
    });
    (idx, feasible)
}

pub fn sample_candidates(
    policy: &dyn ActionProposer,
    force_model: &ForceModel,
    ctx: &StepContext<'_>,
    k: usize,
    p: f64,
    seed: u64,
) -> CandidateSet {
    let mean = policy.mean(ctx);
    let sigma = policy.sigma();
    let mut rng = rng_for(seed, &[0x6663_7670]);
    let (actions, sources): (Vec<Action>, Vec<CandidateSource>) =
        (0..k).map(|_| mixture_draw(&mean, sigma, p, &mut rng)).unzip();
    let log_probs = actions.iter().map(|a| gaussian_log_prob(&mean, sigma, a)).collect();
    let predicted_forces = force_model.predict_batch(ctx.features, ctx.history, &actions);
    CandidateSet {
        actions,
        sources,
        log_probs,
        predicted_forces,
    }
}

/// Random-shooting solution of: maximize policy density subject to
/// predicted next-step force at most tau.
pub fn fcvp_select(
    policy: &dyn ActionProposer,
    force_model: &ForceModel,
    ctx: &StepContext<'_>,
    config: &FcvpConfig,
    seed: u64,
) -> (Action, SelectionDiagnostics) {
    let mut set = sample_candidates(policy, force_model, ctx, config.k, config.p, seed);
    let mut total = config.k;
    for round in 0..config.resample_budget {
        if set.predicted_forces.iter().any(|&f| f <= config.tau) {
            break;
        }
        set = sample_candidates(policy, force_model, ctx, config.k, config.p, derive_seed(seed, &[round as u64 + 1]));
        total += config.k;
    }
    let (i, feasible) = select_index(&set.predicted_forces, &set.log_probs, config.tau);
    (
        set.actions[i],
        SelectionDiagnostics {
            candidates: total,
            feasible_count: feasible,
            chosen_source: set.sources[i],
            chosen_predicted_force: set.predicted_forces[i],
            realized_force: None,
        },
    )
}

/// The policy's mode.
pub fn vision_only_select(policy: &dyn ActionProposer, ctx: &StepContext<'_>) -> Action {
    Action::from_array(policy.mean(ctx))
}

/// Policy sample with uniform replacement at probability `p`.
pub fn vision_random_select(policy: &dyn ActionProposer, ctx: &StepContext<'_>, p: f64, seed: u64) -> Action {
    crate::force::mixture_sample(policy, ctx, p, seed).0
}

/// `r - w * max(0, f - tau)`.
pub fn penalized_reward(r: f64, f: f64, tau: f64, w: f64) -> f64 {
    r - w * (f - tau).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceOnlyConfig {
    pub k: usize,
    pub half_angle: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for ForceOnlyConfig {
    fn default() -> Self {
        Self {
            k: 64,
            half_angle: std::f64::consts::FRAC_PI_4,
            w1: 0.001,
            w2: 1.0,
            w3: 0.1,
        }
    }
}

/// `w1 |f| - w2 (d . a_translation) + w3 |a|^2`.
pub fn force_only_cost(predicted_force: f64, d: &Vec3, a: &Action, cfg: &ForceOnlyConfig) -> f64 {
    cfg.w1 * predicted_force.abs() - cfg.w2 * d.dot(&a.translation_vec()) + cfg.w3 * a.norm_squared()
}

/// The arm segment the sleeve is currently on, as a vector: fingertip to
/// elbow, then elbow to shoulder once the forearm is covered.
pub fn progression_direction(arm: &ArmModel, dressed_distance: f64) -> Vec3 {
    if dressed_distance > arm.forearm_length() {
        arm.shoulder() - arm.elbow()
    } else {
        arm.elbow() - arm.fingertip()
    }
}

/// Pure translation with direction uniform on the spherical cap of the given
/// half-angle about `d` and length uniform in `[0, 1]`.
pub fn cone_action<R: Rng>(d: &Vec3, half_angle: f64, rng: &mut R) -> Action {
    let d = d.normalize();
    let cos_t = rng.random_range(half_angle.cos()..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = d.cross(&helper).normalize();
    let v = d.cross(&u);
    let dir = d * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t;
    let r: f64 = rng.random();
    let t = dir * r;
    Action::from_array([t.x, t.y, t.z, 0.0, 0.0, 0.0])
}

pub fn force_only_select(
    force_model: &ForceModel,
    ctx: &StepContext<'_>,
    cfg: &ForceOnlyConfig,
    seed: u64,
) -> (Action, SelectionDiagnostics) {
    let d = progression_direction(ctx.arm, ctx.dressed_distance);
    let mut rng = rng_for(seed, &[0x636f_6e65]);
    let actions: Vec<Action> = (0..cfg.k.max(1)).map(|_| cone_action(&d, cfg.half_angle, &mut rng)).collect();
    let forces = force_model.predict_batch(ctx.features, ctx.history, &actions);
    let mut best = 0;
    let mut best_j = f64::INFINITY;
    for (i, (a, f)) in actions.iter().zip(&forces).enumerate() {
        let j = force_only_cost(*f, &d, a, cfg);
        if j < best_j {
            best_j = j;
            best = i;
        }
    }
    (
        actions[best],
        SelectionDiagnostics {
            candidates: actions.len(),
            feasible_count: actions.len(),
            chosen_source: CandidateSource::Cone,
            chosen_predicted_force: forces[best],
            realized_force: None,
        },
    )
}

/// A per-step action selector.
pub trait Controller {
    /// Force history length the controller needs in its context.
    fn history_len(&self) -> usize;
    fn select(&self, ctx: &StepContext<'_>, seed: u64) -> (Action, Option<SelectionDiagnostics>);
}

/// Acts with a proposer's mean, or by mixture sampling from it.
pub struct ProposerController<'a> {
    pub name: &'a str,
    proposer: &'a dyn ActionProposer,
    mixture_p: Option<f64>,
    history_len: usize,
}

impl<'a> ProposerController<'a> {
    pub fn mean(name: &'a str, proposer: &'a dyn ActionProposer, history_len: usize) -> Self {
        Self {
            name,
            proposer,
            mixture_p: None,
            history_len,
        }
    }

    pub fn mixture(name: &'a str, proposer: &'a dyn ActionProposer, p: f64, history_len: usize) -> Self {
        Self {
            name,
            proposer,
            mixture_p: Some(p),
            history_len,
        }
    }
}

impl Controller for ProposerController<'_> {
    fn history_len(&self) -> usize {
        self.history_len
    }

    fn select(&self, ctx: &StepContext<'_>, seed: u64) -> (Action, Option<SelectionDiagnostics>) {
        match self.mixture_p {
            None => (vision_only_select(self.proposer, ctx), None),
            Some(p) => (vision_random_select(self.proposer, ctx, p, seed), None),
        }
    }
}

pub struct FcvpController<'a> {
    pub policy: &'a dyn ActionProposer,
    pub force_model: &'a ForceModel,
    pub config: FcvpConfig,
}

impl Controller for FcvpController<'_> {
    fn history_len(&self) -> usize {
        self.force_model.history_len()
    }

    fn select(&self, ctx: &StepContext<'_>, seed: u64) -> (Action, Option<SelectionDiagnostics>) {
        let (a, d) = fcvp_select(self.policy, self.force_model, ctx, &self.config, seed);
        (a, Some(d))
    }
}

pub struct ForceOnlyController<'a> {
    pub force_model: &'a ForceModel,
    pub config: ForceOnlyConfig,
}

impl Controller for ForceOnlyController<'_> {
    fn history_len(&self) -> usize {
        self.force_model.history_len()
    }

    fn select(&self, ctx: &StepContext<'_>, seed: u64) -> (Action, Option<SelectionDiagnostics>) {
        let (a, d) = force_only_select(self.force_model, ctx, &self.config, seed);
        (a, Some(d))
    }
}

/// Labels copied into the trajectory header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutMeta {
    pub method: String,
    pub pose_region: String,
    pub garment_id: String,
}

/// Runs one episode to the horizon. A simulator divergence ends the episode
/// early and is recorded in the header.
pub fn rollout(
    config: &EpisodeConfig,
    controller: &dyn Controller,
    meta: RolloutMeta,
    seed: u64,
) -> Result<Trajectory> {
    run_episode(config, controller, meta, seed, false).map(|(t, _)| t)
}

/// As [`rollout`], also returning the point features of every observation
/// (the reset observation first).
pub fn rollout_recording(
    config: &EpisodeConfig,
    controller: &dyn Controller,
    meta: RolloutMeta,
    seed: u64,
) -> Result<(Trajectory, Vec<Vec<PointFeature>>)> {
    run_episode(config, controller, meta, seed, true)
}

fn run_episode(
    config: &EpisodeConfig,
    controller: &dyn Controller,
    meta: RolloutMeta,
    seed: u64,
    record: bool,
) -> Result<(Trajectory, Vec<Vec<PointFeature>>)> {
    let (mut env, mut obs) = DressingEnv::reset(config.clone())?;
    let mut header = TrajectoryHeader {
        method: meta.method,
        pose_region: meta.pose_region,
        garment_id: meta.garment_id,
        seed: config.seed,
        arm_total_length: env.arm().total_length(),
        forearm_length: env.arm().forearm_length(),
        force_threshold: config.force_threshold,
        initial_dressed_distance: env.dressed_distance(),
        fault: None,
    };
    let mut history = ForceHistory::new(controller.history_len());
    let mut steps = Vec::with_capacity(config.horizon);
    let mut features = obs.features();
    let mut recorded = Vec::new();
    while !env.is_done() {
        let t = env.step_index();
        let ctx = StepContext {
            observation: &obs,
            features: &features,
            history: &history,
            arm: env.arm(),
            dressed_distance: env.dressed_distance(),
            step: t,
        };
        let (action, mut diag) = controller.select(&ctx, derive_seed(seed, &[0x7374_6570, t as u64]));
        let obs_hash = obs.summary_hash();
        let outcome = match env.step(&action) {
            Ok(o) => o,
            Err(e @ Error::Diverged { .. }) => {
                header.fault = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(d) = diag.as_mut() {
            d.realized_force = Some(outcome.force.magnitude);
        }
        history.push(outcome.force.vector);
        steps.push(StepRecord {
            t,
            obs_hash,
            action: action.clamped(),
            force: outcome.force,
            reward: outcome.reward,
            info: outcome.info,
            diagnostics: diag,
        });
        if record {
            recorded.push(std::mem::take(&mut features));
        }
        obs = outcome.observation;
        features = obs.features();
    }
    if record {
        recorded.push(features);
    }
    Ok((Trajectory { header, steps }, recorded))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        assert_eq!(select_index(&[10.0, 50.0, 30.0], &[-1.0, -0.1, -2.0], 40.0), (0, 2));
        assert_eq!(select_index(&[50.0, 60.0], &[-1.0, -0.1], 40.0), (0, 0));
        assert_eq!(select_index(&[70.0, 60.0], &[-1.0, -0.1], 40.0), (1, 0));
        assert_eq!(select_index(&[99.0], &[-5.0], 1.0).0, 0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(select_index(&[1.0, 1.0, 1.0], &[-0.5, -0.2, -0.2], 2.0).0, 1);
        assert_eq!(select_index(&[5.0, 3.0, 3.0], &[0.0; 3], 2.0).0, 1);
    }

    #[test]
    fn boundary_force_is_feasible() {
        assert_eq!(select_index(&[40.0, 10.0], &[0.0, -1.0], 40.0), (0, 2));
    }

    #[test]
    fn cost_examples() {
        let cfg = ForceOnlyConfig::default();
        let d = Vec3::x();
        let zero = Action::from_array([0.0; 6]);
        assert_eq!(force_only_cost(0.0, &d, &zero, &cfg), 0.0);
        let a = Action::from_array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((force_only_cost(10.0, &d, &a, &cfg) - (-0.465)).abs() < 1e-12);
        assert!(force_only_cost(11.0, &d, &a, &cfg) > force_only_cost(10.0, &d, &a, &cfg));
    }

    #[test]
    fn penalized_reward_examples() {
        assert_eq!(penalized_reward(1.0, 30.0, 40.0, 0.1), 1.0);
        assert!((penalized_reward(1.0, 50.0, 40.0, 0.1)).abs() < 1e-12);
        assert_eq!(penalized_reward(0.7, 500.0, 40.0, 0.0), 0.7);
    }

    #[test]
    fn cone_samples_stay_in_cone() {
        let mut rng = rng_for(3, &[]);
        let d = Vec3::new(-1.0, 0.3, -0.2).normalize();
        let half = 0.6;
        for _ in 0..2000 {
            let a = cone_action(&d, half, &mut rng);
            assert!(a.is_valid());
            let t = a.translation_vec();
            if t.norm() > 1e-12 {
                assert!(d.dot(&t.normalize()) >= half.cos() - 1e-12);
            }
            assert_eq!(&a.rotation, &[0.0; 3]);
        }
    }

    #[test]
    fn stage_switch_at_forearm_length() {
        let arm = ArmModel::from_pose(&Default::default()).unwrap();
        let fore = arm.elbow() - arm.fingertip();
        let upper = arm.shoulder() - arm.elbow();
        assert_eq!(progression_direction(&arm, 0.0), fore);
        assert_eq!(progression_direction(&arm, arm.forearm_length()), fore);
        assert_eq!(progression_direction(&arm, arm.forearm_length() + 1e-9), upper);
    }

    #[test]
    fn config_validation() {
        assert!(FcvpConfig::default().validate().is_ok());
        assert!(FcvpConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(FcvpConfig { p: 1.5, ..Default::default() }.validate().is_err());
        assert!(FcvpConfig { tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
