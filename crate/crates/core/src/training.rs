//! Derivative-free policy training: CEM over policy parameters in the
//! source simulator, and force-aware fine-tuning in the target simulator.

use serde::{Deserialize, Serialize};

use crate::controllers::{penalized_reward, rollout, ProposerController};
use crate::env::{EpisodeConfig, Trajectory};
use crate::policy::{cem_optimize, ActionProposer, CemConfig, CemOutcome, GaussianPolicy, PolicyConfig, ResidualPolicy};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Episodic return under `r - w * max(0, f - tau)`; `w = 0` is the plain
/// return.
pub fn penalized_return(traj: &Trajectory, tau: f64, w: f64) -> f64 {
    traj.steps
        .iter()
        .map(|s| penalized_reward(s.reward.total, s.force.magnitude, tau, w))
        .sum()
}

/// Mean penalized return of the proposer's mean action over `episodes`,
/// skipping diverged rollouts; `None` if every rollout diverged.
pub fn mean_return(
    proposer: &dyn ActionProposer,
    history_len: usize,
    episodes: &[EpisodeConfig],
    w: f64,
    seed: u64,
) -> Result<Option<f64>> {
    let ctrl = ProposerController::mean("train", proposer, history_len);
    let mut total = 0.0;
    let mut kept = 0usize;
    for (k, cfg) in episodes.iter().enumerate() {
        let traj = rollout(cfg, &ctrl, Default::default(), derive_seed(seed, &[k as u64]))?;
        if traj.header.fault.is_none() {
            total += penalized_return(&traj, cfg.force_threshold, w);
            kept += 1;
        }
    }
    Ok((kept > 0).then(|| total / kept as f64))
}

/// The first `eval_episodes` of `pool`, cycling if the pool is shorter.
fn training_episodes(pool: &[EpisodeConfig], cem: &CemConfig) -> Result<Vec<EpisodeConfig>> {
    if pool.is_empty() {
        return Err(Error::Params("no training episodes configured".into()));
    }
    Ok(pool.iter().cycle().take(cem.eval_episodes).cloned().collect())
}

/// Trains the vision policy's parameters by CEM on the plain return.
pub fn train_policy_cem(
    pool: &[EpisodeConfig],
    init: GaussianPolicy,
    cem: &CemConfig,
    seed: u64,
) -> Result<(GaussianPolicy, CemOutcome)> {
    let episodes = training_episodes(pool, cem)?;
    let mut candidate = init.clone();
    let history_len = init.history_len();
    let mut error = None;
    let outcome = cem_optimize(&init.params(), cem, seed, |params| {
        candidate.set_params(params).ok()?;
        match mean_return(&candidate, history_len, &episodes, 0.0, seed) {
            Ok(r) => r,
            Err(e) => {
                error.get_or_insert(e);
                None
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    let outcome = outcome?;
    let mut best = init;
    best.set_params(&outcome.best_params)?;
    Ok((best, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneKind {
    /// Force history concatenated with the point-cloud latent; the whole
    /// network is tuned.
    Multimodal,
    /// Frozen base policy plus a tuned force-conditioned residual.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub kind: FinetuneKind,
    pub history_len: usize,
    /// Force penalty weight `w`.
    pub penalty_weight: f64,
    pub cem: CemConfig,
    /// Residual network widths; unused for the multimodal variant.
    #[serde(default)]
    pub residual: PolicyConfig,
}

/// A fine-tuned policy, ready to act with its mean.
#[derive(Debug, Clone, PartialEq)]
pub enum Finetuned {
    Multimodal(GaussianPolicy),
    Residual(ResidualPolicy),
}

impl Finetuned {
    pub fn proposer(&self) -> &dyn ActionProposer {
        match self {
            Finetuned::Multimodal(p) => p,
            Finetuned::Residual(p) => p,
        }
    }

    pub fn history_len(&self) -> usize {
        match self {
            Finetuned::Multimodal(p) => p.history_len(),
            Finetuned::Residual(p) => p.history_len(),
        }
    }

    pub fn into_any(self) -> crate::policy::AnyPolicy {
        match self {
            Finetuned::Multimodal(p) => crate::policy::AnyPolicy::Gaussian(p),
            Finetuned::Residual(p) => crate::policy::AnyPolicy::Residual(p),
        }
    }
}

/// The untuned starting point: the base policy extended to read force
/// history, behaving exactly like `base`.
pub fn finetune_init(base: &GaussianPolicy, config: &FinetuneConfig, history_scale: f64, seed: u64) -> Result<Finetuned> {
    if base.history_len() != 0 {
        return Err(Error::Params("fine-tuning expects a vision-only base policy".into()));
    }
    match config.kind {
        FinetuneKind::Multimodal => {
            let net = base.network().with_added_extras(3 * config.history_len)?;
            Ok(Finetuned::Multimodal(GaussianPolicy::from_model(
                net,
                base.sigma(),
                config.history_len,
                history_scale,
            )?))
        }
        FinetuneKind::Residual => {
            let rc = PolicyConfig {
                history_len: config.history_len,
                ..config.residual.clone()
            };
            Ok(Finetuned::Residual(ResidualPolicy::new(base.clone(), &rc, history_scale, seed)?))
        }
    }
}

/// CEM fine-tuning in the target simulator on the force-penalized return.
pub fn train_multimodal_finetune(
    pool: &[EpisodeConfig],
    base: &GaussianPolicy,
    config: &FinetuneConfig,
    history_scale: f64,
    seed: u64,
) -> Result<(Finetuned, CemOutcome)> {
    if !(config.penalty_weight >= 0.0) {
        return Err(Error::Params("penalty weight must be >= 0".into()));
    }
    let episodes = training_episodes(pool, &config.cem)?;
    let init = finetune_init(base, config, history_scale, seed)?;
    let mut candidate = init.clone();
    let init_params = match &init {
        Finetuned::Multimodal(p) => p.params(),
        Finetuned::Residual(p) => p.residual_params(),
    };
    let h = config.history_len;
    let w = config.penalty_weight;
    let mut error = None;
    let outcome = cem_optimize(&init_params, &config.cem, seed, |params| {
        match &mut candidate {
            Finetuned::Multimodal(p) => p.set_params(params).ok()?,
            Finetuned::Residual(p) => p.set_residual_params(params).ok()?,
        }
        match mean_return(candidate.proposer(), h, &episodes, w, seed) {
            Ok(r) => r,
            Err(e) => {
                error.get_or_insert(e);
                None
            }
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    let outcome = outcome?;
    let mut best = init;
    match &mut best {
        Finetuned::Multimodal(p) => p.set_params(&outcome.best_params)?,
        Finetuned::Residual(p) => p.set_residual_params(&outcome.best_params)?,
    }
    Ok((best, outcome))
}
