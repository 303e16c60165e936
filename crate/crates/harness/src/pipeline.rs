//! Training, collection, evaluation and ablation pipelines.

use fcvp_core::controllers::{
    rollout, Controller, FcvpController, ForceOnlyController, ProposerController,
};
use fcvp_core::env::{EpisodeConfig, Trajectory};
use fcvp_core::force::{collect_dataset, train_force_model, CollectReport, ForceModel, ForceTrainReport, TransitionSample};
use fcvp_core::policy::{AnyPolicy, CemOutcome, GaussianPolicy};
use fcvp_core::rng::derive_seed;
use fcvp_core::training::{train_multimodal_finetune, train_policy_cem, FinetuneKind};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::grid::{self, Cell};
use crate::io::{ForceRow, ResultRow};
use crate::{HarnessError, Result};

/// Loaded models; a method may only run if the models it needs are present.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub policy: Option<GaussianPolicy>,
    pub force_model: Option<ForceModel>,
    pub multimodal: Option<AnyPolicy>,
    pub residual: Option<AnyPolicy>,
}

fn need<'a, T>(m: &'a Option<T>, name: &str) -> Result<&'a T> {
    m.as_ref().ok_or_else(|| HarnessError::MissingCheckpoint(name.to_string()))
}

impl Models {
    /// Fails with the first missing checkpoint any of `methods` needs.
    pub fn check(&self, methods: &[Method]) -> Result<()> {
        for m in methods {
            match m {
                Method::Fcvp => {
                    need(&self.policy, "policy")?;
                    need(&self.force_model, "force_model")?;
                }
                Method::VisionOnly | Method::VisionRandom => {
                    need(&self.policy, "policy")?;
                }
                Method::ForceOnly => {
                    need(&self.force_model, "force_model")?;
                }
                Method::Multimodal => {
                    need(&self.multimodal, "multimodal")?;
                }
                Method::Residual => {
                    need(&self.residual, "residual")?;
                }
                Method::Scripted => {}
            }
        }
        Ok(())
    }
}

fn episodes(cells: &[Cell]) -> Vec<EpisodeConfig> {
    cells.iter().map(|c| c.episode.clone()).collect()
}

/// History inputs of the force-aware policies are divided by the threshold.
pub fn policy_history_scale(cfg: &ExperimentConfig) -> f64 {
    cfg.experiment.tau
}

pub fn train_policy(cfg: &ExperimentConfig, seed: u64) -> Result<(GaussianPolicy, CemOutcome)> {
    let net = fcvp_core::policy::PolicyConfig {
        history_len: 0,
        ..cfg.policy.network.clone()
    };
    let init = GaussianPolicy::new(&net, 1.0, derive_seed(seed, &[0x706f6c]))?;
    let pool = episodes(&grid::training_pool(cfg, seed));
    Ok(train_policy_cem(&pool, init, &cfg.policy.cem, seed)?)
}

pub fn finetune(
    cfg: &ExperimentConfig,
    base: &GaussianPolicy,
    kind: FinetuneKind,
    seed: u64,
) -> Result<(AnyPolicy, CemOutcome)> {
    let pool = episodes(&grid::finetune_pool(cfg, seed));
    let (p, out) = train_multimodal_finetune(
        &pool,
        base,
        &cfg.finetune_config(kind),
        policy_history_scale(cfg),
        seed,
    )?;
    Ok((p.into_any(), out))
}

pub fn collect(cfg: &ExperimentConfig, policy: &GaussianPolicy, seed: u64) -> Result<(Vec<TransitionSample>, CollectReport)> {
    let pool = episodes(&grid::collect_pool(cfg, seed));
    Ok(collect_dataset(
        &pool,
        policy,
        cfg.experiment.p,
        cfg.collect.stored_history,
        seed,
    )?)
}

pub fn train_force(
    cfg: &ExperimentConfig,
    data: &[TransitionSample],
    history_len: usize,
    seed: u64,
) -> Result<(ForceModel, ForceTrainReport)> {
    Ok(train_force_model(data, &cfg.force_model_config(history_len), seed)?)
}

/// Seed for the controller's own randomness in a cell; shared by all
/// methods so they see the same episode.
fn controller_seed(cell: &Cell) -> u64 {
    derive_seed(cell.episode.seed, &[0x6374_726c])
}

pub fn run_cell(cfg: &ExperimentConfig, models: &Models, method: Method, cell: &Cell) -> Result<Trajectory> {
    let meta = cell.meta(method.name());
    let seed = controller_seed(cell);
    let run = |c: &dyn Controller| rollout(&cell.episode, c, meta.clone(), seed);
    let traj = match method {
        Method::Fcvp => {
            let policy = need(&models.policy, "policy")?;
            let force_model = need(&models.force_model, "force_model")?;
            run(&FcvpController {
                policy,
                force_model,
                config: cfg.fcvp(),
            })
        }
        Method::VisionOnly => run(&ProposerController::mean(method.name(), need(&models.policy, "policy")?, 0)),
        Method::VisionRandom => run(&ProposerController::mixture(
            method.name(),
            need(&models.policy, "policy")?,
            cfg.experiment.p,
            0,
        )),
        Method::ForceOnly => run(&ForceOnlyController {
            force_model: need(&models.force_model, "force_model")?,
            config: cfg.force_only.clone(),
        }),
        Method::Multimodal | Method::Residual => {
            let p = if method == Method::Multimodal {
                need(&models.multimodal, "multimodal")?
            } else {
                need(&models.residual, "residual")?
            };
            run(&ProposerController::mean(method.name(), p, p.history_len()))
        }
        Method::Scripted => run(&ProposerController::mean(method.name(), &cfg.policy.scripted, 0)),
    }?;
    Ok(traj)
}

/// Metrics for one trajectory. A fault keeps the dressed ratio reached
/// before it; the violation averages whatever post-warm-up steps exist.
pub fn result_row(traj: &Trajectory, skip: usize, tau: f64) -> ResultRow {
    let forces = traj.forces();
    let tail = forces.get(skip..).unwrap_or(&[]);
    let avg_violation = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|f| (f - tau).max(0.0)).sum::<f64>() / tail.len() as f64
    };
    ResultRow {
        method: traj.header.method.clone(),
        pose_region: traj.header.pose_region.clone(),
        garment_id: traj.header.garment_id.clone(),
        seed: traj.header.seed,
        dressed_ratio: traj.arm_dressed_ratio(),
        avg_violation,
        episode_fault: traj.header.fault.is_some(),
    }
}

pub fn force_rows(traj: &Trajectory, skip: usize) -> Vec<ForceRow> {
    traj.steps
        .iter()
        .skip(skip)
        .map(|s| ForceRow {
            method: traj.header.method.clone(),
            pose_region: traj.header.pose_region.clone(),
            garment_id: traj.header.garment_id.clone(),
            seed: traj.header.seed,
            t: s.t,
            force: s.force.magnitude,
        })
        .collect()
}

/// Runs every (method, cell) once, methods outermost.
pub fn run_eval(cfg: &ExperimentConfig, models: &Models, methods: &[Method]) -> Result<Vec<(ResultRow, Trajectory)>> {
    models.check(methods)?;
    let cells = grid::eval_cells(cfg);
    let mut out = Vec::with_capacity(methods.len() * cells.len());
    for &m in methods {
        for cell in &cells {
            let mut traj = run_cell(cfg, models, m, cell)?;
            traj.header.seed = cell.seed;
            let row = result_row(&traj, cfg.experiment.skip_steps, cfg.eval_tau());
            out.push((row, traj));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub history_len: usize,
    pub cells: usize,
    pub mean_violation: f64,
    pub mean_dressed_ratio: f64,
    pub heldout_mse: f64,
    pub persistence_mse: f64,
}

/// One force model per history length on the same dataset (re-windowed),
/// each evaluated with the constrained controller on the full grid.
pub fn ablate_history(
    cfg: &ExperimentConfig,
    policy: &GaussianPolicy,
    data: &[TransitionSample],
    seed: u64,
) -> Result<Vec<(AblationRow, ForceModel)>> {
    let mut out = Vec::new();
    for &n in &cfg.ablation.history_lens {
        let (model, report) = train_force(cfg, data, n, seed)?;
        let models = Models {
            policy: Some(policy.clone()),
            force_model: Some(model.clone()),
            ..Models::default()
        };
        let rows: Vec<ResultRow> = run_eval(cfg, &models, &[Method::Fcvp])?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let k = rows.len() as f64;
        out.push((
            AblationRow {
                history_len: n,
                cells: rows.len(),
                mean_violation: rows.iter().map(|r| r.avg_violation).sum::<f64>() / k,
                mean_dressed_ratio: rows.iter().map(|r| r.dressed_ratio).sum::<f64>() / k,
                heldout_mse: report.heldout_mse,
                persistence_mse: report.persistence_mse,
            },
            model,
        ));
    }
    Ok(out)
}
