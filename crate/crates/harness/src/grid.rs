//! Episode configurations for each pipeline stage.

use fcvp_core::clothsim::{ClothParams, GarmentSpec};
use fcvp_core::controllers::RolloutMeta;
use fcvp_core::env::EpisodeConfig;
use fcvp_core::geometry::ArmPoseSpec;
use fcvp_core::rng::{derive_seed, rng_for};

use crate::config::ExperimentConfig;

const TRAIN: u64 = 1;
const COLLECT: u64 = 2;
const FINETUNE: u64 = 3;
const EVAL: u64 = 4;

/// One episode with the labels it is reported under.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub region: String,
    pub garment: String,
    pub seed: u64,
    pub episode: EpisodeConfig,
}

impl Cell {
    pub fn meta(&self, method: &str) -> RolloutMeta {
        RolloutMeta {
            method: method.to_string(),
            pose_region: self.region.clone(),
            garment_id: self.garment.clone(),
        }
    }
}

fn episode(
    cfg: &ExperimentConfig,
    params: &ClothParams,
    arm: ArmPoseSpec,
    garment: &GarmentSpec,
    seed: u64,
) -> EpisodeConfig {
    EpisodeConfig {
        horizon: cfg.experiment.horizon,
        force_threshold: cfg.eval_tau(),
        arm_spec: arm,
        cloth_params: params.clone(),
        garment: garment.clone(),
        seed,
        settings: cfg.env.clone(),
    }
}

/// `per_cell` episodes for every (region, garment), interleaved so that
/// any prefix covers the regions evenly.
fn pool(cfg: &ExperimentConfig, params: &ClothParams, stage: u64, per_cell: usize, base_seed: u64) -> Vec<Cell> {
    let mut out = Vec::new();
    for j in 0..per_cell {
        for (r, region) in cfg.pose_regions.iter().enumerate() {
            for (g, garment) in cfg.garments.iter().enumerate() {
                let path = [stage, j as u64, r as u64, g as u64];
                let arm = region.sample(&mut rng_for(base_seed, &path));
                let seed = derive_seed(base_seed, &path);
                out.push(Cell {
                    region: region.name.clone(),
                    garment: garment.id.clone(),
                    seed,
                    episode: episode(cfg, params, arm, garment, seed),
                });
            }
        }
    }
    out
}

/// Policy training episodes, in sim A.
pub fn training_pool(cfg: &ExperimentConfig, base_seed: u64) -> Vec<Cell> {
    pool(cfg, &cfg.sim_a, TRAIN, cfg.policy.episodes_per_cell, base_seed)
}

/// Force dataset episodes, in sim B.
pub fn collect_pool(cfg: &ExperimentConfig, base_seed: u64) -> Vec<Cell> {
    pool(cfg, &cfg.sim_b, COLLECT, cfg.collect.episodes_per_cell, base_seed)
}

/// Fine-tuning episodes for the force-aware policy baselines, in sim B.
pub fn finetune_pool(cfg: &ExperimentConfig, base_seed: u64) -> Vec<Cell> {
    pool(cfg, &cfg.sim_b, FINETUNE, cfg.finetune.episodes_per_cell, base_seed)
}

/// One evaluation cell per (region, garment, seed), in the given preset.
/// The arm depends on (region, seed) only, so garments share arms.
pub fn eval_cells_in(cfg: &ExperimentConfig, params: &ClothParams) -> Vec<Cell> {
    let mut out = Vec::new();
    for (r, region) in cfg.pose_regions.iter().enumerate() {
        for (g, garment) in cfg.garments.iter().enumerate() {
            for &seed in &cfg.experiment.seeds {
                let arm = region.sample(&mut rng_for(seed, &[EVAL, r as u64]));
                let ep_seed = derive_seed(seed, &[EVAL, r as u64, g as u64]);
                out.push(Cell {
                    region: region.name.clone(),
                    garment: garment.id.clone(),
                    seed,
                    episode: episode(cfg, params, arm, garment, ep_seed),
                });
            }
        }
    }
    out
}

/// Evaluation cells in sim B.
pub fn eval_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    eval_cells_in(cfg, &cfg.sim_b)
}
