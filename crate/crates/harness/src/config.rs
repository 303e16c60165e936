//! Experiment configuration: one TOML file fully determines a run.

use std::path::Path;

use fcvp_core::clothsim::{ClothParams, GarmentSpec};
use fcvp_core::controllers::{FcvpConfig, ForceOnlyConfig};
use fcvp_core::env::EnvSettings;
use fcvp_core::force::ForceModelConfig;
use fcvp_core::geometry::ArmPoseRegion;
use fcvp_core::policy::{CemConfig, PolicyConfig, ScriptedPolicy};
use fcvp_core::training::{FinetuneConfig, FinetuneKind};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Evaluated controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fcvp,
    VisionOnly,
    VisionRandom,
    ForceOnly,
    Multimodal,
    Residual,
    Scripted,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fcvp,
        Method::VisionOnly,
        Method::VisionRandom,
        Method::ForceOnly,
        Method::Multimodal,
        Method::Residual,
        Method::Scripted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fcvp => "fcvp",
            Method::VisionOnly => "vision_only",
            Method::VisionRandom => "vision_random",
            Method::ForceOnly => "force_only",
            Method::Multimodal => "multimodal",
            Method::Residual => "residual",
            Method::Scripted => "scripted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Seed for training, collection and model initialization.
    #[serde(default)]
    pub base_seed: u64,
    /// One evaluation episode per (method, region, garment, seed).
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_skip")]
    pub skip_steps: usize,
    /// Threshold used by the controllers and the force penalty.
    pub tau: f64,
    /// Threshold for the violation metric; defaults to `tau`.
    #[serde(default)]
    pub eval_tau: Option<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_history")]
    pub history_len: usize,
    #[serde(default)]
    pub resample_budget: usize,
}

fn default_horizon() -> usize {
    150
}
fn default_skip() -> usize {
    25
}
fn default_p() -> f64 {
    0.1
}
fn default_k() -> usize {
    64
}
fn default_history() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub network: PolicyConfig,
    pub cem: CemConfig,
    /// Training episodes generated per (region, garment).
    pub episodes_per_cell: usize,
    pub scripted: ScriptedPolicy,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            network: PolicyConfig::default(),
            cem: CemConfig::default(),
            episodes_per_cell: 2,
            scripted: ScriptedPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    /// Trajectories rolled out per (region, garment).
    pub episodes_per_cell: usize,
    /// Force history stored with each sample; models may use fewer steps.
    pub stored_history: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            episodes_per_cell: 8,
            stored_history: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub penalty_weight: f64,
    pub cem: CemConfig,
    pub residual: PolicyConfig,
    pub episodes_per_cell: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            penalty_weight: 0.01,
            cem: CemConfig::default(),
            residual: PolicyConfig {
                encoder: vec![8, 16],
                head_hidden: vec![16],
                ..PolicyConfig::default()
            },
            episodes_per_cell: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub history_lens: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            history_lens: vec![3, 5, 7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub pose_regions: Vec<ArmPoseRegion>,
    pub garments: Vec<GarmentSpec>,
    #[serde(default = "ClothParams::sim_a")]
    pub sim_a: ClothParams,
    #[serde(default = "ClothParams::sim_b")]
    pub sim_b: ClothParams,
    #[serde(default)]
    pub env: EnvSettings,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub force_model: ForceModelConfig,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub force_only: ForceOnlyConfig,
    #[serde(default)]
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Every setting, defaults included.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let usage = |m: &str| Err(HarnessError::Usage(m.to_string()));
        if e.seeds.is_empty() {
            return usage("config lists no evaluation seeds");
        }
        if e.methods.is_empty() {
            return usage("config lists no methods");
        }
        if self.pose_regions.is_empty() {
            return usage("config lists no pose regions");
        }
        if self.garments.is_empty() {
            return usage("config lists no garments");
        }
        if e.horizon <= e.skip_steps {
            return usage("horizon must exceed skip_steps");
        }
        for r in &self.pose_regions {
            r.validate()?;
        }
        for g in &self.garments {
            fcvp_core::clothsim::SleeveTopology::tube(g)?;
        }
        self.sim_a.validate()?;
        self.sim_b.validate()?;
        self.fcvp().validate()?;
        self.policy.cem.validate()?;
        self.finetune.cem.validate()?;
        if self.ablation.history_lens.iter().any(|&n| n > self.collect.stored_history)
            || e.history_len > self.collect.stored_history
        {
            return usage("history lengths must not exceed collect.stored_history");
        }
        Ok(())
    }

    pub fn eval_tau(&self) -> f64 {
        self.experiment.eval_tau.unwrap_or(self.experiment.tau)
    }

    pub fn fcvp(&self) -> FcvpConfig {
        FcvpConfig {
            k: self.experiment.k,
            tau: self.experiment.tau,
            p: self.experiment.p,
            resample_budget: self.experiment.resample_budget,
        }
    }

    pub fn force_model_config(&self, history_len: usize) -> ForceModelConfig {
        ForceModelConfig {
            history_len,
            ..self.force_model.clone()
        }
    }

    pub fn finetune_config(&self, kind: FinetuneKind) -> FinetuneConfig {
        FinetuneConfig {
            kind,
            history_len: self.experiment.history_len,
            penalty_weight: self.finetune.penalty_weight,
            cem: self.finetune.cem.clone(),
            residual: self.finetune.residual.clone(),
        }
    }
}
