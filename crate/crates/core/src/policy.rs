//! Gaussian point-cloud policy, the scripted straight-line proposal, and a
//! cross-entropy-method optimizer over parameter vectors.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controllers::StepContext;
use crate::env::{Action, ACTION_DIM};
use crate::force::ForceHistory;
use crate::neural::{read_checkpoint, write_checkpoint, Activation, MlpModel, ModelSpec, PointFeature};
use crate::rng::rng_for;
use crate::{Error, Result};

/// Means are kept strictly inside the action cube.
const MEAN_LIMIT: f64 = 1.0 - 1e-9;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Anything that proposes a diagonal Gaussian over actions.
pub trait ActionProposer: Send + Sync {
    fn mean(&self, ctx: &StepContext<'_>) -> [f64; ACTION_DIM];
    fn sigma(&self) -> f64;
}

/// Diagonal Gaussian log density of `a` about `mean` with std `sigma` in
/// every dimension.
pub fn gaussian_log_prob(mean: &[f64; ACTION_DIM], sigma: f64, a: &Action) -> f64 {
    let a = a.to_array();
    let quad: f64 = mean
        .iter()
        .zip(&a)
        .map(|(m, x)| {
            let z = (x - m) / sigma;
            z * z
        })
        .sum();
    -0.5 * quad - ACTION_DIM as f64 * (sigma.ln() + 0.5 * LN_2PI)
}

/// `mean + sigma * N(0, I)`, clamped to the action cube.
pub fn sample_gaussian<R: Rng>(mean: &[f64; ACTION_DIM], sigma: f64, rng: &mut R) -> Action {
    let mut a = *mean;
    for v in a.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Action::from_array(a).clamped()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub encoder: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub sigma: f64,
    /// Force history length fed to the head; 0 for a vision-only policy.
    #[serde(default)]
    pub history_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            encoder: vec![16, 32],
            head_hidden: vec![32],
            sigma: 0.3,
            history_len: 0,
        }
    }
}

/// Tanh-squashed mean network with fixed isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: MlpModel,
    sigma: f64,
    history_len: usize,
    /// Divisor applied to force-history inputs.
    history_scale: f64,
}

impl GaussianPolicy {
    pub fn new(config: &PolicyConfig, history_scale: f64, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            encoder: config.encoder.clone(),
            head_hidden: config.head_hidden.clone(),
            output_dim: ACTION_DIM,
            extra_dim: 3 * config.history_len,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        };
        Self::from_model(MlpModel::from_spec(&spec, seed)?, config.sigma, config.history_len, history_scale)
    }

    pub fn from_model(net: MlpModel, sigma: f64, history_len: usize, history_scale: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Params(format!("policy sigma {sigma} must be > 0")));
        }
        if net.output_dim() != ACTION_DIM || net.extra_dim() != 3 * history_len {
            return Err(Error::Shape(format!(
                "policy network must map {} extras to {ACTION_DIM} outputs",
                3 * history_len
            )));
        }
        if !(history_scale > 0.0) {
            return Err(Error::Params("history_scale must be > 0".into()));
        }
        Ok(Self {
            net,
            sigma,
            history_len,
            history_scale,
        })
    }

    pub fn network(&self) -> &MlpModel {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut MlpModel {
        &mut self.net
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn history_scale(&self) -> f64 {
        self.history_scale
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn extras(&self, history: &ForceHistory) -> Vec<f64> {
        if self.history_len == 0 {
            return Vec::new();
        }
        history
            .truncated(self.history_len)
            .flatten()
            .into_iter()
            .map(|v| v / self.history_scale)
            .collect()
    }

    /// Deterministic mean action for pre-computed point features.
    pub fn mean_from_features(&self, features: &[PointFeature], history: &ForceHistory) -> [f64; ACTION_DIM] {
        let out = self.net.head_forward(&self.net.encode(features), &self.extras(history));
        let mut m = [0.0; ACTION_DIM];
        for (dst, v) in m.iter_mut().zip(out) {
            *dst = v.clamp(-MEAN_LIMIT, MEAN_LIMIT);
        }
        m
    }

    pub fn log_prob(&self, ctx: &StepContext<'_>, a: &Action) -> f64 {
        gaussian_log_prob(&self.mean(ctx), self.sigma, a)
    }

    pub fn sample_action(&self, ctx: &StepContext<'_>, seed: u64) -> Action {
        let mut rng = rng_for(seed, &[0x7361_6d70]);
        sample_gaussian(&self.mean(ctx), self.sigma, &mut rng)
    }
}

impl ActionProposer for GaussianPolicy {
    fn mean(&self, ctx: &StepContext<'_>) -> [f64; ACTION_DIM] {
        self.mean_from_features(ctx.features, ctx.history)
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Base policy plus a force-conditioned correction:
/// `mean = clamp(base_mean + residual(o, F))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPolicy {
    base: GaussianPolicy,
    residual: MlpModel,
    history_len: usize,
    history_scale: f64,
}

impl ResidualPolicy {
    /// Fresh residual network whose output layer is zero, so the initial
    /// behavior equals the base policy.
    pub fn new(base: GaussianPolicy, config: &PolicyConfig, history_scale: f64, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            encoder: config.encoder.clone(),
            head_hidden: config.head_hidden.clone(),
            output_dim: ACTION_DIM,
            extra_dim: 3 * config.history_len,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        };
        let mut residual = MlpModel::from_spec(&spec, seed)?;
        if let Some(last) = residual.head_mut().last_mut() {
            last.zero_params();
        }
        Self::from_parts(base, residual, config.history_len, history_scale)
    }

    pub fn from_parts(base: GaussianPolicy, residual: MlpModel, history_len: usize, history_scale: f64) -> Result<Self> {
        if residual.output_dim() != ACTION_DIM || residual.extra_dim() != 3 * history_len {
            return Err(Error::Shape("residual network shape does not match history length".into()));
        }
        if !(history_scale > 0.0) {
            return Err(Error::Params("history_scale must be > 0".into()));
        }
        Ok(Self {
            base,
            residual,
            history_len,
            history_scale,
        })
    }

    pub fn base(&self) -> &GaussianPolicy {
        &self.base
    }

    pub fn residual(&self) -> &MlpModel {
        &self.residual
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn history_scale(&self) -> f64 {
        self.history_scale
    }

    pub fn residual_params(&self) -> Vec<f64> {
        self.residual.params()
    }

    pub fn set_residual_params(&mut self, params: &[f64]) -> Result<()> {
        self.residual.set_params(params)
    }
}

impl ActionProposer for ResidualPolicy {
    fn mean(&self, ctx: &StepContext<'_>) -> [f64; ACTION_DIM] {
        let mut m = self.base.mean(ctx);
        let extras: Vec<f64> = ctx
            .history
            .truncated(self.history_len)
            .flatten()
            .into_iter()
            .map(|v| v / self.history_scale)
            .collect();
        let r = self.residual.head_forward(&self.residual.encode(ctx.features), &extras);
        for (v, dr) in m.iter_mut().zip(r) {
            *v = (*v + dr).clamp(-MEAN_LIMIT, MEAN_LIMIT);
        }
        m
    }

    fn sigma(&self) -> f64 {
        self.base.sigma
    }
}

/// Either kind of learned policy, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Gaussian(GaussianPolicy),
    Residual(ResidualPolicy),
}

impl AnyPolicy {
    pub fn history_len(&self) -> usize {
        match self {
            AnyPolicy::Gaussian(p) => p.history_len,
            AnyPolicy::Residual(p) => p.history_len,
        }
    }
}

impl ActionProposer for AnyPolicy {
    fn mean(&self, ctx: &StepContext<'_>) -> [f64; ACTION_DIM] {
        match self {
            AnyPolicy::Gaussian(p) => p.mean(ctx),
            AnyPolicy::Residual(p) => p.mean(ctx),
        }
    }

    fn sigma(&self) -> f64 {
        match self {
            AnyPolicy::Gaussian(p) => p.sigma,
            AnyPolicy::Residual(p) => p.base.sigma,
        }
    }
}

fn policy_meta(p: &GaussianPolicy, kind: &str) -> serde_json::Value {
    serde_json::json!({
        "kind": kind,
        "sigma": p.sigma,
        "history_len": p.history_len,
        "history_scale": p.history_scale,
    })
}

/// Gaussian policies are one checkpoint record; residual policies are the
/// base record followed by the residual network record.
pub fn write_policy_checkpoint<W: Write>(mut w: W, policy: &AnyPolicy) -> Result<()> {
    match policy {
        AnyPolicy::Gaussian(p) => write_checkpoint(&mut w, &p.net, policy_meta(p, "gaussian_policy")),
        AnyPolicy::Residual(r) => {
            write_checkpoint(&mut w, &r.base.net, policy_meta(&r.base, "residual_policy"))?;
            write_checkpoint(
                &mut w,
                &r.residual,
                serde_json::json!({
                    "kind": "residual_head",
                    "history_len": r.history_len,
                    "history_scale": r.history_scale,
                }),
            )
        }
    }
}

pub fn read_policy_checkpoint<R: Read>(mut r: R) -> Result<AnyPolicy> {
    let (net, meta) = read_checkpoint(&mut r)?;
    let field = |m: &serde_json::Value, k: &str| {
        m[k].as_f64()
            .ok_or_else(|| Error::Checkpoint(format!("policy checkpoint missing {k}")))
    };
    let base = GaussianPolicy::from_model(
        net,
        field(&meta, "sigma")?,
        field(&meta, "history_len")? as usize,
        field(&meta, "history_scale")?,
    )?;
    match meta["kind"].as_str() {
        Some("gaussian_policy") => Ok(AnyPolicy::Gaussian(base)),
        Some("residual_policy") => {
            let (residual, rmeta) = read_checkpoint(&mut r)?;
            if rmeta["kind"] != "residual_head" {
                return Err(Error::Checkpoint("expected residual head record".into()));
            }
            Ok(AnyPolicy::Residual(ResidualPolicy::from_parts(
                base,
                residual,
                field(&rmeta, "history_len")? as usize,
                field(&rmeta, "history_scale")?,
            )?))
        }
        _ => Err(Error::Checkpoint("not a policy checkpoint".into())),
    }
}

/// Moves the gripper along the straight fingertip → shoulder chord at a
/// fixed speed, no rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedPolicy {
    /// Largest translation component, in action units.
    pub speed: f64,
    pub sigma: f64,
}

impl Default for ScriptedPolicy {
    fn default() -> Self {
        Self {
            speed: 0.8,
            sigma: 0.3,
        }
    }
}

impl ActionProposer for ScriptedPolicy {
    fn mean(&self, ctx: &StepContext<'_>) -> [f64; ACTION_DIM] {
        let d = ctx.arm.shoulder() - ctx.arm.fingertip();
        let d = d / d.amax();
        let mut m = [0.0; ACTION_DIM];
        for i in 0..3 {
            m[i] = (d[i] * self.speed).clamp(-MEAN_LIMIT, MEAN_LIMIT);
        }
        m
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    /// Episodes per candidate evaluation; the same episodes every iteration.
    pub eval_episodes: usize,
    pub init_param_std: f64,
    /// Floor on the per-parameter sampling std.
    #[serde(default = "default_min_std")]
    pub min_std: f64,
}

fn default_min_std() -> f64 {
    0.005
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 24,
            elite_frac: 0.25,
            iterations: 30,
            eval_episodes: 2,
            init_param_std: 0.1,
            min_std: default_min_std(),
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Params("CEM population must be >= 4".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac < 1.0) {
            return Err(Error::Params("elite_frac must be in (0, 1)".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Params("eval_episodes must be >= 1".into()));
        }
        if !(self.init_param_std > 0.0) || !(self.min_std >= 0.0) {
            return Err(Error::Params("CEM std values must be positive".into()));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    pub elite_mean_return: f64,
    pub best_return: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemOutcome {
    pub best_params: Vec<f64>,
    pub best_return: f64,
    pub log: Vec<CemIteration>,
}

/// Maximizes `objective` by iteratively refitting a diagonal Gaussian to
/// the elite candidates. Elites persist across iterations, so the objective
/// should be deterministic. `objective` returns `None` when a candidate
/// cannot be evaluated (every rollout diverged).
pub fn cem_optimize(
    init_mean: &[f64],
    config: &CemConfig,
    seed: u64,
    mut objective: impl FnMut(&[f64]) -> Option<f64>,
) -> Result<CemOutcome> {
    config.validate()?;
    let dim = init_mean.len();
    let n_elite = config.elite_count();
    let mut mean = init_mean.to_vec();
    let mut std = vec![config.init_param_std; dim];
    let mut elites: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut rng = rng_for(seed, &[0x63656d, it as u64]);
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(config.population + n_elite);
        let mut diverged = 0;
        for k in 0..config.population {
            let cand: Vec<f64> = if it == 0 && k == 0 {
                mean.clone()
            } else {
                mean.iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + s * z
                    })
                    .collect()
            };
            match objective(&cand) {
                Some(score) if score.is_finite() => scored.push((score, cand)),
                _ => diverged += 1,
            }
        }
        if scored.is_empty() {
            return Err(Error::AllRolloutsDiverged(it));
        }
        let best_new = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        scored.append(&mut elites);
        // stable sort: earlier candidates win ties
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(n_elite);
        elites = scored;

        let k = elites.len() as f64;
        for d in 0..dim {
            let m = elites.iter().map(|e| e.1[d]).sum::<f64>() / k;
            let var = elites.iter().map(|e| (e.1[d] - m).powi(2)).sum::<f64>() / k;
            mean[d] = m;
            std[d] = var.sqrt().max(config.min_std);
        }
        log.push(CemIteration {
            iteration: it,
            elite_mean_return: elites.iter().map(|e| e.0).sum::<f64>() / k,
            best_return: best_new,
            diverged,
        });
    }
    let (best_return, best_params) = elites.swap_remove(0);
    Ok(CemOutcome {
        best_params,
        best_return,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_at_mean_unit_sigma() {
        let m = [0.1, -0.2, 0.3, 0.0, 0.5, -0.5];
        let lp = gaussian_log_prob(&m, 1.0, &Action::from_array(m));
        assert!((lp + 3.0 * std::f64::consts::TAU.ln()).abs() < 1e-12);
        assert!((lp + 5.5136).abs() < 1e-4);
    }

    #[test]
    fn log_prob_peaks_at_mean_and_decreases() {
        let m = [0.2; 6];
        let at = gaussian_log_prob(&m, 0.3, &Action::from_array(m));
        let mut prev = at;
        for k in 1..10 {
            let mut a = m;
            a[2] += 0.05 * k as f64;
            let lp = gaussian_log_prob(&m, 0.3, &Action::from_array(a));
            assert!(lp < prev);
            prev = lp;
        }
    }

    #[test]
    fn argmax_invariant_to_log_shift() {
        let m = [0.0; 6];
        let mut rng = rng_for(1, &[]);
        let cands: Vec<Action> = (0..50).map(|_| sample_gaussian(&m, 0.5, &mut rng)).collect();
        let pick = |shift: f64| {
            cands
                .iter()
                .enumerate()
                .map(|(i, a)| (i, gaussian_log_prob(&m, 0.5, a) + shift))
                .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                .0
        };
        assert_eq!(pick(0.0), pick(12.5));
        assert_eq!(pick(0.0), pick(-3.0));
    }

    #[test]
    fn samples_respect_clamp_and_tiny_sigma() {
        let m = [0.9, -0.9, 0.0, 0.5, -0.5, 0.99];
        let mut rng = rng_for(2, &[]);
        for _ in 0..1000 {
            assert!(sample_gaussian(&m, 2.0, &mut rng).is_valid());
        }
        let a = sample_gaussian(&m, 1e-300, &mut rng).to_array();
        for d in 0..6 {
            assert!((a[d] - m[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_mean_matches_policy_mean() {
        let m = [0.1, -0.3, 0.2, 0.0, 0.05, -0.1];
        let sigma = 0.3;
        let n = 100_000;
        let mut rng = rng_for(3, &[]);
        let mut acc = [0.0; 6];
        for _ in 0..n {
            let a = sample_gaussian(&m, sigma, &mut rng).to_array();
            for d in 0..6 {
                acc[d] += a[d];
            }
        }
        for d in 0..6 {
            let emp = acc[d] / n as f64;
            assert!((emp - m[d]).abs() < 3.0 * sigma / (n as f64).sqrt(), "dim {d}: {emp}");
        }
    }

    #[test]
    fn cem_finds_quadratic_optimum() {
        let target = [0.7, -1.3];
        let cfg = CemConfig {
            population: 30,
            elite_frac: 0.2,
            iterations: 40,
            eval_episodes: 1,
            init_param_std: 1.0,
            min_std: 1e-6,
        };
        let out = cem_optimize(&[0.0, 0.0], &cfg, 5, |x| {
            Some(-((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)))
        })
        .unwrap();
        assert!((out.best_params[0] - target[0]).abs() < 1e-2);
        assert!((out.best_params[1] - target[1]).abs() < 1e-2);
    }

    #[test]
    fn cem_elite_return_non_decreasing_in_most_runs() {
        let cfg = CemConfig {
            population: 12,
            elite_frac: 0.25,
            iterations: 15,
            eval_episodes: 1,
            init_param_std: 0.5,
            min_std: 1e-6,
        };
        let runs = 20;
        let good = (0..runs)
            .filter(|&s| {
                let out = cem_optimize(&[2.0, -2.0], &cfg, s, |x| Some(-(x[0] * x[0] + x[1] * x[1]))).unwrap();
                out.log
                    .windows(2)
                    .all(|w| w[1].elite_mean_return >= w[0].elite_mean_return)
            })
            .count();
        assert!(good as f64 >= 0.9 * runs as f64, "{good}/{runs}");
    }

    #[test]
    fn cem_aborts_when_everything_diverges() {
        let out = cem_optimize(&[0.0], &CemConfig::default(), 0, |_| None);
        assert!(matches!(out, Err(Error::AllRolloutsDiverged(0))));
        assert!(CemConfig {
            population: 2,
            ..CemConfig::default()
        }
        .validate()
        .is_err());
    }
}
