//! Learned one-step force dynamics: history windows, mixture-sampled
//! dataset collection in the target simulator, training and prediction.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{ProposerController, StepContext};
use crate::env::{Action, EpisodeConfig, Trajectory, ACTION_DIM};
use crate::neural::{mse, train_mse, Activation, MlpModel, ModelSpec, PointFeature, Sample, TrainConfig};
use crate::policy::{sample_gaussian, ActionProposer};
use crate::rng::rng_for;
use crate::{Error, Result, Vec3};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Sliding window of force vectors, newest first, zero padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceHistory {
    window: Vec<Vec3>,
}

impl ForceHistory {
    pub fn new(n: usize) -> Self {
        Self {
            window: vec![Vec3::zeros(); n],
        }
    }

    pub fn from_window(window: Vec<Vec3>) -> Self {
        Self { window }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn window(&self) -> &[Vec3] {
        &self.window
    }

    pub fn newest(&self) -> Option<&Vec3> {
        self.window.first()
    }

    pub fn push(&mut self, f: Vec3) {
        if self.window.is_empty() {
            return;
        }
        self.window.pop();
        self.window.insert(0, f);
    }

    /// The `n` newest entries, zero padded if the window is shorter.
    pub fn truncated(&self, n: usize) -> Self {
        let mut window: Vec<Vec3> = self.window.iter().take(n).copied().collect();
        window.resize(n, Vec3::zeros());
        Self { window }
    }

    /// `[f_t.x, f_t.y, f_t.z, f_{t-1}.x, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.window.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// Where a candidate action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Policy,
    Uniform,
    Cone,
}

pub fn uniform_action<R: Rng>(rng: &mut R) -> Action {
    let mut a = [0.0; ACTION_DIM];
    for v in a.iter_mut() {
        *v = rng.random_range(-1.0..=1.0);
    }
    Action::from_array(a)
}

/// With probability `p` a uniform draw from the action cube, otherwise a
/// draw from the Gaussian about `mean`.
pub fn mixture_draw<R: Rng>(mean: &[f64; ACTION_DIM], sigma: f64, p: f64, rng: &mut R) -> (Action, CandidateSource) {
    if rng.random::<f64>() < p {
        (uniform_action(rng), CandidateSource::Uniform)
    } else {
        (sample_gaussian(mean, sigma, rng), CandidateSource::Policy)
    }
}

pub fn mixture_sample(
    proposer: &dyn ActionProposer,
    ctx: &StepContext<'_>,
    p: f64,
    seed: u64,
) -> (Action, CandidateSource) {
    let mut rng = rng_for(seed, &[0x6d69_78]);
    mixture_draw(&proposer.mean(ctx), proposer.sigma(), p, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceModelConfig {
    pub encoder: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub history_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: Option<usize>,
    /// Fraction of samples held out for early stopping and reporting.
    pub heldout_frac: f64,
}

impl Default for ForceModelConfig {
    fn default() -> Self {
        Self {
            encoder: vec![32, 64],
            head_hidden: vec![64, 64],
            history_len: 5,
            epochs: 600,
            lr: 5e-4,
            batch_size: 32,
            patience: Some(25),
            heldout_frac: 0.1,
        }
    }
}

/// d(o, F, a) -> predicted next-step force magnitude, in simulator units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceModel {
    net: MlpModel,
    history_len: usize,
    target_mean: f64,
    target_std: f64,
}

impl ForceModel {
    pub fn new(net: MlpModel, history_len: usize, target_mean: f64, target_std: f64) -> Result<Self> {
        if net.extra_dim() != 3 * history_len + ACTION_DIM || net.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "force network must take {} extras and emit 1 output",
                3 * history_len + ACTION_DIM
            )));
        }
        if !(target_std > 0.0) || !target_mean.is_finite() {
            return Err(Error::Params("invalid target standardization".into()));
        }
        Ok(Self {
            net,
            history_len,
            target_mean,
            target_std,
        })
    }

    pub fn network(&self) -> &MlpModel {
        &self.net
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_std(&self) -> f64 {
        self.target_std
    }

    fn extras(&self, history: &ForceHistory, action: &Action) -> Vec<f64> {
        let mut x: Vec<f64> = history
            .truncated(self.history_len)
            .flatten()
            .into_iter()
            .map(|v| v / self.target_std)
            .collect();
        x.extend(action.to_array());
        x
    }

    pub fn predict_force(&self, features: &[PointFeature], history: &ForceHistory, action: &Action) -> f64 {
        self.predict_batch(features, history, std::slice::from_ref(action))[0]
    }

    /// Predictions for several actions sharing one observation; the set
    /// encoding is computed once.
    pub fn predict_batch(&self, features: &[PointFeature], history: &ForceHistory, actions: &[Action]) -> Vec<f64> {
        let latent = self.net.encode(features);
        actions
            .iter()
            .map(|a| self.net.head_forward(&latent, &self.extras(history, a))[0] * self.target_std + self.target_mean)
            .collect()
    }

    fn to_sample(&self, s: &TransitionSample) -> Sample {
        Sample {
            points: s.features.clone(),
            extras: self.extras(&s.history, &s.action),
            target: (s.target - self.target_mean) / self.target_std,
        }
    }
}

/// One aligned `(o_t, F_t, a_t, f_{t+1})` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub episode: usize,
    /// Index of the step whose observation and history are stored.
    pub t: usize,
    pub features: Vec<PointFeature>,
    pub history: ForceHistory,
    pub action: Action,
    /// Contact-force magnitude after executing `action`.
    pub target: f64,
}

impl TransitionSample {
    /// Persistence prediction: the newest force in the window.
    pub fn persistence(&self) -> f64 {
        self.history.newest().map_or(0.0, |f| f.norm())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CollectReport {
    pub kept_episodes: usize,
    /// `(episode, error)` for each dropped divergent rollout.
    pub dropped: Vec<(usize, String)>,
}

/// Builds aligned samples from a logged trajectory. Step `t` (1-based)
/// contributes `(o_t, F_t, a_t, f_{t+1})`; the final step has no successor.
pub fn samples_from_rollout(
    episode: usize,
    observations: &[Vec<PointFeature>],
    traj: &Trajectory,
    history_len: usize,
) -> Vec<TransitionSample> {
    let mut history = ForceHistory::new(history_len);
    let mut out = Vec::new();
    for (i, step) in traj.steps.iter().enumerate() {
        history.push(step.force.vector);
        if let Some(next) = traj.steps.get(i + 1) {
            out.push(TransitionSample {
                episode,
                t: step.t + 1,
                features: observations[i + 1].clone(),
                history: history.clone(),
                action: next.action,
                target: next.force.magnitude,
            });
        }
    }
    out
}

/// Rolls out `proposer` with mixture sampling in each configured episode
/// and returns the aligned samples. Divergent episodes are dropped.
pub fn collect_dataset(
    episodes: &[EpisodeConfig],
    proposer: &dyn ActionProposer,
    p: f64,
    history_len: usize,
    seed: u64,
) -> Result<(Vec<TransitionSample>, CollectReport)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Params(format!("mixture probability {p} outside [0, 1]")));
    }
    let mut samples = Vec::new();
    let mut report = CollectReport::default();
    for (k, cfg) in episodes.iter().enumerate() {
        let ctrl = ProposerController::mixture("collect", proposer, p, history_len);
        let ep_seed = crate::rng::derive_seed(seed, &[0x636f_6c, k as u64]);
        let (traj, obs) = crate::controllers::rollout_recording(cfg, &ctrl, Default::default(), ep_seed)?;
        if let Some(fault) = &traj.header.fault {
            report.dropped.push((k, fault.clone()));
            continue;
        }
        report.kept_episodes += 1;
        samples.extend(samples_from_rollout(k, &obs, &traj, history_len));
    }
    Ok((samples, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrainReport {
    pub train_size: usize,
    pub heldout_size: usize,
    /// Held-out mean squared error in simulator units.
    pub heldout_mse: f64,
    /// Held-out MSE of the persistence predictor.
    pub persistence_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Seeded train/held-out split of sample indices.
pub fn split_indices(n: usize, heldout_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[0x73706c]));
    let n_held = ((n as f64 * heldout_frac).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let train = idx.split_off(n_held);
    (train, idx)
}

pub fn train_force_model(
    dataset: &[TransitionSample],
    config: &ForceModelConfig,
    seed: u64,
) -> Result<(ForceModel, ForceTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..1.0).contains(&config.heldout_frac) {
        return Err(Error::Params("heldout_frac must be in [0, 1)".into()));
    }
    let (train_idx, held_idx) = split_indices(dataset.len(), config.heldout_frac, seed);
    let n = train_idx.len() as f64;
    let mean = train_idx.iter().map(|&i| dataset[i].target).sum::<f64>() / n;
    let var = train_idx.iter().map(|&i| (dataset[i].target - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };

    let spec = ModelSpec {
        encoder: config.encoder.clone(),
        head_hidden: config.head_hidden.clone(),
        output_dim: 1,
        extra_dim: 3 * config.history_len + ACTION_DIM,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
    };
    let mut model = ForceModel::new(MlpModel::from_spec(&spec, seed)?, config.history_len, mean, std)?;
    let train: Vec<Sample> = train_idx.iter().map(|&i| model.to_sample(&dataset[i])).collect();
    let held: Vec<Sample> = held_idx.iter().map(|&i| model.to_sample(&dataset[i])).collect();
    let tc = TrainConfig {
        epochs: config.epochs,
        lr: config.lr,
        batch_size: config.batch_size,
        seed,
        patience: config.patience,
    };
    let report = train_mse(&mut model.net, &train, Some(&held), &tc)?;

    let (heldout_mse, persistence_mse) = if held.is_empty() {
        (mse(&model.net, &train)? * std * std, f64::NAN)
    } else {
        let pers = held_idx
            .iter()
            .map(|&i| (dataset[i].persistence() - dataset[i].target).powi(2))
            .sum::<f64>()
            / held_idx.len() as f64;
        (mse(&model.net, &held)? * std * std, pers)
    };
    Ok((
        model,
        ForceTrainReport {
            train_size: train.len(),
            heldout_size: held.len(),
            heldout_mse,
            persistence_mse,
            best_epoch: report.best_epoch,
            epochs_run: report.loss_curve.len(),
        },
    ))
}

/// Stores a force model with its history length and standardization.
pub fn write_force_checkpoint<W: std::io::Write>(w: W, model: &ForceModel) -> Result<()> {
    crate::neural::write_checkpoint(
        w,
        &model.net,
        serde_json::json!({
            "kind": "force_model",
            "history_len": model.history_len,
            "target_mean": model.target_mean,
            "target_std": model.target_std,
        }),
    )
}

pub fn read_force_checkpoint<R: std::io::Read>(r: R) -> Result<ForceModel> {
    let (net, meta) = crate::neural::read_checkpoint(r)?;
    if meta["kind"] != "force_model" {
        return Err(Error::Checkpoint("not a force model checkpoint".into()));
    }
    let n = meta["history_len"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("missing history_len".into()))?;
    let mean = meta["target_mean"].as_f64();
    let std = meta["target_std"].as_f64();
    match (mean, std) {
        (Some(m), Some(s)) => ForceModel::new(net, n as usize, m, s),
        _ => Err(Error::Checkpoint("missing standardization".into())),
    }
}
