//! Goal-conditioned diffusion policy over pinch-action windows: configuration,
//! conditioning, the trainable model, training and the rollout controller.

mod diffusion;
mod rollout;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use diffusion::{
    ddpm_sample, diffusion_loss, timestep_embedding, BetaSchedule, Denoiser, NoiseDraw, NoiseSchedule,
};
pub use rollout::{rollout_policy, synthesize_subgoals, RolloutOptions, RolloutResult};
pub use train::{gamma_labels, subgoal_indices, train_policy, CloudBatch, TrainConfig, TrainReport, TrainingSet};

use crate::claysim::PinchAction;
use crate::diffcore::{load_checkpoint, save_checkpoint, seeded_rng, ParamStore, Scalar};
use crate::encoder::{CloudEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::geometry::{uniform_downsample, PointCloud};

const GAMMA: usize = 7;
/// Seed of the subsample that feeds clouds larger than the encoder input size.
pub const ENCODER_SUBSAMPLE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Binary,
    Progress,
    Subgoal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Self::Binary, Self::Progress, Self::Subgoal];
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "progress" => Ok(Self::Progress),
            "subgoal" => Ok(Self::Subgoal),
            other => Err(Error::invalid(format!("unknown variant '{other}' (binary|progress|subgoal)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Binary => "binary",
            Self::Progress => "progress",
            Self::Subgoal => "subgoal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub prediction_horizon: usize,
    pub execution_horizon: usize,
    pub subgoal_step: usize,
    pub action_dim: usize,
    pub embedding_dim: usize,
    pub variant: Variant,
    pub diffusion_steps: usize,
    pub beta_schedule: BetaSchedule,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Termination threshold on an executed action's gamma; `None` uses the
    /// variant default (`> 0` for binary labels, `>= 0.95` for progress).
    pub gamma_stop: Option<f64>,
    pub hidden_widths: Vec<usize>,
    pub time_embedding_dim: usize,
    pub finetune_encoder: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 16,
            execution_horizon: 4,
            subgoal_step: 8,
            action_dim: PinchAction::DIM,
            embedding_dim: 512,
            variant: Variant::Binary,
            diffusion_steps: 100,
            beta_schedule: BetaSchedule::Linear,
            beta_start: 1e-4,
            beta_end: 0.02,
            gamma_stop: None,
            hidden_widths: vec![1024, 1024, 1024],
            time_embedding_dim: 32,
            finetune_encoder: true,
        }
    }
}

impl PolicyConfig {
    pub fn n_subgoals(&self) -> usize {
        self.prediction_horizon / self.subgoal_step.max(1)
    }

    /// Goal embeddings in the condition: one, or `N` for the subgoal variant.
    pub fn goal_count(&self) -> usize {
        match self.variant {
            Variant::Subgoal => self.n_subgoals(),
            _ => 1,
        }
    }

    pub fn condition_dim(&self) -> usize {
        self.embedding_dim * (1 + self.goal_count()) + self.action_dim
    }

    pub fn window_dim(&self) -> usize {
        self.prediction_horizon * self.action_dim
    }

    pub fn should_stop(&self, gamma: f64) -> bool {
        match (self.gamma_stop, self.variant) {
            (Some(th), Variant::Progress) => gamma >= th,
            (Some(th), _) => gamma > th,
            (None, Variant::Progress) => gamma >= 0.95,
            (None, _) => gamma > 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_dim != PinchAction::DIM {
            return Err(Error::Config(format!("action_dim must be {}", PinchAction::DIM)));
        }
        if self.prediction_horizon == 0 || self.execution_horizon == 0 || self.execution_horizon > self.prediction_horizon {
            return Err(Error::Config("need 1 <= execution_horizon <= prediction_horizon".into()));
        }
        if self.variant == Variant::Subgoal && (self.subgoal_step == 0 || self.n_subgoals() == 0) {
            return Err(Error::Config("subgoal_step must divide into the prediction horizon at least once".into()));
        }
        if self.diffusion_steps == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("diffusion_steps and embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dimension min/max scaling to `[-1, 1]`; gamma passes through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub min: [f64; 8],
    pub max: [f64; 8],
}

impl ActionNormalizer {
    pub fn fit<'a>(actions: impl IntoIterator<Item = &'a PinchAction>) -> Result<Self> {
        let mut min = [f64::INFINITY; 8];
        let mut max = [f64::NEG_INFINITY; 8];
        let mut any = false;
        for a in actions {
            any = true;
            for (k, v) in a.to_array().into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        if !any {
            return Err(Error::invalid("cannot fit normalization to zero actions"));
        }
        min[GAMMA] = -1.0;
        max[GAMMA] = 1.0;
        Ok(Self { min, max })
    }

    pub fn normalize(&self, a: &PinchAction) -> [f64; 8] {
        let v = a.to_array();
        let mut out = [0.0; 8];
        for k in 0..8 {
            out[k] = if k == GAMMA {
                v[k]
            } else if self.max[k] > self.min[k] {
                2.0 * (v[k] - self.min[k]) / (self.max[k] - self.min[k]) - 1.0
            } else {
                0.0
            };
        }
        out
    }

    /// Inverse map after clamping to `[-1, 1]`, so every field stays within
    /// the training range.
    pub fn denormalize(&self, n: &[f64]) -> PinchAction {
        let mut out = [0.0; 8];
        for k in 0..8 {
            let c = n[k].clamp(-1.0, 1.0);
            out[k] = if k == GAMMA { c } else { self.min[k] + (c + 1.0) * 0.5 * (self.max[k] - self.min[k]) };
        }
        PinchAction::from_array(out)
    }
}

/// `state ∥ goal(s) ∥ previous action`; a missing previous action is the zero
/// vector in normalized space.
pub fn make_condition_vector<F: Scalar>(
    config: &PolicyConfig,
    state: &[F],
    goals: &[Vec<F>],
    prev_normalized: Option<&[f64; 8]>,
) -> Result<Vec<F>> {
    if goals.len() != config.goal_count() {
        return Err(Error::invalid(format!(
            "{} variant takes {} goal embedding(s), got {}",
            config.variant,
            config.goal_count(),
            goals.len()
        )));
    }
    if state.len() != config.embedding_dim || goals.iter().any(|g| g.len() != config.embedding_dim) {
        return Err(Error::Shape(format!("embeddings must have length {}", config.embedding_dim)));
    }
    let mut out = Vec::with_capacity(config.condition_dim());
    out.extend_from_slice(state);
    for g in goals {
        out.extend_from_slice(g);
    }
    match prev_normalized {
        Some(p) => out.extend(p.iter().map(|&v| F::of(v))),
        None => out.extend(std::iter::repeat_n(F::zero(), config.action_dim)),
    }
    Ok(out)
}

/// Encoder input: clouds above the encoder size are subsampled with a fixed seed.
pub fn encoder_input(cloud: &PointCloud, points: usize) -> Result<PointCloud> {
    if cloud.len() > points {
        uniform_downsample(cloud, points, ENCODER_SUBSAMPLE_SEED)
    } else {
        Ok(cloud.clone())
    }
}

/// Trained policy: (fine-tuned) encoder and denoiser weights in one store,
/// plus the action normalization.
#[derive(Debug, Clone)]
pub struct PolicyModel<F = f32> {
    pub config: PolicyConfig,
    pub encoder: CloudEncoder,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub normalizer: ActionNormalizer,
    pub store: ParamStore<F>,
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    kind: String,
    policy: PolicyConfig,
    encoder: EncoderConfig,
    normalizer: ActionNormalizer,
}

impl<F: Scalar> PolicyModel<F> {
    /// Fresh denoiser on top of a copy of the encoder weights in `encoder_store`.
    pub fn new(
        config: PolicyConfig,
        encoder: &CloudEncoder,
        encoder_store: &ParamStore<F>,
        normalizer: ActionNormalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if encoder.embedding_dim() != config.embedding_dim {
            return Err(Error::Config(format!(
                "encoder embeds to {} but the policy expects {}",
                encoder.embedding_dim(),
                config.embedding_dim
            )));
        }
        let mut store = ParamStore::new();
        for (_, name, value) in encoder_store.iter() {
            if name.starts_with(CloudEncoder::PREFIX) {
                store.add(name, value.clone())?;
            }
        }
        let encoder = CloudEncoder::bind(encoder.config.clone(), &store)?;
        let mut rng = seeded_rng(seed);
        let denoiser = Denoiser::init(
            config.window_dim(),
            config.condition_dim(),
            config.time_embedding_dim,
            &config.hidden_widths,
            &mut store,
            &mut rng,
        )?;
        let schedule = NoiseSchedule::new(config.beta_schedule, config.diffusion_steps, config.beta_start, config.beta_end)?;
        Ok(Self {
            config,
            encoder,
            denoiser,
            schedule,
            normalizer,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = PolicyMeta {
            kind: "policy".into(),
            policy: self.config.clone(),
            encoder: self.encoder.config.clone(),
            normalizer: self.normalizer.clone(),
        };
        save_checkpoint(path, &serde_json::to_string(&meta).expect("meta serializes"), &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, store) = load_checkpoint::<F>(path)?;
        let meta: PolicyMeta = serde_json::from_str(&meta).map_err(|e| Error::format(path, e.to_string()))?;
        if meta.kind != "policy" {
            return Err(Error::format(path, "not a policy checkpoint"));
        }
        let config = meta.policy;
        config.validate()?;
        let encoder = CloudEncoder::bind(meta.encoder, &store)?;
        let denoiser = Denoiser::bind(
            config.window_dim(),
            config.condition_dim(),
            config.time_embedding_dim,
            &config.hidden_widths,
            &store,
        )?;
        let schedule = NoiseSchedule::new(config.beta_schedule, config.diffusion_steps, config.beta_start, config.beta_end)?;
        Ok(Self {
            config,
            encoder,
            denoiser,
            schedule,
            normalizer: meta.normalizer,
            store,
        })
    }

    pub fn embed(&self, clouds: &[&PointCloud]) -> Result<Array2<F>> {
        let inputs = clouds
            .iter()
            .map(|c| encoder_input(c, self.encoder.config.cloud_points))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PointCloud> = inputs.iter().collect();
        self.encoder.encode_batch(&self.store, &refs)
    }

    pub fn condition(&self, state: &PointCloud, goals: &[PointCloud], prev: Option<&PinchAction>) -> Result<Vec<F>> {
        if goals.len() != self.config.goal_count() {
            return Err(Error::invalid(format!(
                "{} variant takes {} goal cloud(s), got {}",
                self.config.variant,
                self.config.goal_count(),
                goals.len()
            )));
        }
        let mut clouds = vec![state];
        clouds.extend(goals.iter());
        let emb = self.embed(&clouds)?;
        let goal_embs: Vec<Vec<F>> = (1..emb.nrows()).map(|r| emb.row(r).to_vec()).collect();
        let prev = prev.map(|a| self.normalizer.normalize(a));
        make_condition_vector(&self.config, &emb.row(0).to_vec(), &goal_embs, prev.as_ref())
    }

    /// One denoised action window (`prediction_horizon` actions) for `cond`.
    pub fn sample_actions(&self, cond: &[F], seed: u64) -> Result<Vec<PinchAction>> {
        if cond.len() != self.config.condition_dim() {
            return Err(Error::Shape(format!(
                "condition has length {}, expected {}",
                cond.len(),
                self.config.condition_dim()
            )));
        }
        let c = Array2::from_shape_vec((1, cond.len()), cond.to_vec()).expect("one row");
        let x = ddpm_sample(&self.store, &self.denoiser, &self.schedule, c.view(), &mut seeded_rng(seed))?;
        let d = self.config.action_dim;
        Ok((0..self.config.prediction_horizon)
            .map(|h| {
                let v: Vec<f64> = (0..d).map(|k| x[[0, h * d + k]].f64()).collect();
                self.normalizer.denormalize(&v)
            })
            .collect())
    }
}
