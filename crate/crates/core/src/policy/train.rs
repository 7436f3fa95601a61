use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::diffusion::{diffusion_loss, NoiseDraw};
use super::{encoder_input, make_condition_vector, ActionNormalizer, PolicyConfig, PolicyModel, Variant};
use crate::claysim::PinchAction;
use crate::dataio::AugmentedDataset;
use crate::diffcore::{seeded_rng, Adam, AdamConfig, ParamStore, Scalar, Tape, Var};
use crate::encoder::CloudEncoder;
use crate::error::{Error, Result};
use crate::geometry::{rotate_about_z, PointCloud};

/// Per-action gamma labels for a trajectory of `len` actions.
pub fn gamma_labels(variant: Variant, len: usize) -> Vec<f64> {
    match variant {
        Variant::Progress if len == 1 => vec![1.0],
        Variant::Progress => (0..len).map(|k| -1.0 + 2.0 * k as f64 / (len - 1) as f64).collect(),
        _ => (0..len).map(|k| if k + 1 == len { 1.0 } else { -1.0 }).collect(),
    }
}

/// State indices conditioning step `k`: `k + j·step` for `j = 1..=n`, clamped
/// to the final state `len`.
pub fn subgoal_indices(k: usize, len: usize, step: usize, n: usize) -> Vec<usize> {
    (1..=n).map(|j| (k + j * step).min(len)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 3e-4,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub samples: usize,
}

struct Prepared {
    states: Vec<PointCloud>,
    goal: PointCloud,
    actions: Vec<PinchAction>,
    gammas: Vec<f64>,
}

/// Training windows over an (augmented) dataset, with clouds reduced to the
/// encoder input size once and rotated on demand.
pub struct TrainingSet {
    config: PolicyConfig,
    trajs: Vec<Prepared>,
    angles: Vec<f64>,
    samples: Vec<(usize, usize, usize)>,
}

impl TrainingSet {
    pub fn new(data: &AugmentedDataset, config: &PolicyConfig, points: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("training dataset is empty"));
        }
        config.validate()?;
        let mut trajs = Vec::with_capacity(data.base.len());
        for t in &data.base {
            if t.is_empty() {
                return Err(Error::Validation(format!("trajectory '{}' has no actions", t.id)));
            }
            let states = (0..=t.len()).map(|k| encoder_input(t.state(k), points)).collect::<Result<Vec<_>>>()?;
            trajs.push(Prepared {
                states,
                goal: encoder_input(&t.goal, points)?,
                actions: t.actions().copied().collect(),
                gammas: gamma_labels(config.variant, t.len()),
            });
        }
        let angles: Vec<f64> = (0..data.rotations()).map(|r| data.angle(r)).collect();
        let mut samples = Vec::new();
        for (ti, t) in trajs.iter().enumerate() {
            for r in 0..angles.len() {
                for k in 0..t.actions.len() {
                    samples.push((ti, r, k));
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            trajs,
            angles,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn action(&self, t: usize, r: usize, k: usize) -> PinchAction {
        let p = &self.trajs[t];
        PinchAction {
            gamma: p.gammas[k],
            ..p.actions[k].rotated_about_z(self.angles[r])
        }
    }

    pub fn normalizer(&self) -> Result<ActionNormalizer> {
        let mut all = Vec::new();
        for (ti, t) in self.trajs.iter().enumerate() {
            for r in 0..self.angles.len() {
                for k in 0..t.actions.len() {
                    all.push(self.action(ti, r, k));
                }
            }
        }
        ActionNormalizer::fit(&all)
    }

    /// Normalized window of `prediction_horizon` actions from sample `i`,
    /// padded by repeating the final action.
    pub fn window(&self, i: usize, norm: &ActionNormalizer) -> Vec<f64> {
        let (t, r, k) = self.samples[i];
        let len = self.trajs[t].actions.len();
        (0..self.config.prediction_horizon)
            .flat_map(|h| norm.normalize(&self.action(t, r, (k + h).min(len - 1))))
            .collect()
    }

    pub fn prev(&self, i: usize, norm: &ActionNormalizer) -> Option<[f64; 8]> {
        let (t, r, k) = self.samples[i];
        (k > 0).then(|| norm.normalize(&self.action(t, r, k - 1)))
    }

    fn goal_slots(&self, t: usize, k: usize) -> Vec<Option<usize>> {
        match self.config.variant {
            Variant::Subgoal => {
                let len = self.trajs[t].actions.len();
                subgoal_indices(k, len, self.config.subgoal_step, self.config.n_subgoals())
                    .into_iter()
                    .map(Some)
                    .collect()
            }
            _ => vec![None],
        }
    }

    fn cloud(&self, t: usize, r: usize, state: Option<usize>) -> Result<PointCloud> {
        let p = &self.trajs[t];
        let c = match state {
            Some(s) => &p.states[s],
            None => &p.goal,
        };
        rotate_about_z(c, self.angles[r], (0.0, 0.0))
    }

    pub fn state_cloud(&self, i: usize) -> Result<PointCloud> {
        let (t, r, k) = self.samples[i];
        self.cloud(t, r, Some(k))
    }

    /// Goal cloud, or the `N` future states for the subgoal variant.
    pub fn goal_clouds(&self, i: usize) -> Result<Vec<PointCloud>> {
        let (t, r, k) = self.samples[i];
        self.goal_slots(t, k).into_iter().map(|s| self.cloud(t, r, s)).collect()
    }

    /// Per-dimension mean and standard deviation of the embeddings of every
    /// unrotated state and goal.
    fn embedding_stats<F: Scalar>(&self, encoder: &CloudEncoder, store: &ParamStore<F>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut clouds: Vec<&PointCloud> = Vec::new();
        for p in &self.trajs {
            clouds.extend(p.states.iter());
            clouds.push(&p.goal);
        }
        let d = encoder.embedding_dim();
        let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
        for chunk in clouds.chunks(64) {
            let e = encoder.encode_batch(store, chunk)?;
            for row in e.outer_iter() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v.f64();
                    sq[j] += v.f64() * v.f64();
                }
            }
        }
        let n = clouds.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
        Ok((mean, std))
    }

    /// Embeddings of every state and goal at every rotation under frozen weights.
    fn embedding_cache<F: Scalar>(&self, encoder: &CloudEncoder, store: &ParamStore<F>) -> Result<Vec<Array2<F>>> {
        let mut out = Vec::with_capacity(self.trajs.len() * self.angles.len());
        for t in 0..self.trajs.len() {
            for r in 0..self.angles.len() {
                let mut clouds = Vec::with_capacity(self.trajs[t].states.len() + 1);
                for s in 0..self.trajs[t].states.len() {
                    clouds.push(self.cloud(t, r, Some(s))?);
                }
                clouds.push(self.cloud(t, r, None)?);
                let refs: Vec<&PointCloud> = clouds.iter().collect();
                out.push(encoder.encode_batch(store, &refs)?);
            }
        }
        Ok(out)
    }

    fn cached_condition<F: Scalar>(&self, cache: &[Array2<F>], i: usize, norm: &ActionNormalizer) -> Result<Vec<F>> {
        let (t, r, k) = self.samples[i];
        let rows = &cache[t * self.angles.len() + r];
        let goal_row = rows.nrows() - 1;
        let goals: Vec<Vec<F>> = self
            .goal_slots(t, k)
            .into_iter()
            .map(|s| rows.row(s.unwrap_or(goal_row)).to_vec())
            .collect();
        make_condition_vector(&self.config, &rows.row(k).to_vec(), &goals, self.prev(i, norm).as_ref())
    }
}

/// Inputs of one training batch in cloud form, for the fine-tuning path.
pub struct CloudBatch<F> {
    pub states: Vec<PointCloud>,
    /// One list per goal slot, each with a cloud per batch row.
    pub goals: Vec<Vec<PointCloud>>,
    pub prev: Array2<F>,
}

impl<F: Scalar> PolicyModel<F> {
    /// Condition rows built on the tape so gradients reach the encoder.
    pub fn condition_on_tape(&self, tape: &mut Tape<F>, store: &ParamStore<F>, batch: &CloudBatch<F>) -> Result<Var> {
        let states: Vec<&PointCloud> = batch.states.iter().collect();
        let mut parts = vec![self.encoder.forward(tape, store, &states)?];
        for slot in &batch.goals {
            let refs: Vec<&PointCloud> = slot.iter().collect();
            parts.push(self.encoder.forward(tape, store, &refs)?);
        }
        parts.push(tape.leaf(batch.prev.clone()));
        tape.concat_cols(&parts)
    }

    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &CloudBatch<F>,
        x0: &Array2<F>,
        draw: &NoiseDraw<F>,
    ) -> Result<Var> {
        let cond = self.condition_on_tape(tape, store, batch)?;
        diffusion_loss(tape, store, &self.denoiser, &self.schedule, x0, cond, draw)
    }
}

fn prev_row(p: Option<[f64; 8]>) -> [f64; 8] {
    p.unwrap_or([0.0; 8])
}

/// DDPM epsilon-prediction training of a fresh denoiser on `data`.
///
/// With `finetune_encoder` the encoder copy is trained jointly through the
/// condition; otherwise its embeddings are computed once and cached.
pub fn train_policy<F: Scalar>(
    data: &AugmentedDataset,
    config: &PolicyConfig,
    encoder: &CloudEncoder,
    encoder_store: &ParamStore<F>,
    train: &TrainConfig,
) -> Result<(PolicyModel<F>, TrainReport)> {
    if train.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let set = TrainingSet::new(data, config, encoder.config.cloud_points)?;
    let norm = set.normalizer()?;
    let mut model = PolicyModel::new(config.clone(), encoder, encoder_store, norm.clone(), train.seed)?;
    let (mean, std) = set.embedding_stats(&model.encoder, &model.store)?;
    model.encoder.standardize_output(&mut model.store, &mean, &std, 1e-6)?;
    let cache = if config.finetune_encoder {
        None
    } else {
        let c = set.embedding_cache(&model.encoder, &model.store)?;
        log::info!("cached embeddings for {} trajectory views", c.len());
        Some(c)
    };
    let mut rng = seeded_rng(train.seed ^ 0x7a11);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: train.lr,
            ..AdamConfig::default()
        },
    );
    let dim = config.window_dim();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut curve = Vec::new();
    let mut steps = 0;
    'epochs: for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for chunk in order.chunks(train.batch_size) {
            if train.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let b = chunk.len();
            let mut x0 = Array2::zeros((b, dim));
            for (row, &i) in chunk.iter().enumerate() {
                for (c, v) in set.window(i, &norm).into_iter().enumerate() {
                    x0[[row, c]] = F::of(v);
                }
            }
            let draw = NoiseDraw::sample(b, dim, config.diffusion_steps, &mut rng);
            let mut tape = Tape::new();
            let loss = match &cache {
                Some(cache) => {
                    let mut cond = Array2::zeros((b, config.condition_dim()));
                    for (row, &i) in chunk.iter().enumerate() {
                        for (c, v) in set.cached_condition(cache, i, &norm)?.into_iter().enumerate() {
                            cond[[row, c]] = v;
                        }
                    }
                    let cv = tape.leaf(cond);
                    diffusion_loss(&mut tape, &model.store, &model.denoiser, &model.schedule, &x0, cv, &draw)?
                }
                None => {
                    let states = chunk.iter().map(|&i| set.state_cloud(i)).collect::<Result<Vec<_>>>()?;
                    let mut goals = vec![Vec::with_capacity(b); config.goal_count()];
                    for &i in chunk {
                        for (slot, g) in set.goal_clouds(i)?.into_iter().enumerate() {
                            goals[slot].push(g);
                        }
                    }
                    let prev = Array2::from_shape_fn((b, 8), |(row, c)| F::of(prev_row(set.prev(chunk[row], &norm))[c]));
                    let batch = CloudBatch { states, goals, prev };
                    model.loss_on_tape(&mut tape, &model.store, &batch, &x0, &draw)?
                }
            };
            let grads = tape.backward(loss, &model.store)?;
            adam.step(&mut model.store, &grads)?;
            sum += tape.scalar(loss).f64();
            count += 1;
            steps += 1;
        }
        if count > 0 {
            let mean = sum / count as f64;
            log::info!("policy epoch {epoch}: loss {mean:.5} ({steps} steps)");
            curve.push(mean);
        }
    }
    Ok((
        model,
        TrainReport {
            loss_curve: curve,
            steps,
            samples: set.len(),
        },
    ))
}
