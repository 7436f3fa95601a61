//! PointNet-style cloud encoder, coarse point decoder, and reconstruction
//! pre-training on a synthetic primitive corpus.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::claysim::{
    generate_goal_cloud, new_clay_cylinder, GoalSpec, SimConfig, MAX_GOAL_DIAMETER, MAX_INITIAL_HEIGHT,
    MIN_GOAL_DIAMETER, MIN_INITIAL_HEIGHT,
};
use crate::diffcore::{
    load_checkpoint, save_checkpoint, seeded_rng, Activation, Adam, AdamConfig, Mlp, MlpSpec, ParamStore, Scalar,
    Tape, Var,
};
use crate::error::{Error, Result};
use crate::geometry::{uniform_downsample, Point, PointCloud};
use crate::metrics::chamfer_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Shared per-point MLP, starting at 3.
    pub point_widths: Vec<usize>,
    /// Projection head applied after pooling; starts at the last point width.
    pub head_widths: Vec<usize>,
    /// Hidden widths of the decoder between the embedding and `3 * decoder_points`.
    pub decoder_hidden: Vec<usize>,
    pub decoder_points: usize,
    /// Multiplier applied to xy-centered coordinates before the first layer.
    pub input_scale: f64,
    /// Point count clouds are downsampled to before encoding.
    pub cloud_points: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            point_widths: vec![3, 64, 128, 256],
            head_widths: vec![256, 512, 512, 512],
            decoder_hidden: vec![512],
            decoder_points: 256,
            input_scale: 10.0,
            cloud_points: 256,
        }
    }
}

impl EncoderConfig {
    pub fn embedding_dim(&self) -> usize {
        *self.head_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_widths.first() != Some(&3) {
            return Err(Error::Config("encoder point_widths must start at 3".into()));
        }
        if self.point_widths.last() != self.head_widths.first() {
            return Err(Error::Config("encoder head must start at the pooled feature width".into()));
        }
        if self.point_widths.len() < 2 || self.head_widths.len() < 2 {
            return Err(Error::Config("encoder needs at least one point layer and one head layer".into()));
        }
        if self.decoder_points == 0 || self.cloud_points == 0 || !(self.input_scale > 0.0) {
            return Err(Error::Config("decoder_points, cloud_points and input_scale must be positive".into()));
        }
        Ok(())
    }

    fn point_spec(&self) -> MlpSpec {
        MlpSpec::new(self.point_widths.clone(), Activation::Relu, Some(Activation::Relu))
    }

    fn head_spec(&self) -> MlpSpec {
        MlpSpec::new(self.head_widths.clone(), Activation::Relu, None)
    }

    fn decoder_spec(&self) -> MlpSpec {
        let mut widths = vec![self.embedding_dim()];
        widths.extend(&self.decoder_hidden);
        widths.push(3 * self.decoder_points);
        MlpSpec::new(widths, Activation::Relu, None)
    }
}

/// Per-point MLP, max-pool over points, projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudEncoder {
    pub config: EncoderConfig,
    point: Mlp,
    head: Mlp,
}

impl CloudEncoder {
    pub const PREFIX: &'static str = "enc";

    pub fn init<F: Scalar, R: Rng>(config: EncoderConfig, store: &mut ParamStore<F>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let point = Mlp::init(config.point_spec(), store, "enc.point", rng)?;
        let head = Mlp::init(config.head_spec(), store, "enc.head", rng)?;
        Ok(Self { config, point, head })
    }

    pub fn bind<F: Scalar>(config: EncoderConfig, store: &ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let point = Mlp::bind(config.point_spec(), store, "enc.point")?;
        let head = Mlp::bind(config.head_spec(), store, "enc.head")?;
        Ok(Self { config, point, head })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// xy-centered, scaled coordinates as an `N × 3` matrix.
    pub fn preprocess<F: Scalar>(&self, cloud: &PointCloud) -> Result<Array2<F>> {
        if cloud.is_empty() {
            return Err(Error::invalid("cannot encode an empty cloud"));
        }
        let c = cloud.centered_xy();
        let s = self.config.input_scale;
        Ok(Array2::from_shape_fn((c.len(), 3), |(i, k)| F::of(c.points()[i][k] * s)))
    }

    fn stack<F: Scalar>(&self, clouds: &[&PointCloud]) -> Result<(Array2<F>, Vec<(usize, usize)>)> {
        let parts = clouds.iter().map(|c| self.preprocess::<F>(c)).collect::<Result<Vec<_>>>()?;
        let mut segments = Vec::with_capacity(parts.len());
        let mut start = 0;
        for p in &parts {
            segments.push((start, p.nrows()));
            start += p.nrows();
        }
        let views: Vec<ArrayView2<F>> = parts.iter().map(|p| p.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok((x, segments))
    }

    /// Taped embedding of a batch of clouds, one row each.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, clouds: &[&PointCloud]) -> Result<Var> {
        if clouds.is_empty() {
            return Err(Error::invalid("empty cloud batch"));
        }
        let (x, segments) = self.stack::<F>(clouds)?;
        let xv = tape.leaf(x);
        let feats = self.point.forward(tape, store, xv)?;
        let pooled = tape.segment_max(feats, &segments)?;
        self.head.forward(tape, store, pooled)
    }

    pub fn encode_batch<F: Scalar>(&self, store: &ParamStore<F>, clouds: &[&PointCloud]) -> Result<Array2<F>> {
        if clouds.is_empty() {
            return Ok(Array2::zeros((0, self.embedding_dim())));
        }
        let (x, segments) = self.stack::<F>(clouds)?;
        let feats = self.point.apply(store, x.view())?;
        let mut pooled = Array2::from_elem((segments.len(), feats.ncols()), F::neg_infinity());
        for (si, &(start, len)) in segments.iter().enumerate() {
            let mut row = pooled.row_mut(si);
            for r in start..start + len {
                row.zip_mut_with(&feats.row(r), |m, &v| {
                    if v > *m {
                        *m = v
                    }
                });
            }
        }
        self.head.apply(store, pooled.view())
    }

    /// Rescales the output layer in place so embeddings become
    /// `(e - mean) / std` per dimension; dimensions with `std <= floor` are
    /// only shifted.
    pub fn standardize_output<F: Scalar>(&self, store: &mut ParamStore<F>, mean: &[f64], std: &[f64], floor: f64) -> Result<()> {
        let (w, b) = self.head.last_layer();
        let d = self.embedding_dim();
        if mean.len() != d || std.len() != d {
            return Err(Error::Shape(format!("standardization stats must have length {d}")));
        }
        for j in 0..d {
            let s = if std[j] > floor { std[j] } else { 1.0 };
            store.get_mut(w).column_mut(j).mapv_inplace(|v| F::of(v.f64() / s));
            let bj = &mut store.get_mut(b)[[0, j]];
            *bj = F::of((bj.f64() - mean[j]) / s);
        }
        Ok(())
    }

    pub fn encode<F: Scalar>(&self, store: &ParamStore<F>, cloud: &PointCloud) -> Result<Vec<F>> {
        Ok(self.encode_batch(store, &[cloud])?.row(0).to_vec())
    }
}

/// MLP from an embedding to `M` coarse points in the encoder's input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudDecoder {
    pub points: usize,
    mlp: Mlp,
}

impl CloudDecoder {
    pub fn init<F: Scalar, R: Rng>(config: &EncoderConfig, store: &mut ParamStore<F>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            points: config.decoder_points,
            mlp: Mlp::init(config.decoder_spec(), store, "dec", rng)?,
        })
    }

    pub fn bind<F: Scalar>(config: &EncoderConfig, store: &ParamStore<F>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            points: config.decoder_points,
            mlp: Mlp::bind(config.decoder_spec(), store, "dec")?,
        })
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, embedding: Var) -> Result<Var> {
        self.mlp.forward(tape, store, embedding)
    }

    /// Decoded points of each embedding row, `M × 3` each.
    pub fn decode<F: Scalar>(&self, store: &ParamStore<F>, embeddings: ArrayView2<F>) -> Result<Vec<Array2<F>>> {
        let flat = self.mlp.apply(store, embeddings)?;
        Ok(flat
            .outer_iter()
            .map(|row| row.to_owned().into_shape_with_order((self.points, 3)).expect("3·M outputs"))
            .collect())
    }
}

/// Encoder and decoder sharing one parameter store.
#[derive(Debug, Clone)]
pub struct AutoEncoder<F> {
    pub encoder: CloudEncoder,
    pub decoder: CloudDecoder,
    pub store: ParamStore<F>,
}

impl<F: Scalar> AutoEncoder<F> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let encoder = CloudEncoder::init(config.clone(), &mut store, &mut rng)?;
        let decoder = CloudDecoder::init(&config, &mut store, &mut rng)?;
        Ok(Self { encoder, decoder, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "kind": "autoencoder", "encoder": self.encoder.config });
        save_checkpoint(path, &meta.to_string(), &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, store) = load_checkpoint::<F>(path)?;
        let meta: serde_json::Value = serde_json::from_str(&meta).map_err(|e| Error::format(path, e.to_string()))?;
        if meta["kind"] != "autoencoder" {
            return Err(Error::format(path, "not an encoder checkpoint"));
        }
        let config: EncoderConfig =
            serde_json::from_value(meta["encoder"].clone()).map_err(|e| Error::format(path, e.to_string()))?;
        let encoder = CloudEncoder::bind(config.clone(), &store)?;
        let decoder = CloudDecoder::bind(&config, &store)?;
        Ok(Self { encoder, decoder, store })
    }

    /// Taped mean squared-Chamfer reconstruction loss of a batch.
    pub fn loss_on_tape(&self, tape: &mut Tape<F>, store: &ParamStore<F>, clouds: &[&PointCloud]) -> Result<Var> {
        let z = self.encoder.forward(tape, store, clouds)?;
        let pred = self.decoder.forward(tape, store, z)?;
        let targets = clouds.iter().map(|c| self.encoder.preprocess::<F>(c)).collect::<Result<Vec<_>>>()?;
        tape.chamfer_sq(pred, targets)
    }

    /// Decoded reconstruction mapped back to meters, centered like the input.
    pub fn reconstruct(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let z = self.encoder.encode_batch(&self.store, &[cloud])?;
        let pts = &self.decoder.decode(&self.store, z.view())?[0];
        let s = self.encoder.config.input_scale;
        PointCloud::new(pts.outer_iter().map(|r| [r[0].f64() / s, r[1].f64() / s, r[2].f64() / s]).collect())
    }

    /// Mean Chamfer distance in mm between clouds and their reconstructions.
    pub fn reconstruction_chamfer_mm(&self, clouds: &[PointCloud]) -> Result<f64> {
        if clouds.is_empty() {
            return Err(Error::invalid("no clouds to evaluate"));
        }
        let mut total = 0.0;
        for c in clouds {
            total += chamfer_distance(&self.reconstruct(c)?, &c.centered_xy())?;
        }
        Ok(total / clouds.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Minimizes the reconstruction loss over `corpus` with Adam; returns the mean
/// training loss of each epoch.
pub fn pretrain_reconstruction<F: Scalar>(
    model: &mut AutoEncoder<F>,
    corpus: &[PointCloud],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::invalid("pre-training corpus is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let clouds: Vec<&PointCloud> = chunk.iter().map(|&i| &corpus[i]).collect();
            let mut tape = Tape::new();
            let loss = model.loss_on_tape(&mut tape, &model.store, &clouds)?;
            let grads = tape.backward(loss, &model.store)?;
            adam.step(&mut model.store, &grads)?;
            sum += tape.scalar(loss).f64();
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Cylinder,
    Bowl,
    Sphere,
    Box,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [Self::Cylinder, Self::Bowl, Self::Sphere, Self::Box];
}

fn sphere_surface<R: Rng>(n: usize, radius: f64, rng: &mut R) -> Vec<Point> {
    (0..n)
        .map(|_| loop {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-9 {
                break [radius * v[0] / norm, radius * v[1] / norm, radius + radius * v[2] / norm];
            }
        })
        .collect()
}

fn box_surface<R: Rng>(n: usize, size: [f64; 3], yaw: f64, rng: &mut R) -> Vec<Point> {
    let [a, b, c] = size;
    let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = faces.iter().sum();
    let (sn, cs) = yaw.sin_cos();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut f = 0;
            while f < 5 && pick >= faces[f] {
                pick -= faces[f];
                f += 1;
            }
            let u: f64 = rng.random_range(-0.5..0.5);
            let v: f64 = rng.random_range(-0.5..0.5);
            let sign = if f % 2 == 0 { -0.5 } else { 0.5 };
            let p = match f / 2 {
                0 => [sign * a, u * b, v * c],
                1 => [u * a, sign * b, v * c],
                _ => [u * a, v * b, sign * c],
            };
            [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1], p[2] + 0.5 * c]
        })
        .collect()
}

/// One random primitive centered on the workspace origin.
pub fn sample_primitive<R: Rng>(kind: PrimitiveKind, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    match kind {
        PrimitiveKind::Cylinder => {
            let cfg = SimConfig {
                n_points,
                ..SimConfig::default()
            };
            let h = rng.random_range(MIN_INITIAL_HEIGHT..=MAX_INITIAL_HEIGHT);
            Ok(new_clay_cylinder(&cfg, h, rng.random())?.cloud)
        }
        PrimitiveKind::Bowl => {
            let d = rng.random_range(MIN_GOAL_DIAMETER..=MAX_GOAL_DIAMETER);
            let spec = GoalSpec::from_diameter(d, &SimConfig::default())?;
            let cloud = generate_goal_cloud(&spec, n_points)?;
            crate::geometry::rotate_about_z(&cloud, rng.random_range(-PI..PI), (0.0, 0.0))
        }
        PrimitiveKind::Sphere => PointCloud::new(sphere_surface(n_points, rng.random_range(0.02..0.05), rng)),
        PrimitiveKind::Box => {
            let size = [
                rng.random_range(0.03..0.1),
                rng.random_range(0.03..0.1),
                rng.random_range(0.03..0.08),
            ];
            PointCloud::new(box_surface(n_points, size, rng.random_range(-PI..PI), rng))
        }
    }
}

/// Deterministic corpus cycling through the primitive kinds.
pub fn synthetic_corpus(size: usize, n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    if n_points == 0 {
        return Err(Error::invalid("corpus clouds need at least one point"));
    }
    let mut rng = seeded_rng(seed);
    (0..size)
        .map(|i| sample_primitive(PrimitiveKind::ALL[i % 4], n_points, &mut rng))
        .collect()
}

/// Downsamples every cloud to the encoder's input size with per-index seeds.
pub fn prepare_clouds(clouds: &[PointCloud], n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| uniform_downsample(c, n_points, seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_diff_check, GradCheckOptions};

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            point_widths: vec![3, 8, 12],
            head_widths: vec![12, 10, 6],
            decoder_hidden: vec![9],
            decoder_points: 5,
            input_scale: 10.0,
            cloud_points: 16,
        }
    }

    #[test]
    fn default_shapes() {
        let ae = AutoEncoder::<f32>::new(EncoderConfig::default(), 0).unwrap();
        let c = synthetic_corpus(1, 64, 1).unwrap();
        let e = ae.encoder.encode(&ae.store, &c[0]).unwrap();
        assert_eq!(e.len(), 512);
        let z = ae.encoder.encode_batch(&ae.store, &[&c[0]]).unwrap();
        let dec = ae.decoder.decode(&ae.store, z.view()).unwrap();
        assert_eq!(dec[0].dim(), (256, 3));
    }

    #[test]
    fn permutation_and_duplicates_leave_embedding_unchanged() {
        let ae = AutoEncoder::<f32>::new(EncoderConfig::default(), 3).unwrap();
        let c = &synthetic_corpus(2, 100, 5).unwrap()[1];
        let base = ae.encoder.encode(&ae.store, c).unwrap();
        let mut pts = c.points().to_vec();
        pts.reverse();
        pts.swap(3, 50);
        let perm = PointCloud::new(pts).unwrap();
        assert_eq!(ae.encoder.encode(&ae.store, &perm).unwrap(), base);
        let dup = c.concat(c);
        assert_eq!(ae.encoder.encode(&ae.store, &dup).unwrap(), base);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let ae = AutoEncoder::<f32>::new(tiny(), 0).unwrap();
        assert!(matches!(ae.encoder.encode(&ae.store, &PointCloud::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn taped_and_untaped_agree() {
        let ae = AutoEncoder::<f64>::new(tiny(), 2).unwrap();
        let corpus = synthetic_corpus(3, 20, 9).unwrap();
        let refs: Vec<&PointCloud> = corpus.iter().collect();
        let mut tape = Tape::new();
        let z = ae.encoder.forward(&mut tape, &ae.store, &refs).unwrap();
        let direct = ae.encoder.encode_batch(&ae.store, &refs).unwrap();
        assert!((tape.value(z) - &direct).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        let mut ae = AutoEncoder::<f32>::new(tiny(), 0).unwrap();
        let before = ae.store.clone();
        let corpus = synthetic_corpus(4, 16, 0).unwrap();
        let curve = pretrain_reconstruction(&mut ae, &corpus, &PretrainConfig {
            epochs: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(curve.is_empty());
        assert_eq!(ae.store, before);
        assert!(pretrain_reconstruction(&mut ae, &[], &PretrainConfig::default()).is_err());
    }

    #[test]
    fn reconstruction_gradient_check() {
        let ae = AutoEncoder::<f64>::new(tiny(), 11).unwrap();
        let corpus = synthetic_corpus(2, 12, 4).unwrap();
        let refs: Vec<&PointCloud> = corpus.iter().collect();
        let mut tape = Tape::new();
        let l = ae.loss_on_tape(&mut tape, &ae.store, &refs).unwrap();
        let g = tape.backward(l, &ae.store).unwrap();
        let f = |p: &ParamStore<f64>| {
            let mut t = Tape::new();
            let l = ae.loss_on_tape(&mut t, p, &refs)?;
            Ok(t.scalar(l))
        };
        let rep = finite_diff_check(&ae.store, &g, f, &GradCheckOptions::default()).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn standardized_output_matches_affine_map() {
        let mut ae = AutoEncoder::<f64>::new(tiny(), 6).unwrap();
        let corpus = synthetic_corpus(3, 20, 2).unwrap();
        let before = ae.encoder.encode(&ae.store, &corpus[0]).unwrap();
        let mean: Vec<f64> = (0..6).map(|j| 0.1 * j as f64).collect();
        let std = vec![2.0, 0.5, 1.0, 0.0, 4.0, 1.5];
        ae.encoder.standardize_output(&mut ae.store, &mean, &std, 1e-9).unwrap();
        let after = ae.encoder.encode(&ae.store, &corpus[0]).unwrap();
        for j in 0..6 {
            let s = if std[j] > 1e-9 { std[j] } else { 1.0 };
            assert!((after[j] - (before[j] - mean[j]) / s).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let ae = AutoEncoder::<f32>::new(tiny(), 4).unwrap();
        ae.save(&path).unwrap();
        let back = AutoEncoder::<f32>::load(&path).unwrap();
        assert_eq!(back.store, ae.store);
        assert_eq!(back.encoder, ae.encoder);
    }

    #[test]
    fn corpus_is_deterministic_and_covers_kinds() {
        let a = synthetic_corpus(8, 64, 3).unwrap();
        assert_eq!(a, synthetic_corpus(8, 64, 3).unwrap());
        assert!(a.iter().all(|c| c.len() == 64));
        for c in &a {
            let min_z = c.points().iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
            assert!(min_z > -1e-9);
        }
    }
}
