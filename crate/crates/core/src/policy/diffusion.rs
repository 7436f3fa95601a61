//! DDPM noise schedule, the conditional MLP denoiser, training loss and
//! ancestral sampling over flat vectors.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Mlp, MlpSpec, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSchedule {
    Linear,
    Cosine,
}

impl FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown beta schedule '{other}'"))),
        }
    }
}

/// Precomputed `β_t`, `α_t` and `ᾱ_t` for `t = 1..=T` (stored at index `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: BetaSchedule, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        let betas: Vec<f64> = match kind {
            BetaSchedule::Linear => {
                if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::invalid("linear betas need 0 < start <= end < 1"));
                }
                (0..steps)
                    .map(|i| {
                        let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                        beta_start + f * (beta_end - beta_start)
                    })
                    .collect()
            }
            BetaSchedule::Cosine => {
                let s = 0.008;
                let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * PI / 2.0).cos().powi(2);
                (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999)).collect()
            }
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Sinusoidal embedding of an integer timestep, `dim` must be even.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out
}

/// MLP predicting the noise in `x_t` from `[x_t ∥ time embedding ∥ condition]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub x_dim: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    mlp: Mlp,
}

impl Denoiser {
    pub const PREFIX: &'static str = "den";

    fn spec(x_dim: usize, cond_dim: usize, time_dim: usize, hidden: &[usize]) -> MlpSpec {
        let mut widths = vec![x_dim + time_dim + cond_dim];
        widths.extend(hidden);
        widths.push(x_dim);
        MlpSpec::new(widths, Activation::Silu, None)
    }

    fn check_dims(x_dim: usize, time_dim: usize) -> Result<()> {
        if x_dim == 0 || time_dim == 0 || !time_dim.is_multiple_of(2) {
            return Err(Error::Config("denoiser needs x_dim > 0 and an even, positive time_dim".into()));
        }
        Ok(())
    }

    pub fn init<F: Scalar, R: Rng>(
        x_dim: usize,
        cond_dim: usize,
        time_dim: usize,
        hidden: &[usize],
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_dims(x_dim, time_dim)?;
        let mlp = Mlp::init(Self::spec(x_dim, cond_dim, time_dim, hidden), store, Self::PREFIX, rng)?;
        Ok(Self {
            x_dim,
            cond_dim,
            time_dim,
            mlp,
        })
    }

    pub fn bind<F: Scalar>(x_dim: usize, cond_dim: usize, time_dim: usize, hidden: &[usize], store: &ParamStore<F>) -> Result<Self> {
        Self::check_dims(x_dim, time_dim)?;
        let mlp = Mlp::bind(Self::spec(x_dim, cond_dim, time_dim, hidden), store, Self::PREFIX)?;
        Ok(Self {
            x_dim,
            cond_dim,
            time_dim,
            mlp,
        })
    }

    fn time_rows<F: Scalar>(&self, ts: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((ts.len(), self.time_dim));
        for (r, &t) in ts.iter().enumerate() {
            for (c, v) in timestep_embedding(t, self.time_dim).into_iter().enumerate() {
                out[[r, c]] = F::of(v);
            }
        }
        out
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x_t: Var, ts: &[usize], cond: Var) -> Result<Var> {
        let rows = tape.value(x_t).nrows();
        if tape.value(x_t).ncols() != self.x_dim || tape.value(cond).dim() != (rows, self.cond_dim) || ts.len() != rows {
            return Err(Error::Shape(format!(
                "denoiser input: x {:?}, cond {:?}, {} timesteps",
                tape.value(x_t).dim(),
                tape.value(cond).dim(),
                ts.len()
            )));
        }
        let temb = tape.leaf(self.time_rows(ts));
        let input = tape.concat_cols(&[x_t, temb, cond])?;
        self.mlp.forward(tape, store, input)
    }

    pub fn predict<F: Scalar>(&self, store: &ParamStore<F>, x_t: ArrayView2<F>, t: usize, cond: ArrayView2<F>) -> Result<Array2<F>> {
        let rows = x_t.nrows();
        if x_t.ncols() != self.x_dim || cond.dim() != (rows, self.cond_dim) {
            return Err(Error::Shape(format!("denoiser input: x {:?}, cond {:?}", x_t.dim(), cond.dim())));
        }
        let temb = self.time_rows::<F>(&vec![t; rows]);
        let input = ndarray::concatenate(ndarray::Axis(1), &[x_t, temb.view(), cond]).map_err(|e| Error::Shape(e.to_string()))?;
        self.mlp.apply(store, input.view())
    }
}

/// Timesteps and Gaussian noise for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<F> {
    pub ts: Vec<usize>,
    pub eps: Array2<F>,
}

impl<F: Scalar> NoiseDraw<F> {
    pub fn sample<R: Rng>(rows: usize, dim: usize, steps: usize, rng: &mut R) -> Self {
        let ts = (0..rows).map(|_| rng.random_range(1..=steps)).collect();
        let eps = Array2::from_shape_fn((rows, dim), |_| F::of(rng.sample::<f64, _>(StandardNormal)));
        Self { ts, eps }
    }
}

/// Epsilon-prediction loss: noise `x0` to `x_t` and regress the noise.
pub fn diffusion_loss<F: Scalar>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    x0: &Array2<F>,
    cond: Var,
    draw: &NoiseDraw<F>,
) -> Result<Var> {
    if draw.eps.dim() != x0.dim() || draw.ts.len() != x0.nrows() {
        return Err(Error::Shape("noise draw does not match the batch".into()));
    }
    let mut x_t = Array2::zeros(x0.dim());
    for (r, &t) in draw.ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (a, b) = (F::of(ab.sqrt()), F::of((1.0 - ab).sqrt()));
        for c in 0..x0.ncols() {
            x_t[[r, c]] = a * x0[[r, c]] + b * draw.eps[[r, c]];
        }
    }
    let xv = tape.leaf(x_t);
    let pred = denoiser.forward(tape, store, xv, &draw.ts, cond)?;
    let target = tape.leaf(draw.eps.clone());
    let diff = tape.sub(pred, target)?;
    Ok(tape.mean_square(diff))
}

/// Ancestral DDPM sampling of one `x0` per condition row, with the
/// predicted `x0` clipped to `[-1, 1]` at every step.
pub fn ddpm_sample<F: Scalar, R: Rng>(
    store: &ParamStore<F>,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    cond: ArrayView2<F>,
    rng: &mut R,
) -> Result<Array2<F>> {
    let rows = cond.nrows();
    let dim = denoiser.x_dim;
    let mut x: Array2<F> = Array2::from_shape_fn((rows, dim), |_| F::of(rng.sample::<f64, _>(StandardNormal)));
    for t in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict(store, x.view(), t, cond)?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let beta = schedule.betas[t - 1];
        let alpha = schedule.alphas[t - 1];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        for r in 0..rows {
            for c in 0..dim {
                let xt = x[[r, c]].f64();
                let x0 = ((xt - (1.0 - ab).sqrt() * eps[[r, c]].f64()) / ab.sqrt()).clamp(-1.0, 1.0);
                let mut next = c0 * x0 + ct * xt;
                if t > 1 {
                    next += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                x[[r, c]] = F::of(next);
            }
        }
    }
    Ok(x)
}
