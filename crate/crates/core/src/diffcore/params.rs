use std::collections::HashMap;

use ndarray::{Array2, Zip};

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named 2-D parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter '{name}'")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<F>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| G::of(x.f64()))).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every parameter of `other` whose name also exists here.
    pub fn copy_matching(&mut self, other: &ParamStore<F>) -> Result<usize> {
        let mut copied = 0;
        for (_, name, value) in other.iter() {
            if let Some(&i) = self.index.get(name) {
                if self.values[i].dim() != value.dim() {
                    return Err(Error::Shape(format!(
                        "parameter '{name}' has shape {:?}, source has {:?}",
                        self.values[i].dim(),
                        value.dim()
                    )));
                }
                self.values[i].assign(value);
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// One gradient array per parameter, shape-matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Array2<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            grads: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<F>) {
        self.grads[id.0] += g;
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale(&mut self, s: F) {
        self.grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * s));
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x.f64() * x.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_shapes(&self, store: &ParamStore<F>) -> Result<()> {
        if self.grads.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                self.grads.len(),
                store.len()
            )));
        }
        for (id, name, v) in store.iter() {
            if self.grads[id.0].dim() != v.dim() {
                return Err(Error::Shape(format!("gradient of '{name}' does not match its parameter")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<F> {
    pub m: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
}

impl<F: Scalar> AdamMoments<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            m: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
            v: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }
}

/// One bias-corrected Adam step at iteration `step` (1-based).
pub fn adam_update<F: Scalar>(
    store: &mut ParamStore<F>,
    grads: &Gradients<F>,
    moments: &mut AdamMoments<F>,
    cfg: &AdamConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::invalid("Adam step counter starts at 1"));
    }
    grads.check_shapes(store)?;
    let b1 = F::of(cfg.beta1);
    let b2 = F::of(cfg.beta2);
    let one = F::one();
    let bc1 = F::of(1.0 - cfg.beta1.powf(step as f64));
    let bc2 = F::of(1.0 - cfg.beta2.powf(step as f64));
    let lr = F::of(cfg.lr);
    let eps = F::of(cfg.eps);
    for i in 0..store.values.len() {
        Zip::from(&mut store.values[i])
            .and(&grads.grads[i])
            .and(&mut moments.m[i])
            .and(&mut moments.v[i])
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Adam optimizer owning its moments and step counter.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    moments: AdamMoments<F>,
    step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            moments: AdamMoments::zeros_like(store),
            step: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        self.step += 1;
        adam_update(store, grads, &mut self.moments, &self.cfg, self.step)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}
