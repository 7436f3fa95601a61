use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Activation, Tape, Var};
use super::Scalar;
use crate::error::{Error, Result};

/// Layer widths including input and output, e.g. `[3, 64, 128]` is two layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Applied after the last layer; `None` keeps it affine.
    pub output_activation: Option<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, output_activation: Option<Activation>) -> Self {
        Self {
            widths,
            activation,
            output_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::invalid(format!("MLP widths {:?} need >= 2 positive entries", self.widths)));
        }
        Ok(())
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.widths.len() {
            self.output_activation.unwrap_or(Activation::Identity)
        } else {
            self.activation
        }
    }
}

/// Affine + activation stack whose weights live in a [`ParamStore`] under
/// `<prefix>.<layer>.w` (`in × out`) and `<prefix>.<layer>.b` (`1 × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers freshly initialized weights: He-uniform for hidden layers,
    /// LeCun-uniform for an affine output layer, zero biases.
    pub fn init<F: Scalar, R: Rng>(spec: MlpSpec, store: &mut ParamStore<F>, prefix: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.widths.len() - 1);
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let gain = if spec.layer_activation(l) == Activation::Identity { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| F::of(rng.random_range(-bound..bound)));
            let wid = store.add(format!("{prefix}.{l}.w"), w)?;
            let bid = store.add(format!("{prefix}.{l}.b"), Array2::zeros((1, fan_out)))?;
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Binds to weights already present in `store` (e.g. from a checkpoint).
    pub fn bind<F: Scalar>(spec: MlpSpec, store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let wid = store.id(&format!("{prefix}.{l}.w"))?;
            let bid = store.id(&format!("{prefix}.{l}.b"))?;
            if store.get(wid).dim() != (pair[0], pair[1]) || store.get(bid).dim() != (1, pair[1]) {
                return Err(Error::Shape(format!("layer {prefix}.{l} does not match widths {:?}", spec.widths)));
            }
            layers.push((wid, bid));
        }
        Ok(Self { spec, layers })
    }

    /// Weight and bias ids of the output layer.
    pub fn last_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("at least one layer")
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Taped forward pass over a batch (`rows × input_dim`).
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        if tape.value(x).ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.spec.input_dim(),
                tape.value(x).ncols()
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matmul(h, wv)?;
            let z = tape.add_bias(z, bv)?;
            h = tape.activation(z, self.spec.layer_activation(l));
        }
        Ok(h)
    }

    /// Untaped forward pass for inference.
    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.spec.input_dim(),
                x.ncols()
            )));
        }
        let mut h: Option<Array2<F>> = None;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let input = h.as_ref().map(|a| a.view()).unwrap_or(x);
            let mut z = input.dot(store.get(w));
            z += &store.get(b).index_axis(Axis(0), 0);
            let act = self.spec.layer_activation(l);
            if act != Activation::Identity {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_activation_of_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Some(Activation::Silu));
        let mlp = Mlp::init(spec, &mut store, "m", &mut rng).unwrap();
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.get_mut(id).fill(0.0);
        }
        let y = mlp.apply(&store, array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let mut store = ParamStore::<f64>::new();
        store.add("lin.0.w", Array2::eye(3)).unwrap();
        store.add("lin.0.b", Array2::zeros((1, 3))).unwrap();
        let mlp = Mlp::bind(MlpSpec::new(vec![3, 3], Activation::Relu, None), &store, "lin").unwrap();
        let x = array![[0.5, -1.5, 2.0]];
        assert_eq!(mlp.apply(&store, x.view()).unwrap(), x);
    }

    #[test]
    fn matches_hand_written_forward() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = MlpSpec::new(vec![4, 5, 3], Activation::Relu, None);
        let mlp = Mlp::init(spec, &mut store, "net", &mut rng).unwrap();
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.get_mut(id).mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let x = [0.3, -0.7, 1.1, 0.05];
        let w0 = store.get(store.id("net.0.w").unwrap());
        let b0 = store.get(store.id("net.0.b").unwrap());
        let w1 = store.get(store.id("net.1.w").unwrap());
        let b1 = store.get(store.id("net.1.b").unwrap());
        let mut hidden = [0.0; 5];
        for j in 0..5 {
            let mut acc = b0[[0, j]];
            for i in 0..4 {
                acc += x[i] * w0[[i, j]];
            }
            hidden[j] = acc.max(0.0);
        }
        let mut expected = [0.0; 3];
        for k in 0..3 {
            expected[k] = b1[[0, k]] + (0..5).map(|j| hidden[j] * w1[[j, k]]).sum::<f64>();
        }
        let xin = Array1::from(x.to_vec()).insert_axis(Axis(0));
        let y = mlp.apply(&store, xin.view()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(xin.clone());
        let yv = mlp.forward(&mut tape, &store, xv).unwrap();
        for k in 0..3 {
            assert!((y[[0, k]] - expected[k]).abs() < 1e-12);
            assert!((tape.value(yv)[[0, k]] - expected[k]).abs() < 1e-12);
        }
        let bad = array![[1.0, 2.0]];
        assert!(matches!(mlp.apply(&store, bad.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, None).validate().is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], Activation::Relu, None).validate().is_err());
    }
}
