//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};
use super::Scalar;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared on an absolute scale of `tolerance * floor`.
    pub floor: f64,
    /// Coordinates probed per parameter; `None` checks all.
    pub max_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-3,
            max_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// `loss` is always evaluated in `f64` on a cast copy of the parameters, so an
/// `f32` model is checked against a double-precision difference quotient.
pub fn finite_diff_check<F: Scalar>(
    params: &ParamStore<F>,
    analytic: &Gradients<F>,
    loss: impl Fn(&ParamStore<f64>) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    analytic.check_shapes(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.cast::<f64>();
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let ids: Vec<_> = params.iter().map(|(id, name, v)| (id, name.to_string(), v.len())).collect();
    for (id, name, len) in ids {
        let coords: Vec<usize> = match opts.max_per_param {
            Some(k) if k < len => index::sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for c in coords {
            let orig = probe.get(id).as_slice().expect("standard layout")[c];
            probe.get_mut(id).as_slice_mut().expect("standard layout")[c] = orig + opts.step;
            let up = loss(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("standard layout")[c] = orig - opts.step;
            let down = loss(&probe)?;
            probe.get_mut(id).as_slice_mut().expect("standard layout")[c] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(id).as_slice().expect("standard layout")[c].f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if err > max_err || !err.is_finite() {
                max_err = if err.is_finite() { err } else { f64::INFINITY };
                worst = Some((name.clone(), c));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        worst,
        checked,
        tolerance: opts.tolerance,
        passed: max_err < opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, Mlp, MlpSpec, Tape};
    use ndarray::{array, Array2};
    use rand::Rng;

    fn linear_loss<F: Scalar>(store: &ParamStore<F>) -> Result<(F, Gradients<F>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.5, -2.0], [0.5, 3.0]].mapv(F::of));
        let w = tape.param(store, store.id("w")?);
        let y = tape.matmul(x, w)?;
        let l = tape.mean_square(y);
        Ok((tape.scalar(l), tape.backward(l, store)?))
    }

    fn linear_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", array![[0.2], [-0.4]]).unwrap();
        s
    }

    #[test]
    fn linear_model_passes_tightly() {
        let s = linear_store();
        let (_, g) = linear_loss(&s).unwrap();
        let rep = finite_diff_check(&s, &g, |p| Ok(linear_loss(p)?.0), &GradCheckOptions {
            tolerance: 1e-9,
            ..Default::default()
        })
        .unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let s = linear_store();
        let (_, mut g) = linear_loss(&s).unwrap();
        g.scale(1.01);
        let rep = finite_diff_check(&s, &g, |p| Ok(linear_loss(p)?.0), &GradCheckOptions::default()).unwrap();
        assert!(!rep.passed);
        assert!(rep.max_rel_error > 1e-3);
    }

    fn mlp_loss<F: Scalar>(mlp: &Mlp, store: &ParamStore<F>, x: &Array2<f64>, target: &Array2<f64>) -> Result<(F, Gradients<F>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.mapv(F::of));
        let y = mlp.forward(&mut tape, store, xv)?;
        let t = tape.leaf(target.mapv(F::of));
        let d = tape.sub(y, t)?;
        let l = tape.mean_square(d);
        Ok((tape.scalar(l), tape.backward(l, store)?))
    }

    #[test]
    fn random_mlp_matches_finite_differences_in_both_precisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::<f64>::new();
        let spec = MlpSpec::new(vec![4, 6, 5, 3], Activation::Silu, Some(Activation::Tanh));
        let mlp = Mlp::init(spec, &mut store, "m", &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));

        let (_, g) = mlp_loss(&mlp, &store, &x, &t).unwrap();
        let opts = GradCheckOptions::default();
        let rep = finite_diff_check(&store, &g, |p| Ok(mlp_loss(&mlp, p, &x, &t)?.0), &opts).unwrap();
        assert!(rep.passed, "{rep:?}");

        let store32 = store.cast::<f32>();
        let (_, g32) = mlp_loss(&mlp, &store32, &x, &t).unwrap();
        let opts32 = GradCheckOptions {
            tolerance: 1e-3,
            ..Default::default()
        };
        let rep = finite_diff_check(&store32, &g32, |p| Ok(mlp_loss(&mlp, p, &x, &t)?.0), &opts32).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
