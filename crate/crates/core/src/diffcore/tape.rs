//! Reverse-mode differentiation over 2-D arrays.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates parameter gradients.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::Silu => x / (F::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative<F: Scalar>(self, x: F, y: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = F::one() / (F::one() + (-x).exp());
                s * (F::one() + x * (F::one() - s))
            }
            Activation::Tanh => F::one() - y * y,
        }
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Act(Var, Activation),
    /// Column-wise max over row segments; `argmax[(seg, col)]` is the source row.
    SegmentMax { src: Var, argmax: Array2<usize> },
    ConcatCols(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, F),
    MeanSquare(Var),
    /// Batched squared Chamfer loss; nearest indices recorded per sample.
    ChamferSq {
        pred: Var,
        targets: Vec<Array2<F>>,
        pred_nn: Vec<Vec<usize>>,
        target_nn: Vec<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(Error::Shape(format!("bias {:?} for input {:?}", vb.dim(), va.dim())));
        }
        let out = va + vb;
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(a, bias), ng))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let out = self.value(a).mapv(|x| act.apply(x));
        let ng = self.needs(a);
        self.push(out, Op::Act(a, act), ng)
    }

    /// Max over each row segment `(start, len)`, column by column.
    pub fn segment_max(&mut self, a: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let va = self.value(a);
        let cols = va.ncols();
        let mut out = Array2::zeros((segments.len(), cols));
        let mut argmax = Array2::zeros((segments.len(), cols));
        for (si, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > va.nrows() {
                return Err(Error::Shape(format!("segment ({start}, {len}) outside {} rows", va.nrows())));
            }
            out.row_mut(si).assign(&va.row(start));
            argmax.row_mut(si).fill(start);
            for r in start + 1..start + len {
                let row = va.row(r);
                for c in 0..cols {
                    if row[c] > out[[si, c]] {
                        out[[si, c]] = row[c];
                        argmax[[si, c]] = r;
                    }
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::SegmentMax { src: a, argmax }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).nrows()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(Error::Shape("concat parts have different row counts".into()));
        }
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::Shape("add operands differ in shape".into()));
        }
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::Shape("sub operands differ in shape".into()));
        }
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).mapv(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Mean of squared entries, as a `1 × 1` value.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = F::of(va.len().max(1) as f64);
        let v = va.iter().fold(F::zero(), |acc, &x| acc + x * x) / n;
        let ng = self.needs(a);
        self.push(Array2::from_elem((1, 1), v), Op::MeanSquare(a), ng)
    }

    /// Batch-mean of `½·(mean_pred min_target d² + mean_target min_pred d²)`.
    ///
    /// Row `b` of `pred` holds `M` points flattened as `x, y, z, x, y, z, …`;
    /// `targets[b]` is an `N_b × 3` array.
    pub fn chamfer_sq(&mut self, pred: Var, targets: Vec<Array2<F>>) -> Result<Var> {
        let vp = self.value(pred);
        if vp.nrows() != targets.len() || !vp.ncols().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "chamfer: prediction {:?} for {} targets",
                vp.dim(),
                targets.len()
            )));
        }
        let m = vp.ncols() / 3;
        let half = F::of(0.5);
        let mut total = F::zero();
        let mut pred_nn = Vec::with_capacity(targets.len());
        let mut target_nn = Vec::with_capacity(targets.len());
        for (b, t) in targets.iter().enumerate() {
            if t.ncols() != 3 || t.nrows() == 0 || m == 0 {
                return Err(Error::Shape("chamfer: targets must be non-empty N × 3".into()));
            }
            let row = vp.row(b);
            let n = t.nrows();
            let mut best_p = vec![(F::infinity(), 0usize); m];
            let mut best_t = vec![(F::infinity(), 0usize); n];
            for i in 0..m {
                let (px, py, pz) = (row[3 * i], row[3 * i + 1], row[3 * i + 2]);
                for j in 0..n {
                    let d = (px - t[[j, 0]]).powi(2) + (py - t[[j, 1]]).powi(2) + (pz - t[[j, 2]]).powi(2);
                    if d < best_p[i].0 {
                        best_p[i] = (d, j);
                    }
                    if d < best_t[j].0 {
                        best_t[j] = (d, i);
                    }
                }
            }
            let fwd = best_p.iter().fold(F::zero(), |a, x| a + x.0) / F::of(m as f64);
            let bwd = best_t.iter().fold(F::zero(), |a, x| a + x.0) / F::of(n as f64);
            total += half * (fwd + bwd);
            pred_nn.push(best_p.into_iter().map(|x| x.1).collect());
            target_nn.push(best_t.into_iter().map(|x| x.1).collect());
        }
        let v = total / F::of(targets.len().max(1) as f64);
        let ng = self.needs(pred);
        Ok(self.push(
            Array2::from_elem((1, 1), v),
            Op::ChamferSq {
                pred,
                targets,
                pred_nn,
                target_nn,
            },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter of `store`.
    pub fn backward(&self, loss: Var, store: &ParamStore<F>) -> Result<Gradients<F>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward called before any forward pass".into()));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Usage(format!("loss must be 1 × 1, got {:?}", self.value(loss).dim())));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Array2<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));

        let acc = |grads: &mut Vec<Option<Array2<F>>>, v: Var, g: Array2<F>| match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if store.get(*id).dim() != g.dim() {
                        return Err(Error::Shape(format!("parameter '{}' changed shape", store.name(*id))));
                    }
                    out.accumulate(*id, &g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddBias(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Act(a, act) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .and(&node.value)
                        .for_each(|d, &x, &y| *d *= act.derivative(x, y));
                    acc(&mut grads, *a, d);
                }
                Op::SegmentMax { src, argmax } => {
                    let mut d = Array2::zeros(self.value(*src).dim());
                    for ((s, c), &r) in argmax.indexed_iter() {
                        d[[r, c]] += g[[s, c]];
                    }
                    acc(&mut grads, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.needs(*p) {
                            acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.mapv(|x| -x));
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.mapv(|x| x * *s)),
                Op::MeanSquare(a) => {
                    let va = self.value(*a);
                    let k = g[[0, 0]] * F::of(2.0 / va.len().max(1) as f64);
                    acc(&mut grads, *a, va.mapv(|x| x * k));
                }
                Op::ChamferSq {
                    pred,
                    targets,
                    pred_nn,
                    target_nn,
                } => {
                    let vp = self.value(*pred);
                    let m = vp.ncols() / 3;
                    let batch = F::of(targets.len() as f64);
                    let mut d = Array2::zeros(vp.dim());
                    for (b, t) in targets.iter().enumerate() {
                        let n = t.nrows();
                        // d/dp of ½·mean d² is (p - t)/count.
                        let wf = g[[0, 0]] / (batch * F::of(m as f64));
                        let wb = g[[0, 0]] / (batch * F::of(n as f64));
                        for i in 0..m {
                            let j = pred_nn[b][i];
                            for k in 0..3 {
                                d[[b, 3 * i + k]] += wf * (vp[[b, 3 * i + k]] - t[[j, k]]);
                            }
                        }
                        for j in 0..n {
                            let i = target_nn[b][j];
                            for k in 0..3 {
                                d[[b, 3 * i + k]] += wb * (vp[[b, 3 * i + k]] - t[[j, k]]);
                            }
                        }
                    }
                    acc(&mut grads, *pred, d);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", array![[0.7]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let wv = tape.param(&store, w);
        let y = tape.matmul(x, wv).unwrap();
        let g = tape.backward(y, &store).unwrap();
        assert_eq!(g.get(w)[[0, 0]], 2.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", array![[0.7, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let _ = tape.param(&store, w);
        let c = tape.leaf(array![[3.0]]);
        let g = tape.backward(c, &store).unwrap();
        assert!(g.get(w).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let store = ParamStore::<f64>::new();
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0), &store), Err(Error::Usage(_))));
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(array![[1.0, 2.0]]);
        assert!(matches!(tape.backward(v, &store), Err(Error::Usage(_))));
    }

    #[test]
    fn segment_max_routes_gradient_to_argmax() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", array![[1.0, 5.0], [3.0, 2.0], [0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let pv = tape.param(&store, p);
        let m = tape.segment_max(pv, &[(0, 2), (2, 1)]).unwrap();
        assert_eq!(tape.value(m), &array![[3.0, 5.0], [0.0, 1.0]]);
        let l = tape.mean_square(m);
        let g = tape.backward(l, &store).unwrap();
        assert_eq!(g.get(p), &array![[0.0, 2.5], [1.5, 0.0], [0.0, 0.5]]);
        assert!(tape.segment_max(pv, &[(2, 2)]).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let b = tape.leaf(Array2::zeros((2, 3)));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
        assert!(tape.add_bias(a, b).is_err());
        let c = tape.leaf(Array2::zeros((3, 3)));
        assert!(tape.concat_cols(&[a, c]).is_err());
        assert!(tape.sub(a, c).is_err());
    }
}
