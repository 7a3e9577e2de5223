use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Tensor, TensorId};

/// Backward rule of one recorded operation: receives the gradient flowing
/// into the op's output and adds contributions to the inputs' slots.
pub(crate) type Rule = Box<dyn Fn(&[f64], &mut GradStore)>;

struct Node {
    output: TensorId,
    rule: Rule,
}

/// Reverse-mode tape. Operations are recorded in execution order, which is a
/// topological order by construction, so one reverse sweep propagates
/// gradients. One tape per training step; tapes are not shared across
/// threads.
pub struct GradTape {
    nodes: Vec<Node>,
    produced: HashSet<TensorId>,
    recording: bool,
    strict_finite: bool,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    /// A recording tape for training or gradient checks.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            produced: HashSet::new(),
            recording: true,
            strict_finite: false,
        }
    }

    /// A non-recording tape: same forward math, no graph, `backward` refuses.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            produced: HashSet::new(),
            recording: false,
            strict_finite: false,
        }
    }

    /// Re-checks every op output for NaN/Inf. Off by default to keep the hot
    /// path branch-light; gradcheck suites switch it on.
    pub fn set_strict_finite(&mut self, strict: bool) {
        self.strict_finite = strict;
    }

    pub fn num_recorded(&self) -> usize {
        self.nodes.len()
    }

    /// Finalizes an op: wraps the buffer, optionally records the rule.
    pub(crate) fn emit(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        rule: impl FnOnce() -> Rule,
    ) -> Result<Tensor> {
        if self.strict_finite {
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput(format!(
                    "op produced {} at flat index {pos}",
                    data[pos]
                )));
            }
        }
        let out = Tensor::from_parts(shape, data, requires_grad);
        if self.recording && requires_grad {
            self.produced.insert(out.id());
            self.nodes.push(Node {
                output: out.id(),
                rule: rule(),
            });
        }
        Ok(out)
    }

    // ── element-wise arithmetic ─────────────────────────────────────────

    pub fn elementwise(&mut self, op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b, "elementwise")?;
        let data: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        let grad = a.requires_grad() || b.requires_grad();
        let (ac, bc) = (a.clone(), b.clone());
        self.emit(a.shape().to_vec(), data, grad, move || {
            Box::new(move |g, store| match op {
                ElementwiseOp::Add => {
                    if let Some(da) = store.slot(&ac) {
                        for (d, &gi) in da.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    if let Some(db) = store.slot(&bc) {
                        for (d, &gi) in db.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                }
                ElementwiseOp::Sub => {
                    if let Some(da) = store.slot(&ac) {
                        for (d, &gi) in da.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    if let Some(db) = store.slot(&bc) {
                        for (d, &gi) in db.iter_mut().zip(g) {
                            *d -= gi;
                        }
                    }
                }
                ElementwiseOp::Mul => {
                    if let Some(da) = store.slot(&ac) {
                        for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bc.data()) {
                            *d += gi * y;
                        }
                    }
                    if let Some(db) = store.slot(&bc) {
                        for ((d, &gi), &x) in db.iter_mut().zip(g).zip(ac.data()) {
                            *d += gi * x;
                        }
                    }
                }
            })
        })
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    /// Multiplication by a compile-time constant (not a tape input).
    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let data: Vec<f64> = a.data().iter().map(|&x| x * factor).collect();
        let ac = a.clone();
        self.emit(a.shape().to_vec(), data, a.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(da) = store.slot(&ac) {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi * factor;
                    }
                }
            })
        })
    }

    // ── matrix product ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul requires rank-2 operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims: {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data()[i * k + p];
                for j in 0..n {
                    out[i * n + j] += av * b.data()[p * n + j];
                }
            }
        }
        let grad = a.requires_grad() || b.requires_grad();
        let (ac, bc) = (a.clone(), b.clone());
        self.emit(vec![m, n], out, grad, move || {
            Box::new(move |g, store| {
                // dA = G B^T, dB = A^T G
                if let Some(da) = store.slot(&ac) {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bc.data()[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                }
                if let Some(db) = store.slot(&bc) {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += ac.data()[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] += s;
                        }
                    }
                }
            })
        })
    }

    // ── reductions and activations ──────────────────────────────────────

    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().sum();
        let ac = a.clone();
        self.emit(vec![1], vec![total], a.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(da) = store.slot(&ac) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            })
        })
    }

    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        let n = a.len() as f64;
        let total: f64 = a.data().iter().sum();
        let ac = a.clone();
        self.emit(vec![1], vec![total / n], a.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(da) = store.slot(&ac) {
                    for d in da.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            })
        })
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data().iter().map(|&x| x.max(0.0)).collect();
        let ac = a.clone();
        self.emit(a.shape().to_vec(), data, a.requires_grad(), move || {
            Box::new(move |g, store| {
                if let Some(da) = store.slot(&ac) {
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(ac.data()) {
                        if x > 0.0 {
                            *d += gi;
                        }
                    }
                }
            })
        })
    }

    /// Stacks rank-1 tensors of equal length into a rank-2 tensor.
    pub fn stack_rows(&mut self, rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch("stack_rows of zero tensors".into()));
        }
        let width = rows[0].len();
        for r in rows {
            if r.shape().len() != 1 || r.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "stack_rows expects rank-1 tensors of length {width}, got {:?}",
                    r.shape()
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            data.extend_from_slice(r.data());
        }
        let grad = rows.iter().any(Tensor::requires_grad);
        let rowsc: Vec<Tensor> = rows.to_vec();
        self.emit(vec![rows.len(), width], data, grad, move || {
            Box::new(move |g, store| {
                for (i, r) in rowsc.iter().enumerate() {
                    if let Some(dr) = store.slot(r) {
                        for (d, &gi) in dr.iter_mut().zip(&g[i * width..(i + 1) * width]) {
                            *d += gi;
                        }
                    }
                }
            })
        })
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Propagates d(loss)/d(tensor) to every requires-grad tensor reachable
    /// from the scalar `loss`. Deterministic: same tape, same bits.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(Error::NotScalarLoss(loss.shape().to_vec()));
        }
        if !self.produced.contains(&loss.id()) {
            return Err(Error::DetachedLoss);
        }
        let mut store = GradStore::new();
        store
            .map
            .insert(loss.id(), GradBuf { shape: vec![1], data: vec![1.0] });
        for node in self.nodes.iter().rev() {
            let upstream = match store.map.get(&node.output) {
                Some(buf) => buf.data.clone(),
                None => continue,
            };
            (node.rule)(&upstream, &mut store);
        }
        let map = store
            .map
            .into_iter()
            .map(|(id, buf)| (id, Tensor::from_parts(buf.shape, buf.data, false)))
            .collect();
        Ok(Gradients { map })
    }
}

/// The three element-wise binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
        }
    }
}

struct GradBuf {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Gradient accumulation buffers, keyed by tensor id.
pub(crate) struct GradStore {
    map: HashMap<TensorId, GradBuf>,
}

impl GradStore {
    fn new() -> Self {
        Self { map: HashMap::new() }
    }

    /// Accumulation slot for `t`, or None when `t` does not track gradients.
    pub(crate) fn slot(&mut self, t: &Tensor) -> Option<&mut [f64]> {
        if !t.requires_grad() {
            return None;
        }
        let buf = self.map.entry(t.id()).or_insert_with(|| GradBuf {
            shape: t.shape().to_vec(),
            data: vec![0.0; t.len()],
        });
        Some(&mut buf.data)
    }
}

/// Result of a reverse sweep: gradient per reachable tensor.
pub struct Gradients {
    map: HashMap<TensorId, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.map.get(&t.id())
    }

    /// Gradient w.r.t. `t`, or an all-zeros tensor if `t` was unreachable.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        match self.map.get(&t.id()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(t.shape().to_vec(), false),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64], grad: bool) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec(), grad).unwrap()
    }

    #[test]
    fn add_basic_and_identity() {
        let mut tape = GradTape::new();
        let a = t(&[2], &[1.0, 2.0], false);
        let b = t(&[2], &[3.0, 4.0], false);
        let c = tape.add(&a, &b).unwrap();
        assert_eq!(c.data(), &[4.0, 6.0]);

        let z = Tensor::zeros(vec![2], false);
        let same = tape.add(&a, &z).unwrap();
        assert!(same.bit_eq(&a) || same.data() == a.data());
    }

    #[test]
    fn mul_basic() {
        let mut tape = GradTape::new();
        let a = t(&[2], &[2.0, 3.0], false);
        let b = t(&[2], &[4.0, 5.0], false);
        let c = tape.mul(&a, &b).unwrap();
        assert_eq!(c.data(), &[8.0, 15.0]);
    }

    #[test]
    fn elementwise_commutes_exactly() {
        let mut tape = GradTape::new();
        let a = t(&[3], &[0.1, -2.5, 3.7], false);
        let b = t(&[3], &[1.9, 0.3, -0.7], false);
        for op in [ElementwiseOp::Add, ElementwiseOp::Mul] {
            let ab = tape.elementwise(op, &a, &b).unwrap();
            let ba = tape.elementwise(op, &b, &a).unwrap();
            assert!(ab.bit_eq(&ba));
        }
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut tape = GradTape::new();
        let a = t(&[2], &[1.0, 2.0], false);
        let b = t(&[3], &[1.0, 2.0, 3.0], false);
        assert!(matches!(
            tape.add(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn matmul_identity_and_small() {
        let mut tape = GradTape::new();
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0], false);
        let m = t(&[2, 2], &[3.0, -1.0, 2.5, 7.0], false);
        let out = tape.matmul(&eye, &m).unwrap();
        assert_eq!(out.data(), m.data());

        let a = t(&[1, 2], &[1.0, 2.0], false);
        let b = t(&[2, 1], &[3.0, 4.0], false);
        let out = tape.matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = GradTape::new();
        let a = Tensor::zeros(vec![3, 4], false);
        let b = Tensor::zeros(vec![5, 2], false);
        assert!(matches!(tape.matmul(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = GradTape::new();
        let x = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0], true);
        let loss = tape.sum(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).data(), &[1.0; 6]);
    }

    #[test]
    fn backward_square_gives_two_x() {
        let mut tape = GradTape::new();
        let x = t(&[3], &[1.0, 2.0, 3.0], true);
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut tape = GradTape::new();
        let x = t(&[2], &[1.0, 2.0], true);
        let y = tape.mul(&x, &x).unwrap();
        assert!(matches!(
            tape.backward(&y),
            Err(Error::NotScalarLoss(_))
        ));
        let stray = Tensor::scalar(5.0).unwrap();
        assert!(matches!(tape.backward(&stray), Err(Error::DetachedLoss)));
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let mut tape = GradTape::new();
        let x = t(&[4], &[0.3, -1.7, 2.2, 0.9], true);
        let y = t(&[4], &[1.1, 0.4, -0.6, 2.0], true);
        let p = tape.mul(&x, &y).unwrap();
        let s = tape.add(&p, &x).unwrap();
        let loss = tape.sum(&s).unwrap();
        let g1 = tape.backward(&loss).unwrap();
        let g2 = tape.backward(&loss).unwrap();
        assert!(g1.wrt(&x).bit_eq(&g2.wrt(&x)));
        assert!(g1.wrt(&y).bit_eq(&g2.wrt(&y)));
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = GradTape::inference();
        let x = t(&[2], &[1.0, 2.0], true);
        let loss = tape.sum(&x).unwrap();
        assert!(matches!(tape.backward(&loss), Err(Error::DetachedLoss)));
    }
}
