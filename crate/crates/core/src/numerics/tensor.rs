//! Tensor storage and the reverse-mode gradient graph.
//!
//! A `Tensor` is an immutable n-dimensional value plus an optional record of
//! how it was computed. Ops build the graph as they run; `backward` walks it
//! once in reverse topological order and fills gradients on the leaves.
//! Training runs in `f32`, the gradient-check suite in `f64`; everything here
//! is generic over [`Element`] to serve both.
//!
//! Graphs are single-threaded (`Rc`-linked), but payloads are `Arc`-shared so
//! parameter buffers can be wrapped as leaves concurrently from many worker
//! threads during batch-parallel training.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;
use std::sync::Arc;

use super::NumericsError;

/// Scalar element type the engine runs on.
pub trait Element:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    /// Exponential for bulk elementwise paths. The f32 implementation is a
    /// polynomial with ~1e-7 relative error, several times faster than libm;
    /// f64 stays exact so double-precision checks see true transcendentals.
    fn exp_bulk(self) -> Self {
        self.exp()
    }
    /// Bulk tanh; same accuracy contract as [`Element::exp_bulk`].
    fn tanh_bulk(self) -> Self {
        self.tanh()
    }
}

/// Cephes-style expf: range reduction by log2(e), sixth-order polynomial,
/// exponent reassembly. Deterministic and accurate to ~2 ulp over the
/// clamped range.
#[inline]
fn expf_fast(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E).round();
    let r = x - n * LN2_HI - n * LN2_LO;
    let r2 = r * r;
    let mut p = 1.987_569_2e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452_0e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_6e-1;
    p = p * r + 5.000_000_1e-1;
    let poly = p * r2 + r + 1.0;
    let scale = f32::from_bits((((n as i32) + 127) << 23) as u32);
    poly * scale
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn exp_bulk(self) -> Self {
        expf_fast(self)
    }
    #[inline]
    fn tanh_bulk(self) -> Self {
        // Branchless: the clamped formula saturates to +-1 within f32
        // precision at |x| = 9, keeping the loop vectorizable.
        let x = self.clamp(-9.0, 9.0);
        let e2 = expf_fast(2.0 * x);
        (e2 - 1.0) / (e2 + 1.0)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Cheap whole-buffer finiteness check: any NaN or infinity contaminates the
/// striped sums. A non-finite sum can also mean legitimately huge values
/// overflowed the accumulator, so it only triggers the exact per-element
/// scan rather than deciding by itself.
#[inline]
pub(crate) fn all_finite<E: Element>(data: &[E]) -> bool {
    let mut lanes = [E::ZERO; 4];
    let chunks = data.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        lanes[0] = lanes[0] + c[0];
        lanes[1] = lanes[1] + c[1];
        lanes[2] = lanes[2] + c[2];
        lanes[3] = lanes[3] + c[3];
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for &v in rem {
        acc = acc + v;
    }
    acc.is_finite() || data.iter().all(|v| v.is_finite())
}

/// One parent's gradient contribution.
pub(crate) enum GradFlow<E> {
    /// A computed buffer.
    Own(Vec<E>),
    /// Identical to the incoming gradient (identity-Jacobian ops like add,
    /// reshape, or the bias path of add_bias); the driver accumulates from
    /// the upstream slice without another allocation.
    Same,
}

/// Gradient contributions a backward closure returns, aligned with parents.
type ParentGrads<E> = Vec<Option<GradFlow<E>>>;
type BackFn<E> = Box<dyn Fn(&[E]) -> ParentGrads<E>>;

pub(crate) struct Node<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    /// Identifies parameter leaves so gradients can be exported by id.
    param_id: Option<usize>,
    parents: Vec<Tensor<E>>,
    backward: Option<BackFn<E>>,
    grad: RefCell<Option<Vec<E>>>,
    consumed: Cell<bool>,
}

/// N-dimensional value with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor<E: Element = f32> {
    node: Rc<Node<E>>,
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

impl<E: Element> Tensor<E> {
    fn from_node(node: Node<E>) -> Self {
        Tensor { node: Rc::new(node) }
    }

    /// Leaf tensor owning its data.
    pub fn leaf(data: Vec<E>, shape: &[usize], requires_grad: bool) -> Result<Self, NumericsError> {
        Self::leaf_shared(Arc::new(data), shape, requires_grad, None)
    }

    /// Leaf over a shared buffer; `param_id` marks it for gradient export.
    pub fn leaf_shared(
        data: Arc<Vec<E>>,
        shape: &[usize],
        requires_grad: bool,
        param_id: Option<usize>,
    ) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Invalid {
                op: "leaf",
                msg: format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            });
        }
        if !all_finite(&data) {
            return Err(NumericsError::NonFinite { op: "leaf" });
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            param_id,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    pub fn constant(data: Vec<E>, shape: &[usize]) -> Result<Self, NumericsError> {
        Self::leaf(data, shape, false)
    }

    pub fn scalar(v: E) -> Self {
        Self::from_node(Node {
            shape: vec![1],
            data: Arc::new(vec![v]),
            requires_grad: false,
            param_id: None,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_node(Node {
            shape: shape.to_vec(),
            data: Arc::new(vec![E::ZERO; numel]),
            requires_grad: false,
            param_id: None,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        })
    }

    /// Internal op constructor: checks the result for non-finite values and
    /// prunes the graph when no parent tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackFn<E>,
    ) -> Result<Self, NumericsError> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !all_finite(&data) {
            return Err(NumericsError::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Ok(Self::from_node(Node {
            shape,
            data: Arc::new(data),
            requires_grad,
            param_id: None,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    /// Op constructor reusing an existing (already finite-checked) buffer;
    /// used by pure reinterpretations like reshape.
    pub(crate) fn from_op_shared(
        shape: Vec<usize>,
        data: Arc<Vec<E>>,
        parents: Vec<Tensor<E>>,
        backward: BackFn<E>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Self::from_node(Node {
            shape,
            data,
            requires_grad,
            param_id: None,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
            grad: RefCell::new(None),
            consumed: Cell::new(false),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.node.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn param_id(&self) -> Option<usize> {
        self.node.param_id
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64()).collect()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.data[0]
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }
}

/// Gradients exported for parameter leaves after a backward pass, keyed by
/// parameter id. Iteration order is the id order, so reductions over several
/// graphs are deterministic.
pub struct Gradients<E: Element> {
    grads: BTreeMap<usize, Vec<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, param_id: usize) -> Option<&[E]> {
        self.grads.get(&param_id).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[E])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Sum another graph's gradients into this one (sample-order reduction).
    pub fn accumulate(&mut self, other: &Gradients<E>) {
        for (id, g) in other.iter() {
            match self.grads.get_mut(&id) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a = *a + *b;
                    }
                }
                None => {
                    self.grads.insert(id, g.to_vec());
                }
            }
        }
    }

    /// Scale every gradient in place (e.g. by 1/batch).
    pub fn scale(&mut self, factor: f64) {
        let f = E::from_f64(factor);
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v = *v * f;
            }
        }
    }
}

/// Run reverse-mode differentiation from a scalar loss.
///
/// Fills `grad` on every leaf that requires gradients and returns the
/// parameter-leaf gradients keyed by param id. A graph can only be walked
/// once.
pub fn backward<E: Element>(loss: &Tensor<E>) -> Result<Gradients<E>, NumericsError> {
    if loss.numel() != 1 {
        return Err(NumericsError::NonScalarLoss(loss.shape().to_vec()));
    }
    if loss.node.consumed.get() {
        return Err(NumericsError::GraphConsumed);
    }
    loss.node.consumed.set(true);

    // Iterative post-order DFS; parents precede children in `order`.
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.key());
    while let Some((node, child_ix)) = stack.pop() {
        if child_ix < node.node.parents.len() {
            let parent = node.node.parents[child_ix].clone();
            stack.push((node, child_ix + 1));
            if parent.requires_grad() && visited.insert(parent.key()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    *loss.node.grad.borrow_mut() = Some(vec![E::ONE]);

    let mut exported: BTreeMap<usize, Vec<E>> = BTreeMap::new();
    for tensor in order.iter().rev() {
        let node = &tensor.node;
        let grad_out = match node.backward {
            // Interior node: take the gradient, it is no longer needed here.
            Some(_) => node.grad.borrow_mut().take(),
            // Leaf: keep the gradient in place for the caller.
            None => node.grad.borrow().clone(),
        };
        let Some(grad_out) = grad_out else { continue };
        if !all_finite(&grad_out) {
            return Err(NumericsError::NonFinite { op: "backward" });
        }
        if let Some(back) = &node.backward {
            let contributions = back(&grad_out);
            debug_assert_eq!(contributions.len(), node.parents.len());
            // The last identity contribution may take the upstream buffer
            // instead of cloning it; it runs after every other use.
            let movable = node
                .parents
                .iter()
                .zip(&contributions)
                .enumerate()
                .filter(|(_, (p, c))| matches!(c, Some(GradFlow::Same)) && p.requires_grad())
                .map(|(i, _)| i)
                .last();
            let mut upstream = Some(grad_out);
            for (i, (parent, contrib)) in
                node.parents.iter().zip(contributions.into_iter()).enumerate()
            {
                let Some(contrib) = contrib else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                let mut slot = parent.node.grad.borrow_mut();
                match (slot.as_mut(), contrib) {
                    (Some(acc), GradFlow::Own(c)) => {
                        for (a, b) in acc.iter_mut().zip(&c) {
                            *a = *a + *b;
                        }
                    }
                    (Some(acc), GradFlow::Same) => {
                        let g = upstream.as_ref().expect("upstream outlives its uses");
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a = *a + *b;
                        }
                    }
                    (None, GradFlow::Own(c)) => *slot = Some(c),
                    (None, GradFlow::Same) => {
                        if movable == Some(i) {
                            *slot = Some(upstream.take().expect("single move of upstream"));
                        } else {
                            *slot =
                                Some(upstream.as_ref().expect("upstream outlives its uses").clone());
                        }
                    }
                }
            }
        } else if let Some(pid) = node.param_id {
            exported.insert(pid, grad_out);
        }
    }

    Ok(Gradients { grads: exported })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_shape_must_match_data() {
        let err = Tensor::<f64>::leaf(vec![1.0, 2.0], &[3], false).unwrap_err();
        assert!(err.to_string().contains("implies 3 values"));
    }

    #[test]
    fn leaf_rejects_non_finite() {
        assert!(Tensor::<f32>::leaf(vec![f32::NAN], &[1], false).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tensor::<f64>::leaf(vec![1.0, 2.0], &[2], true).unwrap();
        match backward(&t) {
            Err(NumericsError::NonScalarLoss(shape)) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn backward_consumes_graph() {
        let x = Tensor::<f64>::leaf(vec![3.0], &[1], true).unwrap();
        let y = x.mul(&x).unwrap();
        backward(&y).unwrap();
        assert!(matches!(backward(&y), Err(NumericsError::GraphConsumed)));
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::<f64>::leaf(vec![3.0], &[1], true).unwrap();
        let y = x.mul(&x).unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }
}
