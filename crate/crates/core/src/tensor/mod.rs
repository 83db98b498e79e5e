//! Minimal reverse-mode automatic differentiation over dense float tensors.
//!
//! A [`Tensor`] is a reference-counted node in a dynamically recorded graph.
//! Every op that has at least one gradient-requiring input records a
//! [`Backward`] implementation together with its parents; [`Tensor::backward`]
//! walks the graph in reverse topological order and accumulates gradients
//! into the `requires_grad` leaves (the learnable parameters).
//!
//! The engine is generic over [`Float`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod conv;
mod gemm;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::rc::Rc;

use thiserror::Error;

pub use conv::{conv1d, conv2d, conv_output_len, conv_transpose1d, Padding};
pub(crate) use gemm::matmul;
pub(crate) use ops::reflect_index;
pub use ops::weight_norm;

/// Scalar element type of a tensor.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + rustfft::FftNum
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding as needed.
    fn lit(v: f64) -> Self;

    /// Raw general matrix multiply `c = alpha * a b + beta * c`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices; see [`matrixmultiply::sgemm`].
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Float for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("backward() requires a scalar loss, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),
}

pub type TensorResult<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

/// Gradient rule of a recorded op.
///
/// `grad` is the gradient of the loss with respect to the op output,
/// `output` the forward result. The returned vector is aligned with
/// `parents`; entries for parents whose `needs` flag is false may be `None`.
pub trait Backward<T: Float> {
    fn backward(
        &self,
        grad: &[T],
        output: &[T],
        parents: &[Tensor<T>],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

impl<T, F> Backward<T> for F
where
    T: Float,
    F: Fn(&[T], &[T], &[Tensor<T>], &[bool]) -> Vec<Option<Vec<T>>>,
{
    fn backward(
        &self,
        grad: &[T],
        output: &[T],
        parents: &[Tensor<T>],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        self(grad, output, parents, needs)
    }
}

struct GradFn<T: Float> {
    parents: Vec<Tensor<T>>,
    op: Box<dyn Backward<T>>,
}

struct Node<T: Float> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    frozen: Cell<bool>,
    grad_fn: Option<GradFn<T>>,
}

/// Dense row-major tensor participating in the autodiff graph.
///
/// Cloning is cheap and shares the underlying node.
pub struct Tensor<T: Float = f32>(Rc<Node<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor(Rc::new(node))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        Self::leaf(data, shape, false)
    }

    /// Learnable leaf tensor.
    pub fn param(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        Self::leaf(data, shape, true)
    }

    fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> TensorResult<Self> {
        let expected = numel_of(shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            frozen: Cell::new(false),
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::new(vec![value; numel_of(shape)], shape).expect("length matches by construction")
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    /// Records the result of an op. The backward rule is kept only when some
    /// parent requires a gradient.
    ///
    /// Panics if `data.len()` disagrees with `shape`; op implementations
    /// compute both and a mismatch is a bug in the op.
    pub fn from_op(
        data: Vec<T>,
        shape: &[usize],
        parents: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        assert_eq!(
            numel_of(shape),
            data.len(),
            "op produced {} elements for shape {:?}",
            data.len(),
            shape
        );
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            op: Box::new(op),
        });
        Self::from_node(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            frozen: Cell::new(false),
            grad_fn,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad && !self.0.frozen.get()
    }

    /// Temporarily excludes a learnable leaf from differentiation. Ops
    /// recorded while it is frozen do not propagate into it.
    pub fn set_frozen(&self, frozen: bool) {
        self.0.frozen.set(frozen);
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values. Only meaningful for leaves: the
    /// optimizer and finite-difference probes write parameters through it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        debug_assert!(self.is_leaf(), "mutating an interior graph node");
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of this tensor cut from the graph.
    pub fn detach(&self) -> Self {
        Self::new(self.to_vec(), self.shape()).expect("same shape")
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    /// Nodes reachable from `self` in post-order (parents before children).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for p in &f.parents {
                    if p.requires_grad() && !seen.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from this scalar, accumulating into leaf gradients.
    pub fn backward(&self) -> TensorResult<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarBackward(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let needs: Vec<bool> = f.parents.iter().map(Tensor::requires_grad).collect();
                    let out = node.0.data.borrow();
                    let grads = f.op.backward(&g, &out, &f.parents, &needs);
                    debug_assert_eq!(grads.len(), f.parents.len());
                    for ((p, gp), need) in f.parents.iter().zip(grads).zip(needs) {
                        let (true, Some(gp)) = (need, gp) else {
                            continue;
                        };
                        debug_assert_eq!(gp.len(), p.numel());
                        match pending.get_mut(&p.key()) {
                            Some(acc) => acc.iter_mut().zip(&gp).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(p.key(), gp);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
