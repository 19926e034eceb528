//! Reverse-mode autodifferentiation over rank-4 `(N, C, H, W)` arrays.
//!
//! A [`Tensor`] is a cheap, reference-counted handle. Operations that touch a
//! tensor requiring gradients record a node linking back to their operands;
//! [`Tensor::backward`] walks those links in reverse topological order and
//! accumulates `∂loss/∂leaf` into every leaf that requires gradients.

mod adam;
mod autograd;
pub(crate) mod conv;
mod element;
mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::ConvKernel;
pub use element::Element;
pub(crate) use ops::Op;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("buffer of length {len} does not fill shape {shape}")]
    BufferLength { len: usize, shape: Shape },
    #[error("kernel size {0} is not supported (expected 1 or 3, odd and square)")]
    KernelSize(usize),
    #[error("dilation must be at least 1")]
    Dilation,
    #[error("backward requires a scalar root, got {0}")]
    NonScalarRoot(Shape),
    #[error("{what}: channel range {start}..{end} out of bounds for {shape}")]
    ChannelRange {
        what: &'static str,
        start: usize,
        end: usize,
        shape: Shape,
    },
    #[error("non-finite gradient in parameter {index} (element {element}: {value})")]
    NonFiniteGradient {
        index: usize,
        element: usize,
        value: f64,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements per spatial plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

pub(crate) struct Node<T: Element> {
    pub(crate) op: Op<T>,
    pub(crate) parents: Vec<Tensor<T>>,
}

struct Inner<T: Element> {
    shape: Shape,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Shared handle to a rank-4 array with optional gradient and autograd record.
pub struct Tensor<T: Element = f32>(Rc<Inner<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::BufferLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self::leaf(shape, vec![value; shape.numel()], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Self::leaf(shape, data, false)
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
            .collect();
        Self::leaf(shape, data, false)
    }

    fn leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node: None,
        }))
    }

    /// Result of an operation. Records the autograd node only when some
    /// operand requires gradients.
    pub(crate) fn from_op(shape: Shape, data: Vec<T>, op: Op<T>, parents: Vec<Tensor<T>>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then_some(Node { op, parents });
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// A new leaf sharing no history, marked as a trainable parameter.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::leaf(self.shape(), data, true)
    }

    /// Copy of the values without autograd history.
    pub fn detach(&self) -> Self {
        Self::leaf(self.shape(), self.to_vec(), false)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.0.data.borrow()[0]
    }

    pub fn get(&self, idx: [usize; 4]) -> T {
        let [n, c, h, w] = self.0.shape.0;
        debug_assert!(idx[0] < n && idx[1] < c && idx[2] < h && idx[3] < w);
        self.0.data.borrow()[((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]]
    }

    /// Overwrites the values of a leaf in place (parameter updates, loading).
    pub fn set_data(&self, data: &[T]) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::BufferLength {
                len: data.len(),
                shape: self.shape(),
            });
        }
        self.0.data.borrow_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(Option<&[T]>) -> R) -> R {
        f(self.0.grad.borrow().as_deref())
    }

    pub(crate) fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
            None => *slot = Some(g),
        }
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.0.node.as_ref()
    }

    pub(crate) fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    /// True when both handles refer to the same tensor.
    pub fn same(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Converts element type, dropping history.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
            .collect();
        Tensor::leaf(self.shape(), data, self.requires_grad() && self.is_leaf())
    }
}
