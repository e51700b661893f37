//! Dense tensors with a reverse-mode gradient tape.
//!
//! Every op records its parents and a backward closure when gradient
//! tracking is enabled and at least one input requires a gradient.
//! [`Tensor::backward`] walks the recorded graph once in reverse
//! topological order, accumulating into leaf gradients. Gradients of
//! intermediate nodes are released as soon as they have been propagated.
//!
//! Tensors are generic over [`Scalar`]: `f32` for training and inference,
//! `f64` for gradient verification.

mod conv;
mod ops;

pub use conv::{gaussian_kernel_1d, Conv2dSpec};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{dim_err, Result};

/// Floating point element type of a tensor.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a·b + beta * c` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel can touch.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

type BackwardFn<S> = Box<dyn Fn(&[S], &[S], &[Tensor<S>])>;

struct GradFn<S: Scalar> {
    parents: Vec<Tensor<S>>,
    /// Called with (output gradient, output data, parents).
    backward: BackwardFn<S>,
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<S>>,
}

impl<S: Scalar> Drop for Node<S> {
    // Unlinks long tapes iteratively; the default recursive drop can
    // exhaust the stack on deep graphs.
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else { return };
        let mut stack = gf.parents;
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.node) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.parents);
                }
            }
        }
    }
}

/// A dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<S: Scalar = f32> {
    node: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.node.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Flushes subnormal floats to zero on the current thread while alive and
/// restores the previous floating-point mode on drop. No-op off x86-64.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[allow(deprecated)]
    pub fn new() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            // FTZ (bit 15) and DAZ (bit 6).
            // SAFETY: only touches the rounding-mode flags of this thread.
            let saved = unsafe { _mm_getcsr() };
            unsafe { _mm_setcsr(saved | 0x8040) };
            Self { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        Self {}
    }
}

impl Default for FlushDenormals {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushDenormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the mode saved in `new`.
        unsafe {
            std::arch::x86_64::_mm_setcsr(self.saved)
        };
    }
}

/// Runs `f` without recording any ops on the tape.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl<S: Scalar> Tensor<S> {
    fn leaf_unchecked(data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn: None,
            }),
        }
    }

    pub fn from_vec(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return dim_err(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Self::leaf_unchecked(data, shape.to_vec(), false))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<S>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.requires_grad())
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&x| S::lit(x)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self::leaf_unchecked(vec![value; n], shape.to_vec(), false)
    }

    pub fn scalar(value: S) -> Self {
        Self::leaf_unchecked(vec![value], vec![], false)
    }

    /// Returns a leaf sharing nothing with `self`, flagged as trainable.
    pub fn requires_grad(self) -> Self {
        let data = self.node.data.borrow().clone();
        Self::leaf_unchecked(data, self.node.shape.clone(), true)
    }

    /// Copies the values into a fresh untracked leaf.
    pub fn detach(&self) -> Self {
        Self::leaf_unchecked(self.node.data.borrow().clone(), self.node.shape.clone(), false)
    }

    /// Records an op output. The backward closure is only kept when
    /// tracking is on and some parent requires a gradient.
    pub(crate) fn from_op(
        data: Vec<S>,
        shape: Vec<usize>,
        parents: Vec<Tensor<S>>,
        backward: impl Fn(&[S], &[S], &[Tensor<S>]) + 'static,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let track = grad_enabled() && parents.iter().any(|p| p.node.requires_grad);
        let grad_fn = track.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: track,
                grad_fn,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values, for optimizer updates on leaves.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.node.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.borrow().iter().map(|x| x.as_f64()).collect()
    }

    pub fn item(&self) -> S {
        self.node.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn same_storage(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    /// Adds `f`'s contribution to this tensor's gradient buffer, allocating
    /// it on first use. No-op for tensors that do not require gradients.
    pub(crate) fn accumulate(&self, f: impl FnOnce(&mut [S])) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![S::zero(); self.numel()]);
        f(buf);
    }

    /// Back-propagates from this tensor, seeding its gradient with ones.
    /// For non-scalar outputs this is the gradient of the sum of all outputs.
    pub fn backward(&self) {
        let seed = vec![S::one(); self.numel()];
        self.backward_with(seed);
    }

    pub fn backward_with(&self, seed: Vec<S>) {
        assert_eq!(seed.len(), self.numel(), "seed gradient has wrong length");
        if !self.node.requires_grad {
            return;
        }
        let order = self.topo_order();
        self.accumulate(|g| {
            for (gi, si) in g.iter_mut().zip(&seed) {
                *gi += *si;
            }
        });
        for t in order.iter().rev() {
            let Some(gf) = &t.node.grad_fn else { continue };
            let Some(grad) = t.node.grad.borrow_mut().take() else {
                continue;
            };
            let out = t.node.data.borrow();
            (gf.backward)(&grad, &out, &gf.parents);
        }
    }

    /// Post-order over tracked nodes reachable from `self`; each node once.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<S>> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        seen.insert(Rc::as_ptr(&self.node));
        while let Some((t, child)) = stack.pop() {
            let parents = t.node.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[]);
            if child < parents.len() {
                let next = parents[child].clone();
                stack.push((t, child + 1));
                if next.node.requires_grad && seen.insert(Rc::as_ptr(&next.node)) {
                    stack.push((next, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }

    pub(crate) fn expect_ndim(&self, n: usize, op: &str) -> Result<()> {
        if self.ndim() != n {
            return dim_err(format!(
                "{op}: expected {n}-d tensor, got shape {:?}",
                self.shape()
            ));
        }
        Ok(())
    }

    /// Converts between precisions. The result is an untracked leaf.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.node.data.borrow().iter().map(|x| T::lit(x.as_f64())).collect();
        Tensor::leaf_unchecked(data, self.node.shape.clone(), false)
    }
}

/// Compares tape gradients against central finite differences.
///
/// `f` maps the inputs to any tensor; its output is reduced to a scalar by
/// a fixed pseudo-random weighting so that ops whose outputs sum to a
/// constant (softmax) are still exercised. Every input that requires a
/// gradient is perturbed element-wise by ±`eps`. The returned value is the
/// worst element-wise `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    grad_check_subset(f, inputs, eps, |_, _| true)
}

/// Like [`grad_check`] but only probes elements where `select(input, elem)`
/// holds. The analytic gradient is still computed for everything.
pub fn grad_check_subset<F, P>(f: F, inputs: &[Tensor<f64>], eps: f64, select: P) -> f64
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    P: Fn(usize, usize) -> bool,
{
    let out = f(inputs).expect("grad_check: forward failed");
    let weights = probe_weights(out.numel());
    let weighted = |t: &Tensor<f64>| -> f64 {
        t.data().iter().zip(&weights).map(|(a, w)| a * w).sum()
    };
    for x in inputs {
        x.zero_grad();
    }
    out.backward_with(weights.clone());
    let mut worst = 0.0f64;
    for (ii, x) in inputs.iter().enumerate() {
        if !x.is_tracked() {
            continue;
        }
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        for e in 0..x.numel() {
            if !select(ii, e) {
                continue;
            }
            let orig = x.data()[e];
            x.data_mut()[e] = orig + eps;
            let plus = no_grad(|| weighted(&f(inputs).expect("forward")));
            x.data_mut()[e] = orig - eps;
            let minus = no_grad(|| weighted(&f(inputs).expect("forward")));
            x.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

fn probe_weights(n: usize) -> Vec<f64> {
    // Deterministic weights in [0.5, 1.5).
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(vec![1.0; 5], &[2, 3]).is_err());
        let t = Tensor::<f32>::from_vec(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn flush_guard_zeroes_subnormals_and_restores() {
        let product = || std::hint::black_box(f32::MIN_POSITIVE) * std::hint::black_box(0.5f32);
        {
            let _g = FlushDenormals::new();
            if cfg!(target_arch = "x86_64") {
                assert_eq!(product(), 0.0);
            }
        }
        assert!(product() > 0.0);
    }

    #[test]
    fn untracked_leaves_keep_absent_grads() {
        let a = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        let y = a.mul(&b).unwrap().sum();
        y.backward();
        assert_eq!(a.grad().unwrap(), vec![3.0, 4.0]);
        assert!(b.grad().is_none());
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = (x*x) + (x*x) reusing the same node; dy/dx = 4x.
        let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        let sq = x.mul(&x).unwrap();
        let y = sq.add(&sq).unwrap().sum();
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f32>::param(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.is_tracked());
        assert!(grad_enabled());
    }

    #[test]
    fn deep_chain_does_not_overflow_stack() {
        let x = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let mut y = x.clone();
        for _ in 0..20_000 {
            y = y.add_scalar(1.0);
        }
        y.sum().backward();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }
}
