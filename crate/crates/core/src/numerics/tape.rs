//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation as it is executed. Node indices are
//! assigned in execution order, so the record is already topologically
//! sorted and the backward pass is a single reverse sweep that visits each
//! node at most once.

use std::cell::RefCell;
use std::rc::Rc;

use super::linalg::{cholesky_psd, solve_lower_unchecked, solve_upper_t_unchecked};
use super::special::{digamma, trigamma};
use super::{Matrix, NumericsError};

/// Arguments handed to a backward rule.
pub struct BackArgs<'a> {
    /// Gradient of the loss with respect to this node's value.
    pub grad: &'a Matrix,
    /// This node's value.
    pub value: &'a Matrix,
    /// Parent values, in the order they were passed at construction.
    pub inputs: &'a [Rc<Matrix>],
    /// Which parents need a gradient.
    pub needs: &'a [bool],
}

/// Backward rule: one entry per parent, `None` when not needed.
pub type Backward = Box<dyn Fn(&BackArgs<'_>) -> Vec<Option<Matrix>>>;

struct Node {
    value: Rc<Matrix>,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
    param: bool,
}

/// Recording of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

/// Gradients produced by [`Tape::gradient`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var<'_>) -> bool {
        self.grads[v.id].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, parents: Vec<usize>, backward: Option<Backward>, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = param || parents.iter().any(|&p| nodes[p].requires_grad);
        let backward = if requires_grad { backward } else { None };
        let id = nodes.len();
        nodes.push(Node { value: Rc::new(value), parents, backward, requires_grad, param });
        Var { tape: self, id }
    }

    /// Leaf that gradients are tracked for.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Vec::new(), None, true)
    }

    /// Leaf with no gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Vec::new(), None, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Matrix::scalar(value))
    }

    /// Record a fused operation with a hand-written backward rule.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], value: Matrix, backward: Backward) -> Var<'t> {
        self.push(value, inputs.iter().map(|v| v.id).collect(), Some(backward), false)
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn gradient(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.shape(), (1, 1), "loss must be a scalar node");
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<Rc<Matrix>> = node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&BackArgs { grad: &g, value: &node.value, inputs: &inputs, needs: &needs });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            if node.param {
                grads[id] = Some(g);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }

    /// Like [`Tape::gradient`] but fails if any listed parameter is unreachable from `loss`.
    pub fn gradient_strict<'t>(&'t self, loss: Var<'t>, params: &[Var<'t>]) -> Result<Gradients, NumericsError> {
        let g = self.gradient(loss);
        if let Some(p) = params.iter().find(|p| !g.reached(**p)) {
            return Err(NumericsError::DisconnectedParameter(p.id));
        }
        Ok(g)
    }
}

fn map_grad(args: &BackArgs<'_>, f: impl Fn(f64, f64, f64) -> f64) -> Vec<Option<Matrix>> {
    // f(grad, x, y)
    let x = &args.inputs[0];
    let data: Vec<f64> = args
        .grad
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .zip(args.value.as_slice())
        .map(|((&g, &x), &y)| f(g, x, y))
        .collect();
    vec![Some(Matrix::from_vec(x.rows(), x.cols(), data).expect("shape"))]
}

fn reduce_to(g: &Matrix, rows: usize, cols: usize) -> Matrix {
    if g.shape() == (rows, cols) {
        return g.clone();
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            out[(i % rows, j % cols)] += g[(i, j)];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a 1x1 node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    fn unary(self, value: Matrix, backward: Backward) -> Var<'t> {
        self.tape.push(value, vec![self.id], Some(backward), false)
    }

    fn binary(self, other: Var<'t>, value: Matrix, backward: Backward) -> Var<'t> {
        self.tape.push(value, vec![self.id, other.id], Some(backward), false)
    }

    fn elementwise(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64, f64) -> f64 + 'static) -> Var<'t> {
        let v = self.value().map(f);
        self.unary(v, Box::new(move |a| map_grad(a, &df)))
    }

    fn assert_same_shape(&self, other: &Var<'t>, op: &str) {
        assert_eq!(self.shape(), other.shape(), "{op}: shape mismatch");
    }

    /// Promote 1x1 / 1xC / Rx1 operands to a common shape.
    fn harmonize(self, other: Var<'t>) -> (Var<'t>, Var<'t>) {
        let (a, b) = (self.shape(), other.shape());
        if a == b {
            return (self, other);
        }
        let rows = a.0.max(b.0);
        let cols = a.1.max(b.1);
        (self.broadcast(rows, cols), other.broadcast(rows, cols))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.harmonize(other);
        a.assert_same_shape(&b, "add");
        let v = a.value().add(&b.value());
        a.binary(b, v, Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.clone())]))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.harmonize(other);
        a.assert_same_shape(&b, "sub");
        let v = a.value().sub(&b.value());
        a.binary(b, v, Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.scale(-1.0))]))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.harmonize(other);
        a.assert_same_shape(&b, "mul");
        let v = a.value().hadamard(&b.value());
        a.binary(
            b,
            v,
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.hadamard(&a.inputs[1])),
                    a.needs[1].then(|| a.grad.hadamard(&a.inputs[0])),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.harmonize(other);
        a.assert_same_shape(&b, "div");
        let v = a.value().zip_map(&b.value(), |x, y| x / y);
        a.binary(
            b,
            v,
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.zip_map(&a.inputs[1], |g, y| g / y)),
                    a.needs[1].then(|| {
                        let t = a.grad.hadamard(a.value);
                        t.zip_map(&a.inputs[1], |t, y| -t / y)
                    }),
                ]
            }),
        )
    }

    /// Expand a 1x1, 1xC or Rx1 node to `rows x cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        if (r, c) == (rows, cols) {
            return self;
        }
        assert!((r == 1 || r == rows) && (c == 1 || c == cols), "cannot broadcast {r}x{c} to {rows}x{cols}");
        let src = self.value();
        let v = Matrix::from_fn(rows, cols, |i, j| src[(i % r, j % c)]);
        self.unary(v, Box::new(move |a| vec![Some(reduce_to(a.grad, r, c))]))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.unary(v, Box::new(move |a| vec![Some(a.grad.scale(s))]))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x + s);
        self.unary(v, Box::new(|a| vec![Some(a.grad.clone())]))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `1 - self`.
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    pub fn exp(self) -> Var<'t> {
        self.elementwise(f64::exp, |g, _, y| g * y)
    }

    pub fn ln(self) -> Var<'t> {
        self.elementwise(f64::ln, |g, x, _| g / x)
    }

    /// `ln(1 + x)`.
    pub fn ln_1p(self) -> Var<'t> {
        self.elementwise(f64::ln_1p, |g, x, _| g / (1.0 + x))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.elementwise(f64::sqrt, |g, _, y| g / (2.0 * y))
    }

    pub fn square(self) -> Var<'t> {
        self.elementwise(|x| x * x, |g, x, _| 2.0 * g * x)
    }

    pub fn recip(self) -> Var<'t> {
        self.elementwise(|x| 1.0 / x, |g, _, y| -g * y * y)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.elementwise(move |x| x.powf(p), move |g, x, _| g * p * x.powf(p - 1.0))
    }

    pub fn tanh(self) -> Var<'t> {
        self.elementwise(f64::tanh, |g, _, y| g * (1.0 - y * y))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.elementwise(sigmoid, |g, _, y| g * y * (1.0 - y))
    }

    pub fn softplus(self) -> Var<'t> {
        self.elementwise(softplus, |g, x, _| g * sigmoid(x))
    }

    /// `x·sigmoid(x)`, a smooth ramp.
    pub fn silu(self) -> Var<'t> {
        self.elementwise(
            |x| x * sigmoid(x),
            |g, x, _| {
                let s = sigmoid(x);
                g * (s + x * s * (1.0 - s))
            },
        )
    }

    pub fn lgamma(self) -> Var<'t> {
        self.elementwise(statrs::function::gamma::ln_gamma, |g, x, _| g * digamma(x))
    }

    pub fn digamma(self) -> Var<'t> {
        self.elementwise(digamma, |g, x, _| g * trigamma(x))
    }

    /// Hard clamp; zero gradient outside `(lo, hi)`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.elementwise(move |x| x.clamp(lo, hi), move |g, x, _| if x > lo && x < hi { g } else { 0.0 })
    }

    pub fn sum(self) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        let v = Matrix::scalar(src.sum());
        self.unary(v, Box::new(move |a| vec![Some(Matrix::filled(r, c, a.grad.item()))]))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums: `R x C -> 1 x C`.
    pub fn sum_rows(self) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        let mut v = Matrix::zeros(1, c);
        for i in 0..r {
            for (o, x) in v.as_mut_slice().iter_mut().zip(src.row_slice(i)) {
                *o += x;
            }
        }
        self.unary(v, Box::new(move |a| vec![Some(Matrix::from_fn(r, c, |_, j| a.grad[(0, j)]))]))
    }

    /// Row sums: `R x C -> R x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        let v = Matrix::from_fn(r, 1, |i, _| src.row_slice(i).iter().sum());
        self.unary(v, Box::new(move |a| vec![Some(Matrix::from_fn(r, c, |i, _| a.grad[(i, 0)]))]))
    }

    /// Stable per-row log-sum-exp: `R x C -> R x 1`.
    pub fn row_logsumexp(self) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        let v = Matrix::from_fn(r, 1, |i, _| logsumexp(src.row_slice(i)));
        self.unary(
            v,
            Box::new(move |a| {
                let x = &a.inputs[0];
                vec![Some(Matrix::from_fn(r, c, |i, j| a.grad[(i, 0)] * (x[(i, j)] - a.value[(i, 0)]).exp()))]
            }),
        )
    }

    /// Per-row softmax.
    pub fn row_softmax(self) -> Var<'t> {
        let c = self.cols();
        let lse = self.row_logsumexp().broadcast(self.rows(), c);
        self.sub(lse).exp()
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value());
        self.binary(
            other,
            v,
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.matmul_t(&a.inputs[1])),
                    a.needs[1].then(|| a.inputs[0].t_matmul(a.grad)),
                ]
            }),
        )
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Box::new(|a| vec![Some(a.grad.transpose())]))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        let v = (*self.value()).clone().reshape(rows, cols);
        self.unary(v, Box::new(move |a| vec![Some(a.grad.clone().reshape(r, c))]))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        assert!(start + len <= c, "slice_cols out of range");
        let v = Matrix::from_fn(r, len, |i, j| src[(i, start + j)]);
        self.unary(
            v,
            Box::new(move |a| {
                let mut g = Matrix::zeros(r, c);
                for i in 0..r {
                    g.row_slice_mut(i)[start..start + len].copy_from_slice(a.grad.row_slice(i));
                }
                vec![Some(g)]
            }),
        )
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        assert!(start + len <= r, "slice_rows out of range");
        let v = Matrix::from_vec(len, c, src.as_slice()[start * c..(start + len) * c].to_vec()).expect("shape");
        self.unary(
            v,
            Box::new(move |a| {
                let mut g = Matrix::zeros(r, c);
                g.as_mut_slice()[start * c..(start + len) * c].copy_from_slice(a.grad.as_slice());
                vec![Some(g)]
            }),
        )
    }

    /// Pick rows by index (repeats allowed).
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let src = self.value();
        let (r, c) = src.shape();
        let idx = idx.to_vec();
        let mut v = Matrix::zeros(idx.len(), c);
        for (o, &i) in idx.iter().enumerate() {
            v.row_slice_mut(o).copy_from_slice(src.row_slice(i));
        }
        self.unary(
            v,
            Box::new(move |a| {
                let mut g = Matrix::zeros(r, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (x, y) in g.row_slice_mut(i).iter_mut().zip(a.grad.row_slice(o)) {
                        *x += y;
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Build a `rows x cols` node whose flat entry `k` is `self.flat[index[k]]`
    /// (zero for `None`). Covers patch extraction, permutation and upsampling.
    pub fn gather_flat(self, index: std::rc::Rc<Vec<Option<usize>>>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(index.len(), rows * cols, "gather_flat index length");
        let src = self.value();
        let (r, c) = src.shape();
        let s = src.as_slice();
        let data: Vec<f64> = index.iter().map(|i| i.map_or(0.0, |i| s[i])).collect();
        let v = Matrix::from_vec(rows, cols, data).expect("shape");
        self.unary(
            v,
            Box::new(move |a| {
                let mut g = Matrix::zeros(r, c);
                let gs = g.as_mut_slice();
                for (k, i) in index.iter().enumerate() {
                    if let Some(i) = i {
                        gs[*i] += a.grad.as_slice()[k];
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Diagonal of a square node as a column.
    pub fn diag(self) -> Var<'t> {
        let src = self.value();
        let n = src.rows();
        assert!(src.is_square(), "diag of non-square");
        let v = Matrix::column(&src.diag());
        self.unary(
            v,
            Box::new(move |a| {
                let mut g = Matrix::zeros(n, n);
                for i in 0..n {
                    g[(i, i)] = a.grad[(i, 0)];
                }
                vec![Some(g)]
            }),
        )
    }

    pub fn trace(self) -> Var<'t> {
        self.diag().sum()
    }

    /// Cholesky factor of `self + jitter·I` (jitter escalates on failure).
    pub fn cholesky(self, jitter: f64) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        let chol = cholesky_psd(&a, jitter)?;
        Ok(self.unary(
            chol.factor,
            Box::new(|a| {
                let l = a.value;
                let n = l.rows();
                // P = Φ(Lᵀ·Ḡ), lower triangle with halved diagonal.
                let gl = a.grad.lower_triangle();
                let mut p = l.t_matmul(&gl);
                for i in 0..n {
                    for j in i + 1..n {
                        p[(i, j)] = 0.0;
                    }
                    p[(i, i)] *= 0.5;
                }
                let x = solve_upper_t_unchecked(l, &p);
                let s = solve_upper_t_unchecked(l, &x.transpose()).transpose();
                let sym = s.add(&s.transpose()).scale(0.5);
                vec![Some(sym)]
            }),
        ))
    }

    /// `self⁻¹·b` for lower-triangular `self`.
    pub fn solve_lower(self, b: Var<'t>) -> Var<'t> {
        let l = self.value();
        assert_eq!(l.rows(), b.rows(), "solve_lower shape");
        let x = solve_lower_unchecked(&l, &b.value());
        self.binary(
            b,
            x,
            Box::new(|a| {
                let l = &a.inputs[0];
                let bbar = solve_upper_t_unchecked(l, a.grad);
                let lbar = a.needs[0].then(|| bbar.matmul_t(a.value).scale(-1.0).lower_triangle());
                vec![lbar, Some(bbar)]
            }),
        )
    }

    /// `self⁻ᵀ·b` for lower-triangular `self`.
    pub fn solve_upper_t(self, b: Var<'t>) -> Var<'t> {
        let l = self.value();
        assert_eq!(l.rows(), b.rows(), "solve_upper_t shape");
        let x = solve_upper_t_unchecked(&l, &b.value());
        self.binary(
            b,
            x,
            Box::new(|a| {
                let l = &a.inputs[0];
                let bbar = solve_lower_unchecked(l, a.grad);
                let lbar = a.needs[0].then(|| a.value.matmul_t(&bbar).scale(-1.0).lower_triangle());
                vec![lbar, Some(bbar)]
            }),
        )
    }

    /// `A⁻¹·b` where `self` is the Cholesky factor of `A`.
    pub fn chol_solve(self, b: Var<'t>) -> Var<'t> {
        self.solve_upper_t(self.solve_lower(b))
    }

    /// `log|A|` where `self` is the Cholesky factor of `A`.
    pub fn chol_log_det(self) -> Var<'t> {
        self.diag().ln().sum().scale(2.0)
    }
}

/// Concatenate along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    if parts.len() == 1 {
        return parts[0];
    }
    let tape = parts[0].tape;
    let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
    let v = Matrix::hcat(&refs);
    let widths: Vec<usize> = values.iter().map(|m| m.cols()).collect();
    tape.custom(
        parts,
        v,
        Box::new(move |a| {
            let mut off = 0;
            widths
                .iter()
                .zip(a.needs)
                .map(|(&w, &need)| {
                    let r = a.grad.rows();
                    let g = need.then(|| Matrix::from_fn(r, w, |i, j| a.grad[(i, off + j)]));
                    off += w;
                    g
                })
                .collect()
        }),
    )
}

/// Concatenate along rows.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    if parts.len() == 1 {
        return parts[0];
    }
    let tape = parts[0].tape;
    let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
    let v = Matrix::vcat(&refs);
    let heights: Vec<usize> = values.iter().map(|m| m.rows()).collect();
    tape.custom(
        parts,
        v,
        Box::new(move |a| {
            let c = a.grad.cols();
            let mut off = 0;
            heights
                .iter()
                .zip(a.needs)
                .map(|(&h, &need)| {
                    let g = need.then(|| {
                        Matrix::from_vec(h, c, a.grad.as_slice()[off * c..(off + h) * c].to_vec()).expect("shape")
                    });
                    off += h;
                    g
                })
                .collect()
        }),
    )
}

/// Sum of a list of same-shape nodes.
pub fn sum_all<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let mut it = parts.iter().copied();
    let first = it.next().expect("sum_all of nothing");
    it.fold(first, |acc, v| acc.add(v))
}

/// Stable `ln Σ exp(x)`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
