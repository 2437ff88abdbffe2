//! Define-by-run reverse-mode differentiation over dense [`Tensor`]s.
//!
//! A [`Tape`] records every operation as a node holding its value and, for
//! each parent, a closure mapping the node's upstream gradient to that
//! parent's contribution. Node ids increase monotonically so parents always
//! precede children, and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use dsvar::autodiff::Tape;
//! use dsvar::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```
//!
//! Element-wise binary ops accept equal shapes or a `1 × 1` operand on
//! either side. Nothing else broadcasts; use [`Var::tile_rows`] and
//! [`Var::tile_cols`] to expand explicitly.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

type LocalGrad = Box<dyn Fn(&Tensor) -> Tensor>;

struct Node {
    value: Tensor,
    parents: Vec<(usize, LocalGrad)>,
}

/// Operation recorder. Not `Sync`; build one per thread.
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
        write!(f, "Var#{}({}x{})", self.id, r, c)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Gradient for `v`, or zeros of its shape when `v` does not reach the root.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Tensor::zeros(r, c)
            }
        }
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

    /// Input node. Gradients are reported for leaves like any other node.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new())
    }

    /// Alias of [`Tape::leaf`] for values that are never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    fn push(&self, value: Tensor, parents: Vec<(usize, LocalGrad)>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        debug_assert!(parents.iter().all(|(p, _)| *p < nodes.len()));
        nodes.push(Node { value, parents });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got {}x{}",
                root_value.rows(),
                root_value.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            for (pid, local) in &nodes[id].parents {
                let contrib = local(&upstream);
                match &mut grads[*pid] {
                    Some(g) => g.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(upstream);
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

/// Sums `g` down to `shape`, which is either `g`'s own shape or `1 × 1`.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        g.clone()
    } else {
        Tensor::scalar(g.sum())
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<(usize, usize)> {
    if a.shape() == b.shape() {
        Ok(a.shape())
    } else if b.len() == 1 {
        Ok(a.shape())
    } else if a.len() == 1 {
        Ok(b.shape())
    } else {
        Err(Error::Dimension(format!(
            "{op}: shapes {}x{} and {}x{} are incompatible",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )))
    }
}

/// Element-wise combination with scalar broadcast on either side.
fn broadcast_zip(a: &Tensor, b: &Tensor, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = shape;
    let av = |i: usize| if a.len() == 1 { a.data()[0] } else { a.data()[i] };
    let bv = |i: usize| if b.len() == 1 { b.data()[0] } else { b.data()[i] };
    let data = (0..r * c).map(|i| f(av(i), bv(i))).collect();
    Tensor::new(r, c, data).expect("shape computed from operands")
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a scalar node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn unary(
        &self,
        value: Tensor,
        local: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        self.tape.push(value, vec![(self.id, Box::new(local))])
    }

    // ---- element-wise binary ----

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(&a, &b, "add")?;
        let out = broadcast_zip(&a, &b, shape, |x, y| x + y);
        let (sa, sb) = (a.shape(), b.shape());
        Ok(self.tape.push(
            out,
            vec![
                (self.id, Box::new(move |g: &Tensor| reduce_to(g, sa))),
                (other.id, Box::new(move |g: &Tensor| reduce_to(g, sb))),
            ],
        ))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(&a, &b, "sub")?;
        let out = broadcast_zip(&a, &b, shape, |x, y| x - y);
        let (sa, sb) = (a.shape(), b.shape());
        Ok(self.tape.push(
            out,
            vec![
                (self.id, Box::new(move |g: &Tensor| reduce_to(g, sa))),
                (other.id, Box::new(move |g: &Tensor| reduce_to(&g.scale(-1.0), sb))),
            ],
        ))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(&a, &b, "mul")?;
        let out = broadcast_zip(&a, &b, shape, |x, y| x * y);
        let (sa, sb) = (a.shape(), b.shape());
        let a2 = a.clone();
        Ok(self.tape.push(
            out,
            vec![
                (
                    self.id,
                    Box::new(move |g: &Tensor| {
                        reduce_to(&broadcast_zip(g, &b, g.shape(), |gv, bv| gv * bv), sa)
                    }),
                ),
                (
                    other.id,
                    Box::new(move |g: &Tensor| {
                        reduce_to(&broadcast_zip(g, &a2, g.shape(), |gv, av| gv * av), sb)
                    }),
                ),
            ],
        ))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(&a, &b, "div")?;
        if b.data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out = broadcast_zip(&a, &b, shape, |x, y| x / y);
        let (sa, sb) = (a.shape(), b.shape());
        let b1 = b.clone();
        let out2 = out.clone();
        Ok(self.tape.push(
            out,
            vec![
                (
                    self.id,
                    Box::new(move |g: &Tensor| {
                        reduce_to(&broadcast_zip(g, &b1, g.shape(), |gv, bv| gv / bv), sa)
                    }),
                ),
                (
                    other.id,
                    Box::new(move |g: &Tensor| {
                        // d(a/b)/db = -(a/b)/b
                        let t = broadcast_zip(g, &out2, g.shape(), |gv, ov| -gv * ov);
                        reduce_to(&broadcast_zip(&t, &b, g.shape(), |tv, bv| tv / bv), sb)
                    }),
                ),
            ],
        ))
    }

    // ---- scalar constants ----

    pub fn add_scalar(&self, k: f64) -> Var<'t> {
        let out = self.value().map(|v| v + k);
        self.unary(out, |g| g.clone())
    }

    pub fn mul_scalar(&self, k: f64) -> Var<'t> {
        let out = self.value().map(|v| v * k);
        self.unary(out, move |g| g.scale(k))
    }

    pub fn neg(&self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    // ---- element-wise unary ----

    pub fn exp(&self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        let y = out.clone();
        self.unary(out, move |g| g.zip_map(&y, |gv, yv| gv * yv).unwrap())
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive entry {bad}")));
        }
        let out = x.map(f64::ln);
        Ok(self.unary(out, move |g| g.zip_map(&x, |gv, xv| gv / xv).unwrap()))
    }

    pub fn tanh(&self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        let y = out.clone();
        self.unary(out, move |g| {
            g.zip_map(&y, |gv, yv| gv * (1.0 - yv * yv)).unwrap()
        })
    }

    pub fn softplus(&self) -> Var<'t> {
        let x = self.value();
        let out = x.map(softplus);
        self.unary(out, move |g| {
            g.zip_map(&x, |gv, xv| gv * sigmoid(xv)).unwrap()
        })
    }

    pub fn square(&self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.unary(out, move |g| g.zip_map(&x, |gv, xv| 2.0 * gv * xv).unwrap())
    }

    // ---- linear algebra and layout ----

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        let bt = b.transpose();
        let at = a.transpose();
        Ok(self.tape.push(
            out,
            vec![
                (self.id, Box::new(move |g: &Tensor| g.matmul(&bt).unwrap())),
                (other.id, Box::new(move |g: &Tensor| at.matmul(g).unwrap())),
            ],
        ))
    }

    pub fn transpose(&self) -> Var<'t> {
        let out = self.value().transpose();
        self.unary(out, |g| g.transpose())
    }

    /// Row-major reinterpretation of the same data.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let out = x.reshape(rows, cols)?;
        Ok(self.unary(out, move |g| g.reshape(r0, c0).unwrap()))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let out = x.slice_rows(start, end)?;
        Ok(self.unary(out, move |g| {
            let mut full = Tensor::zeros(r0, c0);
            full.data_mut()[start * c0..end * c0].copy_from_slice(g.data());
            full
        }))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let out = x.slice_cols(start, end)?;
        Ok(self.unary(out, move |g| {
            let mut full = Tensor::zeros(r0, c0);
            for i in 0..r0 {
                full.row_slice_mut(i)[start..end].copy_from_slice(g.row_slice(i));
            }
            full
        }))
    }

    /// Stacks `n` copies vertically.
    pub fn tile_rows(&self, n: usize) -> Var<'t> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let mut data = Vec::with_capacity(x.len() * n);
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let out = Tensor::new(r0 * n, c0, data).unwrap();
        self.unary(out, move |g| {
            let mut acc = Tensor::zeros(r0, c0);
            for k in 0..n {
                acc.add_assign(&g.slice_rows(k * r0, (k + 1) * r0).unwrap());
            }
            acc
        })
    }

    /// Places `n` copies side by side.
    pub fn tile_cols(&self, n: usize) -> Var<'t> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let out = Tensor::from_fn(r0, c0 * n, |i, j| x.get(i, j % c0));
        self.unary(out, move |g| {
            Tensor::from_fn(r0, c0, |i, j| (0..n).map(|k| g.get(i, k * c0 + j)).sum())
        })
    }

    // ---- reductions ----

    pub fn sum(&self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape();
        let out = Tensor::scalar(x.sum());
        self.unary(out, move |g| Tensor::filled(shape.0, shape.1, g.item()))
    }

    /// Sum across columns: `m × n → m × 1`.
    pub fn row_sums(&self) -> Var<'t> {
        let x = self.value();
        let (r0, c0) = x.shape();
        let out = Tensor::from_fn(r0, 1, |i, _| x.row_slice(i).iter().sum());
        self.unary(out, move |g| Tensor::from_fn(r0, c0, |i, _| g.get(i, 0)))
    }

    /// Softmax of each row, max-subtracted.
    pub fn softmax_rows(&self) -> Var<'t> {
        let x = self.value();
        let out = softmax_rows(&x);
        let y = out.clone();
        self.unary(out, move |g| {
            let mut dx = Tensor::zeros(y.rows(), y.cols());
            for i in 0..y.rows() {
                let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (d, (yv, gv)) in dx.row_slice_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                    *d = yv * (gv - dot);
                }
            }
            dx
        })
    }

    pub fn log_softmax_rows(&self) -> Var<'t> {
        let x = self.value();
        let p = softmax_rows(&x);
        let out = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
            x.get(i, j) - crate::tensor::log_sum_exp(x.row_slice(i))
        });
        self.unary(out, move |g| {
            let mut dx = Tensor::zeros(p.rows(), p.cols());
            for i in 0..p.rows() {
                let gsum: f64 = g.row_slice(i).iter().sum();
                for j in 0..p.cols() {
                    dx.set(i, j, g.get(i, j) - p.get(i, j) * gsum);
                }
            }
            dx
        })
    }

    /// `m × n → m × 1` log-sum-exp of each row.
    pub fn logsumexp_rows(&self) -> Var<'t> {
        let x = self.value();
        let p = softmax_rows(&x);
        let out = Tensor::from_fn(x.rows(), 1, |i, _| {
            crate::tensor::log_sum_exp(x.row_slice(i))
        });
        self.unary(out, move |g| {
            Tensor::from_fn(p.rows(), p.cols(), |i, j| g.get(i, 0) * p.get(i, j))
        })
    }

    /// `m × n → 1 × n` log-sum-exp down each column.
    pub fn logsumexp_cols(&self) -> Var<'t> {
        self.transpose().logsumexp_rows().transpose()
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let p = crate::tensor::softmax(x.row_slice(i));
        out.row_slice_mut(i).copy_from_slice(&p);
    }
    out
}

/// Vertical concatenation; all parts share a column count.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat_rows of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<Tensor> = parts.iter().map(Var::value).collect();
    let cols = values[0].cols();
    if let Some(v) = values.iter().find(|v| v.cols() != cols) {
        return Err(Error::Dimension(format!(
            "concat_rows: column counts {cols} and {} differ",
            v.cols()
        )));
    }
    let mut data = Vec::new();
    let mut parents: Vec<(usize, LocalGrad)> = Vec::with_capacity(parts.len());
    let mut offset = 0;
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p);
        data.extend_from_slice(v.data());
        let (start, end) = (offset, offset + v.rows());
        parents.push((
            p.id,
            Box::new(move |g: &Tensor| g.slice_rows(start, end).unwrap()),
        ));
        offset = end;
    }
    let out = Tensor::new(offset, cols, data)?;
    Ok(tape.push(out, parents))
}

/// Horizontal concatenation; all parts share a row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat_cols of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<Tensor> = parts.iter().map(Var::value).collect();
    let rows = values[0].rows();
    if let Some(v) = values.iter().find(|v| v.rows() != rows) {
        return Err(Error::Dimension(format!(
            "concat_cols: row counts {rows} and {} differ",
            v.rows()
        )));
    }
    let total: usize = values.iter().map(Tensor::cols).sum();
    let mut out = Tensor::zeros(rows, total);
    let mut parents: Vec<(usize, LocalGrad)> = Vec::with_capacity(parts.len());
    let mut offset = 0;
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p);
        for i in 0..rows {
            out.row_slice_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row_slice(i));
        }
        let (start, end) = (offset, offset + v.cols());
        parents.push((
            p.id,
            Box::new(move |g: &Tensor| g.slice_cols(start, end).unwrap()),
        ));
        offset = end;
    }
    Ok(tape.push(out, parents))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = x*x + x  =>  f'(x) = 2x + 1
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.75));
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 2.0 * 1.75 + 1.0);
    }

    #[test]
    fn hand_derived_three_node_graph() {
        // a = x*y, b = a + y, c = b * x  =>  dc/dx = 2xy + y, dc/dy = x^2 + x
        let tape = Tape::new();
        let (xv, yv) = (1.3, -0.7);
        let x = tape.leaf(Tensor::scalar(xv));
        let y = tape.leaf(Tensor::scalar(yv));
        let a = x.mul(y).unwrap();
        let b = a.add(y).unwrap();
        let c = b.mul(x).unwrap();
        let g = tape.backward(c).unwrap();
        assert!(approx(g.wrt(x).item(), 2.0 * xv * yv + yv, 1e-15));
        assert!(approx(g.wrt(y).item(), xv * xv + xv, 1e-15));
    }

    #[test]
    fn non_scalar_root_is_usage_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let g = tape.backward(x.tanh()).unwrap();
        assert_eq!(g.wrt(x).item(), 1.0);
    }

    #[test]
    fn softplus_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        assert!((x.softplus().item() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn exp_log_inverse() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[0.1, 1.0, 7.5, 123.0]));
        let y = x.log().unwrap().exp();
        assert!(y.value().max_abs_diff(&x.value()) <= 1e-12 * 123.0);
    }

    #[test]
    fn log_domain_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_rows_uniform_and_stable() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, -5.0]]).unwrap());
        let y = x.softmax_rows().value();
        for j in 0..3 {
            assert!((y.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((y.get(1, 0) - 1.0).abs() < 1e-15);
        assert!(y.is_finite());
    }

    #[test]
    fn broadcast_scalar_gradient_sums() {
        let tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(2.0));
        let m = tape.leaf(Tensor::row(&[1.0, 2.0, 3.0]));
        let y = m.mul(s).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(s).item(), 6.0);
        assert_eq!(g.wrt(m).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        assert!(matches!(a.add(b), Err(Error::Dimension(_))));
        assert!(a.matmul(a).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::scalar(4.0));
        let g = tape.backward(b.square()).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.wrt(a), Tensor::zeros(2, 3));
    }
}
