//! Tape-based reverse-mode differentiation over flat vectors.
//!
//! Computations are written once against the [`Backend`] trait and run
//! either eagerly on plain vectors ([`Eval`]) or recorded on a [`Tape`].
//! Both backends call the same kernels in the same order, so a recorded
//! forward pass is bit-identical to the plain evaluation.
//!
//! Scalars are vectors of length 1. The primitive set is deliberately
//! small: linear combinations, elementwise affine maps, matrix–vector
//! products, `exp`, `log`, log-sum-exp, scalar broadcast, sums, (weighted)
//! squared norms and the Euclidean norm.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Result, WmError};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(WmError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(WmError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ x`.
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension");
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o = *o + a * xr;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

mod kernel {
    use super::*;

    pub fn lincomb<T: Scalar>(terms: &[(T, &[T])]) -> Vec<T> {
        let n = terms.first().map_or(0, |t| t.1.len());
        let mut out = vec![T::zero(); n];
        for (c, x) in terms {
            assert_eq!(x.len(), n, "lincomb operands differ in length");
            for (o, &v) in out.iter_mut().zip(x.iter()) {
                *o = *o + *c * v;
            }
        }
        out
    }

    pub fn affine<T: Scalar>(x: &[T], mul: Option<&[T]>, add: Option<&[T]>) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = mul.map_or(v, |m| m[i] * v);
                add.map_or(v, |a| v + a[i])
            })
            .collect()
    }

    pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
        let m = x.iter().copied().fold(T::neg_infinity(), T::max);
        if m == T::neg_infinity() {
            return m;
        }
        m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
    }

    pub fn weighted_sq_norm<T: Scalar>(x: &[T], w: Option<&[T]>) -> T {
        match w {
            Some(w) => x.iter().zip(w).fold(T::zero(), |a, (&v, &wi)| a + wi * v * v),
            None => x.iter().fold(T::zero(), |a, &v| a + v * v),
        }
    }
}

/// A recorded primitive and its inputs (tape indices).
#[derive(Clone, Debug)]
enum Prim<T> {
    Leaf,
    LinComb(Vec<(T, usize)>),
    Affine { x: usize, mul: Option<Arc<Vec<T>>> },
    MatVec { m: Arc<Matrix<T>>, x: usize, transpose: bool },
    Exp(usize),
    Log(usize),
    LogSumExp(usize),
    AddScalar { x: usize, s: usize },
    Sum(usize),
    SqNorm { x: usize, w: Option<Arc<Vec<T>>> },
    Norm(usize),
}

/// The operations a differentiable computation may use.
pub trait Backend<T: Scalar> {
    type V: Clone;

    /// A non-differentiated input.
    fn constant(&self, data: Vec<T>) -> Self::V;
    fn value(&self, v: &Self::V) -> Vec<T>;
    fn lincomb(&self, terms: &[(T, &Self::V)]) -> Self::V;
    /// `mul ⊙ x + add`; either part may be omitted.
    fn affine(&self, x: &Self::V, mul: Option<&Arc<Vec<T>>>, add: Option<&Arc<Vec<T>>>) -> Self::V;
    /// `M x`, or `Mᵀ x` when `transpose` is set.
    fn matvec(&self, m: &Arc<Matrix<T>>, x: &Self::V, transpose: bool) -> Self::V;
    fn exp(&self, x: &Self::V) -> Self::V;
    fn log(&self, x: &Self::V) -> Self::V;
    fn log_sum_exp(&self, x: &Self::V) -> Self::V;
    /// `x + s` with `s` a scalar broadcast over `x`.
    fn add_scalar(&self, x: &Self::V, s: &Self::V) -> Self::V;
    fn sum(&self, x: &Self::V) -> Self::V;
    /// `Σ w_i x_i²` (unweighted when `w` is `None`).
    fn sq_norm(&self, x: &Self::V, w: Option<&Arc<Vec<T>>>) -> Self::V;
    fn norm(&self, x: &Self::V) -> Self::V;

    fn add(&self, a: &Self::V, b: &Self::V) -> Self::V {
        self.lincomb(&[(T::one(), a), (T::one(), b)])
    }

    fn sub(&self, a: &Self::V, b: &Self::V) -> Self::V {
        self.lincomb(&[(T::one(), a), (-T::one(), b)])
    }

    fn scale(&self, x: &Self::V, c: T) -> Self::V {
        self.lincomb(&[(c, x)])
    }

    /// `exp(x − lse(x))`.
    fn softmax(&self, x: &Self::V) -> Self::V {
        let lse = self.log_sum_exp(x);
        let neg = self.scale(&lse, -T::one());
        let shifted = self.add_scalar(x, &neg);
        self.exp(&shifted)
    }
}

/// Eager evaluation on plain vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval;

impl<T: Scalar> Backend<T> for Eval {
    type V = Vec<T>;

    fn constant(&self, data: Vec<T>) -> Vec<T> {
        data
    }
    fn value(&self, v: &Vec<T>) -> Vec<T> {
        v.clone()
    }
    fn lincomb(&self, terms: &[(T, &Vec<T>)]) -> Vec<T> {
        let t: Vec<(T, &[T])> = terms.iter().map(|(c, x)| (*c, x.as_slice())).collect();
        kernel::lincomb(&t)
    }
    fn affine(&self, x: &Vec<T>, mul: Option<&Arc<Vec<T>>>, add: Option<&Arc<Vec<T>>>) -> Vec<T> {
        kernel::affine(x, mul.map(|m| m.as_slice()), add.map(|a| a.as_slice()))
    }
    fn matvec(&self, m: &Arc<Matrix<T>>, x: &Vec<T>, transpose: bool) -> Vec<T> {
        if transpose {
            m.matvec_t(x)
        } else {
            m.matvec(x)
        }
    }
    fn exp(&self, x: &Vec<T>) -> Vec<T> {
        x.iter().map(|v| v.exp()).collect()
    }
    fn log(&self, x: &Vec<T>) -> Vec<T> {
        x.iter().map(|v| v.ln()).collect()
    }
    fn log_sum_exp(&self, x: &Vec<T>) -> Vec<T> {
        vec![kernel::log_sum_exp(x)]
    }
    fn add_scalar(&self, x: &Vec<T>, s: &Vec<T>) -> Vec<T> {
        x.iter().map(|&v| v + s[0]).collect()
    }
    fn sum(&self, x: &Vec<T>) -> Vec<T> {
        vec![x.iter().copied().sum()]
    }
    fn sq_norm(&self, x: &Vec<T>, w: Option<&Arc<Vec<T>>>) -> Vec<T> {
        vec![kernel::weighted_sq_norm(x, w.map(|w| w.as_slice()))]
    }
    fn norm(&self, x: &Vec<T>) -> Vec<T> {
        vec![kernel::weighted_sq_norm(x, None).sqrt()]
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
struct Node<T> {
    prim: Prim<T>,
    value: Vec<T>,
}

/// Append-only record of primitive evaluations. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    /// Registers a differentiable input.
    pub fn input(&self, data: Vec<T>) -> Var {
        self.push(Prim::Leaf, data)
    }

    /// Number of recorded operations (inputs and constants excluded).
    pub fn op_count(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| !matches!(n.prim, Prim::Leaf)).count()
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.len()
    }

    fn push(&self, prim: Prim<T>, value: Vec<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { prim, value });
        Var(nodes.len() - 1)
    }

    fn unary(&self, x: Var, f: impl FnOnce(&[T]) -> Vec<T>, prim: Prim<T>) -> Var {
        let value = f(&self.nodes.borrow()[x.0].value);
        self.push(prim, value)
    }

    /// Gradient of the scalar `root` with respect to every node, scaled by
    /// `seed`. Returns the adjoint of `wrt`.
    pub fn gradient(&self, root: Var, wrt: Var, seed: T) -> Result<Vec<T>> {
        let nodes = self.nodes.borrow();
        let n_root = nodes[root.0].value.len();
        if n_root != 1 {
            return Err(WmError::NonScalarRoot(n_root));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![seed]);

        fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl Fn(usize) -> T) {
            let a = slot.get_or_insert_with(|| vec![T::zero(); len]);
            for (i, ai) in a.iter_mut().enumerate() {
                *ai = *ai + f(i);
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.prim {
                Prim::Leaf => {
                    adj[idx] = Some(g);
                }
                Prim::LinComb(terms) => {
                    for &(c, x) in terms {
                        acc(&mut adj[x], g.len(), |i| c * g[i]);
                    }
                }
                Prim::Affine { x, mul, .. } => match mul {
                    Some(m) => acc(&mut adj[*x], g.len(), |i| m[i] * g[i]),
                    None => acc(&mut adj[*x], g.len(), |i| g[i]),
                },
                Prim::MatVec { m, x, transpose } => {
                    let back = if *transpose { m.matvec(&g) } else { m.matvec_t(&g) };
                    acc(&mut adj[*x], back.len(), |i| back[i]);
                }
                Prim::Exp(x) => {
                    acc(&mut adj[*x], g.len(), |i| g[i] * node.value[i]);
                }
                Prim::Log(x) => {
                    let xv = &nodes[*x].value;
                    acc(&mut adj[*x], g.len(), |i| g[i] / xv[i]);
                }
                Prim::LogSumExp(x) => {
                    let xv = &nodes[*x].value;
                    let y = node.value[0];
                    acc(&mut adj[*x], xv.len(), |i| g[0] * (xv[i] - y).exp());
                }
                Prim::AddScalar { x, s } => {
                    acc(&mut adj[*x], g.len(), |i| g[i]);
                    let total: T = g.iter().copied().sum();
                    acc(&mut adj[*s], 1, |_| total);
                }
                Prim::Sum(x) => {
                    let n = nodes[*x].value.len();
                    acc(&mut adj[*x], n, |_| g[0]);
                }
                Prim::SqNorm { x, w } => {
                    let xv = &nodes[*x].value;
                    let two = T::lit(2.0);
                    match w {
                        Some(w) => acc(&mut adj[*x], xv.len(), |i| two * g[0] * w[i] * xv[i]),
                        None => acc(&mut adj[*x], xv.len(), |i| two * g[0] * xv[i]),
                    }
                }
                Prim::Norm(x) => {
                    let xv = &nodes[*x].value;
                    let y = node.value[0];
                    if y > T::zero() {
                        acc(&mut adj[*x], xv.len(), |i| g[0] * xv[i] / y);
                    }
                }
            }
        }
        Ok(adj[wrt.0].take().unwrap_or_else(|| vec![T::zero(); nodes[wrt.0].value.len()]))
    }
}

impl<T: Scalar> Backend<T> for Tape<T> {
    type V = Var;

    fn constant(&self, data: Vec<T>) -> Var {
        self.push(Prim::Leaf, data)
    }
    fn value(&self, v: &Var) -> Vec<T> {
        self.nodes.borrow()[v.0].value.clone()
    }
    fn lincomb(&self, terms: &[(T, &Var)]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t: Vec<(T, &[T])> =
                terms.iter().map(|(c, v)| (*c, nodes[v.0].value.as_slice())).collect();
            kernel::lincomb(&t)
        };
        self.push(Prim::LinComb(terms.iter().map(|(c, v)| (*c, v.0)).collect()), value)
    }
    fn affine(&self, x: &Var, mul: Option<&Arc<Vec<T>>>, add: Option<&Arc<Vec<T>>>) -> Var {
        self.unary(
            *x,
            |xv| kernel::affine(xv, mul.map(|m| m.as_slice()), add.map(|a| a.as_slice())),
            Prim::Affine { x: x.0, mul: mul.cloned() },
        )
    }
    fn matvec(&self, m: &Arc<Matrix<T>>, x: &Var, transpose: bool) -> Var {
        self.unary(
            *x,
            |xv| if transpose { m.matvec_t(xv) } else { m.matvec(xv) },
            Prim::MatVec { m: Arc::clone(m), x: x.0, transpose },
        )
    }
    fn exp(&self, x: &Var) -> Var {
        self.unary(*x, |xv| xv.iter().map(|v| v.exp()).collect(), Prim::Exp(x.0))
    }
    fn log(&self, x: &Var) -> Var {
        self.unary(*x, |xv| xv.iter().map(|v| v.ln()).collect(), Prim::Log(x.0))
    }
    fn log_sum_exp(&self, x: &Var) -> Var {
        self.unary(*x, |xv| vec![kernel::log_sum_exp(xv)], Prim::LogSumExp(x.0))
    }
    fn add_scalar(&self, x: &Var, s: &Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.0].value[0];
            nodes[x.0].value.iter().map(|&v| v + sv).collect()
        };
        self.push(Prim::AddScalar { x: x.0, s: s.0 }, value)
    }
    fn sum(&self, x: &Var) -> Var {
        self.unary(*x, |xv| vec![xv.iter().copied().sum()], Prim::Sum(x.0))
    }
    fn sq_norm(&self, x: &Var, w: Option<&Arc<Vec<T>>>) -> Var {
        self.unary(
            *x,
            |xv| vec![kernel::weighted_sq_norm(xv, w.map(|w| w.as_slice()))],
            Prim::SqNorm { x: x.0, w: w.cloned() },
        )
    }
    fn norm(&self, x: &Var) -> Var {
        self.unary(*x, |xv| vec![kernel::weighted_sq_norm(xv, None).sqrt()], Prim::Norm(x.0))
    }
}

/// A forward pass recorded on its own tape.
#[derive(Debug)]
pub struct Recording<T> {
    pub tape: Tape<T>,
    pub input: Var,
    pub output: Var,
}

impl<T: Scalar> Recording<T> {
    pub fn value(&self) -> Vec<T> {
        self.tape.value(&self.output)
    }

    /// Gradient of the (scalar) output with respect to the input, times `seed`.
    pub fn backward(&self, seed: T) -> Result<Vec<T>> {
        self.tape.gradient(self.output, self.input, seed)
    }
}

/// Runs `f` on a fresh tape with `input` as its single differentiable leaf.
pub fn forward_record<T, F>(input: &[T], f: F) -> Recording<T>
where
    T: Scalar,
    F: FnOnce(&Tape<T>, Var) -> Var,
{
    let tape = Tape::new();
    let input = tape.input(input.to_vec());
    let output = f(&tape, input);
    Recording { tape, input, output }
}

/// Value and gradient of a scalar function written against [`Backend`].
pub fn value_and_grad<T, F>(x: &[T], f: F) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    F: FnOnce(&Tape<T>, Var) -> Var,
{
    let rec = forward_record(x, f);
    let v = rec.value();
    if v.len() != 1 {
        return Err(WmError::NonScalarRoot(v.len()));
    }
    let g = rec.backward(T::one())?;
    Ok((v[0], g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_records_nothing() {
        let rec = forward_record(&[1.0_f64, 2.0], |_, x| x);
        assert_eq!(rec.tape.op_count(), 0);
        assert_eq!(rec.value(), vec![1.0, 2.0]);
    }

    #[test]
    fn sq_norm_of_zero_and_gradient() {
        let (v, _) = value_and_grad(&[0.0_f64; 3], |t, x| t.sq_norm(&x, None)).unwrap();
        assert_eq!(v, 0.0);
        let x = [0.3_f64, -1.2, 2.5];
        let (_, g) = value_and_grad(&x, |t, x| t.sq_norm(&x, None)).unwrap();
        for (gi, xi) in g.iter().zip(x) {
            assert_eq!(*gi, 2.0 * xi);
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let rec = forward_record(&[1.0_f64, 2.0], |t, x| t.exp(&x));
        assert!(matches!(rec.backward(1.0), Err(WmError::NonScalarRoot(2))));
    }

    #[test]
    fn norm_gradient_at_zero_is_zero() {
        let (_, g) = value_and_grad(&[0.0_f64; 2], |t, x| t.norm(&x)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn matrix_transpose_products() {
        let m = Matrix::new(2, 3, vec![1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
        assert_eq!(m.transpose().matvec(&[1.0, -1.0]), m.matvec_t(&[1.0, -1.0]));
    }
}
