//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Each operation appends one node; node payloads live in a single `f64`
//! arena so clearing the tape between loss evaluations reuses capacity
//! instead of reallocating. Values are dense row-major matrices; elementwise
//! binaries broadcast a 1x1 operand against any shape. Gradients accumulate
//! only into nodes created with [`Tape::input`].
//!
//! Every node's output is checked for finiteness as it is produced, so a
//! numeric failure surfaces as an error naming the first offending node
//! rather than as NaNs propagating into an optimizer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix;
use crate::nd::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Scale(u32, f64),
    AddScalar(u32),
    Square(u32),
    Sqrt(u32),
    Exp(u32),
    Ln(u32),
    Sin(u32),
    MatMul(u32, u32),
    Transpose(u32),
    Sum(u32),
    /// Contiguous range of the source's row-major data; result is (len, 1).
    Slice { src: u32, start: u32 },
    /// Column block [start, start+len) of the source.
    SliceCols { src: u32, start: u32 },
    ConcatCols(u32, u32),
    Reshape(u32),
    /// 0.5 * y^T K^{-1} y + 0.5 * log det K for a symmetric K, with the
    /// factorization jittered as needed. `saved` indexes factor storage.
    GramEnergy { src: u32, saved: u32 },
}

struct Node {
    op: Op,
    rows: u32,
    cols: u32,
    off: usize,
}

struct GramSaved {
    chol: Tensor,
    alpha: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    grads: Vec<f64>,
    gram: Vec<GramSaved>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drop all nodes but keep allocated capacity.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.grads.clear();
        self.gram.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0 as usize];
        (n.rows as usize, n.cols as usize)
    }

    fn range(&self, id: u32) -> std::ops::Range<usize> {
        let n = &self.nodes[id as usize];
        n.off..n.off + (n.rows as usize) * (n.cols as usize)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[self.range(v.0)]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dims(v), (1, 1));
        self.vals[self.nodes[v.0 as usize].off]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::new(r, c, self.value(v).to_vec()).expect("node dims consistent")
    }

    /// Gradient of the last `backward` target with respect to node `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        debug_assert_eq!(self.grads.len(), self.vals.len(), "backward not run");
        &self.grads[self.range(v.0)]
    }

    fn alloc(&mut self, op: Op, rows: usize, cols: usize) -> Var {
        let off = self.vals.len();
        self.vals.resize(off + rows * cols, 0.0);
        self.nodes.push(Node { op, rows: rows as u32, cols: cols as u32, off });
        Var(self.nodes.len() as u32 - 1)
    }

    fn check_finite(&self, v: Var, op: &'static str) -> Result<Var> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite { op, node: v.0 as usize })
        }
    }

    /// Gradient target.
    pub fn input(&mut self, t: &Tensor) -> Var {
        let v = self.alloc(Op::Input, t.rows(), t.cols());
        let r = self.range(v.0);
        self.vals[r].copy_from_slice(t.data());
        v
    }

    /// Column-vector gradient target from a slice.
    pub fn input_col(&mut self, data: &[f64]) -> Var {
        let v = self.alloc(Op::Input, data.len(), 1);
        let r = self.range(v.0);
        self.vals[r].copy_from_slice(data);
        v
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.constant_slice(t.rows(), t.cols(), t.data())
    }

    pub fn constant_slice(&mut self, rows: usize, cols: usize, data: &[f64]) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let v = self.alloc(Op::Const, rows, cols);
        let r = self.range(v.0);
        self.vals[r].copy_from_slice(data);
        v
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant_slice(1, 1, &[x])
    }

    pub fn ones_const(&mut self, rows: usize, cols: usize) -> Var {
        let v = self.alloc(Op::Const, rows, cols);
        let r = self.range(v.0);
        self.vals[r].fill(1.0);
        v
    }

    // ---- elementwise binaries -------------------------------------------

    fn binary_shape(
        &self,
        a: Var,
        b: Var,
        context: &'static str,
    ) -> Result<(usize, usize)> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) == (rb, cb) {
            Ok((ra, ca))
        } else if ra * ca == 1 {
            Ok((rb, cb))
        } else if rb * cb == 1 {
            Ok((ra, ca))
        } else {
            Err(Error::ShapeMismatch {
                context,
                expected: format!("{ra}x{ca} to combine with {ra}x{ca} or 1x1"),
                got: format!("{rb}x{cb}"),
            })
        }
    }

    fn ew(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (rows, cols) = self.binary_shape(a, b, name)?;
        let out = self.alloc(op, rows, cols);
        let (ra, ca) = self.dims(a);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let br = self.range(b.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        let av = &ins[ar];
        let bv = &ins[br];
        let ov = &mut outs[..or.len()];
        if av.len() == bv.len() {
            for ((o, &x), &y) in ov.iter_mut().zip(av).zip(bv) {
                *o = f(x, y);
            }
        } else if ra * ca == 1 {
            let x = av[0];
            for (o, &y) in ov.iter_mut().zip(bv) {
                *o = f(x, y);
            }
        } else {
            let y = bv[0];
            for (o, &x) in ov.iter_mut().zip(av) {
                *o = f(x, y);
            }
        }
        self.check_finite(out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(a, b, Op::Add(a.0, b.0), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(a, b, Op::Sub(a.0, b.0), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(a, b, Op::Mul(a.0, b.0), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(a, b, Op::Div(a.0, b.0), "div", |x, y| x / y)
    }

    // ---- elementwise unaries --------------------------------------------

    fn un(
        &mut self,
        a: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        let out = self.alloc(op, rows, cols);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        for (o, &x) in outs[..or.len()].iter_mut().zip(&ins[ar]) {
            *o = f(x);
        }
        self.check_finite(out, name)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Neg(a.0), "neg", |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.un(a, Op::Scale(a.0, c), "scale", |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.un(a, Op::AddScalar(a.0), "add_scalar", |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Square(a.0), "square", |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Sqrt(a.0), "sqrt", f64::sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Exp(a.0), "exp", f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Ln(a.0), "ln", f64::ln)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.un(a, Op::Sin(a.0), "sin", f64::sin)
    }

    // ---- structural ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ca != rb {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: format!("inner dims to agree ({ra}x{ca} * {rb}x{cb})"),
                got: String::new(),
            });
        }
        let out = self.alloc(Op::MatMul(a.0, b.0), ra, cb);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let br = self.range(b.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        matmul_nn(&ins[ar], ra, ca, &ins[br], cb, &mut outs[..or.len()]);
        self.check_finite(out, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let out = self.alloc(Op::Transpose(a.0), ca, ra);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        let av = &ins[ar];
        let ov = &mut outs[..or.len()];
        for i in 0..ra {
            for j in 0..ca {
                ov[j * ra + i] = av[i * ca + j];
            }
        }
        Ok(out)
    }

    /// Sum of all elements, producing a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = self.alloc(Op::Sum(a.0), 1, 1);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        outs[0] = ins[ar].iter().sum();
        self.check_finite(out, "sum")
    }

    /// Contiguous range of the row-major data; result is a column (len, 1).
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        if start + len > ra * ca {
            return Err(Error::ShapeMismatch {
                context: "slice",
                expected: format!("range within {} elements", ra * ca),
                got: format!("{start}..{}", start + len),
            });
        }
        let out = self.alloc(Op::Slice { src: a.0, start: start as u32 }, len, 1);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        outs[..len].copy_from_slice(&ins[ar.start + start..ar.start + start + len]);
        Ok(out)
    }

    /// Column block [start, start+len) of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        if start + len > ca {
            return Err(Error::ShapeMismatch {
                context: "slice_cols",
                expected: format!("columns within 0..{ca}"),
                got: format!("{start}..{}", start + len),
            });
        }
        let out = self.alloc(Op::SliceCols { src: a.0, start: start as u32 }, ra, len);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        let av = &ins[ar];
        let ov = &mut outs[..or.len()];
        for i in 0..ra {
            ov[i * len..(i + 1) * len].copy_from_slice(&av[i * ca + start..i * ca + start + len]);
        }
        Ok(out)
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::ShapeMismatch {
                context: "concat_cols",
                expected: format!("{ra} rows"),
                got: format!("{rb} rows"),
            });
        }
        let out = self.alloc(Op::ConcatCols(a.0, b.0), ra, ca + cb);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let br = self.range(b.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        let av = &ins[ar];
        let bv = &ins[br];
        let ov = &mut outs[..or.len()];
        let cw = ca + cb;
        for i in 0..ra {
            ov[i * cw..i * cw + ca].copy_from_slice(&av[i * ca..(i + 1) * ca]);
            ov[i * cw + ca..(i + 1) * cw].copy_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        if ra * ca != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                expected: format!("{} elements", ra * ca),
                got: format!("{rows}x{cols}"),
            });
        }
        let out = self.alloc(Op::Reshape(a.0), rows, cols);
        let or = self.range(out.0);
        let ar = self.range(a.0);
        let (ins, outs) = self.vals.split_at_mut(or.start);
        outs[..or.len()].copy_from_slice(&ins[ar]);
        Ok(out)
    }

    /// 0.5 * y^T K^{-1} y + 0.5 * log det K for symmetric K, the data part of
    /// a Gaussian negative log marginal. The factorization escalates diagonal
    /// jitter as needed; the jitter actually used is reported back.
    pub fn gram_energy(&mut self, k: Var, y: &[f64]) -> Result<(Var, f64)> {
        let (n, m) = self.dims(k);
        if n != m || y.len() != n {
            return Err(Error::ShapeMismatch {
                context: "gram_energy",
                expected: format!("square K matching y (len {})", y.len()),
                got: format!("{n}x{m}"),
            });
        }
        let kt = self.to_tensor(k);
        let (chol, jitter) = matrix::cholesky_jittered(&kt)?;
        let alpha = matrix::chol_solve(&chol, y);
        let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let energy = 0.5 * quad + 0.5 * matrix::chol_logdet(&chol);
        let saved = self.gram.len() as u32;
        self.gram.push(GramSaved { chol, alpha });
        let out = self.alloc(Op::GramEnergy { src: k.0, saved }, 1, 1);
        let off = self.nodes[out.0 as usize].off;
        self.vals[off] = energy;
        self.check_finite(out, "gram_energy")?;
        Ok((out, jitter))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulate gradients of a scalar node into every antecedent.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.dims(out) != (1, 1) {
            let (r, c) = self.dims(out);
            return Err(Error::ShapeMismatch {
                context: "backward",
                expected: "1x1 loss node".into(),
                got: format!("{r}x{c}"),
            });
        }
        self.grads.clear();
        self.grads.resize(self.vals.len(), 0.0);
        self.grads[self.nodes[out.0 as usize].off] = 1.0;

        for id in (0..=out.0).rev() {
            let op = self.nodes[id as usize].op;
            let orange = self.range(id);
            let (orows, ocols) = self.dims(Var(id));
            match op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    self.bwd_add_sub(a, b, orange, 1.0);
                }
                Op::Sub(a, b) => {
                    self.bwd_add_sub(a, b, orange, -1.0);
                }
                Op::Mul(a, b) => {
                    let ar = self.range(a);
                    let br = self.range(b);
                    // d(a*b) = b da + a db
                    self.bwd_scaled_by_other(a, br.clone(), orange.clone());
                    self.bwd_scaled_by_other(b, ar.clone(), orange);
                }
                Op::Div(a, b) => {
                    self.bwd_div(a, b, orange);
                }
                Op::Neg(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    for (ga, &go) in l[ar].iter_mut().zip(g) {
                        *ga -= go;
                    }
                }
                Op::Scale(a, c) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    for (ga, &go) in l[ar].iter_mut().zip(g) {
                        *ga += c * go;
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    for (ga, &go) in l[ar].iter_mut().zip(g) {
                        *ga += go;
                    }
                }
                Op::Square(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let x = &self.vals[ar.clone()];
                    for ((ga, &go), &xv) in l[ar.clone()].iter_mut().zip(g).zip(x) {
                        *ga += 2.0 * xv * go;
                    }
                }
                Op::Sqrt(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let y = &self.vals[orange.clone()];
                    for ((ga, &go), &yv) in l[ar.clone()].iter_mut().zip(g).zip(y) {
                        *ga += 0.5 / yv * go;
                    }
                }
                Op::Exp(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let y = &self.vals[orange.clone()];
                    for ((ga, &go), &yv) in l[ar.clone()].iter_mut().zip(g).zip(y) {
                        *ga += yv * go;
                    }
                }
                Op::Ln(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let x = &self.vals[ar.clone()];
                    for ((ga, &go), &xv) in l[ar.clone()].iter_mut().zip(g).zip(x) {
                        *ga += go / xv;
                    }
                }
                Op::Sin(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let x = &self.vals[ar.clone()];
                    for ((ga, &go), &xv) in l[ar.clone()].iter_mut().zip(g).zip(x) {
                        *ga += xv.cos() * go;
                    }
                }
                Op::MatMul(a, b) => {
                    let ar = self.range(a);
                    let br = self.range(b);
                    let (ra, ca) = {
                        let n = &self.nodes[a as usize];
                        (n.rows as usize, n.cols as usize)
                    };
                    let cb = self.nodes[b as usize].cols as usize;
                    // gA += G * B^T
                    {
                        let (l, r) = self.grads.split_at_mut(orange.start);
                        let g = &r[..orange.len()];
                        matmul_nt(g, ra, cb, &self.vals[br.clone()], ca, &mut l[ar.clone()]);
                    }
                    // gB += A^T * G
                    {
                        let (l, r) = self.grads.split_at_mut(orange.start);
                        let g = &r[..orange.len()];
                        matmul_tn(&self.vals[ar], ra, ca, g, cb, &mut l[br]);
                    }
                }
                Op::Transpose(a) => {
                    let ar = self.range(a);
                    let ca = self.nodes[a as usize].cols as usize;
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let ga = &mut l[ar];
                    // output is (ca_src rows) x (ra_src cols) = orows x ocols
                    for i in 0..orows {
                        for j in 0..ocols {
                            ga[j * ca + i] += g[i * ocols + j];
                        }
                    }
                }
                Op::Sum(a) => {
                    let ar = self.range(a);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let go = r[0];
                    for ga in l[ar].iter_mut() {
                        *ga += go;
                    }
                }
                Op::Slice { src, start } => {
                    let ar = self.range(src);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let dst = &mut l[ar.start + start as usize..ar.start + start as usize + g.len()];
                    for (d, &go) in dst.iter_mut().zip(g) {
                        *d += go;
                    }
                }
                Op::SliceCols { src, start } => {
                    let ar = self.range(src);
                    let ca = self.nodes[src as usize].cols as usize;
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    let ga = &mut l[ar];
                    let s = start as usize;
                    for i in 0..orows {
                        for j in 0..ocols {
                            ga[i * ca + s + j] += g[i * ocols + j];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ar = self.range(a);
                    let br = self.range(b);
                    let ca = self.nodes[a as usize].cols as usize;
                    let cb = self.nodes[b as usize].cols as usize;
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let g = &r[..orange.len()];
                    {
                        let ga = &mut l[ar];
                        for i in 0..orows {
                            for j in 0..ca {
                                ga[i * ca + j] += g[i * ocols + j];
                            }
                        }
                    }
                    {
                        let gb = &mut l[br];
                        for i in 0..orows {
                            for j in 0..cb {
                                gb[i * cb + j] += g[i * ocols + ca + j];
                            }
                        }
                    }
                }
                Op::GramEnergy { src, saved } => {
                    let saved = &self.gram[saved as usize];
                    let kinv = matrix::chol_inverse(&saved.chol);
                    let n = kinv.rows();
                    let alpha = &saved.alpha;
                    let ar = self.range(src);
                    let (l, r) = self.grads.split_at_mut(orange.start);
                    let go = r[0];
                    let ga = &mut l[ar];
                    for i in 0..n {
                        for j in 0..n {
                            ga[i * n + j] += go * 0.5 * (kinv.get(i, j) - alpha[i] * alpha[j]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn bwd_add_sub(&mut self, a: u32, b: u32, orange: std::ops::Range<usize>, sign_b: f64) {
        let ar = self.range(a);
        let br = self.range(b);
        let (l, r) = self.grads.split_at_mut(orange.start);
        let g = &r[..orange.len()];
        if ar.len() == g.len() {
            for (ga, &go) in l[ar].iter_mut().zip(g) {
                *ga += go;
            }
        } else {
            l[ar][0] += g.iter().sum::<f64>();
        }
        let (l, r) = self.grads.split_at_mut(orange.start);
        let g = &r[..orange.len()];
        if br.len() == g.len() {
            for (gb, &go) in l[br].iter_mut().zip(g) {
                *gb += sign_b * go;
            }
        } else {
            l[br][0] += sign_b * g.iter().sum::<f64>();
        }
    }

    /// grad(target) += other_vals .* g, reducing when target is scalar.
    fn bwd_scaled_by_other(
        &mut self,
        target: u32,
        other: std::ops::Range<usize>,
        orange: std::ops::Range<usize>,
    ) {
        let tr = self.range(target);
        let (l, r) = self.grads.split_at_mut(orange.start);
        let g = &r[..orange.len()];
        let ov = &self.vals[other];
        let gt = &mut l[tr];
        if gt.len() == g.len() && ov.len() == g.len() {
            for ((t, &go), &o) in gt.iter_mut().zip(g).zip(ov) {
                *t += o * go;
            }
        } else if gt.len() == 1 {
            // target is the broadcast scalar: reduce
            if ov.len() == g.len() {
                gt[0] += ov.iter().zip(g).map(|(&o, &go)| o * go).sum::<f64>();
            } else {
                gt[0] += ov[0] * g.iter().sum::<f64>();
            }
        } else {
            // target full-shaped, other is scalar
            let o = ov[0];
            for (t, &go) in gt.iter_mut().zip(g) {
                *t += o * go;
            }
        }
    }

    fn bwd_div(&mut self, a: u32, b: u32, orange: std::ops::Range<usize>) {
        let ar = self.range(a);
        let br = self.range(b);
        let alen = ar.len();
        let blen = br.len();
        let olen = orange.len();
        // ga += g / b
        {
            let (l, r) = self.grads.split_at_mut(orange.start);
            let g = &r[..olen];
            let bv = &self.vals[br.clone()];
            let ga = &mut l[ar.clone()];
            if alen == olen {
                for (i, (t, &go)) in ga.iter_mut().zip(g).enumerate() {
                    let b_i = if blen == olen { bv[i] } else { bv[0] };
                    *t += go / b_i;
                }
            } else {
                // a scalar broadcast over b's shape
                let mut acc = 0.0;
                for (i, &go) in g.iter().enumerate() {
                    acc += go / bv[i];
                }
                ga[0] += acc;
            }
        }
        // gb += -g * out / b  (out = a/b, so -a/b^2 = -out/b)
        {
            let outv_start = orange.start;
            let (l, r) = self.grads.split_at_mut(outv_start);
            let g = &r[..olen];
            let outv = &self.vals[orange.clone()];
            let bv = &self.vals[br.clone()];
            let gb = &mut l[br.clone()];
            if blen == olen {
                for i in 0..olen {
                    gb[i] -= g[i] * outv[i] / bv[i];
                }
            } else {
                let b0 = bv[0];
                let mut acc = 0.0;
                for i in 0..olen {
                    acc += g[i] * outv[i];
                }
                gb[0] -= acc / b0;
            }
        }
    }
}

/// Evaluate `f` at `theta` and return (value, gradient). The tape is rebuilt
/// on every call; use [`value_and_grad_in`] in hot loops to reuse capacity.
pub fn value_and_grad<F>(f: F, theta: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    value_and_grad_in(&mut tape, f, theta)
}

pub fn value_and_grad_in<F>(tape: &mut Tape, f: F, theta: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    tape.clear();
    let t = tape.input_col(theta);
    let out = f(tape, t)?;
    if tape.dims(out) != (1, 1) {
        let (r, c) = tape.dims(out);
        return Err(Error::ShapeMismatch {
            context: "value_and_grad",
            expected: "scalar loss".into(),
            got: format!("{r}x{c}"),
        });
    }
    let value = tape.scalar_value(out);
    tape.backward(out)?;
    Ok((value, tape.grad(t).to_vec()))
}

/// Per-datum gradient matrix: row i is the gradient of `f(theta, data[i])`.
/// Rows are computed independently (parallel when worthwhile) and land at
/// fixed indices, so the result does not depend on scheduling.
pub fn per_sample_grads<D, F>(f: F, theta: &[f64], data: &[D]) -> Result<Tensor>
where
    D: Sync,
    F: Fn(&mut Tape, Var, &D) -> Result<Var> + Sync,
{
    let p = theta.len();
    let rows: Vec<Result<Vec<f64>>> = data
        .par_iter()
        .map_init(Tape::new, |tape, d| {
            let (_, g) = value_and_grad_in(tape, |t, th| f(t, th, d), theta)?;
            Ok(g)
        })
        .collect();
    let mut out = Tensor::zeros(data.len(), p);
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&r?);
    }
    Ok(out)
}

/// Dense Hessian by central differences of the reverse-mode gradient,
/// symmetrized. Step per coordinate: cbrt(eps) * max(1, |theta_i|).
pub fn hessian_fd<F>(f: F, theta: &[f64]) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let p = theta.len();
    let mut tape = Tape::new();
    let mut h = Tensor::zeros(p, p);
    let mut work = theta.to_vec();
    let step0 = f64::EPSILON.cbrt();
    for j in 0..p {
        let hj = step0 * theta[j].abs().max(1.0);
        work[j] = theta[j] + hj;
        let (_, gp) = value_and_grad_in(&mut tape, &f, &work)?;
        work[j] = theta[j] - hj;
        let (_, gm) = value_and_grad_in(&mut tape, &f, &work)?;
        work[j] = theta[j];
        for i in 0..p {
            h.set(i, j, (gp[i] - gm[i]) / (2.0 * hj));
        }
    }
    let ht = h.transposed();
    for i in 0..p {
        for j in 0..p {
            h.set(i, j, 0.5 * (h.get(i, j) + ht.get(i, j)));
        }
    }
    Ok(h)
}
