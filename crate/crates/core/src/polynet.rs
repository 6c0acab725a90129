//! Factorized polynomial networks: activation-free architectures whose
//! input-output map is exactly a multivariate polynomial.
//!
//! The network augments the input with a bias channel, x~ = [1, x_1..x_d],
//! and builds degree one layer at a time:
//!
//!   h_1 = A_1 x~
//!   h_l = (A_l x~) .* (B_l h_{l-1})      for l = 2..degree
//!   out = C h_degree
//!
//! Each product layer raises the total degree by exactly one, and the bias
//! channel lets every layer contribute lower-degree terms, so the map is a
//! generic polynomial of total degree <= `degree`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::tensor::matmul_nn;
use crate::nd::{RngStream, Tape, Var};
use crate::symexpand::{expand, monomials_up_to};

/// Architecture of a polynomial network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyNetArch {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub width: usize,
    pub degree: usize,
}

/// Which weight matrix a slice of the flat parameter vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerMatrix {
    /// Input-side matrix of layer l (1-based), shape width x (n_inputs + 1).
    A(usize),
    /// Carry-side matrix of layer l >= 2, shape width x width.
    B(usize),
    /// Output matrix, shape n_outputs x width.
    C,
}

impl PolyNetArch {
    pub fn new(n_inputs: usize, n_outputs: usize, width: usize, degree: usize) -> Result<Self> {
        if n_inputs == 0 || n_outputs == 0 {
            return Err(Error::invalid("network needs at least one input and output"));
        }
        if width == 0 {
            return Err(Error::invalid("network width must be at least 1"));
        }
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        Ok(Self { n_inputs, n_outputs, width, degree })
    }

    /// Total number of parameters:
    /// w(d+1) + (degree-1)(w(d+1) + w^2) + n_outputs * w.
    pub fn count_params(&self) -> usize {
        let d1 = self.n_inputs + 1;
        let w = self.width;
        w * d1 + (self.degree - 1) * (w * d1 + w * w) + self.n_outputs * w
    }

    /// Layout of the flat parameter vector: (matrix, rows, cols, offset),
    /// in storage order. All matrices are stored row-major.
    pub fn layout(&self) -> Vec<(LayerMatrix, usize, usize, usize)> {
        let d1 = self.n_inputs + 1;
        let w = self.width;
        let mut out = Vec::new();
        let mut off = 0;
        out.push((LayerMatrix::A(1), w, d1, off));
        off += w * d1;
        for l in 2..=self.degree {
            out.push((LayerMatrix::A(l), w, d1, off));
            off += w * d1;
            out.push((LayerMatrix::B(l), w, w, off));
            off += w * w;
        }
        out.push((LayerMatrix::C, self.n_outputs, w, off));
        out
    }

    /// The width whose parameter count comes closest to `target`
    /// (ties resolve to the smaller width).
    pub fn width_closest_to(
        n_inputs: usize,
        n_outputs: usize,
        degree: usize,
        target: usize,
    ) -> usize {
        let mut best_w = 1;
        let mut best_diff = usize::MAX;
        for w in 1.. {
            let arch = Self { n_inputs, n_outputs, width: w, degree };
            let count = arch.count_params();
            let diff = count.abs_diff(target);
            if diff < best_diff {
                best_diff = diff;
                best_w = w;
            }
            // count is strictly increasing in w, so once past the target
            // nothing further can improve
            if count >= target {
                break;
            }
        }
        best_w
    }

    /// Evaluate the network at a single state vector.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.count_params() {
            return Err(Error::ShapeMismatch {
                context: "polynet forward theta",
                expected: format!("{}", self.count_params()),
                got: format!("{}", theta.len()),
            });
        }
        if x.len() != self.n_inputs {
            return Err(Error::ShapeMismatch {
                context: "polynet forward input",
                expected: format!("{}", self.n_inputs),
                got: format!("{}", x.len()),
            });
        }
        let d1 = self.n_inputs + 1;
        let w = self.width;
        let mut xt = vec![1.0; d1];
        xt[1..].copy_from_slice(x);

        let mut off = 0;
        let mut h = vec![0.0; w];
        matmul_nn(&theta[off..off + w * d1], w, d1, &xt, 1, &mut h);
        off += w * d1;
        for _ in 2..=self.degree {
            let mut a = vec![0.0; w];
            matmul_nn(&theta[off..off + w * d1], w, d1, &xt, 1, &mut a);
            off += w * d1;
            let mut b = vec![0.0; w];
            matmul_nn(&theta[off..off + w * w], w, w, &h, 1, &mut b);
            off += w * w;
            for i in 0..w {
                h[i] = a[i] * b[i];
            }
        }
        let mut out = vec![0.0; self.n_outputs];
        matmul_nn(&theta[off..off + self.n_outputs * w], self.n_outputs, w, &h, 1, &mut out);
        Ok(out)
    }

    /// Slice a tape-resident parameter column into the layer matrices.
    /// Call once per loss evaluation; the returned handle evaluates the
    /// network on whole batches of states.
    pub fn bind(&self, tape: &mut Tape, theta: Var) -> Result<BoundNet> {
        let (rows, cols) = tape.dims(theta);
        if rows * cols != self.count_params() || cols != 1 {
            return Err(Error::ShapeMismatch {
                context: "polynet bind theta",
                expected: format!("{}x1", self.count_params()),
                got: format!("{rows}x{cols}"),
            });
        }
        let mut a = Vec::with_capacity(self.degree);
        let mut b = Vec::with_capacity(self.degree.saturating_sub(1));
        let mut c = None;
        for (mat, r, cl, off) in self.layout() {
            let flat = tape.slice(theta, off, r * cl)?;
            let shaped = tape.reshape(flat, r, cl)?;
            match mat {
                LayerMatrix::A(_) => a.push(shaped),
                LayerMatrix::B(_) => b.push(shaped),
                LayerMatrix::C => c = Some(shaped),
            }
        }
        Ok(BoundNet { arch: self.clone(), a, b, c: c.expect("layout always ends with C") })
    }
}

/// A network with parameters already sliced onto a tape.
pub struct BoundNet {
    arch: PolyNetArch,
    a: Vec<Var>,
    b: Vec<Var>,
    c: Var,
}

impl BoundNet {
    pub fn arch(&self) -> &PolyNetArch {
        &self.arch
    }

    /// Evaluate the network on a batch of states held column-wise:
    /// x has shape (n_inputs, batch), the result (n_outputs, batch).
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (d, batch) = tape.dims(x);
        if d != self.arch.n_inputs {
            return Err(Error::ShapeMismatch {
                context: "polynet batch input",
                expected: format!("{} rows", self.arch.n_inputs),
                got: format!("{d} rows"),
            });
        }
        let ones = tape.ones_const(1, batch);
        let xt = concat_rows(tape, ones, x)?;
        let mut h = tape.matmul(self.a[0], xt)?;
        for l in 1..self.a.len() {
            let al = tape.matmul(self.a[l], xt)?;
            let bl = tape.matmul(self.b[l - 1], h)?;
            h = tape.mul(al, bl)?;
        }
        tape.matmul(self.c, h)
    }
}

/// Stack two tape values vertically (shared column count).
fn concat_rows(tape: &mut Tape, top: Var, bottom: Var) -> Result<Var> {
    let tt = tape.transpose(top)?;
    let bt = tape.transpose(bottom)?;
    let joined = tape.concat_cols(tt, bt)?;
    tape.transpose(joined)
}

/// Flat network parameters together with their architecture, so slices can
/// always be mapped back to layer matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    arch: PolyNetArch,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(arch: PolyNetArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.count_params() {
            return Err(Error::ShapeMismatch {
                context: "param vector length",
                expected: format!("{}", arch.count_params()),
                got: format!("{}", values.len()),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: PolyNetArch) -> Self {
        let n = arch.count_params();
        Self { arch, values: vec![0.0; n] }
    }

    pub fn arch(&self) -> &PolyNetArch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Expanded-coefficient magnitude window targeted by `init_params`.
pub const INIT_COEFF_LO: f64 = 1e-10;
pub const INIT_COEFF_HI: f64 = 1e-5;
const INIT_MAX_ATTEMPTS: usize = 1000;

/// Draw initial parameters whose expanded monomial coefficients all have
/// magnitude inside [INIT_COEFF_LO, INIT_COEFF_HI].
///
/// Entries are drawn uniformly, then the whole vector is rescaled: every
/// expanded coefficient is a sum of products of exactly 2*degree parameter
/// entries, so scaling theta by g scales every coefficient by g^(2*degree).
/// Placing the coefficient spread geometrically inside the target window
/// succeeds whenever max|c|/min|c| <= 1e5; otherwise the draw is rejected
/// and retried.
pub fn init_params(arch: &PolyNetArch, rng: &mut RngStream) -> Result<ParamVector> {
    let n = arch.count_params();
    let hom = (2 * arch.degree) as f64;
    let all_keys = monomials_up_to(arch.n_inputs, arch.degree as u32);
    for _ in 0..INIT_MAX_ATTEMPTS {
        let raw: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let form = expand(arch, &raw)?;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for out in form.outputs() {
            for key in &all_keys {
                let c = out.get(key).copied().unwrap_or(0.0).abs();
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        if lo <= 0.0 || hi / lo > INIT_COEFF_HI / INIT_COEFF_LO {
            continue;
        }
        // coefficient scale that centers [lo, hi] geometrically in the window
        let coeff_scale = (INIT_COEFF_LO * INIT_COEFF_HI / (lo * hi)).sqrt();
        let gamma = coeff_scale.powf(1.0 / hom);
        let theta: Vec<f64> = raw.iter().map(|t| gamma * t).collect();
        let form = expand(arch, &theta)?;
        let ok = form.outputs().iter().all(|out| {
            all_keys.iter().all(|key| {
                let c = out.get(key).copied().unwrap_or(0.0).abs();
                (INIT_COEFF_LO..=INIT_COEFF_HI).contains(&c)
            })
        });
        if ok {
            return ParamVector::new(arch.clone(), theta);
        }
    }
    Err(Error::InitRejection { attempts: INIT_MAX_ATTEMPTS })
}
