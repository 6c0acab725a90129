//! Gaussian process regression for de-noising time series.
//!
//! Kernels are expression trees over a handful of stationary primitives.
//! Hyperparameters are fitted by maximum marginal likelihood with Adam in
//! log-parameter space, best of several restarts. Replicated inputs (pooled
//! repeats of the same time grid) are collapsed exactly to their per-input
//! means before factorization, so the Gram stays at the size of the unique
//! grid no matter how many replicates were pooled.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{chol_solve, cholesky_jittered, forward_sub};
use crate::nd::{RngStream, Tape, Tensor, Var};
use crate::opt::{adam_minimize, AdamOpts};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Smoothness selector for the Matern kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

/// Kernel expression tree. All hyperparameters must be strictly positive.
///
/// Primitives other than `Constant` are normalized to unit amplitude; scale
/// them by multiplying with a `Constant` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// c^2 everywhere.
    Constant { amplitude2: f64 },
    /// exp(-2 sin^2(pi d / period) / length^2).
    Periodic { length: f64, period: f64 },
    /// (1 + d^2 / (2 alpha length^2))^(-alpha).
    RationalQuadratic { length: f64, alpha: f64 },
    /// exp(-d^2 / (2 length^2)).
    Rbf { length: f64 },
    Matern { length: f64, nu: MaternNu },
    /// noise2 iff both arguments are the same training index.
    White { noise2: f64 },
    Sum(Box<KernelSpec>, Box<KernelSpec>),
    Product(Box<KernelSpec>, Box<KernelSpec>),
}

impl KernelSpec {
    pub fn sum(a: KernelSpec, b: KernelSpec) -> KernelSpec {
        KernelSpec::Sum(Box::new(a), Box::new(b))
    }

    pub fn product(a: KernelSpec, b: KernelSpec) -> KernelSpec {
        KernelSpec::Product(Box::new(a), Box::new(b))
    }

    pub fn scaled_rbf(amplitude2: f64, length: f64) -> KernelSpec {
        Self::product(KernelSpec::Constant { amplitude2 }, KernelSpec::Rbf { length })
    }

    pub fn scaled_periodic(amplitude2: f64, length: f64, period: f64) -> KernelSpec {
        Self::product(
            KernelSpec::Constant { amplitude2 },
            KernelSpec::Periodic { length, period },
        )
    }

    pub fn scaled_rational_quadratic(amplitude2: f64, length: f64, alpha: f64) -> KernelSpec {
        Self::product(
            KernelSpec::Constant { amplitude2 },
            KernelSpec::RationalQuadratic { length, alpha },
        )
    }

    /// Add an independent white-noise term on top of `self`.
    pub fn with_noise(self, noise2: f64) -> KernelSpec {
        Self::sum(self, KernelSpec::White { noise2 })
    }
}

/// Check that every hyperparameter in the tree is strictly positive and finite.
pub fn validate(spec: &KernelSpec) -> Result<()> {
    let ok = |v: f64, what: &str| -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("kernel {what} must be positive and finite, got {v}")))
        }
    };
    match spec {
        KernelSpec::Constant { amplitude2 } => ok(*amplitude2, "amplitude2"),
        KernelSpec::Periodic { length, period } => {
            ok(*length, "length")?;
            ok(*period, "period")
        }
        KernelSpec::RationalQuadratic { length, alpha } => {
            ok(*length, "length")?;
            ok(*alpha, "alpha")
        }
        KernelSpec::Rbf { length } => ok(*length, "length"),
        KernelSpec::Matern { length, .. } => ok(*length, "length"),
        KernelSpec::White { noise2 } => ok(*noise2, "noise2"),
        KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => {
            validate(a)?;
            validate(b)
        }
    }
}

/// Evaluate the kernel at scalar inputs `a`, `b`. White noise contributes
/// only when `same_index` is set: two observations that merely share a value
/// are still independent draws.
pub fn kernel_eval(spec: &KernelSpec, a: f64, b: f64, same_index: bool) -> Result<f64> {
    validate(spec)?;
    Ok(eval_unchecked(spec, (a - b).abs(), same_index))
}

fn eval_unchecked(spec: &KernelSpec, r: f64, same_index: bool) -> f64 {
    match spec {
        KernelSpec::Constant { amplitude2 } => *amplitude2,
        KernelSpec::Periodic { length, period } => {
            let s = (PI * r / period).sin();
            (-2.0 * s * s / (length * length)).exp()
        }
        KernelSpec::RationalQuadratic { length, alpha } => {
            let z = r * r / (2.0 * alpha * length * length);
            (-alpha * z.ln_1p()).exp()
        }
        KernelSpec::Rbf { length } => (-r * r / (2.0 * length * length)).exp(),
        KernelSpec::Matern { length, nu } => {
            let rl = r / length;
            match nu {
                MaternNu::Half => (-rl).exp(),
                MaternNu::ThreeHalves => {
                    let t = 3.0_f64.sqrt() * rl;
                    (1.0 + t) * (-t).exp()
                }
                MaternNu::FiveHalves => {
                    let t = 5.0_f64.sqrt() * rl;
                    (1.0 + t + t * t / 3.0) * (-t).exp()
                }
            }
        }
        KernelSpec::White { noise2 } => {
            if same_index {
                *noise2
            } else {
                0.0
            }
        }
        KernelSpec::Sum(a, b) => {
            eval_unchecked(a, r, same_index) + eval_unchecked(b, r, same_index)
        }
        KernelSpec::Product(a, b) => {
            eval_unchecked(a, r, same_index) * eval_unchecked(b, r, same_index)
        }
    }
}

/// Gram matrix over `xs` with white noise on the diagonal (same index).
pub fn gram(spec: &KernelSpec, xs: &[f64]) -> Result<Tensor> {
    validate(spec)?;
    let n = xs.len();
    let mut k = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = eval_unchecked(spec, (xs[i] - xs[j]).abs(), i == j);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    Ok(k)
}

// ---- hyperparameter flattening -------------------------------------------

/// What a flattened hyperparameter measures, for restart scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    Length,
    Period,
    Amplitude2,
    Noise2,
    Alpha,
}

fn flatten(spec: &KernelSpec, out: &mut Vec<(ParamKind, f64)>) {
    match spec {
        KernelSpec::Constant { amplitude2 } => out.push((ParamKind::Amplitude2, *amplitude2)),
        KernelSpec::Periodic { length, period } => {
            out.push((ParamKind::Length, *length));
            out.push((ParamKind::Period, *period));
        }
        KernelSpec::RationalQuadratic { length, alpha } => {
            out.push((ParamKind::Length, *length));
            out.push((ParamKind::Alpha, *alpha));
        }
        KernelSpec::Rbf { length } => out.push((ParamKind::Length, *length)),
        KernelSpec::Matern { length, .. } => out.push((ParamKind::Length, *length)),
        KernelSpec::White { noise2 } => out.push((ParamKind::Noise2, *noise2)),
        KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => {
            flatten(a, out);
            flatten(b, out);
        }
    }
}

fn rebuild(spec: &KernelSpec, it: &mut std::slice::Iter<'_, f64>) -> KernelSpec {
    let mut next = || *it.next().expect("hyperparameter count mismatch");
    match spec {
        KernelSpec::Constant { .. } => KernelSpec::Constant { amplitude2: next() },
        KernelSpec::Periodic { .. } => {
            KernelSpec::Periodic { length: next(), period: next() }
        }
        KernelSpec::RationalQuadratic { .. } => {
            KernelSpec::RationalQuadratic { length: next(), alpha: next() }
        }
        KernelSpec::Rbf { .. } => KernelSpec::Rbf { length: next() },
        KernelSpec::Matern { nu, .. } => KernelSpec::Matern { length: next(), nu: *nu },
        KernelSpec::White { .. } => KernelSpec::White { noise2: next() },
        KernelSpec::Sum(a, b) => {
            let ra = rebuild(a, it);
            let rb = rebuild(b, it);
            KernelSpec::sum(ra, rb)
        }
        KernelSpec::Product(a, b) => {
            let ra = rebuild(a, it);
            let rb = rebuild(b, it);
            KernelSpec::product(ra, rb)
        }
    }
}

fn contains_white(spec: &KernelSpec) -> bool {
    match spec {
        KernelSpec::White { .. } => true,
        KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => {
            contains_white(a) || contains_white(b)
        }
        _ => false,
    }
}

/// Split top-level additive white terms off the tree. White anywhere else
/// (inside a product) is not independent observation noise and is rejected.
fn split_noise(spec: &KernelSpec) -> Result<(Option<KernelSpec>, Option<f64>)> {
    match spec {
        KernelSpec::White { noise2 } => Ok((None, Some(*noise2))),
        KernelSpec::Sum(a, b) => {
            let (sa, na) = split_noise(a)?;
            let (sb, nb) = split_noise(b)?;
            let noise = match (na, nb) {
                (None, None) => None,
                (x, y) => Some(x.unwrap_or(0.0) + y.unwrap_or(0.0)),
            };
            let signal = match (sa, sb) {
                (Some(x), Some(y)) => Some(KernelSpec::sum(x, y)),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            };
            Ok((signal, noise))
        }
        other => {
            if contains_white(other) {
                return Err(Error::invalid(
                    "white noise must enter the kernel as a top-level additive term",
                ));
            }
            Ok((Some(other.clone()), None))
        }
    }
}

// ---- collapsed training data ----------------------------------------------

struct Collapsed {
    x: Vec<f64>,
    ybar: Vec<f64>,
    mults: Vec<f64>,
    /// sum over groups of (m_g - 1) / 2
    c1: f64,
    /// sum over groups of within-group sum of squared deviations
    c2: f64,
    /// sum over groups of log(m_g) / 2
    c3: f64,
    has_dups: bool,
}

/// Group exactly equal inputs and pool their targets. The Gaussian with the
/// full duplicated Gram factors into the collapsed Gaussian over group means
/// (noise scaled by 1/m_g) times a per-group residual term captured by the
/// c1/c2/c3 constants.
fn collapse(x: &[f64], y: &[f64]) -> Collapsed {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for (&xi, &yi) in x.iter().zip(y) {
        let slot = *index.entry(xi.to_bits()).or_insert_with(|| {
            groups.push((xi, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(yi);
    }
    let mut out = Collapsed {
        x: Vec::with_capacity(groups.len()),
        ybar: Vec::with_capacity(groups.len()),
        mults: Vec::with_capacity(groups.len()),
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        has_dups: false,
    };
    for (xi, ys) in groups {
        let m = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / m;
        let ss: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum();
        out.x.push(xi);
        out.ybar.push(mean);
        out.mults.push(m);
        out.c1 += (m - 1.0) / 2.0;
        out.c2 += ss;
        out.c3 += m.ln() / 2.0;
        if ys.len() > 1 {
            out.has_dups = true;
        }
    }
    out
}

// ---- log marginal likelihood on the tape -----------------------------------

struct LmlProblem<'a> {
    signal: Option<&'a KernelSpec>,
    n_signal: usize,
    has_noise: bool,
    dabs: Tensor,
    dsq: Tensor,
    /// diag(1 / m_g); the white term multiplies this.
    mask: Tensor,
    g: usize,
    ybar: &'a [f64],
    c1: f64,
    c2: f64,
    c3: f64,
}

impl<'a> LmlProblem<'a> {
    fn new(col: &'a Collapsed, signal: Option<&'a KernelSpec>, has_noise: bool) -> Self {
        let g = col.x.len();
        let mut dabs = Tensor::zeros(g, g);
        let mut dsq = Tensor::zeros(g, g);
        let mut mask = Tensor::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                let r = (col.x[i] - col.x[j]).abs();
                dabs.set(i, j, r);
                dsq.set(i, j, r * r);
            }
            mask.set(i, i, 1.0 / col.mults[i]);
        }
        let n_signal = signal.map_or(0, |s| {
            let mut ps = Vec::new();
            flatten(s, &mut ps);
            ps.len()
        });
        LmlProblem {
            signal,
            n_signal,
            has_noise,
            dabs,
            dsq,
            mask,
            g,
            ybar: &col.ybar,
            c1: col.c1,
            c2: col.c2,
            c3: col.c3,
        }
    }

    /// Negative log marginal likelihood of the full (uncollapsed) data as a
    /// function of the log-hyperparameter vector.
    fn neg_lml(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let mut idx = 0usize;
        let kf = match self.signal {
            Some(s) => {
                let dabs = tape.constant(&self.dabs);
                let dsq = tape.constant(&self.dsq);
                Some(gram_tape(s, tape, u, &mut idx, dabs, dsq, self.g)?)
            }
            None => None,
        };
        let k = if self.has_noise {
            let un = tape.slice(u, idx, 1)?;
            let s2 = tape.exp(un)?;
            let mask = tape.constant(&self.mask);
            let wn = tape.mul(mask, s2)?;
            match kf {
                Some(kf) => tape.add(kf, wn)?,
                None => wn,
            }
        } else {
            kf.ok_or_else(|| Error::invalid("kernel has no terms"))?
        };
        let (energy, _jitter) = tape.gram_energy(k, self.ybar)?;
        let consts =
            (self.g as f64 / 2.0) * LN_2PI + self.c1 * LN_2PI + self.c3;
        let mut total = tape.add_scalar(energy, consts)?;
        if self.has_noise && (self.c1 != 0.0 || self.c2 != 0.0) {
            // c1 * ln(sigma^2) + c2 / (2 sigma^2), with ln(sigma^2) = u_noise
            let un = tape.slice(u, idx, 1)?;
            let t1 = tape.scale(un, self.c1)?;
            let nun = tape.neg(un)?;
            let e = tape.exp(nun)?;
            let t2 = tape.scale(e, self.c2 / 2.0)?;
            let extra = tape.add(t1, t2)?;
            total = tape.add(total, extra)?;
        }
        Ok(total)
    }
}

/// Assemble the signal Gram on the tape, consuming log-params from `u` in
/// the same depth-first order as `flatten`.
fn gram_tape(
    spec: &KernelSpec,
    tape: &mut Tape,
    u: Var,
    idx: &mut usize,
    dabs: Var,
    dsq: Var,
    g: usize,
) -> Result<Var> {
    fn param(tape: &mut Tape, u: Var, idx: &mut usize) -> Result<Var> {
        let s = tape.slice(u, *idx, 1)?;
        *idx += 1;
        tape.exp(s)
    }
    match spec {
        KernelSpec::Constant { .. } => {
            let a = param(tape, u, idx)?;
            let ones = tape.ones_const(g, g);
            tape.mul(ones, a)
        }
        KernelSpec::Periodic { .. } => {
            let l = param(tape, u, idx)?;
            let p = param(tape, u, idx)?;
            let scaled = tape.scale(dabs, PI)?;
            let arg = tape.div(scaled, p)?;
            let s = tape.sin(arg)?;
            let s2 = tape.square(s)?;
            let num = tape.scale(s2, 2.0)?;
            let l2 = tape.square(l)?;
            let z = tape.div(num, l2)?;
            let nz = tape.neg(z)?;
            tape.exp(nz)
        }
        KernelSpec::RationalQuadratic { .. } => {
            let l = param(tape, u, idx)?;
            let alpha = param(tape, u, idx)?;
            let l2 = tape.square(l)?;
            let al2 = tape.mul(alpha, l2)?;
            let denom = tape.scale(al2, 2.0)?;
            let z = tape.div(dsq, denom)?;
            let zp1 = tape.add_scalar(z, 1.0)?;
            let lt = tape.ln(zp1)?;
            let na = tape.neg(alpha)?;
            let e = tape.mul(lt, na)?;
            tape.exp(e)
        }
        KernelSpec::Rbf { .. } => {
            let l = param(tape, u, idx)?;
            let l2 = tape.square(l)?;
            let denom = tape.scale(l2, 2.0)?;
            let z = tape.div(dsq, denom)?;
            let nz = tape.neg(z)?;
            tape.exp(nz)
        }
        KernelSpec::Matern { nu, .. } => {
            let l = param(tape, u, idx)?;
            let rl = tape.div(dabs, l)?;
            match nu {
                MaternNu::Half => {
                    let n = tape.neg(rl)?;
                    tape.exp(n)
                }
                MaternNu::ThreeHalves => {
                    let t = tape.scale(rl, 3.0_f64.sqrt())?;
                    let poly = tape.add_scalar(t, 1.0)?;
                    let nt = tape.neg(t)?;
                    let e = tape.exp(nt)?;
                    tape.mul(poly, e)
                }
                MaternNu::FiveHalves => {
                    let t = tape.scale(rl, 5.0_f64.sqrt())?;
                    let t2 = tape.square(t)?;
                    let t2_3 = tape.scale(t2, 1.0 / 3.0)?;
                    let lin = tape.add(t, t2_3)?;
                    let poly = tape.add_scalar(lin, 1.0)?;
                    let nt = tape.neg(t)?;
                    let e = tape.exp(nt)?;
                    tape.mul(poly, e)
                }
            }
        }
        KernelSpec::White { .. } => {
            Err(Error::invalid("white noise inside the signal kernel"))
        }
        KernelSpec::Sum(a, b) => {
            let ka = gram_tape(a, tape, u, idx, dabs, dsq, g)?;
            let kb = gram_tape(b, tape, u, idx, dabs, dsq, g)?;
            tape.add(ka, kb)
        }
        KernelSpec::Product(a, b) => {
            let ka = gram_tape(a, tape, u, idx, dabs, dsq, g)?;
            let kb = gram_tape(b, tape, u, idx, dabs, dsq, g)?;
            tape.mul(ka, kb)
        }
    }
}

/// Log marginal likelihood of `spec` on (x, y) at its own hyperparameters.
/// Replicated inputs are collapsed exactly, so this matches the dense
/// computation over the full duplicated Gram.
pub fn log_marginal_likelihood(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    validate(spec)?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "log_marginal_likelihood",
            expected: format!("{} targets", x.len()),
            got: format!("{}", y.len()),
        });
    }
    let (signal, noise) = split_noise(spec)?;
    let col = collapse(x, y);
    if col.has_dups && noise.is_none() {
        return Err(Error::invalid(
            "replicated inputs require an additive white-noise term",
        ));
    }
    let problem = LmlProblem::new(&col, signal.as_ref(), noise.is_some());
    let mut u = Vec::new();
    if let Some(s) = &signal {
        let mut ps = Vec::new();
        flatten(s, &mut ps);
        u.extend(ps.iter().map(|(_, v)| v.ln()));
    }
    if let Some(n2) = noise {
        u.push(n2.ln());
    }
    let mut tape = Tape::new();
    let uv = tape.input_col(&u);
    let neg = problem.neg_lml(&mut tape, uv)?;
    Ok(-tape.scalar_value(neg))
}

// ---- fitting ----------------------------------------------------------------

/// Settings for [`fit`].
#[derive(Clone, Copy, Debug)]
pub struct FitOpts {
    /// Random restarts in addition to the caller's initial spec. The first
    /// restart is a deterministic data-scale start, the rest are log-uniform
    /// draws over [1e-2, 1e2] times the data scale for each parameter kind.
    pub n_restarts: usize,
    pub iters: usize,
    pub lr: f64,
    /// Subtract the target mean before fitting and add it back in predict.
    pub center: bool,
}

impl Default for FitOpts {
    fn default() -> Self {
        FitOpts { n_restarts: 8, iters: 200, lr: 0.05, center: false }
    }
}

/// Fitted GP: collapsed training data plus a cached factorization of
/// K_signal + sigma^2 diag(1/m_g) + jitter I at the fitted hyperparameters.
#[derive(Clone, Debug)]
pub struct GprModel {
    x: Vec<f64>,
    ybar: Vec<f64>,
    mults: Vec<f64>,
    offset: f64,
    signal: Option<KernelSpec>,
    noise2: Option<f64>,
    chol: Tensor,
    weights: Vec<f64>,
    lml: f64,
    jitter: f64,
}

impl GprModel {
    /// Unique training inputs after replicate collapse.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Pooled per-input target means (centered targets plus offset).
    pub fn y_mean(&self) -> Vec<f64> {
        self.ybar.iter().map(|v| v + self.offset).collect()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The fitted kernel, white noise re-attached.
    pub fn kernel(&self) -> KernelSpec {
        match (&self.signal, self.noise2) {
            (Some(s), Some(n2)) => s.clone().with_noise(n2),
            (Some(s), None) => s.clone(),
            (None, Some(n2)) => KernelSpec::White { noise2: n2 },
            (None, None) => unreachable!("fit rejects empty kernels"),
        }
    }

    pub fn signal_kernel(&self) -> Option<&KernelSpec> {
        self.signal.as_ref()
    }

    pub fn noise2(&self) -> f64 {
        self.noise2.unwrap_or(0.0)
    }

    /// Log marginal likelihood of the training data at the fitted
    /// hyperparameters.
    pub fn lml(&self) -> f64 {
        self.lml
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at query points, white noise excluded.
    pub fn predict(&self, xq: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.x.len();
        let mut means = Vec::with_capacity(xq.len());
        let mut vars = Vec::with_capacity(xq.len());
        let mut kq = vec![0.0; g];
        for &q in xq {
            if !q.is_finite() {
                return Err(Error::invalid(format!("non-finite query point {q}")));
            }
            let mut prior = 0.0;
            if let Some(s) = &self.signal {
                for (i, &xi) in self.x.iter().enumerate() {
                    kq[i] = eval_unchecked(s, (q - xi).abs(), false);
                }
                prior = eval_unchecked(s, 0.0, false);
            } else {
                kq.fill(0.0);
            }
            let mean: f64 = kq.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
            let v = forward_sub(&self.chol, &kq);
            let explained: f64 = v.iter().map(|x| x * x).sum();
            means.push(mean + self.offset);
            vars.push((prior - explained).max(0.0));
        }
        Ok((means, vars))
    }
}

/// Maximum-marginal-likelihood fit of the kernel hyperparameters.
///
/// Candidates are the initial spec plus `n_restarts` restarts; every Adam
/// iterate of every candidate is scored, and the best (params, LML) pair
/// seen anywhere is returned. This guarantees the result's LML is at least
/// the initial spec's.
pub fn fit(
    x: &[f64],
    y: &[f64],
    spec: &KernelSpec,
    opts: &FitOpts,
    rng: &mut RngStream,
) -> Result<GprModel> {
    validate(spec)?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "gpr::fit",
            expected: format!("{} targets", x.len()),
            got: format!("{}", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("gpr::fit needs at least 2 observations"));
    }
    if opts.iters == 0 {
        return Err(Error::invalid("gpr::fit needs iters >= 1"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("gpr::fit inputs must be finite"));
    }

    let (signal, noise0) = split_noise(spec)?;
    let offset = if opts.center {
        y.iter().sum::<f64>() / y.len() as f64
    } else {
        0.0
    };
    let yc: Vec<f64> = y.iter().map(|v| v - offset).collect();
    let col = collapse(x, &yc);
    if col.has_dups && noise0.is_none() {
        return Err(Error::invalid(
            "replicated inputs require an additive white-noise term",
        ));
    }

    // Flattened log-parameter vector: signal params depth-first, noise last.
    let mut kinds: Vec<ParamKind> = Vec::new();
    let mut p0: Vec<f64> = Vec::new();
    if let Some(s) = &signal {
        let mut ps = Vec::new();
        flatten(s, &mut ps);
        for (k, v) in ps {
            kinds.push(k);
            p0.push(v);
        }
    }
    if let Some(n2) = noise0 {
        kinds.push(ParamKind::Noise2);
        p0.push(n2);
    }
    let u0: Vec<f64> = p0.iter().map(|v| v.ln()).collect();

    // Data scales for restart placement.
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let xrange = if xmax > xmin { xmax - xmin } else { 1.0 };
    let ymean = yc.iter().sum::<f64>() / yc.len() as f64;
    let yvar = {
        let v = yc.iter().map(|v| (v - ymean) * (v - ymean)).sum::<f64>() / yc.len() as f64;
        if v > 0.0 {
            v
        } else {
            1.0
        }
    };
    let scale_of = |k: ParamKind| match k {
        ParamKind::Length => xrange,
        ParamKind::Period => xrange,
        ParamKind::Amplitude2 => yvar,
        ParamKind::Noise2 => yvar,
        ParamKind::Alpha => 1.0,
    };
    let natural_of = |k: ParamKind| match k {
        ParamKind::Length => xrange / 10.0,
        ParamKind::Period => xrange / 4.0,
        ParamKind::Amplitude2 => yvar,
        ParamKind::Noise2 => yvar / 10.0,
        ParamKind::Alpha => 1.0,
    };

    let mut starts: Vec<Vec<f64>> = vec![u0];
    if opts.n_restarts > 0 {
        starts.push(kinds.iter().map(|&k| natural_of(k).ln()).collect());
        for _ in 1..opts.n_restarts {
            starts.push(
                kinds
                    .iter()
                    .map(|&k| (scale_of(k) * rng.log_uniform(1e-2, 1e2)).ln())
                    .collect(),
            );
        }
    }

    let problem = LmlProblem::new(&col, signal.as_ref(), noise0.is_some());
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last_err: Option<Error> = None;
    let adam = AdamOpts::new(opts.lr, opts.iters);
    for start in &starts {
        let run = adam_minimize(
            |tape, u| problem.neg_lml(tape, u),
            start,
            &adam,
            |_, u, loss| {
                if best.as_ref().is_none_or(|(_, b)| loss < *b) {
                    best = Some((u.to_vec(), loss));
                }
                ControlFlow::Continue(())
            },
        );
        if let Err(e) = run {
            // A candidate may wander into numerically hopeless territory;
            // keep whatever it scored before failing.
            last_err = Some(e);
        }
    }
    let (u_best, neg_best) = match best {
        Some(b) => b,
        None => {
            return Err(last_err
                .unwrap_or_else(|| Error::invalid("all restarts failed before scoring")))
        }
    };

    let params: Vec<f64> = u_best.iter().map(|u| u.exp()).collect();
    let n_signal = problem.n_signal;
    let fitted_signal = signal
        .as_ref()
        .map(|s| rebuild(s, &mut params[..n_signal].iter()));
    let fitted_noise2 = noise0.is_some().then(|| params[n_signal]);

    // Final dense factorization at the fitted hyperparameters.
    let g = col.x.len();
    let mut k = Tensor::zeros(g, g);
    if let Some(s) = &fitted_signal {
        for i in 0..g {
            for j in 0..=i {
                let v = eval_unchecked(s, (col.x[i] - col.x[j]).abs(), false);
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
    }
    if let Some(n2) = fitted_noise2 {
        for i in 0..g {
            let v = k.get(i, i) + n2 / col.mults[i];
            k.set(i, i, v);
        }
    }
    let (chol, jitter) = cholesky_jittered(&k)?;
    let weights = chol_solve(&chol, &col.ybar);

    Ok(GprModel {
        x: col.x,
        ybar: col.ybar,
        mults: col.mults,
        offset,
        signal: fitted_signal,
        noise2: fitted_noise2,
        chol,
        weights,
        lml: -neg_best,
        jitter,
    })
}

// ---- multivariate smoothing ---------------------------------------------

/// Per-dimension GP smoothing of pooled replicate series.
#[derive(Clone, Debug)]
pub struct SmoothedSeries {
    /// Posterior means at the training times, one column per dimension.
    pub means: Tensor,
    /// Posterior variances at the training times.
    pub variances: Tensor,
    pub models: Vec<GprModel>,
}

/// Fit one GP per state dimension on the pooled scatter of all replicates
/// and evaluate it back on the training grid. Targets are centered per
/// dimension regardless of `opts.center`.
pub fn smooth_series(
    times: &[f64],
    replicates: &[Tensor],
    spec: &KernelSpec,
    opts: &FitOpts,
    rng: &RngStream,
) -> Result<SmoothedSeries> {
    if replicates.is_empty() {
        return Err(Error::invalid("smooth_series needs at least one replicate"));
    }
    let n = times.len();
    let d = replicates[0].cols();
    for (ri, r) in replicates.iter().enumerate() {
        if r.rows() != n || r.cols() != d {
            return Err(Error::ShapeMismatch {
                context: "smooth_series",
                expected: format!("{n}x{d} replicate"),
                got: format!("{}x{} at index {ri}", r.rows(), r.cols()),
            });
        }
    }
    let pooled_x: Vec<f64> = replicates
        .iter()
        .flat_map(|_| times.iter().copied())
        .collect();
    let mut centered = *opts;
    centered.center = true;

    let mut means = Tensor::zeros(n, d);
    let mut variances = Tensor::zeros(n, d);
    let mut models = Vec::with_capacity(d);
    for dim in 0..d {
        let pooled_y: Vec<f64> = replicates
            .iter()
            .flat_map(|r| (0..n).map(|i| r.get(i, dim)).collect::<Vec<f64>>())
            .collect();
        let mut dim_rng = rng.split(dim as u64);
        let model = fit(&pooled_x, &pooled_y, spec, &centered, &mut dim_rng)?;
        let (m, v) = model.predict(times)?;
        for i in 0..n {
            means.set(i, dim, m[i]);
            variances.set(i, dim, v[i]);
        }
        models.push(model);
    }
    Ok(SmoothedSeries { means, variances, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{chol_logdet, sym_eig_clipped, to_dmatrix};
    use crate::nd::value_and_grad;
    use crate::odeint::{integrate_substeps, OdeSystem};

    fn scaled_periodic_with_noise(c2: f64, l: f64, p: f64, n2: f64) -> KernelSpec {
        KernelSpec::scaled_periodic(c2, l, p).with_noise(n2)
    }

    #[test]
    fn periodic_at_zero_distance_gives_amplitude() {
        let k = KernelSpec::scaled_periodic(2.5, 0.7, 1.3);
        let v = kernel_eval(&k, 0.4, 0.4, false).unwrap();
        assert!((v - 2.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rational_quadratic_closed_form_point() {
        // d = sqrt(2 alpha) l with alpha = 1 halves the amplitude.
        let (c2, l, alpha) = (3.0, 0.8, 1.0);
        let k = KernelSpec::scaled_rational_quadratic(c2, l, alpha);
        let d = (2.0 * alpha).sqrt() * l;
        let v = kernel_eval(&k, 0.0, d, false).unwrap();
        assert!((v - c2 / 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn periodic_at_full_period_returns_amplitude() {
        let (c2, l) = (1.7, 0.5);
        let d = 0.9;
        let k = KernelSpec::scaled_periodic(c2, l, d);
        let v = kernel_eval(&k, 1.0, 1.0 + d, false).unwrap();
        assert!((v - c2).abs() < 1e-10, "{v}");
    }

    #[test]
    fn white_contributes_only_on_same_index() {
        let k = KernelSpec::White { noise2: 0.25 };
        assert_eq!(kernel_eval(&k, 1.0, 1.0, true).unwrap(), 0.25);
        assert_eq!(kernel_eval(&k, 1.0, 1.0, false).unwrap(), 0.0);
    }

    #[test]
    fn non_positive_hyperparameter_rejected() {
        let k = KernelSpec::Rbf { length: 0.0 };
        assert!(kernel_eval(&k, 0.0, 1.0, false).is_err());
        let k = KernelSpec::scaled_periodic(-1.0, 1.0, 1.0);
        assert!(validate(&k).is_err());
    }

    #[test]
    fn matern_profiles_match_closed_forms() {
        let r: f64 = 0.6;
        let l: f64 = 0.9;
        let half = kernel_eval(&KernelSpec::Matern { length: l, nu: MaternNu::Half }, 0.0, r, false)
            .unwrap();
        assert!((half - (-r / l).exp()).abs() < 1e-14);
        let t = 3.0_f64.sqrt() * r / l;
        let th = kernel_eval(
            &KernelSpec::Matern { length: l, nu: MaternNu::ThreeHalves },
            0.0,
            r,
            false,
        )
        .unwrap();
        assert!((th - (1.0 + t) * (-t).exp()).abs() < 1e-14);
        let t = 5.0_f64.sqrt() * r / l;
        let fh = kernel_eval(
            &KernelSpec::Matern { length: l, nu: MaternNu::FiveHalves },
            0.0,
            r,
            false,
        )
        .unwrap();
        assert!((fh - (1.0 + t + t * t / 3.0) * (-t).exp()).abs() < 1e-14);
    }

    #[test]
    fn gram_is_symmetric_and_near_psd() {
        let spec = KernelSpec::sum(
            scaled_periodic_with_noise(1.3, 0.6, 0.9, 0.05),
            KernelSpec::product(
                KernelSpec::Constant { amplitude2: 0.4 },
                KernelSpec::Matern { length: 0.8, nu: MaternNu::FiveHalves },
            ),
        );
        let mut rng = RngStream::new(11);
        let xs: Vec<f64> = (0..40).map(|_| rng.range(0.0, 5.0)).collect();
        let k = gram(&spec, &xs).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
        let (_, eigs, _) = sym_eig_clipped(&k).unwrap();
        let max_abs = eigs.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8 * max_abs, "min eig {min}, scale {max_abs}");
    }

    #[test]
    fn tape_gram_matches_plain_gram() {
        let spec = KernelSpec::sum(
            KernelSpec::scaled_rational_quadratic(1.2, 0.5, 0.8),
            KernelSpec::scaled_periodic(0.7, 1.1, 2.3),
        );
        let xs: Vec<f64> = (0..15).map(|i| 0.3 * i as f64).collect();
        let plain = gram(&spec, &xs).unwrap();

        let mut ps = Vec::new();
        flatten(&spec, &mut ps);
        let u: Vec<f64> = ps.iter().map(|(_, v)| v.ln()).collect();
        let g = xs.len();
        let mut dabs = Tensor::zeros(g, g);
        let mut dsq = Tensor::zeros(g, g);
        for i in 0..g {
            for j in 0..g {
                let r = (xs[i] - xs[j]).abs();
                dabs.set(i, j, r);
                dsq.set(i, j, r * r);
            }
        }
        let mut tape = Tape::new();
        let uv = tape.input_col(&u);
        let da = tape.constant(&dabs);
        let dq = tape.constant(&dsq);
        let mut idx = 0;
        let kv = gram_tape(&spec, &mut tape, uv, &mut idx, da, dq, g).unwrap();
        assert_eq!(idx, u.len());
        let kt = tape.to_tensor(kv);
        for i in 0..g {
            for j in 0..g {
                assert!(
                    (kt.get(i, j) - plain.get(i, j)).abs() < 1e-12,
                    "({i},{j}): {} vs {}",
                    kt.get(i, j),
                    plain.get(i, j)
                );
            }
        }
    }

    #[test]
    fn collapsed_lml_matches_dense_duplicated_gram() {
        // Duplicated inputs: the collapsed computation must equal the dense
        // LML over the full Gram with white noise on the diagonal.
        let x = [0.0, 0.0, 1.0, 1.0, 1.0, 2.5];
        let y = [1.0, 1.4, 2.0, 2.3, 1.9, 3.2];
        let spec = KernelSpec::scaled_rbf(1.5, 0.9).with_noise(0.3);

        let kfull = gram(&spec, &x).unwrap();
        let n = x.len();
        let (l, j) = cholesky_jittered(&kfull).unwrap();
        assert_eq!(j, 0.0);
        let alpha = chol_solve(&l, &y);
        let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let dense = -0.5 * quad - 0.5 * chol_logdet(&l) - (n as f64 / 2.0) * LN_2PI;

        let collapsed = log_marginal_likelihood(&x, &y, &spec).unwrap();
        assert!(
            (dense - collapsed).abs() < 1e-8,
            "dense {dense} vs collapsed {collapsed}"
        );
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..12).map(|i| 0.4 * i as f64).collect();
        let mut rng = RngStream::new(3);
        let y: Vec<f64> = x.iter().map(|&t| (1.3 * t).sin() + 0.1 * rng.normal()).collect();
        let spec = KernelSpec::sum(
            KernelSpec::scaled_rbf(1.0, 0.8),
            KernelSpec::scaled_rational_quadratic(0.5, 1.2, 1.5),
        )
        .with_noise(0.2);
        let (signal, noise) = split_noise(&spec).unwrap();
        let col = collapse(&x, &y);
        let problem = LmlProblem::new(&col, signal.as_ref(), noise.is_some());
        let mut ps = Vec::new();
        flatten(signal.as_ref().unwrap(), &mut ps);
        let mut u: Vec<f64> = ps.iter().map(|(_, v)| v.ln()).collect();
        u.push(noise.unwrap().ln());

        let (_, grad) = value_and_grad(|t, v| problem.neg_lml(t, v), &u).unwrap();
        let h = 1e-6;
        for i in 0..u.len() {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            let eval = |uu: &[f64]| {
                let mut tape = Tape::new();
                let v = tape.input_col(uu);
                let out = problem.neg_lml(&mut tape, v).unwrap();
                tape.scalar_value(out)
            };
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            let denom = fd.abs().max(1.0);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-5,
                "param {i}: ad {} fd {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn constant_targets_drive_noise_to_zero() {
        let x: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
        let y = vec![2.0; 30];
        let spec = KernelSpec::scaled_rbf(1.0, 0.5).with_noise(0.1);
        let mut rng = RngStream::new(7);
        let opts = FitOpts { n_restarts: 2, iters: 400, ..FitOpts::default() };
        let model = fit(&x, &y, &spec, &opts, &mut rng).unwrap();
        assert!(model.noise2() < 1e-6, "noise2 {}", model.noise2());
        let (means, _) = model.predict(&x).unwrap();
        for m in means {
            assert!((m - 2.0).abs() < 1e-6, "{m}");
        }
    }

    #[test]
    fn fit_recovers_known_period() {
        let n = 200;
        let mut rng = RngStream::new(41);
        let x: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&t| (2.0 * PI * t).sin() + 0.1 * rng.normal())
            .collect();
        let spec = scaled_periodic_with_noise(1.0, 1.0, 0.8, 0.05);
        let opts = FitOpts { n_restarts: 4, iters: 250, ..FitOpts::default() };
        let mut frng = RngStream::new(5);
        let model = fit(&x, &y, &spec, &opts, &mut frng).unwrap();
        let fitted = model.kernel();
        let period = find_period(&fitted).expect("fitted kernel keeps its periodic term");
        assert!(
            (period - 1.0).abs() < 0.1,
            "fitted period {period}"
        );
    }

    fn find_period(spec: &KernelSpec) -> Option<f64> {
        match spec {
            KernelSpec::Periodic { period, .. } => Some(*period),
            KernelSpec::Sum(a, b) | KernelSpec::Product(a, b) => {
                find_period(a).or_else(|| find_period(b))
            }
            _ => None,
        }
    }

    #[test]
    fn fit_lml_never_below_initial_spec() {
        let mut rng = RngStream::new(19);
        let x: Vec<f64> = (0..40).map(|i| 0.15 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| t.sin() + 0.2 * rng.normal()).collect();
        let spec = KernelSpec::scaled_rbf(0.7, 0.4).with_noise(0.3);
        let initial = log_marginal_likelihood(&x, &y, &spec).unwrap();
        let opts = FitOpts { n_restarts: 3, iters: 120, ..FitOpts::default() };
        let mut frng = RngStream::new(2);
        let model = fit(&x, &y, &spec, &opts, &mut frng).unwrap();
        assert!(
            model.lml() >= initial - 1e-9,
            "fitted {} < initial {initial}",
            model.lml()
        );
        // And the cached LML matches an independent evaluation of the
        // fitted kernel on the same data.
        let re = log_marginal_likelihood(&x, &y, &model.kernel()).unwrap();
        assert!((re - model.lml()).abs() < 1e-6, "{re} vs {}", model.lml());
    }

    #[test]
    fn noiseless_fit_interpolates_training_targets() {
        // Well-separated points and a moderate length keep the Gram
        // comfortably positive definite without jitter.
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| (0.7 * t).sin()).collect();
        let spec = KernelSpec::scaled_rbf(1.0, 0.6);
        let opts = FitOpts { n_restarts: 0, iters: 1, ..FitOpts::default() };
        let mut rng = RngStream::new(1);
        let model = fit(&x, &y, &spec, &opts, &mut rng).unwrap();
        assert_eq!(model.jitter(), 0.0);
        let (means, vars) = model.predict(&x).unwrap();
        for (m, t) in means.iter().zip(&y) {
            assert!((m - t).abs() < 1e-8, "{m} vs {t}");
        }
        for v in vars {
            assert!((0.0..=1e-10).contains(&v), "variance {v}");
        }
    }

    #[test]
    fn prediction_reverts_to_prior_far_from_data() {
        let x: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| t.cos()).collect();
        let c2 = 2.5;
        let spec = KernelSpec::scaled_rbf(c2, 0.5).with_noise(0.01);
        let opts = FitOpts { n_restarts: 0, iters: 1, ..FitOpts::default() };
        let mut rng = RngStream::new(1);
        let model = fit(&x, &y, &spec, &opts, &mut rng).unwrap();
        let (means, vars) = model.predict(&[500.0]).unwrap();
        assert!(means[0].abs() < 1e-8, "far mean {}", means[0]);
        assert!((vars[0] - c2).abs() < 1e-8, "far variance {}", vars[0]);
    }

    #[test]
    fn variance_non_negative_everywhere() {
        let mut rng = RngStream::new(23);
        let x: Vec<f64> = (0..50).map(|i| 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| (3.0 * t).sin() + 0.3 * rng.normal()).collect();
        let spec = KernelSpec::scaled_rbf(1.0, 0.3).with_noise(0.1);
        let opts = FitOpts { n_restarts: 2, iters: 100, ..FitOpts::default() };
        let mut frng = RngStream::new(9);
        let model = fit(&x, &y, &spec, &opts, &mut frng).unwrap();
        let q: Vec<f64> = (0..500).map(|i| -1.0 + 0.01 * i as f64).collect();
        let (_, vars) = model.predict(&q).unwrap();
        assert!(vars.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn coverage_on_noisy_cubic() {
        let n = 100;
        let mut rng = RngStream::new(77);
        let x: Vec<f64> = (0..n)
            .map(|i| -1.25 + 2.5 * i as f64 / (n - 1) as f64)
            .collect();
        let truth: Vec<f64> = x
            .iter()
            .map(|&t| 1.0 + t + 2.0 * t * t + 4.0 * t * t * t)
            .collect();
        let y: Vec<f64> = truth.iter().map(|&t| t + rng.normal()).collect();
        let spec = KernelSpec::scaled_rbf(4.0, 0.5).with_noise(1.0);
        let opts = FitOpts { n_restarts: 3, iters: 200, center: true, ..FitOpts::default() };
        let mut frng = RngStream::new(13);
        let model = fit(&x, &y, &spec, &opts, &mut frng).unwrap();
        let (means, vars) = model.predict(&x).unwrap();
        let covered = means
            .iter()
            .zip(&vars)
            .zip(&truth)
            .filter(|((m, v), t)| (*m - **t).abs() <= 3.0 * v.sqrt())
            .count();
        assert!(
            covered as f64 >= 0.95 * n as f64,
            "covered {covered}/{n}"
        );
    }

    #[test]
    fn pooled_replicate_smoothing_beats_half_noise_sd() {
        // Two-species predator-prey trajectory, ten replicates at noise
        // sd 2; the smoother should land well under half the noise sd.
        let sys = OdeSystem::new(2, |_, y, dy| {
            dy[0] = 1.5 * y[0] - y[0] * y[1];
            dy[1] = -3.0 * y[1] + y[0] * y[1];
        });
        let n = 100;
        let times: Vec<f64> = (0..n).map(|i| 10.0 * i as f64 / (n - 1) as f64).collect();
        let truth = integrate_substeps(&sys, &[1.0, 1.0], 0.0, &times, 40).unwrap();
        let mut noise_rng = RngStream::new(303);
        let replicates: Vec<Tensor> = (0..10)
            .map(|_| {
                let mut r = Tensor::zeros(n, 2);
                for i in 0..n {
                    for dim in 0..2 {
                        r.set(i, dim, truth.get(i, dim) + 2.0 * noise_rng.normal());
                    }
                }
                r
            })
            .collect();
        let spec = scaled_periodic_with_noise(1.0, 1.0, 4.0, 1.0);
        let opts = FitOpts { n_restarts: 3, iters: 150, ..FitOpts::default() };
        let rng = RngStream::new(55);
        let smoothed = smooth_series(&times, &replicates, &spec, &opts, &rng).unwrap();
        let mut sse = 0.0;
        for i in 0..n {
            for dim in 0..2 {
                let d = smoothed.means.get(i, dim) - truth.get(i, dim);
                sse += d * d;
            }
        }
        let rmse = (sse / (2.0 * n as f64)).sqrt();
        assert!(rmse < 1.0, "smoothing rmse {rmse}");
    }

    #[test]
    fn white_inside_product_rejected() {
        let spec = KernelSpec::product(
            KernelSpec::Constant { amplitude2: 1.0 },
            KernelSpec::White { noise2: 0.1 },
        );
        let err = fit(&[0.0, 1.0], &[0.0, 1.0], &spec, &FitOpts::default(), &mut RngStream::new(1));
        assert!(matches!(err, Err(Error::Invalid(_))));
    }

    #[test]
    fn duplicates_without_noise_rejected() {
        let spec = KernelSpec::scaled_rbf(1.0, 1.0);
        let err = fit(
            &[0.0, 0.0, 1.0],
            &[0.1, 0.2, 0.3],
            &spec,
            &FitOpts::default(),
            &mut RngStream::new(1),
        );
        assert!(matches!(err, Err(Error::Invalid(_))));
    }

    #[test]
    fn smoothing_is_deterministic_for_a_given_stream() {
        let times: Vec<f64> = (0..20).map(|i| 0.25 * i as f64).collect();
        let mut rng = RngStream::new(9);
        let mut rep = Tensor::zeros(20, 1);
        for i in 0..20 {
            rep.set(i, 0, (0.8 * times[i]).sin() + 0.1 * rng.normal());
        }
        let spec = KernelSpec::scaled_rbf(1.0, 1.0).with_noise(0.05);
        let opts = FitOpts { n_restarts: 2, iters: 60, ..FitOpts::default() };
        let a = smooth_series(&times, &[rep.clone()], &spec, &opts, &RngStream::new(4)).unwrap();
        let b = smooth_series(&times, &[rep], &spec, &opts, &RngStream::new(4)).unwrap();
        assert_eq!(a.means.data(), b.means.data());
        assert_eq!(a.variances.data(), b.variances.data());
    }

    #[test]
    fn gram_energy_quadratic_term_is_consistent() {
        // predict() and the cached weights use the same factorization: the
        // posterior mean at training inputs equals K_signal * weights.
        let x: Vec<f64> = (0..12).map(|i| 0.3 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| (1.1 * t).sin()).collect();
        let spec = KernelSpec::scaled_rbf(1.0, 0.7).with_noise(0.05);
        let opts = FitOpts { n_restarts: 1, iters: 50, ..FitOpts::default() };
        let mut rng = RngStream::new(31);
        let model = fit(&x, &y, &spec, &opts, &mut rng).unwrap();
        let (means, _) = model.predict(model.x()).unwrap();
        let ksig = gram(model.signal_kernel().unwrap(), model.x()).unwrap();
        let km = to_dmatrix(&ksig) * nalgebra::DVector::from_vec(model.weights.clone());
        for (i, m) in means.iter().enumerate() {
            assert!((m - km[i]).abs() < 1e-10);
        }
    }
}
