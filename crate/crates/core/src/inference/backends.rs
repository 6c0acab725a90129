//! Likelihood backends: the residual models inference runs against, from a
//! scalar location model up to batched trajectory matching.

use crate::benchmarks::HybridTapeRhs;
use crate::error::{Error, Result};
use crate::nd::{Tape, Tensor, Var};
use crate::odeint::{integrate_window_tape, TrajectoryBatchSet};
use crate::polynet::PolyNetArch;
use crate::symexpand::PolynomialForm;

use super::Likelihood;

/// Every observation is the same unknown scalar plus noise.
#[derive(Clone, Debug)]
pub struct GaussianMeanLikelihood {
    y: Vec<f64>,
}

impl GaussianMeanLikelihood {
    pub fn new(y: Vec<f64>) -> Self {
        GaussianMeanLikelihood { y }
    }
}

impl Likelihood for GaussianMeanLikelihood {
    fn n_params(&self) -> usize {
        1
    }

    fn n_residuals(&self) -> usize {
        self.y.len()
    }

    fn n_datums(&self) -> usize {
        self.y.len()
    }

    fn ssr(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let yv = tape.constant_slice(self.y.len(), 1, &self.y);
        let r = tape.sub(yv, theta)?;
        let sq = tape.square(r)?;
        tape.sum(sq)
    }

    fn datum_ssr(&self, tape: &mut Tape, theta: Var, i: usize) -> Result<Var> {
        let neg = tape.neg(theta)?;
        let r = tape.add_scalar(neg, self.y[i])?;
        tape.square(r)
    }
}

/// Observations y = X theta + noise with a fixed design matrix.
#[derive(Clone, Debug)]
pub struct LinearModelLikelihood {
    x: Tensor,
    y: Vec<f64>,
}

impl LinearModelLikelihood {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                context: "linear model data",
                expected: format!("{} responses", x.rows()),
                got: format!("{}", y.len()),
            });
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::invalid("design matrix must be non-empty"));
        }
        Ok(LinearModelLikelihood { x, y })
    }

    pub fn design(&self) -> &Tensor {
        &self.x
    }
}

impl Likelihood for LinearModelLikelihood {
    fn n_params(&self) -> usize {
        self.x.cols()
    }

    fn n_residuals(&self) -> usize {
        self.y.len()
    }

    fn n_datums(&self) -> usize {
        self.y.len()
    }

    fn ssr(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let xv = tape.constant(&self.x);
        let pred = tape.matmul(xv, theta)?;
        let yv = tape.constant_slice(self.y.len(), 1, &self.y);
        let r = tape.sub(yv, pred)?;
        let sq = tape.square(r)?;
        tape.sum(sq)
    }

    fn datum_ssr(&self, tape: &mut Tape, theta: Var, i: usize) -> Result<Var> {
        let xi = tape.constant_slice(1, self.x.cols(), self.x.row(i));
        let pred = tape.matmul(xi, theta)?;
        let neg = tape.neg(pred)?;
        let r = tape.add_scalar(neg, self.y[i])?;
        tape.square(r)
    }
}

/// Pointwise regression through a polynomial network: y_i = net(x_i) + noise,
/// no integration involved.
#[derive(Clone, Debug)]
pub struct StaticNetLikelihood {
    arch: PolyNetArch,
    /// Inputs in the network's batch layout, flat (n_inputs, n).
    x_by_dim: Vec<f64>,
    /// Targets in the same layout, flat (n_outputs, n).
    y_by_dim: Vec<f64>,
    n: usize,
}

impl StaticNetLikelihood {
    /// `x` is n x n_inputs, `y` is n x n_outputs, one row per point.
    pub fn new(arch: PolyNetArch, x: &Tensor, y: &Tensor) -> Result<Self> {
        let n = x.rows();
        if y.rows() != n {
            return Err(Error::ShapeMismatch {
                context: "static net data",
                expected: format!("{n} target rows"),
                got: format!("{}", y.rows()),
            });
        }
        if n == 0 {
            return Err(Error::invalid("static net data must be non-empty"));
        }
        if x.cols() != arch.n_inputs || y.cols() != arch.n_outputs {
            return Err(Error::ShapeMismatch {
                context: "static net data",
                expected: format!("{} input / {} output columns", arch.n_inputs, arch.n_outputs),
                got: format!("{} / {}", x.cols(), y.cols()),
            });
        }
        let mut x_by_dim = vec![0.0; arch.n_inputs * n];
        for i in 0..n {
            for k in 0..arch.n_inputs {
                x_by_dim[k * n + i] = x.get(i, k);
            }
        }
        let mut y_by_dim = vec![0.0; arch.n_outputs * n];
        for i in 0..n {
            for k in 0..arch.n_outputs {
                y_by_dim[k * n + i] = y.get(i, k);
            }
        }
        Ok(StaticNetLikelihood { arch, x_by_dim, y_by_dim, n })
    }

    pub fn arch(&self) -> &PolyNetArch {
        &self.arch
    }
}

impl Likelihood for StaticNetLikelihood {
    fn n_params(&self) -> usize {
        self.arch.count_params()
    }

    fn n_residuals(&self) -> usize {
        self.n * self.arch.n_outputs
    }

    fn n_datums(&self) -> usize {
        self.n
    }

    fn ssr(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let net = self.arch.bind(tape, theta)?;
        let xv = tape.constant_slice(self.arch.n_inputs, self.n, &self.x_by_dim);
        let pred = net.forward(tape, xv)?;
        let yv = tape.constant_slice(self.arch.n_outputs, self.n, &self.y_by_dim);
        let r = tape.sub(yv, pred)?;
        let sq = tape.square(r)?;
        tape.sum(sq)
    }

    fn datum_ssr(&self, tape: &mut Tape, theta: Var, i: usize) -> Result<Var> {
        let net = self.arch.bind(tape, theta)?;
        let (d_in, d_out, n) = (self.arch.n_inputs, self.arch.n_outputs, self.n);
        let xi: Vec<f64> = (0..d_in).map(|k| self.x_by_dim[k * n + i]).collect();
        let yi: Vec<f64> = (0..d_out).map(|k| self.y_by_dim[k * n + i]).collect();
        let xv = tape.constant_slice(d_in, 1, &xi);
        let pred = net.forward(tape, xv)?;
        let yv = tape.constant_slice(d_out, 1, &yi);
        let r = tape.sub(yv, pred)?;
        let sq = tape.square(r)?;
        tape.sum(sq)
    }
}

/// Trajectory matching over sliding windows: the network is the ODE right
/// hand side, every window is integrated from its initial state, and
/// residuals are taken at each later grid point.
///
/// One datum is one (window, step) pair; it contributes `dim` scalar
/// residuals. Column w of the batched integration performs the identical
/// float operations as integrating window w alone, so per-datum terms add up
/// to the full sum of squares to rounding.
#[derive(Clone, Debug)]
pub struct OdeBatchLikelihood<'a> {
    arch: PolyNetArch,
    batch: &'a TrajectoryBatchSet,
    substeps: usize,
    known: Option<&'a PolynomialForm>,
}

impl<'a> OdeBatchLikelihood<'a> {
    pub fn new(arch: PolyNetArch, batch: &'a TrajectoryBatchSet, substeps: usize) -> Result<Self> {
        if arch.n_inputs != batch.dim() || arch.n_outputs != batch.dim() {
            return Err(Error::ShapeMismatch {
                context: "ode batch likelihood",
                expected: format!("{0} -> {0} network", batch.dim()),
                got: format!("{} -> {}", arch.n_inputs, arch.n_outputs),
            });
        }
        if substeps == 0 {
            return Err(Error::invalid("substeps must be at least 1"));
        }
        Ok(OdeBatchLikelihood { arch, batch, substeps, known: None })
    }

    /// Same model with fixed known dynamics added to the network output, so
    /// the network only has to learn the remainder. The known part carries
    /// no parameters.
    pub fn with_known_form(
        arch: PolyNetArch,
        batch: &'a TrajectoryBatchSet,
        substeps: usize,
        known: &'a PolynomialForm,
    ) -> Result<Self> {
        if known.n_inputs() != batch.dim() || known.n_outputs() != batch.dim() {
            return Err(Error::ShapeMismatch {
                context: "ode batch likelihood known form",
                expected: format!("{0} -> {0} form", batch.dim()),
                got: format!("{} -> {}", known.n_inputs(), known.n_outputs()),
            });
        }
        let mut lik = OdeBatchLikelihood::new(arch, batch, substeps)?;
        lik.known = Some(known);
        Ok(lik)
    }

    pub fn arch(&self) -> &PolyNetArch {
        &self.arch
    }

    pub fn batch(&self) -> &TrajectoryBatchSet {
        self.batch
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn known_form(&self) -> Option<&PolynomialForm> {
        self.known
    }

    fn steps_per_window(&self) -> usize {
        self.batch.window_len() - 1
    }

    /// Integrate all windows (or one initial-state block) under the bound
    /// net plus the known form when present.
    fn run_windows(
        &self,
        tape: &mut Tape,
        theta: Var,
        y0: Var,
        n_steps: usize,
    ) -> Result<Vec<Var>> {
        let net = self.arch.bind(tape, theta)?;
        match self.known {
            Some(f) => {
                let rhs = HybridTapeRhs::new(f, net)?;
                integrate_window_tape(tape, &rhs, y0, n_steps, self.batch.dt(), self.substeps)
            }
            None => integrate_window_tape(tape, &net, y0, n_steps, self.batch.dt(), self.substeps),
        }
    }
}

impl Likelihood for OdeBatchLikelihood<'_> {
    fn n_params(&self) -> usize {
        self.arch.count_params()
    }

    fn n_residuals(&self) -> usize {
        self.batch.n_windows() * self.steps_per_window() * self.batch.dim()
    }

    fn n_datums(&self) -> usize {
        self.batch.n_windows() * self.steps_per_window()
    }

    fn ssr(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let (d, n) = (self.batch.dim(), self.batch.n_windows());
        let y0 = tape.constant_slice(d, n, &self.batch.initial_states_by_dim());
        let states = self.run_windows(tape, theta, y0, self.steps_per_window())?;
        let mut total: Option<Var> = None;
        for (s, &state) in states.iter().enumerate().skip(1) {
            let target = tape.constant_slice(d, n, &self.batch.targets_by_dim(s));
            let r = tape.sub(state, target)?;
            let sq = tape.square(r)?;
            let part = tape.sum(sq)?;
            total = Some(match total {
                Some(t) => tape.add(t, part)?,
                None => part,
            });
        }
        total.ok_or_else(|| Error::invalid("window has no target steps"))
    }

    fn datum_ssr(&self, tape: &mut Tape, theta: Var, i: usize) -> Result<Var> {
        let steps = self.steps_per_window();
        let (w, s) = (i / steps, 1 + i % steps);
        let d = self.batch.dim();
        let y0 = tape.constant_slice(d, 1, self.batch.initial_states().row(w));
        let states = self.run_windows(tape, theta, y0, s)?;
        let tgt: Vec<f64> = (0..d).map(|k| self.batch.targets()[w].get(s, k)).collect();
        let tv = tape.constant_slice(d, 1, &tgt);
        let r = tape.sub(states[s], tv)?;
        let sq = tape.square(r)?;
        tape.sum(sq)
    }
}
