//! Posterior inference over network parameters: MAP training, Laplace
//! approximation, HMC/NUTS sampling, variational inference, and the
//! closed-form / ABC baselines.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::matrix::{pinv, sym_eig, sym_eig_clipped};
use crate::nd::{hessian_fd, per_sample_grads, value_and_grad_in, RngStream, Tape, Tensor, Var};
use crate::opt::{adam_minimize_with, AdamOpts};

pub mod abc;
pub mod backends;
pub mod blr;
pub mod hmc;
pub mod nuts;
pub mod vi;

pub use abc::{abc_smc, AbcOpts, AbcPrior, BoxPrior};
pub use backends::{
    GaussianMeanLikelihood, LinearModelLikelihood, OdeBatchLikelihood, StaticNetLikelihood,
};
pub use blr::bayesian_linear_regression;
pub use hmc::{hmc_sample, leapfrog, HmcOpts};
pub use nuts::{nuts_sample, NutsOpts};
pub use vi::{vi_fit, VariationalFamily, ViOpts, ViResult};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

// ---- likelihood abstraction ------------------------------------------------

/// Gaussian iid residual model: the likelihood is fully described by squared
/// residuals between predictions and observations.
///
/// A datum is the unit the outer-product Fisher sums over; for trajectory
/// batches one datum is one (window, future step) pair and contributes `dim`
/// scalar residuals.
pub trait Likelihood: Sync {
    fn n_params(&self) -> usize;
    /// Total number of scalar residuals.
    fn n_residuals(&self) -> usize;
    /// Number of independent datums (per-datum gradient rows).
    fn n_datums(&self) -> usize;
    /// Sum of squared residuals over all data, built on the tape.
    fn ssr(&self, tape: &mut Tape, theta: Var) -> Result<Var>;
    /// Sum of squared residuals belonging to datum `i` only.
    fn datum_ssr(&self, tape: &mut Tape, theta: Var, i: usize) -> Result<Var>;

    /// Plain SSR value; backends may override with a tape-free path.
    fn ssr_value(&self, theta: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let t = tape.input_col(theta);
        let s = self.ssr(&mut tape, t)?;
        Ok(tape.scalar_value(s))
    }
}

/// Differentiable unnormalized log density, the interface the samplers and
/// optimizers consume.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn logp_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn logp(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.logp_and_grad(theta)?.0)
    }
}

thread_local! {
    static SCRATCH_TAPE: RefCell<Tape> = RefCell::new(Tape::new());
}

/// Run with the thread-local scratch tape (reused arena across calls).
fn with_scratch<T>(f: impl FnOnce(&mut Tape) -> T) -> T {
    SCRATCH_TAPE.with(|c| f(&mut c.borrow_mut()))
}

// ---- log-joint --------------------------------------------------------------

/// Gaussian likelihood with variance `beta2` plus an isotropic zero-mean
/// Gaussian prior with sd `alpha` on every parameter.
#[derive(Clone, Debug)]
pub struct LogJointSpec<L> {
    pub likelihood: L,
    pub alpha: f64,
    pub beta2: f64,
}

impl<L: Likelihood> LogJointSpec<L> {
    pub fn new(likelihood: L, alpha: f64, beta2: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("prior sd alpha must be positive, got {alpha}")));
        }
        if !(beta2 > 0.0 && beta2.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance beta2 must be positive, got {beta2}"
            )));
        }
        Ok(LogJointSpec { likelihood, alpha, beta2 })
    }

    pub fn with_beta2(self, beta2: f64) -> Result<Self> {
        Self::new(self.likelihood, self.alpha, beta2)
    }

    pub fn n_params(&self) -> usize {
        self.likelihood.n_params()
    }

    /// -ssr/(2 beta^2) - (N/2) log(2 pi beta^2), N counting scalar residuals.
    pub fn log_likelihood_var(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let ssr = self.likelihood.ssr(tape, theta)?;
        let scaled = tape.scale(ssr, -0.5 / self.beta2)?;
        let n = self.likelihood.n_residuals() as f64;
        tape.add_scalar(scaled, -(n / 2.0) * (LN_2PI + self.beta2.ln()))
    }

    /// -|theta|^2/(2 alpha^2) - (p/2) log(2 pi alpha^2).
    pub fn log_prior_var(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let sq = tape.square(theta)?;
        let s = tape.sum(sq)?;
        let scaled = tape.scale(s, -0.5 / (self.alpha * self.alpha))?;
        let p = self.likelihood.n_params() as f64;
        tape.add_scalar(scaled, -(p / 2.0) * (LN_2PI + 2.0 * self.alpha.ln()))
    }

    /// log_joint = log_likelihood + log_prior, by construction.
    pub fn log_joint_var(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let ll = self.log_likelihood_var(tape, theta)?;
        let lp = self.log_prior_var(tape, theta)?;
        tape.add(ll, lp)
    }

    pub fn log_joint_value(&self, theta: &[f64]) -> Result<f64> {
        with_scratch(|tape| {
            tape.clear();
            let t = tape.input_col(theta);
            let v = self.log_joint_var(tape, t)?;
            Ok(tape.scalar_value(v))
        })
    }

    pub fn log_likelihood_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        with_scratch(|tape| {
            value_and_grad_in(tape, |t, v| self.log_likelihood_var(t, v), theta)
        })
    }
}

impl<L: Likelihood> LogDensity for LogJointSpec<L> {
    fn dim(&self) -> usize {
        self.likelihood.n_params()
    }

    fn logp_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        with_scratch(|tape| value_and_grad_in(tape, |t, v| self.log_joint_var(t, v), theta))
    }
}

// ---- diagnostics -------------------------------------------------------------

/// Structured diagnostic attached to inference outputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    /// MH acceptance collapsed; draws are near-copies of the start point.
    LowAcceptance { rate: f64 },
    /// Fraction of NUTS iterations that hit the maximum tree depth.
    TreeDepthSaturation { fraction: f64 },
    /// An ABC round accepted nothing before its attempt budget ran out.
    ZeroAcceptanceRound { round: usize },
    /// An ABC round ran out of attempts part-way through its population.
    StalledRound { round: usize, accepted: usize },
    /// Covariance eigenvalues clipped to zero before sampling.
    CovarianceClipped { n_clipped: usize },
    /// Residuals were exactly zero; the posterior covariance is degenerate.
    DegenerateResiduals,
    /// Fisher information was rank deficient under the pseudo-inverse.
    RankDeficientFisher { rank: usize, dim: usize },
    /// Variational optimization hit a non-finite ELBO and stopped early.
    NonFiniteElbo { iter: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::LowAcceptance { rate } => {
                write!(f, "acceptance rate {rate:.4} is near zero; draws repeat the start point")
            }
            Warning::TreeDepthSaturation { fraction } => {
                write!(f, "{:.0}% of iterations hit the maximum tree depth", fraction * 100.0)
            }
            Warning::ZeroAcceptanceRound { round } => {
                write!(f, "round {round} accepted no particles; returning previous population")
            }
            Warning::StalledRound { round, accepted } => {
                write!(f, "round {round} stalled after {accepted} acceptances")
            }
            Warning::CovarianceClipped { n_clipped } => {
                write!(f, "{n_clipped} negative covariance eigenvalues clipped to zero")
            }
            Warning::DegenerateResiduals => {
                write!(f, "residuals are exactly zero; covariance collapsed to zero")
            }
            Warning::RankDeficientFisher { rank, dim } => {
                write!(f, "Fisher information has rank {rank} of {dim}")
            }
            Warning::NonFiniteElbo { iter } => {
                write!(f, "ELBO became non-finite at iteration {iter}")
            }
        }
    }
}

// ---- posterior containers ----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceSource {
    LaplacePinv,
    LaplaceDiag,
    Variational,
    /// Closed-form conjugate posterior.
    Exact,
}

impl CovarianceSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceSource::LaplacePinv => "laplace_pinv",
            CovarianceSource::LaplaceDiag => "laplace_diag",
            CovarianceSource::Variational => "variational",
            CovarianceSource::Exact => "exact",
        }
    }
}

/// Gaussian posterior over the flattened parameter vector.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    cov: Tensor,
    source: CovarianceSource,
    warnings: Vec<Warning>,
}

impl GaussianPosterior {
    /// Validates shape, symmetrizes, and checks the covariance is PSD up to
    /// -1e-8 times its spectral scale.
    pub fn new(mean: Vec<f64>, cov: Tensor, source: CovarianceSource) -> Result<Self> {
        let p = mean.len();
        if cov.rows() != p || cov.cols() != p {
            return Err(Error::ShapeMismatch {
                context: "GaussianPosterior",
                expected: format!("{p}x{p} covariance"),
                got: format!("{}x{}", cov.rows(), cov.cols()),
            });
        }
        let mut sym = cov.clone();
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (cov.get(i, j) + cov.get(j, i));
                sym.set(i, j, v);
                sym.set(j, i, v);
            }
        }
        let (_, eigs) = sym_eig(&sym)?;
        let scale = eigs.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 * scale.max(1e-300) {
            return Err(Error::Linalg(format!(
                "posterior covariance has eigenvalue {min:.3e} below the PSD tolerance"
            )));
        }
        Ok(GaussianPosterior { mean, cov: sym, source, warnings: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Tensor {
        &self.cov
    }

    pub fn source(&self) -> CovarianceSource {
        self.source
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn push_warning(&mut self, w: Warning) {
        self.warnings.push(w);
    }

    /// Marginal posterior sd of parameter i.
    pub fn sd(&self, i: usize) -> f64 {
        self.cov.get(i, i).max(0.0).sqrt()
    }

    /// Factorize for joint sampling; negative eigenvalues are clipped to
    /// zero and reported on the sampler.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        let (v, eigs, n_clipped) = sym_eig_clipped(&self.cov)?;
        let p = self.dim();
        let mut factor = Tensor::zeros(p, p);
        for c in 0..p {
            let s = eigs[c].sqrt();
            for r in 0..p {
                factor.set(r, c, v.get(r, c) * s);
            }
        }
        Ok(GaussianSampler { mean: self.mean.clone(), factor, n_clipped })
    }
}

/// Cached factor for drawing from a Gaussian posterior.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    factor: Tensor,
    pub n_clipped: usize,
}

impl GaussianSampler {
    pub fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        let p = self.mean.len();
        let z = rng.normal_vec(p);
        let mut out = self.mean.clone();
        for r in 0..p {
            let row = self.factor.row(r);
            let mut acc = 0.0;
            for c in 0..p {
                acc += row[c] * z[c];
            }
            out[r] += acc;
        }
        out
    }
}

// ---- sample containers ---------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMethod {
    Hmc,
    Nuts,
    Abc,
}

impl SampleMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleMethod::Hmc => "hmc",
            SampleMethod::Nuts => "nuts",
            SampleMethod::Abc => "abc",
        }
    }
}

/// Posterior draws plus sampler diagnostics.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub method: SampleMethod,
    /// n_samples x n_params.
    pub draws: Tensor,
    /// Per-draw log-joint (log prior density for ABC particles).
    pub log_joint: Vec<f64>,
    pub acceptance_rate: f64,
    /// ABC particle weights, normalized to sum 1.
    pub weights: Option<Vec<f64>>,
    /// Step size after adaptation, when the sampler adapts one.
    pub adapted_step: Option<f64>,
    pub divergences: usize,
    pub depth_saturations: usize,
    pub warnings: Vec<Warning>,
}

impl SampleSet {
    pub fn n_samples(&self) -> usize {
        self.draws.rows()
    }

    pub fn dim(&self) -> usize {
        self.draws.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws.rows() == 0 {
            return Err(Error::invalid("sample set is empty"));
        }
        if !self.draws.all_finite() {
            return Err(Error::invalid("sample set contains non-finite draws"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.draws.rows() {
                return Err(Error::invalid("one weight per draw required"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("weights sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    /// Weighted mean when weights are present, plain mean otherwise.
    pub fn mean(&self) -> Vec<f64> {
        let (n, p) = (self.draws.rows(), self.draws.cols());
        let mut out = vec![0.0; p];
        match &self.weights {
            Some(w) => {
                for i in 0..n {
                    let row = self.draws.row(i);
                    for j in 0..p {
                        out[j] += w[i] * row[j];
                    }
                }
            }
            None => {
                for i in 0..n {
                    let row = self.draws.row(i);
                    for j in 0..p {
                        out[j] += row[j];
                    }
                }
                for v in &mut out {
                    *v /= n as f64;
                }
            }
        }
        out
    }

    /// Weighted covariance of the draws.
    pub fn covariance(&self) -> Tensor {
        let (n, p) = (self.draws.rows(), self.draws.cols());
        let mean = self.mean();
        let mut cov = Tensor::zeros(p, p);
        let uniform = 1.0 / n as f64;
        let mut wsum_sq = 0.0;
        for i in 0..n {
            let w = self.weights.as_ref().map_or(uniform, |w| w[i]);
            wsum_sq += w * w;
            let row = self.draws.row(i);
            for a in 0..p {
                let da = row[a] - mean[a];
                for b in 0..=a {
                    let v = cov.get(a, b) + w * da * (row[b] - mean[b]);
                    cov.set(a, b, v);
                    cov.set(b, a, v);
                }
            }
        }
        // Unbiased normalization 1/(1 - sum w_i^2) for weighted samples;
        // reduces to n/(n-1) for uniform weights.
        let denom = 1.0 - wsum_sq;
        if denom > 0.0 {
            let f = 1.0 / denom;
            for a in 0..p {
                for b in 0..p {
                    cov.set(a, b, cov.get(a, b) * f);
                }
            }
        }
        cov
    }

    /// Draw `n` rows with replacement, respecting particle weights.
    pub fn resample(&self, n: usize, rng: &mut RngStream) -> Tensor {
        let rows = self.draws.rows();
        let p = self.draws.cols();
        let mut out = Tensor::zeros(n, p);
        match &self.weights {
            Some(w) => {
                let mut cdf = Vec::with_capacity(rows);
                let mut acc = 0.0;
                for &wi in w {
                    acc += wi;
                    cdf.push(acc);
                }
                for i in 0..n {
                    let u = rng.uniform() * acc;
                    let k = cdf.partition_point(|&c| c < u).min(rows - 1);
                    out.row_mut(i).copy_from_slice(self.draws.row(k));
                }
            }
            None => {
                for i in 0..n {
                    let k = rng.index(rows);
                    out.row_mut(i).copy_from_slice(self.draws.row(k));
                }
            }
        }
        out
    }
}

// ---- MAP training -----------------------------------------------------------

/// Optimizer settings for [`train_map`].
#[derive(Clone, Copy, Debug)]
pub struct TrainOpts {
    pub lr: f64,
    pub epochs: usize,
    /// Re-estimate the residual variance driving the prior penalty every k
    /// epochs; `None` keeps the initial estimate and measures once at the end.
    pub reestimate_every: Option<usize>,
    /// Stop when the relative loss change over `tol_window` epochs drops
    /// below `tol`.
    pub tol: f64,
    pub tol_window: usize,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts { lr: 1e-3, epochs: 3000, reestimate_every: None, tol: 1e-8, tol_window: 100 }
    }
}

/// MAP estimate plus the residual variance measured at it.
#[derive(Clone, Debug)]
pub struct MapResult {
    pub theta: Vec<f64>,
    pub beta2: f64,
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
}

/// Adam on the penalized mean squared residual
/// MSE(theta) + beta2/(N alpha^2) |theta|^2, the negative log-joint scaled
/// by 2 beta^2 / N with constants dropped. Returns the last evaluated
/// iterate and the residual variance beta2 = SSR/N measured there.
pub fn train_map<L: Likelihood>(
    spec: &LogJointSpec<L>,
    theta0: &[f64],
    opts: &TrainOpts,
    _rng: &mut RngStream,
) -> Result<MapResult> {
    let p = spec.likelihood.n_params();
    if theta0.len() != p {
        return Err(Error::ShapeMismatch {
            context: "train_map",
            expected: format!("{p} parameters"),
            got: format!("{}", theta0.len()),
        });
    }
    let n = spec.likelihood.n_residuals();
    if n == 0 {
        return Err(Error::invalid("train_map needs at least one residual"));
    }
    let nf = n as f64;
    let alpha2 = spec.alpha * spec.alpha;
    let beta2_cur = Cell::new(spec.beta2);

    let mut trace: Vec<f64> = Vec::with_capacity(opts.epochs);
    let mut last_theta = theta0.to_vec();
    let mut tape = Tape::new();
    let lik = &spec.likelihood;

    let adam = AdamOpts::new(opts.lr, opts.epochs);
    let build = |tape: &mut Tape, theta: Var| -> Result<Var> {
        let ssr = lik.ssr(tape, theta)?;
        let mse = tape.scale(ssr, 1.0 / nf)?;
        let sq = tape.square(theta)?;
        let s = tape.sum(sq)?;
        let pen = tape.scale(s, beta2_cur.get() / (nf * alpha2))?;
        tape.add(mse, pen)
    };
    let mut build = build;
    let eval = |theta: &[f64]| value_and_grad_in(&mut tape, &mut build, theta);

    adam_minimize_with(eval, theta0, &adam, |epoch, theta, loss| {
        trace.push(loss);
        last_theta.clear();
        last_theta.extend_from_slice(theta);
        if let Some(k) = opts.reestimate_every {
            if k > 0 && (epoch + 1) % k == 0 {
                if let Ok(ssr) = lik.ssr_value(theta) {
                    beta2_cur.set(ssr / nf);
                }
            }
        }
        if epoch >= opts.tol_window {
            let then = trace[epoch - opts.tol_window];
            let rel = (loss - then).abs() / then.abs().max(1e-12);
            if rel < opts.tol {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;

    let beta2 = lik.ssr_value(&last_theta)? / nf;
    let epochs_run = trace.len();
    Ok(MapResult { theta: last_theta, beta2, loss_trace: trace, epochs_run })
}

// ---- Fisher information -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherMethod {
    /// Outer product of per-datum log-joint gradients.
    Gradient,
    /// Negative Hessian of the log-joint, refused above `cap` parameters.
    Hessian { cap: usize },
}

pub const DEFAULT_HESSIAN_CAP: usize = 1000;

pub fn fisher_information<L: Likelihood>(
    spec: &LogJointSpec<L>,
    theta: &[f64],
    method: FisherMethod,
) -> Result<Tensor> {
    let p = spec.likelihood.n_params();
    if theta.len() != p {
        return Err(Error::ShapeMismatch {
            context: "fisher_information",
            expected: format!("{p} parameters"),
            got: format!("{}", theta.len()),
        });
    }
    match method {
        FisherMethod::Gradient => {
            let n = spec.likelihood.n_datums();
            if n == 0 {
                return Err(Error::invalid("no datums to build the Fisher information from"));
            }
            let idx: Vec<usize> = (0..n).collect();
            let lik = &spec.likelihood;
            let beta2 = spec.beta2;
            let alpha2 = spec.alpha * spec.alpha;
            // Per-datum log-joint: the datum's likelihood term plus an equal
            // 1/n share of the log-prior, so the rows sum to the full
            // log-joint gradient.
            let g = per_sample_grads(
                |tape, th, &i| {
                    let dssr = lik.datum_ssr(tape, th, i)?;
                    let ll = tape.scale(dssr, -0.5 / beta2)?;
                    let sq = tape.square(th)?;
                    let s = tape.sum(sq)?;
                    let pr = tape.scale(s, -0.5 / (alpha2 * n as f64))?;
                    tape.add(ll, pr)
                },
                theta,
                &idx,
            )?;
            g.transposed().matmul(&g)
        }
        FisherMethod::Hessian { cap } => {
            if p > cap {
                return Err(Error::HessianCap { n: p, cap });
            }
            let h = hessian_fd(|tape, th| spec.log_joint_var(tape, th), theta)?;
            let mut fisher = h;
            for v in fisher.data_mut() {
                *v = -*v;
            }
            Ok(fisher)
        }
    }
}

// ---- Laplace approximation ----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvertMethod {
    MoorePenrose,
    Diagonal,
}

pub const PINV_RCOND: f64 = 1e-10;

/// Gaussian posterior N(theta_star, Fisher^{-1}), the inverse taken either
/// as a Moore-Penrose pseudo-inverse or by inverting the diagonal alone.
pub fn laplace_posterior(
    theta_star: &[f64],
    fisher: &Tensor,
    invert: InvertMethod,
) -> Result<GaussianPosterior> {
    let p = theta_star.len();
    if fisher.rows() != p || fisher.cols() != p {
        return Err(Error::ShapeMismatch {
            context: "laplace_posterior",
            expected: format!("{p}x{p} Fisher information"),
            got: format!("{}x{}", fisher.rows(), fisher.cols()),
        });
    }
    if fisher.max_abs() == 0.0 {
        return Err(Error::invalid(
            "Fisher information is identically zero; the model carries no information",
        ));
    }
    match invert {
        InvertMethod::MoorePenrose => {
            let (cov, rank) = pinv(fisher, PINV_RCOND)?;
            let mut post =
                GaussianPosterior::new(theta_star.to_vec(), cov, CovarianceSource::LaplacePinv)?;
            if rank < p {
                post.push_warning(Warning::RankDeficientFisher { rank, dim: p });
            }
            Ok(post)
        }
        InvertMethod::Diagonal => {
            let mut cov = Tensor::zeros(p, p);
            for i in 0..p {
                let d = fisher.get(i, i);
                if d <= 0.0 {
                    return Err(Error::Linalg(format!(
                        "Fisher diagonal entry {i} is {d}; cannot invert the diagonal"
                    )));
                }
                cov.set(i, i, 1.0 / d);
            }
            GaussianPosterior::new(theta_star.to_vec(), cov, CovarianceSource::LaplaceDiag)
        }
    }
}
