//! Stochastic variational inference with a full-covariance Gaussian family,
//! reparameterized gradients, and a closed-form KL term against the
//! isotropic Gaussian prior.

use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::nd::{RngStream, Tensor};
use crate::opt::{adam_minimize_with, AdamOpts};

use super::{CovarianceSource, GaussianPosterior, Likelihood, LogJointSpec, Warning};

/// Gaussian q(theta) = N(mean, scale scale^T), scale lower triangular with a
/// strictly positive diagonal.
#[derive(Clone, Debug)]
pub struct VariationalFamily {
    mean: Vec<f64>,
    scale: Tensor,
}

impl VariationalFamily {
    pub fn new(mean: Vec<f64>, scale: Tensor) -> Result<Self> {
        let p = mean.len();
        if scale.rows() != p || scale.cols() != p {
            return Err(Error::ShapeMismatch {
                context: "variational scale",
                expected: format!("{p}x{p}"),
                got: format!("{}x{}", scale.rows(), scale.cols()),
            });
        }
        for i in 0..p {
            for j in i + 1..p {
                if scale.get(i, j) != 0.0 {
                    return Err(Error::invalid("variational scale must be lower triangular"));
                }
            }
            if !(scale.get(i, i) > 0.0) || !scale.get(i, i).is_finite() {
                return Err(Error::invalid(format!(
                    "variational scale diagonal entry {i} must be positive and finite"
                )));
            }
        }
        Ok(VariationalFamily { mean, scale })
    }

    /// N(mean, sd^2 I).
    pub fn isotropic(mean: Vec<f64>, sd: f64) -> Result<Self> {
        let p = mean.len();
        let mut scale = Tensor::zeros(p, p);
        for i in 0..p {
            scale.set(i, i, sd);
        }
        Self::new(mean, scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &Tensor {
        &self.scale
    }

    /// Marginal standard deviation of parameter i: row norm of the factor.
    pub fn sd(&self, i: usize) -> f64 {
        self.scale.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn covariance(&self) -> Tensor {
        let p = self.dim();
        let mut cov = Tensor::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let mut acc = 0.0;
                for k in 0..=b.min(a) {
                    acc += self.scale.get(a, k) * self.scale.get(b, k);
                }
                cov.set(a, b, acc);
                cov.set(b, a, acc);
            }
        }
        cov
    }

    /// theta = mean + scale z for a given standard normal vector.
    pub fn shift(&self, z: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut out = self.mean.clone();
        for i in 0..p {
            let row = self.scale.row(i);
            let mut acc = 0.0;
            for j in 0..=i {
                acc += row[j] * z[j];
            }
            out[i] += acc;
        }
        out
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let z = rng.normal_vec(self.dim());
        self.shift(&z)
    }

    pub fn into_posterior(self) -> Result<GaussianPosterior> {
        let cov = self.covariance();
        GaussianPosterior::new(self.mean, cov, CovarianceSource::Variational)
    }

    /// KL(q || N(0, alpha^2 I)) in closed form.
    pub fn kl_to_prior(&self, alpha: f64) -> f64 {
        let p = self.dim();
        let alpha2 = alpha * alpha;
        let mut sq = 0.0;
        let mut logdet_half = 0.0;
        for i in 0..p {
            sq += self.mean[i] * self.mean[i];
            for j in 0..=i {
                let v = self.scale.get(i, j);
                sq += v * v;
            }
            logdet_half += self.scale.get(i, i).ln();
        }
        0.5 * (sq / alpha2 - p as f64 + p as f64 * alpha2.ln()) - logdet_half
    }

    /// Flat optimization vector: mean, log-diagonal, strict lower rows.
    fn pack(&self) -> Vec<f64> {
        let p = self.dim();
        let mut v = Vec::with_capacity(packed_len(p));
        v.extend_from_slice(&self.mean);
        for i in 0..p {
            v.push(self.scale.get(i, i).ln());
        }
        for i in 1..p {
            for j in 0..i {
                v.push(self.scale.get(i, j));
            }
        }
        v
    }

    fn unpack(p: usize, v: &[f64]) -> Self {
        debug_assert_eq!(v.len(), packed_len(p));
        let mean = v[..p].to_vec();
        let mut scale = Tensor::zeros(p, p);
        for i in 0..p {
            scale.set(i, i, v[p + i].exp());
        }
        let mut k = 2 * p;
        for i in 1..p {
            for j in 0..i {
                scale.set(i, j, v[k]);
                k += 1;
            }
        }
        VariationalFamily { mean, scale }
    }
}

fn packed_len(p: usize) -> usize {
    2 * p + p * (p - 1) / 2
}

#[derive(Clone, Copy, Debug)]
pub struct ViOpts {
    pub iters: usize,
    pub lr: f64,
    /// Monte Carlo samples per gradient step.
    pub n_mc: usize,
    /// Samples for the final fixed-noise comparison of start vs result.
    pub eval_mc: usize,
}

impl Default for ViOpts {
    fn default() -> Self {
        ViOpts { iters: 2000, lr: 1e-2, n_mc: 8, eval_mc: 256 }
    }
}

#[derive(Clone, Debug)]
pub struct ViResult {
    pub family: VariationalFamily,
    /// Per-iteration ELBO estimates (n_mc samples each).
    pub elbo_trace: Vec<f64>,
    /// High-sample ELBO of the returned family.
    pub elbo: f64,
    /// Iteration whose ELBO went non-finite, when optimization aborted.
    pub diverged_at: Option<usize>,
    pub warnings: Vec<Warning>,
}

/// Maximize the ELBO with reparameterized likelihood gradients and the
/// analytic prior KL. A non-finite ELBO stops optimization, keeping the
/// trace and the last finite iterate. The returned family is whichever of
/// {initial, final iterate} scores better under a shared-noise high-sample
/// ELBO estimate, so the result never falls below the starting point.
pub fn vi_fit<L: Likelihood>(
    spec: &LogJointSpec<L>,
    init: &VariationalFamily,
    opts: &ViOpts,
    rng: &mut RngStream,
) -> Result<ViResult> {
    let p = spec.n_params();
    if init.dim() != p {
        return Err(Error::ShapeMismatch {
            context: "vi_fit start family",
            expected: format!("{p} parameters"),
            got: format!("{}", init.dim()),
        });
    }
    if opts.n_mc == 0 || opts.eval_mc == 0 {
        return Err(Error::invalid("Monte Carlo sample counts must be at least 1"));
    }
    let alpha = spec.alpha;
    let alpha2 = alpha * alpha;

    let theta0 = init.pack();
    let mut trace: Vec<f64> = Vec::with_capacity(opts.iters);
    let mut last_packed = theta0.clone();

    let adam = AdamOpts::new(opts.lr, opts.iters);
    let mc_rng = std::cell::RefCell::new(rng.split_named("vi-mc"));
    let eval = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let fam = VariationalFamily::unpack(p, v);
        let s = opts.n_mc as f64;
        let mut sum_ll = 0.0;
        let mut gbar = vec![0.0; p];
        // strict lower + diagonal accumulator for sum over samples of g z^T
        let mut gz = Tensor::zeros(p, p);
        {
            let mut r = mc_rng.borrow_mut();
            for _ in 0..opts.n_mc {
                let z = r.normal_vec(p);
                let theta = fam.shift(&z);
                let (ll, g) = spec.log_likelihood_and_grad(&theta)?;
                sum_ll += ll;
                for i in 0..p {
                    gbar[i] += g[i];
                    for j in 0..=i {
                        gz.set(i, j, gz.get(i, j) + g[i] * z[j]);
                    }
                }
            }
        }
        let elbo = sum_ll / s - fam.kl_to_prior(alpha);

        let mut grad = vec![0.0; v.len()];
        for i in 0..p {
            grad[i] = -gbar[i] / s + fam.mean[i] / alpha2;
        }
        for i in 0..p {
            let lam = fam.scale.get(i, i);
            let d_scale = -gz.get(i, i) / s + lam / alpha2 - 1.0 / lam;
            grad[p + i] = d_scale * lam; // chain rule through the log diagonal
        }
        let mut k = 2 * p;
        for i in 1..p {
            for j in 0..i {
                grad[k] = -gz.get(i, j) / s + fam.scale.get(i, j) / alpha2;
                k += 1;
            }
        }
        Ok((-elbo, grad))
    };

    let run = adam_minimize_with(eval, &theta0, &adam, |_epoch, v, loss| {
        trace.push(-loss);
        last_packed.clear();
        last_packed.extend_from_slice(v);
        ControlFlow::Continue(())
    });

    let mut warnings = Vec::new();
    let diverged_at = match run {
        Ok(_) => None,
        Err(Error::Diverged { .. }) | Err(Error::NonFinite { .. }) => {
            let at = trace.len();
            warnings.push(Warning::NonFiniteElbo { iter: at });
            Some(at)
        }
        Err(e) => return Err(e),
    };

    // Shared-noise comparison: score both candidates on the same z draws so
    // the better ELBO wins deterministically.
    let final_fam = VariationalFamily::unpack(p, &last_packed);
    let zs: Vec<Vec<f64>> = (0..opts.eval_mc).map(|_| rng.normal_vec(p)).collect();
    let score = |fam: &VariationalFamily| -> f64 {
        let mut sum = 0.0;
        for z in &zs {
            let theta = fam.shift(z);
            match spec.log_likelihood_and_grad(&theta) {
                Ok((ll, _)) if ll.is_finite() => sum += ll,
                _ => return f64::NEG_INFINITY,
            }
        }
        sum / opts.eval_mc as f64 - fam.kl_to_prior(alpha)
    };
    let init_score = score(init);
    let final_score = score(&final_fam);
    if !init_score.is_finite() && !final_score.is_finite() {
        return Err(Error::invalid(
            "ELBO is not finite for either the initial or the final variational family",
        ));
    }
    let (family, elbo) = if final_score >= init_score {
        (final_fam, final_score)
    } else {
        (init.clone(), init_score)
    };
    Ok(ViResult { family, elbo_trace: trace, elbo, diverged_at, warnings })
}
