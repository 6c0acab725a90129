//! Fixed-path Hamiltonian Monte Carlo with unit mass.

use crate::error::{Error, Result};
use crate::nd::{RngStream, Tensor};

use super::{LogDensity, SampleMethod, SampleSet, Warning};

#[derive(Clone, Copy, Debug)]
pub struct HmcOpts {
    pub epsilon: f64,
    pub l_steps: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
}

/// Run `l` leapfrog steps of size `eps` under unit mass, updating the state
/// in place. `logp`/`grad` must hold the density and gradient at `theta` on
/// entry and do so for the final point on exit.
pub fn leapfrog<D: LogDensity + ?Sized>(
    target: &D,
    theta: &mut [f64],
    p: &mut [f64],
    logp: &mut f64,
    grad: &mut Vec<f64>,
    eps: f64,
    l: usize,
) -> Result<()> {
    for _ in 0..l {
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
        for (ti, pi) in theta.iter_mut().zip(p.iter()) {
            *ti += eps * pi;
        }
        let (lp, g) = target.logp_and_grad(theta)?;
        *logp = lp;
        *grad = g;
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
    }
    Ok(())
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Metropolis-adjusted HMC with a fixed step size and path length. Warmup
/// iterations only burn in the chain; nothing is adapted. A proposal whose
/// density evaluation fails counts as a divergence and is rejected.
pub fn hmc_sample<D: LogDensity>(
    target: &D,
    theta0: &[f64],
    opts: &HmcOpts,
    rng: &mut RngStream,
) -> Result<SampleSet> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {}", opts.epsilon)));
    }
    if opts.l_steps == 0 {
        return Err(Error::invalid("path length must be at least 1 step"));
    }
    if opts.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let dim = target.dim();
    if theta0.len() != dim {
        return Err(Error::ShapeMismatch {
            context: "hmc start point",
            expected: format!("{dim} parameters"),
            got: format!("{}", theta0.len()),
        });
    }

    let mut theta = theta0.to_vec();
    let (mut logp, mut grad) = target.logp_and_grad(&theta)?;
    let mut draws = Tensor::zeros(opts.n_samples, dim);
    let mut log_joint = Vec::with_capacity(opts.n_samples);
    let mut accepted = 0usize;
    let mut divergences = 0usize;

    for it in 0..opts.n_warmup + opts.n_samples {
        let sampling = it >= opts.n_warmup;
        let p0 = rng.normal_vec(dim);
        let h0 = -logp + kinetic(&p0);

        let mut th_new = theta.clone();
        let mut p_new = p0;
        let mut logp_new = logp;
        let mut grad_new = grad.clone();
        let step =
            leapfrog(target, &mut th_new, &mut p_new, &mut logp_new, &mut grad_new, opts.epsilon, opts.l_steps);

        let accept = match step {
            Ok(()) => {
                let h1 = -logp_new + kinetic(&p_new);
                let log_ratio = h0 - h1;
                log_ratio.is_finite() && (log_ratio >= 0.0 || rng.uniform() < log_ratio.exp())
            }
            Err(_) => {
                if sampling {
                    divergences += 1;
                }
                false
            }
        };
        if accept {
            theta = th_new;
            logp = logp_new;
            grad = grad_new;
            if sampling {
                accepted += 1;
            }
        }
        if sampling {
            draws.row_mut(it - opts.n_warmup).copy_from_slice(&theta);
            log_joint.push(logp);
        }
    }

    let acceptance_rate = accepted as f64 / opts.n_samples as f64;
    let mut warnings = Vec::new();
    if acceptance_rate < 0.01 {
        warnings.push(Warning::LowAcceptance { rate: acceptance_rate });
    }
    Ok(SampleSet {
        method: SampleMethod::Hmc,
        draws,
        log_joint,
        acceptance_rate,
        weights: None,
        adapted_step: None,
        divergences,
        depth_saturations: 0,
        warnings,
    })
}
