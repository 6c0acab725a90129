//! Likelihood-free sequential Monte Carlo: populations of parameter
//! particles filtered through shrinking simulation-distance thresholds.

use crate::error::{Error, Result};
use crate::matrix::{chol_logdet, chol_solve, cholesky_jittered, sym_eig_clipped};
use crate::nd::{RngStream, Tensor};

use super::{SampleMethod, SampleSet, Warning};

/// Prior over the raw parameter vector, sampleable and evaluable.
pub trait AbcPrior: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut RngStream) -> Vec<f64>;
    /// Log density, negative infinity outside the support.
    fn log_density(&self, theta: &[f64]) -> f64;
}

/// Independent uniform prior on an axis-aligned box.
#[derive(Clone, Debug)]
pub struct BoxPrior {
    lo: Vec<f64>,
    hi: Vec<f64>,
    log_volume: f64,
}

impl BoxPrior {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box prior bounds must be non-empty and equal length"));
        }
        let mut log_volume = 0.0;
        for (l, h) in lo.iter().zip(&hi) {
            if !(h > l) || !l.is_finite() || !h.is_finite() {
                return Err(Error::invalid(format!("invalid box prior interval [{l}, {h}]")));
            }
            log_volume += (h - l).ln();
        }
        Ok(BoxPrior { lo, hi, log_volume })
    }
}

impl AbcPrior for BoxPrior {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| rng.range(l, h)).collect()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        for (v, (l, h)) in theta.iter().zip(self.lo.iter().zip(&self.hi)) {
            if v < l || v > h {
                return f64::NEG_INFINITY;
            }
        }
        -self.log_volume
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AbcOpts {
    pub n_particles: usize,
    pub n_rounds: usize,
    /// Distance quantile of the previous population that becomes the next
    /// acceptance threshold.
    pub quantile: f64,
    /// Proposal budget per round before giving up.
    pub max_attempts_per_round: usize,
}

impl Default for AbcOpts {
    fn default() -> Self {
        AbcOpts { n_particles: 500, n_rounds: 5, quantile: 0.5, max_attempts_per_round: 200_000 }
    }
}

/// Root mean squared difference over all trajectory entries; simulation
/// failures (blow-ups and the like) count as infinitely distant.
fn distance(sim: &Result<Tensor>, data: &Tensor) -> Result<f64> {
    let sim = match sim {
        Ok(t) => t,
        Err(_) => return Ok(f64::INFINITY),
    };
    if sim.rows() != data.rows() || sim.cols() != data.cols() {
        return Err(Error::ShapeMismatch {
            context: "abc simulator output",
            expected: format!("{}x{}", data.rows(), data.cols()),
            got: format!("{}x{}", sim.rows(), sim.cols()),
        });
    }
    let mut acc = 0.0;
    for (a, b) in sim.data().iter().zip(data.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok((acc / data.data().len() as f64).sqrt())
}

fn quantile_of(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

struct Population {
    particles: Tensor,
    weights: Vec<f64>,
    distances: Vec<f64>,
    acceptance_rate: f64,
}

/// Weighted covariance scaled by two, the classical SMC perturbation size,
/// factored for sampling (negative eigenvalues clipped).
fn perturbation(pop: &Population) -> Result<(Tensor, Tensor)> {
    let (n, p) = (pop.particles.rows(), pop.particles.cols());
    let mut mean = vec![0.0; p];
    for i in 0..n {
        let row = pop.particles.row(i);
        for j in 0..p {
            mean[j] += pop.weights[i] * row[j];
        }
    }
    let mut cov = Tensor::zeros(p, p);
    for i in 0..n {
        let row = pop.particles.row(i);
        for a in 0..p {
            for b in 0..=a {
                let v = cov.get(a, b)
                    + pop.weights[i] * (row[a] - mean[a]) * (row[b] - mean[b]);
                cov.set(a, b, v);
                cov.set(b, a, v);
            }
        }
    }
    for v in cov.data_mut() {
        *v *= 2.0;
    }
    let (vecs, eigs, _) = sym_eig_clipped(&cov)?;
    let mut factor = Tensor::zeros(p, p);
    for c in 0..p {
        let s = eigs[c].sqrt();
        for r in 0..p {
            factor.set(r, c, vecs.get(r, c) * s);
        }
    }
    Ok((cov, factor))
}

fn weighted_index(weights: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Sequential ABC: an accept-all prior round, then rounds that resample,
/// perturb, and keep only particles whose simulation lands within the
/// shrinking threshold. Returns importance-weighted particles; a stalled
/// round returns the last complete population with a warning attached.
pub fn abc_smc<S, P>(
    simulator: S,
    prior: &P,
    data: &Tensor,
    opts: &AbcOpts,
    rng: &mut RngStream,
) -> Result<SampleSet>
where
    S: Fn(&[f64]) -> Result<Tensor> + Sync,
    P: AbcPrior + ?Sized,
{
    if opts.n_particles < 2 {
        return Err(Error::invalid("need at least two particles"));
    }
    if opts.n_rounds == 0 {
        return Err(Error::invalid("need at least one round"));
    }
    if !(opts.quantile > 0.0 && opts.quantile < 1.0) {
        return Err(Error::invalid("quantile must lie strictly between 0 and 1"));
    }
    let (n, p) = (opts.n_particles, prior.dim());

    // round 0: accept everything from the prior
    let mut particles = Tensor::zeros(n, p);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let theta = prior.sample(rng);
        let sim = simulator(&theta);
        distances.push(distance(&sim, data)?);
        particles.row_mut(i).copy_from_slice(&theta);
    }
    let mut pop = Population {
        particles,
        weights: vec![1.0 / n as f64; n],
        distances,
        acceptance_rate: 1.0,
    };
    let mut warnings = Vec::new();

    for round in 1..opts.n_rounds {
        let mut sorted = pop.distances.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let eps = quantile_of(&sorted, opts.quantile);
        if !eps.is_finite() {
            warnings.push(Warning::ZeroAcceptanceRound { round });
            break;
        }
        let (pert_cov, pert_factor) = perturbation(&pop)?;
        // density of the mixture proposal needs a (jittered) factorization
        let (chol, _) = cholesky_jittered(&pert_cov)?;
        let logdet = chol_logdet(&chol);
        let log_norm = -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);

        let mut new_particles = Tensor::zeros(n, p);
        let mut new_weights = Vec::with_capacity(n);
        let mut new_distances = Vec::with_capacity(n);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < n && attempts < opts.max_attempts_per_round {
            attempts += 1;
            let ancestor = weighted_index(&pop.weights, rng);
            let z = rng.normal_vec(p);
            let mut theta = pop.particles.row(ancestor).to_vec();
            for r in 0..p {
                let row = pert_factor.row(r);
                let mut acc = 0.0;
                for c in 0..p {
                    acc += row[c] * z[c];
                }
                theta[r] += acc;
            }
            let log_prior = prior.log_density(&theta);
            if log_prior == f64::NEG_INFINITY {
                continue;
            }
            let sim = simulator(&theta);
            let dist = distance(&sim, data)?;
            if !(dist <= eps) {
                continue;
            }
            // importance weight: prior over the mixture of perturbation
            // kernels centered at the previous particles
            let mut log_mix = f64::NEG_INFINITY;
            for j in 0..n {
                let prev = pop.particles.row(j);
                let diff: Vec<f64> = (0..p).map(|k| theta[k] - prev[k]).collect();
                let sol = chol_solve(&chol, &diff);
                let quad: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
                let log_kernel = log_norm - 0.5 * quad + pop.weights[j].ln();
                log_mix = if log_mix == f64::NEG_INFINITY {
                    log_kernel
                } else {
                    let m = log_mix.max(log_kernel);
                    m + ((log_mix - m).exp() + (log_kernel - m).exp()).ln()
                };
            }
            new_particles.row_mut(accepted).copy_from_slice(&theta);
            new_weights.push((log_prior - log_mix).exp());
            new_distances.push(dist);
            accepted += 1;
        }

        if accepted < n {
            warnings.push(if accepted == 0 {
                Warning::ZeroAcceptanceRound { round }
            } else {
                Warning::StalledRound { round, accepted }
            });
            break;
        }
        let wsum: f64 = new_weights.iter().sum();
        if !(wsum > 0.0 && wsum.is_finite()) {
            return Err(Error::invalid(format!("round {round} produced unusable weights")));
        }
        for w in &mut new_weights {
            *w /= wsum;
        }
        pop = Population {
            particles: new_particles,
            weights: new_weights,
            distances: new_distances,
            acceptance_rate: accepted as f64 / attempts as f64,
        };
    }

    let log_joint = (0..n).map(|i| prior.log_density(pop.particles.row(i))).collect();
    let set = SampleSet {
        method: SampleMethod::Abc,
        draws: pop.particles,
        log_joint,
        acceptance_rate: pop.acceptance_rate,
        weights: Some(pop.weights),
        adapted_step: None,
        divergences: 0,
        depth_saturations: 0,
        warnings,
    };
    set.validate()?;
    Ok(set)
}
