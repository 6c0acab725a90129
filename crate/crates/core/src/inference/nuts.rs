//! No-U-Turn sampler: dynamic trajectory lengths via recursive doubling,
//! multinomial sampling over the trajectory, dual-averaging step size
//! adaptation, and windowed diagonal mass adaptation.

use crate::error::{Error, Result};
use crate::nd::{RngStream, Tensor};

use super::{LogDensity, SampleMethod, SampleSet, Warning};

#[derive(Clone, Copy, Debug)]
pub struct NutsOpts {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub max_depth: usize,
    /// Dual-averaging target for the average Metropolis acceptance.
    pub target_accept: f64,
    /// Fixed initial step size; `None` probes for one.
    pub init_step: Option<f64>,
}

impl Default for NutsOpts {
    fn default() -> Self {
        NutsOpts {
            n_warmup: 500,
            n_samples: 1000,
            max_depth: 10,
            target_accept: 0.8,
            init_step: None,
        }
    }
}

/// Energy gap beyond which a leaf counts as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;
/// Mass adaptation needs room for its windows; below this many warmup
/// iterations only the step size adapts.
const MIN_WARMUP_FOR_MASS: usize = 150;
const INIT_BUFFER: usize = 75;
const TERM_BUFFER: usize = 50;
const BASE_WINDOW: usize = 25;

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone)]
struct Leaf {
    theta: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, mi)| mi * pi * pi).sum::<f64>()
}

/// One leapfrog step of signed size `eps` with a diagonal metric.
fn step<D: LogDensity + ?Sized>(
    target: &D,
    leaf: &mut Leaf,
    eps: f64,
    inv_mass: &[f64],
) -> Result<()> {
    for (pi, gi) in leaf.p.iter_mut().zip(&leaf.grad) {
        *pi += 0.5 * eps * gi;
    }
    for ((ti, pi), mi) in leaf.theta.iter_mut().zip(&leaf.p).zip(inv_mass) {
        *ti += eps * mi * pi;
    }
    let (lp, g) = target.logp_and_grad(&leaf.theta)?;
    leaf.logp = lp;
    leaf.grad = g;
    for (pi, gi) in leaf.p.iter_mut().zip(&leaf.grad) {
        *pi += 0.5 * eps * gi;
    }
    Ok(())
}

/// Opposing ends have turned back toward each other in the metric.
fn is_uturn(left: &Leaf, right: &Leaf, inv_mass: &[f64]) -> bool {
    let mut dot_left = 0.0;
    let mut dot_right = 0.0;
    for i in 0..left.theta.len() {
        let d = right.theta[i] - left.theta[i];
        dot_left += d * inv_mass[i] * left.p[i];
        dot_right += d * inv_mass[i] * right.p[i];
    }
    dot_left < 0.0 || dot_right < 0.0
}

struct Subtree {
    leftmost: Leaf,
    rightmost: Leaf,
    proposal: Leaf,
    /// log sum over leaves of exp(h0 - H).
    lsw: f64,
    /// Sum over leaves of min(1, exp(h0 - H)), for step adaptation.
    sum_metro: f64,
    n_leaves: usize,
    turning: bool,
    divergent: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree<D: LogDensity + ?Sized>(
    target: &D,
    depth: usize,
    from: &Leaf,
    dir: f64,
    eps: f64,
    inv_mass: &[f64],
    h0: f64,
    rng: &mut RngStream,
) -> Subtree {
    if depth == 0 {
        let mut leaf = from.clone();
        let failed = step(target, &mut leaf, dir * eps, inv_mass).is_err();
        let h = if failed { f64::INFINITY } else { -leaf.logp + kinetic(&leaf.p, inv_mass) };
        let lw = h0 - h;
        let divergent = !lw.is_finite() || h - h0 > DIVERGENCE_THRESHOLD;
        let metro = if lw.is_nan() { 0.0 } else { lw.min(0.0).exp() };
        return Subtree {
            leftmost: leaf.clone(),
            rightmost: leaf.clone(),
            proposal: leaf,
            lsw: if divergent { f64::NEG_INFINITY } else { lw },
            sum_metro: metro,
            n_leaves: 1,
            turning: false,
            divergent,
        };
    }

    let mut first = build_tree(target, depth - 1, from, dir, eps, inv_mass, h0, rng);
    if first.divergent || first.turning {
        return first;
    }
    let grow_from = if dir > 0.0 { &first.rightmost } else { &first.leftmost };
    let second = build_tree(target, depth - 1, grow_from, dir, eps, inv_mass, h0, rng);
    first.sum_metro += second.sum_metro;
    first.n_leaves += second.n_leaves;
    if second.divergent {
        first.divergent = true;
        return first;
    }

    let lsw = log_add_exp(first.lsw, second.lsw);
    if (second.lsw - lsw).exp() > rng.uniform() {
        first.proposal = second.proposal;
    }
    first.lsw = lsw;
    if dir > 0.0 {
        first.rightmost = second.rightmost;
    } else {
        first.leftmost = second.leftmost;
    }
    first.turning = second.turning || is_uturn(&first.leftmost, &first.rightmost, inv_mass);
    first
}

struct DrawStats {
    accept_stat: f64,
    divergent: bool,
    saturated: bool,
}

/// One NUTS transition from `cur`, updating it in place.
fn nuts_draw<D: LogDensity + ?Sized>(
    target: &D,
    cur: &mut Leaf,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut RngStream,
) -> DrawStats {
    let dim = cur.theta.len();
    for i in 0..dim {
        cur.p[i] = rng.normal() / inv_mass[i].sqrt();
    }
    let h0 = -cur.logp + kinetic(&cur.p, inv_mass);

    let mut left = cur.clone();
    let mut right = cur.clone();
    let mut proposal = cur.clone();
    let mut lsw_main = 0.0; // the start point carries weight exp(0)
    let mut sum_metro = 0.0;
    let mut n_metro = 0usize;
    let mut divergent = false;
    let mut saturated = true;

    for depth in 0..max_depth {
        let dir = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
        let from = if dir > 0.0 { &right } else { &left };
        let sub = build_tree(target, depth, from, dir, eps, inv_mass, h0, rng);
        sum_metro += sub.sum_metro;
        n_metro += sub.n_leaves;
        if sub.divergent {
            divergent = true;
            saturated = false;
            break;
        }
        if sub.turning {
            saturated = false;
            break;
        }
        // biased progressive sampling favors the fresh half of the tree
        if (sub.lsw - lsw_main).exp() > rng.uniform() {
            proposal = sub.proposal.clone();
        }
        lsw_main = log_add_exp(lsw_main, sub.lsw);
        if dir > 0.0 {
            right = sub.rightmost;
        } else {
            left = sub.leftmost;
        }
        if is_uturn(&left, &right, inv_mass) {
            saturated = false;
            break;
        }
    }

    *cur = proposal;
    let accept_stat = if n_metro > 0 { sum_metro / n_metro as f64 } else { 0.0 };
    DrawStats { accept_stat, divergent, saturated }
}

/// Double or halve from eps = 1 until the one-step acceptance ratio crosses
/// one half.
fn find_reasonable_epsilon<D: LogDensity + ?Sized>(
    target: &D,
    cur: &Leaf,
    inv_mass: &[f64],
    rng: &mut RngStream,
) -> f64 {
    let dim = cur.theta.len();
    let mut base = cur.clone();
    for i in 0..dim {
        base.p[i] = rng.normal() / inv_mass[i].sqrt();
    }
    let h0 = -base.logp + kinetic(&base.p, inv_mass);
    let ratio_at = |eps: f64| -> f64 {
        let mut probe = base.clone();
        if step(target, &mut probe, eps, inv_mass).is_err() {
            return 0.0;
        }
        let h1 = -probe.logp + kinetic(&probe.p, inv_mass);
        let r = (h0 - h1).exp();
        if r.is_nan() {
            0.0
        } else {
            r
        }
    };
    let mut eps = 1.0;
    let mut r = ratio_at(eps);
    let a: f64 = if r > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let keep_going = if a > 0.0 { r > 0.5 } else { r < 0.5 };
        if !keep_going {
            break;
        }
        eps *= 2f64.powf(a);
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
        r = ratio_at(eps);
    }
    eps.clamp(1e-10, 1e10)
}

struct DualAverage {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    delta: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, delta: f64) -> Self {
        DualAverage {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 0.0,
            delta,
        }
    }

    fn update(&mut self, alpha: f64) {
        self.m += 1.0;
        let frac = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.delta - alpha);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        self.log_eps = self.log_eps.clamp((1e-10f64).ln(), (1e10f64).ln());
        let w = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Shrunk variance estimate, kept strictly positive.
    fn regularized_var(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
                (var * n / (n + 5.0) + 1e-3 * (5.0 / (n + 5.0))).max(1e-12)
            })
            .collect()
    }
}

/// Ends of the expanding mass-estimation windows inside warmup.
fn window_ends(n_warmup: usize) -> Vec<usize> {
    let mut ends = Vec::new();
    let last = n_warmup - TERM_BUFFER;
    let mut start = INIT_BUFFER;
    let mut w = BASE_WINDOW;
    loop {
        let end = start + w;
        // a short leftover tail is folded into the final window
        if end >= last || last - end < BASE_WINDOW {
            ends.push(last);
            break;
        }
        ends.push(end);
        start = end;
        w *= 2;
    }
    ends
}

pub fn nuts_sample<D: LogDensity>(
    target: &D,
    theta0: &[f64],
    opts: &NutsOpts,
    rng: &mut RngStream,
) -> Result<SampleSet> {
    let dim = target.dim();
    if theta0.len() != dim {
        return Err(Error::ShapeMismatch {
            context: "nuts start point",
            expected: format!("{dim} parameters"),
            got: format!("{}", theta0.len()),
        });
    }
    if opts.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if opts.max_depth == 0 || opts.max_depth > 14 {
        return Err(Error::invalid("max_depth must be between 1 and 14"));
    }
    if !(opts.target_accept > 0.0 && opts.target_accept < 1.0) {
        return Err(Error::invalid("target_accept must lie strictly between 0 and 1"));
    }

    let (logp, grad) = target.logp_and_grad(theta0)?;
    let mut cur = Leaf { theta: theta0.to_vec(), p: vec![0.0; dim], logp, grad };
    let mut inv_mass = vec![1.0; dim];

    let eps0 = match opts.init_step {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::invalid(format!("init_step must be positive, got {e}"))),
        None => find_reasonable_epsilon(target, &cur, &inv_mass, rng),
    };
    let mut da = DualAverage::new(eps0, opts.target_accept);

    let adapt_mass = opts.n_warmup >= MIN_WARMUP_FOR_MASS;
    let ends = if adapt_mass { window_ends(opts.n_warmup) } else { Vec::new() };
    let mut next_end = 0usize;
    let mut welford = Welford::new(dim);

    for m in 0..opts.n_warmup {
        let eps = da.current();
        let stats = nuts_draw(target, &mut cur, eps, &inv_mass, opts.max_depth, rng);
        da.update(stats.accept_stat);
        if adapt_mass {
            let collecting = m >= INIT_BUFFER && m < opts.n_warmup - TERM_BUFFER;
            if collecting {
                welford.add(&cur.theta);
            }
            if next_end < ends.len() && m + 1 == ends[next_end] {
                inv_mass = welford.regularized_var();
                welford = Welford::new(dim);
                next_end += 1;
                // metric changed: re-probe the step size and restart averaging
                let fresh = find_reasonable_epsilon(target, &cur, &inv_mass, rng);
                da = DualAverage::new(fresh, opts.target_accept);
            }
        }
    }

    let eps_final = if opts.n_warmup > 0 { da.averaged() } else { eps0 };
    let mut draws = Tensor::zeros(opts.n_samples, dim);
    let mut log_joint = Vec::with_capacity(opts.n_samples);
    let mut divergences = 0usize;
    let mut saturations = 0usize;
    let mut accept_sum = 0.0;

    for i in 0..opts.n_samples {
        let stats = nuts_draw(target, &mut cur, eps_final, &inv_mass, opts.max_depth, rng);
        if stats.divergent {
            divergences += 1;
        }
        if stats.saturated {
            saturations += 1;
        }
        accept_sum += stats.accept_stat;
        draws.row_mut(i).copy_from_slice(&cur.theta);
        log_joint.push(cur.logp);
    }

    let acceptance_rate = accept_sum / opts.n_samples as f64;
    let saturation_fraction = saturations as f64 / opts.n_samples as f64;
    let mut warnings = Vec::new();
    if acceptance_rate < 0.01 {
        warnings.push(Warning::LowAcceptance { rate: acceptance_rate });
    }
    if saturation_fraction > 0.25 {
        warnings.push(Warning::TreeDepthSaturation { fraction: saturation_fraction });
    }
    Ok(SampleSet {
        method: SampleMethod::Nuts,
        draws,
        log_joint,
        acceptance_rate,
        weights: None,
        adapted_step: Some(eps_final),
        divergences,
        depth_saturations: saturations,
        warnings,
    })
}
