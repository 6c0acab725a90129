//! Exact expansion of polynomial networks into monomial coefficients, plus
//! kernel density estimation for coefficient samples.
//!
//! Polynomials are maps from exponent multi-indices to coefficients; sums
//! merge like terms and products convolve exponents, so the expansion is
//! exact up to floating-point rounding in the coefficient arithmetic.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{GaussianPosterior, SampleSet, Warning};
use crate::nd::{RngStream, Tape, Tensor, Var};
use crate::polynet::{LayerMatrix, PolyNetArch};

/// Exponent multi-index (e_1..e_d); entry j is the power of x_j.
pub type MonomialKey = Vec<u32>;

/// One polynomial per network output, keyed by monomial exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialForm {
    n_inputs: usize,
    outputs: Vec<BTreeMap<MonomialKey, f64>>,
}

impl PolynomialForm {
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        Self { n_inputs, outputs: vec![BTreeMap::new(); n_outputs] }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn outputs(&self) -> &[BTreeMap<MonomialKey, f64>] {
        &self.outputs
    }

    pub fn output(&self, k: usize) -> &BTreeMap<MonomialKey, f64> {
        &self.outputs[k]
    }

    /// Coefficient of `key` in output `k` (0 when absent).
    pub fn coeff(&self, k: usize, key: &[u32]) -> f64 {
        self.outputs[k].get(key).copied().unwrap_or(0.0)
    }

    pub fn set_coeff(&mut self, k: usize, key: MonomialKey, c: f64) -> Result<()> {
        if key.len() != self.n_inputs {
            return Err(Error::ShapeMismatch {
                context: "monomial key length",
                expected: format!("{}", self.n_inputs),
                got: format!("{}", key.len()),
            });
        }
        self.outputs[k].insert(key, c);
        Ok(())
    }

    pub fn eval_output(&self, k: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (key, c) in &self.outputs[k] {
            let mut m = *c;
            for (j, &e) in key.iter().enumerate() {
                if e > 0 {
                    m *= x[j].powi(e as i32);
                }
            }
            s += m;
        }
        s
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_inputs {
            return Err(Error::ShapeMismatch {
                context: "polynomial eval input",
                expected: format!("{}", self.n_inputs),
                got: format!("{}", x.len()),
            });
        }
        Ok((0..self.outputs.len()).map(|k| self.eval_output(k, x)).collect())
    }

    pub fn max_total_degree(&self) -> u32 {
        self.outputs
            .iter()
            .flat_map(|m| m.keys())
            .map(|k| k.iter().sum())
            .max()
            .unwrap_or(0)
    }
}

/// Render an exponent multi-index: [0,0] -> "1", [1,0] -> "x0",
/// [1,2] -> "x0*x1^2".
pub fn monomial_string(key: &[u32]) -> String {
    let parts: Vec<String> = key
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| if e == 1 { format!("x{i}") } else { format!("x{i}^{e}") })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Every exponent multi-index with total degree <= `degree`, in
/// lexicographic order (the iteration order of the coefficient maps).
pub fn monomials_up_to(n_inputs: usize, degree: u32) -> Vec<MonomialKey> {
    fn rec(key: &mut MonomialKey, pos: usize, remaining: u32, out: &mut Vec<MonomialKey>) {
        if pos == key.len() {
            out.push(key.clone());
            return;
        }
        for e in 0..=remaining {
            key[pos] = e;
            rec(key, pos + 1, remaining - e, out);
        }
        key[pos] = 0;
    }
    let mut out = Vec::new();
    rec(&mut vec![0; n_inputs], 0, degree, &mut out);
    out
}

/// acc += s * p, merging like terms. Zero-scale contributions are skipped.
fn add_scaled(acc: &mut BTreeMap<MonomialKey, f64>, p: &BTreeMap<MonomialKey, f64>, s: f64) {
    if s == 0.0 {
        return;
    }
    for (key, c) in p {
        *acc.entry(key.clone()).or_insert(0.0) += s * c;
    }
}

/// Exponent-convolution product of two polynomials.
fn mul(p: &BTreeMap<MonomialKey, f64>, q: &BTreeMap<MonomialKey, f64>) -> BTreeMap<MonomialKey, f64> {
    let mut out = BTreeMap::new();
    for (ka, ca) in p {
        for (kb, cb) in q {
            let key: MonomialKey = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
            *out.entry(key).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Expand a network's parameters into explicit monomial coefficients.
/// Evaluating the result agrees with the network forward pass; exact-zero
/// coefficients are dropped, so the zero network expands to empty maps.
pub fn expand(arch: &PolyNetArch, theta: &[f64]) -> Result<PolynomialForm> {
    if theta.len() != arch.count_params() {
        return Err(Error::ShapeMismatch {
            context: "expand theta length",
            expected: format!("{}", arch.count_params()),
            got: format!("{}", theta.len()),
        });
    }
    let d = arch.n_inputs;
    let d1 = d + 1;
    let w = arch.width;

    // augmented input channels: constant 1, then each coordinate
    let xt: Vec<BTreeMap<MonomialKey, f64>> = (0..d1)
        .map(|j| {
            let mut key = vec![0u32; d];
            if j > 0 {
                key[j - 1] = 1;
            }
            BTreeMap::from([(key, 1.0)])
        })
        .collect();

    let row_combo = |mat: &[f64], cols: usize, row: usize, basis: &[BTreeMap<MonomialKey, f64>]| {
        let mut acc = BTreeMap::new();
        for j in 0..cols {
            add_scaled(&mut acc, &basis[j], mat[row * cols + j]);
        }
        acc
    };

    let mut h: Vec<BTreeMap<MonomialKey, f64>> = Vec::new();
    let mut pending_a: Option<Vec<BTreeMap<MonomialKey, f64>>> = None;
    for (mat, rows, cols, off) in arch.layout() {
        let slab = &theta[off..off + rows * cols];
        match mat {
            LayerMatrix::A(1) => {
                h = (0..w).map(|i| row_combo(slab, cols, i, &xt)).collect();
            }
            LayerMatrix::A(_) => {
                // paired with the B of the same layer, handled there; stash rows
                pending_a = Some((0..w).map(|i| row_combo(slab, cols, i, &xt)).collect());
            }
            LayerMatrix::B(_) => {
                let a_rows = pending_a.take().expect("layout pairs every B with its A");
                let b_rows: Vec<_> = (0..w).map(|i| row_combo(slab, cols, i, &h)).collect();
                h = a_rows.iter().zip(&b_rows).map(|(a, b)| mul(a, b)).collect();
            }
            LayerMatrix::C => {
                let mut form = PolynomialForm::new(d, arch.n_outputs);
                for k in 0..arch.n_outputs {
                    let mut acc = row_combo(slab, cols, k, &h);
                    acc.retain(|_, c| *c != 0.0);
                    form.outputs[k] = acc;
                }
                return Ok(form);
            }
        }
    }
    unreachable!("layout always ends with the output matrix")
}

/// Evaluate a polynomial form on the tape over a (n_inputs, batch) state
/// block, giving (n_outputs, batch). The form's coefficients enter as
/// constants, so the result carries gradient only through the state.
pub fn form_on_tape(tape: &mut Tape, form: &PolynomialForm, y: Var) -> Result<Var> {
    let (d, batch) = tape.dims(y);
    if d != form.n_inputs() {
        return Err(Error::ShapeMismatch {
            context: "form_on_tape state",
            expected: format!("{} rows", form.n_inputs()),
            got: format!("{d} rows"),
        });
    }
    let mut rows = Vec::with_capacity(d);
    for j in 0..d {
        let flat = tape.slice(y, j * batch, batch)?;
        rows.push(tape.reshape(flat, 1, batch)?);
    }
    let mut outs = Vec::with_capacity(form.n_outputs());
    for k in 0..form.n_outputs() {
        let mut acc: Option<Var> = None;
        for (key, &c) in form.output(k) {
            let mut mono: Option<Var> = None;
            for (j, &e) in key.iter().enumerate() {
                for _ in 0..e {
                    mono = Some(match mono {
                        Some(m) => tape.mul(m, rows[j])?,
                        None => rows[j],
                    });
                }
            }
            let term = match mono {
                Some(m) => tape.scale(m, c)?,
                None => {
                    let ones = tape.ones_const(1, batch);
                    tape.scale(ones, c)?
                }
            };
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        outs.push(match acc {
            Some(a) => a,
            None => {
                let ones = tape.ones_const(1, batch);
                tape.scale(ones, 0.0)?
            }
        });
    }
    // stack the (1, batch) output rows into (n_outputs, batch)
    let mut stacked = tape.transpose(outs[0])?;
    for &o in &outs[1..] {
        let ot = tape.transpose(o)?;
        stacked = tape.concat_cols(stacked, ot)?;
    }
    tape.transpose(stacked)
}

/// Weight-space posterior to push forward into coefficient space.
#[derive(Clone, Copy)]
pub enum PosteriorSource<'a> {
    Gaussian(&'a GaussianPosterior),
    Samples(&'a SampleSet),
}

impl PosteriorSource<'_> {
    fn dim(&self) -> usize {
        match self {
            PosteriorSource::Gaussian(g) => g.dim(),
            PosteriorSource::Samples(s) => s.dim(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            PosteriorSource::Gaussian(g) => g.source().as_str(),
            PosteriorSource::Samples(s) => s.method.as_str(),
        }
    }
}

/// Monte-Carlo pushforward of a weight posterior into monomial-coefficient
/// space. Sample arrays are aligned: entry i of every array comes from the
/// same joint weight draw, stored in row i of `weight_draws`.
#[derive(Clone, Debug)]
pub struct CoefficientPosterior {
    n_inputs: usize,
    n_mc: usize,
    source: &'static str,
    seed: u64,
    weight_draws: Tensor,
    outputs: Vec<BTreeMap<MonomialKey, Vec<f64>>>,
    warnings: Vec<Warning>,
}

impl CoefficientPosterior {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_mc(&self) -> usize {
        self.n_mc
    }

    /// Which posterior the draws came from ("laplace_pinv", "nuts", ...).
    pub fn source(&self) -> &'static str {
        self.source
    }

    /// Seed of the random stream that produced the draws.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// The underlying joint weight draws, one row per Monte-Carlo sample.
    pub fn weight_draws(&self) -> &Tensor {
        &self.weight_draws
    }

    pub fn output(&self, k: usize) -> &BTreeMap<MonomialKey, Vec<f64>> {
        &self.outputs[k]
    }

    /// Samples of one coefficient; None only for keys beyond the
    /// architecture degree (in-degree keys always have an array, exact
    /// zeros included).
    pub fn samples(&self, k: usize, key: &[u32]) -> Option<&[f64]> {
        self.outputs[k].get(key).map(|v| v.as_slice())
    }

    /// (output index, key, samples) over every tracked coefficient.
    pub fn rows(&self) -> impl Iterator<Item = (usize, &MonomialKey, &[f64])> {
        self.outputs
            .iter()
            .enumerate()
            .flat_map(|(k, m)| m.iter().map(move |(key, v)| (k, key, v.as_slice())))
    }

    pub fn mean_sd(&self, k: usize, key: &[u32]) -> Option<(f64, f64)> {
        let s = self.samples(k, key)?;
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }

    /// Central interval containing `mass` of the samples (nearest-rank
    /// quantiles), e.g. mass 0.997 gives the [0.0015, 0.9985] pair.
    pub fn interval(&self, k: usize, key: &[u32], mass: f64) -> Option<(f64, f64)> {
        let s = self.samples(k, key)?;
        let mut sorted = s.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
            sorted[idx.min(sorted.len() - 1)]
        };
        let tail = (1.0 - mass) / 2.0;
        Some((q(tail), q(1.0 - tail)))
    }

    /// Reassemble the polynomial of one joint draw.
    pub fn form_of_draw(&self, i: usize) -> PolynomialForm {
        let mut form = PolynomialForm::new(self.n_inputs, self.outputs.len());
        for (k, m) in self.outputs.iter().enumerate() {
            for (key, v) in m {
                form.outputs[k].insert(key.clone(), v[i]);
            }
        }
        form
    }
}

/// Push a weight posterior through the exact expansion: draw n_mc joint
/// parameter vectors (Gaussian sampling or resampling of stored draws) and
/// expand each one independently. Coefficients within a sample index are
/// mutually consistent because they share a draw; marginal sampling would
/// ignore the strong dependence between network weights.
pub fn coefficient_posterior(
    source: PosteriorSource,
    arch: &PolyNetArch,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<CoefficientPosterior> {
    if n_mc == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo draw"));
    }
    let p = arch.count_params();
    if source.dim() != p {
        return Err(Error::ShapeMismatch {
            context: "coefficient_posterior dimension",
            expected: format!("{p} (architecture parameter count)"),
            got: format!("{}", source.dim()),
        });
    }

    let mut warnings = Vec::new();
    let weight_draws = match source {
        PosteriorSource::Gaussian(g) => {
            let sampler = g.sampler()?;
            if sampler.n_clipped > 0 {
                warnings.push(Warning::CovarianceClipped { n_clipped: sampler.n_clipped });
            }
            let mut draws = Tensor::zeros(n_mc, p);
            for i in 0..n_mc {
                draws.row_mut(i).copy_from_slice(&sampler.draw(rng));
            }
            draws
        }
        PosteriorSource::Samples(s) => s.resample(n_mc, rng),
    };

    let forms: Vec<PolynomialForm> = (0..n_mc)
        .into_par_iter()
        .map(|i| expand(arch, weight_draws.row(i)))
        .collect::<Result<_>>()?;

    // fixed key set: every monomial the architecture can express
    let keys = monomials_up_to(arch.n_inputs, arch.degree as u32);
    let outputs = (0..arch.n_outputs)
        .map(|k| {
            keys.iter()
                .map(|key| {
                    let samples = forms.iter().map(|f| f.coeff(k, key)).collect();
                    (key.clone(), samples)
                })
                .collect()
        })
        .collect();

    Ok(CoefficientPosterior {
        n_inputs: arch.n_inputs,
        n_mc,
        source: source.label(),
        seed: rng.seed(),
        weight_draws,
        outputs,
        warnings,
    })
}

/// Kernel density estimate, or a spike marker when the sample has no spread.
#[derive(Clone, Debug, PartialEq)]
pub enum KdeOutput {
    Spike { location: f64 },
    Density { bandwidth: f64, values: Vec<f64> },
}

/// Silverman's rule 1.06 * sd * n^(-1/5); zero when the sample is degenerate.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.06 * var.sqrt() * (n as f64).powf(-0.2)
}

/// Gaussian-kernel density of `samples` evaluated on `grid`.
pub fn kde(samples: &[f64], grid: &[f64]) -> Result<KdeOutput> {
    if samples.is_empty() {
        return Err(Error::invalid("kde needs at least one sample"));
    }
    let h = silverman_bandwidth(samples);
    if h == 0.0 || !h.is_finite() {
        return Ok(KdeOutput::Spike { location: samples[0] });
    }
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let values = grid
        .iter()
        .map(|&g| {
            let mut s = 0.0;
            for &x in samples {
                let z = (g - x) / h;
                s += (-0.5 * z * z).exp();
            }
            s * norm
        })
        .collect();
    Ok(KdeOutput::Density { bandwidth: h, values })
}

/// Uniform evaluation grid covering the sample range padded by six
/// bandwidths on each side; None when the sample is degenerate.
pub fn kde_grid(samples: &[f64], n: usize) -> Option<Vec<f64>> {
    let h = silverman_bandwidth(samples);
    if h == 0.0 || !h.is_finite() || n < 2 {
        return None;
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 6.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 6.0 * h;
    let step = (hi - lo) / (n - 1) as f64;
    Some((0..n).map(|i| lo + step * i as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{CovarianceSource, SampleMethod};
    use crate::nd::RngStream;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn hand_built_product_net_expands_to_six_x_squared() {
        // h1 = 2x, layer 2: (3x) .* (1 * h1) = 6x^2, C = [1]
        let arch = PolyNetArch::new(1, 1, 1, 2).unwrap();
        let theta = vec![0.0, 2.0, 0.0, 3.0, 1.0, 1.0];
        let form = expand(&arch, &theta).unwrap();
        assert_eq!(form.output(0).len(), 1);
        assert!((form.coeff(0, &[2]) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_network_expands_to_the_empty_form() {
        let arch = PolyNetArch::new(2, 2, 4, 3).unwrap();
        let form = expand(&arch, &vec![0.0; arch.count_params()]).unwrap();
        for out in form.outputs() {
            assert!(out.is_empty());
        }
    }

    #[test]
    fn expansion_matches_forward_at_random_points() {
        let mut rng = RngStream::new(55);
        for (d, degree, w) in
            [(1, 1, 3), (1, 3, 5), (2, 2, 4), (2, 3, 6), (3, 2, 4), (3, 3, 3)]
        {
            let arch = PolyNetArch::new(d, d, w, degree).unwrap();
            let theta: Vec<f64> =
                (0..arch.count_params()).map(|_| rng.range(-0.5, 0.5)).collect();
            let form = expand(&arch, &theta).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| rng.range(-1.0, 1.0)).collect();
                let direct = arch.forward(&theta, &x).unwrap();
                let via_form = form.eval(&x).unwrap();
                for k in 0..d {
                    assert!(
                        (direct[k] - via_form[k]).abs() <= 1e-10,
                        "d={d} degree={degree}: {} vs {}",
                        direct[k],
                        via_form[k]
                    );
                }
            }
        }
    }

    #[test]
    fn form_on_tape_matches_plain_evaluation() {
        // includes a constant term, a missing output, and mixed exponents
        let mut form = PolynomialForm::new(2, 3);
        form.set_coeff(0, vec![0, 0], 0.7).unwrap();
        form.set_coeff(0, vec![2, 1], -1.3).unwrap();
        form.set_coeff(2, vec![0, 3], 2.0).unwrap();
        form.set_coeff(2, vec![1, 0], 0.25).unwrap();

        let mut rng = RngStream::new(3);
        let batch = 4;
        let states: Vec<f64> = (0..2 * batch).map(|_| rng.range(-1.5, 1.5)).collect();
        let mut tape = Tape::new();
        let y = tape.constant_slice(2, batch, &states);
        let out = form_on_tape(&mut tape, &form, y).unwrap();
        assert_eq!(tape.dims(out), (3, batch));
        let vals = tape.value(out).to_vec();
        for c in 0..batch {
            let x = [states[c], states[batch + c]];
            for k in 0..3 {
                let want = form.eval_output(k, &x);
                assert!(
                    (vals[k * batch + c] - want).abs() < 1e-14,
                    "output {k} column {c}"
                );
            }
        }

        let mut tape = Tape::new();
        let bad = tape.constant_slice(3, 2, &[0.0; 6]);
        assert!(form_on_tape(&mut tape, &form, bad).is_err());
    }

    #[test]
    fn expansion_never_exceeds_the_architecture_degree() {
        let mut rng = RngStream::new(77);
        for (d, degree, w) in [(1, 2, 4), (2, 3, 5), (3, 2, 3)] {
            let arch = PolyNetArch::new(d, d, w, degree).unwrap();
            let theta: Vec<f64> =
                (0..arch.count_params()).map(|_| rng.range(-1.0, 1.0)).collect();
            let form = expand(&arch, &theta).unwrap();
            assert!(form.max_total_degree() <= degree as u32);
        }
    }

    #[test]
    fn coefficients_match_a_least_squares_fit_of_the_forward_map() {
        let mut rng = RngStream::new(91);
        let arch = PolyNetArch::new(2, 2, 5, 3).unwrap();
        let theta: Vec<f64> = (0..arch.count_params()).map(|_| rng.range(-0.5, 0.5)).collect();
        let form = expand(&arch, &theta).unwrap();

        let keys = monomials_up_to(2, 3);
        assert_eq!(keys.len(), 10);
        let n_pts = 60;
        let pts: Vec<[f64; 2]> =
            (0..n_pts).map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)]).collect();
        let design = DMatrix::from_fn(n_pts, keys.len(), |i, j| {
            let mut v = 1.0;
            for (dim, &e) in keys[j].iter().enumerate() {
                v *= pts[i][dim].powi(e as i32);
            }
            v
        });
        for k in 0..2 {
            let y = DVector::from_fn(n_pts, |i, _| arch.forward(&theta, &pts[i]).unwrap()[k]);
            let svd = design.clone().svd(true, true);
            let coef = svd.solve(&y, 1e-12).unwrap();
            for (j, key) in keys.iter().enumerate() {
                assert!(
                    (coef[j] - form.coeff(k, key)).abs() <= 1e-8,
                    "output {k} key {key:?}: ls={} expand={}",
                    coef[j],
                    form.coeff(k, key)
                );
            }
        }
    }

    #[test]
    fn monomial_enumeration_counts_and_order() {
        assert_eq!(monomials_up_to(1, 3).len(), 4);
        assert_eq!(monomials_up_to(2, 2).len(), 6);
        assert_eq!(monomials_up_to(2, 3).len(), 10);
        assert_eq!(monomials_up_to(3, 2).len(), 10);
        let keys = monomials_up_to(2, 2);
        assert_eq!(
            keys,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![2, 0]
            ]
        );
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn monomial_strings_render_expected_shapes() {
        assert_eq!(monomial_string(&[0, 0]), "1");
        assert_eq!(monomial_string(&[1, 0]), "x0");
        assert_eq!(monomial_string(&[0, 2]), "x1^2");
        assert_eq!(monomial_string(&[1, 2]), "x0*x1^2");
        assert_eq!(monomial_string(&[3]), "x0^3");
    }

    #[test]
    fn form_eval_matches_a_hand_polynomial() {
        // 1.5x - xy and -3y + xy
        let mut form = PolynomialForm::new(2, 2);
        form.set_coeff(0, vec![1, 0], 1.5).unwrap();
        form.set_coeff(0, vec![1, 1], -1.0).unwrap();
        form.set_coeff(1, vec![0, 1], -3.0).unwrap();
        form.set_coeff(1, vec![1, 1], 1.0).unwrap();
        let v = form.eval(&[1.0, 1.0]).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((v[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn kde_of_standard_normal_samples_tracks_the_density() {
        let mut rng = RngStream::new(2024);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        let grid: Vec<f64> = (0..121).map(|i| -3.0 + i as f64 * 0.05).collect();
        let KdeOutput::Density { values, .. } = kde(&samples, &grid).unwrap() else {
            panic!("expected a density");
        };
        let mut worst = 0.0f64;
        for (g, v) in grid.iter().zip(&values) {
            let pdf = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
            worst = worst.max((v - pdf).abs());
        }
        assert!(worst <= 0.02, "max deviation {worst}");
    }

    #[test]
    fn kde_is_symmetric_for_a_symmetric_two_point_sample() {
        let samples = [-1.0, 1.0];
        let grid: Vec<f64> = (0..51).map(|i| -2.5 + i as f64 * 0.1).collect();
        let KdeOutput::Density { values, .. } = kde(&samples, &grid).unwrap() else {
            panic!("expected a density");
        };
        for i in 0..grid.len() {
            let j = grid.len() - 1 - i;
            assert!((values[i] - values[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_samples_give_a_spike() {
        let samples = [2.5; 40];
        let out = kde(&samples, &[0.0, 2.5, 5.0]).unwrap();
        assert_eq!(out, KdeOutput::Spike { location: 2.5 });
    }

    #[test]
    fn degenerate_covariance_collapses_to_the_map_expansion() {
        let mut rng = RngStream::new(17);
        let arch = PolyNetArch::new(1, 1, 2, 2).unwrap();
        let p = arch.count_params();
        let theta: Vec<f64> = (0..p).map(|_| rng.range(-0.5, 0.5)).collect();
        let form = expand(&arch, &theta).unwrap();
        let post = GaussianPosterior::new(
            theta.clone(),
            Tensor::zeros(p, p),
            CovarianceSource::LaplacePinv,
        )
        .unwrap();
        let cp =
            coefficient_posterior(PosteriorSource::Gaussian(&post), &arch, 7, &mut rng).unwrap();
        assert_eq!(cp.n_mc(), 7);
        for i in 0..7 {
            assert_eq!(cp.weight_draws().row(i), theta.as_slice());
        }
        for key in monomials_up_to(1, 2) {
            let s = cp.samples(0, &key).unwrap();
            assert_eq!(s.len(), 7);
            for &v in s {
                assert_eq!(v, form.coeff(0, &key));
            }
        }
        assert!(cp.warnings().is_empty());
    }

    #[test]
    fn linear_pushforward_matches_the_analytic_gaussian() {
        // Degree-1 single-channel net: output = c*(a0 + a1*x). With only the
        // output weight c random, the x coefficient is exactly a1*c, a linear
        // map of a Gaussian.
        let arch = PolyNetArch::new(1, 1, 1, 1).unwrap();
        let (a0, a1, cbar, sd_c) = (0.2, 0.7, 1.2, 0.5);
        let mut cov = Tensor::zeros(3, 3);
        cov.set(2, 2, sd_c * sd_c);
        let post =
            GaussianPosterior::new(vec![a0, a1, cbar], cov, CovarianceSource::LaplacePinv)
                .unwrap();
        let n_mc = 4000;
        let mut rng = RngStream::new(23);
        let cp =
            coefficient_posterior(PosteriorSource::Gaussian(&post), &arch, n_mc, &mut rng)
                .unwrap();

        let (mean, sd) = cp.mean_sd(0, &[1]).unwrap();
        let (true_mean, true_sd) = (a1 * cbar, a1 * sd_c);
        // 4 standard errors of the MC estimators
        assert!(
            (mean - true_mean).abs() <= 4.0 * true_sd / (n_mc as f64).sqrt(),
            "mean {mean} vs {true_mean}"
        );
        assert!(
            (sd - true_sd).abs() <= 4.0 * true_sd / (2.0 * n_mc as f64).sqrt(),
            "sd {sd} vs {true_sd}"
        );

        // both coefficients are multiples of the same draw of c, so the
        // sample correlation is 1 up to rounding
        let s0 = cp.samples(0, &[0]).unwrap();
        let s1 = cp.samples(0, &[1]).unwrap();
        let m0 = s0.iter().sum::<f64>() / n_mc as f64;
        let m1 = s1.iter().sum::<f64>() / n_mc as f64;
        let (mut num, mut v0, mut v1) = (0.0, 0.0, 0.0);
        for i in 0..n_mc {
            num += (s0[i] - m0) * (s1[i] - m1);
            v0 += (s0[i] - m0) * (s0[i] - m0);
            v1 += (s1[i] - m1) * (s1[i] - m1);
        }
        let corr = num / (v0.sqrt() * v1.sqrt());
        assert!(corr > 1.0 - 1e-12, "correlation {corr}");
    }

    #[test]
    fn each_sample_row_is_one_joint_weight_draw() {
        let mut rng = RngStream::new(41);
        let arch = PolyNetArch::new(2, 2, 3, 2).unwrap();
        let p = arch.count_params();
        let theta: Vec<f64> = (0..p).map(|_| rng.range(-0.5, 0.5)).collect();
        let mut cov = Tensor::zeros(p, p);
        for i in 0..p {
            cov.set(i, i, 1e-4);
        }
        let post =
            GaussianPosterior::new(theta, cov, CovarianceSource::LaplacePinv).unwrap();
        let cp =
            coefficient_posterior(PosteriorSource::Gaussian(&post), &arch, 25, &mut rng).unwrap();
        for i in 0..25 {
            let form = cp.form_of_draw(i);
            let weights = cp.weight_draws().row(i);
            for _ in 0..10 {
                let x = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
                let direct = arch.forward(weights, &x).unwrap();
                let via_form = form.eval(&x).unwrap();
                for k in 0..2 {
                    assert!(
                        (direct[k] - via_form[k]).abs() <= 1e-10,
                        "draw {i} output {k}: {} vs {}",
                        direct[k],
                        via_form[k]
                    );
                }
            }
        }
    }

    #[test]
    fn sample_sets_resample_by_weight() {
        let arch = PolyNetArch::new(1, 1, 1, 1).unwrap();
        let ta = vec![0.2, 0.7, 1.2];
        let tb = vec![-0.1, 0.3, 2.0];
        let set = SampleSet {
            method: SampleMethod::Abc,
            draws: Tensor::from_rows(&[ta, tb]).unwrap(),
            log_joint: vec![0.0, 0.0],
            acceptance_rate: 1.0,
            weights: Some(vec![0.9, 0.1]),
            adapted_step: None,
            divergences: 0,
            depth_saturations: 0,
            warnings: Vec::new(),
        };
        let n_mc = 5000;
        let mut rng = RngStream::new(31);
        let cp =
            coefficient_posterior(PosteriorSource::Samples(&set), &arch, n_mc, &mut rng).unwrap();
        assert_eq!(cp.source(), "abc");
        assert_eq!(cp.seed(), 31);

        // the x coefficient of draw a is 0.7*1.2, of draw b 0.3*2.0
        let (ca, cb) = (0.84, 0.6);
        let s = cp.samples(0, &[1]).unwrap();
        let hits_a = s.iter().filter(|&&v| (v - ca).abs() < 1e-12).count();
        let hits_b = s.iter().filter(|&&v| (v - cb).abs() < 1e-12).count();
        assert_eq!(hits_a + hits_b, n_mc, "unexpected coefficient values");
        let frac = hits_a as f64 / n_mc as f64;
        assert!((frac - 0.9).abs() < 0.02, "weight-0.9 row resampled at rate {frac}");
    }

    #[test]
    fn covariance_clipping_is_surfaced() {
        let arch = PolyNetArch::new(1, 1, 1, 1).unwrap();
        let mut cov = Tensor::zeros(3, 3);
        cov.set(0, 0, 1.0);
        cov.set(1, 1, 1.0);
        cov.set(2, 2, -1e-12); // inside the PSD tolerance, clipped when sampling
        let post =
            GaussianPosterior::new(vec![0.0; 3], cov, CovarianceSource::LaplacePinv).unwrap();
        let mut rng = RngStream::new(2);
        let cp =
            coefficient_posterior(PosteriorSource::Gaussian(&post), &arch, 10, &mut rng).unwrap();
        assert!(cp
            .warnings()
            .iter()
            .any(|w| matches!(w, crate::inference::Warning::CovarianceClipped { n_clipped: 1 })));
    }

    #[test]
    fn posterior_dimension_must_match_the_architecture() {
        let arch = PolyNetArch::new(1, 1, 2, 2).unwrap();
        let post = GaussianPosterior::new(
            vec![0.0; 3],
            Tensor::zeros(3, 3),
            CovarianceSource::LaplacePinv,
        )
        .unwrap();
        let mut rng = RngStream::new(1);
        let err = coefficient_posterior(PosteriorSource::Gaussian(&post), &arch, 5, &mut rng);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn kde_mass_is_close_to_one_on_a_padded_grid() {
        let mut rng = RngStream::new(3);
        let samples: Vec<f64> = (0..500).map(|_| rng.normal() * 2.0 + 1.0).collect();
        let grid = kde_grid(&samples, 1024).unwrap();
        let KdeOutput::Density { values, .. } = kde(&samples, &grid).unwrap() else {
            panic!("expected a density");
        };
        let step = grid[1] - grid[0];
        let mut mass = 0.0;
        for i in 1..grid.len() {
            mass += 0.5 * (values[i] + values[i - 1]) * step;
        }
        assert!((0.995..=1.005).contains(&mass), "mass {mass}");
    }
}
