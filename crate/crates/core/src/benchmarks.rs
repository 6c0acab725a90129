//! Ground-truth systems, noisy dataset generation, and the hybrid
//! known-plus-learned right-hand side for partial-knowledge experiments.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nd::{RngStream, Tape, Tensor, Var};
use crate::odeint::{integrate_fixed_grid, make_batches, OdeSystem, TapeRhs, TrajectoryBatchSet};
use crate::polynet::{BoundNet, PolyNetArch};
use crate::symexpand::{form_on_tape, PolynomialForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    CubicStatic,
    LotkaVolterra,
    DampedOscillator,
    Lorenz,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::CubicStatic => "cubic_static",
            ModelId::LotkaVolterra => "lotka_volterra",
            ModelId::DampedOscillator => "damped_oscillator",
            ModelId::Lorenz => "lorenz",
        }
    }

    pub fn all() -> [ModelId; 4] {
        [ModelId::CubicStatic, ModelId::LotkaVolterra, ModelId::DampedOscillator, ModelId::Lorenz]
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown benchmark model '{s}'")))
    }
}

/// Canonical experiment settings for a model: grid, noise, replication,
/// training window length, and the reference-integration substep count.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub n_points: usize,
    pub t_span: (f64, f64),
    pub noise_sd: f64,
    pub n_replicates: usize,
    pub window_len: usize,
    pub substeps: usize,
}

/// A benchmark system: its exact polynomial right-hand side (or, for the
/// static cubic, regression function) and canonical initial state.
#[derive(Clone, Debug)]
pub struct BenchmarkModel {
    id: ModelId,
    form: PolynomialForm,
    y0: Vec<f64>,
}

impl BenchmarkModel {
    pub fn new(id: ModelId) -> Self {
        let (form, y0) = match id {
            ModelId::CubicStatic => {
                // y = 1 + x + 2x^2 + 4x^3
                let mut f = PolynomialForm::new(1, 1);
                f.set_coeff(0, vec![0], 1.0).unwrap();
                f.set_coeff(0, vec![1], 1.0).unwrap();
                f.set_coeff(0, vec![2], 2.0).unwrap();
                f.set_coeff(0, vec![3], 4.0).unwrap();
                (f, Vec::new())
            }
            ModelId::LotkaVolterra => {
                // dx/dt = 1.5x - xy, dy/dt = -3y + xy
                let mut f = PolynomialForm::new(2, 2);
                f.set_coeff(0, vec![1, 0], 1.5).unwrap();
                f.set_coeff(0, vec![1, 1], -1.0).unwrap();
                f.set_coeff(1, vec![0, 1], -3.0).unwrap();
                f.set_coeff(1, vec![1, 1], 1.0).unwrap();
                (f, vec![1.0, 1.0])
            }
            ModelId::DampedOscillator => {
                // dx/dt = -0.1x^3 - 2y^3, dy/dt = 2x^3 - 0.1y^3
                let mut f = PolynomialForm::new(2, 2);
                f.set_coeff(0, vec![3, 0], -0.1).unwrap();
                f.set_coeff(0, vec![0, 3], -2.0).unwrap();
                f.set_coeff(1, vec![3, 0], 2.0).unwrap();
                f.set_coeff(1, vec![0, 3], -0.1).unwrap();
                (f, vec![1.0, 1.0])
            }
            ModelId::Lorenz => {
                // dx/dt = s(y-x), dy/dt = x(r-z) - y, dz/dt = xy - bz
                // with s=10, r=28, b=8/3
                let mut f = PolynomialForm::new(3, 3);
                f.set_coeff(0, vec![0, 1, 0], 10.0).unwrap();
                f.set_coeff(0, vec![1, 0, 0], -10.0).unwrap();
                f.set_coeff(1, vec![1, 0, 0], 28.0).unwrap();
                f.set_coeff(1, vec![1, 0, 1], -1.0).unwrap();
                f.set_coeff(1, vec![0, 1, 0], -1.0).unwrap();
                f.set_coeff(2, vec![1, 1, 0], 1.0).unwrap();
                f.set_coeff(2, vec![0, 0, 1], -8.0 / 3.0).unwrap();
                (f, vec![1.0, 1.0, 1.0])
            }
        };
        BenchmarkModel { id, form, y0 }
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.form.n_outputs()
    }

    pub fn is_static(&self) -> bool {
        self.id == ModelId::CubicStatic
    }

    pub fn true_form(&self) -> &PolynomialForm {
        &self.form
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.y0
    }

    /// Exact polynomial evaluation of the stored right-hand side.
    pub fn eval_rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.form.eval(y)
    }

    pub fn ode_system(&self) -> Result<OdeSystem<'_>> {
        if self.is_static() {
            return Err(Error::invalid("cubic_static is a regression benchmark, not an ODE"));
        }
        let form = &self.form;
        Ok(OdeSystem::new(self.dim(), move |_t, y, out| {
            for (k, o) in out.iter_mut().enumerate() {
                *o = form.eval_output(k, y);
            }
        }))
    }

    /// The settings the model's experiments are defined with.
    pub fn canonical_spec(&self) -> DatasetSpec {
        match self.id {
            ModelId::CubicStatic => DatasetSpec {
                n_points: 200,
                t_span: (-1.25, 1.25),
                noise_sd: 3.0,
                n_replicates: 1,
                window_len: 0,
                substeps: 0,
            },
            ModelId::LotkaVolterra => DatasetSpec {
                n_points: 100,
                t_span: (0.0, 10.0),
                noise_sd: 2.0,
                n_replicates: 10,
                window_len: 12,
                substeps: 20,
            },
            ModelId::DampedOscillator => DatasetSpec {
                n_points: 500,
                t_span: (0.0, 25.0),
                noise_sd: 0.6,
                n_replicates: 10,
                window_len: 13,
                substeps: 20,
            },
            ModelId::Lorenz => DatasetSpec {
                n_points: 900,
                t_span: (0.0, 30.0),
                noise_sd: 2.0,
                n_replicates: 1,
                window_len: 2,
                substeps: 40,
            },
        }
    }
}

/// Noisy observations of one true trajectory. The truth is retained for
/// evaluation only; training paths must consume `replicates` exclusively.
#[derive(Clone, Debug)]
pub struct NoisyDataset {
    model: ModelId,
    times: Vec<f64>,
    replicates: Vec<Tensor>,
    noise_sd: f64,
    seed: u64,
    truth: Tensor,
}

impl NoisyDataset {
    pub fn model(&self) -> ModelId {
        self.model
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn replicates(&self) -> &[Tensor] {
        &self.replicates
    }

    pub fn replicate(&self, r: usize) -> &Tensor {
        &self.replicates[r]
    }

    /// The noiseless reference trajectory. For held-out evaluation of a
    /// fitted model only; feeding this into training invalidates the
    /// benchmark.
    pub fn truth_for_evaluation(&self) -> &Tensor {
        &self.truth
    }

    /// All replicates stacked row-wise with the time axis tiled to match,
    /// the pooled scatter used for smoothing fits.
    pub fn pooled_scatter(&self) -> (Vec<f64>, Tensor) {
        let n = self.times.len();
        let mut times = Vec::with_capacity(n * self.replicates.len());
        let mut rows = Vec::with_capacity(n * self.replicates.len());
        for rep in &self.replicates {
            for i in 0..n {
                times.push(self.times[i]);
                rows.push(rep.row(i).to_vec());
            }
        }
        (times, Tensor::from_rows(&rows).expect("replicates share the grid shape"))
    }

    /// Stride-1 training windows from every replicate, pooled into one
    /// batch set. Window initial states come from `init_overrides` when
    /// given, one full-grid series per replicate (e.g. smoothed series);
    /// each window starts from the override row at its first time index.
    /// Targets are always the raw observations.
    pub fn pooled_batches(
        &self,
        window_len: usize,
        init_overrides: Option<&[Tensor]>,
    ) -> Result<TrajectoryBatchSet> {
        let n = self.times.len();
        // Bad window lengths surface through make_batches' own validation.
        let n_windows = n.saturating_sub(window_len.min(n)) + 1;
        if let Some(ov) = init_overrides {
            if ov.len() != self.replicates.len() {
                return Err(Error::ShapeMismatch {
                    context: "pooled_batches overrides",
                    expected: format!("{} replicate series", self.replicates.len()),
                    got: format!("{}", ov.len()),
                });
            }
            for series in ov {
                if series.rows() != n {
                    return Err(Error::ShapeMismatch {
                        context: "pooled_batches override grid",
                        expected: format!("{n} rows"),
                        got: format!("{}", series.rows()),
                    });
                }
            }
        }
        let starts = |series: &Tensor| -> Result<Tensor> {
            let rows: Vec<Vec<f64>> =
                (0..n_windows).map(|w| series.row(w).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        let sets = self
            .replicates
            .iter()
            .enumerate()
            .map(|(r, rep)| {
                let ov = init_overrides.map(|ov| starts(&ov[r])).transpose()?;
                make_batches(&self.times, rep, window_len, ov.as_ref())
            })
            .collect::<Result<Vec<_>>>()?;
        TrajectoryBatchSet::merge(sets)
    }
}

/// Reference integration with a step-halving convergence gate. The grid is
/// integrated at substeps/4, substeps/2, and substeps, and the coarse-to-half
/// error ratio against the finest run must behave like a 4th-order method
/// (>= 12) before the finest trajectory is released. Probing below the
/// release resolution keeps both discrepancies far above the rounding floor,
/// where the asymptotic order is actually measurable. Chaotic spans are
/// judged on the prefix where the coarse error is still small against
/// trajectory scale.
pub fn reference_trajectory(
    sys: &OdeSystem,
    y0: &[f64],
    t0: f64,
    dt: f64,
    n_points: usize,
    substeps: usize,
) -> Result<Tensor> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be positive"));
    }
    let probe = (substeps / 4).max(1);
    let base = integrate_fixed_grid(sys, y0, t0, dt, n_points, probe)?;
    let half = integrate_fixed_grid(sys, y0, t0, dt, n_points, 2 * probe)?;
    let fine = integrate_fixed_grid(sys, y0, t0, dt, n_points, 4 * probe)?;
    let d = sys.dim();
    let scale = fine.max_abs().max(1e-12);

    let mut prefix = n_points;
    'outer: for i in 0..n_points {
        for k in 0..d {
            if (base.get(i, k) - fine.get(i, k)).abs() > 1e-3 * scale {
                prefix = i;
                break 'outer;
            }
        }
    }
    if prefix < 2 {
        return Err(Error::invalid(format!(
            "reference integration diverges from the start at substeps {substeps}"
        )));
    }
    let (mut e1, mut e2) = (0.0_f64, 0.0_f64);
    for i in 0..prefix {
        for k in 0..d {
            e1 = e1.max((base.get(i, k) - fine.get(i, k)).abs());
            e2 = e2.max((half.get(i, k) - fine.get(i, k)).abs());
        }
    }
    // e1 at rounding level means everything already agrees; otherwise the
    // halving must pay off like a 4th-order method
    if e1 > 1e-12 * scale && !(e1 / e2 >= 12.0) {
        return Err(Error::invalid(format!(
            "step-halving convergence check failed: ratio {:.2} < 12 at substeps {substeps}",
            e1 / e2
        )));
    }
    if substeps == 4 * probe {
        Ok(fine)
    } else {
        integrate_fixed_grid(sys, y0, t0, dt, n_points, substeps)
    }
}

/// Simulate the model on a uniform grid and add iid Gaussian noise per
/// replicate. Replicates share the same convergence-checked truth and
/// differ only in their noise draws; equal seeds give bit-identical data.
pub fn generate_dataset(
    model: &BenchmarkModel,
    n_points: usize,
    t_span: (f64, f64),
    noise_sd: f64,
    n_replicates: usize,
    seed: u64,
) -> Result<NoisyDataset> {
    generate_dataset_with_substeps(
        model,
        n_points,
        t_span,
        noise_sd,
        n_replicates,
        seed,
        model.canonical_spec().substeps,
    )
}

/// `generate_dataset` with the reference substep count overridden.
pub fn generate_dataset_with_substeps(
    model: &BenchmarkModel,
    n_points: usize,
    t_span: (f64, f64),
    noise_sd: f64,
    n_replicates: usize,
    seed: u64,
    substeps: usize,
) -> Result<NoisyDataset> {
    if n_points < 2 {
        return Err(Error::invalid("need at least two grid points"));
    }
    if !(t_span.1 > t_span.0) {
        return Err(Error::invalid("time span must have positive length"));
    }
    if n_replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::invalid("noise sd must be finite and non-negative"));
    }
    let sys = model.ode_system()?;
    let dt = (t_span.1 - t_span.0) / (n_points - 1) as f64;
    let times: Vec<f64> = (0..n_points).map(|i| t_span.0 + dt * i as f64).collect();
    let truth = reference_trajectory(&sys, &model.y0, t_span.0, dt, n_points, substeps)?;

    let mut rng = RngStream::new(seed).split_named("dataset-noise");
    let d = model.dim();
    let replicates = (0..n_replicates)
        .map(|_| {
            let mut obs = truth.clone();
            for i in 0..n_points {
                for k in 0..d {
                    let v = obs.get(i, k) + noise_sd * rng.normal();
                    obs.set(i, k, v);
                }
            }
            obs
        })
        .collect();

    Ok(NoisyDataset { model: model.id, times, replicates, noise_sd, seed, truth })
}

/// Uniformly spaced static regression data y = 1 + x + 2x^2 + 4x^3 plus
/// Gaussian noise of the given variance.
pub fn cubic_static_data(
    n_points: usize,
    x_range: (f64, f64),
    noise_var: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_points < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    if !(x_range.1 > x_range.0) {
        return Err(Error::invalid("x range must have positive length"));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::invalid("noise variance must be finite and non-negative"));
    }
    let model = BenchmarkModel::new(ModelId::CubicStatic);
    let step = (x_range.1 - x_range.0) / (n_points - 1) as f64;
    let xs: Vec<f64> = (0..n_points).map(|i| x_range.0 + step * i as f64).collect();
    let sd = noise_var.sqrt();
    let mut rng = RngStream::new(seed).split_named("dataset-noise");
    let ys = xs.iter().map(|&x| model.true_form().eval_output(0, &[x]) + sd * rng.normal()).collect();
    Ok((xs, ys))
}

/// Fixed known dynamics plus a network correction, for plain integration.
/// The evaluator is the elementwise sum of the two parts.
pub fn hybrid_system<'a>(
    known: &'a PolynomialForm,
    arch: &'a PolyNetArch,
    theta: &'a [f64],
) -> Result<OdeSystem<'a>> {
    let d = known.n_outputs();
    if known.n_inputs() != d || arch.n_inputs != d || arch.n_outputs != d {
        return Err(Error::ShapeMismatch {
            context: "hybrid_system",
            expected: format!("{d}-state known form and {d}->{d} network"),
            got: format!(
                "known {}->{}, net {}->{}",
                known.n_inputs(),
                known.n_outputs(),
                arch.n_inputs,
                arch.n_outputs
            ),
        });
    }
    if theta.len() != arch.count_params() {
        return Err(Error::ShapeMismatch {
            context: "hybrid_system theta",
            expected: format!("{}", arch.count_params()),
            got: format!("{}", theta.len()),
        });
    }
    Ok(OdeSystem::new(d, move |_t, y, out| {
        let net = arch.forward(theta, y).expect("dimensions validated at construction");
        for (k, o) in out.iter_mut().enumerate() {
            *o = known.eval_output(k, y) + net[k];
        }
    }))
}

/// Fixed known dynamics plus a tape-resident network, for training. The
/// known part enters as constants, so gradient flows only through the
/// network parameters.
pub struct HybridTapeRhs<'a> {
    known: &'a PolynomialForm,
    net: BoundNet,
}

impl<'a> HybridTapeRhs<'a> {
    pub fn new(known: &'a PolynomialForm, net: BoundNet) -> Result<Self> {
        let d = known.n_outputs();
        if known.n_inputs() != d || net.arch().n_inputs != d || net.arch().n_outputs != d {
            return Err(Error::ShapeMismatch {
                context: "hybrid tape rhs",
                expected: format!("{d}-state known form and {d}->{d} network"),
                got: format!(
                    "known {}->{}, net {}->{}",
                    known.n_inputs(),
                    known.n_outputs(),
                    net.arch().n_inputs,
                    net.arch().n_outputs
                ),
            });
        }
        Ok(HybridTapeRhs { known, net })
    }
}

impl TapeRhs for HybridTapeRhs<'_> {
    fn dim(&self) -> usize {
        self.known.n_outputs()
    }

    fn eval(&self, tape: &mut Tape, t: f64, y: Var) -> Result<Var> {
        let net = self.net.eval(tape, t, y)?;
        let fixed = form_on_tape(tape, self.known, y)?;
        tape.add(net, fixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::value_and_grad;

    #[test]
    fn true_rhs_values_match_hand_substitution() {
        let lv = BenchmarkModel::new(ModelId::LotkaVolterra);
        let v = lv.eval_rhs(&[1.0, 1.0]).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-14 && (v[1] + 2.0).abs() < 1e-14, "{v:?}");

        let damped = BenchmarkModel::new(ModelId::DampedOscillator);
        let v = damped.eval_rhs(&[1.0, 1.0]).unwrap();
        assert!((v[0] + 2.1).abs() < 1e-14 && (v[1] - 1.9).abs() < 1e-14, "{v:?}");

        let lorenz = BenchmarkModel::new(ModelId::Lorenz);
        let v = lorenz.eval_rhs(&[1.0, 1.0, 1.0]).unwrap();
        assert!(v[0].abs() < 1e-14, "{v:?}");
        assert!((v[1] - 26.0).abs() < 1e-14, "{v:?}");
        assert!((v[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-14, "{v:?}");

        let cubic = BenchmarkModel::new(ModelId::CubicStatic);
        let v = cubic.eval_rhs(&[0.0]).unwrap();
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn ode_system_wraps_the_true_form() {
        let mut rng = RngStream::new(4);
        for id in [ModelId::LotkaVolterra, ModelId::DampedOscillator, ModelId::Lorenz] {
            let model = BenchmarkModel::new(id);
            let sys = model.ode_system().unwrap();
            for _ in 0..20 {
                let y: Vec<f64> = (0..model.dim()).map(|_| rng.range(-2.0, 2.0)).collect();
                let mut out = vec![0.0; model.dim()];
                sys.eval(0.0, &y, &mut out);
                assert_eq!(out, model.eval_rhs(&y).unwrap());
            }
        }
        assert!(BenchmarkModel::new(ModelId::CubicStatic).ode_system().is_err());
    }

    #[test]
    fn model_ids_round_trip_through_strings() {
        for id in ModelId::all() {
            assert_eq!(id.as_str().parse::<ModelId>().unwrap(), id);
        }
        assert!("pendulum".parse::<ModelId>().is_err());
    }

    #[test]
    fn datasets_are_reproducible_and_replicates_share_the_truth() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let a = generate_dataset(&model, 20, (0.0, 2.0), 1.0, 3, 7).unwrap();
        let b = generate_dataset(&model, 20, (0.0, 2.0), 1.0, 3, 7).unwrap();
        assert_eq!(a.times(), b.times());
        assert_eq!(a.truth_for_evaluation().data(), b.truth_for_evaluation().data());
        for r in 0..3 {
            assert_eq!(a.replicate(r).data(), b.replicate(r).data());
        }
        // distinct noise per replicate, shared underlying truth
        assert_ne!(a.replicate(0).data(), a.replicate(1).data());
        let c = generate_dataset(&model, 20, (0.0, 2.0), 0.0, 2, 7).unwrap();
        for r in 0..2 {
            assert_eq!(c.replicate(r).data(), c.truth_for_evaluation().data());
        }
    }

    #[test]
    fn noise_scale_matches_the_requested_sd() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let ds = generate_dataset(&model, 100, (0.0, 10.0), 2.0, 10, 11).unwrap();
        let truth = ds.truth_for_evaluation();
        let mut sq = 0.0;
        let mut count = 0usize;
        for rep in ds.replicates() {
            for i in 0..100 {
                for k in 0..2 {
                    let r = rep.get(i, k) - truth.get(i, k);
                    sq += r * r;
                    count += 1;
                }
            }
        }
        let sd = (sq / count as f64).sqrt();
        assert!((sd - 2.0).abs() < 0.1, "noise sd {sd}");
    }

    #[test]
    fn canonical_references_pass_the_convergence_gate() {
        for id in [ModelId::LotkaVolterra, ModelId::DampedOscillator, ModelId::Lorenz] {
            let model = BenchmarkModel::new(id);
            let spec = model.canonical_spec();
            let ds = generate_dataset(
                &model,
                spec.n_points,
                spec.t_span,
                spec.noise_sd,
                1,
                3,
            );
            assert!(ds.is_ok(), "{id:?}: {:?}", ds.err());
        }
    }

    #[test]
    fn hopelessly_coarse_integration_is_refused() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let err = generate_dataset_with_substeps(&model, 5, (0.0, 10.0), 0.0, 1, 1, 1);
        assert!(err.is_err());
    }

    #[test]
    fn pooled_batches_pool_every_replicate_window() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let ds = generate_dataset(&model, 20, (0.0, 2.0), 0.5, 3, 9).unwrap();
        let batch = ds.pooled_batches(12, None).unwrap();
        assert_eq!(batch.n_windows(), 3 * 9);
        assert_eq!(batch.dim(), 2);
        assert_eq!(batch.window_len(), 12);
        let dt = ds.times()[1] - ds.times()[0];
        assert!((batch.dt() - dt).abs() < 1e-15);

        let (pt, pv) = ds.pooled_scatter();
        assert_eq!(pt.len(), 60);
        assert_eq!(pv.rows(), 60);
        assert_eq!(pt[0], pt[20]);
    }

    #[test]
    fn pooled_batches_take_window_starts_from_full_grid_overrides() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let ds = generate_dataset(&model, 10, (0.0, 1.0), 0.5, 2, 9).unwrap();
        // Distinct per-replicate series on the observation grid.
        let series: Vec<Tensor> = (0..2)
            .map(|r| {
                let rows: Vec<Vec<f64>> = (0..10)
                    .map(|i| vec![100.0 * r as f64 + i as f64, 0.5 * i as f64])
                    .collect();
                Tensor::from_rows(&rows).unwrap()
            })
            .collect();
        let batch = ds.pooled_batches(4, Some(&series)).unwrap();
        // 7 windows per replicate; window w of replicate r starts at row w.
        assert_eq!(batch.n_windows(), 14);
        let inits = batch.initial_states();
        for r in 0..2 {
            for w in 0..7 {
                assert_eq!(inits.get(r * 7 + w, 0), 100.0 * r as f64 + w as f64);
                assert_eq!(inits.get(r * 7 + w, 1), 0.5 * w as f64);
            }
        }

        // Wrong grid length is refused.
        let short = vec![Tensor::zeros(7, 2), Tensor::zeros(7, 2)];
        assert!(ds.pooled_batches(4, Some(&short)).is_err());
    }

    #[test]
    fn cubic_data_hits_the_clean_values_without_noise() {
        let (xs, ys) = cubic_static_data(5, (-1.0, 1.0), 0.0, 1).unwrap();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        // 1 + x + 2x^2 + 4x^3 at the grid
        assert_eq!(ys[2], 1.0);
        assert!((ys[4] - 8.0).abs() < 1e-14);
        assert!((ys[0] - (-2.0)).abs() < 1e-14);

        let (xs200, noisy) = cubic_static_data(200, (-1.25, 1.25), 9.0, 989).unwrap();
        let (_, noisy2) = cubic_static_data(200, (-1.25, 1.25), 9.0, 989).unwrap();
        assert_eq!(noisy, noisy2);
        let resid_sd = {
            let model = BenchmarkModel::new(ModelId::CubicStatic);
            let mut sq = 0.0;
            for (x, y) in xs200.iter().zip(&noisy) {
                let r = y - model.true_form().eval_output(0, &[*x]);
                sq += r * r;
            }
            (sq / 200.0).sqrt()
        };
        assert!((resid_sd - 3.0).abs() < 0.45, "noise sd {resid_sd}");
    }

    #[test]
    fn zero_net_hybrid_equals_the_true_rhs() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let arch = PolyNetArch::new(2, 2, 3, 2).unwrap();
        let theta = vec![0.0; arch.count_params()];
        let sys = hybrid_system(model.true_form(), &arch, &theta).unwrap();
        let mut rng = RngStream::new(6);
        for _ in 0..20 {
            let y = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
            let mut out = [0.0; 2];
            sys.eval(0.0, &y, &mut out);
            let want = model.eval_rhs(&y).unwrap();
            assert_eq!(out.as_slice(), want.as_slice());
        }
    }

    #[test]
    fn zero_known_hybrid_equals_the_net_alone() {
        let empty = PolynomialForm::new(2, 2);
        let arch = PolyNetArch::new(2, 2, 3, 2).unwrap();
        let mut rng = RngStream::new(8);
        let theta: Vec<f64> = (0..arch.count_params()).map(|_| rng.range(-0.5, 0.5)).collect();
        let sys = hybrid_system(&empty, &arch, &theta).unwrap();
        for _ in 0..20 {
            let y = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
            let mut out = [0.0; 2];
            sys.eval(0.0, &y, &mut out);
            let want = arch.forward(&theta, &y).unwrap();
            assert_eq!(out.as_slice(), want.as_slice());
        }
    }

    #[test]
    fn tape_hybrid_matches_the_plain_hybrid_on_a_batch() {
        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let arch = PolyNetArch::new(2, 2, 3, 3).unwrap();
        let mut rng = RngStream::new(13);
        let theta: Vec<f64> = (0..arch.count_params()).map(|_| rng.range(-0.3, 0.3)).collect();
        let sys = hybrid_system(model.true_form(), &arch, &theta).unwrap();

        let batch = 5;
        let states: Vec<f64> = (0..2 * batch).map(|_| rng.range(-1.5, 1.5)).collect();
        let mut tape = Tape::new();
        let theta_var = tape.input_col(&theta);
        let net = arch.bind(&mut tape, theta_var).unwrap();
        let rhs = HybridTapeRhs::new(model.true_form(), net).unwrap();
        let y = tape.constant_slice(2, batch, &states);
        let out = rhs.eval(&mut tape, 0.0, y).unwrap();
        assert_eq!(tape.dims(out), (2, batch));

        let vals = tape.value(out).to_vec();
        for c in 0..batch {
            let yc = [states[c], states[batch + c]];
            let mut want = [0.0; 2];
            sys.eval(0.0, &yc, &mut want);
            for k in 0..2 {
                let got = vals[k * batch + c];
                assert!(
                    (got - want[k]).abs() <= 1e-12,
                    "column {c} output {k}: {got} vs {}",
                    want[k]
                );
            }
        }
    }

    #[test]
    fn hybrid_training_gradient_matches_finite_differences() {
        use crate::odeint::integrate_window_tape;

        let model = BenchmarkModel::new(ModelId::LotkaVolterra);
        let arch = PolyNetArch::new(2, 2, 2, 2).unwrap();
        let mut rng = RngStream::new(21);
        let theta: Vec<f64> = (0..arch.count_params()).map(|_| rng.range(-0.2, 0.2)).collect();

        let loss = |tape: &mut Tape, tv: Var| -> Result<Var> {
            let net = arch.bind(tape, tv)?;
            let rhs = HybridTapeRhs::new(model.true_form(), net)?;
            let y0 = tape.constant_slice(2, 1, &[1.0, 1.0]);
            let states = integrate_window_tape(tape, &rhs, y0, 2, 0.125, 2)?;
            let last = states[2];
            let sq = tape.square(last)?;
            tape.sum(sq)
        };

        let (val, grad) = value_and_grad(loss, &theta).unwrap();
        assert!(val.is_finite());
        assert!(grad.iter().any(|g| g.abs() > 1e-8), "gradient identically zero");

        let h = 1e-6;
        for j in [0, theta.len() / 2, theta.len() - 1] {
            let eval_at = |tj: f64| -> f64 {
                let mut th = theta.clone();
                th[j] = tj;
                let (v, _) = value_and_grad(loss, &th).unwrap();
                v
            };
            let fd = (eval_at(theta[j] + h) - eval_at(theta[j] - h)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-5, "coord {j}: ad {} vs fd {fd}", grad[j]);
        }
    }

    #[test]
    fn hybrid_dimension_mismatches_are_rejected() {
        let lv = BenchmarkModel::new(ModelId::LotkaVolterra);
        let arch3 = PolyNetArch::new(3, 3, 2, 2).unwrap();
        let theta = vec![0.0; arch3.count_params()];
        assert!(hybrid_system(lv.true_form(), &arch3, &theta).is_err());

        let arch2 = PolyNetArch::new(2, 2, 2, 2).unwrap();
        assert!(hybrid_system(lv.true_form(), &arch2, &[0.0; 3]).is_err());

        let mut tape = Tape::new();
        let tv = tape.input_col(&vec![0.0; arch3.count_params()]);
        let net = arch3.bind(&mut tape, tv).unwrap();
        assert!(HybridTapeRhs::new(lv.true_form(), net).is_err());
    }
}
