//! Explicit Runge-Kutta-Fehlberg integration and sliding-window trajectory
//! batching.
//!
//! The fourth-order embedded solution propagates the state (its k6 weight is
//! zero, so pure propagation needs five stages); the fifth-order weights are
//! evaluated only when an error estimate is requested. Steps are fixed at the
//! observation spacing divided by `substeps`, keeping the compute per epoch
//! constant and the whole trajectory differentiable on the tape.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nd::{Tape, Tensor, Var};
use crate::polynet::BoundNet;

pub const RKF_C: [f64; 6] = [0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5];
pub const RKF_A: [[f64; 5]; 5] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
pub const RKF_B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
pub const RKF_B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

/// A right-hand side dy/dt = f(t, y) with a fixed state dimension.
pub struct OdeSystem<'a> {
    dim: usize,
    rhs: Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a>,
}

impl<'a> OdeSystem<'a> {
    pub fn new(dim: usize, rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a) -> Self {
        Self { dim, rhs: Box::new(rhs) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, out)
    }
}

struct Stages {
    k: [Vec<f64>; 6],
    ytmp: Vec<f64>,
}

impl Stages {
    fn new(dim: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; dim]), ytmp: vec![0.0; dim] }
    }
}

/// One fixed step of size h from (t, y), writing the update into y.
/// When `err_out` is given, the sixth stage is evaluated and the embedded
/// 4th/5th-order difference is stored there.
fn rkf_step(sys: &OdeSystem, t: f64, h: f64, y: &mut [f64], st: &mut Stages, err_out: Option<&mut [f64]>) {
    let n_stages = if err_out.is_some() { 6 } else { 5 };
    sys.eval(t, y, &mut st.k[0]);
    for s in 1..n_stages {
        st.ytmp.copy_from_slice(y);
        for j in 0..s {
            let ha = h * RKF_A[s - 1][j];
            if ha != 0.0 {
                for (yt, kj) in st.ytmp.iter_mut().zip(&st.k[j]) {
                    *yt += ha * kj;
                }
            }
        }
        let (kprev, kcur) = st.k.split_at_mut(s);
        let _ = kprev;
        sys.eval(t + RKF_C[s] * h, &st.ytmp, &mut kcur[0]);
    }
    if let Some(err) = err_out {
        for e in err.iter_mut() {
            *e = 0.0;
        }
        for s in 0..6 {
            let w = h * (RKF_B5[s] - RKF_B4[s]);
            if w != 0.0 {
                for (e, ks) in err.iter_mut().zip(&st.k[s]) {
                    *e += w * ks;
                }
            }
        }
    }
    for s in 0..5 {
        let hb = h * RKF_B4[s];
        if hb != 0.0 {
            for (yi, ks) in y.iter_mut().zip(&st.k[s]) {
                *yi += hb * ks;
            }
        }
    }
}

fn validate_grid(sys: &OdeSystem, y0: &[f64], t0: f64, ts: &[f64]) -> Result<()> {
    if y0.len() != sys.dim() {
        return Err(Error::ShapeMismatch {
            context: "integrate initial state",
            expected: format!("{}", sys.dim()),
            got: format!("{}", y0.len()),
        });
    }
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    if ts.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if t0 > ts[0] {
        return Err(Error::invalid("t0 lies after the first grid point"));
    }
    for w in ts.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
    }
    Ok(())
}

/// Integrate from y0 at t0 across the grid `ts` (one row per grid point,
/// propagated from t0 to ts[0] first when they differ).
pub fn integrate(sys: &OdeSystem, y0: &[f64], t0: f64, ts: &[f64]) -> Result<Tensor> {
    integrate_substeps(sys, y0, t0, ts, 1)
}

/// `integrate` with each grid interval split into `substeps` internal steps.
pub fn integrate_substeps(
    sys: &OdeSystem,
    y0: &[f64],
    t0: f64,
    ts: &[f64],
    substeps: usize,
) -> Result<Tensor> {
    integrate_impl(sys, y0, t0, ts, substeps, None).map(|(tr, _)| tr)
}

/// Like `integrate_substeps`, additionally returning the largest embedded
/// 4th/5th-order error estimate (infinity norm) seen over all steps.
pub fn integrate_with_error(
    sys: &OdeSystem,
    y0: &[f64],
    t0: f64,
    ts: &[f64],
    substeps: usize,
) -> Result<(Tensor, f64)> {
    let mut err = vec![0.0; sys.dim()];
    integrate_impl(sys, y0, t0, ts, substeps, Some(&mut err))
}

/// Integrate over the uniform grid t0, t0+dt, ..., t0+(n_points-1)dt,
/// stepping with exactly h = dt/substeps everywhere. This is the stepping
/// used for window batches: every window sees a bit-identical step size, so
/// identical initial states give identical trajectories. The first row is
/// y0 itself.
pub fn integrate_fixed_grid(
    sys: &OdeSystem,
    y0: &[f64],
    t0: f64,
    dt: f64,
    n_points: usize,
    substeps: usize,
) -> Result<Tensor> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if n_points == 0 {
        return Err(Error::invalid("time grid is empty"));
    }
    validate_grid(sys, y0, t0, &[t0])?;
    let d = sys.dim();
    let mut y = y0.to_vec();
    let mut st = Stages::new(d);
    let mut out = Tensor::zeros(n_points, d);
    out.row_mut(0).copy_from_slice(&y);
    let h = dt / substeps as f64;
    for interval in 0..n_points - 1 {
        for s in 0..substeps {
            let t_sub = t0 + interval as f64 * dt + s as f64 * h;
            rkf_step(sys, t_sub, h, &mut y, &mut st, None);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Blowup { t: t_sub + h });
            }
        }
        out.row_mut(interval + 1).copy_from_slice(&y);
    }
    Ok(out)
}

fn integrate_impl(
    sys: &OdeSystem,
    y0: &[f64],
    t0: f64,
    ts: &[f64],
    substeps: usize,
    mut err_track: Option<&mut Vec<f64>>,
) -> Result<(Tensor, f64)> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    validate_grid(sys, y0, t0, ts)?;
    let d = sys.dim();
    let mut y = y0.to_vec();
    let mut st = Stages::new(d);
    let mut out = Tensor::zeros(ts.len(), d);
    let mut worst_err = 0.0f64;
    let mut t_left = t0;
    for (row, &t_right) in ts.iter().enumerate() {
        let gap = t_right - t_left;
        if gap > 0.0 {
            let h = gap / substeps as f64;
            for s in 0..substeps {
                let t_sub = t_left + s as f64 * h;
                match err_track.as_deref_mut() {
                    Some(err) => {
                        rkf_step(sys, t_sub, h, &mut y, &mut st, Some(err));
                        for e in err.iter() {
                            worst_err = worst_err.max(e.abs());
                        }
                    }
                    None => rkf_step(sys, t_sub, h, &mut y, &mut st, None),
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::Blowup { t: t_sub + h });
                }
            }
        }
        out.row_mut(row).copy_from_slice(&y);
        t_left = t_right;
    }
    Ok((out, worst_err))
}

/// Stride-1 sliding windows over a uniformly sampled series.
#[derive(Clone, Debug)]
pub struct TrajectoryBatchSet {
    initial_states: Tensor, // n_windows x d
    targets: Vec<Tensor>,   // per window: window_len x d, raw observations
    t_starts: Vec<f64>,
    dt: f64,
    window_len: usize,
}

impl TrajectoryBatchSet {
    pub fn n_windows(&self) -> usize {
        self.t_starts.len()
    }

    pub fn dim(&self) -> usize {
        self.initial_states.cols()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn initial_states(&self) -> &Tensor {
        &self.initial_states
    }

    pub fn targets(&self) -> &[Tensor] {
        &self.targets
    }

    pub fn t_starts(&self) -> &[f64] {
        &self.t_starts
    }

    /// The absolute time grid of window i.
    pub fn window_grid(&self, i: usize) -> Vec<f64> {
        (0..self.window_len).map(|j| self.t_starts[i] + j as f64 * self.dt).collect()
    }

    /// Initial states rearranged as a flat (d, n_windows) matrix, the batch
    /// layout used on the tape (column j = window j).
    pub fn initial_states_by_dim(&self) -> Vec<f64> {
        let (n, d) = (self.n_windows(), self.dim());
        let mut flat = vec![0.0; d * n];
        for w in 0..n {
            for k in 0..d {
                flat[k * n + w] = self.initial_states.get(w, k);
            }
        }
        flat
    }

    /// Step-j targets rearranged as a flat (d, n_windows) matrix.
    pub fn targets_by_dim(&self, step: usize) -> Vec<f64> {
        let (n, d) = (self.n_windows(), self.dim());
        let mut flat = vec![0.0; d * n];
        for w in 0..n {
            for k in 0..d {
                flat[k * n + w] = self.targets[w].get(step, k);
            }
        }
        flat
    }

    /// Pool several window sets (e.g. one per noise replicate) into one.
    /// All sets must share dt, window length, and dimension.
    pub fn merge(sets: impl IntoIterator<Item = Self>) -> Result<Self> {
        let mut iter = sets.into_iter();
        let mut merged = iter.next().ok_or_else(|| Error::invalid("merge of zero window sets"))?;
        for s in iter {
            if s.window_len != merged.window_len
                || s.dim() != merged.dim()
                || (s.dt - merged.dt).abs() > 1e-9 * merged.dt.abs().max(1.0)
            {
                return Err(Error::invalid("window sets to merge have mismatched shapes"));
            }
            let mut rows: Vec<Vec<f64>> =
                (0..merged.n_windows()).map(|i| merged.initial_states.row(i).to_vec()).collect();
            rows.extend((0..s.n_windows()).map(|i| s.initial_states.row(i).to_vec()));
            merged.initial_states = Tensor::from_rows(&rows)?;
            merged.targets.extend(s.targets);
            merged.t_starts.extend(s.t_starts);
        }
        Ok(merged)
    }
}

/// Cut a uniformly spaced series into stride-1 windows of `window_len`
/// points. Window initial states come from `init_overrides` when provided
/// (one row per window, e.g. smoothed values), else from the raw series;
/// targets are always the raw observations.
pub fn make_batches(
    times: &[f64],
    values: &Tensor,
    window_len: usize,
    init_overrides: Option<&Tensor>,
) -> Result<TrajectoryBatchSet> {
    let n = times.len();
    if values.rows() != n {
        return Err(Error::ShapeMismatch {
            context: "make_batches series",
            expected: format!("{n} rows"),
            got: format!("{} rows", values.rows()),
        });
    }
    if window_len < 2 {
        return Err(Error::invalid("window length must be at least 2"));
    }
    if window_len > n {
        return Err(Error::invalid("window length exceeds the series length"));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::invalid("times must be strictly increasing"));
    }
    for i in 1..n - 1 {
        let step = times[i + 1] - times[i];
        if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::invalid(format!(
                "times are not uniformly spaced: interval {i} has step {step}, expected {dt}"
            )));
        }
    }
    let n_windows = n - window_len + 1;
    let d = values.cols();
    if let Some(ov) = init_overrides {
        if ov.rows() != n_windows || ov.cols() != d {
            return Err(Error::ShapeMismatch {
                context: "make_batches init overrides",
                expected: format!("{n_windows}x{d}"),
                got: format!("{}x{}", ov.rows(), ov.cols()),
            });
        }
    }
    let init_rows: Vec<Vec<f64>> = (0..n_windows)
        .map(|i| match init_overrides {
            Some(ov) => ov.row(i).to_vec(),
            None => values.row(i).to_vec(),
        })
        .collect();
    let targets: Vec<Tensor> = (0..n_windows)
        .map(|i| {
            let rows: Vec<Vec<f64>> =
                (i..i + window_len).map(|r| values.row(r).to_vec()).collect();
            Tensor::from_rows(&rows)
        })
        .collect::<Result<_>>()?;
    Ok(TrajectoryBatchSet {
        initial_states: Tensor::from_rows(&init_rows)?,
        targets,
        t_starts: times[..n_windows].to_vec(),
        dt,
        window_len,
    })
}

/// Integrate every window from its initial state; row-for-row this is
/// exactly `integrate_fixed_grid` applied per window with the batch's
/// canonical dt (windows may run concurrently).
pub fn integrate_batch(
    sys: &OdeSystem,
    batch: &TrajectoryBatchSet,
    substeps: usize,
) -> Result<Vec<Tensor>> {
    (0..batch.n_windows())
        .into_par_iter()
        .map(|i| {
            integrate_fixed_grid(
                sys,
                batch.initial_states.row(i),
                batch.t_starts[i],
                batch.dt,
                batch.window_len,
                substeps,
            )
            .map_err(|e| match e {
                Error::Blowup { t } => Error::BlowupInWindow { window: i, t },
                other => other,
            })
        })
        .collect()
}

/// A right-hand side expressed in tape operations, evaluated on whole
/// batches of states at once: y has shape (d, batch), as does the result.
/// `t` is the elapsed time from the window start; autonomous systems
/// ignore it.
pub trait TapeRhs {
    fn dim(&self) -> usize;
    fn eval(&self, tape: &mut Tape, t: f64, y: Var) -> Result<Var>;
}

impl TapeRhs for BoundNet {
    fn dim(&self) -> usize {
        self.arch().n_inputs
    }

    fn eval(&self, tape: &mut Tape, _t: f64, y: Var) -> Result<Var> {
        self.forward(tape, y)
    }
}

/// One fixed RKF step of size h on the tape.
fn step_tape<R: TapeRhs + ?Sized>(tape: &mut Tape, rhs: &R, t: f64, y: Var, h: f64) -> Result<Var> {
    let mut k = Vec::with_capacity(5);
    k.push(rhs.eval(tape, t, y)?);
    for s in 1..5 {
        let mut acc = y;
        for j in 0..s {
            let ha = h * RKF_A[s - 1][j];
            if ha != 0.0 {
                let term = tape.scale(k[j], ha)?;
                acc = tape.add(acc, term)?;
            }
        }
        k.push(rhs.eval(tape, t + RKF_C[s] * h, acc)?);
    }
    let mut next = y;
    for s in 0..5 {
        let hb = h * RKF_B4[s];
        if hb != 0.0 {
            let term = tape.scale(k[s], hb)?;
            next = tape.add(next, term)?;
        }
    }
    Ok(next)
}

/// Integrate a batch of windows simultaneously on the tape over
/// `n_intervals` uniform intervals of length dt (each split into
/// `substeps`). Returns the per-grid-point states, starting with y0 itself:
/// n_intervals + 1 entries of shape (d, batch).
pub fn integrate_window_tape<R: TapeRhs + ?Sized>(
    tape: &mut Tape,
    rhs: &R,
    y0: Var,
    n_intervals: usize,
    dt: f64,
    substeps: usize,
) -> Result<Vec<Var>> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    let h = dt / substeps as f64;
    let mut states = Vec::with_capacity(n_intervals + 1);
    states.push(y0);
    let mut y = y0;
    for interval in 0..n_intervals {
        for s in 0..substeps {
            let t = interval as f64 * dt + s as f64 * h;
            y = step_tape(tape, rhs, t, y, h)?;
        }
        states.push(y);
    }
    Ok(states)
}
