//! Adam minimization over tape-built losses.

use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::nd::{value_and_grad_in, Tape, Var};

/// Settings for [`adam_minimize`].
#[derive(Clone, Copy, Debug)]
pub struct AdamOpts {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iters: usize,
}

impl AdamOpts {
    pub fn new(lr: f64, iters: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, iters }
    }
}

/// Minimize with Adam given a direct (value, gradient) evaluator.
///
/// `on_iter(iter, theta, loss)` sees the parameters the loss was evaluated
/// at and may stop early with `ControlFlow::Break`. Returns the last
/// evaluated parameters and loss. A non-finite loss aborts with
/// `Error::Diverged`.
pub fn adam_minimize_with<F, C>(
    mut eval: F,
    theta0: &[f64],
    opts: &AdamOpts,
    mut on_iter: C,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64) -> ControlFlow<()>,
{
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut loss = f64::INFINITY;

    for iter in 0..opts.iters {
        let (val, grad) = eval(&theta)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch: iter });
        }
        loss = val;
        if on_iter(iter, &theta, loss) == ControlFlow::Break(()) {
            break;
        }
        let t = (iter + 1) as f64;
        let bc1 = 1.0 - opts.beta1.powf(t);
        let bc2 = 1.0 - opts.beta2.powf(t);
        for i in 0..n {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= opts.lr * mhat / (vhat.sqrt() + opts.eps);
        }
    }
    Ok((theta, loss))
}

/// Minimize a scalar tape loss with Adam, starting from `theta0`.
///
/// `build` is called once per iteration to rebuild the loss on a reused
/// tape. See [`adam_minimize_with`] for the callback contract.
pub fn adam_minimize<F, C>(
    mut build: F,
    theta0: &[f64],
    opts: &AdamOpts,
    on_iter: C,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
    C: FnMut(usize, &[f64], f64) -> ControlFlow<()>,
{
    let mut tape = Tape::new();
    adam_minimize_with(
        |theta| value_and_grad_in(&mut tape, &mut build, theta),
        theta0,
        opts,
        on_iter,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_reaches_minimum() {
        // f(x) = sum (x_i - c_i)^2 with distinct targets.
        let target = [1.5, -2.0, 0.25];
        let build = |tape: &mut Tape, theta: Var| {
            let c = tape.constant_slice(3, 1, &[1.5, -2.0, 0.25]);
            let d = tape.sub(theta, c)?;
            let sq = tape.square(d)?;
            tape.sum(sq)
        };
        let opts = AdamOpts::new(0.05, 2000);
        let (theta, loss) =
            adam_minimize(build, &[0.0, 0.0, 0.0], &opts, |_, _, _| ControlFlow::Continue(()))
                .unwrap();
        assert!(loss < 1e-8, "loss {loss}");
        for (a, b) in theta.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn callback_can_stop_early() {
        let build = |tape: &mut Tape, theta: Var| {
            let sq = tape.square(theta)?;
            tape.sum(sq)
        };
        let opts = AdamOpts::new(0.1, 1000);
        let mut seen = 0usize;
        let (_, _) = adam_minimize(build, &[1.0], &opts, |iter, _, _| {
            seen = iter + 1;
            if iter >= 4 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
        })
        .unwrap();
        assert_eq!(seen, 5);
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        // ln of a negative number appears after the first step drags theta below zero.
        let build = |tape: &mut Tape, theta: Var| {
            let l = tape.ln(theta)?;
            tape.sum(l)
        };
        let opts = AdamOpts::new(10.0, 50);
        let err = adam_minimize(build, &[0.5], &opts, |_, _, _| ControlFlow::Continue(()));
        assert!(matches!(err, Err(Error::Diverged { .. }) | Err(Error::NonFinite { .. })));
    }
}
