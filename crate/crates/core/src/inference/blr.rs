//! Closed-form linear-regression posterior used as the exact baseline the
//! network pipeline is judged against.

use crate::error::{Error, Result};
use crate::matrix::{inverse_spd, solve_spd};
use crate::nd::Tensor;

use super::{CovarianceSource, GaussianPosterior, Warning};

/// Least-squares fit with a Gaussian posterior: mean is the normal-equations
/// solution, the noise variance is the mean squared residual, and the
/// covariance is beta2 (X^T X)^{-1}. A singular design is refused. Zero
/// residuals collapse the covariance to zero and are flagged.
pub fn bayesian_linear_regression(x: &Tensor, y: &[f64]) -> Result<GaussianPosterior> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            context: "bayesian_linear_regression",
            expected: format!("{n} responses"),
            got: format!("{}", y.len()),
        });
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("design matrix must be non-empty"));
    }
    if n < p {
        return Err(Error::invalid(format!(
            "need at least as many rows as columns, got {n} rows for {p} coefficients"
        )));
    }

    let xtx = x.transposed().matmul(x)?;
    let mut xty = vec![0.0; p];
    for i in 0..n {
        let row = x.row(i);
        for j in 0..p {
            xty[j] += row[j] * y[i];
        }
    }
    let mean = solve_spd(&xtx, &xty)?;

    let mut ssr = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let pred: f64 = row.iter().zip(&mean).map(|(a, b)| a * b).sum();
        let r = y[i] - pred;
        ssr += r * r;
    }
    let beta2 = ssr / n as f64;

    let inv = inverse_spd(&xtx)?;
    let mut cov = inv;
    for v in cov.data_mut() {
        *v *= beta2;
    }
    let mut post = GaussianPosterior::new(mean, cov, CovarianceSource::Exact)?;
    if beta2 == 0.0 {
        post.push_warning(Warning::DegenerateResiduals);
    }
    Ok(post)
}
