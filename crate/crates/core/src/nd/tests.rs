use crate::error::{Error, Result};
use crate::nd::tape::{hessian_fd, per_sample_grads, value_and_grad, value_and_grad_in, Tape, Var};
use crate::nd::tensor::Tensor;

/// Central finite differences, the reference gradient for every AD check.
fn fd_grad(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let mut w = theta.to_vec();
    for i in 0..theta.len() {
        w[i] = theta[i] + h;
        let fp = f(&w);
        w[i] = theta[i] - h;
        let fm = f(&w);
        w[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn assert_grad_close(ad: &[f64], fd: &[f64], tol: f64) {
    for (i, (a, b)) in ad.iter().zip(fd).enumerate() {
        let denom = b.abs().max(1.0);
        assert!(
            ((a - b) / denom).abs() <= tol,
            "component {i}: ad {a} vs fd {b}"
        );
    }
}

#[test]
fn square_value_and_grad_at_three() {
    let (v, g) = value_and_grad(
        |t, th| {
            let s = t.slice(th, 0, 1)?;
            t.square(s)
        },
        &[3.0],
    )
    .unwrap();
    assert_eq!(v, 9.0);
    assert_eq!(g, vec![6.0]);
}

#[test]
fn sum_gradient_is_all_ones() {
    let theta: Vec<f64> = (0..7).map(|i| i as f64 * 0.37 - 1.0).collect();
    let (v, g) = value_and_grad(|t, th| t.sum(th), &theta).unwrap();
    assert!((v - theta.iter().sum::<f64>()).abs() < 1e-15);
    assert_eq!(g, vec![1.0; 7]);
}

/// Exercises matmul, transpose, concat, slice, elementwise transcendentals,
/// division, and reductions in one function, then checks against central
/// differences.
fn composite_loss(t: &mut Tape, th: Var) -> Result<Var> {
    let a = t.slice(th, 0, 4)?;
    let a = t.reshape(a, 2, 2)?;
    let b = t.slice(th, 4, 2)?;
    let x = t.constant_slice(3, 2, &[0.5, -0.3, 1.2, 0.8, -0.7, 0.1]);
    let at = t.transpose(a)?;
    let h = t.matmul(x, at)?; // 3x2
    let sh = t.sin(h)?;
    let eh = t.scale(h, 0.3)?;
    let eh = t.exp(eh)?;
    let g = t.add(sh, eh)?;
    let ones = t.ones_const(3, 1);
    let wide = t.concat_cols(g, ones)?; // 3x3
    let sq = t.square(wide)?;
    let s1 = t.sum(sq)?;
    let bsq = t.square(b)?;
    let bsq1 = t.add_scalar(bsq, 1.0)?;
    let lb = t.ln(bsq1)?;
    let s2 = t.sum(lb)?;
    let hsum = t.sum(h)?;
    let hs = t.square(hsum)?;
    let hs1 = t.add_scalar(hs, 1.0)?;
    let s3 = t.sqrt(hs1)?;
    let denom = t.add_scalar(bsq, 2.0)?;
    let ratio = t.div(lb, denom)?;
    let s4 = t.sum(ratio)?;
    let t01 = t.add(s1, s2)?;
    let t02 = t.add(s3, s4)?;
    let neg = t.neg(t02)?;
    let two = t.scale(neg, -2.0)?;
    t.add(t01, two)
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let theta = [0.4, -0.9, 1.3, 0.2, -0.6, 0.8];
    let (_, g) = value_and_grad(composite_loss, &theta).unwrap();
    let f = |w: &[f64]| value_and_grad(composite_loss, w).unwrap().0;
    let fd = fd_grad(&f, &theta, 1e-6);
    assert_grad_close(&g, &fd, 1e-6);
}

#[test]
fn gradient_is_linear_in_the_loss() {
    // grad(2f + 3g) == 2 grad(f) + 3 grad(g)
    let theta = [0.3, -0.2, 0.9, 1.1, 0.5, -0.4];
    let f_only = |t: &mut Tape, th: Var| composite_loss(t, th);
    let g_only = |t: &mut Tape, th: Var| {
        let s = t.square(th)?;
        t.sum(s)
    };
    let (_, gf) = value_and_grad(f_only, &theta).unwrap();
    let (_, gg) = value_and_grad(g_only, &theta).unwrap();
    let combo = |t: &mut Tape, th: Var| {
        let a = composite_loss(t, th)?;
        let b = g_only(t, th)?;
        let a2 = t.scale(a, 2.0)?;
        let b3 = t.scale(b, 3.0)?;
        t.add(a2, b3)
    };
    let (_, gc) = value_and_grad(combo, &theta).unwrap();
    for i in 0..theta.len() {
        let want = 2.0 * gf[i] + 3.0 * gg[i];
        assert!((gc[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn per_sample_rows_match_hand_derivative() {
    // term_i = (theta - d_i)^2, grad row i = 2 (theta - d_i)
    let data = [1.0, 2.0, 3.0];
    let rows = per_sample_grads(
        |t, th, d: &f64| {
            let c = t.constant_scalar(*d);
            let r = t.sub(th, c)?;
            let sq = t.square(r)?;
            t.sum(sq)
        },
        &[1.0],
        &data,
    )
    .unwrap();
    assert_eq!(rows.rows(), 3);
    assert_eq!(rows.row(0), &[0.0]);
    assert_eq!(rows.row(1), &[-2.0]);
    assert_eq!(rows.row(2), &[-4.0]);
}

#[test]
fn single_datum_row_equals_value_and_grad() {
    let theta = [0.7, -0.3];
    let term = |t: &mut Tape, th: Var, d: &f64| {
        let c = t.constant_scalar(*d);
        let s = t.sum(th)?;
        let r = t.sub(s, c)?;
        t.square(r)
    };
    let rows = per_sample_grads(term, &theta, &[2.5]).unwrap();
    let (_, g) = value_and_grad(|t, th| term(t, th, &2.5), &theta).unwrap();
    assert_eq!(rows.row(0), g.as_slice());
}

#[test]
fn non_finite_intermediate_names_the_operation() {
    let err = value_and_grad(
        |t, th| {
            let l = t.ln(th)?; // ln of a negative input
            t.sum(l)
        },
        &[-1.0],
    )
    .unwrap_err();
    match err {
        Error::NonFinite { op, .. } => assert_eq!(op, "ln"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn overflow_is_detected_not_propagated() {
    let err = value_and_grad(
        |t, th| {
            let mut v = th;
            for _ in 0..10 {
                v = t.exp(v)?;
            }
            t.sum(v)
        },
        &[100.0],
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "exp", .. }));
}

#[test]
fn shape_mismatch_is_reported_with_context() {
    let err = value_and_grad(
        |t, th| {
            let m = t.constant_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
            let bad = t.add(th, m)?; // th is 3x1
            t.sum(bad)
        },
        &[1.0, 2.0, 3.0],
    )
    .unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { context: "add", .. }));
}

#[test]
fn backward_requires_scalar_output() {
    let err = value_and_grad(|t, th| t.square(th), &[1.0, 2.0]).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { context: "value_and_grad", .. }));
}

#[test]
fn hessian_of_quadratic_recovers_the_matrix() {
    // f = 0.5 theta^T A theta with symmetric A: Hessian is exactly A.
    let a = Tensor::new(3, 3, vec![4.0, 1.0, -0.5, 1.0, 3.0, 0.2, -0.5, 0.2, 2.0]).unwrap();
    let a2 = a.clone();
    let h = hessian_fd(
        move |t, th| {
            let ac = t.constant(&a2);
            let ath = t.matmul(ac, th)?;
            let q = t.mul(th, ath)?;
            let s = t.sum(q)?;
            t.scale(s, 0.5)
        },
        &[0.3, -1.0, 0.7],
    )
    .unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!(
                (h.get(i, j) - a.get(i, j)).abs() < 1e-8,
                "H[{i},{j}] = {} vs {}",
                h.get(i, j),
                a.get(i, j)
            );
        }
    }
}

#[test]
fn gram_energy_matches_direct_inverse_computation() {
    // K = B B^T + 2I, y fixed; reference value from explicit inverse and
    // determinant rather than the Cholesky path under test.
    let b = Tensor::new(3, 3, vec![1.0, 0.3, 0.0, -0.2, 1.5, 0.4, 0.6, -0.1, 0.9]).unwrap();
    let mut k = b.matmul(&b.transposed()).unwrap();
    for i in 0..3 {
        k.set(i, i, k.get(i, i) + 2.0);
    }
    let y = [0.5, -1.0, 2.0];

    let m = crate::matrix::to_dmatrix(&k);
    let inv = m.clone().try_inverse().unwrap();
    let yv = nalgebra::DVector::from_row_slice(&y);
    let want = 0.5 * (yv.transpose() * &inv * &yv)[(0, 0)] + 0.5 * m.determinant().ln();

    let mut tape = Tape::new();
    let kc = tape.constant(&k);
    let (e, jitter) = tape.gram_energy(kc, &y).unwrap();
    assert_eq!(jitter, 0.0);
    assert!((tape.scalar_value(e) - want).abs() < 1e-10);
}

#[test]
fn gram_energy_gradient_matches_finite_differences() {
    // K(theta) = K0 + theta_0 * I + theta_1 * J where J is a fixed symmetric
    // perturbation; energy gradient flows through the custom op.
    let b = Tensor::new(3, 3, vec![1.2, 0.1, -0.3, 0.0, 0.8, 0.5, 0.4, 0.2, 1.1]).unwrap();
    let k0 = {
        let mut k = b.matmul(&b.transposed()).unwrap();
        for i in 0..3 {
            k.set(i, i, k.get(i, i) + 1.5);
        }
        k
    };
    let j = Tensor::new(3, 3, vec![0.2, 0.1, 0.0, 0.1, 0.3, -0.1, 0.0, -0.1, 0.25]).unwrap();
    let y = [1.0, -0.5, 0.7];
    let loss = {
        let k0 = k0.clone();
        let j = j.clone();
        move |t: &mut Tape, th: Var| -> Result<Var> {
            let k0c = t.constant(&k0);
            let jc = t.constant(&j);
            let eye = t.constant(&Tensor::eye(3));
            let t0 = t.slice(th, 0, 1)?;
            let t1 = t.slice(th, 1, 1)?;
            let d0 = t.mul(t0, eye)?;
            let d1 = t.mul(t1, jc)?;
            let k = t.add(k0c, d0)?;
            let k = t.add(k, d1)?;
            let (e, _) = t.gram_energy(k, &y)?;
            Ok(e)
        }
    };
    let theta = [0.4, 0.6];
    let (_, g) = value_and_grad(&loss, &theta).unwrap();
    let f = |w: &[f64]| value_and_grad(&loss, w).unwrap().0;
    let fd = fd_grad(&f, &theta, 1e-6);
    assert_grad_close(&g, &fd, 1e-6);
}

#[test]
fn reused_tape_reproduces_fresh_tape_results() {
    let theta = [0.4, -0.9, 1.3, 0.2, -0.6, 0.8];
    let (v0, g0) = value_and_grad(composite_loss, &theta).unwrap();
    let mut tape = Tape::new();
    for _ in 0..3 {
        let (v, g) = value_and_grad_in(&mut tape, composite_loss, &theta).unwrap();
        assert_eq!(v.to_bits(), v0.to_bits());
        assert_eq!(g, g0);
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// AD agrees with central differences across the composite's domain.
        #[test]
        fn composite_grad_matches_fd(raw in proptest::collection::vec(-1.5f64..1.5, 6)) {
            let (_, g) = value_and_grad(composite_loss, &raw).unwrap();
            let f = |w: &[f64]| value_and_grad(composite_loss, w).unwrap().0;
            let fd = fd_grad(&f, &raw, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                let denom = b.abs().max(1.0);
                prop_assert!(((a - b) / denom).abs() <= 1e-5);
            }
        }
    }
}
