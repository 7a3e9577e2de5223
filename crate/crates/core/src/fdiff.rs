use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar-valued function, the independent
/// oracle every analytic backward pass is checked against.
///
/// Perturbs one coordinate at a time: (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    assert!(h > 0.0, "step size must be positive");
    let mut grad = vec![0.0; x.len()];
    let base = x.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::from_parts(x.shape().to_vec(), plus, false))?;
        let fm = f(&Tensor::from_parts(x.shape().to_vec(), minus, false))?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteFunctionValue);
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), grad, false))
}

/// Worst per-element relative error between an analytic gradient and its
/// finite-difference estimate, with |a|+|n| in the denominator so exact
/// zero agreements count as zero error.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data().iter())
        .map(|(&a, &n)| {
            let denom = (a.abs() + n.abs()).max(1e-8);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::GradTape;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 5.0, 2.2], false).unwrap();
        let g = finite_difference_grad(
            |t| Ok(t.data().iter().sum()),
            &x,
            1e-5,
        )
        .unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9, "got {v}");
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(vec![1], vec![3.0], false).unwrap();
        let g = finite_difference_grad(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_function() {
        let x = Tensor::new(vec![1], vec![0.0], false).unwrap();
        let err = finite_difference_grad(|_| Ok(f64::NAN), &x, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFunctionValue));
    }

    #[test]
    fn matmul_backward_matches_central_differences() {
        let a = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 1.7, -0.4], true).unwrap();
        let b = Tensor::new(vec![3, 2], vec![1.2, 0.1, -0.7, 2.2, 0.9, -1.5], true).unwrap();

        let mut tape = GradTape::new();
        let prod = tape.matmul(&a, &b).unwrap();
        let loss = tape.sum(&prod).unwrap();
        let grads = tape.backward(&loss).unwrap();

        let fd_a = finite_difference_grad(
            |pa| {
                let mut t = GradTape::inference();
                let prod = t.matmul(pa, &b)?;
                Ok(prod.data().iter().sum())
            },
            &a,
            1e-5,
        )
        .unwrap();
        let fd_b = finite_difference_grad(
            |pb| {
                let mut t = GradTape::inference();
                let prod = t.matmul(&a, pb)?;
                Ok(prod.data().iter().sum())
            },
            &b,
            1e-5,
        )
        .unwrap();

        assert!(max_relative_error(&grads.wrt(&a), &fd_a) < 1e-6);
        assert!(max_relative_error(&grads.wrt(&b), &fd_b) < 1e-6);
    }
}
