//! Finite-difference verification helpers.
//!
//! Used by the test suites to compare analytic gradients against central
//! differences of a scalar function.

use ndarray::ArrayD;

/// Central-difference gradient of `f` with respect to every element of every
/// input, using a per-element step `eps * max(1, |x|)`.
pub fn finite_difference<F>(f: &F, inputs: &[ArrayD<f64>], eps: f64) -> Vec<ArrayD<f64>>
where
    F: Fn(&[ArrayD<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = ArrayD::zeros(inputs[i].raw_dim());
        let flat_len = inputs[i].len();
        for idx in 0..flat_len {
            let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
            let x = work[i].as_slice_mut().unwrap()[idx];
            let h = eps * x.abs().max(1.0);
            work[i].as_slice_mut().unwrap()[idx] = x + h;
            let fp = f(&work);
            work[i].as_slice_mut().unwrap()[idx] = x - h;
            let fm = f(&work);
            grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

/// Largest elementwise relative error between two gradients. Elements where
/// both magnitudes fall below `1e-8` are treated as matching zeros.
pub fn max_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0_f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let denom = a.abs().max(n.abs());
        if denom < 1e-8 {
            continue;
        }
        worst = worst.max((a - n).abs() / denom.max(1e-3));
    }
    worst
}
