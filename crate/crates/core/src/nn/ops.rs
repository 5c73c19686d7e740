//! Scalar activation kernels shared by the tape and the value-level paths.

/// Numerically safe softplus, `ln(1 + e^x)`.
///
/// For positive x the identity `softplus(x) = x + ln(1 + e^-x)` avoids
/// overflow; for large x the correction underflows to zero and the result
/// is exactly x.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(v_k)` with max subtraction.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Stable softmax over a slice, writing the probabilities in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Softmax of a vector into a fresh allocation.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Log-density of N(mu, sigma^2) at z.
pub fn normal_log_pdf(z: f64, mu: f64, sigma: f64) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    let u = (z - mu) / sigma;
    -HALF_LN_2PI - sigma.ln() - 0.5 * u * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softplus_closed_forms() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        // asymptotes
        assert_abs_diff_eq!(softplus(100.0), 100.0, epsilon = 1e-9);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0);
        assert_abs_diff_eq!(tiny, (-100.0f64).exp(), epsilon = 1e-60);
    }

    #[test]
    fn softplus_dominates_relu_by_at_most_ln2() {
        for &x in &[-50.0, -3.0, -0.1, 0.0, 0.1, 3.0, 50.0] {
            let gap = softplus(x) - x.max(0.0);
            assert!((0.0..=std::f64::consts::LN_2 + 1e-15).contains(&gap), "x={x} gap={gap}");
        }
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let s = softmax(&[0.0, 0.0]);
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-15);

        let s = softmax(&[7.0, 7.0, 7.0]);
        for p in s {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }

        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[1.0 + 123.0, 2.0 + 123.0, 3.0 + 123.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        // Reference values computed with 50-digit arithmetic from
        // e^k / (e^1 + e^2 + e^3).
        let s = softmax(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(s[0], 0.090_030_573_170_380_46, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.244_728_471_054_797_7, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], 0.665_240_955_774_821_9, epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_matches_naive_sum() {
        let v = [1.0, 2.0, 3.0];
        let naive: f64 = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(logsumexp(&v), naive, epsilon = 1e-12);
        // huge inputs stay finite
        assert!(logsumexp(&[1e4, 1e4 + 1.0]).is_finite());
    }
}
