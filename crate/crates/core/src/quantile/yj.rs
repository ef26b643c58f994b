//! Yeo-Johnson power transform and its inverse.

use crate::error::{FedError, Result};
use crate::num::Real;

/// Distance from a branch point within which the logarithmic branch is used.
pub const BRANCH_EPS: f64 = 1e-8;

fn near<T: Real>(lambda: T, point: f64) -> bool {
    (lambda - T::lit(point)).abs() < T::lit(BRANCH_EPS)
}

/// `h_λ(x)`.
pub fn yj_transform<T: Real>(x: T, lambda: T) -> T {
    if x >= T::zero() {
        if near(lambda, 0.0) {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else {
        let two = T::lit(2.0);
        if near(lambda, 2.0) {
            -(-x).ln_1p()
        } else {
            let e = two - lambda;
            -(e * (-x).ln_1p()).exp_m1() / e
        }
    }
}

/// Open image `h_λ(ℝ)`: all of ℝ for `0 ≤ λ ≤ 2`, `(−∞, −1/λ)` for `λ < 0`
/// and `(−1/(λ−2), ∞)` for `λ > 2`.
pub fn yj_range<T: Real>(lambda: T) -> (T, T) {
    let two = T::lit(2.0);
    if lambda < T::zero() && !near(lambda, 0.0) {
        (T::neg_infinity(), -T::one() / lambda)
    } else if lambda > two && !near(lambda, 2.0) {
        (-T::one() / (lambda - two), T::infinity())
    } else {
        (T::neg_infinity(), T::infinity())
    }
}

/// Inverse of [`yj_transform`]; `OutOfRange` outside [`yj_range`].
pub fn yj_inverse<T: Real>(z: T, lambda: T) -> Result<T> {
    let (lo, hi) = yj_range(lambda);
    if !(z > lo && z < hi) {
        return Err(FedError::OutOfRange {
            z: z.as_f64(),
            lambda: lambda.as_f64(),
        });
    }
    let x = if z >= T::zero() {
        if near(lambda, 0.0) {
            z.exp_m1()
        } else {
            ((lambda * z).ln_1p() / lambda).exp_m1()
        }
    } else {
        let two = T::lit(2.0);
        if near(lambda, 2.0) {
            -(-z).exp_m1()
        } else {
            let e = two - lambda;
            -((-e * z).ln_1p() / e).exp_m1()
        }
    };
    Ok(x)
}

/// `sign(x)·log(|x| + 1)`, the λ-free Jacobian term of the log-likelihood.
pub fn sign_log<T: Real>(x: T) -> T {
    if x >= T::zero() {
        x.ln_1p()
    } else {
        -(-x).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_examples() {
        for x in [-3.0, -0.5, 0.0, 0.7, 12.0] {
            assert!((yj_transform(x, 1.0f64) - x).abs() < 1e-15);
        }
        assert!((yj_transform(3.0f64, 0.0) - 4f64.ln()).abs() < 1e-15);
        assert!((yj_transform(-3.0f64, 2.0) + 4f64.ln()).abs() < 1e-15);
        assert!((yj_inverse(4f64.ln(), 0.0).unwrap() - 3.0).abs() < 1e-14);
        assert!(matches!(
            yj_inverse(-1.0f64, 3.0),
            Err(FedError::OutOfRange { .. })
        ));
        assert!(yj_inverse(-0.999f64, 3.0).is_ok());
        assert!(matches!(
            yj_inverse(1.0f64, -1.0),
            Err(FedError::OutOfRange { .. })
        ));
    }

    #[test]
    fn round_trip_grid() {
        for &l in &[-1.0f64, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            for i in -100..=100 {
                let x = i as f64;
                let z = yj_transform(x, l);
                let back = yj_inverse(z, l).unwrap();
                assert!(
                    (back - x).abs() < 1e-10 * x.abs().max(1.0),
                    "λ={l} x={x} back={back}"
                );
            }
        }
    }

    #[test]
    fn continuous_at_branch_points() {
        for x in [0.0f64, 0.3, 5.0, 40.0] {
            for d in [1e-6, -1e-6] {
                assert!((yj_transform(x, d) - yj_transform(x, 0.0)).abs() < 1e-4);
            }
        }
        for x in [-0.3f64, -5.0, -40.0] {
            for d in [1e-6, -1e-6] {
                assert!((yj_transform(x, 2.0 + d) - yj_transform(x, 2.0)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn strictly_increasing() {
        for &l in &[-2.0f64, -0.5, 0.0, 1.0, 2.0, 3.5] {
            let mut prev = f64::NEG_INFINITY;
            for i in -200..=200 {
                let h = yj_transform(i as f64 / 10.0, l);
                assert!(h > prev);
                prev = h;
            }
        }
    }
}
