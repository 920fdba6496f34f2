//! Yeo-Johnson power transform, its inverse and the derivatives the adaptive
//! layers need.
//!
//! Both branches are written as `L * phi(c * L)` with `phi(u) = expm1(u) / u`,
//! which is the power branch rearranged; inside the `1e-6` windows around the
//! removable singularities (`lambda = 0` for `x >= 0`, `lambda = 2` for
//! `x < 0`) `phi` is replaced by its Taylor series so the log-limit branch and
//! the power branch agree to rounding.

/// Width of the window around `lambda = 0` / `lambda = 2` that uses the
/// log-limit branch.
pub const LAMBDA_EPS: f64 = 1e-6;

/// `expm1(u) / u`, continuous at 0.
#[inline]
fn phi(u: f64) -> f64 {
    if u.abs() < 1e-5 {
        1.0 + u * (0.5 + u * (1.0 / 6.0 + u / 24.0))
    } else {
        u.exp_m1() / u
    }
}

/// `phi'(u) = (u e^u - expm1(u)) / u^2`.
#[inline]
fn phi_prime(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        // sum_{n>=2} (n-1)/n! u^(n-2)
        0.5 + u * (1.0 / 3.0 + u * (1.0 / 8.0 + u * (1.0 / 30.0 + u * (1.0 / 144.0 + u / 840.0))))
    } else {
        (u * u.exp() - u.exp_m1()) / (u * u)
    }
}

/// `ln(1 + v) / v`, continuous at 0.
#[inline]
fn psi(v: f64) -> f64 {
    if v.abs() < 1e-5 {
        1.0 - v * (0.5 - v * (1.0 / 3.0 - v / 4.0))
    } else {
        v.ln_1p() / v
    }
}

/// Scaled power branch `L * phi(c L)`; the series branch when `|c|` is inside
/// the singular window.
#[inline]
fn branch(l: f64, c: f64) -> f64 {
    if c.abs() < LAMBDA_EPS {
        let u = c * l;
        l * (1.0 + u * (0.5 + u / 6.0))
    } else {
        l * phi(c * l)
    }
}

pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return x;
    }
    if x >= 0.0 {
        branch(x.ln_1p(), lambda)
    } else {
        -branch((-x).ln_1p(), 2.0 - lambda)
    }
}

/// `d f / d x`.
pub fn yeo_johnson_dx(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        ((lambda - 1.0) * x.ln_1p()).exp()
    } else {
        ((1.0 - lambda) * (-x).ln_1p()).exp()
    }
}

/// `log(d f / d x)`, always finite for finite `x`.
pub fn yeo_johnson_log_dx(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        (lambda - 1.0) * x.ln_1p()
    } else {
        (1.0 - lambda) * (-x).ln_1p()
    }
}

/// `d f / d lambda`.
pub fn yeo_johnson_dlambda(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        let l = x.ln_1p();
        l * l * phi_prime(lambda * l)
    } else {
        let m = (-x).ln_1p();
        m * m * phi_prime((2.0 - lambda) * m)
    }
}

/// Inverse transform. Returns NaN outside the image of `f` (only possible for
/// `lambda < 0` with large positive `z`, or `lambda > 2` with large negative
/// `z`).
pub fn yeo_johnson_inverse(z: f64, lambda: f64) -> f64 {
    if z >= 0.0 {
        let v = lambda * z;
        if v <= -1.0 {
            return f64::NAN;
        }
        (z * psi(v)).exp_m1()
    } else {
        let mu = 2.0 - lambda;
        let v = -z * mu;
        if v <= -1.0 {
            return f64::NAN;
        }
        -(-z * psi(v)).exp_m1()
    }
}

/// `log |d f^{-1} / d z|` at `z`.
pub fn yeo_johnson_inverse_log_dz(z: f64, lambda: f64) -> f64 {
    if z >= 0.0 {
        (1.0 - lambda) * z * psi(lambda * z)
    } else {
        let mu = 2.0 - lambda;
        (lambda - 1.0) * (-z) * psi(-z * mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    /// Literal four-branch definition, used only as a reference.
    fn reference(x: f64, lambda: f64) -> f64 {
        if x >= 0.0 {
            if lambda == 0.0 {
                (x + 1.0).ln()
            } else {
                ((x + 1.0).powf(lambda) - 1.0) / lambda
            }
        } else if lambda == 2.0 {
            -(1.0 - x).ln()
        } else {
            ((1.0 - x).powf(2.0 - lambda) - 1.0) / (lambda - 2.0)
        }
    }

    #[test]
    fn identity_at_lambda_one() {
        for &x in &[-3.0, -0.5, 0.0, 0.25, 7.0] {
            assert!((yeo_johnson(x, 1.0) - x).abs() < 1e-12);
            assert!((yeo_johnson_dx(x, 1.0) - 1.0).abs() < 1e-12);
            assert!(yeo_johnson_dlambda(x, 1.0).is_finite());
        }
    }

    #[test]
    fn log_branches() {
        assert!((yeo_johnson(E - 1.0, 0.0) - 1.0).abs() < 1e-12);
        assert!((yeo_johnson(-(E - 1.0), 2.0) + 1.0).abs() < 1e-12);
        assert!((yeo_johnson(1.0, 2.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn matches_literal_definition() {
        for &lambda in &[-2.0, -0.3, 0.5, 1.0, 1.7, 2.5, 4.0] {
            for &x in &[-5.0, -1.0, -0.1, 0.0, 0.1, 1.0, 5.0] {
                let a = yeo_johnson(x, lambda);
                let b = reference(x, lambda);
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "x={x} l={lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn continuous_across_singular_windows() {
        for &x in &[0.0, 0.5, 2.0, 10.0] {
            let lo = yeo_johnson(x, LAMBDA_EPS * 0.999);
            let hi = yeo_johnson(x, LAMBDA_EPS * 1.001);
            assert!((lo - hi).abs() < 1e-8);
            // Inside the window the function still moves with lambda at rate
            // df/dlambda = ln(1+x)^2 / 2.
            let l = f64::ln_1p(x);
            let jump = yeo_johnson(x, 1e-7) - yeo_johnson(x, -1e-7);
            assert!((jump - 1e-7 * l * l).abs() < 1e-12);
        }
        for &x in &[-0.5, -2.0, -10.0] {
            let lo = yeo_johnson(x, 2.0 - LAMBDA_EPS * 0.999);
            let hi = yeo_johnson(x, 2.0 - LAMBDA_EPS * 1.001);
            assert!((lo - hi).abs() < 1e-8);
        }
    }

    #[test]
    fn inverse_branches() {
        assert!((yeo_johnson_inverse(1.0, 0.0) - (E - 1.0)).abs() < 1e-12);
        assert!((yeo_johnson_inverse(-1.0, 2.0) - (1.0 - E)).abs() < 1e-12);
        assert!((yeo_johnson_inverse_log_dz(0.7, 0.0) - 0.7).abs() < 1e-15);
        assert!((yeo_johnson_inverse_log_dz(-0.7, 2.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for &lambda in &[-1.5, -1e-7, 0.0, 3e-7, 0.4, 1.0, 2.0 - 2e-7, 2.0, 2.6] {
            for &x in &[-3.0, -0.4, 0.3, 2.5] {
                let dx = (yeo_johnson(x + h, lambda) - yeo_johnson(x - h, lambda)) / (2.0 * h);
                let dl = (yeo_johnson(x, lambda + h) - yeo_johnson(x, lambda - h)) / (2.0 * h);
                let ax = yeo_johnson_dx(x, lambda);
                let al = yeo_johnson_dlambda(x, lambda);
                assert!((dx - ax).abs() < 1e-6 * (1.0 + ax.abs()), "dx x={x} l={lambda}");
                assert!((dl - al).abs() < 1e-6 * (1.0 + al.abs()), "dl x={x} l={lambda}: {dl} {al}");
                assert!((yeo_johnson_log_dx(x, lambda) - ax.ln()).abs() < 1e-12);
            }
        }
    }
}
