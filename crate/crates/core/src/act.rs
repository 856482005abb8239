//! Scalar activation functions and their derivatives. Derivatives are
//! exact for the implemented forward formulas so reverse-mode gradients
//! agree with finite differences of the same code path.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// softplus(x) = ln(1 + e^x), computed without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_deriv(x: f64) -> f64 {
    sigmoid(x)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_deriv(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Smallest-error preimage of softplus(x) == y, found by Newton steps
/// plus a short ulp search so the computed softplus returns y exactly
/// when a representable preimage exists.
pub fn softplus_inverse(y: f64) -> f64 {
    let mut x = if y > 20.0 { y } else { (y.exp() - 1.0).ln() };
    for _ in 0..5 {
        x -= (softplus(x) - y) / sigmoid(x);
    }
    let mut best = x;
    let mut best_err = (softplus(x) - y).abs();
    for dir in [-1i64, 1] {
        let mut bits = x.to_bits() as i64;
        for _ in 0..8 {
            bits += dir;
            let cand = f64::from_bits(bits as u64);
            let err = (softplus(cand) - y).abs();
            if err < best_err {
                best_err = err;
                best = cand;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(silu(0.0), 0.0);
    }

    #[test]
    fn softplus_strictly_positive() {
        for x in [-700.0, -50.0, -1.0, 0.0, 1.0, 50.0, 700.0] {
            assert!(softplus(x) > 0.0, "softplus({x})");
        }
    }

    #[test]
    fn softplus_inverse_exact_at_one() {
        let p = softplus_inverse(1.0);
        assert_eq!(softplus(p), 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            for (f, df) in [
                (sigmoid as fn(f64) -> f64, sigmoid_deriv as fn(f64) -> f64),
                (silu, silu_deriv),
                (softplus, softplus_deriv),
                (gelu, gelu_deriv),
            ] {
                let fd = (f(x + h) - f(x - h)) / (2.0 * h);
                assert!((fd - df(x)).abs() < 1e-7, "x={x}");
            }
        }
    }
}
