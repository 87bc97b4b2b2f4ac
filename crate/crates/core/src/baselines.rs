//! Regression baselines on the same trunk: zero-inflated log-normal (ZILN)
//! and plain squared error.

use std::f64::consts::PI;

use crate::dataset::Money;
use crate::error::{Error, Result};
use crate::nn::ops::{sigmoid, softplus, PROB_FLOOR};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 10.0;
pub const MU_LIMIT: f64 = 20.0;

/// Negative log-likelihood of a zero-inflated log-normal:
/// Bernoulli cross-entropy on `v > 0`, plus the log-normal NLL of `v` when
/// positive. `p` is clamped into `[1e-12, 1 - 1e-12]`.
pub fn ziln_loss(p: f64, mu: f64, sigma: f64, v: Money) -> Result<f64> {
    if !(p.is_finite() && mu.is_finite() && sigma.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("ziln_loss input".into()));
    }
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!("label {v} is negative")));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must be positive"
        )));
    }
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if v == 0.0 {
        return Ok(-(1.0 - p).ln());
    }
    let log_v = v.ln();
    let z = log_v - mu;
    Ok(-p.ln() + log_v + sigma.ln() + 0.5 * (2.0 * PI).ln() + z * z / (2.0 * sigma * sigma))
}

/// Mean of the zero-inflated log-normal, `p * exp(mu + sigma^2 / 2)`, with
/// `mu` clamped to `±20` and `sigma` to `[1e-3, 10]`.
pub fn ziln_predict(p: f64, mu: f64, sigma: f64) -> Money {
    let mu = mu.clamp(-MU_LIMIT, MU_LIMIT);
    let sigma = sigma.clamp(SIGMA_MIN, SIGMA_MAX);
    p * (mu + 0.5 * sigma * sigma).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZilnParams {
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Output row `[purchase logit, mu, raw sigma]`; `p = sigmoid(logit)`,
/// `sigma = softplus(raw)`, both clamped as in [`ziln_predict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ZilnHead;

impl ZilnHead {
    pub const OUTPUT_DIM: usize = 3;

    pub fn params(&self, out: &[f64]) -> ZilnParams {
        ZilnParams {
            p: sigmoid(out[0]),
            mu: out[1].clamp(-MU_LIMIT, MU_LIMIT),
            sigma: softplus(out[2]).clamp(SIGMA_MIN, SIGMA_MAX),
        }
    }

    /// Loss in logit space (stable for saturated logits) and its gradient
    /// with respect to the three raw outputs. Clamped outputs get zero
    /// gradient.
    pub fn loss_and_grad(&self, out: &[f64], v: Money, grad: &mut [f64]) -> Result<f64> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "label {v} must be non-negative"
            )));
        }
        let (logit, mu_raw, sigma_raw) = (out[0], out[1], out[2]);
        let p = sigmoid(logit);
        grad[1] = 0.0;
        grad[2] = 0.0;
        if v == 0.0 {
            grad[0] = p;
            return Ok(softplus(logit));
        }
        grad[0] = p - 1.0;
        let mu = mu_raw.clamp(-MU_LIMIT, MU_LIMIT);
        let soft = softplus(sigma_raw);
        let sigma = soft.clamp(SIGMA_MIN, SIGMA_MAX);
        let log_v = v.ln();
        let z = log_v - mu;
        let s2 = sigma * sigma;
        let loss =
            softplus(-logit) + log_v + sigma.ln() + 0.5 * (2.0 * PI).ln() + z * z / (2.0 * s2);
        if mu_raw.abs() < MU_LIMIT {
            grad[1] = -z / s2;
        }
        if soft > SIGMA_MIN && soft < SIGMA_MAX {
            grad[2] = (1.0 / sigma - z * z / (s2 * sigma)) * sigmoid(sigma_raw);
        }
        Ok(loss)
    }

    pub fn predict(&self, out: &[f64]) -> Money {
        let ZilnParams { p, mu, sigma } = self.params(out);
        ziln_predict(p, mu, sigma)
    }
}

/// Single linear output trained with squared error on the LTV label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MseHead;

impl MseHead {
    pub const OUTPUT_DIM: usize = 1;

    pub fn loss_and_grad(&self, out: &[f64], v: Money, grad: &mut [f64]) -> Result<f64> {
        let diff = out[0] - v;
        grad[0] = 2.0 * diff;
        Ok(diff * diff)
    }

    /// Clamped below at zero.
    pub fn predict(&self, out: &[f64]) -> Money {
        out[0].max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ziln_loss_examples() {
        assert_abs_diff_eq!(
            ziln_loss(0.5, 0.0, 1.0, 0.0).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ziln_loss(1.0 - 1e-15, 0.0, 1.0, 1.0).unwrap(),
            0.5 * (2.0 * PI).ln(),
            epsilon = 1e-11
        );
        assert!(ziln_loss(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(ziln_loss(0.5, 0.0, 1.0, -1.0).is_err());
        assert!(ziln_loss(0.5, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn ziln_predict_examples() {
        assert_eq!(ziln_predict(0.0, 3.0, 2.0), 0.0);
        assert_abs_diff_eq!(ziln_predict(1.0, 0.0, 1e-9), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(ziln_predict(0.5, 2f64.ln(), 1e-9), 1.0, epsilon = 1e-6);
        assert!(ziln_predict(1.0, 1e6, 1e6).is_finite());
    }

    #[test]
    fn head_matches_probability_space_loss() {
        let head = ZilnHead;
        let out = [0.4, 1.3, -0.2];
        let ZilnParams { p, mu, sigma } = head.params(&out);
        let mut g = [0.0; 3];
        for v in [0.0, 0.7, 6.0, 128.0] {
            let a = head.loss_and_grad(&out, v, &mut g).unwrap();
            let b = ziln_loss(p, mu, sigma, v).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_label_ignores_lognormal_part() {
        let head = ZilnHead;
        let mut g = [9.0; 3];
        let a = head.loss_and_grad(&[0.2, -3.0, 1.0], 0.0, &mut g).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
        let b = head.loss_and_grad(&[0.2, 5.0, -2.0], 0.0, &mut g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let head = ZilnHead;
        for (out, v) in [
            ([0.3, 1.0, 0.2], 6.0),
            ([-1.2, 3.5, -0.7], 30.0),
            ([2.0, -0.5, 1.5], 1.0),
            ([0.1, 0.2, 0.3], 0.0),
        ] {
            let mut g = [0.0; 3];
            head.loss_and_grad(&out, v, &mut g).unwrap();
            let mut scratch = [0.0; 3];
            for i in 0..3 {
                let mut up = out;
                let mut down = out;
                up[i] += 1e-6;
                down[i] -= 1e-6;
                let fd = (head.loss_and_grad(&up, v, &mut scratch).unwrap()
                    - head.loss_and_grad(&down, v, &mut scratch).unwrap())
                    / 2e-6;
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "{out:?} v={v} coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn mse_head() {
        let mut g = [0.0];
        assert_eq!(MseHead.loss_and_grad(&[3.0], 1.0, &mut g).unwrap(), 4.0);
        assert_eq!(g[0], 4.0);
        assert_eq!(MseHead.predict(&[-2.0]), 0.0);
        assert_eq!(MseHead.predict(&[2.0]), 2.0);
    }

    proptest! {
        #[test]
        fn ziln_predict_is_monotone(p in 0.0f64..1.0, mu in -5.0f64..5.0, sigma in 0.01f64..3.0, d in 0.001f64..0.5) {
            let base = ziln_predict(p, mu, sigma);
            prop_assert!(ziln_predict((p + d).min(1.0), mu, sigma) >= base);
            prop_assert!(ziln_predict(p, mu + d, sigma) >= base);
            prop_assert!(ziln_predict(p, mu, sigma + d) >= base);
        }

        #[test]
        fn zero_label_loss_independent_of_lognormal(p in 0.01f64..0.99, mu1 in -5.0f64..5.0, mu2 in -5.0f64..5.0, s1 in 0.01f64..5.0, s2 in 0.01f64..5.0) {
            prop_assert_eq!(ziln_loss(p, mu1, s1, 0.0).unwrap(), ziln_loss(p, mu2, s2, 0.0).unwrap());
        }
    }
}
