//! Probability primitives and the finite-difference gradient oracle.
//!
//! All arithmetic is `f64`. Softmax subtracts the max logit before
//! exponentiation; sigmoid uses the branch-stable form, so neither overflows
//! for any finite input.

use crate::error::{Error, Result};
use crate::invalid_input;

/// Default central-difference step; balances truncation and rounding error
/// in double precision.
pub const FD_STEP: f64 = 1e-5;

/// A vector of raw logits over a vocabulary of size `V >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            invalid_input!("logit vector needs at least 2 entries, got {}", values.len());
        }
        if values.iter().any(|v| !v.is_finite()) {
            invalid_input!("logit vector has non-finite entries");
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A normalized distribution over a vocabulary: entries in `[0, 1]`
/// summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            invalid_input!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            );
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            invalid_input!("probability vector entries must lie in [0, 1]");
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            invalid_input!("probability vector sums to {sum}, expected 1 within 1e-9");
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// The largest entry (the model's confidence at this position).
    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &LogitVector) -> ProbabilityVector {
    let xs = logits.as_slice();
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbabilityVector(exps.iter().map(|e| e / sum).collect())
}

/// Softmax over a raw slice; errors on non-finite input or length < 2.
pub fn softmax_slice(logits: &[f64]) -> Result<ProbabilityVector> {
    Ok(softmax(&LogitVector::new(logits.to_vec())?))
}

/// Branch-stable logistic sigmoid, `1 / (1 + e^{-u})`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + e^x)`; `-ln(sigmoid(-x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Central-difference gradient of `f` at `point` with step `h`.
///
/// This is the independent oracle every analytic gradient in the crate is
/// checked against; it must stay free of the code paths it verifies.
pub fn finite_diff_gradient<F>(mut f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h <= 0.0 || !h.is_finite() {
        invalid_input!("finite-difference step must be positive, got {h}");
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite function value near coordinate {i}"
            )));
        }
        let g = (fp - fm) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite difference quotient at coordinate {i}"
            )));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Format an `f64` with 17 significant digits, enough to round-trip any
/// double exactly. Used for every float written to a CSV artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Relative error between an analytic gradient and its finite-difference
/// estimate: `||a - b||_2 / max(||a||_2, ||b||_2, 1e-12)`.
pub fn gradient_relative_error(analytic: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(analytic.len(), estimate.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(estimate) {
        diff += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}
