//! The margin-based correctness surrogate and the per-token calibration loss.
//!
//! For a token position with distribution `p` and ground-truth index `y*`,
//! the probability margin is `m = p[y*] - max_{y != y*} p[y]` and the
//! correctness surrogate is `z = sigmoid(m)`. The per-token loss against a
//! confidence `c` (the max entry of `p`) is the linear form
//!
//! ```text
//! L(z, c) = z (1 - c) + (1 - z) c
//! ```
//!
//! which equals the expected absolute deviation `E|c - Z|` for a Bernoulli
//! correctness indicator with mean `z`. Its gradient in `c` is the constant
//! `1 - 2z`, so no surrogate error can produce a gradient larger than 1, and
//! through the softmax every logit gradient is bounded by `c(1-c) <= 1/4`.
//!
//! The surrogate target is treated as a constant when differentiating
//! (a stop-gradient): gradients flow only through the confidence.

use crate::error::Result;
use crate::invalid_input;
use crate::numerics::{sigmoid, softmax, LogitVector, ProbabilityVector};

/// Whether a sequence is scored against the surrogate itself or its
/// complement (used for dispreferred sequences).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    Surrogate,
    OneMinusSurrogate,
}

impl TargetMode {
    fn target(self, z: f64) -> f64 {
        match self {
            TargetMode::Surrogate => z,
            TargetMode::OneMinusSurrogate => 1.0 - z,
        }
    }
}

/// One token position: the model's distribution and the ground-truth index.
#[derive(Debug, Clone)]
pub struct TokenContext {
    probs: ProbabilityVector,
    truth_index: usize,
}

impl TokenContext {
    pub fn new(probs: ProbabilityVector, truth_index: usize) -> Result<Self> {
        if truth_index >= probs.len() {
            invalid_input!(
                "truth index {truth_index} outside vocabulary of size {}",
                probs.len()
            );
        }
        Ok(Self { probs, truth_index })
    }

    pub fn probs(&self) -> &ProbabilityVector {
        &self.probs
    }

    pub fn truth_index(&self) -> usize {
        self.truth_index
    }

    /// The model's confidence at this position: the max probability.
    pub fn confidence(&self) -> f64 {
        self.probs.max_prob()
    }
}

/// Index of the strongest competitor to the truth token, lowest index on
/// ties.
pub fn competitor_index(ctx: &TokenContext) -> usize {
    let p = ctx.probs.as_slice();
    let mut best = usize::MAX;
    for (i, &v) in p.iter().enumerate() {
        if i == ctx.truth_index {
            continue;
        }
        if best == usize::MAX || v > p[best] {
            best = i;
        }
    }
    best
}

/// Probability margin `p[y*] - max_{y != y*} p[y]`, in `[-1, 1]`.
pub fn margin(ctx: &TokenContext) -> f64 {
    let p = ctx.probs.as_slice();
    p[ctx.truth_index] - p[competitor_index(ctx)]
}

/// Correctness surrogate `sigmoid(margin)`, in `(0, 1)`.
pub fn surrogate(ctx: &TokenContext) -> f64 {
    sigmoid(margin(ctx))
}

/// Per-token calibration loss `z(1-c) + (1-z)c`; affine in `c`.
pub fn token_cal_loss(z_tilde: f64, confidence: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z_tilde) || !z_tilde.is_finite() {
        invalid_input!("surrogate target {z_tilde} outside [0, 1]");
    }
    if !(0.0..=1.0).contains(&confidence) || !confidence.is_finite() {
        invalid_input!("confidence {confidence} outside [0, 1]");
    }
    Ok(z_tilde * (1.0 - confidence) + (1.0 - z_tilde) * confidence)
}

/// Sequence calibration loss: mean over tokens of the per-token loss, with
/// target `z` or `1-z` per `mode`.
pub fn seq_cal_loss(tokens: &[TokenContext], mode: TargetMode) -> Result<f64> {
    if tokens.is_empty() {
        invalid_input!("empty token sequence");
    }
    let mut sum = 0.0;
    for ctx in tokens {
        let target = mode.target(surrogate(ctx));
        sum += token_cal_loss(target, ctx.confidence())?;
    }
    Ok(sum / tokens.len() as f64)
}

/// Gradient of one per-token calibration loss.
#[derive(Debug, Clone)]
pub struct TokenCalGrad {
    /// `dL/dc = 1 - 2 * target`; magnitude at most 1.
    pub d_confidence: f64,
    /// `dL/d logit_j` through the confidence only (surrogate frozen);
    /// each entry bounded by `c(1-c) <= 1/4`.
    pub d_logits: Vec<f64>,
}

/// Analytic per-token gradients of the calibration loss, with the surrogate
/// target frozen. The sequence loss averages over tokens, so the gradient of
/// [`seq_cal_loss`] with respect to token `t`'s logits is `d_logits / T`.
pub fn cal_loss_gradient(
    tokens: &[TokenContext],
    mode: TargetMode,
    logits: &[LogitVector],
) -> Result<Vec<TokenCalGrad>> {
    if tokens.len() != logits.len() {
        invalid_input!(
            "{} token contexts but {} logit vectors",
            tokens.len(),
            logits.len()
        );
    }
    let mut grads = Vec::with_capacity(tokens.len());
    for (ctx, logit) in tokens.iter().zip(logits) {
        if ctx.probs.len() != logit.len() {
            invalid_input!("token context and logits disagree on vocabulary size");
        }
        let recomputed = softmax(logit);
        for (a, b) in recomputed.as_slice().iter().zip(ctx.probs.as_slice()) {
            if (a - b).abs() > 1e-9 {
                invalid_input!("token probabilities are not the softmax of the given logits");
            }
        }
        let target = mode.target(surrogate(ctx));
        let d_confidence = 1.0 - 2.0 * target;
        let m = ctx.probs.argmax();
        let c = ctx.probs.get(m);
        let d_logits = ctx
            .probs
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let dc_dlogit = if j == m { c * (1.0 - c) } else { -c * pj };
                d_confidence * dc_dlogit
            })
            .collect();
        grads.push(TokenCalGrad {
            d_confidence,
            d_logits,
        });
    }
    Ok(grads)
}

/// Smallest confidence used inside the BCE logarithms.
pub const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy between a surrogate target and a confidence, with
/// the confidence clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_cal_loss(z_tilde: f64, confidence: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z_tilde) || !z_tilde.is_finite() {
        invalid_input!("surrogate target {z_tilde} outside [0, 1]");
    }
    if !confidence.is_finite() {
        invalid_input!("non-finite confidence");
    }
    let c = confidence.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-(z_tilde * c.ln() + (1.0 - z_tilde) * (1.0 - c).ln()))
}

/// Derivative of [`bce_cal_loss`] in the confidence, after clamping.
pub fn bce_cal_grad_confidence(z_tilde: f64, confidence: f64) -> f64 {
    let c = confidence.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -z_tilde / c + (1.0 - z_tilde) / (1.0 - c)
}
