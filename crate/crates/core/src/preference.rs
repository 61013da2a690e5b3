//! Pairwise preference optimization and its calibrated variant.
//!
//! The DPO loss for a pair `(x, y+, y-)` with reference policy `ref` is
//!
//! ```text
//! r(x, y) = beta * (log pi(y|x) - log pi_ref(y|x))
//! L_DPO   = -log sigmoid(r(x, y+) - r(x, y-))
//! ```
//!
//! The joint objective adds per-token calibration terms on both sequences:
//! the preferred sequence is scored against the surrogate target, the
//! dispreferred one against its complement.
//!
//! A pair's preference ordering survives the calibration term whenever
//! `lambda < 2 * delta_min / |y|`: each per-token calibration gradient on a
//! log-probability is bounded by 1/4, so a sequence contributes at most
//! `|y|/4` and the margin perturbation at most `2 * lambda * |y| / 4`.
//! [`cal_margin_perturbation`] computes the realized perturbation for
//! assertion against that bound. Consistent with the bound's derivation,
//! the per-sequence calibration gradient here aggregates per-token terms
//! without the sequence-mean factor.

use serde::{Deserialize, Serialize};

use crate::calibration::{cal_loss_gradient, seq_cal_loss, surrogate, TargetMode, TokenContext};
use crate::error::Result;
use crate::invalid_input;
use crate::numerics::{sigmoid, softplus, LogitVector};
use crate::policy::{GradTable, TabularPolicy};

/// A context with a preferred and a dispreferred token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context_id: usize,
    pub preferred: Vec<usize>,
    pub dispreferred: Vec<usize>,
}

impl PreferencePair {
    pub fn new(context_id: usize, preferred: Vec<usize>, dispreferred: Vec<usize>) -> Result<Self> {
        if preferred.is_empty() || dispreferred.is_empty() {
            invalid_input!("preference sequences must be nonempty");
        }
        if preferred == dispreferred {
            invalid_input!("preferred and dispreferred sequences are identical");
        }
        Ok(Self {
            context_id,
            preferred,
            dispreferred,
        })
    }
}

/// Sequence-level preference scores for one pair.
#[derive(Debug, Clone, Copy)]
pub struct PreferenceScore {
    pub r_plus: f64,
    pub r_minus: f64,
    pub dpo_margin: f64,
    pub beta: f64,
}

/// Sum of per-token log-probabilities of `sequence` under `policy`.
pub fn seq_logprob(policy: &TabularPolicy, context_id: usize, sequence: &[usize]) -> Result<f64> {
    let states = policy.states_along(context_id, sequence)?;
    let mut sum = 0.0;
    for (state, &token) in states.iter().zip(sequence) {
        let probs = policy.next_token_dist(*state)?;
        sum += probs.get(token).max(1e-300).ln();
    }
    Ok(sum)
}

/// DPO scores and margin for a pair.
pub fn preference_score(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<PreferenceScore> {
    if beta <= 0.0 || !beta.is_finite() {
        invalid_input!("beta must be positive, got {beta}");
    }
    let r_plus = beta
        * (seq_logprob(policy, pair.context_id, &pair.preferred)?
            - seq_logprob(reference, pair.context_id, &pair.preferred)?);
    let r_minus = beta
        * (seq_logprob(policy, pair.context_id, &pair.dispreferred)?
            - seq_logprob(reference, pair.context_id, &pair.dispreferred)?);
    Ok(PreferenceScore {
        r_plus,
        r_minus,
        dpo_margin: r_plus - r_minus,
        beta,
    })
}

/// Pairwise DPO loss `-log sigmoid(margin)`, computed as a stable softplus.
pub fn dpo_loss(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let score = preference_score(policy, reference, pair, beta)?;
    Ok(softplus(-score.dpo_margin))
}

/// Token contexts (distribution + truth index) along a sequence.
pub fn token_contexts(
    policy: &TabularPolicy,
    context_id: usize,
    sequence: &[usize],
) -> Result<Vec<TokenContext>> {
    let states = policy.states_along(context_id, sequence)?;
    states
        .iter()
        .zip(sequence)
        .map(|(state, &token)| TokenContext::new(policy.next_token_dist(*state)?, token))
        .collect()
}

/// The joint calibrated objective:
/// `dpo + lambda * (cal(y+, surrogate) + cal(y-, one-minus-surrogate))`.
pub fn joint_loss(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    beta: f64,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        invalid_input!("lambda must be nonnegative, got {lambda}");
    }
    let dpo = dpo_loss(policy, reference, pair, beta)?;
    if lambda == 0.0 {
        return Ok(dpo);
    }
    let plus = seq_cal_loss(
        &token_contexts(policy, pair.context_id, &pair.preferred)?,
        TargetMode::Surrogate,
    )?;
    let minus = seq_cal_loss(
        &token_contexts(policy, pair.context_id, &pair.dispreferred)?,
        TargetMode::OneMinusSurrogate,
    )?;
    Ok(dpo + lambda * (plus + minus))
}

/// Largest calibration weight guaranteed to preserve every preference
/// ordering: `2 * delta_min / seq_len`.
pub fn lambda_bound(delta_min: f64, seq_len: usize) -> Result<f64> {
    if delta_min <= 0.0 || !delta_min.is_finite() {
        invalid_input!("delta_min must be positive, got {delta_min}");
    }
    if seq_len == 0 {
        invalid_input!("sequence length must be positive");
    }
    Ok(2.0 * delta_min / seq_len as f64)
}

/// Per-sequence calibration gradient on the sequence log-probability:
/// the sum over tokens of `dL/d log pi(y_t | s_t)` with the surrogate
/// target frozen. Each summand is bounded by `c(1-c) <= 1/4`.
fn seq_cal_logprob_grad(
    policy: &TabularPolicy,
    context_id: usize,
    sequence: &[usize],
    mode: TargetMode,
) -> Result<f64> {
    let contexts = token_contexts(policy, context_id, sequence)?;
    let mut sum = 0.0;
    for (ctx, &token) in contexts.iter().zip(sequence) {
        let target = match mode {
            TargetMode::Surrogate => surrogate(ctx),
            TargetMode::OneMinusSurrogate => 1.0 - surrogate(ctx),
        };
        let m = ctx.probs().argmax();
        let c = ctx.probs().get(m);
        let dc = if token == m {
            c * (1.0 - c)
        } else {
            -c * ctx.probs().get(token)
        };
        sum += (1.0 - 2.0 * target) * dc;
    }
    Ok(sum)
}

/// Realized perturbation of the DPO margin induced by the calibration term:
/// `lambda * |grad(y+) - grad(y-)|`, for assertion against
/// `2 * lambda * (seq_len / 4)`.
pub fn cal_margin_perturbation(
    policy: &TabularPolicy,
    pair: &PreferencePair,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        invalid_input!("lambda must be nonnegative, got {lambda}");
    }
    let plus = seq_cal_logprob_grad(
        policy,
        pair.context_id,
        &pair.preferred,
        TargetMode::Surrogate,
    )?;
    let minus = seq_cal_logprob_grad(
        policy,
        pair.context_id,
        &pair.dispreferred,
        TargetMode::OneMinusSurrogate,
    )?;
    Ok(lambda * (plus - minus).abs())
}

/// Accumulate the DPO gradient for one pair into `grad`, scaled by `scale`.
/// Returns the loss.
pub fn dpo_loss_grad(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    beta: f64,
    scale: f64,
    grad: &mut GradTable,
) -> Result<f64> {
    let score = preference_score(policy, reference, pair, beta)?;
    let coeff = -sigmoid(-score.dpo_margin); // dL/dMargin
    for (sequence, sign) in [(&pair.preferred, 1.0), (&pair.dispreferred, -1.0)] {
        let states = policy.states_along(pair.context_id, sequence)?;
        for (state, &token) in states.iter().zip(sequence) {
            let probs = policy.next_token_dist(*state)?;
            let row: Vec<f64> = probs
                .as_slice()
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let indicator = if j == token { 1.0 } else { 0.0 };
                    coeff * sign * beta * (indicator - pj)
                })
                .collect();
            grad.accumulate_row(policy, *state, &row, scale)?;
        }
    }
    Ok(softplus(-score.dpo_margin))
}

/// Accumulate the gradient of one sequence's calibration loss (mean over
/// tokens, target frozen) into `grad`, scaled by `scale`. Returns the loss.
pub fn seq_cal_loss_grad(
    policy: &TabularPolicy,
    context_id: usize,
    sequence: &[usize],
    mode: TargetMode,
    scale: f64,
    grad: &mut GradTable,
) -> Result<f64> {
    let states = policy.states_along(context_id, sequence)?;
    let contexts = token_contexts(policy, context_id, sequence)?;
    let logits: Vec<LogitVector> = states
        .iter()
        .map(|s| LogitVector::new(policy.row(*s)?.to_vec()))
        .collect::<Result<_>>()?;
    let token_grads = cal_loss_gradient(&contexts, mode, &logits)?;
    let t_count = sequence.len() as f64;
    for (state, tg) in states.iter().zip(&token_grads) {
        grad.accumulate_row(policy, *state, &tg.d_logits, scale / t_count)?;
    }
    seq_cal_loss(&contexts, mode)
}

/// Accumulate the joint-objective gradient for one pair. Returns the loss.
pub fn joint_loss_grad(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    beta: f64,
    lambda: f64,
    scale: f64,
    grad: &mut GradTable,
) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        invalid_input!("lambda must be nonnegative, got {lambda}");
    }
    let dpo = dpo_loss_grad(policy, reference, pair, beta, scale, grad)?;
    if lambda == 0.0 {
        return Ok(dpo);
    }
    let plus = seq_cal_loss_grad(
        policy,
        pair.context_id,
        &pair.preferred,
        TargetMode::Surrogate,
        scale * lambda,
        grad,
    )?;
    let minus = seq_cal_loss_grad(
        policy,
        pair.context_id,
        &pair.dispreferred,
        TargetMode::OneMinusSurrogate,
        scale * lambda,
        grad,
    )?;
    Ok(dpo + lambda * (plus + minus))
}

/// Accumulate the gradient of one sequence's BCE calibration loss (mean
/// over tokens, target frozen). Returns the loss.
pub fn seq_bce_loss_grad(
    policy: &TabularPolicy,
    context_id: usize,
    sequence: &[usize],
    mode: TargetMode,
    scale: f64,
    grad: &mut GradTable,
) -> Result<f64> {
    use crate::calibration::{bce_cal_grad_confidence, bce_cal_loss};
    let states = policy.states_along(context_id, sequence)?;
    let contexts = token_contexts(policy, context_id, sequence)?;
    let t_count = sequence.len() as f64;
    let mut loss = 0.0;
    for (state, ctx) in states.iter().zip(&contexts) {
        let target = match mode {
            TargetMode::Surrogate => surrogate(ctx),
            TargetMode::OneMinusSurrogate => 1.0 - surrogate(ctx),
        };
        let m = ctx.probs().argmax();
        let c = ctx.probs().get(m);
        loss += bce_cal_loss(target, c)?;
        let dldc = bce_cal_grad_confidence(target, c);
        let row: Vec<f64> = ctx
            .probs()
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, &pj)| {
                let dc = if j == m { c * (1.0 - c) } else { -c * pj };
                dldc * dc
            })
            .collect();
        grad.accumulate_row(policy, *state, &row, scale / t_count)?;
    }
    Ok(loss / t_count)
}

/// Sequence-mean BCE calibration loss (the DPO+BCE baseline's term).
pub fn seq_bce_loss(
    policy: &TabularPolicy,
    context_id: usize,
    sequence: &[usize],
    mode: TargetMode,
) -> Result<f64> {
    use crate::calibration::bce_cal_loss;
    let contexts = token_contexts(policy, context_id, sequence)?;
    let mut loss = 0.0;
    for ctx in &contexts {
        let target = match mode {
            TargetMode::Surrogate => surrogate(ctx),
            TargetMode::OneMinusSurrogate => 1.0 - surrogate(ctx),
        };
        loss += bce_cal_loss(target, ctx.confidence())?;
    }
    Ok(loss / contexts.len() as f64)
}
