//! Deterministic single-threaded training loops.
//!
//! Batches are mean-reduced; example order is reshuffled every epoch from a
//! stream derived from the config seed, so identical configs reproduce
//! bitwise-identical logit tables. A non-finite loss or gradient aborts the
//! run as a divergence.

use crate::error::{Error, Result};
use crate::invalid_input;
use crate::policy::{
    apply_gradient_step, sft_loss_grad, GradTable, Objective, TabularPolicy, TrainConfig,
};
use crate::preference::{
    dpo_loss_grad, joint_loss_grad, seq_bce_loss_grad, seq_cal_loss_grad, PreferencePair,
};
use crate::calibration::TargetMode;
use crate::rng::SplitMix64;
use crate::synthdata::SftExample;

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub steps: usize,
    /// Mean training loss of the final epoch.
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::stream(seed, "shuffle", epoch as u64);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

fn check_finite(loss: f64, grad: &GradTable, what: &str) -> Result<()> {
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Divergence(format!("non-finite {what}")));
    }
    Ok(())
}

fn check_params_finite(policy: &TabularPolicy) -> Result<()> {
    if policy.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence(
            "policy logits became non-finite after a step".into(),
        ));
    }
    Ok(())
}

/// Train on supervised examples with (optionally smoothed) cross-entropy.
/// `on_epoch` observes the policy after each epoch.
pub fn train_sft_with<F>(
    policy0: &TabularPolicy,
    data: &[&SftExample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &TabularPolicy) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        invalid_input!("empty training set");
    }
    let epsilon = match cfg.objective {
        Objective::Sft => 0.0,
        Objective::SftLabelSmooth => cfg.epsilon_smooth,
        other => invalid_input!("objective {other:?} is not a supervised objective"),
    };
    let mut policy = policy0.clone();
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = GradTable::zeros_like(&policy);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = data[i];
                batch_loss +=
                    sft_loss_grad(&policy, ex.context_id, &ex.tokens, epsilon, scale, &mut grad)?;
            }
            batch_loss *= scale;
            check_finite(batch_loss, &grad, "supervised loss")?;
            step += 1;
            apply_gradient_step(&mut policy, &grad, step, cfg.schedule)?;
            check_params_finite(&policy)?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
        on_epoch(epoch, &policy)?;
    }
    Ok(TrainOutcome {
        policy,
        steps: step,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
    })
}

pub fn train_sft(
    policy0: &TabularPolicy,
    data: &[&SftExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_sft_with(policy0, data, cfg, |_, _| Ok(()))
}

/// Train on preference pairs with the configured objective (`dpo`,
/// `dpo_bce`, or `dpo_bpc`), holding `reference` frozen.
pub fn train_preference_with<F>(
    policy0: &TabularPolicy,
    reference: &TabularPolicy,
    pairs: &[&PreferencePair],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &TabularPolicy) -> Result<()>,
{
    cfg.validate()?;
    if pairs.is_empty() {
        invalid_input!("empty preference set");
    }
    match cfg.objective {
        Objective::Dpo | Objective::DpoBce | Objective::DpoBpc => {}
        other => invalid_input!("objective {other:?} is not a preference objective"),
    }
    let mut policy = policy0.clone();
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(pairs.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = GradTable::zeros_like(&policy);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let pair = pairs[i];
                batch_loss += match cfg.objective {
                    Objective::Dpo => {
                        dpo_loss_grad(&policy, reference, pair, cfg.beta, scale, &mut grad)?
                    }
                    Objective::DpoBpc => joint_loss_grad(
                        &policy, reference, pair, cfg.beta, cfg.lambda, scale, &mut grad,
                    )?,
                    Objective::DpoBce => {
                        let dpo =
                            dpo_loss_grad(&policy, reference, pair, cfg.beta, scale, &mut grad)?;
                        if cfg.lambda == 0.0 {
                            dpo
                        } else {
                            let plus = seq_bce_loss_grad(
                                &policy,
                                pair.context_id,
                                &pair.preferred,
                                TargetMode::Surrogate,
                                scale * cfg.lambda,
                                &mut grad,
                            )?;
                            let minus = seq_bce_loss_grad(
                                &policy,
                                pair.context_id,
                                &pair.dispreferred,
                                TargetMode::OneMinusSurrogate,
                                scale * cfg.lambda,
                                &mut grad,
                            )?;
                            dpo + cfg.lambda * (plus + minus)
                        }
                    }
                    _ => unreachable!(),
                };
            }
            batch_loss *= scale;
            check_finite(batch_loss, &grad, "preference loss")?;
            step += 1;
            apply_gradient_step(&mut policy, &grad, step, cfg.schedule)?;
            check_params_finite(&policy)?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / pairs.len() as f64);
        on_epoch(epoch, &policy)?;
    }
    Ok(TrainOutcome {
        policy,
        steps: step,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
    })
}

pub fn train_preference(
    policy0: &TabularPolicy,
    reference: &TabularPolicy,
    pairs: &[&PreferencePair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_preference_with(policy0, reference, pairs, cfg, |_, _| Ok(()))
}

/// Dedicated helper used by trainers that need the mean calibration loss of
/// both sides of a pair without the DPO term.
pub fn pair_cal_loss(policy: &TabularPolicy, pair: &PreferencePair) -> Result<f64> {
    let mut grad = GradTable::zeros_like(policy);
    let plus = seq_cal_loss_grad(
        policy,
        pair.context_id,
        &pair.preferred,
        TargetMode::Surrogate,
        0.0,
        &mut grad,
    )?;
    let minus = seq_cal_loss_grad(
        policy,
        pair.context_id,
        &pair.dispreferred,
        TargetMode::OneMinusSurrogate,
        0.0,
        &mut grad,
    )?;
    Ok(plus + minus)
}
