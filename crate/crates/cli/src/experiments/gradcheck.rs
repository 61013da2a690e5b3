//! One-shot verification of every gradient bound and finite-difference
//! agreement in the crate, reported check by check.

use std::path::PathBuf;

use prefcal::calibration::{
    cal_loss_gradient, surrogate, token_cal_loss, TargetMode, TokenContext,
};
use prefcal::numerics::{
    finite_diff_gradient, fmt_f64, gradient_relative_error, sigmoid, softmax_slice, LogitVector,
    FD_STEP,
};
use prefcal::policy::{GradTable, TabularPolicy};
use prefcal::preference::{
    cal_margin_perturbation, dpo_loss, dpo_loss_grad, joint_loss_grad, token_contexts,
    PreferencePair,
};
use prefcal::rng::SplitMix64;
use serde::Serialize;

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::{Result, RunnerError};

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckItem {
    pub check: String,
    pub samples: usize,
    /// Largest observed statistic (gradient magnitude or relative error).
    pub max_observed: f64,
    /// The bound it must stay under.
    pub bound: f64,
    pub pass: bool,
}

/// The violating sample serialized when a check fails.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub check: String,
    pub sample_index: usize,
    pub observed: f64,
    pub bound: f64,
    pub detail: String,
}

/// Test-only knobs; `corrupt_joint_gradient` perturbs one analytic gradient
/// entry to exercise the failure path.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub corrupt_joint_gradient: Option<f64>,
}

pub struct GradcheckOutcome {
    pub items: Vec<GradCheckItem>,
    pub counterexample: Option<Counterexample>,
}

fn random_policy(prompts: usize, vocab: usize, rng: &mut SplitMix64) -> TabularPolicy {
    let mut p = TabularPolicy::new_uniform(prompts, vocab).expect("valid shape");
    for i in 0..p.num_states() {
        let s = p.state_at(i);
        for l in p.row_mut(s).expect("known state") {
            *l = rng.next_range(-1.5, 1.5);
        }
    }
    p
}

fn random_pair(rng: &mut SplitMix64, vocab: usize, len: usize) -> PreferencePair {
    loop {
        let a: Vec<usize> = (0..len)
            .map(|_| rng.next_below(vocab as u64) as usize)
            .collect();
        let b: Vec<usize> = (0..len)
            .map(|_| rng.next_below(vocab as u64) as usize)
            .collect();
        if a != b {
            return PreferencePair::new(0, a, b).expect("distinct sequences");
        }
    }
}

/// Run the whole suite. Deterministic under `master_seed`.
pub fn run_suite(master_seed: u64, options: GradcheckOptions) -> prefcal::Result<GradcheckOutcome> {
    let mut items = Vec::new();
    let mut counterexample = None;
    let record = |items: &mut Vec<GradCheckItem>,
                      counterexample: &mut Option<Counterexample>,
                      check: &str,
                      samples: usize,
                      max_observed: f64,
                      bound: f64,
                      worst_index: usize,
                      detail: String| {
        let pass = max_observed <= bound;
        items.push(GradCheckItem {
            check: check.to_string(),
            samples,
            max_observed,
            bound,
            pass,
        });
        if !pass && counterexample.is_none() {
            *counterexample = Some(Counterexample {
                check: check.to_string(),
                sample_index: worst_index,
                observed: max_observed,
                bound,
                detail,
            });
        }
    };

    // Confidence-slope bound |1 - 2z| <= 1.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-slope", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100_000;
        for i in 0..n {
            let z = rng.next_f64();
            let slope = (1.0 - 2.0 * z).abs();
            if slope > worst.0 {
                worst = (slope, i, format!("z_tilde = {z}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "cal_confidence_slope",
            n,
            worst.0,
            1.0,
            worst.1,
            worst.2,
        );
    }

    // Per-logit calibration gradient bound c(1-c) <= 1/4.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-logit-bound", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100_000;
        for i in 0..n {
            let v = 2 + rng.next_below(5) as usize;
            let raw: Vec<f64> = (0..v).map(|_| rng.next_range(-4.0, 4.0)).collect();
            let logits = LogitVector::new(raw)?;
            let probs = softmax_slice(logits.as_slice())?;
            let truth = rng.next_below(v as u64) as usize;
            let ctx = TokenContext::new(probs, truth)?;
            let mode = if i % 2 == 0 {
                TargetMode::Surrogate
            } else {
                TargetMode::OneMinusSurrogate
            };
            let grads = cal_loss_gradient(
                std::slice::from_ref(&ctx),
                mode,
                std::slice::from_ref(&logits),
            )?;
            for &g in &grads[0].d_logits {
                if g.abs() > worst.0 {
                    worst = (g.abs(), i, format!("logits {:?}", logits.as_slice()));
                }
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "cal_logit_gradient",
            n,
            worst.0,
            0.25,
            worst.1,
            worst.2,
        );
    }

    // Sigmoid derivative bound.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-sigmoid", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100_000;
        for i in 0..n {
            let u = rng.next_range(-50.0, 50.0);
            let s = sigmoid(u);
            let d = s * (1.0 - s);
            if d > worst.0 {
                worst = (d, i, format!("u = {u}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "sigmoid_derivative",
            n,
            worst.0,
            0.25,
            worst.1,
            worst.2,
        );
    }

    // Ordering-stability perturbation bound over random pairs.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-perturbation", 0);
        let mut worst = (f64::NEG_INFINITY, 0usize, String::new());
        let n = 10_000;
        let seq_len = 4;
        for i in 0..n {
            let policy = random_policy(1, 4, &mut rng);
            let pair = random_pair(&mut rng, 4, seq_len);
            let lambda = rng.next_range(0.0, 0.5);
            let value = cal_margin_perturbation(&policy, &pair, lambda)?;
            let bound = 2.0 * lambda * (seq_len as f64 / 4.0);
            let excess = value - bound;
            if excess > worst.0 {
                worst = (excess, i, format!("lambda = {lambda}, value = {value}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "cal_margin_perturbation",
            n,
            worst.0,
            0.0,
            worst.1,
            worst.2,
        );
    }

    // Finite-difference agreement of the sequence calibration loss.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-fd-cal", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100;
        for i in 0..n {
            let v = 4;
            let t_count = 1 + rng.next_below(4) as usize;
            let flat: Vec<f64> = (0..t_count * v)
                .map(|_| rng.next_range(-2.0, 2.0))
                .collect();
            let mode = if i % 2 == 0 {
                TargetMode::Surrogate
            } else {
                TargetMode::OneMinusSurrogate
            };
            let frozen: Vec<f64> = (0..t_count)
                .map(|t| {
                    let probs = softmax_slice(&flat[t * v..(t + 1) * v])?;
                    let z = surrogate(&TokenContext::new(probs, t % v)?);
                    Ok(match mode {
                        TargetMode::Surrogate => z,
                        TargetMode::OneMinusSurrogate => 1.0 - z,
                    })
                })
                .collect::<prefcal::Result<_>>()?;
            let fd = finite_diff_gradient(
                |x| {
                    let mut sum = 0.0;
                    for t in 0..t_count {
                        let probs = softmax_slice(&x[t * v..(t + 1) * v])?;
                        sum += token_cal_loss(frozen[t], probs.max_prob())?;
                    }
                    Ok(sum / t_count as f64)
                },
                &flat,
                FD_STEP,
            )?;
            let tokens: Vec<TokenContext> = (0..t_count)
                .map(|t| {
                    let probs = softmax_slice(&flat[t * v..(t + 1) * v])?;
                    TokenContext::new(probs, t % v)
                })
                .collect::<prefcal::Result<_>>()?;
            let logits: Vec<LogitVector> = (0..t_count)
                .map(|t| LogitVector::new(flat[t * v..(t + 1) * v].to_vec()))
                .collect::<prefcal::Result<_>>()?;
            let grads = cal_loss_gradient(&tokens, mode, &logits)?;
            let analytic: Vec<f64> = grads
                .iter()
                .flat_map(|g| g.d_logits.iter().map(|d| d / t_count as f64))
                .collect();
            let err = gradient_relative_error(&analytic, &fd);
            if err > worst.0 {
                worst = (err, i, format!("tokens = {t_count}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "fd_seq_cal_loss",
            n,
            worst.0,
            1e-6,
            worst.1,
            worst.2,
        );
    }

    // Finite-difference agreement of the DPO loss over policy parameters.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-fd-dpo", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100;
        for i in 0..n {
            let policy = random_policy(1, 4, &mut rng);
            let reference = random_policy(1, 4, &mut rng);
            let pair = random_pair(&mut rng, 4, 3);
            let beta = 0.1 + rng.next_f64();
            let mut grad = GradTable::zeros_like(&policy);
            dpo_loss_grad(&policy, &reference, &pair, beta, 1.0, &mut grad)?;
            let fd = finite_diff_gradient(
                |params| dpo_loss(&policy.with_params(params)?, &reference, &pair, beta),
                policy.params(),
                FD_STEP,
            )?;
            let err = gradient_relative_error(grad.as_slice(), &fd);
            if err > worst.0 {
                worst = (err, i, format!("beta = {beta}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "fd_dpo_loss",
            n,
            worst.0,
            1e-6,
            worst.1,
            worst.2,
        );
    }

    // Finite-difference agreement of the joint objective (targets frozen).
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-fd-joint", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100;
        for i in 0..n {
            let policy = random_policy(1, 4, &mut rng);
            let reference = random_policy(1, 4, &mut rng);
            let pair = random_pair(&mut rng, 4, 4);
            let beta = 0.1;
            let lambda = rng.next_range(0.0, 0.4);
            let mut grad = GradTable::zeros_like(&policy);
            joint_loss_grad(&policy, &reference, &pair, beta, lambda, 1.0, &mut grad)?;
            let mut analytic = grad.as_slice().to_vec();
            if let Some(bump) = options.corrupt_joint_gradient {
                analytic[0] += bump;
            }
            let frozen_plus: Vec<f64> = token_contexts(&policy, 0, &pair.preferred)?
                .iter()
                .map(surrogate)
                .collect();
            let frozen_minus: Vec<f64> = token_contexts(&policy, 0, &pair.dispreferred)?
                .iter()
                .map(|c| 1.0 - surrogate(c))
                .collect();
            let fd = finite_diff_gradient(
                |params| {
                    let p = policy.with_params(params)?;
                    let dpo = dpo_loss(&p, &reference, &pair, beta)?;
                    let mut cal = 0.0;
                    for (seq, frozen) in [
                        (&pair.preferred, &frozen_plus),
                        (&pair.dispreferred, &frozen_minus),
                    ] {
                        let contexts = token_contexts(&p, 0, seq)?;
                        let mut sum = 0.0;
                        for (ctx, &target) in contexts.iter().zip(frozen.iter()) {
                            sum += token_cal_loss(target, ctx.confidence())?;
                        }
                        cal += sum / seq.len() as f64;
                    }
                    Ok(dpo + lambda * cal)
                },
                policy.params(),
                FD_STEP,
            )?;
            let err = gradient_relative_error(&analytic, &fd);
            if err > worst.0 {
                worst = (err, i, format!("lambda = {lambda}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "fd_joint_loss",
            n,
            worst.0,
            1e-6,
            worst.1,
            worst.2,
        );
    }

    // Finite-difference agreement of the supervised loss.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-fd-sft", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100;
        for i in 0..n {
            let policy = random_policy(1, 4, &mut rng);
            let seq: Vec<usize> = (0..3).map(|_| rng.next_below(4) as usize).collect();
            let eps = rng.next_range(0.0, 0.3);
            let mut grad = GradTable::zeros_like(&policy);
            prefcal::policy::sft_loss_grad(&policy, 0, &seq, eps, 1.0, &mut grad)?;
            let fd = finite_diff_gradient(
                |params| prefcal::policy::sft_loss(&policy.with_params(params)?, 0, &seq, eps),
                policy.params(),
                FD_STEP,
            )?;
            let err = gradient_relative_error(grad.as_slice(), &fd);
            if err > worst.0 {
                worst = (err, i, format!("eps = {eps}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "fd_sft_loss",
            n,
            worst.0,
            1e-6,
            worst.1,
            worst.2,
        );
    }

    // Finite-difference agreement of the scalar BCE term.
    {
        let mut rng = SplitMix64::stream(master_seed, "gc-fd-bce", 0);
        let mut worst = (0.0f64, 0usize, String::new());
        let n = 100;
        for i in 0..n {
            let z = rng.next_f64();
            let c = rng.next_range(0.05, 0.95);
            let fd = finite_diff_gradient(
                |x| prefcal::calibration::bce_cal_loss(z, x[0]),
                &[c],
                FD_STEP,
            )?;
            let analytic = prefcal::calibration::bce_cal_grad_confidence(z, c);
            let err = gradient_relative_error(&[analytic], &fd);
            if err > worst.0 {
                worst = (err, i, format!("z = {z}, c = {c}"));
            }
        }
        record(
            &mut items,
            &mut counterexample,
            "fd_bce_loss",
            n,
            worst.0,
            1e-6,
            worst.1,
            worst.2,
        );
    }

    Ok(GradcheckOutcome {
        items,
        counterexample,
    })
}

pub fn items_to_csv(items: &[GradCheckItem]) -> String {
    let mut out = String::from("check,samples,max_observed,bound,pass\n");
    for i in items {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i.check,
            i.samples,
            fmt_f64(i.max_observed),
            fmt_f64(i.bound),
            i.pass,
        ));
    }
    out
}

pub fn run(config: &RunConfig) -> Result<PathBuf> {
    run_with_options(config, GradcheckOptions::default())
}

pub fn run_with_options(config: &RunConfig, options: GradcheckOptions) -> Result<PathBuf> {
    let mut dir = RunDir::create(config)?;
    let outcome = dir.time("suite", |_| Ok(run_suite(config.master_seed, options)?))?;
    dir.write(
        "reports/gradcheck.csv",
        items_to_csv(&outcome.items).as_bytes(),
    )?;
    dir.write(
        "reports/gradcheck.json",
        serde_json::to_string_pretty(&outcome.items)
            .expect("gradcheck serialization cannot fail")
            .as_bytes(),
    )?;
    if let Some(ce) = &outcome.counterexample {
        dir.write(
            "reports/failure.json",
            serde_json::to_string_pretty(ce)
                .expect("counterexample serialization cannot fail")
                .as_bytes(),
        )?;
    }
    let failed = outcome.counterexample.is_some();
    let root = dir.finish(config)?;
    if failed {
        return Err(RunnerError::Invariant(format!(
            "gradient checks failed; see {}",
            root.join("reports/failure.json").display()
        )));
    }
    Ok(root)
}
