//! Policy evaluation against the task oracle.
//!
//! Greedy decoding is deterministic, so each prompt contributes a single
//! confidence; the prompt itself is the exact-conditional group key. The
//! exact-oracle ECE needs no sampling at all: per prompt it is
//! `|confidence - q_x(greedy label)|`.

use crate::error::Result;
use crate::invalid_input;
use crate::metrics::PredictionRecord;
use crate::policy::TabularPolicy;
use crate::synthdata::{greedy_label, oracle_z, SftExample, TaskSpec};

/// Exact expected greedy accuracy: mean over prompts of `q_x(greedy label)`.
pub fn exact_accuracy(policy: &TabularPolicy, spec: &TaskSpec) -> Result<f64> {
    let mut sum = 0.0;
    for prompt in 0..spec.num_prompts {
        sum += oracle_z(policy, prompt, spec)?;
    }
    Ok(sum / spec.num_prompts as f64)
}

/// Exact-oracle ECE: mean over prompts of
/// `|label confidence - q_x(greedy label)|`.
pub fn exact_oracle_ece(policy: &TabularPolicy, spec: &TaskSpec) -> Result<f64> {
    let mut sum = 0.0;
    for prompt in 0..spec.num_prompts {
        let g = greedy_label(policy, prompt, spec)?;
        let z = spec.q(prompt)?[g.label];
        sum += (g.confidence - z).abs();
    }
    Ok(sum / spec.num_prompts as f64)
}

/// Score the policy's greedy prediction against held-out examples, one
/// record per example: the prompt is the group key, correctness is exact
/// label match, and the oracle correctness probability rides along.
pub fn test_records(
    policy: &TabularPolicy,
    spec: &TaskSpec,
    examples: &[&SftExample],
) -> Result<Vec<PredictionRecord>> {
    if examples.is_empty() {
        invalid_input!("empty example set");
    }
    let mut records = Vec::with_capacity(examples.len());
    for ex in examples {
        let g = greedy_label(policy, ex.context_id, spec)?;
        let truth = *ex
            .tokens
            .last()
            .ok_or_else(|| crate::Error::InvalidInput("empty example sequence".into()))?;
        let record = PredictionRecord::new(g.confidence, g.label == truth)?
            .with_class(truth)
            .with_group(format!("p{}", ex.context_id))
            .with_oracle_z(spec.q(ex.context_id)?[g.label])?;
        records.push(record);
    }
    Ok(records)
}
