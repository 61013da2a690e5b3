//! Confidence@k: test-time selection among sampled candidates.
//!
//! Given k candidate sequences, the rule keeps the one whose final label
//! token has the highest confidence. When confidences equal true
//! correctness probabilities the rule is Bayes-optimal: its expected
//! correctness is the max over the set, which no fixed-index or random
//! rule can exceed. [`bayes_optimality_check`] verifies that by exact
//! enumeration; [`evaluate_selection`] estimates task accuracy of the rule
//! under temperature-scaled sampling.

use crate::error::Result;
use crate::invalid_input;
use crate::policy::{State, TabularPolicy};
use crate::rng::SplitMix64;
use crate::synthdata::TaskSpec;

/// One sampled candidate sequence.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub sequence: Vec<usize>,
    /// Probability of the final label token under the generating policy.
    pub label_confidence: f64,
    /// Position in the candidate list, used for deterministic tie-breaks.
    pub index: usize,
}

impl Candidate {
    pub fn new(sequence: Vec<usize>, label_confidence: f64, index: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&label_confidence) || !label_confidence.is_finite() {
            invalid_input!("label confidence {label_confidence} outside [0, 1]");
        }
        if sequence.is_empty() {
            invalid_input!("empty candidate sequence");
        }
        Ok(Self {
            sequence,
            label_confidence,
            index,
        })
    }

    pub fn label(&self) -> usize {
        *self.sequence.last().expect("candidate sequences are nonempty")
    }
}

/// The Confidence@k rule: highest label confidence, lowest index on ties.
pub fn confidence_at_k(candidates: &[Candidate]) -> Result<&Candidate> {
    if candidates.is_empty() {
        invalid_input!("empty candidate list");
    }
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        if c.label_confidence > best.label_confidence {
            best = c;
        }
    }
    Ok(best)
}

/// Where selection confidences come from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    /// The sampling policy's probability of the candidate's label token.
    Policy,
    /// The task oracle's correctness probability of the label
    /// (perfectly calibrated control).
    Oracle,
}

/// Selection rule under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    ConfidenceAtK,
    FixedIndex(usize),
    UniformRandom,
}

impl SelectionRule {
    pub fn name(&self) -> String {
        match self {
            SelectionRule::ConfidenceAtK => "confidence_at_k".into(),
            SelectionRule::FixedIndex(i) => format!("fixed_{i}"),
            SelectionRule::UniformRandom => "uniform_random".into(),
        }
    }
}

/// Accuracy estimate with a CLT error bar over trials.
#[derive(Debug, Clone)]
pub struct SelectionEstimate {
    pub k: usize,
    pub temperature: f64,
    pub accuracy: f64,
    pub stderr: f64,
    pub num_trials: usize,
}

fn sample_candidates(
    policy: &TabularPolicy,
    spec: &TaskSpec,
    prompt: usize,
    k: usize,
    temperature: f64,
    source: ConfidenceSource,
    rng: &mut SplitMix64,
) -> Result<Vec<Candidate>> {
    let scaled = policy.scaled(temperature)?;
    let mut candidates = Vec::with_capacity(k);
    for index in 0..k {
        let mut state = State::start(prompt);
        let mut sequence = Vec::with_capacity(spec.seq_len());
        for _ in 0..spec.stub_length {
            let t = scaled.sample_token(state, 1.0, rng)?;
            sequence.push(t);
            state = State::after(prompt, t);
        }
        let dist = scaled.next_token_dist(state)?;
        let label = rng.next_weighted(dist.as_slice());
        sequence.push(label);
        let confidence = match source {
            ConfidenceSource::Policy => dist.get(label),
            ConfidenceSource::Oracle => spec.q(prompt)?[label],
        };
        candidates.push(Candidate::new(sequence, confidence, index)?);
    }
    Ok(candidates)
}

fn select<'a>(
    rule: SelectionRule,
    candidates: &'a [Candidate],
    rng: &mut SplitMix64,
) -> Result<&'a Candidate> {
    match rule {
        SelectionRule::ConfidenceAtK => confidence_at_k(candidates),
        SelectionRule::FixedIndex(i) => candidates
            .get(i)
            .ok_or_else(|| crate::Error::InvalidInput(format!("no candidate at index {i}"))),
        SelectionRule::UniformRandom => {
            Ok(&candidates[rng.next_below(candidates.len() as u64) as usize])
        }
    }
}

/// Estimate Confidence@k task accuracy: per trial and prompt, sample `k`
/// candidates from the temperature-scaled policy, select, and score the
/// selected label against a fresh draw from `q_x`.
pub fn evaluate_selection(
    policy: &TabularPolicy,
    spec: &TaskSpec,
    k: usize,
    temperature: f64,
    num_trials: usize,
    source: ConfidenceSource,
    master_seed: u64,
) -> Result<SelectionEstimate> {
    evaluate_selection_rule(
        policy,
        spec,
        k,
        temperature,
        num_trials,
        source,
        SelectionRule::ConfidenceAtK,
        master_seed,
        false,
    )
}

/// As [`evaluate_selection`] but with a configurable rule, and optionally
/// scoring by the exact correctness probability of the selected label
/// instead of a sampled fresh draw (zero scoring noise).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_selection_rule(
    policy: &TabularPolicy,
    spec: &TaskSpec,
    k: usize,
    temperature: f64,
    num_trials: usize,
    source: ConfidenceSource,
    rule: SelectionRule,
    master_seed: u64,
    exact_scoring: bool,
) -> Result<SelectionEstimate> {
    if k == 0 {
        invalid_input!("k must be positive");
    }
    if num_trials == 0 {
        invalid_input!("need at least one trial");
    }
    let mut trial_accuracies = Vec::with_capacity(num_trials);
    for trial in 0..num_trials {
        let mut rng = SplitMix64::stream(master_seed, "selection-trial", trial as u64);
        let mut sum = 0.0;
        for prompt in 0..spec.num_prompts {
            let candidates =
                sample_candidates(policy, spec, prompt, k, temperature, source, &mut rng)?;
            let chosen = select(rule, &candidates, &mut rng)?;
            let label = chosen.label();
            if exact_scoring {
                sum += spec.q(prompt)?[label];
            } else {
                let fresh = rng.next_weighted(spec.q(prompt)?);
                if fresh == label {
                    sum += 1.0;
                }
            }
        }
        trial_accuracies.push(sum / spec.num_prompts as f64);
    }
    let accuracy = trial_accuracies.iter().sum::<f64>() / num_trials as f64;
    let var = trial_accuracies
        .iter()
        .map(|a| (a - accuracy) * (a - accuracy))
        .sum::<f64>()
        / num_trials.max(2).saturating_sub(1) as f64;
    Ok(SelectionEstimate {
        k,
        temperature,
        accuracy,
        stderr: (var / num_trials as f64).sqrt(),
        num_trials,
    })
}

/// Exact expected correctness of every rule on explicit candidate sets with
/// known per-candidate correctness probabilities.
#[derive(Debug, Clone)]
pub struct BayesComparison {
    pub num_sets: usize,
    pub k: usize,
    /// Mean over sets of max_i p_i (Confidence@k with oracle confidences).
    pub confidence_at_k: f64,
    /// Mean over sets of p_i per fixed index i.
    pub fixed_index: Vec<f64>,
    /// Mean over sets of mean_i p_i.
    pub uniform_random: f64,
    /// Largest amount by which any comparator beat Confidence@k on any
    /// single set; nonpositive when the rule dominates everywhere.
    pub max_violation: f64,
}

/// Enumerate candidate sets exactly: with confidences equal to the true
/// correctness probabilities, Confidence@k selects the max and therefore
/// dominates every fixed-index rule and the uniform-random rule, set by
/// set.
pub fn bayes_optimality_check(sets: &[Vec<f64>]) -> Result<BayesComparison> {
    if sets.is_empty() {
        invalid_input!("need at least one candidate set");
    }
    let k = sets[0].len();
    if k == 0 {
        invalid_input!("candidate sets must be nonempty");
    }
    let mut conf_sum = 0.0;
    let mut fixed_sum = vec![0.0; k];
    let mut random_sum = 0.0;
    let mut max_violation = f64::NEG_INFINITY;
    for set in sets {
        if set.len() != k {
            invalid_input!("candidate sets must share a common k");
        }
        if set.iter().any(|p| !(0.0..=1.0).contains(p)) {
            invalid_input!("correctness probabilities must lie in [0, 1]");
        }
        let best = set.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = set.iter().sum::<f64>() / k as f64;
        conf_sum += best;
        random_sum += mean;
        for (i, &p) in set.iter().enumerate() {
            fixed_sum[i] += p;
            max_violation = max_violation.max(p - best);
        }
        max_violation = max_violation.max(mean - best);
    }
    let n = sets.len() as f64;
    Ok(BayesComparison {
        num_sets: sets.len(),
        k,
        confidence_at_k: conf_sum / n,
        fixed_index: fixed_sum.iter().map(|s| s / n).collect(),
        uniform_random: random_sum / n,
        max_violation,
    })
}
