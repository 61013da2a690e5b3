//! Synthetic multiple-choice tasks with a known correctness oracle.
//!
//! Each prompt `x` carries a label distribution `q_x` over `K` options,
//! built as `(1 - ambiguity) * one_hot(random option) + ambiguity * uniform`.
//! Training sequences are `stub_length` filler tokens (standing in for a
//! reasoning trace and carrying no correctness semantics) followed by a
//! label token. Correctness is defined at the label token only, so for any
//! policy the exact probability that its greedy label matches a fresh draw
//! is just `q_x(greedy label)`, the oracle every exact-ECE number in this
//! crate is computed against.
//!
//! The vocabulary is the option set itself (`V = K`); stub tokens reuse it
//! as semantically empty placeholders following the fixed per-position
//! trace `i mod K`. A deterministic trace keeps the bigram state space
//! position-pure: when `stub_length <= K` the state that emits the label
//! never doubles as a stub-transition state, so a policy can actually
//! represent a calibrated label confidence. (Random stub tokens would mix
//! uniform stub targets into every label row and cap the achievable label
//! confidence well below `q_x`.)

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invalid_input;
use crate::policy::TabularPolicy;
use crate::preference::PreferencePair;
use crate::rng::SplitMix64;

/// Task parameters plus the realized per-prompt label distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub num_prompts: usize,
    pub num_options: usize,
    pub stub_length: usize,
    pub ambiguity: f64,
    pub seed: u64,
    /// `q_x` for each prompt; rows sum to 1.
    pub label_distributions: Vec<Vec<f64>>,
}

impl TaskSpec {
    /// Draw the per-prompt label distributions from the seed.
    pub fn generate(
        num_prompts: usize,
        num_options: usize,
        stub_length: usize,
        ambiguity: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_options < 2 {
            invalid_input!("need at least 2 options, got {num_options}");
        }
        if num_prompts == 0 {
            invalid_input!("need at least one prompt");
        }
        if !(0.0..=1.0).contains(&ambiguity) {
            invalid_input!("ambiguity must lie in [0, 1], got {ambiguity}");
        }
        let mut rng = SplitMix64::stream(seed, "task-qx", 0);
        let base = ambiguity / num_options as f64;
        let label_distributions = (0..num_prompts)
            .map(|_| {
                let peak = rng.next_below(num_options as u64) as usize;
                let mut q = vec![base; num_options];
                q[peak] += 1.0 - ambiguity;
                q
            })
            .collect();
        Ok(Self {
            num_prompts,
            num_options,
            stub_length,
            ambiguity,
            seed,
            label_distributions,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_options < 2 {
            invalid_input!("need at least 2 options");
        }
        if self.label_distributions.len() != self.num_prompts {
            invalid_input!("label distribution count does not match prompt count");
        }
        for q in &self.label_distributions {
            if q.len() != self.num_options {
                invalid_input!("label distribution arity mismatch");
            }
            let sum: f64 = q.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || q.iter().any(|p| *p < 0.0) {
                invalid_input!("label distribution is not a probability vector");
            }
        }
        Ok(())
    }

    pub fn q(&self, prompt: usize) -> Result<&[f64]> {
        self.label_distributions
            .get(prompt)
            .map(|v| v.as_slice())
            .ok_or_else(|| crate::Error::InvalidInput(format!("unknown prompt {prompt}")))
    }

    /// The most likely option of `q_x`, lowest index on ties.
    pub fn argmax_option(&self, prompt: usize) -> Result<usize> {
        let q = self.q(prompt)?;
        let mut best = 0;
        for (i, &p) in q.iter().enumerate().skip(1) {
            if p > q[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Sequence length of every generated example: stubs plus label.
    pub fn seq_len(&self) -> usize {
        self.stub_length + 1
    }

    fn sample_label(&self, prompt: usize, rng: &mut SplitMix64) -> usize {
        rng.next_weighted(&self.label_distributions[prompt])
    }

    /// The fixed stub trace shared by every sequence: token `i mod K` at
    /// position `i`.
    pub fn stub_trace(&self) -> Vec<usize> {
        (0..self.stub_length)
            .map(|i| i % self.num_options)
            .collect()
    }
}

/// One supervised example: a prompt and a target sequence ending in the
/// sampled label token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub context_id: usize,
    pub tokens: Vec<usize>,
}

/// Train/validation/test split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-example split assignments, parallel to the example lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTags {
    pub sft: Vec<Split>,
    pub pairs: Vec<Split>,
}

/// How many examples to generate and how to split them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetShape {
    pub sft_per_prompt: usize,
    pub pairs_per_prompt: usize,
    /// Probability an example lands in train; the remainder splits evenly
    /// between validation and test.
    pub train_fraction: f64,
}

impl Default for DatasetShape {
    fn default() -> Self {
        Self {
            sft_per_prompt: 8,
            pairs_per_prompt: 4,
            train_fraction: 0.7,
        }
    }
}

/// A generated task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub spec: TaskSpec,
    pub sft: Vec<SftExample>,
    pub pairs: Vec<PreferencePair>,
    pub splits: SplitTags,
}

impl GeneratedDataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Parse(e.to_string()))
    }

    pub fn sft_split(&self, split: Split) -> Vec<&SftExample> {
        self.sft
            .iter()
            .zip(&self.splits.sft)
            .filter(|(_, s)| **s == split)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn pairs_split(&self, split: Split) -> Vec<&PreferencePair> {
        self.pairs
            .iter()
            .zip(&self.splits.pairs)
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p)
            .collect()
    }
}

fn assign_split(rng: &mut SplitMix64, train_fraction: f64) -> Split {
    let u = rng.next_f64();
    if u < train_fraction {
        Split::Train
    } else if u < train_fraction + (1.0 - train_fraction) / 2.0 {
        Split::Validation
    } else {
        Split::Test
    }
}

/// Generate SFT examples, preference pairs, and split tags for a task.
/// Deterministic under the task seed.
pub fn generate_tasks(spec: &TaskSpec, shape: &DatasetShape) -> Result<GeneratedDataset> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&shape.train_fraction) {
        invalid_input!("train fraction must lie in [0, 1]");
    }
    let mut sft = Vec::with_capacity(spec.num_prompts * shape.sft_per_prompt);
    for prompt in 0..spec.num_prompts {
        let mut rng = SplitMix64::stream(spec.seed, "sft", prompt as u64);
        for _ in 0..shape.sft_per_prompt {
            let mut tokens = spec.stub_trace();
            tokens.push(spec.sample_label(prompt, &mut rng));
            sft.push(SftExample {
                context_id: prompt,
                tokens,
            });
        }
    }
    let pairs = build_preference_pairs(spec, shape.pairs_per_prompt)?;

    let mut split_rng = SplitMix64::stream(spec.seed, "splits", 0);
    let sft_tags = (0..sft.len())
        .map(|_| assign_split(&mut split_rng, shape.train_fraction))
        .collect();
    let pair_tags = (0..pairs.len())
        .map(|_| assign_split(&mut split_rng, shape.train_fraction))
        .collect();

    Ok(GeneratedDataset {
        spec: spec.clone(),
        sft,
        pairs,
        splits: SplitTags {
            sft: sft_tags,
            pairs: pair_tags,
        },
    })
}

/// Build preference pairs: the chosen sequence ends in the `q_x`-argmax
/// label, the rejected one in a label drawn uniformly from the remaining
/// options; both sides share the fixed stub trace.
pub fn build_preference_pairs(
    spec: &TaskSpec,
    samples_per_prompt: usize,
) -> Result<Vec<PreferencePair>> {
    spec.validate()?;
    if samples_per_prompt < 2 {
        invalid_input!("need at least 2 samples per prompt, got {samples_per_prompt}");
    }
    let k = spec.num_options;
    let mut pairs = Vec::with_capacity(spec.num_prompts * samples_per_prompt);
    for prompt in 0..spec.num_prompts {
        let mut rng = SplitMix64::stream(spec.seed, "pairs", prompt as u64);
        let chosen_label = spec.argmax_option(prompt)?;
        for _ in 0..samples_per_prompt {
            let mut preferred = spec.stub_trace();
            preferred.push(chosen_label);
            let offset = 1 + rng.next_below(k as u64 - 1) as usize;
            let rejected_label = (chosen_label + offset) % k;
            let mut dispreferred = spec.stub_trace();
            dispreferred.push(rejected_label);
            pairs.push(PreferencePair::new(prompt, preferred, dispreferred)?);
        }
    }
    Ok(pairs)
}

/// Greedy decoding outcome at the label position.
#[derive(Debug, Clone, Copy)]
pub struct GreedyLabel {
    pub label: usize,
    /// Max probability at the label position: the reported confidence.
    pub confidence: f64,
}

/// Greedy-decode the stub positions, then read the label distribution.
pub fn greedy_label(
    policy: &TabularPolicy,
    context_id: usize,
    spec: &TaskSpec,
) -> Result<GreedyLabel> {
    let mut state = crate::policy::State::start(context_id);
    for _ in 0..spec.stub_length {
        let t = policy.greedy_token(state)?;
        state = crate::policy::State::after(context_id, t);
    }
    let dist = policy.next_token_dist(state)?;
    Ok(GreedyLabel {
        label: dist.argmax(),
        confidence: dist.max_prob(),
    })
}

/// Exact correctness probability of the policy's greedy label for a prompt:
/// `q_x(greedy label)`.
pub fn oracle_z(policy: &TabularPolicy, context_id: usize, spec: &TaskSpec) -> Result<f64> {
    let g = greedy_label(policy, context_id, spec)?;
    Ok(spec.q(context_id)?[g.label])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::State;

    fn spec(ambiguity: f64, seed: u64) -> TaskSpec {
        TaskSpec::generate(10, 4, 3, ambiguity, seed).unwrap()
    }

    #[test]
    fn ambiguity_extremes() {
        let one_hot = spec(0.0, 1);
        for q in &one_hot.label_distributions {
            assert!(q.iter().any(|p| (*p - 1.0).abs() < 1e-12));
        }
        let uniform = spec(1.0, 1);
        for q in &uniform.label_distributions {
            for &p in q {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let s = spec(0.35, 7);
        s.validate().unwrap();
        for q in &s.label_distributions {
            let sum: f64 = q.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        // 0.65 + 0.35/4 on the peak, 0.0875 elsewhere.
        let peak = s.argmax_option(0).unwrap();
        assert!((s.q(0).unwrap()[peak] - 0.7375).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let s = spec(0.35, 42);
        let shape = DatasetShape::default();
        let a = generate_tasks(&s, &shape).unwrap();
        let b = generate_tasks(&s, &shape).unwrap();
        assert_eq!(a, b);
        let other = generate_tasks(&spec(0.35, 43), &shape).unwrap();
        assert_ne!(a.sft, other.sft);
    }

    #[test]
    fn sequences_have_stub_plus_label_shape() {
        let s = spec(0.35, 3);
        let data = generate_tasks(&s, &DatasetShape::default()).unwrap();
        for ex in &data.sft {
            assert_eq!(ex.tokens.len(), s.seq_len());
            assert!(ex.tokens.iter().all(|t| *t < s.num_options));
        }
    }

    #[test]
    fn pairs_chosen_is_argmax_and_rejected_differs() {
        let s = spec(0.35, 5);
        let pairs = build_preference_pairs(&s, 4).unwrap();
        assert_eq!(pairs.len(), 40);
        for p in &pairs {
            let chosen = *p.preferred.last().unwrap();
            let rejected = *p.dispreferred.last().unwrap();
            assert_eq!(chosen, s.argmax_option(p.context_id).unwrap());
            assert_ne!(chosen, rejected);
        }
        assert!(build_preference_pairs(&s, 1).is_err());
    }

    #[test]
    fn binary_options_reject_the_unique_other() {
        let s = TaskSpec::generate(4, 2, 0, 0.2, 9).unwrap();
        for p in build_preference_pairs(&s, 2).unwrap() {
            let chosen = *p.preferred.last().unwrap();
            let rejected = *p.dispreferred.last().unwrap();
            assert_eq!(rejected, 1 - chosen);
        }
    }

    #[test]
    fn rejected_labels_are_uniform_over_competitors() {
        let s = TaskSpec::generate(1, 4, 0, 0.35, 11).unwrap();
        let pairs = build_preference_pairs(&s, 30_000).unwrap();
        let chosen = s.argmax_option(0).unwrap();
        let mut counts = [0usize; 4];
        for p in &pairs {
            counts[*p.dispreferred.last().unwrap()] += 1;
        }
        assert_eq!(counts[chosen], 0);
        let n = pairs.len() as f64;
        let expect = n / 3.0;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            if i != chosen {
                assert!((c as f64 - expect).abs() < 3.0 * sigma, "label {i}: {c}");
            }
        }
    }

    #[test]
    fn oracle_z_hand_cases() {
        let mut s = TaskSpec::generate(1, 3, 0, 0.0, 1).unwrap();
        s.label_distributions[0] = vec![0.7, 0.2, 0.1];
        let mut policy = TabularPolicy::new_uniform(1, 3).unwrap();
        // Lean the policy toward option 1.
        policy.row_mut(State::start(0)).unwrap()[1] = 2.0;
        assert!((oracle_z(&policy, 0, &s).unwrap() - 0.2).abs() < 1e-12);

        // Uniform q: any policy scores 1/K.
        s.label_distributions[0] = vec![1.0 / 3.0; 3];
        assert!((oracle_z(&policy, 0, &s).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        // One-hot q with matching argmax scores 1.
        s.label_distributions[0] = vec![0.0, 1.0, 0.0];
        assert!((oracle_z(&policy, 0, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!(oracle_z(&policy, 5, &s).is_err());
    }

    #[test]
    fn oracle_matches_monte_carlo_correctness() {
        let s = spec(0.35, 21);
        let mut policy = TabularPolicy::new_uniform(s.num_prompts, s.num_options).unwrap();
        // An arbitrary non-uniform policy.
        for i in 0..policy.num_states() {
            let st = policy.state_at(i);
            policy.row_mut(st).unwrap()[i % 4] = 1.5;
        }
        let mut rng = SplitMix64::stream(99, "mc-oracle", 0);
        for prompt in 0..s.num_prompts {
            let z = oracle_z(&policy, prompt, &s).unwrap();
            let greedy = greedy_label(&policy, prompt, &s).unwrap().label;
            let n = 100_000;
            let mut hits = 0usize;
            for _ in 0..n {
                if rng.next_weighted(s.q(prompt).unwrap()) == greedy {
                    hits += 1;
                }
            }
            let sigma = (z * (1.0 - z) / n as f64).sqrt().max(1e-9);
            assert!(
                ((hits as f64 / n as f64) - z).abs() <= 3.0 * sigma,
                "prompt {prompt}"
            );
        }
    }

    #[test]
    fn splits_partition_and_round_trip() {
        let s = spec(0.35, 33);
        let data = generate_tasks(&s, &DatasetShape::default()).unwrap();
        assert_eq!(data.splits.sft.len(), data.sft.len());
        assert_eq!(data.splits.pairs.len(), data.pairs.len());
        let train = data.sft_split(Split::Train).len();
        let val = data.sft_split(Split::Validation).len();
        let test = data.sft_split(Split::Test).len();
        assert_eq!(train + val + test, data.sft.len());
        assert!(train > 0 && val > 0 && test > 0);

        let json = data.to_json();
        let back = GeneratedDataset::from_json(&json).unwrap();
        assert_eq!(data, back);
    }
}
