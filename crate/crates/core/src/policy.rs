//! The trainable toy model: a prompt-conditioned bigram logit table.
//!
//! A state is a `(prompt, previous token)` pair with a distinguished START
//! symbol, so a policy over `P` prompts and vocabulary `V` owns
//! `P * (V + 1)` logit rows. This is the smallest autoregressive model that
//! exercises per-token sequence losses with sequence length above one.
//!
//! Logits start at zero (the uniform policy), training is plain gradient
//! descent under a constant or diminishing step-size schedule, and
//! checkpoints are plain-text CSV with full double precision.

use crate::error::Result;
use crate::invalid_input;
use crate::numerics::{fmt_f64, softmax_slice, ProbabilityVector};
use crate::rng::SplitMix64;
use crate::synthdata::SftExample;

/// Previous-token component of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prev {
    Start,
    Token(usize),
}

/// A `(prompt, previous token)` state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub prompt: usize,
    pub prev: Prev,
}

impl State {
    pub fn start(prompt: usize) -> Self {
        Self {
            prompt,
            prev: Prev::Start,
        }
    }

    pub fn after(prompt: usize, token: usize) -> Self {
        Self {
            prompt,
            prev: Prev::Token(token),
        }
    }
}

/// Prompt-conditioned bigram policy with a dense logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab_size: usize,
    num_prompts: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits: the uniform policy.
    pub fn new_uniform(num_prompts: usize, vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            invalid_input!("vocabulary size must be at least 2, got {vocab_size}");
        }
        if num_prompts == 0 {
            invalid_input!("need at least one prompt");
        }
        Ok(Self {
            vocab_size,
            num_prompts,
            logits: vec![0.0; num_prompts * (vocab_size + 1) * vocab_size],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_states(&self) -> usize {
        self.num_prompts * (self.vocab_size + 1)
    }

    /// Flat index of a state's logit row.
    pub fn state_index(&self, state: State) -> Result<usize> {
        if state.prompt >= self.num_prompts {
            invalid_input!("unknown prompt {}", state.prompt);
        }
        let prev = match state.prev {
            Prev::Start => 0,
            Prev::Token(t) => {
                if t >= self.vocab_size {
                    invalid_input!("unknown token {t}");
                }
                t + 1
            }
        };
        Ok(state.prompt * (self.vocab_size + 1) + prev)
    }

    /// The state with the given flat index.
    pub fn state_at(&self, index: usize) -> State {
        let prompt = index / (self.vocab_size + 1);
        let prev = index % (self.vocab_size + 1);
        if prev == 0 {
            State::start(prompt)
        } else {
            State::after(prompt, prev - 1)
        }
    }

    pub fn row(&self, state: State) -> Result<&[f64]> {
        let idx = self.state_index(state)?;
        Ok(&self.logits[idx * self.vocab_size..(idx + 1) * self.vocab_size])
    }

    pub fn row_mut(&mut self, state: State) -> Result<&mut [f64]> {
        let idx = self.state_index(state)?;
        let v = self.vocab_size;
        Ok(&mut self.logits[idx * v..(idx + 1) * v])
    }

    /// The full parameter vector, row-major by state.
    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    /// Rebuild a policy of this shape from a flat parameter vector.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.logits.len() {
            invalid_input!(
                "parameter vector of length {} for a table of {}",
                params.len(),
                self.logits.len()
            );
        }
        Ok(Self {
            vocab_size: self.vocab_size,
            num_prompts: self.num_prompts,
            logits: params.to_vec(),
        })
    }

    /// Next-token distribution at a state.
    pub fn next_token_dist(&self, state: State) -> Result<ProbabilityVector> {
        softmax_slice(self.row(state)?)
    }

    /// Greedy next token (lowest index on ties).
    pub fn greedy_token(&self, state: State) -> Result<usize> {
        Ok(self.next_token_dist(state)?.argmax())
    }

    /// Multinomial draw from the temperature-scaled distribution.
    pub fn sample_token(
        &self,
        state: State,
        temperature: f64,
        rng: &mut SplitMix64,
    ) -> Result<usize> {
        if temperature <= 0.0 || !temperature.is_finite() {
            invalid_input!("temperature must be positive, got {temperature}");
        }
        let scaled: Vec<f64> = self.row(state)?.iter().map(|l| l / temperature).collect();
        let probs = softmax_slice(&scaled)?;
        Ok(rng.next_weighted(probs.as_slice()))
    }

    /// A copy with every logit divided by `tau`.
    pub fn scaled(&self, tau: f64) -> Result<Self> {
        if tau <= 0.0 || !tau.is_finite() {
            invalid_input!("temperature must be positive, got {tau}");
        }
        Ok(Self {
            vocab_size: self.vocab_size,
            num_prompts: self.num_prompts,
            logits: self.logits.iter().map(|l| l / tau).collect(),
        })
    }

    /// The state sequence visited when emitting `tokens` for `prompt`:
    /// `(prompt, START), (prompt, tokens[0]), ..., (prompt, tokens[n-2])`.
    pub fn states_along(&self, prompt: usize, tokens: &[usize]) -> Result<Vec<State>> {
        if tokens.is_empty() {
            invalid_input!("empty token sequence");
        }
        let mut states = Vec::with_capacity(tokens.len());
        let mut state = State::start(prompt);
        for &t in tokens {
            if t >= self.vocab_size {
                invalid_input!("unknown token {t}");
            }
            self.state_index(state)?;
            states.push(state);
            state = State::after(prompt, t);
        }
        Ok(states)
    }

    /// Serialize as CSV: `prompt_id,prev_token,logit_0,...,logit_{V-1}`,
    /// one row per state, 17 significant digits. The START symbol is
    /// written literally.
    pub fn to_checkpoint_csv(&self) -> String {
        let v = self.vocab_size;
        let mut out = String::from("prompt_id,prev_token");
        for j in 0..v {
            out.push_str(&format!(",logit_{j}"));
        }
        out.push('\n');
        for prompt in 0..self.num_prompts {
            for prev_idx in 0..=v {
                let prev = if prev_idx == 0 {
                    "START".to_string()
                } else {
                    (prev_idx - 1).to_string()
                };
                let idx = prompt * (v + 1) + prev_idx;
                let row = &self.logits[idx * v..(idx + 1) * v];
                out.push_str(&format!("{prompt},{prev}"));
                for &l in row {
                    out.push(',');
                    out.push_str(&fmt_f64(l));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| crate::Error::Parse("empty checkpoint".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "prompt_id" || cols[1] != "prev_token" {
            return Err(crate::Error::Parse(format!(
                "bad checkpoint header: {header}"
            )));
        }
        let v = cols.len() - 2;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut max_prompt = 0;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != v + 2 {
                return Err(crate::Error::Parse(format!("bad checkpoint row: {line}")));
            }
            let prompt: usize = fields[0]
                .parse()
                .map_err(|_| crate::Error::Parse(format!("bad prompt id: {}", fields[0])))?;
            let prev_idx = if fields[1] == "START" {
                0
            } else {
                let t: usize = fields[1]
                    .parse()
                    .map_err(|_| crate::Error::Parse(format!("bad prev token: {}", fields[1])))?;
                t + 1
            };
            let logits: Vec<f64> = fields[2..]
                .iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| crate::Error::Parse(format!("bad logit: {s}")))
                })
                .collect::<Result<_>>()?;
            max_prompt = max_prompt.max(prompt);
            rows.push((prompt, prev_idx, logits));
        }
        let num_prompts = max_prompt + 1;
        let expected = num_prompts * (v + 1);
        if rows.len() != expected {
            return Err(crate::Error::Parse(format!(
                "checkpoint has {} rows, expected {expected}",
                rows.len()
            )));
        }
        let mut logits = vec![f64::NAN; expected * v];
        for (prompt, prev_idx, row) in rows {
            let idx = prompt * (v + 1) + prev_idx;
            logits[idx * v..(idx + 1) * v].copy_from_slice(&row);
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(crate::Error::Parse(
                "checkpoint has missing or non-finite logits".into(),
            ));
        }
        Ok(Self {
            vocab_size: v,
            num_prompts,
            logits,
        })
    }
}

/// Gradient accumulator shaped like a policy's logit table.
#[derive(Debug, Clone)]
pub struct GradTable {
    vocab_size: usize,
    num_prompts: usize,
    data: Vec<f64>,
}

impl GradTable {
    pub fn zeros_like(policy: &TabularPolicy) -> Self {
        Self {
            vocab_size: policy.vocab_size,
            num_prompts: policy.num_prompts,
            data: vec![0.0; policy.logits.len()],
        }
    }

    pub fn matches(&self, policy: &TabularPolicy) -> bool {
        self.vocab_size == policy.vocab_size && self.num_prompts == policy.num_prompts
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Add `scale * delta` into the row for `state`.
    pub fn accumulate_row(
        &mut self,
        policy: &TabularPolicy,
        state: State,
        delta: &[f64],
        scale: f64,
    ) -> Result<()> {
        if delta.len() != self.vocab_size {
            invalid_input!("gradient row of length {}", delta.len());
        }
        let idx = policy.state_index(state)?;
        let row = &mut self.data[idx * self.vocab_size..(idx + 1) * self.vocab_size];
        for (r, d) in row.iter_mut().zip(delta) {
            *r += scale * d;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for d in &mut self.data {
            *d *= factor;
        }
    }

    pub fn add(&mut self, other: &GradTable, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m: f64, d| m.max(d.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|d| d.is_finite())
    }
}

/// Step-size schedule for (sub)gradient descent.
///
/// The diminishing schedule `eta0 / sqrt(k)` satisfies the usual
/// divergent-sum, convergent-square-sum conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { eta: f64 },
    Diminishing { eta0: f64 },
}

impl StepSchedule {
    /// Step size at 1-based step index `k`.
    pub fn step_size(&self, k: usize) -> Result<f64> {
        if k == 0 {
            invalid_input!("step index is 1-based");
        }
        let eta = match self {
            StepSchedule::Constant { eta } => *eta,
            StepSchedule::Diminishing { eta0 } => eta0 / (k as f64).sqrt(),
        };
        if eta <= 0.0 || !eta.is_finite() {
            invalid_input!("step size must be positive, got {eta}");
        }
        Ok(eta)
    }
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sft,
    SftLabelSmooth,
    Dpo,
    DpoBce,
    DpoBpc,
}

/// Hyperparameters for one training stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub epsilon_smooth: f64,
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

fn default_beta() -> f64 {
    0.1
}

fn default_lambda() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            invalid_input!("beta must be positive, got {}", self.beta);
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            invalid_input!("lambda must be nonnegative, got {}", self.lambda);
        }
        if !(0.0..1.0).contains(&self.epsilon_smooth) {
            invalid_input!(
                "epsilon_smooth must lie in [0, 1), got {}",
                self.epsilon_smooth
            );
        }
        if self.batch_size == 0 {
            invalid_input!("batch size must be positive");
        }
        self.schedule.step_size(1)?;
        Ok(())
    }
}

/// Label-smoothed target distribution `(1 - eps) * one_hot + eps / K`.
pub fn smoothed_target(truth: usize, vocab_size: usize, epsilon: f64) -> Result<Vec<f64>> {
    if truth >= vocab_size {
        invalid_input!("truth index {truth} outside vocabulary of size {vocab_size}");
    }
    if !(0.0..1.0).contains(&epsilon) {
        invalid_input!("smoothing factor must lie in [0, 1), got {epsilon}");
    }
    let base = epsilon / vocab_size as f64;
    let mut q = vec![base; vocab_size];
    q[truth] += 1.0 - epsilon;
    Ok(q)
}

/// Mean cross-entropy between the (optionally smoothed) targets and the
/// policy's next-token distributions along a sequence.
pub fn sft_loss(
    policy: &TabularPolicy,
    context_id: usize,
    target_sequence: &[usize],
    epsilon_smooth: f64,
) -> Result<f64> {
    let states = policy.states_along(context_id, target_sequence)?;
    let mut sum = 0.0;
    for (state, &token) in states.iter().zip(target_sequence) {
        let probs = policy.next_token_dist(*state)?;
        let q = smoothed_target(token, policy.vocab_size, epsilon_smooth)?;
        let mut ce = 0.0;
        for (qi, pi) in q.iter().zip(probs.as_slice()) {
            ce -= qi * pi.max(1e-300).ln();
        }
        sum += ce;
    }
    Ok(sum / target_sequence.len() as f64)
}

/// Accumulate the gradient of [`sft_loss`] into `grad`, scaled by `scale`.
/// Per token the logit gradient is `(p - q) / T`. Returns the loss.
pub fn sft_loss_grad(
    policy: &TabularPolicy,
    context_id: usize,
    target_sequence: &[usize],
    epsilon_smooth: f64,
    scale: f64,
    grad: &mut GradTable,
) -> Result<f64> {
    let states = policy.states_along(context_id, target_sequence)?;
    let t_count = target_sequence.len() as f64;
    let mut sum = 0.0;
    for (state, &token) in states.iter().zip(target_sequence) {
        let probs = policy.next_token_dist(*state)?;
        let q = smoothed_target(token, policy.vocab_size, epsilon_smooth)?;
        let mut ce = 0.0;
        let row: Vec<f64> = probs
            .as_slice()
            .iter()
            .zip(&q)
            .map(|(p, qi)| {
                ce -= qi * p.max(1e-300).ln();
                p - qi
            })
            .collect();
        grad.accumulate_row(policy, *state, &row, scale / t_count)?;
        sum += ce;
    }
    Ok(sum / t_count)
}

/// Mean per-token negative log-likelihood of a validation set under
/// temperature `tau`.
pub fn validation_nll(policy: &TabularPolicy, validation: &[&SftExample], tau: f64) -> Result<f64> {
    if validation.is_empty() {
        invalid_input!("empty validation set");
    }
    let scaled = policy.scaled(tau)?;
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for ex in validation {
        let states = scaled.states_along(ex.context_id, &ex.tokens)?;
        for (state, &token) in states.iter().zip(&ex.tokens) {
            let probs = scaled.next_token_dist(*state)?;
            sum -= probs.get(token).max(1e-300).ln();
        }
        tokens += ex.tokens.len();
    }
    Ok(sum / tokens as f64)
}

/// Grid-search temperature scaling: the tau minimizing validation NLL, ties
/// broken toward the tau closest to 1.
pub fn temperature_scale(
    policy: &TabularPolicy,
    validation: &[&SftExample],
    tau_grid: &[f64],
) -> Result<f64> {
    if tau_grid.is_empty() {
        invalid_input!("empty temperature grid");
    }
    if tau_grid.iter().any(|t| *t <= 0.0 || !t.is_finite()) {
        invalid_input!("temperatures must be positive");
    }
    let mut best_tau = tau_grid[0];
    let mut best_nll = validation_nll(policy, validation, best_tau)?;
    for &tau in &tau_grid[1..] {
        let nll = validation_nll(policy, validation, tau)?;
        let better =
            nll < best_nll || (nll == best_nll && (tau - 1.0).abs() < (best_tau - 1.0).abs());
        if better {
            best_tau = tau;
            best_nll = nll;
        }
    }
    Ok(best_tau)
}

/// Default temperature grid: 25 log-spaced points over `[0.25, 8]`.
pub fn default_tau_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.25f64, 8.0f64, 25);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// One descent step: `logits <- logits - eta_k * gradient`.
pub fn apply_gradient_step(
    policy: &mut TabularPolicy,
    gradient: &GradTable,
    step_index: usize,
    schedule: StepSchedule,
) -> Result<()> {
    if !gradient.matches(policy) {
        invalid_input!("gradient shape does not match the policy");
    }
    let eta = schedule.step_size(step_index)?;
    for (l, g) in policy.logits.iter_mut().zip(&gradient.data) {
        *l -= eta * g;
    }
    Ok(())
}
