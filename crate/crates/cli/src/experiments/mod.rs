//! The experiment implementations.

pub mod confatk;
pub mod contamination;
pub mod drift;
pub mod gradcheck;
pub mod metrics_suite;

use prefcal::eval::{exact_accuracy, exact_oracle_ece, test_records};
use prefcal::metrics::{ece_binned, l1_risk, reliability_diagram, BinnedReliability};
use prefcal::numerics::fmt_f64;
use prefcal::policy::{default_tau_grid, temperature_scale, Objective, TabularPolicy};
use prefcal::synthdata::{generate_tasks, GeneratedDataset, Split, TaskSpec};
use prefcal::train::{train_preference, train_sft};

use crate::config::RunConfig;
use crate::{Result, RunnerError};

/// One trained method branch.
pub struct Branch {
    pub name: &'static str,
    pub policy: TabularPolicy,
    /// Post-hoc temperature; 1.0 for every branch except temperature
    /// scaling.
    pub tau: f64,
}

/// Everything one seed of the shared protocol produces.
pub struct SeedRun {
    pub seed: u64,
    pub spec: TaskSpec,
    pub data: GeneratedDataset,
    pub sft_policy: TabularPolicy,
    pub branches: Vec<Branch>,
}

/// Train every method branch from a common SFT initialization:
/// `sft`, `sft_temp_scaled`, `sft_label_smooth`, `dpo`, `dpo_bce`,
/// `dpo_bpc`. Also verifies end to end that the joint objective at
/// `lambda = 0` reproduces the DPO branch bitwise.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedRun> {
    let derived = config.derived_seed(seed);
    let spec = config.task.spec_for_seed(derived)?;
    let data = generate_tasks(&spec, &config.dataset)?;
    let policy0 = TabularPolicy::new_uniform(spec.num_prompts, spec.num_options)?;

    let train_split = data.sft_split(Split::Train);
    let val_split = data.sft_split(Split::Validation);
    let pair_split = data.pairs_split(Split::Train);

    let sft_cfg = config
        .sft
        .train_config(Objective::Sft, config.beta, 0.0, derived);
    let sft = train_sft(&policy0, &train_split, &sft_cfg)?;

    let mut ls_cfg = config
        .sft
        .train_config(Objective::SftLabelSmooth, config.beta, 0.0, derived);
    ls_cfg.epsilon_smooth = config.epsilon_smooth;
    let label_smooth = train_sft(&sft.policy, &train_split, &ls_cfg)?;

    let tau = temperature_scale(&sft.policy, &val_split, &default_tau_grid())?;

    let dpo_cfg = config
        .preference
        .train_config(Objective::Dpo, config.beta, 0.0, derived);
    let dpo = train_preference(&sft.policy, &sft.policy, &pair_split, &dpo_cfg)?;

    let bce_cfg =
        config
            .preference
            .train_config(Objective::DpoBce, config.beta, config.lambda, derived);
    let dpo_bce = train_preference(&sft.policy, &sft.policy, &pair_split, &bce_cfg)?;

    let bpc_cfg =
        config
            .preference
            .train_config(Objective::DpoBpc, config.beta, config.lambda, derived);
    let dpo_bpc = train_preference(&sft.policy, &sft.policy, &pair_split, &bpc_cfg)?;

    // The joint objective with the calibration term switched off must
    // reproduce DPO exactly, over the whole run, not just per loss call.
    let zero_cfg = config
        .preference
        .train_config(Objective::DpoBpc, config.beta, 0.0, derived);
    let joint_zero = train_preference(&sft.policy, &sft.policy, &pair_split, &zero_cfg)?;
    let bitwise_equal = joint_zero
        .policy
        .params()
        .iter()
        .zip(dpo.policy.params())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !bitwise_equal {
        return Err(RunnerError::Invariant(format!(
            "lambda = 0 joint branch differs bitwise from DPO at seed {seed}"
        )));
    }

    let branches = vec![
        Branch {
            name: "sft",
            policy: sft.policy.clone(),
            tau: 1.0,
        },
        Branch {
            name: "sft_temp_scaled",
            policy: sft.policy.clone(),
            tau,
        },
        Branch {
            name: "sft_label_smooth",
            policy: label_smooth.policy,
            tau: 1.0,
        },
        Branch {
            name: "dpo",
            policy: dpo.policy,
            tau: 1.0,
        },
        Branch {
            name: "dpo_bce",
            policy: dpo_bce.policy,
            tau: 1.0,
        },
        Branch {
            name: "dpo_bpc",
            policy: dpo_bpc.policy,
            tau: 1.0,
        },
    ];
    Ok(SeedRun {
        seed,
        spec,
        data,
        sft_policy: sft.policy,
        branches,
    })
}

/// Evaluation numbers for one branch on one seed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodEval {
    pub method: String,
    pub seed: u64,
    pub tau: f64,
    pub exact_accuracy: f64,
    pub exact_ece: f64,
    pub ece_binned: f64,
    pub l1_risk: f64,
}

/// Evaluate a branch: exact oracle metrics plus binned metrics on the test
/// split, and the reliability diagram for plotting.
pub fn eval_branch(
    branch: &Branch,
    run: &SeedRun,
    bins: usize,
) -> Result<(MethodEval, BinnedReliability)> {
    let policy = branch.policy.scaled(branch.tau)?;
    let test = run.data.sft_split(Split::Test);
    let records = test_records(&policy, &run.spec, &test)?;
    let eval = MethodEval {
        method: branch.name.to_string(),
        seed: run.seed,
        tau: branch.tau,
        exact_accuracy: exact_accuracy(&policy, &run.spec)?,
        exact_ece: exact_oracle_ece(&policy, &run.spec)?,
        ece_binned: ece_binned(&records, bins)?,
        l1_risk: l1_risk(&records)?,
    };
    let reliability = reliability_diagram(&records, bins)?;
    Ok((eval, reliability))
}

/// CSV rows for a list of evaluations, fixed column order.
pub fn evals_to_csv(evals: &[MethodEval]) -> String {
    let mut out =
        String::from("method,seed,tau,exact_accuracy,exact_ece,ece_binned,l1_risk\n");
    for e in evals {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.method,
            e.seed,
            fmt_f64(e.tau),
            fmt_f64(e.exact_accuracy),
            fmt_f64(e.exact_ece),
            fmt_f64(e.ece_binned),
            fmt_f64(e.l1_risk),
        ));
    }
    out
}
