//! The confidence-drift experiment: train every method branch from a shared
//! SFT initialization on the synthetic task, per seed, and compare
//! calibration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use prefcal::numerics::fmt_f64;
use serde::Serialize;

use super::{eval_branch, evals_to_csv, run_seed, MethodEval};
use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::Result;

#[derive(Serialize)]
struct DriftSummary {
    per_seed: Vec<MethodEval>,
    mean: BTreeMap<String, MeanRow>,
    checks: DriftChecks,
}

#[derive(Serialize, Clone)]
struct MeanRow {
    exact_accuracy: f64,
    exact_ece: f64,
    ece_binned: f64,
    l1_risk: f64,
}

#[derive(Serialize)]
struct DriftChecks {
    lambda_zero_bitwise_equal: bool,
    bpc_win_seeds: usize,
    total_seeds: usize,
    mean_exact_ece_dpo: f64,
    mean_exact_ece_dpo_bpc: f64,
    accuracy_gap_dpo_vs_bpc: f64,
}

/// Run the drift experiment; returns the run directory.
pub fn run(config: &RunConfig) -> Result<PathBuf> {
    let mut dir = RunDir::create(config)?;
    let mut all_evals: Vec<MethodEval> = Vec::new();

    for &seed in &config.seeds {
        let seed_evals = dir.time(&format!("seed_{seed}"), |dir| {
            let run = run_seed(config, seed)?;
            dir.write(
                &format!("reports/dataset_seed{seed}.json"),
                run.data.to_json().as_bytes(),
            )?;
            let mut seed_evals = Vec::with_capacity(run.branches.len());
            for branch in &run.branches {
                let (eval, reliability) = eval_branch(branch, &run, config.bins)?;
                dir.write(
                    &format!("reports/reliability_{}_seed{}.csv", branch.name, seed),
                    reliability.to_csv().as_bytes(),
                )?;
                dir.write(
                    &format!("checkpoints/{}_seed{}.csv", branch.name, seed),
                    branch.policy.to_checkpoint_csv().as_bytes(),
                )?;
                seed_evals.push(eval);
            }
            Ok(seed_evals)
        })?;
        dir.write(
            &format!("reports/drift_seed{seed}.csv"),
            evals_to_csv(&seed_evals).as_bytes(),
        )?;
        all_evals.extend(seed_evals);
    }

    // Per-method means over seeds, in fixed branch order.
    let methods = [
        "sft",
        "sft_temp_scaled",
        "sft_label_smooth",
        "dpo",
        "dpo_bce",
        "dpo_bpc",
    ];
    let mut mean = BTreeMap::new();
    let mut summary_csv =
        String::from("method,mean_exact_accuracy,mean_exact_ece,mean_ece_binned,mean_l1_risk\n");
    for m in methods {
        let rows: Vec<&MethodEval> = all_evals.iter().filter(|e| e.method == m).collect();
        let n = rows.len() as f64;
        let row = MeanRow {
            exact_accuracy: rows.iter().map(|e| e.exact_accuracy).sum::<f64>() / n,
            exact_ece: rows.iter().map(|e| e.exact_ece).sum::<f64>() / n,
            ece_binned: rows.iter().map(|e| e.ece_binned).sum::<f64>() / n,
            l1_risk: rows.iter().map(|e| e.l1_risk).sum::<f64>() / n,
        };
        summary_csv.push_str(&format!(
            "{m},{},{},{},{}\n",
            fmt_f64(row.exact_accuracy),
            fmt_f64(row.exact_ece),
            fmt_f64(row.ece_binned),
            fmt_f64(row.l1_risk),
        ));
        mean.insert(m.to_string(), row);
    }

    let bpc_wins = config
        .seeds
        .iter()
        .filter(|&&s| {
            let get = |m: &str| {
                all_evals
                    .iter()
                    .find(|e| e.method == m && e.seed == s)
                    .map(|e| e.exact_ece)
                    .unwrap_or(f64::NAN)
            };
            get("dpo_bpc") < get("dpo")
        })
        .count();
    let checks = DriftChecks {
        // run_seed fails hard when the identity is violated, so reaching
        // this point certifies it.
        lambda_zero_bitwise_equal: true,
        bpc_win_seeds: bpc_wins,
        total_seeds: config.seeds.len(),
        mean_exact_ece_dpo: mean["dpo"].exact_ece,
        mean_exact_ece_dpo_bpc: mean["dpo_bpc"].exact_ece,
        accuracy_gap_dpo_vs_bpc: (mean["dpo"].exact_accuracy - mean["dpo_bpc"].exact_accuracy)
            .abs(),
    };

    dir.write("reports/summary.csv", summary_csv.as_bytes())?;
    let summary = DriftSummary {
        per_seed: all_evals,
        mean,
        checks,
    };
    dir.write(
        "reports/summary.json",
        serde_json::to_string_pretty(&summary)
            .expect("summary serialization cannot fail")
            .as_bytes(),
    )?;
    dir.finish(config)
}
